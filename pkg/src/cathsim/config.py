"""Simulation configuration: embedded defaults, JSON overlays, schema.

Every knob has a default, so an empty config file (or none at all)
runs the stock system.  Overlays are deep-merged onto the defaults;
merging is associative, and order-independent for disjoint keys.
Unknown keys are rejected to catch typos at load time.
"""

import copy
import json
import os
from typing import Optional

from .catheter import BendingMapConfig, CatheterModel, CatheterSpec
from .errors import ParameterError

ENV_CONFIG = "CATHSIM_CONFIG"

DEFAULTS = {
    "catheter": {
        "active_length_mm": 80.0,
        "outer_diameter_mm": 2.667,
        "second_moment_m4": 1.9165e-12,
        "density_kg_m3": 1630.573,
        "linear_stiffness_n_per_mm": 3.01,
        "youngs_modulus_pa": 1.766638e8,
        "insertion_length_mm": 115.0,
        "tendon_offset_mm": 0.9,
        "marker_mass_g": 0.0,
        "poisson_ratio": 0.3,
        "n_nodes": 41,
        "gravity_on": True,
    },
    "bending_map": {
        "dead_zone_half_width_deg": 10.0,
        "backlash_play_deg": 8.0,
        "gain_right": 4.3,
        "gain_left": 4.73,
        "max_knob_deg": 35.0,
        "tension_gain_n_per_deg": 0.082105,
    },
    "link": {
        "host": "127.0.0.1",
        "port": 47001,
        "bridge_port": 47002,
        "command_rate_hz": 100.0,
        "status_rate_hz": 100.0,
        "delay_ms": 0.0,
        "jitter_ms": 0.0,
        "loss": 0.0,
    },
    "scenario": {
        "repetitions": 5,
        "cycles": 5,
        "sample_rate_hz": 250.0,
        "noise_std_cm": 0.0,
    },
    "seed": 0,
    "output_dir": "out",
    "ideal": False,
}

_NUMERIC = (int, float)
# key -> (expected types, value predicate); containers are recursed.
_SCHEMA = {
    "catheter.active_length_mm": (_NUMERIC, lambda v: v > 0),
    "catheter.outer_diameter_mm": (_NUMERIC, lambda v: v > 0),
    "catheter.second_moment_m4": (_NUMERIC, lambda v: v > 0),
    "catheter.density_kg_m3": (_NUMERIC, lambda v: v > 0),
    "catheter.linear_stiffness_n_per_mm": (_NUMERIC, lambda v: v > 0),
    "catheter.youngs_modulus_pa": (_NUMERIC, lambda v: v > 0),
    "catheter.insertion_length_mm": (_NUMERIC, lambda v: v > 0),
    "catheter.tendon_offset_mm": (_NUMERIC, lambda v: v > 0),
    "catheter.marker_mass_g": (_NUMERIC, lambda v: v >= 0),
    "catheter.poisson_ratio": (_NUMERIC, lambda v: 0 <= v < 0.5),
    "catheter.n_nodes": ((int,), lambda v: v >= 5),
    "catheter.gravity_on": ((bool,), lambda v: True),
    "bending_map.dead_zone_half_width_deg": (_NUMERIC, lambda v: v >= 0),
    "bending_map.backlash_play_deg": (_NUMERIC, lambda v: v >= 0),
    "bending_map.gain_right": (_NUMERIC, lambda v: v > 0),
    "bending_map.gain_left": (_NUMERIC, lambda v: v > 0),
    "bending_map.max_knob_deg": (_NUMERIC, lambda v: v > 0),
    "bending_map.tension_gain_n_per_deg": (_NUMERIC, lambda v: v > 0),
    "link.host": ((str,), lambda v: bool(v)),
    "link.port": ((int,), lambda v: 0 <= v <= 65535),
    "link.bridge_port": ((int,), lambda v: 0 <= v <= 65535),
    "link.command_rate_hz": (_NUMERIC, lambda v: v > 0),
    "link.status_rate_hz": (_NUMERIC, lambda v: v > 0),
    "link.delay_ms": (_NUMERIC, lambda v: v >= 0),
    "link.jitter_ms": (_NUMERIC, lambda v: v >= 0),
    "link.loss": (_NUMERIC, lambda v: 0 <= v < 1),
    "scenario.repetitions": ((int,), lambda v: v >= 1),
    "scenario.cycles": ((int,), lambda v: v >= 1),
    "scenario.sample_rate_hz": (_NUMERIC, lambda v: v > 0),
    "scenario.noise_std_cm": (_NUMERIC, lambda v: v >= 0),
    "seed": ((int,), lambda v: v >= 0),
    "output_dir": ((str,), lambda v: bool(v)),
    "ideal": ((bool,), lambda v: True),
}


def deep_merge(base: dict, overlay: dict) -> dict:
    """Recursively merge overlay onto base, returning a new dict."""
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate(data: dict, defaults: dict, prefix: str = "") -> None:
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ParameterError(f"unknown config key {path!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ParameterError(f"config key {path!r} must be a table")
            _validate(value, defaults[key], prefix=f"{path}.")
            continue
        types, ok = _SCHEMA[path]
        # bool is an int subclass; keep flags and counts distinct.
        if isinstance(value, bool) and bool not in types:
            raise ParameterError(f"config key {path!r} has wrong type")
        if not isinstance(value, types):
            raise ParameterError(f"config key {path!r} has wrong type")
        if not ok(value):
            raise ParameterError(f"config key {path!r} out of range: {value}")


class SimConfig:
    """Validated configuration with builders for the model objects."""

    def __init__(self, data: Optional[dict] = None):
        merged = deep_merge(DEFAULTS, data or {})
        _validate(merged, DEFAULTS)
        self.data = merged

    @classmethod
    def load(
        cls,
        path: Optional[str] = None,
        overrides: Optional[dict] = None,
    ) -> "SimConfig":
        """Load from a JSON file, the environment fallback, or defaults."""
        if path is None:
            path = os.environ.get(ENV_CONFIG) or None
        data: dict = {}
        if path:
            with open(path) as fh:
                try:
                    data = json.load(fh)
                except json.JSONDecodeError as err:
                    raise ParameterError(f"{path}: {err}") from None
            if not isinstance(data, dict):
                raise ParameterError(f"{path}: config root must be an object")
        if overrides:
            data = deep_merge(data, overrides)
        return cls(data)

    def __getitem__(self, key: str):
        node = self.data
        for part in key.split("."):
            node = node[part]
        return node

    def with_overlay(self, overlay: dict) -> "SimConfig":
        return SimConfig(deep_merge(self.data, overlay))

    @property
    def ideal(self) -> bool:
        return bool(self.data["ideal"])

    def catheter_spec(self) -> CatheterSpec:
        c = self.data["catheter"]
        return CatheterSpec(
            active_length=c["active_length_mm"] * 1e-3,
            outer_diameter=c["outer_diameter_mm"] * 1e-3,
            second_moment=c["second_moment_m4"],
            density=c["density_kg_m3"],
            linear_stiffness=c["linear_stiffness_n_per_mm"],
            youngs_modulus=c["youngs_modulus_pa"],
            insertion_length=c["insertion_length_mm"] * 1e-3,
            tendon_offset_radius=c["tendon_offset_mm"] * 1e-3,
            marker_mass=c["marker_mass_g"] * 1e-3,
            poisson_ratio=c["poisson_ratio"],
            n_nodes=c["n_nodes"],
        )

    def bending_map(self) -> BendingMapConfig:
        b = self.data["bending_map"]
        if self.ideal:
            return BendingMapConfig(
                dead_zone_half_width=0.0,
                backlash_play=0.0,
                gain_right=b["gain_right"],
                gain_left=b["gain_left"],
                max_knob=b["max_knob_deg"],
            )
        return BendingMapConfig(
            dead_zone_half_width=b["dead_zone_half_width_deg"],
            backlash_play=b["backlash_play_deg"],
            gain_right=b["gain_right"],
            gain_left=b["gain_left"],
            max_knob=b["max_knob_deg"],
        )

    def build_model(self) -> CatheterModel:
        gravity = bool(self.data["catheter"]["gravity_on"]) and not self.ideal
        return CatheterModel(
            spec=self.catheter_spec(),
            cfg=self.bending_map(),
            gravity_on=gravity,
            tension_gain=self.data["bending_map"]["tension_gain_n_per_deg"],
        )

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def write_overlay(path, overlay: dict) -> None:
    """Persist a partial config; loading it merges onto the defaults."""
    SimConfig(overlay)  # reject malformed overlays before writing
    with open(path, "w") as fh:
        json.dump(overlay, fh, indent=2, sort_keys=True)
        fh.write("\n")
