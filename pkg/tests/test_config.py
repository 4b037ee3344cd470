"""Configuration loading, overlay merging, and validation."""

import json

import pytest

from cathsim.config import (
    DEFAULTS,
    ENV_CONFIG,
    SimConfig,
    deep_merge,
    write_overlay,
)
from cathsim.errors import ParameterError


class TestDefaults:
    def test_empty_config_runs(self):
        cfg = SimConfig()
        assert cfg["catheter.n_nodes"] == 41
        assert cfg["link.port"] == 47001
        assert cfg["scenario.repetitions"] == 5
        assert cfg["seed"] == 0
        assert cfg.ideal is False

    def test_empty_file_runs(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("{}\n")
        cfg = SimConfig.load(str(path))
        assert cfg.data == DEFAULTS

    def test_no_file_uses_defaults(self, monkeypatch):
        monkeypatch.delenv(ENV_CONFIG, raising=False)
        assert SimConfig.load().data == DEFAULTS

    def test_env_var_fallback(self, tmp_path, monkeypatch):
        path = tmp_path / "env.json"
        path.write_text(json.dumps({"seed": 99}))
        monkeypatch.setenv(ENV_CONFIG, str(path))
        assert SimConfig.load()["seed"] == 99

    def test_explicit_path_beats_env(self, tmp_path, monkeypatch):
        env_path = tmp_path / "env.json"
        env_path.write_text(json.dumps({"seed": 99}))
        monkeypatch.setenv(ENV_CONFIG, str(env_path))
        other = tmp_path / "cli.json"
        other.write_text(json.dumps({"seed": 7}))
        assert SimConfig.load(str(other))["seed"] == 7


class TestDeepMerge:
    def test_nested_tables_merge(self):
        merged = deep_merge(
            {"a": {"x": 1, "y": 2}, "b": 3},
            {"a": {"y": 20}},
        )
        assert merged == {"a": {"x": 1, "y": 20}, "b": 3}

    def test_scalar_replaces(self):
        assert deep_merge({"a": 1}, {"a": 2}) == {"a": 2}

    def test_inputs_not_mutated(self):
        base = {"a": {"x": 1}}
        overlay = {"a": {"y": 2}}
        deep_merge(base, overlay)
        assert base == {"a": {"x": 1}}
        assert overlay == {"a": {"y": 2}}

    def test_disjoint_overlays_commute(self):
        # overlays produced by characterize and calibrate touch
        # different tables, so their application order cannot matter
        char = {"catheter": {"youngs_modulus_pa": 1.8e8}}
        calib = {"bending_map": {"gain_right": 4.1, "gain_left": 4.9}}
        ab = deep_merge(deep_merge(DEFAULTS, char), calib)
        ba = deep_merge(deep_merge(DEFAULTS, calib), char)
        assert ab == ba

    def test_composition_associative(self):
        a = {"link": {"port": 5000}}
        b = {"scenario": {"cycles": 2}, "seed": 3}
        left = deep_merge(deep_merge(DEFAULTS, a), b)
        right = deep_merge(DEFAULTS, deep_merge(a, b))
        assert left == right


class TestValidation:
    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ParameterError, match="catheter.youngs_mod"):
            SimConfig({"catheter": {"youngs_mod": 1.0}})

    def test_unknown_top_level_key(self):
        with pytest.raises(ParameterError, match="unknown config key"):
            SimConfig({"typo_section": {}})

    def test_wrong_type_rejected(self):
        with pytest.raises(ParameterError, match="wrong type"):
            SimConfig({"catheter": {"active_length_mm": "long"}})

    def test_bool_is_not_a_count(self):
        with pytest.raises(ParameterError, match="wrong type"):
            SimConfig({"scenario": {"repetitions": True}})

    def test_table_replaced_by_scalar_rejected(self):
        with pytest.raises(ParameterError, match="must be a table"):
            SimConfig({"catheter": 5})

    @pytest.mark.parametrize("overlay", [
        {"catheter": {"active_length_mm": -1.0}},
        {"catheter": {"poisson_ratio": 0.5}},
        {"catheter": {"n_nodes": 2}},
        {"link": {"port": 70000}},
        {"link": {"loss": 1.0}},
        {"scenario": {"repetitions": 0}},
        {"seed": -1},
    ])
    def test_out_of_range_rejected(self, overlay):
        with pytest.raises(ParameterError, match="out of range"):
            SimConfig(overlay)

    def test_malformed_json_names_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ParameterError, match="bad.json"):
            SimConfig.load(str(path))

    def test_non_object_root_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ParameterError, match="must be an object"):
            SimConfig.load(str(path))


class TestBuilders:
    def test_catheter_spec_units(self):
        spec = SimConfig().catheter_spec()
        assert spec.active_length == pytest.approx(0.08)
        assert spec.outer_diameter == pytest.approx(2.667e-3)
        assert spec.tendon_offset_radius == pytest.approx(0.9e-3)
        assert spec.insertion_length == pytest.approx(0.115)
        assert spec.marker_mass == 0.0

    def test_default_model_has_gravity_and_hysteresis(self):
        model = SimConfig().build_model()
        assert model.gravity_on is True
        assert model.cfg.dead_zone_half_width == 10.0
        assert model.cfg.backlash_play == 8.0

    def test_ideal_flag_strips_nonlinearities(self):
        model = SimConfig({"ideal": True}).build_model()
        assert model.gravity_on is False
        assert model.cfg.dead_zone_half_width == 0.0
        assert model.cfg.backlash_play == 0.0
        # direction gains are part of the kinematic map, not a defect
        assert model.cfg.gain_right == pytest.approx(4.3)

    def test_gravity_off_without_ideal_keeps_hysteresis(self):
        model = SimConfig({"catheter": {"gravity_on": False}}).build_model()
        assert model.gravity_on is False
        assert model.cfg.backlash_play == 8.0

    def test_with_overlay_returns_new_config(self):
        base = SimConfig()
        tweaked = base.with_overlay({"seed": 5})
        assert base["seed"] == 0
        assert tweaked["seed"] == 5

    def test_marker_mass_converts_to_kg(self):
        cfg = SimConfig({"catheter": {"marker_mass_g": 2.84}})
        assert cfg.catheter_spec().marker_mass == pytest.approx(2.84e-3)


class TestOverlayFiles:
    def test_written_overlay_loads_and_merges(self, tmp_path):
        path = tmp_path / "cal.json"
        write_overlay(str(path), {"bending_map": {"gain_right": 4.11}})
        cfg = SimConfig.load(str(path))
        assert cfg["bending_map.gain_right"] == pytest.approx(4.11)
        assert cfg["bending_map.gain_left"] == pytest.approx(4.73)

    def test_overlay_validated_before_writing(self, tmp_path):
        path = tmp_path / "bad.json"
        with pytest.raises(ParameterError):
            write_overlay(str(path), {"bending_map": {"gain_right": -1.0}})
        assert not path.exists()

    def test_to_json_roundtrip(self, tmp_path):
        cfg = SimConfig({"seed": 11})
        path = tmp_path / "full.json"
        path.write_text(cfg.to_json())
        assert SimConfig.load(str(path)).data == cfg.data
