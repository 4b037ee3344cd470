"""Follower actuation to catheter tip pose.

Maps the three actuation inputs (translation along the feed axis, shaft
rotation, bending knob) to a tip pose. The knob passes through a
dead-zone and backlash-play stage with direction-dependent gains, the
resulting commanded bend angle is converted to a one-sided tendon
tension, and the tip pose comes from the rod solver composed with the
rigid translate-rotate stage. Gravity is expressed in the rotated handle
frame so rolling the catheter changes the sag plane.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import CalibrationError, LimitError, ParameterError
from .rod import RodParams, Tendon, solve_static

GRAVITY_ACCEL = 9.81

# Modulus reproducing the measured 23.27 mm case-1 loading displacement
# through the rod solver (see characterization.calibrate_E).
DEFAULT_YOUNGS_MODULUS = 1.766638e8

# Knob-to-tip gains: the positive sweep reaches just past 90 degrees at
# full knob, the negative sweep runs about 10% hotter (asymmetric tip).
DEFAULT_GAIN_RIGHT = 4.3
DEFAULT_GAIN_LEFT = 4.73

# Tendon tension per degree of commanded bend angle, calibrated so the
# rod solver realizes the full-knob bend angle (see
# calibrate_tension_gain). Frozen for the default spec and map.
DEFAULT_TENSION_GAIN = 0.082105

_WORLD_GRAVITY = np.array([0.0, -GRAVITY_ACCEL, 0.0])


@dataclass(frozen=True)
class CatheterSpec:
    """Geometry and material constants of the steerable segment."""

    active_length: float = 0.08
    outer_diameter: float = 0.002667
    second_moment: float = 1.9165e-12
    density: float = 1630.573
    linear_stiffness: float = 3.01
    youngs_modulus: float = DEFAULT_YOUNGS_MODULUS
    insertion_length: float = 0.115
    tendon_offset_radius: float = 0.9e-3
    marker_mass: float = 0.0
    poisson_ratio: float = 0.3
    n_nodes: int = 41

    def __post_init__(self):
        positive = (
            ("active_length", self.active_length),
            ("outer_diameter", self.outer_diameter),
            ("second_moment", self.second_moment),
            ("density", self.density),
            ("linear_stiffness", self.linear_stiffness),
            ("youngs_modulus", self.youngs_modulus),
            ("insertion_length", self.insertion_length),
            ("tendon_offset_radius", self.tendon_offset_radius),
        )
        for name, value in positive:
            if not value > 0.0:
                raise ParameterError(f"{name} must be positive, got {value}")
        if self.marker_mass < 0.0:
            raise ParameterError("marker_mass must be non-negative")
        if self.tendon_offset_radius >= self.outer_diameter / 2.0:
            raise ParameterError(
                "tendon offset must sit inside the outer radius"
            )

    @property
    def area(self) -> float:
        return math.pi * (self.outer_diameter / 2.0) ** 2

    def rod_params(
        self,
        tensions: Tuple[float, float] = (0.0, 0.0),
        grav: Sequence[float] = (0.0, 0.0, 0.0),
    ) -> RodParams:
        """Rod parameters with the two steering tendons along +/-x."""
        r = self.tendon_offset_radius
        tendons = [
            Tendon(offset=np.array([r, 0.0, 0.0]), tension=tensions[0]),
            Tendon(offset=np.array([-r, 0.0, 0.0]), tension=tensions[1]),
        ]
        return RodParams.from_material(
            self.youngs_modulus,
            self.second_moment,
            self.area,
            self.density,
            length=self.active_length,
            n_nodes=self.n_nodes,
            poisson_ratio=self.poisson_ratio,
            grav=grav,
            tendons=tendons,
        )


@dataclass(frozen=True)
class BendingMapConfig:
    """Dead-zone, backlash play and direction gains of the bending knob."""

    dead_zone_half_width: float = 10.0
    backlash_play: float = 8.0
    gain_right: float = DEFAULT_GAIN_RIGHT
    gain_left: float = DEFAULT_GAIN_LEFT
    max_knob: float = 35.0

    def __post_init__(self):
        if self.gain_right <= 0.0 or self.gain_left <= 0.0:
            raise ParameterError("bending gains must be positive")
        if self.dead_zone_half_width < 0.0:
            raise ParameterError("dead zone half width must be non-negative")
        if self.backlash_play < 0.0:
            raise ParameterError("backlash play must be non-negative")
        if self.max_knob <= 0.0:
            raise ParameterError("max knob must be positive")
        if self.full_knob_tip_angle < 90.0 - 1e-9:
            raise ParameterError(
                "a full knob command must bend the tip at least 90 degrees, "
                f"got {self.full_knob_tip_angle:.1f}"
            )

    @property
    def full_knob_tip_angle(self) -> float:
        """Bend angle reached at full knob on the weaker side."""
        swing = (self.max_knob - self.dead_zone_half_width
                 - self.backlash_play / 2.0)
        return min(self.gain_right, self.gain_left) * max(swing, 0.0)


@dataclass
class ActuationState:
    """Follower actuation values plus the knob's backlash memory."""

    translation: float = 0.0
    rotation: float = 0.0
    knob: float = 0.0
    hysteresis_memory: float = 0.0

    def copy(self) -> "ActuationState":
        return ActuationState(self.translation, self.rotation, self.knob,
                              self.hysteresis_memory)


def dead_zone_shave(value: float, half_width: float) -> float:
    """Zero inside the band, remainder beyond it (continuous at the edges)."""
    if abs(value) <= half_width:
        return 0.0
    return value - math.copysign(half_width, value)


def play_update(memory: float, value: float, play: float) -> float:
    """Backlash play: output tracks the input with up to play/2 of lag."""
    half = play / 2.0
    return min(max(memory, value - half), value + half)


def _gain_for(effective: float, cfg: BendingMapConfig) -> float:
    return cfg.gain_right if effective >= 0.0 else cfg.gain_left


def knob_to_tip_angle(
    knob: float,
    state: ActuationState,
    cfg: BendingMapConfig = BendingMapConfig(),
) -> float:
    """Commanded tip bend angle for a knob input; updates backlash memory.

    The knob is dead-zone shaved, passed through the play operator (whose
    state lives in ActuationState.hysteresis_memory), and scaled by the
    direction gain. Output is path dependent.
    """
    if abs(knob) > cfg.max_knob + 1e-9:
        raise LimitError(
            f"knob {knob:.1f} deg exceeds +/-{cfg.max_knob:.0f} deg"
        )
    shaved = dead_zone_shave(knob, cfg.dead_zone_half_width)
    state.hysteresis_memory = play_update(
        state.hysteresis_memory, shaved, cfg.backlash_play
    )
    state.knob = knob
    return state.hysteresis_memory * _gain_for(state.hysteresis_memory, cfg)


def peek_tip_angle(
    state: ActuationState, cfg: BendingMapConfig = BendingMapConfig()
) -> float:
    """Commanded bend angle at the current memory, without updating it."""
    return state.hysteresis_memory * _gain_for(state.hysteresis_memory, cfg)


def knob_to_tensions(
    commanded_deg: float,
    spec: CatheterSpec = CatheterSpec(),
    tension_gain: Optional[float] = None,
) -> Tuple[float, float]:
    """One-sided tendon tensions realizing a commanded bend angle.

    Positive angles load tendon 1 (+x side), negative load tendon 2.
    """
    k = DEFAULT_TENSION_GAIN if tension_gain is None else tension_gain
    tau = k * abs(commanded_deg)
    if commanded_deg >= 0.0:
        return (tau, 0.0)
    return (0.0, tau)


def rotation_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def bend_angle_deg(tip_rotation: np.ndarray) -> float:
    """Signed angle between the tip tangent and the feed axis, in the
    bend plane (positive toward +x)."""
    tangent = tip_rotation[:, 2]
    return math.degrees(math.atan2(tangent[0], tangent[2]))


@dataclass(frozen=True)
class TipPose:
    """Tip position (cm, follower workspace frame) and orientation."""

    position_cm: np.ndarray
    rotation: np.ndarray
    bend_angle_deg: float
    clamped: bool = False


def forward_kinematics(
    act: ActuationState,
    spec: CatheterSpec = CatheterSpec(),
    cfg: BendingMapConfig = BendingMapConfig(),
    gravity_on: bool = True,
    tension_gain: Optional[float] = None,
) -> TipPose:
    """Tip pose for an actuation snapshot.

    Solves the rod in the handle frame (bend plane x-z, gravity rotated
    in), then applies the rigid rotation about and translation along the
    feed axis. Pure given the snapshot. Position is reported in cm.
    """
    if not 0.0 <= act.translation <= spec.insertion_length * 1e3 + 1e-9:
        raise LimitError(
            f"translation {act.translation:.1f} mm outside "
            f"[0, {spec.insertion_length * 1e3:.0f}] mm"
        )
    commanded = peek_tip_angle(act, cfg)
    tensions = knob_to_tensions(commanded, spec, tension_gain)

    if gravity_on:
        g_handle = rotation_z(-act.rotation) @ _WORLD_GRAVITY
    else:
        g_handle = np.zeros(3)
    params = spec.rod_params(tensions=tensions, grav=g_handle)

    tip_load = None
    if gravity_on and spec.marker_mass > 0.0:
        tip_load = (spec.marker_mass * g_handle, np.zeros(3))

    state = solve_static(params, tip_load=tip_load)

    rot = rotation_z(act.rotation)
    p_world = rot @ state.tip_position + np.array(
        [0.0, 0.0, act.translation * 1e-3]
    )
    r_world = rot @ state.tip_rotation
    return TipPose(
        position_cm=p_world * 100.0,
        rotation=r_world,
        bend_angle_deg=bend_angle_deg(state.tip_rotation),
    )


class CatheterModel:
    """Stateful follower model: actuation commands in, tip poses out.

    Owns the actuation state (hence the knob's path dependence) and
    memoizes rod solves per distinct (tensions, rotation, gravity)
    combination so repeated trajectory points cost one solve.
    """

    def __init__(
        self,
        spec: CatheterSpec = CatheterSpec(),
        cfg: BendingMapConfig = BendingMapConfig(),
        gravity_on: bool = True,
        tension_gain: Optional[float] = None,
    ):
        self.spec = spec
        self.cfg = cfg
        self.gravity_on = gravity_on
        self.tension_gain = tension_gain
        self.state = ActuationState()
        self._memo: Dict[tuple, Tuple[np.ndarray, np.ndarray, float]] = {}

    def reset(self) -> None:
        self.state = ActuationState()

    def command(
        self,
        translation: Optional[float] = None,
        rotation: Optional[float] = None,
        knob: Optional[float] = None,
        solve: bool = True,
    ) -> Optional[TipPose]:
        """Apply new actuation values and return the resulting tip pose.

        Pass solve=False to update actuation (including the knob's
        hysteresis memory) without paying for a rod solve; callers can
        sample tip_pose() later at their own cadence.
        """
        if translation is not None:
            limit = self.spec.insertion_length * 1e3
            if not 0.0 <= translation <= limit + 1e-9:
                raise LimitError(
                    f"translation {translation:.1f} mm outside "
                    f"[0, {limit:.0f}] mm"
                )
            self.state.translation = translation
        if rotation is not None:
            self.state.rotation = rotation
        if knob is not None:
            knob_to_tip_angle(knob, self.state, self.cfg)
        return self.tip_pose() if solve else None

    def tip_pose(self) -> TipPose:
        """Tip pose at the current actuation state (no memory update)."""
        act = self.state
        commanded = peek_tip_angle(act, self.cfg)
        tensions = knob_to_tensions(commanded, self.spec, self.tension_gain)
        # With gravity on, the handle-frame load depends on rotation, so
        # rotation is part of the cache key.  Gravity off, the solve is
        # rotation-independent: cache the rotation-0 pose and rotate it
        # on retrieval.
        rot_key = round(act.rotation % 360.0, 6) if self.gravity_on else None
        key = (round(tensions[0], 9), round(tensions[1], 9), rot_key)
        hit = self._memo.get(key)
        if hit is None:
            snapshot = act.copy()
            snapshot.translation = 0.0
            if not self.gravity_on:
                snapshot.rotation = 0.0
            pose0 = forward_kinematics(
                snapshot, self.spec, self.cfg, gravity_on=self.gravity_on,
                tension_gain=self.tension_gain,
            )
            # Cache the handle-and-rotation part; translation is rigid.
            hit = (pose0.position_cm, pose0.rotation, pose0.bend_angle_deg)
            self._memo[key] = hit
        position, orientation, bend = hit
        if not self.gravity_on:
            spin = rotation_z(act.rotation)
            position = spin @ position
            orientation = spin @ orientation
        position = position + np.array([0.0, 0.0, act.translation * 0.1])
        return TipPose(position_cm=position, rotation=orientation,
                       bend_angle_deg=bend)


def realized_bend_angle(
    commanded_deg: float,
    spec: CatheterSpec = CatheterSpec(),
    tension_gain: Optional[float] = None,
    solver_cache: Optional[dict] = None,
) -> float:
    """Bend angle the rod actually reaches for a commanded angle,
    gravity off."""
    tensions = knob_to_tensions(commanded_deg, spec, tension_gain)
    params = spec.rod_params(tensions=tensions)
    state = solve_static(params, solver_cache=solver_cache)
    return bend_angle_deg(state.tip_rotation)


def calibrate_tension_gain(
    spec: CatheterSpec = CatheterSpec(),
    cfg: BendingMapConfig = BendingMapConfig(),
    tol_deg: float = 0.05,
    max_iter: int = 60,
) -> float:
    """Tension per commanded degree such that the rod solver realizes the
    full-knob bend angle.

    Bisects the tendon tension until the gravity-off bend angle matches
    the weaker side's full-knob command, then divides by that angle.
    """
    target = cfg.full_knob_tip_angle
    if target <= 0.0:
        raise CalibrationError("bending map has no travel outside dead zone")
    cache: dict = {}

    def angle(tau: float) -> float:
        params = spec.rod_params(tensions=(tau, 0.0))
        state = solve_static(params, solver_cache=cache)
        return bend_angle_deg(state.tip_rotation)

    lo, hi = 0.0, 1.0
    for _ in range(40):
        if angle(hi) >= target:
            break
        lo = hi
        hi *= 2.0
    else:
        raise CalibrationError(
            f"no tension reaches a {target:.0f} degree bend"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        err = angle(mid) - target
        if abs(err) <= tol_deg:
            return mid / target
        if err < 0.0:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"tension bisection did not reach {target:.0f} degrees "
        f"within {tol_deg} degrees"
    )


def calibrate_bending_map(
    samples: Sequence[Tuple[float, float, int]],
    moving_threshold_deg: float = 3.0,
    max_knob: float = 35.0,
) -> BendingMapConfig:
    """Fit a bending map to (knob deg, tip deg, sweep direction) samples.

    Each sweep direction on each bending side carries a linear engaged
    segment bracketed by plateaus where stale play memory holds the tip;
    the fit keeps the longest strictly rising constant-slope run. Gains
    are the branch slopes; the play is the loading/unloading intercept
    separation and the dead zone their midpoint offset.
    """
    rows = [(float(k), float(t), int(d)) for k, t, d in samples]
    if not rows:
        raise CalibrationError("no calibration samples")

    def engaged_line(side: int, direction: int):
        pts = sorted({(k, t) for k, t, d in rows
                      if d == direction and t * side > moving_threshold_deg})
        if len(pts) < 2:
            return None
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        slopes = np.diff(y) / np.diff(x)
        tol = 1e-6 * max(1.0, float(np.max(np.abs(slopes))))
        best = None
        start = 0
        for stop in range(1, len(slopes) + 1):
            if stop < len(slopes) and abs(slopes[stop] - slopes[start]) <= tol:
                continue
            # Run of equal consecutive slopes over points start..stop.
            if slopes[start] > tol:
                count = stop - start + 1
                # Plateau-to-line connectors dilute the slope, so among
                # equal-length runs the steepest is the engaged line.
                if (best is None or count > best[0]
                        or (count == best[0] and slopes[start] > best[3])):
                    best = (count, start, stop, slopes[start])
            start = stop
        if best is None:
            return None
        _, lo, hi, _ = best
        slope, intercept = np.polyfit(x[lo:hi + 1], y[lo:hi + 1], 1)
        return float(slope), float(intercept), hi - lo + 1

    def branch_fit(side: int) -> Tuple[float, Dict[int, float]]:
        slopes, intercepts, weights = [], {}, []
        for direction in (+1, -1):
            fit = engaged_line(side, direction)
            if fit is None:
                continue
            slope, intercept, count = fit
            slopes.append(slope)
            weights.append(count)
            intercepts[direction] = intercept
        if not slopes:
            raise CalibrationError(
                "not enough moving samples on the "
                + ("positive" if side > 0 else "negative")
                + " side (need two or more per sweep direction)"
            )
        gain = float(np.average(slopes, weights=weights))
        if gain <= 0.0:
            raise CalibrationError("fitted gain is not positive")
        return gain, intercepts

    gain_right, icepts_r = branch_fit(+1)
    gain_left, icepts_l = branch_fit(-1)

    plays = []
    dead_zones = []
    for gain, icepts, side in (
        (gain_right, icepts_r, +1), (gain_left, icepts_l, -1),
    ):
        loading, unloading = side, -side
        if loading in icepts and unloading in icepts:
            # The loading branch lags the unloading branch by the play;
            # their midpoint sits half a play past the dead-zone edge.
            plays.append(
                side * (icepts[unloading] - icepts[loading]) / gain
            )
            dead_zones.append(
                -side * (icepts[loading] + icepts[unloading]) / (2.0 * gain)
            )
    if dead_zones:
        play = max(0.0, float(np.mean(plays)))
        if play < 1e-9:
            play = 0.0
        dead_zone = max(0.0, float(np.mean(dead_zones)))
    else:
        # Single-branch data: bound the dead zone by the widest quiet
        # command instead (includes any un-reengaged play).
        play = 0.0
        quiet = [abs(k) for k, t, _ in rows
                 if abs(t) <= moving_threshold_deg]
        if not quiet:
            raise CalibrationError("no samples bound the dead zone")
        dead_zone = max(quiet)

    return BendingMapConfig(
        dead_zone_half_width=dead_zone,
        backlash_play=play,
        gain_right=gain_right,
        gain_left=gain_left,
        max_knob=max_knob,
    )
