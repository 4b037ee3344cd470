"""Static loading-unloading characterization of the catheter segment.

Re-runs the bench protocol in simulation: hang a series of calibrated
weights from the tip, record loading and unloading displacements, fit
point-based and trend-based stiffness ratios, and calibrate the elastic
modulus that reproduces a measured displacement through the rod solver.

Stiffness ratios are stored in N/m (force over tip displacement); the
elastic modulus in Pa is derived separately by calibrate_E.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import CalibrationError, EmptyInputError, PreconditionError
from .rod import RodParams, solve_static, tip_displacement

GRAVITY = 9.81
ACTIVE_LENGTH_MM = 80.0

# Zero-load read-through of the benchmark unloading branch: the tip parks
# this far from home after a full load-unload cycle.
RESIDUAL_SLACK_MM = 7.79


@dataclass(frozen=True)
class LoadCase:
    """One row of a loading-unloading bench run."""

    index: int
    weight_g: float
    force_n: float
    tip_loading_mm: float
    tip_unloading_mm: float

    def __post_init__(self):
        if self.weight_g > 0.0:
            implied = self.weight_g * GRAVITY * 1e-3
            if abs(self.force_n - implied) > 0.01 * implied:
                raise PreconditionError(
                    f"case {self.index}: force {self.force_n} N inconsistent "
                    f"with weight {self.weight_g} g"
                )


@dataclass(frozen=True)
class RodGeometry:
    """Geometry and material constants shared by all characterization solves."""

    length: float = 0.08
    second_moment: float = 1.9165e-12
    outer_diameter: float = 0.002667
    density: float = 1630.573
    n_nodes: int = 41
    poisson_ratio: float = 0.3

    @property
    def area(self) -> float:
        return math.pi * (self.outer_diameter / 2.0) ** 2

    def rod_params(self, youngs_modulus: float) -> RodParams:
        return RodParams.from_material(
            youngs_modulus,
            self.second_moment,
            self.area,
            self.density,
            length=self.length,
            n_nodes=self.n_nodes,
            poisson_ratio=self.poisson_ratio,
        )


BENCHMARK_GEOMETRY = RodGeometry()

# Bench dataset: ten weights plus the unloaded reference case.
BENCHMARK_CASES = (
    LoadCase(0, 0.0, 0.0, 0.0, 7.79),
    LoadCase(1, 5.08, 0.0498, 25.32, 33.11),
    LoadCase(2, 6.47, 0.0635, 31.65, 37.98),
    LoadCase(3, 7.91, 0.0776, 37.01, 41.88),
    LoadCase(4, 9.32, 0.0914, 41.39, 45.77),
    LoadCase(5, 10.75, 0.1056, 44.80, 48.21),
    LoadCase(6, 12.18, 0.1195, 47.72, 50.64),
    LoadCase(7, 13.59, 0.1333, 51.13, 53.08),
    LoadCase(8, 15.02, 0.1473, 53.08, 55.03),
    LoadCase(9, 16.45, 0.1614, 56.00, 56.49),
    LoadCase(10, 17.95, 0.1761, 57.95, 57.95),
)

# Reference outputs for the benchmark dataset: point stiffness ratios
# (N/m), per-case simulated loading displacements (mm) and the error
# column in percent of active length.
BENCHMARK_POINT_RATIOS = (
    1.968, 2.005, 2.097, 2.209, 2.354, 2.504, 2.607, 2.776, 2.882, 3.038,
)
BENCHMARK_SIM_MM = (
    23.27, 27.78, 31.24, 33.90, 35.59, 37.09, 38.70, 39.95, 40.72, 41.57,
)
BENCHMARK_TREND_SIM_MM = (
    15.88, 19.76, 23.48, 26.83, 29.90, 32.75, 35.26, 37.58, 39.67, 41.66,
)
BENCHMARK_ERROR_PCT = (
    2.56, 4.84, 7.21, 9.36, 11.51, 13.29, 15.54, 16.41, 19.10, 20.47,
)
BENCHMARK_TREND_SLOPE = 3.0181


@dataclass
class CharacterizationResult:
    point_ratios: List[float]
    trend_slope: float
    residual_offset_mm: float
    calibrated_E: float
    per_case_sim_mm: List[float]
    per_case_error_pct: List[float]
    loading_mm: List[float] = field(default_factory=list)
    unloading_mm: List[float] = field(default_factory=list)
    calibrated_E_per_case: List[float] = field(default_factory=list)


def point_ratio(case: LoadCase) -> float:
    """Stiffness ratio force / loading displacement in N/m."""
    if case.tip_loading_mm <= 0.0:
        raise PreconditionError(
            f"case {case.index}: zero loading displacement has no ratio"
        )
    return case.force_n / (case.tip_loading_mm * 1e-3)


def trend_slope(cases: Sequence[LoadCase]) -> float:
    """Least-squares slope of force (N) against loading displacement (m)."""
    if len(cases) < 2:
        raise PreconditionError("need at least two cases for a trend fit")
    x = np.array([c.tip_loading_mm for c in cases]) * 1e-3
    y = np.array([c.force_n for c in cases])
    if np.ptp(x) == 0.0:
        raise CalibrationError("identical displacements make the fit singular")
    return float(np.polyfit(x, y, 1)[0])


def quadratic_ratio_fit(cases: Sequence[LoadCase]) -> np.ndarray:
    """Quadratic fit of the point ratios over force, highest power first."""
    loaded = [c for c in cases if c.tip_loading_mm > 0.0]
    if len(loaded) < 3:
        raise PreconditionError("need at least three loaded cases")
    f = np.array([c.force_n for c in loaded])
    r = np.array([point_ratio(c) for c in loaded])
    return np.polyfit(f, r, 2)


def hysteresis_residual(cases: Sequence[LoadCase]) -> float:
    """Unloading displacement at zero load, in mm."""
    for c in cases:
        if c.index == 0:
            return c.tip_unloading_mm
    raise PreconditionError("cases lack the zero-load reference entry")


def linear_beam_modulus(force_n: float, deflection_mm: float,
                        geometry: RodGeometry = BENCHMARK_GEOMETRY) -> float:
    """Closed-form cantilever estimate E = F L^3 / (3 I delta)."""
    if deflection_mm <= 0.0:
        raise PreconditionError("deflection must be positive")
    return (
        force_n * geometry.length ** 3
        / (3.0 * geometry.second_moment * deflection_mm * 1e-3)
    )


def simulated_displacement_mm(
    youngs_modulus: float,
    force_n: float,
    geometry: RodGeometry = BENCHMARK_GEOMETRY,
    solver_cache: Optional[dict] = None,
) -> float:
    """Tip displacement under a transverse tip force, via the rod solver."""
    params = geometry.rod_params(youngs_modulus)
    state = solve_static(
        params,
        tip_load=([force_n, 0.0, 0.0], [0.0, 0.0, 0.0]),
        solver_cache=solver_cache,
    )
    return tip_displacement(state) * 1e3


def calibrate_E(
    case: LoadCase,
    target_mm: float,
    geometry: RodGeometry = BENCHMARK_GEOMETRY,
    tol_mm: float = 0.02,
    max_iter: int = 80,
) -> float:
    """Modulus whose simulated displacement matches the target within tol.

    Displacement is monotone decreasing in E, so a bisection bracketed
    around the linear-beam seed converges unconditionally.
    """
    if target_mm <= 0.0:
        raise PreconditionError("target displacement must be positive")
    seed = linear_beam_modulus(case.force_n, target_mm, geometry)
    cache: dict = {}

    def probe(E: float) -> float:
        try:
            return simulated_displacement_mm(E, case.force_n, geometry, cache)
        except Exception as exc:
            raise CalibrationError(
                f"case {case.index}: solver failed at E={E:.3e} Pa"
            ) from exc

    # Walk the violated bracket end away from the seed; displacement is
    # monotone decreasing in E.
    lo = hi = seed
    d_seed = probe(seed)
    if d_seed >= target_mm:
        for _ in range(6):
            hi *= 2.0
            if probe(hi) <= target_mm:
                break
        else:
            raise CalibrationError(
                f"case {case.index}: target {target_mm} mm below reach"
            )
    else:
        for _ in range(6):
            lo /= 2.0
            if probe(lo) >= target_mm:
                break
        else:
            raise CalibrationError(
                f"case {case.index}: target {target_mm} mm beyond reach"
            )
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        d_mid = probe(mid)
        if abs(d_mid - target_mm) <= tol_mm:
            return mid
        if d_mid > target_mm:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"case {case.index}: no modulus within {tol_mm} mm after {max_iter} "
        "bisections"
    )


def _slack_step(reading: float, elastic_mm: float, slack_mm: float) -> float:
    # One-sided play band [elastic, elastic + slack]: readings track the
    # elastic value while loading and lag behind it by up to the slack
    # width while unloading.
    return min(max(reading, elastic_mm), elastic_mm + slack_mm)


def _as_cases(cases: Sequence[Union[LoadCase, float]]) -> List[LoadCase]:
    out = []
    for k, c in enumerate(cases):
        if isinstance(c, LoadCase):
            out.append(c)
        else:
            weight = float(c)
            out.append(LoadCase(k, weight, weight * GRAVITY * 1e-3,
                                float("nan"), float("nan")))
    return out


def run_characterization(
    cases: Sequence[Union[LoadCase, float]],
    geometry: RodGeometry = BENCHMARK_GEOMETRY,
    slack_mm: float = RESIDUAL_SLACK_MM,
    youngs_modulus: Optional[float] = None,
    sim_targets_mm: Optional[Sequence[float]] = None,
) -> CharacterizationResult:
    """Full virtual loading-unloading run over ascending weights.

    cases may be LoadCase rows (bench data) or bare weights in grams.
    With sim_targets_mm given, the modulus is calibrated per case against
    those displacements; otherwise a single modulus is used (provided, or
    fitted from the trend slope of the measured loading branch).
    """
    rows = _as_cases(cases)
    if not rows:
        raise EmptyInputError("no load cases given")
    forces = [c.force_n for c in rows]
    if any(b < a for a, b in zip(forces, forces[1:])):
        raise PreconditionError("load cases must be ascending in force")

    loaded = [c for c in rows if c.force_n > 0.0]
    if not loaded:
        zeros = [0.0] * len(rows)
        return CharacterizationResult(
            point_ratios=[], trend_slope=0.0, residual_offset_mm=0.0,
            calibrated_E=0.0, per_case_sim_mm=zeros, per_case_error_pct=zeros,
            loading_mm=zeros, unloading_mm=zeros,
        )

    have_data = all(math.isfinite(c.tip_loading_mm) for c in loaded)

    per_case_E: List[float] = []
    sim_mm: List[float] = []
    if sim_targets_mm is not None:
        if len(sim_targets_mm) != len(loaded):
            raise PreconditionError(
                "one simulated target per loaded case required"
            )
        for c, target in zip(loaded, sim_targets_mm):
            E = calibrate_E(c, target, geometry)
            per_case_E.append(E)
            cache: dict = {}
            sim_mm.append(
                simulated_displacement_mm(E, c.force_n, geometry, cache)
            )
        E_single = per_case_E[0]
    else:
        if youngs_modulus is not None:
            E_single = youngs_modulus
        elif have_data:
            slope = trend_slope([LoadCase(0, 0.0, 0.0, 0.0, 0.0)] + loaded)
            E_single = (
                slope * geometry.length ** 3 / (3.0 * geometry.second_moment)
            )
        else:
            raise PreconditionError(
                "weights-only input needs an explicit youngs_modulus"
            )
        cache = {}
        for c in loaded:
            sim_mm.append(
                simulated_displacement_mm(E_single, c.force_n, geometry, cache)
            )

    # Virtual measurement sweep through the play band, loading then
    # unloading, zero-load case included on both branches.
    elastic = [0.0] + sim_mm
    reading = 0.0
    virtual_loading = []
    for e in elastic:
        reading = _slack_step(reading, e, slack_mm)
        virtual_loading.append(reading)
    virtual_unloading = [0.0] * len(elastic)
    for k in range(len(elastic) - 1, -1, -1):
        reading = _slack_step(reading, elastic[k], slack_mm)
        virtual_unloading[k] = reading

    loading_mm = ([c.tip_loading_mm for c in rows] if have_data
                  else virtual_loading[-len(rows):] if rows[0].force_n > 0.0
                  else virtual_loading)
    unloading_mm = ([c.tip_unloading_mm for c in rows] if have_data
                    else virtual_unloading[-len(rows):]
                    if rows[0].force_n > 0.0 else virtual_unloading)

    ratio_cases = (
        loaded if have_data
        else [replace(c, tip_loading_mm=v, tip_unloading_mm=u)
              for c, v, u in zip(loaded, virtual_loading[1:],
                                 virtual_unloading[1:])]
    )
    ratios = [point_ratio(c) for c in ratio_cases]
    # The trend fit spans the whole loading branch, zero-load row included.
    zero_row = LoadCase(0, 0.0, 0.0, 0.0, 0.0)
    trend_cases = [zero_row] + list(ratio_cases)
    slope = trend_slope(trend_cases)
    residual = (hysteresis_residual(rows) if have_data and rows[0].index == 0
                else virtual_unloading[0])

    ref_loading = [c.tip_loading_mm for c in loaded] if have_data else sim_mm
    errors = [
        (meas - sim) / ACTIVE_LENGTH_MM * 100.0
        for meas, sim in zip(ref_loading, sim_mm)
    ]

    return CharacterizationResult(
        point_ratios=ratios,
        trend_slope=slope,
        residual_offset_mm=residual,
        calibrated_E=E_single,
        per_case_sim_mm=sim_mm,
        per_case_error_pct=errors,
        loading_mm=list(loading_mm),
        unloading_mm=list(unloading_mm),
        calibrated_E_per_case=per_case_E,
    )


def read_cases_csv(path) -> List[LoadCase]:
    """Load cases from CSV columns index,weight_g,force_N,loading_mm,unloading_mm.

    force_N, loading_mm and unloading_mm may be blank; blank forces are
    derived from the weight.
    """
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PreconditionError(f"{path}: empty fixture")
        required = {"index", "weight_g"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise PreconditionError(
                f"{path}: missing columns {sorted(missing)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                weight = float(row["weight_g"])
                force = (float(row["force_N"])
                         if row.get("force_N") not in (None, "")
                         else weight * GRAVITY * 1e-3)
                loading = (float(row["loading_mm"])
                           if row.get("loading_mm") not in (None, "")
                           else float("nan"))
                unloading = (float(row["unloading_mm"])
                             if row.get("unloading_mm") not in (None, "")
                             else float("nan"))
                out.append(LoadCase(int(row["index"]), weight, force,
                                    loading, unloading))
            except (TypeError, ValueError, PreconditionError) as exc:
                raise PreconditionError(f"{path}:{lineno}: {exc}") from exc
    if not out:
        raise PreconditionError(f"{path}: no data rows")
    return out


def write_cases_csv(path, cases: Sequence[LoadCase]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "weight_g", "force_N", "loading_mm", "unloading_mm"]
        )
        for c in cases:
            writer.writerow([c.index, c.weight_g, c.force_n,
                             c.tip_loading_mm, c.tip_unloading_mm])


def write_result(path, result: CharacterizationResult) -> None:
    """Structured-text dump of a characterization run."""
    with open(path, "w") as fh:
        fh.write(f"trend_slope_N_per_m: {result.trend_slope:.4f}\n")
        fh.write(f"residual_offset_mm: {result.residual_offset_mm:.2f}\n")
        fh.write(f"calibrated_E_Pa: {result.calibrated_E:.6e}\n")
        fh.write("case,point_ratio_N_per_m,sim_mm,error_pct\n")
        for k, (sim, err) in enumerate(
            zip(result.per_case_sim_mm, result.per_case_error_pct), start=1
        ):
            ratio = (f"{result.point_ratios[k - 1]:.3f}"
                     if k - 1 < len(result.point_ratios) else "")
            fh.write(f"{k},{ratio},{sim:.2f},{err:.2f}\n")
