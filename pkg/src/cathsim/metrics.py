"""Planar tracking-error metrics with nearest-point correspondence.

For each logged sample, the measured tip and the reference path are
projected onto a coordinate plane; the error vector is the offset from
the sample to the nearest point on the reference polyline (interior
segment points included, not just vertices).  MEE averages the L2
norms, MAE the L1 norms; L1 >= L2 per sample, so MAE >= MEE always.
"""

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import EmptyInputError, PreconditionError
from .scenarios import TrajectoryLog

PLANES: Tuple[str, ...] = ("x-y", "x-z", "y-z")
_PLANE_AXES = {"x-y": (0, 1), "x-z": (0, 2), "y-z": (1, 2)}
_CHUNK = 512


def project(points: np.ndarray, plane: str) -> np.ndarray:
    if plane not in _PLANE_AXES:
        raise PreconditionError(f"unknown plane {plane!r}")
    i, j = _PLANE_AXES[plane]
    return np.asarray(points, dtype=float)[:, (i, j)]


def nearest_point_errors(
    points: np.ndarray, polyline: np.ndarray
) -> np.ndarray:
    """Per-point 2D offset to the closest point on the polyline."""
    points = np.asarray(points, dtype=float)
    polyline = np.asarray(polyline, dtype=float)
    if polyline.ndim != 2 or polyline.shape[0] < 2:
        raise PreconditionError("reference polyline needs at least 2 points")
    if points.size == 0:
        raise EmptyInputError("no sample points to score")

    a = polyline[:-1]
    d = polyline[1:] - a
    seg_len2 = np.maximum((d * d).sum(axis=1), 1e-300)

    errors = np.empty_like(points)
    for lo in range(0, len(points), _CHUNK):
        p = points[lo:lo + _CHUNK]
        # Parametric foot of each point on each segment, clamped to it.
        rel = p[:, None, :] - a[None, :, :]
        t = np.clip((rel * d[None, :, :]).sum(axis=2) / seg_len2, 0.0, 1.0)
        foot = a[None, :, :] + t[:, :, None] * d[None, :, :]
        offsets = p[:, None, :] - foot
        dist2 = (offsets * offsets).sum(axis=2)
        best = dist2.argmin(axis=1)
        errors[lo:lo + _CHUNK] = offsets[np.arange(len(p)), best]
    return errors


def mee_mae(errors: np.ndarray) -> Tuple[float, float]:
    mee = float(np.sqrt((errors ** 2).sum(axis=1)).mean())
    mae = float(np.abs(errors).sum(axis=1).mean())
    return mee, mae


@dataclass(frozen=True)
class PlaneErrors:
    mee_cm: float
    mae_cm: float


@dataclass(frozen=True)
class ErrorReport:
    """MEE/MAE per plane, for each repetition and pooled over all."""

    pooled: Dict[str, PlaneErrors]
    per_rep: Dict[int, Dict[str, PlaneErrors]]


def compute_errors(
    log: TrajectoryLog, reference: Sequence[Sequence[float]]
) -> ErrorReport:
    """Score a trajectory log against a reference path, per plane.

    reference is an ordered (N, 3) point list in cm; each plane uses
    its own projection of the same polyline.
    """
    if not log.samples:
        raise EmptyInputError("trajectory log is empty")
    reference = np.asarray(reference, dtype=float)
    if reference.ndim != 2 or reference.shape[1] != 3 or len(reference) < 2:
        raise PreconditionError("reference must be an ordered (N, 3) list")

    pooled: Dict[str, PlaneErrors] = {}
    per_rep: Dict[int, Dict[str, PlaneErrors]] = {r: {} for r in log.reps()}
    all_points = log.positions()
    rep_ids = np.array([s.rep for s in log.samples])
    for plane in PLANES:
        ref2d = project(reference, plane)
        errors = nearest_point_errors(project(all_points, plane), ref2d)
        pooled[plane] = PlaneErrors(*mee_mae(errors))
        for rep in log.reps():
            per_rep[rep][plane] = PlaneErrors(
                *mee_mae(errors[rep_ids == rep])
            )
    return ErrorReport(pooled=pooled, per_rep=per_rep)


def format_error_report(report: ErrorReport) -> str:
    """Structured text: pooled rows first (x-y, x-z, y-z), then per rep."""
    lines = ["plane,mee_cm,mae_cm"]
    for plane in PLANES:
        e = report.pooled[plane]
        lines.append(f"{plane},{e.mee_cm:.4f},{e.mae_cm:.4f}")
    lines.append("")
    lines.append("rep,plane,mee_cm,mae_cm")
    for rep in sorted(report.per_rep):
        for plane in PLANES:
            e = report.per_rep[rep][plane]
            lines.append(f"{rep},{plane},{e.mee_cm:.4f},{e.mae_cm:.4f}")
    return "\n".join(lines) + "\n"


def write_error_report(report: ErrorReport, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_error_report(report))
