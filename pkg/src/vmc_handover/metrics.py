"""Per-run handover metrics and aggregate tables from trajectory logs.

Everything here is post hoc: pure functions over immutable log arrays, never
part of the control loop. Lengths are reported in centimeters and angles in
degrees to match the usual presentation of handover results.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

# order of metric columns in emitted tables; SR is spliced in after t_a
METRIC_NAMES = ("t_a", "d_i", "L_r", "L_o", "e_d", "theta_i", "theta_r", "theta_o", "e_theta")

CSV_HEADER = "group,n,t_a,SR,d_i,L_r,L_o,e_d,theta_i,theta_r,theta_o,e_theta"


def frame_from_points(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    """Orthonormal frame spanned by a point triad, as column axes.

    x runs from p1 to p2; z is normal to the triad plane; y completes the
    right-handed set. Translation of all three points leaves the frame
    unchanged; rotating them rotates the frame by the same amount.
    """
    p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p1, p2, p3))
    a = p2 - p1
    b = p3 - p1
    n = np.cross(a, b)
    if np.linalg.norm(n) <= 2e-9:  # area > 1e-9
        raise ValueError("frame points are collinear")
    x = a / np.linalg.norm(a)
    z = np.cross(x, b)
    z /= np.linalg.norm(z)
    y = np.cross(z, x)
    return np.column_stack((x, y, z))


def _check_rotation(R: np.ndarray, name: str) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3")
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
        raise ValueError(f"{name} is not a proper rotation")
    return R


def relative_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    R1 = _check_rotation(R1, "R1")
    R2 = _check_rotation(R2, "R2")
    c = (np.trace(R1.T @ R2) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


@dataclass(frozen=True)
class RunMetrics:
    """One run's scalar outcomes: seconds, centimeters, degrees."""

    t_a: float
    success: bool
    d_i: float
    L_r: float
    L_o: float
    e_d: float
    theta_i: float
    theta_r: float
    theta_o: float
    e_theta: float

    def __post_init__(self):
        if self.t_a <= 0:
            raise ValueError("t_a must be > 0")
        for name in ("d_i", "L_r", "L_o", "e_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("theta_i", "theta_r", "theta_o", "e_theta"):
            if not (0.0 <= getattr(self, name) <= 180.0):
                raise ValueError(f"{name} must be in [0, 180] degrees")


def compute_metrics(
    log,
    close_distance: float = 0.02,
    close_angle_deg: float = 15.0,
) -> RunMetrics:
    """Scalar metrics for one log.

    The closure instant is the first tick with fingers closed (the log end if
    the fingers never closed). Distances and path lengths take the maximum
    over the three paired points. Success demands closure with both finger
    points inside ``close_distance`` of their targets and a frame angle error
    below ``close_angle_deg``.
    """
    t = np.asarray(log.t, dtype=float)
    if t.size < 2:
        raise ValueError("log too short for metrics")
    grip = np.asarray(log.gripper_points, dtype=float)
    targ = np.asarray(log.target_points, dtype=float)
    closed = np.asarray(log.fingers_closed, dtype=bool)

    ever_closed = bool(closed.any())
    ci = int(np.argmax(closed)) if ever_closed else t.size - 1

    pair0 = np.linalg.norm(targ[0] - grip[0], axis=1)
    pair_ci = np.linalg.norm(targ[ci] - grip[ci], axis=1)

    def max_path(points: np.ndarray) -> float:
        steps = np.linalg.norm(np.diff(points[: ci + 1], axis=0), axis=2)
        return float(steps.sum(axis=0).max()) if steps.size else 0.0

    g0 = frame_from_points(*grip[0])
    gc = frame_from_points(*grip[ci])
    o0 = frame_from_points(*targ[0])
    oc = frame_from_points(*targ[ci])

    e_theta = relative_angle(gc, oc)
    # the two finger pairs come first in the attachment order
    success = bool(
        ever_closed and float(pair_ci[:2].max()) < close_distance and e_theta < close_angle_deg
    )
    return RunMetrics(
        t_a=float(t[ci] - t[0]),
        success=success,
        d_i=100.0 * float(pair0.max()),
        L_r=100.0 * max_path(grip),
        L_o=100.0 * max_path(targ),
        e_d=100.0 * float(pair_ci.max()),
        theta_i=relative_angle(g0, o0),
        theta_r=relative_angle(g0, gc),
        theta_o=relative_angle(o0, oc),
        e_theta=e_theta,
    )


@dataclass(frozen=True)
class AggregateTable:
    """Per-group summary: SR plus mean/std of each metric over successes."""

    rows: Dict[str, dict]


def aggregate(outcomes: Sequence, group_key: Callable[[object], str]) -> AggregateTable:
    """Group outcomes and summarize.

    System failures (``failure_reason == "system"``) never enter the success
    denominator; metric means and standard deviations cover successful runs
    only. Standard deviation is the population form.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no outcomes to aggregate")
    groups: Dict[str, list] = {}
    for outcome in outcomes:
        groups.setdefault(group_key(outcome), []).append(outcome)

    rows: Dict[str, dict] = {}
    for name in sorted(groups):
        runs = [o for o in groups[name] if getattr(o, "failure_reason", None) != "system"]
        if not runs:
            raise ValueError(f"group {name!r} has only system failures")
        successes = [o for o in runs if o.success]
        row: dict = {
            "n": len(runs),
            "SR": 100.0 * len(successes) / len(runs),
        }
        for metric in METRIC_NAMES:
            if successes:
                vals = np.array([getattr(o.metrics, metric) for o in successes], dtype=float)
                if np.ptp(vals) == 0.0:  # degenerate sample: exactly zero spread
                    row[metric] = (float(vals[0]), 0.0)
                else:
                    row[metric] = (float(vals.mean()), float(vals.std()))
            else:
                row[metric] = None
        rows[name] = row
    return AggregateTable(rows=rows)


def table_to_csv(table: AggregateTable) -> str:
    """Render the aggregate table with the fixed column layout."""
    lines = [CSV_HEADER]
    for name in sorted(table.rows):
        row = table.rows[name]

        def cell(metric: str) -> str:
            stat = row[metric]
            if stat is None:
                return "-"
            return f"{stat[0]:.3f} ({stat[1]:.3f})"

        cells = [name, str(row["n"]), cell("t_a"), f"{row['SR']:.1f}"]
        cells += [cell(m) for m in METRIC_NAMES[1:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
