"""Hand pose conditioning: low-pass smoothing and velocity estimation.

Raw palm poses arrive from whatever source drives the session (scenario
script or live steering). A first-order low-pass removes jitter before the
pose feeds the interaction layer, and a constant-velocity Kalman filter
turns the position stream into the hand-velocity estimate consumed by the
gripper state machine. Only the palm pose is processed; no skeleton model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vmc_handover.kinematics import Pose, _matrix_to_quat, _quat_to_matrix


@dataclass(frozen=True)
class LowPassState:
    """First-order smoother state; cutoff in Hz."""

    cutoff: float
    last_output: Pose
    # orientation of last_output as a unit quaternion, carried between steps
    # so the hot loop skips a matrix-to-quaternion round trip
    last_quat: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (self.cutoff > 0):
            raise ValueError("cutoff must be > 0")


@dataclass(frozen=True)
class KalmanCvState:
    """Constant-velocity filter: x = (position, velocity), 6x6 covariance."""

    x: np.ndarray
    P: np.ndarray
    q_proc: float  # process noise intensity, (m/s^2)^2
    r_meas: float  # measurement noise variance, m^2

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(6)
        P = np.asarray(self.P, dtype=float).reshape(6, 6)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)
        if self.q_proc <= 0 or self.r_meas <= 0:
            raise ValueError("q_proc and r_meas must be > 0")
        if np.max(np.abs(P - P.T)) > 1e-9:
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(P)) < -1e-9:
            raise ValueError("covariance lost positive semidefiniteness (diverged)")


def default_lowpass(initial: Pose, cutoff: float = 8.0) -> LowPassState:
    return LowPassState(cutoff=cutoff, last_output=initial)


def default_kalman(
    initial_position: np.ndarray,
    q_proc: float = 5.0,
    r_meas: float = 0.005**2,
) -> KalmanCvState:
    x = np.zeros(6)
    x[:3] = np.asarray(initial_position, dtype=float)
    P = np.diag([1e-4, 1e-4, 1e-4, 1.0, 1.0, 1.0])
    return KalmanCvState(x=x, P=P, q_proc=q_proc, r_meas=r_meas)


def _slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    # shortest-path spherical interpolation on unit quaternions (xyzw)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        out = (1.0 - t) * q0 + t * q1
        return out / np.linalg.norm(out)
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    out = (np.sin((1.0 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1
    return out / np.linalg.norm(out)


def lowpass_update(s: LowPassState, raw: Pose, dt: float) -> tuple:
    """One smoothing step; returns (new state, filtered pose).

    Position blends with a = dt / (dt + 1/(2 pi cutoff)); orientation moves
    from the previous output toward raw by the same fraction along the
    geodesic, so one step with a -> 1 passes raw through unchanged.
    """
    if not (dt > 0):
        raise ValueError("dt must be > 0")
    a = dt / (dt + 1.0 / (2.0 * np.pi * s.cutoff))
    pos = (1.0 - a) * s.last_output.position + a * raw.position
    q_prev = s.last_quat
    if q_prev is None:
        q_prev = _matrix_to_quat(s.last_output.rotation)
    q = _slerp(q_prev, _raw_quat(raw), a)
    out = Pose._trusted(pos, _quat_to_matrix(q))
    return LowPassState(cutoff=s.cutoff, last_output=out, last_quat=q), out


# One-slot memo for the raw rotation's quaternion. Scripts hand the session
# the same Pose object for every tick of a hold segment, so keying on object
# identity skips the conversion for the (common) static stretches.
_raw_quat_memo: tuple = (None, None)


def _raw_quat(raw: Pose) -> np.ndarray:
    global _raw_quat_memo
    R, q = _raw_quat_memo
    if R is raw.rotation:
        return q
    q = _matrix_to_quat(raw.rotation)
    _raw_quat_memo = (raw.rotation, q)
    return q


_FQ_CACHE: dict = {}


def _transition(dt: float, q_proc: float):
    key = (dt, q_proc)
    cached = _FQ_CACHE.get(key)
    if cached is None:
        I3 = np.eye(3)
        Z3 = np.zeros((3, 3))
        F = np.block([[I3, dt * I3], [Z3, I3]])
        Q = q_proc * np.block(
            [[dt**3 / 3.0 * I3, dt**2 / 2.0 * I3], [dt**2 / 2.0 * I3, dt * I3]]
        )
        if len(_FQ_CACHE) > 64:
            _FQ_CACHE.clear()
        cached = _FQ_CACHE[key] = (F, Q)
    return cached


def _inv3(m: np.ndarray) -> np.ndarray:
    # adjugate inverse; the innovation covariance is 3x3, symmetric, and
    # dominated by r_meas on the diagonal, so no pivoting is needed
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    ca = e * i - f * h
    cb = f * g - d * i
    cc = d * h - e * g
    det = a * ca + b * cb + c * cc
    if det == 0.0 or not math.isfinite(det):
        raise ValueError("covariance lost positive semidefiniteness (diverged)")
    inv_det = 1.0 / det
    return np.array(
        [
            [ca * inv_det, (c * h - b * i) * inv_det, (b * f - c * e) * inv_det],
            [cb * inv_det, (a * i - c * g) * inv_det, (c * d - a * f) * inv_det],
            [cc * inv_det, (b * g - a * h) * inv_det, (a * e - b * d) * inv_det],
        ]
    )


def kalman_update(s: KalmanCvState, z: np.ndarray, dt: float) -> tuple:
    """One predict/update step on a position measurement.

    Returns (new state, velocity estimate). The measurement matrix selects
    the position block, so its products reduce to slices. Divergence (a
    non-finite state) surfaces as a ValueError.
    """
    if not (dt > 0):
        raise ValueError("dt must be > 0")
    z = np.asarray(z, dtype=float).reshape(3)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite measurement")

    F, Q = _transition(dt, s.q_proc)

    x = F @ s.x
    P = F @ s.P @ F.T + Q
    S = P[:3, :3] + s.r_meas * np.eye(3)
    K = P[:, :3] @ _inv3(S)
    x = x + K @ (z - x[:3])
    KH = np.zeros((6, 6))
    KH[:, :3] = K
    P = (np.eye(6) - KH) @ P
    P = 0.5 * (P + P.T)

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
        raise ValueError("covariance lost positive semidefiniteness (diverged)")
    out = object.__new__(KalmanCvState)
    object.__setattr__(out, "x", x)
    object.__setattr__(out, "P", P)
    object.__setattr__(out, "q_proc", s.q_proc)
    object.__setattr__(out, "r_meas", s.r_meas)
    return out, x[3:].copy()
