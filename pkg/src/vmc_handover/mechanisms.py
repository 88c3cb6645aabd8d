"""Closed-form force laws for the virtual interaction components.

Saturated springs, position-dependent dampers, Gaussian repulsive regions,
and the rigid-link geometry that produces the three gripper/target paired
points. Everything here is a pure function of its arguments; parameter
records are frozen after validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from vmc_handover.kinematics import JointState, KinematicChain, Pose

# ====== Parameter records ======


@dataclass(frozen=True)
class SaturatedSpringParams:
    """Spring with tanh force profile bounded by f_max.

    f_max = 0 disables the spring entirely (the tanh limit), which is how the
    cooperative profile switches the snap spring off.
    """

    f_max: float  # N
    k: float      # N/m, small-displacement stiffness

    def __post_init__(self):
        if self.f_max < 0:
            raise ValueError("f_max must be >= 0")
        if self.k <= 0:
            raise ValueError("k must be > 0")


@dataclass(frozen=True)
class VariableDamperParams:
    """Damping that fades from c1+c2 at distance to c1 near contact."""

    c1: float      # N s/m, base damping
    c2: float      # N s/m, position-dependent range
    beta_d: float  # 1/m, distance sensitivity

    def __post_init__(self):
        if self.c1 < 0:
            raise ValueError("c1 must be >= 0")
        if self.c1 + self.c2 < 0:
            raise ValueError("c1 + c2 must be >= 0")
        if self.beta_d <= 0:
            raise ValueError("beta_d must be > 0")


@dataclass(frozen=True)
class RepulsiveRegionParams:
    """Spherical Gaussian repulsive region.

    Peak force f_max occurs at distance sigma from the center; the stiffness
    scale k_r = (f_max / sigma) * e^0.5 follows from that requirement.
    """

    f_max: float  # N
    sigma: float  # m

    def __post_init__(self):
        if self.f_max <= 0:
            raise ValueError("f_max must be > 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")

    @property
    def k_r(self) -> float:
        return (self.f_max / self.sigma) * np.exp(0.5)


@dataclass(frozen=True)
class GraspSpec:
    """Object-local target points and the gripper attachments they pair with.

    points holds the three virtual target points (left finger, right finger,
    wrist back) in object coordinates, already placed at the ends of the
    object-side rigid links. The gripper side is derived at runtime by
    extending the named chain attachments to link_length from their centroid.
    """

    points: np.ndarray                       # (3, 3) object-local
    attachment_names: Tuple[str, str, str]
    link_length: float                       # m

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(3, 3)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "attachment_names", tuple(self.attachment_names))
        if len(self.attachment_names) != 3:
            raise ValueError("exactly three attachment names required")
        if self.link_length <= 0:
            raise ValueError("link_length must be > 0")
        area = 0.5 * np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
        if area <= 1e-6:
            raise ValueError("grasp points are collinear (triangle area <= 1e-6 m^2)")


@dataclass
class PairedPointState:
    """One gripper/target pair: world points, displacement, relative velocity."""

    gripper_point: np.ndarray
    target_point: np.ndarray
    p: np.ndarray     # target - gripper (m)
    pdot: np.ndarray  # d/dt p (m/s)


# ====== Force laws ======


def _check_finite(v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite {what}")
    return v


def saturated_spring_force(params: SaturatedSpringParams, p: np.ndarray) -> np.ndarray:
    """Attraction force on the gripper point for pair displacement p.

    F = f_max * tanh(k |p| / f_max) * p / |p|; zero at |p| < 1e-12 and for a
    disabled spring (f_max = 0).
    """
    p = np.asarray(p, dtype=float)
    x, y, z = p
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError("non-finite spring displacement")
    if params.f_max == 0.0:
        return np.zeros(3)
    d = math.sqrt(x * x + y * y + z * z)
    if d < 1e-12:
        return np.zeros(3)
    return (params.f_max * math.tanh(params.k * d / params.f_max) / d) * p


def saturated_spring_potential(params: SaturatedSpringParams, p: np.ndarray) -> float:
    """Potential energy U(p) = (f_max^2 / k) ln cosh(k |p| / f_max)."""
    p = _check_finite(p, "spring displacement")
    if params.f_max == 0.0:
        return 0.0
    d = np.linalg.norm(p)
    x = params.k * d / params.f_max
    # log cosh without overflow for large extensions
    logcosh = x + np.log1p(np.exp(-2.0 * x)) - np.log(2.0) if x > 20 else np.log(np.cosh(x))
    return (params.f_max**2 / params.k) * logcosh


def damper_force(params: VariableDamperParams, p: np.ndarray, pdot: np.ndarray) -> np.ndarray:
    """Damping force on the gripper point, driving the relative rate to zero.

    F = (c1 + c2 tanh(beta_d |p|)) * pdot. Applied at the gripper point this
    accelerates it toward the target rate, i.e. it opposes relative motion.
    """
    p = np.asarray(p, dtype=float)
    pdot = np.asarray(pdot, dtype=float)
    x, y, z = p
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError("non-finite damper displacement")
    vx, vy, vz = pdot
    if not (math.isfinite(vx) and math.isfinite(vy) and math.isfinite(vz)):
        raise ValueError("non-finite damper rate")
    c = params.c1 + params.c2 * math.tanh(params.beta_d * math.sqrt(x * x + y * y + z * z))
    return c * pdot


def repulsive_force(params: RepulsiveRegionParams, p_r: np.ndarray) -> np.ndarray:
    """Repulsion at center-to-point displacement p_r, directed away from center.

    F = k_r exp(-|p_r|^2 / (2 sigma^2)) p_r, the negative gradient of
    repulsive_energy; magnitude peaks at f_max when |p_r| = sigma.
    """
    p_r = np.asarray(p_r, dtype=float)
    x, y, z = p_r
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError("non-finite repulsive displacement")
    s2 = params.sigma * params.sigma
    return params.k_r * math.exp(-(x * x + y * y + z * z) / (2.0 * s2)) * p_r


def repulsive_energy(params: RepulsiveRegionParams, p_r: np.ndarray) -> float:
    """E(p_r) = k_r sigma^2 exp(-|p_r|^2 / (2 sigma^2))."""
    p_r = _check_finite(p_r, "repulsive displacement")
    s2 = params.sigma * params.sigma
    return params.k_r * s2 * np.exp(-(p_r @ p_r) / (2.0 * s2))


# ====== Paired-point geometry ======

_LINK_CACHE: Dict[Tuple[int, int], Tuple[int, np.ndarray]] = {}


def gripper_link_points(chain: KinematicChain, grasp: GraspSpec) -> Tuple[int, np.ndarray]:
    """Gripper-side paired points in their body frame.

    The three named attachments are extended radially from their centroid to
    link_length, mirroring the virtual rigid links on the object side. All
    three attachments must sit on the same body.
    """
    key = (id(chain), id(grasp))
    hit = _LINK_CACHE.get(key)
    if hit is not None:
        return hit

    atts = []
    for name in grasp.attachment_names:
        try:
            atts.append(chain.attachments[name])
        except KeyError:
            raise KeyError(f"unknown attachment {name!r}") from None
    bodies = {a.body for a in atts}
    if len(bodies) != 1:
        raise ValueError("paired-point attachments must share one body")
    body = atts[0].body

    local = np.array([a.offset for a in atts], dtype=float)
    centroid = local.mean(axis=0)
    rel = local - centroid
    norms = np.linalg.norm(rel, axis=1)
    if np.any(norms < 1e-9):
        raise ValueError("attachment coincides with the triad centroid")
    extended = centroid + rel * (grasp.link_length / norms)[:, None]

    if len(_LINK_CACHE) > 64:
        _LINK_CACHE.clear()
    _LINK_CACHE[key] = (body, extended)
    return body, extended


def grasp_points_at(
    chain: KinematicChain,
    attachment_names: Tuple[str, str, str],
    link_length: float,
    gripper_in_object: Pose,
) -> np.ndarray:
    """Object-local grasp points for a chosen grasp pose.

    Places the extended gripper triad into the object frame at the given
    gripper-body pose, so the paired points coincide exactly when the gripper
    body reaches that relative pose. This is how object grasp specifications
    are authored.
    """
    probe = GraspSpec(
        points=np.eye(3) * 0.1,
        attachment_names=tuple(attachment_names),
        link_length=link_length,
    )
    _, local = gripper_link_points(chain, probe)
    return gripper_in_object.transform_points(local)


def paired_points(
    chain: KinematicChain,
    state: JointState,
    object_pose: Pose,
    grasp: GraspSpec,
    alpha: float,
    gripper_base: np.ndarray,
    hand_vel: Optional[np.ndarray] = None,
    prev_direction: Optional[np.ndarray] = None,
    frames=None,
    out_jacobians: Optional[list] = None,
) -> Tuple[List[PairedPointState], np.ndarray]:
    """Build the three gripper/target pairs for the current tick.

    Target points are the grasp-spec points under object_pose, shifted by
    alpha along the unit vector from their centroid toward gripper_base.
    Returns the pairs and the offset direction actually used; callers keep
    the direction and pass it back as prev_direction so a degenerate
    geometry (centroid at the gripper base) reuses the last good value.

    Args:
        hand_vel: translational target velocity (m/s); zero when omitted.
        frames: optional precomputed chain.frames(state.q) to share FK work.
        out_jacobians: list to receive each pair's point Jacobian, letting
            the torque mapping reuse them instead of recomputing.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    targets = object_pose.transform_points(grasp.points)
    centroid = targets.mean(axis=0)

    to_base = np.asarray(gripper_base, dtype=float) - centroid
    dist = np.linalg.norm(to_base)
    if dist < 1e-6:
        direction = (
            np.asarray(prev_direction, dtype=float)
            if prev_direction is not None
            else np.array([0.0, 0.0, 1.0])
        )
    else:
        direction = to_base / dist
    if alpha != 0.0:
        targets = targets + alpha * direction

    if frames is None:
        frames = chain.frames(state.q)
    body, local = gripper_link_points(chain, grasp)
    T = frames.transforms[body]
    grip = local @ T[:3, :3].T + T[:3, 3]

    tvel = np.zeros(3) if hand_vel is None else np.asarray(hand_vel, dtype=float)
    pairs = []
    for i in range(3):
        J = frames.point_jacobian(body, grip[i])
        if out_jacobians is not None:
            out_jacobians.append(J)
        pairs.append(
            PairedPointState(
                gripper_point=grip[i],
                target_point=targets[i],
                p=targets[i] - grip[i],
                pdot=tvel - J @ state.qdot,
            )
        )
    return pairs, direction
