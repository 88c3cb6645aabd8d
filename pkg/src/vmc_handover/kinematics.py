"""Serial-chain forward kinematics and translational point Jacobians.

The chain model is deliberately minimal: an ordered list of revolute joints,
each with a fixed parent-to-joint transform and a rotation axis, plus named
attachment points on any body. Body 0 is the base; body k is the frame after
joint k. Chains are described in JSON (see data/chains/) with lengths in
meters and angles in radians; rpy follows the extrinsic x-y-z convention
(R = Rz(yaw) @ Ry(pitch) @ Rx(roll)).

All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

# ====== Small rotation helpers ======


def rpy_matrix(rpy: Sequence[float]) -> np.ndarray:
    """Rotation matrix from extrinsic x-y-z roll/pitch/yaw angles."""
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method, returns xyzw with w >= 0.
    t = np.trace(R)
    if t > 0:
        w = 0.5 * np.sqrt(1.0 + t)
        f = 0.25 / w
        q = np.array(
            [(R[2, 1] - R[1, 2]) * f, (R[0, 2] - R[2, 0]) * f, (R[1, 0] - R[0, 1]) * f, w]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        q = np.empty(4)
        q[i] = 0.5 * s
        f = 0.25 / q[i]
        q[3] = (R[k, j] - R[j, k]) * f
        q[j] = (R[j, i] + R[i, j]) * f
        q[k] = (R[k, i] + R[i, k]) * f
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


# ====== Core types ======


@dataclass(frozen=True)
class Pose:
    """Rigid pose: world position (m) and 3x3 rotation matrix."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(rot)):
            raise ValueError("non-finite pose")
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(rot) - 1) > 1e-9:
            raise ValueError("orientation is not a proper rotation")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)

    @classmethod
    def _trusted(cls, position: np.ndarray, rotation: np.ndarray) -> "Pose":
        # fast path for poses derived from already-validated ones; the
        # public constructor stays the validating entry point
        self = object.__new__(cls)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "rotation", rotation)
        return self

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    @staticmethod
    def from_quat(position: Sequence[float], quat_xyzw: Sequence[float]) -> "Pose":
        return Pose(np.asarray(position, dtype=float), _quat_to_matrix(np.asarray(quat_xyzw, dtype=float)))

    @staticmethod
    def from_rpy(position: Sequence[float], rpy: Sequence[float]) -> "Pose":
        return Pose(np.asarray(position, dtype=float), rpy_matrix(rpy))

    def as_quat(self) -> np.ndarray:
        """Orientation as an xyzw unit quaternion (w >= 0)."""
        return _matrix_to_quat(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        return Pose._trusted(
            self.position + self.rotation @ other.position, self.rotation @ other.rotation
        )

    def inverse(self) -> "Pose":
        rt = np.ascontiguousarray(self.rotation.T)
        return Pose._trusted(-(rt @ self.position), rt)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.position + self.rotation @ np.asarray(p, dtype=float)

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.rotation.T + self.position


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray          # unit rotation axis in the joint frame
    origin_xyz: np.ndarray    # fixed translation from parent body
    origin_rpy: np.ndarray    # fixed rotation from parent body
    lower: Optional[float] = None
    upper: Optional[float] = None


@dataclass(frozen=True)
class Attachment:
    name: str
    body: int
    offset: np.ndarray
    rpy: np.ndarray


@dataclass
class JointState:
    """Joint angles (rad) and velocities (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.qdot is None:
            self.qdot = np.zeros_like(self.q)
        else:
            self.qdot = np.asarray(self.qdot, dtype=float).reshape(-1)
        if self.qdot.shape != self.q.shape:
            raise ValueError("q and qdot must have the same length")


class KinematicChain:
    """Validated serial chain with precomputed fixed transforms."""

    def __init__(self, name: str, joints: Sequence[Joint], attachments: Dict[str, Attachment],
                 base_pose: Pose):
        self.name = name
        self.joints: Tuple[Joint, ...] = tuple(joints)
        self.attachments: Dict[str, Attachment] = dict(attachments)
        self.base_pose = base_pose
        # Fixed parent-to-joint transforms, composed once.
        self._fixed = np.empty((len(self.joints), 4, 4))
        for k, j in enumerate(self.joints):
            T = np.eye(4)
            T[:3, :3] = rpy_matrix(j.origin_rpy)
            T[:3, 3] = j.origin_xyz
            self._fixed[k] = T
        self._base_T = np.eye(4)
        self._base_T[:3, :3] = base_pose.rotation
        self._base_T[:3, 3] = base_pose.position
        # Rodrigues decomposition R(q) = cos q * A + sin q * B + C per joint,
        # letting one vectorized expression build every joint rotation
        n = len(self.joints)
        self._rot_a = np.empty((n, 3, 3))
        self._rot_b = np.empty((n, 3, 3))
        self._rot_c = np.empty((n, 3, 3))
        for k, j in enumerate(self.joints):
            a = np.asarray(j.axis, dtype=float)
            outer = np.outer(a, a)
            self._rot_a[k] = np.eye(3) - outer
            self._rot_b[k] = np.array(
                [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
            )
            self._rot_c[k] = outer

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def joint_limits(self) -> Tuple[np.ndarray, np.ndarray]:
        """(lower, upper) arrays with +-inf where a joint is unlimited."""
        lo = np.array([j.lower if j.lower is not None else -np.inf for j in self.joints])
        hi = np.array([j.upper if j.upper is not None else np.inf for j in self.joints])
        return lo, hi

    def body_transforms(self, q: np.ndarray) -> np.ndarray:
        """World 4x4 transforms of bodies 0..n for joint angles q."""
        q = np.asarray(q, dtype=float)
        out = np.empty((self.n_joints + 1, 4, 4))
        out[0] = self._base_T
        T = self._base_T
        for k, joint in enumerate(self.joints):
            Tj = T @ self._fixed[k]
            R = axis_angle_matrix(joint.axis, q[k])
            Tq = np.eye(4)
            Tq[:3, :3] = R
            T = Tj @ Tq
            out[k + 1] = T
        return out

    def frames(self, q: np.ndarray) -> "FrameSet":
        """One FK pass exposing everything the control loop needs."""
        q = np.asarray(q, dtype=float)
        n = self.n_joints
        transforms = np.zeros((n + 1, 4, 4))
        transforms[:, 3, 3] = 1.0
        transforms[0] = self._base_T
        axes = np.empty((n, 3))
        origins = np.empty((n, 3))
        cq = np.cos(q)[:, None, None]
        sq = np.sin(q)[:, None, None]
        joint_rots = cq * self._rot_a + sq * self._rot_b + self._rot_c
        R = self._base_T[:3, :3]
        p = self._base_T[:3, 3]
        for k, joint in enumerate(self.joints):
            fixed = self._fixed[k]
            p = p + R @ fixed[:3, 3]
            R = R @ fixed[:3, :3]
            origins[k] = p
            axes[k] = R @ joint.axis
            R = R @ joint_rots[k]
            transforms[k + 1, :3, :3] = R
            transforms[k + 1, :3, 3] = p
        return FrameSet(self, transforms, axes, origins)


@dataclass
class FrameSet:
    """Result of one forward-kinematics pass over a chain."""

    chain: KinematicChain
    transforms: np.ndarray     # (n+1, 4, 4) world body transforms
    joint_axes: np.ndarray     # (n, 3) world joint axes
    joint_origins: np.ndarray  # (n, 3) world joint origins

    def body_point(self, body: int, local: np.ndarray) -> np.ndarray:
        T = self.transforms[body]
        return T[:3, 3] + T[:3, :3] @ local

    def attachment_point(self, name: str) -> np.ndarray:
        att = self._att(name)
        return self.body_point(att.body, att.offset)

    def attachment_pose(self, name: str) -> Pose:
        att = self._att(name)
        T = self.transforms[att.body]
        return Pose(T[:3, 3] + T[:3, :3] @ att.offset, T[:3, :3] @ rpy_matrix(att.rpy))

    def point_jacobian(self, body: int, p_world: np.ndarray) -> np.ndarray:
        """Translational Jacobian of a world point rigidly attached to a body."""
        n = self.chain.n_joints
        J = np.zeros((3, n))
        if body > 0:
            axes = self.joint_axes[:body]
            arms = p_world - self.joint_origins[:body]
            # cross product written out: np.cross dominates the control loop
            # profile through pure shape plumbing on inputs this small
            ax, ay, az = axes[:, 0], axes[:, 1], axes[:, 2]
            bx, by, bz = arms[:, 0], arms[:, 1], arms[:, 2]
            J[0, :body] = ay * bz - az * by
            J[1, :body] = az * bx - ax * bz
            J[2, :body] = ax * by - ay * bx
        return J

    def point_velocity(self, body: int, p_world: np.ndarray, qdot: np.ndarray) -> np.ndarray:
        return self.point_jacobian(body, p_world) @ qdot

    def _att(self, name: str) -> Attachment:
        try:
            return self.chain.attachments[name]
        except KeyError:
            raise KeyError(f"unknown attachment {name!r}") from None


# ====== Loading ======


def load_chain(config_text: str) -> KinematicChain:
    """Parse and validate a JSON chain description.

    Raises ValueError on structural problems (zero-norm axis, duplicate
    attachment names, bad limits or body indices).
    """
    try:
        raw = json.loads(config_text)
    except json.JSONDecodeError as e:
        raise ValueError(f"chain config does not parse: {e}") from e

    joints = []
    for i, j in enumerate(raw.get("joints", [])):
        axis = np.asarray(j["axis"], dtype=float)
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            raise ValueError(f"joint {i}: zero-norm axis")
        origin = j.get("origin", {})
        limits = j.get("limits")
        lower = upper = None
        if limits is not None:
            lower, upper = float(limits["lower"]), float(limits["upper"])
            if not lower < upper:
                raise ValueError(f"joint {i}: limits must satisfy lower < upper")
        joints.append(
            Joint(
                axis=axis / norm,
                origin_xyz=np.asarray(origin.get("xyz", [0, 0, 0]), dtype=float),
                origin_rpy=np.asarray(origin.get("rpy", [0, 0, 0]), dtype=float),
                lower=lower,
                upper=upper,
            )
        )
    if not joints:
        raise ValueError("chain has no joints")

    attachments: Dict[str, Attachment] = {}
    for a in raw.get("attachments", []):
        name = a["name"]
        if name in attachments:
            raise ValueError(f"duplicate attachment name {name!r}")
        body = int(a["body"])
        if not 0 <= body <= len(joints):
            raise ValueError(f"attachment {name!r}: body index {body} out of range")
        orientation = a.get("orientation", {})
        attachments[name] = Attachment(
            name=name,
            body=body,
            offset=np.asarray(a.get("offset", [0, 0, 0]), dtype=float),
            rpy=np.asarray(orientation.get("rpy", [0, 0, 0]), dtype=float),
        )

    base = raw.get("base", {})
    base_pose = Pose.from_rpy(base.get("xyz", [0, 0, 0]), base.get("rpy", [0, 0, 0]))
    return KinematicChain(raw.get("name", "chain"), joints, attachments, base_pose)


def load_chain_file(path) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as f:
        return load_chain(f.read())


def bundled_chain(name: str) -> KinematicChain:
    """Load one of the chain descriptions shipped with the package."""
    text = resources.files("vmc_handover").joinpath(f"data/chains/{name}.json").read_text()
    return load_chain(text)


# ====== Free-function API ======


def point_position(chain: KinematicChain, state: JointState, attachment: str) -> np.ndarray:
    """World position (m) of a named attachment point."""
    return chain.frames(state.q).attachment_point(attachment)


def point_jacobian(chain: KinematicChain, state: JointState, attachment: str) -> np.ndarray:
    """Translational Jacobian (3 x n, m/rad) of a named attachment point."""
    frames = chain.frames(state.q)
    att = frames._att(attachment)
    p = frames.body_point(att.body, att.offset)
    return frames.point_jacobian(att.body, p)
