"""Maps the virtual interaction components to joint torques each tick.

Per tick: build the three gripper/target pairs, evaluate both saturated
springs and the variable damper on each pair, evaluate the repulsive region
against the two finger attachment points, then push every force through the
translational Jacobian of its application point and clamp the summed torque
to the joint limits. Pure function of its arguments; the only cross-tick
state (the cached offset direction) is owned by the caller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import List, Optional, Tuple

import numpy as np

from vmc_handover.kinematics import JointState, KinematicChain, Pose
from vmc_handover.mechanisms import (
    GraspSpec,
    RepulsiveRegionParams,
    SaturatedSpringParams,
    VariableDamperParams,
    damper_force,
    gripper_link_points,
    paired_points,
    repulsive_force,
    saturated_spring_force,
)

PROFILES = ("authoritative", "cooperative")


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    spring1: SaturatedSpringParams
    spring2: SaturatedSpringParams
    damper: VariableDamperParams
    repulsive: RepulsiveRegionParams
    alpha_default: float
    beta_placement: float
    palm_axis: np.ndarray
    profile: str
    torque_limits: np.ndarray
    attachment_names: Tuple[str, str, str]
    link_length: float
    gripper_base_attachment: str = "gripper_base"
    repulsive_regions: int = 1
    grasp: Optional[GraspSpec] = None
    # authoritative value of the snap spring, kept so profiles can round-trip
    spring2_configured: Optional[SaturatedSpringParams] = None

    def __post_init__(self):
        if self.alpha_default < 0:
            raise ValueError("alpha_default must be >= 0")
        if self.beta_placement <= 0:
            raise ValueError("beta_placement must be > 0")
        axis = np.asarray(self.palm_axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError("palm_axis must be a nonzero vector")
        object.__setattr__(self, "palm_axis", axis / n)
        lim = np.asarray(self.torque_limits, dtype=float).reshape(-1)
        if not np.all(np.isfinite(lim)) or np.any(lim <= 0):
            raise ValueError("torque_limits must be > 0 elementwise")
        object.__setattr__(self, "torque_limits", lim)
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        names = tuple(self.attachment_names)
        if len(names) != 3:
            raise ValueError("exactly three attachment names required")
        object.__setattr__(self, "attachment_names", names)
        if self.link_length <= 0:
            raise ValueError("link_length must be > 0")
        if self.repulsive_regions < 0:
            raise ValueError("repulsive_regions must be >= 0")
        if self.spring2_configured is None:
            object.__setattr__(self, "spring2_configured", self.spring2)


@dataclass(frozen=True)
class ForceRecord:
    """One virtual component's contribution this tick."""

    component: str
    body: int
    point: np.ndarray
    force: np.ndarray


@dataclass(frozen=True)
class ControllerOutput:
    tau: np.ndarray
    forces: List[ForceRecord]
    pair_distances: np.ndarray
    direction: np.ndarray          # offset direction used; feed back as prev_direction
    gripper_points: np.ndarray     # (3, 3) world
    target_points: np.ndarray      # (3, 3) world
    region_centers: np.ndarray     # (k, 3) world
    clamped_joints: Tuple[int, ...]


def load_controller_config(source=None) -> ControllerConfig:
    """Config from a JSON file path, a dict, or the bundled defaults."""
    if source is None:
        text = (
            resources.files("vmc_handover").joinpath("data/controller_default.json")
        ).read_text()
        raw = json.loads(text)
    elif isinstance(source, dict):
        raw = source
    else:
        with open(source) as f:
            raw = json.load(f)
    try:
        return ControllerConfig(
            spring1=SaturatedSpringParams(**raw["spring1"]),
            spring2=SaturatedSpringParams(**raw["spring2"]),
            damper=VariableDamperParams(**raw["damper"]),
            repulsive=RepulsiveRegionParams(**raw["repulsive"]),
            alpha_default=float(raw["alpha_default"]),
            beta_placement=float(raw["beta_placement"]),
            palm_axis=np.asarray(raw.get("palm_axis", [1.0, 0.0, 0.0]), dtype=float),
            profile=raw.get("profile", "authoritative"),
            torque_limits=np.asarray(raw["torque_limits"], dtype=float),
            attachment_names=tuple(raw["attachment_names"]),
            link_length=float(raw["link_length"]),
            gripper_base_attachment=raw.get("gripper_base_attachment", "gripper_base"),
            repulsive_regions=int(raw.get("repulsive_regions", 1)),
        )
    except KeyError as e:
        raise ValueError(f"controller config missing field {e}") from None


def bind_grasp(config: ControllerConfig, points: np.ndarray) -> ControllerConfig:
    """Attach object-local grasp points, completing the config for control."""
    grasp = GraspSpec(
        points=np.asarray(points, dtype=float),
        attachment_names=config.attachment_names,
        link_length=config.link_length,
    )
    return replace(config, grasp=grasp)


def apply_profile(config: ControllerConfig, profile: str) -> ControllerConfig:
    """Switch interaction profile; cooperative disables the snap spring."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    if profile == "cooperative":
        spring2 = SaturatedSpringParams(f_max=0.0, k=config.spring2_configured.k)
    else:
        spring2 = config.spring2_configured
    return replace(config, spring2=spring2, profile=profile)


def place_repulsive_regions(hand_pose: Pose, config: ControllerConfig) -> np.ndarray:
    """Region centers for the current hand pose: one sphere ahead of the palm."""
    if config.repulsive_regions == 0:
        return np.zeros((0, 3))
    center = hand_pose.position + config.beta_placement * (
        hand_pose.rotation @ config.palm_axis
    )
    return center[None, :]


def _guard(component: str, fn):
    try:
        out = fn()
    except ValueError as e:
        raise ValueError(f"{component}: {e}") from None
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite force from {component}")
    return out


def compute_torques(
    chain: KinematicChain,
    state: JointState,
    hand_pose: Pose,
    hand_vel: np.ndarray,
    alpha: float,
    config: ControllerConfig,
    object_pose: Optional[Pose] = None,
    prev_direction: Optional[np.ndarray] = None,
    frames=None,
) -> ControllerOutput:
    """One control tick: all virtual forces mapped through their Jacobians.

    object_pose locates the grasp target points; it defaults to the hand pose
    for objects whose frame rides directly on the palm. The repulsive region
    follows hand_pose regardless.
    """
    if config.grasp is None:
        raise ValueError("config has no grasp bound; call bind_grasp first")
    n = chain.n_joints
    if state.q.shape != (n,):
        raise ValueError("joint state does not match chain")
    if config.torque_limits.shape != (n,):
        raise ValueError("torque_limits length does not match chain")
    if object_pose is None:
        object_pose = hand_pose

    if frames is None:
        frames = chain.frames(state.q)
    base_pos = frames.attachment_point(config.gripper_base_attachment)
    pair_jacobians: List[np.ndarray] = []
    pairs, direction = paired_points(
        chain,
        state,
        object_pose,
        config.grasp,
        alpha,
        base_pos,
        hand_vel=hand_vel,
        prev_direction=prev_direction,
        frames=frames,
        out_jacobians=pair_jacobians,
    )
    pair_body, _ = gripper_link_points(chain, config.grasp)

    tau = np.zeros(n)
    records: List[ForceRecord] = []
    for i, pr in enumerate(pairs):
        f_s1 = _guard(f"spring1[{i}]", lambda: saturated_spring_force(config.spring1, pr.p))
        f_s2 = _guard(f"spring2[{i}]", lambda: saturated_spring_force(config.spring2, pr.p))
        f_d = _guard(f"damper[{i}]", lambda: damper_force(config.damper, pr.p, pr.pdot))
        records.append(ForceRecord(f"spring1[{i}]", pair_body, pr.gripper_point, f_s1))
        records.append(ForceRecord(f"spring2[{i}]", pair_body, pr.gripper_point, f_s2))
        records.append(ForceRecord(f"damper[{i}]", pair_body, pr.gripper_point, f_d))
        tau += pair_jacobians[i].T @ (f_s1 + f_s2 + f_d)

    centers = place_repulsive_regions(hand_pose, config)
    cutoff = 5.0 * config.repulsive.sigma
    for name in config.attachment_names[:2]:
        att = chain.attachments[name]
        pt = frames.attachment_point(name)
        total = None
        for j, c in enumerate(centers):
            p_r = pt - c
            if np.linalg.norm(p_r) > cutoff:
                continue
            comp = f"repulsive[{name}:{j}]"
            force = _guard(comp, lambda: repulsive_force(config.repulsive, p_r))
            records.append(ForceRecord(comp, att.body, pt, force))
            total = force if total is None else total + force
        if total is not None:
            tau += frames.point_jacobian(att.body, pt).T @ total

    over = np.abs(tau) > config.torque_limits
    clamped = tuple(np.nonzero(over)[0].tolist())
    tau = np.clip(tau, -config.torque_limits, config.torque_limits)

    return ControllerOutput(
        tau=tau,
        forces=records,
        pair_distances=np.array([np.linalg.norm(pr.p) for pr in pairs]),
        direction=direction,
        gripper_points=np.array([pr.gripper_point for pr in pairs]),
        target_points=np.array([pr.target_point for pr in pairs]),
        region_centers=centers,
        clamped_joints=clamped,
    )
