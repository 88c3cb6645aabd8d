"""Torque-driven arm simulation and the closed-loop handover session.

The arm is modeled as gravity-compensated, per-joint damped double
integrators stepped with semi-implicit Euler at a fixed 1 kHz rate shared
with the controller. The Session object owns one closed loop: filter the raw
hand pose, place the repulsive region, form the paired points at the current
offset, map forces to torques, advance the gripper state machine, then step
the plant, logging every tick into preallocated columnar arrays.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from vmc_handover.controller import ControllerConfig, compute_torques
from vmc_handover.gripper import (
    CMD_CLOSE,
    CMD_NONE,
    CMD_OPEN,
    FsmObservation,
    FsmParams,
    GripperFsm,
    Phase,
    new_fsm,
    step_fsm,
)
from vmc_handover.hand_signal import (
    _raw_quat,
    default_kalman,
    default_lowpass,
    kalman_update,
    lowpass_update,
)
from vmc_handover.kinematics import JointState, KinematicChain, Pose

PHASE_NAMES = [p.value for p in Phase]
_PHASE_INDEX = {p: i for i, p in enumerate(Phase)}
COMMAND_NAMES = [CMD_NONE, CMD_CLOSE, CMD_OPEN]
_COMMAND_INDEX = {c: i for i, c in enumerate(COMMAND_NAMES)}

FINGER_CLOSE_TIME = 0.3  # s, kinematic snap duration after a close command


@dataclass(frozen=True)
class PlantParams:
    inertia: np.ndarray         # kg m^2 per joint
    joint_friction: np.ndarray  # N m s/rad per joint
    dt: float                   # s
    joint_limits: Tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        m = np.asarray(self.inertia, dtype=float).reshape(-1)
        b = np.asarray(self.joint_friction, dtype=float).reshape(-1)
        object.__setattr__(self, "inertia", m)
        object.__setattr__(self, "joint_friction", b)
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ValueError("inertia must be > 0 elementwise")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ValueError("joint_friction must be >= 0 elementwise")
        if not (0.0 < self.dt <= 0.01):
            raise ValueError("dt must be in (0, 0.01]")
        lo, hi = self.joint_limits
        object.__setattr__(
            self,
            "joint_limits",
            (np.asarray(lo, dtype=float).copy(), np.asarray(hi, dtype=float).copy()),
        )


def default_plant_params(
    chain: KinematicChain, inertia: float = 1.0, friction: float = 2.0, dt: float = 0.001
) -> PlantParams:
    n = chain.n_joints
    return PlantParams(
        inertia=np.full(n, inertia),
        joint_friction=np.full(n, friction),
        dt=dt,
        joint_limits=chain.joint_limits(),
    )


@dataclass(frozen=True)
class SimState:
    t: float
    joints: JointState
    hand_pose: Pose
    object_pose: Pose
    fingers_closed: bool

    @staticmethod
    def initial(joints: JointState, hand_pose: Pose, in_hand: Pose) -> "SimState":
        return SimState(
            t=0.0,
            joints=joints,
            hand_pose=hand_pose,
            object_pose=hand_pose.compose(in_hand),
            fingers_closed=False,
        )


def step(state: SimState, tau: np.ndarray, params: PlantParams) -> SimState:
    """Semi-implicit Euler step of the joints; hand and fingers are carried.

    A joint pushed onto its limit is clamped there with zero velocity.
    """
    tau = np.asarray(tau, dtype=float).reshape(-1)
    q, qdot = state.joints.q, state.joints.qdot
    if tau.shape != q.shape:
        raise ValueError("torque length does not match joint count")
    bad = ~np.isfinite(tau)
    if np.any(bad):
        raise ValueError(f"non-finite state at joint {int(np.nonzero(bad)[0][0])}")
    qddot = (tau - params.joint_friction * qdot) / params.inertia
    qdot = qdot + qddot * params.dt
    q = q + qdot * params.dt
    lo, hi = params.joint_limits
    hit = (q < lo) | (q > hi)
    if np.any(hit):
        q = np.clip(q, lo, hi)
        qdot = np.where(hit, 0.0, qdot)
    bad = ~(np.isfinite(q) & np.isfinite(qdot))
    if np.any(bad):
        raise ValueError(f"non-finite state at joint {int(np.nonzero(bad)[0][0])}")
    return SimState(
        t=state.t + params.dt,
        joints=JointState(q=q, qdot=qdot),
        hand_pose=state.hand_pose,
        object_pose=state.object_pose,
        fingers_closed=state.fingers_closed,
    )


@dataclass
class SessionEvents:
    """First-occurrence timestamps of the session's milestones."""

    final_approach_t: Optional[float] = None
    close_command_t: Optional[float] = None
    done_t: Optional[float] = None


def config_fingerprint(
    chain: KinematicChain,
    config: ControllerConfig,
    fsm_params: FsmParams,
    plant_params: PlantParams,
    in_hand: Pose,
    extra: Optional[dict] = None,
) -> str:
    """sha256 over a canonical JSON rendering of every run-defining setting."""
    lo, hi = plant_params.joint_limits
    doc = {
        "chain": {
            "name": chain.name,
            "joints": [
                {
                    "axis": j.axis.tolist(),
                    "xyz": j.origin_xyz.tolist(),
                    "rpy": j.origin_rpy.tolist(),
                    "limits": [j.lower, j.upper],
                }
                for j in chain.joints
            ],
            "attachments": {
                name: {"body": a.body, "offset": a.offset.tolist(), "rpy": a.rpy.tolist()}
                for name, a in sorted(chain.attachments.items())
            },
            "base": [chain.base_pose.position.tolist(), chain.base_pose.as_quat().tolist()],
        },
        "controller": {
            "spring1": [config.spring1.f_max, config.spring1.k],
            "spring2": [config.spring2.f_max, config.spring2.k],
            "spring2_configured": [
                config.spring2_configured.f_max,
                config.spring2_configured.k,
            ],
            "damper": [config.damper.c1, config.damper.c2, config.damper.beta_d],
            "repulsive": [config.repulsive.f_max, config.repulsive.sigma],
            "repulsive_regions": config.repulsive_regions,
            "alpha_default": config.alpha_default,
            "beta_placement": config.beta_placement,
            "palm_axis": config.palm_axis.tolist(),
            "profile": config.profile,
            "torque_limits": config.torque_limits.tolist(),
            "attachment_names": list(config.attachment_names),
            "link_length": config.link_length,
            "gripper_base": config.gripper_base_attachment,
            "grasp_points": None if config.grasp is None else config.grasp.points.tolist(),
        },
        "fsm": {
            "d_activate": fsm_params.d_activate,
            "d_grasp": fsm_params.d_grasp,
            "t_dwell": fsm_params.t_dwell,
            "v_low": fsm_params.v_low,
            "ramp_rate": fsm_params.ramp_rate,
            "alpha_default": fsm_params.alpha_default,
        },
        "plant": {
            "inertia": plant_params.inertia.tolist(),
            "friction": plant_params.joint_friction.tolist(),
            "dt": plant_params.dt,
            "limits": [lo.tolist(), hi.tolist()],
        },
        "in_hand": [in_hand.position.tolist(), in_hand.as_quat().tolist()],
        "extra": extra or {},
    }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


class TrajectoryLog:
    """Columnar per-tick record of one session.

    Arrays are indexed by tick. Points arrays are (T, k, 3); forces are
    (T, C, 3) with component_names giving the fixed column order (absent
    components, e.g. a skipped repulsive region, hold zeros). CSV and
    newline-delimited JSON renderings are deterministic: identical runs
    serialize byte-identically.
    """

    SCALARS = ("t", "alpha", "hand_speed")

    def __init__(self, n_joints: int, component_names: List[str], regions: int, config_hash: str):
        self.n_joints = n_joints
        self.component_names = list(component_names)
        self.regions = regions
        self.config_hash = config_hash
        self.phase_names = PHASE_NAMES
        self.command_names = COMMAND_NAMES
        self._cap = 1024
        self._len = 0
        self._alloc(self._cap)

    def _alloc(self, cap):
        n, C, R = self.n_joints, len(self.component_names), self.regions
        self.t = np.zeros(cap)
        self.q = np.zeros((cap, n))
        self.qdot = np.zeros((cap, n))
        self.tau = np.zeros((cap, n))
        self.alpha = np.zeros(cap)
        self.phase = np.zeros(cap, dtype=np.uint8)
        self.command = np.zeros(cap, dtype=np.uint8)
        self.fingers_closed = np.zeros(cap, dtype=bool)
        self.clamped = np.zeros(cap, dtype=bool)
        self.raw_hand_pos = np.zeros((cap, 3))
        self.raw_hand_quat = np.zeros((cap, 4))
        self.hand_pos = np.zeros((cap, 3))
        self.hand_quat = np.zeros((cap, 4))
        self.hand_vel = np.zeros((cap, 3))
        self.hand_speed = np.zeros(cap)
        self.object_pos = np.zeros((cap, 3))
        self.object_quat = np.zeros((cap, 4))
        self.gripper_points = np.zeros((cap, 3, 3))
        self.target_points = np.zeros((cap, 3, 3))
        self.finger_points = np.zeros((cap, 2, 3))
        self.pair_distances = np.zeros((cap, 3))
        self.forces = np.zeros((cap, C, 3))
        self.region_centers = np.zeros((cap, R, 3))

    _ARRAYS = (
        "t q qdot tau alpha phase command fingers_closed clamped raw_hand_pos "
        "raw_hand_quat hand_pos hand_quat hand_vel hand_speed object_pos object_quat "
        "gripper_points target_points finger_points pair_distances forces region_centers"
    ).split()

    def _grow(self):
        for name in self._ARRAYS:
            arr = getattr(self, name)
            pad = np.zeros((arr.shape[0],) + arr.shape[1:], dtype=arr.dtype)
            setattr(self, name, np.concatenate([arr, pad], axis=0))
        self._cap *= 2

    def append(self, **kw):
        if self._len == self._cap:
            self._grow()
        i = self._len
        for name, value in kw.items():
            getattr(self, name)[i] = value
        self._len += 1

    def trim(self):
        for name in self._ARRAYS:
            setattr(self, name, getattr(self, name)[: self._len])
        self._cap = self._len
        return self

    def __len__(self):
        return self._len

    # ====== serialization ======

    def _columns(self):
        n = self.n_joints
        cols: List[Tuple[str, Callable[[int], str]]] = []

        def f(v):
            return repr(float(v))

        cols.append(("t", lambda i: f(self.t[i])))
        for k in range(n):
            cols.append((f"q{k}", lambda i, k=k: f(self.q[i, k])))
        for k in range(n):
            cols.append((f"qd{k}", lambda i, k=k: f(self.qdot[i, k])))
        for k in range(n):
            cols.append((f"tau{k}", lambda i, k=k: f(self.tau[i, k])))
        cols.append(("alpha", lambda i: f(self.alpha[i])))
        cols.append(("phase", lambda i: self.phase_names[self.phase[i]]))
        cols.append(("command", lambda i: self.command_names[self.command[i]]))
        cols.append(("fingers_closed", lambda i: str(int(self.fingers_closed[i]))))
        cols.append(("clamped", lambda i: str(int(self.clamped[i]))))
        for label, arr in (
            ("raw_hand", self.raw_hand_pos),
            ("hand", self.hand_pos),
            ("hand_vel", self.hand_vel),
            ("object", self.object_pos),
        ):
            for k, ax in enumerate("xyz"):
                cols.append((f"{label}_{ax}", lambda i, a=arr, k=k: f(a[i, k])))
        for label, arr in (
            ("raw_hand_q", self.raw_hand_quat),
            ("hand_q", self.hand_quat),
            ("object_q", self.object_quat),
        ):
            for k, ax in enumerate("xyzw"):
                cols.append((f"{label}{ax}", lambda i, a=arr, k=k: f(a[i, k])))
        cols.append(("hand_speed", lambda i: f(self.hand_speed[i])))
        for j in range(3):
            for k, ax in enumerate("xyz"):
                cols.append((f"gp{j}_{ax}", lambda i, j=j, k=k: f(self.gripper_points[i, j, k])))
        for j in range(3):
            for k, ax in enumerate("xyz"):
                cols.append((f"tp{j}_{ax}", lambda i, j=j, k=k: f(self.target_points[i, j, k])))
        for j in range(2):
            for k, ax in enumerate("xyz"):
                cols.append((f"fp{j}_{ax}", lambda i, j=j, k=k: f(self.finger_points[i, j, k])))
        for j in range(3):
            cols.append((f"pd{j}", lambda i, j=j: f(self.pair_distances[i, j])))
        for c, name in enumerate(self.component_names):
            for k, ax in enumerate("xyz"):
                cols.append((f"F[{name}]_{ax}", lambda i, c=c, k=k: f(self.forces[i, c, k])))
        for r in range(self.regions):
            for k, ax in enumerate("xyz"):
                cols.append((f"region{r}_{ax}", lambda i, r=r, k=k: f(self.region_centers[i, r, k])))
        return cols

    def to_csv(self, path) -> None:
        cols = self._columns()
        with open(path, "w") as fh:
            fh.write("# config_hash=" + self.config_hash + "\n")
            fh.write(",".join(name for name, _ in cols) + "\n")
            for i in range(self._len):
                fh.write(",".join(render(i) for _, render in cols) + "\n")

    def to_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"config_hash": self.config_hash}) + "\n")
            for i in range(self._len):
                rec = {
                    "t": self.t[i],
                    "q": self.q[i].tolist(),
                    "qdot": self.qdot[i].tolist(),
                    "tau": self.tau[i].tolist(),
                    "alpha": self.alpha[i],
                    "phase": self.phase_names[self.phase[i]],
                    "command": self.command_names[self.command[i]],
                    "fingers_closed": bool(self.fingers_closed[i]),
                    "clamped": bool(self.clamped[i]),
                    "raw_hand": self.raw_hand_pos[i].tolist() + self.raw_hand_quat[i].tolist(),
                    "hand": self.hand_pos[i].tolist() + self.hand_quat[i].tolist(),
                    "hand_vel": self.hand_vel[i].tolist(),
                    "hand_speed": self.hand_speed[i],
                    "object": self.object_pos[i].tolist() + self.object_quat[i].tolist(),
                    "gripper_points": self.gripper_points[i].tolist(),
                    "target_points": self.target_points[i].tolist(),
                    "finger_points": self.finger_points[i].tolist(),
                    "pair_distances": self.pair_distances[i].tolist(),
                    "forces": {
                        name: self.forces[i, c].tolist()
                        for c, name in enumerate(self.component_names)
                    },
                    "region_centers": self.region_centers[i].tolist(),
                }
                fh.write(json.dumps(rec) + "\n")


class Session:
    """One closed-loop handover run, advanced tick by tick.

    The caller supplies the raw hand pose each tick (from a script or a live
    stream); everything downstream of that input is deterministic.
    """

    def __init__(
        self,
        chain: KinematicChain,
        config: ControllerConfig,
        fsm_params: FsmParams,
        plant_params: PlantParams,
        in_hand: Pose,
        start: JointState,
        initial_hand: Pose,
        lowpass_cutoff: float = 8.0,
        extra_fingerprint: Optional[dict] = None,
    ):
        if config.grasp is None:
            raise ValueError("controller config has no grasp bound")
        self.chain = chain
        self.config = config
        self.fsm_params = fsm_params
        self.plant_params = plant_params
        self.in_hand = in_hand
        self.state = SimState.initial(start, initial_hand, in_hand)
        self.fsm: GripperFsm = new_fsm(fsm_params)
        self.lowpass = default_lowpass(initial_hand, cutoff=lowpass_cutoff)
        self.kalman = default_kalman(initial_hand.position)
        self.events = SessionEvents()
        self._direction: Optional[np.ndarray] = None
        self._close_at: Optional[float] = None
        self._tick_index = 0
        self._obj_quat_memo: tuple = (None, None)
        names = (
            [f"spring1[{i}]" for i in range(3)]
            + [f"spring2[{i}]" for i in range(3)]
            + [f"damper[{i}]" for i in range(3)]
            + [
                f"repulsive[{fname}:{j}]"
                for fname in config.attachment_names[:2]
                for j in range(config.repulsive_regions)
            ]
        )
        self._component_index = {name: c for c, name in enumerate(names)}
        self.log = TrajectoryLog(
            n_joints=chain.n_joints,
            component_names=names,
            regions=config.repulsive_regions,
            config_hash=config_fingerprint(
                chain, config, fsm_params, plant_params, in_hand, extra_fingerprint
            ),
        )

    def set_profile(self, config: ControllerConfig) -> None:
        """Swap the controller config between ticks (profile switches)."""
        self.config = config

    @property
    def t(self) -> float:
        return self.state.t

    def tick(self, raw_hand: Pose) -> None:
        dt = self.plant_params.dt
        t = self.state.t
        q_pre = self.state.joints.q
        qdot_pre = self.state.joints.qdot
        try:
            self.lowpass, filt = lowpass_update(self.lowpass, raw_hand, dt)
            self.kalman, vel = kalman_update(self.kalman, filt.position, dt)
            speed = float(np.linalg.norm(vel))

            frames = self.chain.frames(q_pre)
            alpha_used = self.fsm.alpha
            out = compute_torques(
                self.chain,
                self.state.joints,
                filt,
                vel,
                alpha_used,
                self.config,
                object_pose=filt.compose(self.in_hand),
                prev_direction=self._direction,
                frames=frames,
            )
            self._direction = out.direction

            obs = FsmObservation(
                pair_distances=out.pair_distances,
                hand_speed=speed,
                fingers_closed=self.state.fingers_closed,
            )
            prev_phase = self.fsm.phase
            self.fsm, cmd = step_fsm(self.fsm, obs, dt)
            if cmd == CMD_CLOSE:
                self._close_at = t + FINGER_CLOSE_TIME
                if self.events.close_command_t is None:
                    self.events.close_command_t = t
            elif cmd == CMD_OPEN:
                self._close_at = None
            if (
                prev_phase == Phase.TRACKING
                and self.fsm.phase == Phase.FINAL_APPROACH
                and self.events.final_approach_t is None
            ):
                self.events.final_approach_t = t

            fingers = self.state.fingers_closed
            if cmd == CMD_OPEN:
                fingers = False
            elif self._close_at is not None and t + dt >= self._close_at - 1e-12:
                fingers = True

            integrated = step(self.state, out.tau, self.plant_params)
            true_obj = raw_hand.compose(self.in_hand)
            self.state = SimState(
                t=integrated.t,
                joints=integrated.joints,
                hand_pose=raw_hand,
                object_pose=true_obj,
                fingers_closed=fingers,
            )
            if self.fsm.phase == Phase.DONE and self.events.done_t is None:
                self.events.done_t = self.state.t

            forces = np.zeros((len(self._component_index), 3))
            for rec in out.forces:
                c = self._component_index.get(rec.component)
                if c is not None:
                    forces[c] = rec.force
            # filtered quat is carried by the smoother; raw and object quats
            # change only when the raw rotation object does (holds are static)
            raw_quat = _raw_quat(raw_hand)
            filt_quat = self.lowpass.last_quat
            if filt_quat is None:
                filt_quat = filt.as_quat()
            memo_rot, obj_quat = self._obj_quat_memo
            if memo_rot is not raw_hand.rotation:
                obj_quat = true_obj.as_quat()
                self._obj_quat_memo = (raw_hand.rotation, obj_quat)
            raw_pos = raw_hand.position
            filt_pos = filt.position
            obj_pos = true_obj.position
            finger_pts = np.array(
                [frames.attachment_point(n) for n in self.config.attachment_names[:2]]
            )
            regions = out.region_centers
            if regions.shape[0] < self.config.repulsive_regions:
                regions = np.zeros((self.config.repulsive_regions, 3))
            self.log.append(
                t=t,
                q=q_pre,
                qdot=qdot_pre,
                tau=out.tau,
                alpha=alpha_used,
                phase=_PHASE_INDEX[self.fsm.phase],
                command=_COMMAND_INDEX[cmd],
                fingers_closed=fingers,
                clamped=len(out.clamped_joints) > 0,
                raw_hand_pos=raw_pos,
                raw_hand_quat=raw_quat,
                hand_pos=filt_pos,
                hand_quat=filt_quat,
                hand_vel=vel,
                hand_speed=speed,
                object_pos=obj_pos,
                object_quat=obj_quat,
                gripper_points=out.gripper_points,
                target_points=out.target_points,
                finger_points=finger_pts,
                pair_distances=out.pair_distances,
                forces=forces,
                region_centers=regions,
            )
            self._tick_index += 1
        except ValueError as e:
            raise RuntimeError(f"tick {self._tick_index} (t={t:.3f}s): {e}") from e

    @property
    def phase(self) -> Phase:
        return self.fsm.phase


def run_session(
    chain: KinematicChain,
    config: ControllerConfig,
    fsm_params: FsmParams,
    hand_source: Callable[[float, SessionEvents], Pose],
    duration: float,
    plant_params: PlantParams,
    in_hand: Pose,
    start: JointState,
    until_done: bool = False,
    lowpass_cutoff: float = 8.0,
    extra_fingerprint: Optional[dict] = None,
) -> TrajectoryLog:
    """Run one scripted closed-loop session and return its trimmed log.

    hand_source is called with the current sim time and the session's event
    record (so scripts can key motion off e.g. the first final-approach
    activation). Set until_done to stop at the tick the FSM reports DONE.
    """
    if duration <= 0:
        raise ValueError("duration must be > 0")
    session = Session(
        chain,
        config,
        fsm_params,
        plant_params,
        in_hand,
        start,
        initial_hand=hand_source(0.0, SessionEvents()),
        lowpass_cutoff=lowpass_cutoff,
        extra_fingerprint=extra_fingerprint,
    )
    n_ticks = int(round(duration / plant_params.dt))
    for i in range(n_ticks):
        try:
            raw = hand_source(session.state.t, session.events)
        except ValueError as e:
            raise RuntimeError(f"tick {i} (t={session.state.t:.3f}s): {e}") from e
        session.tick(raw)
        if until_done and session.fsm.phase == Phase.DONE:
            break
    return session.log.trim()
