"""Gripper control state machine.

Watches the paired-point distances and the hand speed, ramps the approach
offset alpha to zero once the hand settles near the grasp pose, orders the
fingers closed after the distances have stayed tight for a full dwell
period, and aborts back to tracking the moment the hand moves away. Pure
transition function: step_fsm returns a new state plus a finger command.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

CMD_NONE = "none"
CMD_CLOSE = "close_fingers"
CMD_OPEN = "open_fingers"


class Phase(enum.Enum):
    TRACKING = "tracking"
    FINAL_APPROACH = "final_approach"
    GRASPING = "grasping"
    DONE = "done"


@dataclass(frozen=True)
class FsmParams:
    d_activate: float = 0.10  # m, all pair distances below this to engage
    d_grasp: float = 0.05     # m, dwell band
    t_dwell: float = 1.0      # s, continuous time inside the band before closing
    v_low: float = 0.03       # m/s, hand considered settled below this
    ramp_rate: float = 0.2    # m/s, linear alpha rundown
    alpha_default: float = 0.10  # m

    def __post_init__(self):
        if not (0 < self.d_grasp < self.d_activate):
            raise ValueError("need 0 < d_grasp < d_activate")
        if self.t_dwell <= 0 or self.v_low <= 0 or self.ramp_rate <= 0:
            raise ValueError("t_dwell, v_low, ramp_rate must be > 0")
        if self.alpha_default < 0:
            raise ValueError("alpha_default must be >= 0")


@dataclass(frozen=True)
class GripperFsm:
    phase: Phase
    alpha: float
    dwell_clock: float
    params: FsmParams

    def __post_init__(self):
        if not (0.0 <= self.alpha <= self.params.alpha_default):
            raise ValueError("alpha out of [0, alpha_default]")
        if self.dwell_clock < 0:
            raise ValueError("dwell_clock must be >= 0")


@dataclass(frozen=True)
class FsmObservation:
    pair_distances: np.ndarray
    hand_speed: float
    fingers_closed: bool

    def __post_init__(self):
        d = np.asarray(self.pair_distances, dtype=float).reshape(-1)
        object.__setattr__(self, "pair_distances", d)
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("pair distances must be finite and >= 0")
        if not np.isfinite(self.hand_speed) or self.hand_speed < 0:
            raise ValueError("hand_speed must be finite and >= 0")


def new_fsm(params: FsmParams = FsmParams()) -> GripperFsm:
    return GripperFsm(
        phase=Phase.TRACKING, alpha=params.alpha_default, dwell_clock=0.0, params=params
    )


def step_fsm(fsm: GripperFsm, obs: FsmObservation, dt: float) -> tuple:
    """Advance one tick; returns (new fsm, finger command).

    Order of business: DONE absorbs; a hand-speed or distance violation
    resets any active approach (offset restored, fingers reopened); a
    settled hand inside the activation band starts the approach, which
    ramps alpha down and runs the dwell clock in the same tick.
    """
    if not (dt > 0):
        raise ValueError("dt must be > 0")
    p = fsm.params
    if fsm.phase == Phase.DONE:
        return fsm, CMD_NONE

    settled = obs.hand_speed < p.v_low and bool(np.all(obs.pair_distances < p.d_activate))
    if not settled:
        if fsm.phase in (Phase.FINAL_APPROACH, Phase.GRASPING):
            return (
                replace(fsm, phase=Phase.TRACKING, alpha=p.alpha_default, dwell_clock=0.0),
                CMD_OPEN,
            )
        return replace(fsm, dwell_clock=0.0), CMD_NONE

    phase = fsm.phase
    alpha = fsm.alpha
    dwell = fsm.dwell_clock
    if phase == Phase.TRACKING:
        phase = Phase.FINAL_APPROACH
        dwell = 0.0
        # fall through: ramp and dwell start on the activation tick

    if phase == Phase.FINAL_APPROACH:
        alpha = max(0.0, alpha - p.ramp_rate * dt)
        dwell = dwell + dt if bool(np.all(obs.pair_distances < p.d_grasp)) else 0.0
        if dwell >= p.t_dwell:
            return (
                replace(fsm, phase=Phase.GRASPING, alpha=alpha, dwell_clock=dwell),
                CMD_CLOSE,
            )
        return replace(fsm, phase=phase, alpha=alpha, dwell_clock=dwell), CMD_NONE

    # GRASPING: fingers are on their way; report done once they arrive
    if obs.fingers_closed:
        return replace(fsm, phase=Phase.DONE), CMD_NONE
    return fsm, CMD_NONE
