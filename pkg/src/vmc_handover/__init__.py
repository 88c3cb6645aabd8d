"""Virtual-model-control interaction layer for human-to-robot object handover.

The package wires virtual springs, dampers, and repulsive regions between a
simulated torque-driven arm and a human-held object, plus the gripper state
machine, hand-signal filtering, scenario harness, metrics, and a live
steering service.
"""

from vmc_handover.kinematics import (
    JointState,
    KinematicChain,
    Pose,
    bundled_chain,
    load_chain,
    load_chain_file,
    point_jacobian,
    point_position,
)

__all__ = [
    "JointState",
    "KinematicChain",
    "Pose",
    "bundled_chain",
    "load_chain",
    "load_chain_file",
    "point_jacobian",
    "point_position",
]

__version__ = "0.1.0"
