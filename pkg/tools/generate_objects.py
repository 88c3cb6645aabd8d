"""Author the bundled object grasp fixtures.

Grasp points are generated with the virtual-link rule: the gripper's own
extended attachment triad is mapped into the object frame at a chosen grasp
pose, so a perfectly aligned gripper has exactly zero paired-point error.
Coordinates are declared fixture data, not measurements. Rerunning this
script is deterministic and idempotent.
"""

import json
from pathlib import Path

import numpy as np

from vmc_handover.kinematics import Pose, bundled_chain
from vmc_handover.mechanisms import grasp_points_at

ATTACHMENTS = ("left_finger", "right_finger", "wrist_back")
LINK_LENGTH = 0.45

# flange z-axis pointing along object -x: side approach
SIDE = np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def rz(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# name -> (gripper pose in object frame, object pose in hand frame, display)
# banana and spoon are grasped across the midline, which needs the wrist
# rolled a quarter turn relative to the box/cup face grasp
OBJECTS = {
    "cardboard_box": (
        Pose(position=np.array([0.21, 0.0, 0.0]), rotation=SIDE),
        Pose(position=np.array([0.16, 0.0, 0.0]), rotation=np.eye(3)),
        {"shape": "box", "size": [0.12, 0.06, 0.10]},
    ),
    "plastic_cup": (
        Pose(position=np.array([0.20, 0.0, 0.03]), rotation=SIDE),
        Pose(position=np.array([0.15, 0.0, 0.0]), rotation=np.eye(3)),
        {"shape": "cylinder", "radius": 0.035, "height": 0.11},
    ),
    "banana": (
        Pose(position=np.array([0.20, 0.0, 0.0]), rotation=SIDE @ rz(np.pi / 2)),
        Pose(position=np.array([0.15, 0.0, 0.0]), rotation=np.eye(3)),
        {"shape": "capsule", "radius": 0.018, "length": 0.19},
    ),
    "spoon": (
        Pose(position=np.array([0.19, 0.0, 0.0]), rotation=SIDE @ rz(np.pi / 2)),
        Pose(position=np.array([0.14, 0.0, 0.0]), rotation=np.eye(3)),
        {"shape": "capsule", "radius": 0.008, "length": 0.17},
    ),
}


def pose_dict(pose: Pose) -> dict:
    return {
        "position": [float(v) for v in pose.position],
        "rotation": [[float(v) for v in row] for row in pose.rotation],
    }


def main() -> None:
    arm = bundled_chain("arm7")
    out_dir = Path(__file__).resolve().parent.parent / "src" / "vmc_handover" / "data" / "objects"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (gripper_in_object, in_hand, display) in OBJECTS.items():
        points = grasp_points_at(arm, ATTACHMENTS, LINK_LENGTH, gripper_in_object)
        payload = {
            "name": name,
            "attachment_names": list(ATTACHMENTS),
            "link_length": LINK_LENGTH,
            "grasp_points": [[float(v) for v in p] for p in points],
            "gripper_in_object": pose_dict(gripper_in_object),
            "in_hand": pose_dict(in_hand),
            "display": display,
        }
        path = out_dir / f"{name}.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
