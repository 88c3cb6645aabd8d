"""Command-line front end and live-session server.

Four subcommands share one configuration bundle (chain, controller config,
gripper params, plant params, interaction profile):

* ``run``     executes a single scenario file and writes its log + metrics;
* ``batch``   generates and executes one randomized experiment, writing
  per-run outcomes and an aggregate summary CSV;
* ``metrics`` recomputes the summary table from previously written logs;
* ``serve``   exposes a live simulation over a WebSocket so a human can
  steer the hand pose, switch profiles, and watch the arm react.

Every long option can be preset through an environment variable named
``VMC_HANDOVER_<OPTION>`` (dashes become underscores); explicit flags win.
Exit codes: 0 success, 2 task failure (the run finished but the grasp did
not), 3 system error, 4 invalid configuration (the message names the
offending option).

Wire protocol (see docs/wire-protocol.md for the field-level schema): JSON
text frames, one message per frame, all carrying ``v``, ``kind``,
``session_id``, and a ``seq`` that increases strictly per direction (for
state updates the sequence is shared by all clients, so a gap means frames
were dropped for that client; the cumulative drop count rides along).

Concurrency model of the server: a single simulation thread owns all
mutable state and applies queued commands only between control ticks, so
no state update ever shows a half-applied command. Egress uses one
latest-frame slot per client; a slow client overwrites its own stale
frames and never blocks the loop.
"""

from __future__ import annotations

import argparse
import asyncio
import concurrent.futures
import csv
import dataclasses
import itertools
import json
import os
import queue
import re
import secrets
import sys
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, Response

from vmc_handover.controller import (
    PROFILES,
    ControllerConfig,
    apply_profile,
    bind_grasp,
    compute_torques,
    load_controller_config,
)
from vmc_handover.gripper import CMD_NONE, FsmParams, Phase
from vmc_handover.kinematics import JointState, KinematicChain, Pose, load_chain
from vmc_handover.mechanisms import grasp_points_at
from vmc_handover.metrics import CSV_HEADER, METRIC_NAMES, aggregate, compute_metrics, table_to_csv
from vmc_handover.plant import PlantParams, Session, default_plant_params
from vmc_handover.scenarios import (
    EXPERIMENT_START_Q,
    HAND_NOMINAL,
    OBJECT_NAMES,
    ScenarioScript,
    bundled_object,
    execute,
    execute_batch,
    generate_experiment1,
    generate_experiment2,
    load_script,
)

WIRE_VERSION = 1
ENV_PREFIX = "VMC_HANDOVER_"

EXIT_OK = 0
EXIT_TASK_FAILURE = 2
EXIT_SYSTEM = 3
EXIT_CONFIG = 4

CLIENT_KINDS = ("hand_pose_cmd", "profile_cmd", "lifecycle_cmd")
SERVER_KINDS = ("state_update", "ack", "error")
LIFECYCLE_ACTIONS = ("start", "pause", "reset")

RUNS_CSV_HEADER = (
    "script_id,object,success,failure_reason,below_hand_start,"
    "t_a,d_i,L_r,L_o,e_d,theta_i,theta_r,theta_o,e_theta"
)


class ConfigError(ValueError):
    """Invalid configuration; carries the offending option for exit-4 text."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class WireError(ValueError):
    """Malformed client message; carries a short machine-readable code."""

    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code


# ====== option resolution ======


def _get(args, dest: str, fallback: Optional[str] = None) -> Optional[str]:
    """Option value with flag > environment > built-in default precedence."""
    value = getattr(args, dest, None)
    if value is not None:
        return str(value)
    env = os.environ.get(ENV_PREFIX + dest.upper())
    if env is not None:
        return env
    return fallback


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected an integer, got {value!r}") from None


def _as_float(key: str, value: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {value!r}") from None
    if not np.isfinite(out):
        raise ConfigError(key, f"expected a finite number, got {value!r}")
    return out


def _read_json(key: str, path: str) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(key, str(e)) from None
    except json.JSONDecodeError as e:
        raise ConfigError(key, f"{path}: does not parse as JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(key, f"{path}: expected a JSON object")
    return raw


# ====== configuration bundle ======


@dataclass(frozen=True)
class SessionConfigBundle:
    """Everything a session needs besides the scenario itself.

    chain_text keeps the raw chain document so the server can hand the
    identical file to rendering clients.
    """

    chain: KinematicChain
    chain_text: str
    config: ControllerConfig      # profile already applied; grasp still unbound
    fsm_params: FsmParams
    plant_params: PlantParams
    profile: str
    stream_hz: float

    def __post_init__(self):
        if not (1.0 <= self.stream_hz <= 120.0):
            raise ValueError("stream rate must be in [1, 120] Hz")


def load_bundle(args=None) -> SessionConfigBundle:
    """Resolve and validate the shared configuration options.

    Raises ConfigError naming the offending option on any problem; plain
    defaults (bundled arm, bundled controller config, authoritative
    profile, 60 Hz stream) apply when nothing is given.
    """
    if args is None:
        args = argparse.Namespace()

    chain_ref = _get(args, "chain", "arm7")
    if os.path.exists(chain_ref):
        try:
            chain_text = Path(chain_ref).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError("--chain", str(e)) from None
    else:
        try:
            chain_text = (
                resources.files("vmc_handover").joinpath(f"data/chains/{chain_ref}.json").read_text()
            )
        except (OSError, FileNotFoundError):
            raise ConfigError(
                "--chain", f"no such file or bundled chain: {chain_ref!r}"
            ) from None
    try:
        chain = load_chain(chain_text)
    except ValueError as e:
        raise ConfigError("--chain", str(e)) from None

    controller_path = _get(args, "controller_config")
    try:
        config = load_controller_config(controller_path)
    except OSError as e:
        raise ConfigError("--controller-config", str(e)) from None
    except (ValueError, json.JSONDecodeError) as e:
        raise ConfigError("--controller-config", str(e)) from None
    if config.torque_limits.shape[0] != chain.n_joints:
        raise ConfigError(
            "--controller-config",
            f"torque_limits has {config.torque_limits.shape[0]} entries, "
            f"chain has {chain.n_joints} joints",
        )
    probe = chain.frames(np.zeros(chain.n_joints))
    for name in (*config.attachment_names, config.gripper_base_attachment):
        try:
            probe.attachment_point(name)
        except (KeyError, ValueError) as e:
            raise ConfigError(
                "--controller-config", f"chain has no attachment {name!r} ({e})"
            ) from None

    fsm_path = _get(args, "fsm_config")
    if fsm_path is None:
        fsm_params = FsmParams()
    else:
        raw = _read_json("--fsm-config", fsm_path)
        allowed = {f.name for f in dataclasses.fields(FsmParams)}
        for key in raw:
            if key not in allowed:
                raise ConfigError("--fsm-config", f"unknown key {key!r}")
        try:
            fsm_params = FsmParams(**{k: float(v) for k, v in raw.items()})
        except (TypeError, ValueError) as e:
            raise ConfigError("--fsm-config", str(e)) from None

    plant_path = _get(args, "plant_config")
    if plant_path is None:
        plant_params = default_plant_params(chain)
    else:
        raw = _read_json("--plant-config", plant_path)
        for key in raw:
            if key not in ("inertia", "friction", "dt"):
                raise ConfigError("--plant-config", f"unknown key {key!r}")
        try:
            plant_params = default_plant_params(chain, **{k: float(v) for k, v in raw.items()})
        except (TypeError, ValueError) as e:
            raise ConfigError("--plant-config", str(e)) from None

    profile = _get(args, "profile", "authoritative")
    if profile not in PROFILES:
        raise ConfigError("--profile", f"must be one of {', '.join(PROFILES)}")
    config = apply_profile(config, profile)

    stream_hz = _as_float("--stream-hz", _get(args, "stream_hz", "60"))
    try:
        return SessionConfigBundle(
            chain=chain,
            chain_text=chain_text,
            config=config,
            fsm_params=fsm_params,
            plant_params=plant_params,
            profile=profile,
            stream_hz=stream_hz,
        )
    except ValueError as e:
        raise ConfigError("--stream-hz", str(e)) from None


def _load_scenario(args) -> ScenarioScript:
    path = _get(args, "scenario")
    if path is None:
        raise ConfigError("--scenario", "required")
    try:
        return load_script(path)
    except OSError as e:
        raise ConfigError("--scenario", str(e)) from None
    except (ValueError, json.JSONDecodeError) as e:
        raise ConfigError("--scenario", f"{path}: {e}") from None


def _out_dir(args) -> Path:
    out = Path(_get(args, "out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ====== run / batch / metrics subcommands ======


def _metrics_dict(outcome) -> dict:
    entry = {
        "script_id": outcome.script_id,
        "object": outcome.object_name,
        "success": outcome.success,
        "failure_reason": outcome.failure_reason,
        "below_hand_start": outcome.below_hand_start,
    }
    if outcome.metrics is not None:
        m = outcome.metrics
        entry["metrics"] = {name: getattr(m, name) for name in ("t_a",) + METRIC_NAMES[1:]}
        entry["metrics"]["success"] = m.success
    return entry


def cli_run(args) -> int:
    bundle = load_bundle(args)
    script = _load_scenario(args)
    timeout = _as_float("--timeout", _get(args, "timeout", "30"))
    if timeout <= 0:
        raise ConfigError("--timeout", "must be > 0")
    log_format = _get(args, "log_format", "ndjson")
    if log_format not in ("ndjson", "csv", "both"):
        raise ConfigError("--log-format", "must be ndjson, csv, or both")
    out = _out_dir(args)

    outcome = execute(
        script,
        chain=bundle.chain,
        config=bundle.config,
        fsm_params=bundle.fsm_params,
        plant_params=bundle.plant_params,
        timeout=timeout,
        keep_log=True,
    )

    stem = re.sub(r"[^A-Za-z0-9._-]", "_", script.script_id) or "run"
    written = []
    if outcome.log is not None:
        if log_format in ("ndjson", "both"):
            path = out / f"{stem}.ndjson"
            outcome.log.to_ndjson(path)
            written.append(path)
        if log_format in ("csv", "both"):
            path = out / f"{stem}.csv"
            outcome.log.to_csv(path)
            written.append(path)
    metrics_path = out / f"{stem}.metrics.json"
    metrics_path.write_text(json.dumps(_metrics_dict(outcome), indent=2) + "\n")
    written.append(metrics_path)

    if outcome.success:
        m = outcome.metrics
        print(
            f"{script.script_id}: success in {m.t_a:.2f} s "
            f"(e_d {m.e_d:.2f} cm, e_theta {m.e_theta:.2f} deg)"
        )
    else:
        print(f"{script.script_id}: {outcome.failure_reason}")
    for path in written:
        print(f"wrote {path}", file=sys.stderr)

    if outcome.success:
        return EXIT_OK
    return EXIT_SYSTEM if outcome.failure_reason == "system" else EXIT_TASK_FAILURE


def _runs_csv(outcomes: Sequence) -> str:
    lines = [RUNS_CSV_HEADER]
    for o in outcomes:
        cells = [
            o.script_id,
            o.object_name,
            str(int(o.success)),
            o.failure_reason or "",
            str(int(o.below_hand_start)),
        ]
        if o.metrics is None:
            cells += [""] * 9
        else:
            cells += [f"{getattr(o.metrics, name):.6f}" for name in ("t_a",) + METRIC_NAMES[1:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cli_batch(args) -> int:
    bundle = load_bundle(args)
    experiment = _get(args, "experiment")
    if experiment not in ("exp1", "exp2"):
        raise ConfigError("--experiment", "must be exp1 or exp2")
    runs = _as_int("--runs", _get(args, "runs", "20"))
    if runs < 1:
        raise ConfigError("--runs", "must be >= 1")
    seed = _as_int("--seed", _get(args, "seed", "0"))
    timeout = _as_float("--timeout", _get(args, "timeout", "30"))
    if timeout <= 0:
        raise ConfigError("--timeout", "must be > 0")
    obj = _get(args, "object")
    motion = _get(args, "motion")

    if experiment == "exp1":
        obj = obj or "cardboard_box"
        motion = motion or "translation"
        if obj not in OBJECT_NAMES:
            raise ConfigError("--object", f"must be one of {', '.join(OBJECT_NAMES)}")
        if motion not in ("translation", "rotation"):
            raise ConfigError("--motion", "must be translation or rotation")
        scripts = generate_experiment1(seed, obj, motion, runs)
        group = f"{obj}/{motion}"
    else:
        if obj is not None:
            raise ConfigError("--object", "not applicable to exp2 (object is fixed)")
        if motion is not None:
            raise ConfigError("--motion", "not applicable to exp2")
        scripts = generate_experiment2(seed, runs, chain=bundle.chain)
        group = "random-start"

    out = _out_dir(args)
    outcomes = execute_batch(
        scripts,
        chain=bundle.chain,
        config=bundle.config,
        fsm_params=bundle.fsm_params,
        plant_params=bundle.plant_params,
        timeout=timeout,
    )

    runs_path = out / "runs.csv"
    runs_path.write_text(_runs_csv(outcomes))
    summary = table_to_csv(aggregate(outcomes, lambda o: group))
    summary_path = out / "summary.csv"
    summary_path.write_text(summary)

    sys.stdout.write(summary)
    print(f"wrote {runs_path}", file=sys.stderr)
    print(f"wrote {summary_path}", file=sys.stderr)
    return EXIT_OK


@dataclass
class _LogView:
    """Just the log columns the metrics need, reloaded from disk."""

    t: np.ndarray
    gripper_points: np.ndarray
    target_points: np.ndarray
    fingers_closed: np.ndarray
    phases: List[str]


@dataclass(frozen=True)
class _LogOutcome:
    success: bool
    failure_reason: Optional[str]
    metrics: object


def _log_view_from_ndjson(path: Path) -> _LogView:
    t, grip, targ, closed, phases = [], [], [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "t" not in rec:
                continue  # leading config_hash record
            t.append(rec["t"])
            grip.append(rec["gripper_points"])
            targ.append(rec["target_points"])
            closed.append(rec["fingers_closed"])
            phases.append(rec["phase"])
    return _LogView(np.array(t), np.array(grip), np.array(targ), np.array(closed, dtype=bool), phases)


def _log_view_from_csv(path: Path) -> _LogView:
    with open(path) as f:
        first = f.readline()
        if not first.startswith("#"):
            f.seek(0)
        reader = csv.DictReader(f)
        t, grip, targ, closed, phases = [], [], [], [], []
        for row in reader:
            t.append(float(row["t"]))
            grip.append([[float(row[f"gp{j}_{ax}"]) for ax in "xyz"] for j in range(3)])
            targ.append([[float(row[f"tp{j}_{ax}"]) for ax in "xyz"] for j in range(3)])
            closed.append(bool(int(row["fingers_closed"])))
            phases.append(row["phase"])
    return _LogView(np.array(t), np.array(grip), np.array(targ), np.array(closed, dtype=bool), phases)


def _load_log_view(path_str: str) -> _LogView:
    path = Path(path_str)
    try:
        if path.suffix == ".csv":
            view = _log_view_from_csv(path)
        else:
            view = _log_view_from_ndjson(path)
    except OSError as e:
        raise ConfigError(path_str, str(e)) from None
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise ConfigError(path_str, f"not a session log ({e})") from None
    if view.t.size < 2:
        raise ConfigError(path_str, "log too short for metrics")
    return view


def cli_metrics(args) -> int:
    group = _get(args, "group", "all")
    outcomes = []
    for path in args.logs:
        view = _load_log_view(path)
        m = compute_metrics(view)
        done = view.phases[-1] == "done"
        success = bool(m.success and done)
        if success:
            reason = None
        elif bool(view.fingers_closed.any()):
            reason = "pose_error"
        else:
            reason = "timeout"
        outcomes.append(_LogOutcome(success=success, failure_reason=reason, metrics=m))

    text = table_to_csv(aggregate(outcomes, lambda o: group))
    out_path = _get(args, "out")
    if out_path is not None:
        Path(out_path).write_text(text)
        print(f"wrote {out_path}", file=sys.stderr)
    sys.stdout.write(text)
    return EXIT_OK


# ====== wire protocol ======


def _msg(kind: str, session_id: str, seq: int, **payload) -> dict:
    return {"v": WIRE_VERSION, "kind": kind, "session_id": session_id, "seq": seq, **payload}


@dataclass(frozen=True)
class Command:
    """One validated client command, queued for the simulation thread."""

    kind: str
    seq: int
    pose: Optional[Pose] = None
    profile: Optional[str] = None
    action: Optional[str] = None


def _wire_vec(raw, n: int, name: str) -> np.ndarray:
    if not isinstance(raw, (list, tuple)) or len(raw) != n:
        raise WireError("bad-pose", f"{name} must be a list of {n} numbers")
    try:
        vec = np.array([float(v) for v in raw], dtype=float)
    except (TypeError, ValueError):
        raise WireError("bad-pose", f"{name} must contain only numbers") from None
    if not np.all(np.isfinite(vec)):
        raise WireError("bad-pose", f"{name} must be finite")
    return vec


def _parse_pose(raw: dict) -> Pose:
    pos = _wire_vec(raw.get("position"), 3, "position")
    if "quat" in raw:
        quat = _wire_vec(raw["quat"], 4, "quat")
        norm = float(np.linalg.norm(quat))
        if norm < 1e-6:
            raise WireError("bad-pose", "quat has near-zero norm")
        return Pose.from_quat(pos, quat / norm)
    if "rpy" in raw:
        return Pose.from_rpy(pos, _wire_vec(raw["rpy"], 3, "rpy"))
    raise WireError("bad-pose", "hand_pose_cmd needs quat or rpy")


def parse_client_message(text: str, last_seq: int) -> Command:
    """Validate one inbound frame; WireError on any malformation."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise WireError("bad-json", f"message does not parse: {e}") from None
    if not isinstance(raw, dict):
        raise WireError("bad-json", "message must be a JSON object")
    if raw.get("v") != WIRE_VERSION:
        raise WireError("bad-version", f"unsupported wire version {raw.get('v')!r}")
    kind = raw.get("kind")
    if kind not in CLIENT_KINDS:
        raise WireError("bad-kind", f"unknown client message kind {kind!r}")
    seq = raw.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise WireError("bad-seq", "seq must be a nonnegative integer")
    if seq <= last_seq:
        raise WireError("bad-seq", f"seq {seq} does not increase past {last_seq}")
    if kind == "hand_pose_cmd":
        try:
            pose = _parse_pose(raw)
        except ValueError as e:
            if isinstance(e, WireError):
                raise
            raise WireError("bad-pose", str(e)) from None
        return Command(kind=kind, seq=seq, pose=pose)
    if kind == "profile_cmd":
        profile = raw.get("profile")
        if profile not in PROFILES:
            raise WireError("bad-profile", f"profile must be one of {', '.join(PROFILES)}")
        return Command(kind=kind, seq=seq, profile=profile)
    action = raw.get("action")
    if action not in LIFECYCLE_ACTIONS:
        raise WireError("bad-action", f"action must be one of {', '.join(LIFECYCLE_ACTIONS)}")
    return Command(kind=kind, seq=seq, action=action)


# ====== live session ======


class ClientHandle:
    """Per-connection egress state: latest-frame slot plus a control queue.

    The simulation thread writes frames; the connection's sender task reads
    them. Overwriting an unconsumed frame counts as a drop for this client.
    """

    def __init__(self, role: str):
        self.role = role
        self.dropped = 0
        self.last_client_seq = -1       # touched only by the receive loop
        self._slot: Optional[Tuple[int, dict]] = None
        self._lock = threading.Lock()
        self._control: queue.SimpleQueue = queue.SimpleQueue()
        self._control_seq = itertools.count()

    def offer_frame(self, seq: int, payload: dict) -> None:
        with self._lock:
            if self._slot is not None:
                self.dropped += 1
            self._slot = (seq, payload)

    def take_frame(self) -> Optional[Tuple[int, dict]]:
        with self._lock:
            out, self._slot = self._slot, None
            return out

    def push_control(self, kind: str, body: dict) -> None:
        self._control.put((kind, body))

    def drain_control(self) -> List[Tuple[str, dict]]:
        out = []
        while True:
            try:
                out.append(self._control.get_nowait())
            except queue.Empty:
                return out

    def next_control_seq(self) -> int:
        return next(self._control_seq)


def default_live_scenario() -> ScenarioScript:
    """Initial conditions for a live session: ready arm, hand held ahead."""
    return ScenarioScript(
        object_name="cardboard_box",
        robot_start=EXPERIMENT_START_Q,
        hand_start=HAND_NOMINAL,
        segments=(),
        seed=0,
        script_id="live",
    )


class LiveSession:
    """A simulation owned by one background thread, steered through queues.

    Lifecycle: sessions start paused; ``start`` begins ticking at the plant
    rate (wall-paced when realtime), ``pause`` stops integration but keeps
    streaming, ``reset`` rebuilds the run at its initial conditions (and is
    an acknowledged no-op when nothing has happened since the last reset).
    A simulation fault pauses the session and is broadcast as an error.
    """

    def __init__(self, bundle: SessionConfigBundle, script: ScenarioScript, realtime: bool = True):
        self.bundle = bundle
        self.script = script
        self.realtime = realtime
        self.session_id = secrets.token_hex(8)
        self.commands: queue.SimpleQueue = queue.SimpleQueue()
        self._clients: List[ClientHandle] = []
        self._clients_lock = threading.Lock()
        self._steering: Optional[ClientHandle] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._frame_seq = itertools.count()
        self.running = False
        self.faulted: Optional[str] = None
        self.profile = bundle.profile
        self._tick_count = 0
        self._build_session()

    # ---- construction / lifecycle ----

    def _build_session(self) -> None:
        b, s = self.bundle, self.script
        obj = bundled_object(s.object_name)
        points = grasp_points_at(
            b.chain, b.config.attachment_names, b.config.link_length, obj.gripper_in_object
        )
        config = bind_grasp(b.config, points)
        self.session = Session(
            b.chain,
            config,
            b.fsm_params,
            b.plant_params,
            obj.in_hand,
            JointState(q=s.robot_start),
            initial_hand=s.hand_start,
        )
        self._hand = s.hand_start
        self._tick_count = 0
        self.running = False

    def start_thread(self) -> None:
        self._thread = threading.Thread(target=self._loop, name="sim-loop", daemon=True)
        self._thread.start()

    def shutdown(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    # ---- client registry (called from the asyncio side) ----

    def attach(self) -> ClientHandle:
        with self._clients_lock:
            role = "steering" if self._steering is None else "observer"
            client = ClientHandle(role)
            if role == "steering":
                self._steering = client
            self._clients.append(client)
        client.push_control(
            "ack",
            {
                "applied": "connect",
                "role": role,
                "stream_hz": self.bundle.stream_hz,
                "profile": self.profile,
                "object": self.script.object_name,
            },
        )
        return client

    def detach(self, client: ClientHandle) -> None:
        steering_left = False
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)
            if self._steering is client:
                self._steering = None
                steering_left = True
        if steering_left:
            # the hand's source is gone: hold the world still until a new
            # steering client picks it up
            self.submit(Command(kind="lifecycle_cmd", seq=-1, action="pause"))

    def submit(self, cmd: Command, reply: Optional[concurrent.futures.Future] = None) -> None:
        self.commands.put((cmd, reply))

    # ---- simulation thread ----

    def _apply(self, cmd: Command) -> Tuple[str, dict]:
        if cmd.kind == "hand_pose_cmd":
            self._hand = cmd.pose
            return ("ack", {"applied": "hand_pose"})
        if cmd.kind == "profile_cmd":
            # fingers are already moving; swapping spring strengths now
            # would yank the arm mid-grasp
            if self.session.phase == Phase.GRASPING:
                return ("error", {"code": "grasping", "detail": "profile locked while fingers close"})
            config = apply_profile(self.session.config, cmd.profile)
            self.session.set_profile(config)
            self.profile = cmd.profile
            return (
                "ack",
                {
                    "applied": "profile",
                    "profile": cmd.profile,
                    "spring2_f_max": float(config.spring2.f_max),
                },
            )
        action = cmd.action
        if action == "start":
            if self.faulted is not None:
                return ("error", {"code": "faulted", "detail": self.faulted})
            self.running = True
            return ("ack", {"applied": "start"})
        if action == "pause":
            self.running = False
            return ("ack", {"applied": "pause"})
        # reset; rebuilding an untouched session would change nothing, so
        # answer idempotently instead
        pristine = self._tick_count == 0 and not self.running and self.faulted is None
        if not pristine:
            self.faulted = None
            self._build_session()
            self.profile = self.bundle.profile
        return ("ack", {"applied": "reset", "noop": pristine})

    def _drain_commands(self) -> None:
        while True:
            try:
                cmd, reply = self.commands.get_nowait()
            except queue.Empty:
                return
            kind, body = self._apply(cmd)
            if reply is not None:
                body = dict(body)
                body["client_seq"] = cmd.seq
                reply.set_result((kind, body))

    def _snapshot(self) -> dict:
        s = self.session
        log = s.log
        if len(log):
            i = len(log) - 1
            view = {
                "t": float(log.t[i]),
                "q": log.q[i].tolist(),
                "alpha": float(log.alpha[i]),
                "phase": log.phase_names[log.phase[i]],
                "command": log.command_names[log.command[i]],
                "fingers_closed": bool(log.fingers_closed[i]),
                "pair_distances": log.pair_distances[i].tolist(),
                "gripper_points": log.gripper_points[i].tolist(),
                "target_points": log.target_points[i].tolist(),
                "finger_points": log.finger_points[i].tolist(),
                "region_centers": log.region_centers[i].tolist(),
                "hand": {
                    "position": log.raw_hand_pos[i].tolist(),
                    "quat": log.raw_hand_quat[i].tolist(),
                },
                "object": {
                    "position": log.object_pos[i].tolist(),
                    "quat": log.object_quat[i].tolist(),
                },
            }
        else:
            # pristine session: evaluate the controller once (pure) so the
            # first frames already carry the full geometry
            frames = s.chain.frames(s.state.joints.q)
            out = compute_torques(
                s.chain,
                s.state.joints,
                s.state.hand_pose,
                np.zeros(3),
                s.fsm.alpha,
                s.config,
                object_pose=s.state.object_pose,
                frames=frames,
            )
            view = {
                "t": 0.0,
                "q": s.state.joints.q.tolist(),
                "alpha": float(s.fsm.alpha),
                "phase": s.fsm.phase.value,
                "command": CMD_NONE,
                "fingers_closed": False,
                "pair_distances": out.pair_distances.tolist(),
                "gripper_points": out.gripper_points.tolist(),
                "target_points": out.target_points.tolist(),
                "finger_points": [
                    frames.attachment_point(n).tolist()
                    for n in s.config.attachment_names[:2]
                ],
                "region_centers": out.region_centers.tolist(),
                "hand": {
                    "position": s.state.hand_pose.position.tolist(),
                    "quat": s.state.hand_pose.as_quat().tolist(),
                },
                "object": {
                    "position": s.state.object_pose.position.tolist(),
                    "quat": s.state.object_pose.as_quat().tolist(),
                },
            }
        view.update(
            running=self.running,
            faulted=self.faulted,
            tick=self._tick_count,
            profile={"name": self.profile, "spring2_f_max": float(s.config.spring2.f_max)},
        )
        return view

    def _publish(self) -> None:
        payload = self._snapshot()
        seq = next(self._frame_seq)
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.offer_frame(seq, payload)

    def _broadcast_error(self, code: str, detail: str) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.push_control("error", {"code": code, "detail": detail})

    def _loop(self) -> None:
        dt = self.bundle.plant_params.dt
        pub_interval = 1.0 / self.bundle.stream_hz
        next_pub = time.monotonic()
        next_tick = time.monotonic()
        while not self._stop.is_set():
            self._drain_commands()
            if self.running and self.faulted is None:
                try:
                    self.session.tick(self._hand)
                    self._tick_count += 1
                except RuntimeError as e:
                    self.faulted = str(e)
                    self.running = False
                    self._broadcast_error("faulted", str(e))
                if self.realtime:
                    next_tick += dt
                    delay = next_tick - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                    elif delay < -0.25:
                        # lost the budget (slow host); resync rather than
                        # burst-tick to catch up
                        next_tick = time.monotonic()
            else:
                time.sleep(0.001)
                next_tick = time.monotonic()
            now = time.monotonic()
            if now >= next_pub:
                self._publish()
                next_pub += pub_interval
                if next_pub < now:
                    next_pub = now + pub_interval


# ====== server ======


def build_app(bundle: SessionConfigBundle, script: Optional[ScenarioScript] = None,
              realtime: bool = True):
    """FastAPI app wrapping one LiveSession.

    One WebSocket endpoint at /session; the first connection steers, later
    ones observe. GET /chain and GET /object serve the exact documents the
    session was built from so clients can render the same kinematics.
    """
    if script is None:
        script = default_live_scenario()
    live = LiveSession(bundle, script, realtime=realtime)
    object_text = (
        resources.files("vmc_handover.data")
        .joinpath(f"objects/{script.object_name}.json")
        .read_text(encoding="utf-8")
    )

    @asynccontextmanager
    async def lifespan(app):
        live.start_thread()
        try:
            yield
        finally:
            live.shutdown()

    app = FastAPI(lifespan=lifespan)
    app.state.live = live

    @app.get("/info")
    def info():
        return JSONResponse(
            {
                "service": "vmc-handover",
                "wire_version": WIRE_VERSION,
                "session_id": live.session_id,
                "stream_hz": bundle.stream_hz,
                "object": script.object_name,
                "profile": live.profile,
                "repulsive_sigma": bundle.config.repulsive.sigma,
                "endpoints": {"session": "/session", "chain": "/chain", "object": "/object"},
            }
        )

    @app.get("/chain")
    def chain():
        return Response(content=bundle.chain_text, media_type="application/json")

    @app.get("/object")
    def object_spec():
        return Response(content=object_text, media_type="application/json")

    async def _sender(ws, client: ClientHandle):
        while True:
            sent = False
            for kind, body in client.drain_control():
                await ws.send_text(
                    json.dumps(_msg(kind, live.session_id, client.next_control_seq(), **body))
                )
                sent = True
            frame = client.take_frame()
            if frame is not None:
                seq, payload = frame
                await ws.send_text(
                    json.dumps(
                        _msg("state_update", live.session_id, seq, drops=client.dropped, **payload)
                    )
                )
                sent = True
            if not sent:
                await asyncio.sleep(0.002)

    async def _handle_inbound(client: ClientHandle, text: str) -> None:
        try:
            cmd = parse_client_message(text, client.last_client_seq)
        except WireError as e:
            client.push_control("error", {"code": e.code, "detail": str(e)})
            return
        client.last_client_seq = cmd.seq
        if client.role != "steering":
            client.push_control(
                "error",
                {"code": "read-only", "detail": "only the steering client may send commands",
                 "client_seq": cmd.seq},
            )
            return
        if cmd.kind == "hand_pose_cmd":
            live.submit(cmd)  # effect shows in the next state_update; not acked
            return
        reply: concurrent.futures.Future = concurrent.futures.Future()
        live.submit(cmd, reply)
        try:
            kind, body = await asyncio.wait_for(asyncio.wrap_future(reply), timeout=2.0)
        except asyncio.TimeoutError:
            client.push_control(
                "error",
                {"code": "stalled", "detail": "command was not applied within 2 s",
                 "client_seq": cmd.seq},
            )
            return
        client.push_control(kind, body)

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        client = live.attach()
        sender = asyncio.ensure_future(_sender(ws, client))
        try:
            while True:
                text = await ws.receive_text()
                await _handle_inbound(client, text)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            try:
                await sender
            except (asyncio.CancelledError, Exception):  # noqa: BLE001 - teardown
                pass
            live.detach(client)

    return app


def cli_serve(args) -> int:
    bundle = load_bundle(args)
    scenario_path = _get(args, "scenario")
    script = _load_scenario(args) if scenario_path is not None else default_live_scenario()
    port = _as_int("--port", _get(args, "port", "8765"))
    if not (0 < port < 65536):
        raise ConfigError("--port", "must be in [1, 65535]")
    host = _get(args, "host", "127.0.0.1")

    app = build_app(bundle, script)
    import uvicorn

    print(f"session {app.state.live.session_id}: ws://{host}:{port}/session", file=sys.stderr)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return EXIT_OK


# ====== argument parsing ======


def _add_bundle_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--chain", help="chain file or bundled chain name (default arm7)")
    sp.add_argument("--controller-config", dest="controller_config",
                    help="controller JSON (default: bundled)")
    sp.add_argument("--fsm-config", dest="fsm_config", help="gripper FSM params JSON")
    sp.add_argument("--plant-config", dest="plant_config",
                    help="plant params JSON (inertia, friction, dt)")
    sp.add_argument("--profile", help="authoritative or cooperative (default authoritative)")
    sp.add_argument("--stream-hz", dest="stream_hz", help="state stream rate, 1-120 (default 60)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vmc-handover",
        description="Handover simulation: single runs, randomized batches, and a live server.",
        epilog=(
            "every long option can be preset via an environment variable "
            f"{ENV_PREFIX}<OPTION> (e.g. {ENV_PREFIX}CONTROLLER_CONFIG, "
            f"{ENV_PREFIX}STREAM_HZ); explicit flags win"
        ),
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="execute one scenario file")
    _add_bundle_flags(run)
    run.add_argument("--scenario", help="scenario JSON file")
    run.add_argument("--out", help="output directory (default: out)")
    run.add_argument("--timeout", help="simulated seconds before giving up (default 30)")
    run.add_argument("--log-format", dest="log_format", help="ndjson, csv, or both (default ndjson)")

    batch = sub.add_parser("batch", help="run one randomized experiment")
    _add_bundle_flags(batch)
    batch.add_argument("--experiment", help="exp1 (fixed start, one motion) or exp2 (random starts)")
    batch.add_argument("--runs", help="number of runs (default 20)")
    batch.add_argument("--seed", help="generator seed (default 0)")
    batch.add_argument("--object", help="exp1 object name (default cardboard_box)")
    batch.add_argument("--motion", help="exp1 motion kind: translation or rotation")
    batch.add_argument("--out", help="output directory (default: out)")
    batch.add_argument("--timeout", help="per-run simulated-seconds cap (default 30)")

    serve = sub.add_parser("serve", help="serve a live steerable session")
    _add_bundle_flags(serve)
    serve.add_argument("--scenario", help="scenario file for initial conditions (segments unused)")
    serve.add_argument("--port", help="TCP port (default 8765)")
    serve.add_argument("--host", help="bind address (default 127.0.0.1)")

    metrics = sub.add_parser("metrics", help="summarize previously written logs")
    metrics.add_argument("logs", nargs="+", help="log files (.ndjson or .csv)")
    metrics.add_argument("--group", help="group label for the table row (default all)")
    metrics.add_argument("--out", help="also write the CSV here")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; that code means task failure
        # here, so remap (and keep 0 for --help)
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    handlers: dict = {"run": cli_run, "batch": cli_batch, "serve": cli_serve, "metrics": cli_metrics}
    try:
        return handlers[args.cmd](args)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - CLI boundary: anything unplanned is exit 3
        print(f"system error: {e}", file=sys.stderr)
        return EXIT_SYSTEM


if __name__ == "__main__":
    sys.exit(main())
