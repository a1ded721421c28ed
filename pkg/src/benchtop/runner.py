"""Campaign execution: episodes, policies, and the policy wire protocol.

Policies come in three kinds:

- ``builtin:<name>`` runs in-process. Available names: ``oracle`` (solves
  the task from privileged object poses), ``random`` (uniform action
  noise), ``random_target`` (oracle mechanics aimed at a uniformly chosen
  object), and ``instruction_brittle`` (oracle on the exact planned
  instruction, random noise on anything else, e.g. paraphrases).
- ``subprocess:<command>`` talks newline-delimited JSON over the child's
  stdin/stdout.
- ``http:<url>`` POSTs the same messages to an HTTP endpoint.

Wire messages are fixed-shape. Each step the runner sends
``{"type": "observe", "instruction": ..., "raster_base64": ..., "step": ...}``
and expects ``{"type": "act", "delta_position": [x, y, z], "gripper":
"OPEN"|"CLOSE"|"HOLD"}`` back, with exactly those fields. Before each
episode the runner sends ``{"type": "reset"}``; no reply is read. Replies
that are late, malformed, or mis-shaped fail that trial with an error
annotation; the campaign itself keeps going, and the external policy is
respawned before the next episode on its worker.

Builtin policies are constructed fresh per trial and seeded from the trial
seed, so results are identical regardless of the parallelism level.
"""

from __future__ import annotations

import base64
import json
import math
import random
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from queue import Empty, Queue

from .campaign import CampaignManifest, EnvVariant, InstructionKind, SourceMix
from .catalog import Catalog
from .errors import PolicyProtocolError, PolicyTimeout, UsageError
from .jsonio import canonical_dumps
from .sim import (
    ACTION_DELTA_LIMIT,
    DEFAULT_MAX_STEPS,
    GRIPPER_HOME,
    PICK_HEIGHT,
    Action,
    GripperCommand,
    Observation,
    Task,
    TaskGoal,
    check_success,
    init_world,
    observe,
    step,
)

BUILTIN_POLICIES = ("oracle", "random", "random_target", "instruction_brittle")

DEFAULT_ACT_TIMEOUT_S = 10.0

_CARRY_MARGIN = 0.02
_DROP_CLEARANCE = 0.05
_NEAR_OFFSET = 0.06
_MIN_CARRY_Z = 0.15


class PolicyKind(str, Enum):
    BUILTIN = "builtin"
    SUBPROCESS = "subprocess"
    HTTP = "http"


@dataclass(frozen=True)
class PolicyEndpoint:
    kind: PolicyKind
    address: str
    policy_id: str


def parse_policy_endpoint(text: str) -> PolicyEndpoint:
    if ":" not in text:
        raise UsageError(
            f"policy endpoint must look like kind:address, got {text!r}"
        )
    kind_raw, address = text.split(":", 1)
    try:
        kind = PolicyKind(kind_raw)
    except ValueError:
        raise UsageError(
            f"unknown policy kind {kind_raw!r}; expected one of "
            f"{[k.value for k in PolicyKind]}"
        ) from None
    if not address:
        raise UsageError("policy endpoint address is empty")
    if kind is PolicyKind.BUILTIN:
        if address not in BUILTIN_POLICIES:
            raise UsageError(
                f"unknown builtin policy {address!r}; expected one of "
                f"{list(BUILTIN_POLICIES)}"
            )
        return PolicyEndpoint(kind=kind, address=address, policy_id=address)
    return PolicyEndpoint(kind=kind, address=address, policy_id=text)


@dataclass(frozen=True)
class ResetContext:
    task: Task
    target_a_index: int
    target_b_index: int | None
    basic_instruction: str
    instruction: str
    trial_seed: int
    object_heights: tuple[float, ...]


@dataclass(frozen=True)
class EpisodeResult:
    scene_index: int
    instruction: str
    instruction_kind: InstructionKind
    success: bool
    steps_used: int
    object_count: int
    source_mix: SourceMix
    env_variant: EnvVariant
    policy_id: str
    trial_seed: int
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "env_variant": self.env_variant.value,
            "error": self.error,
            "instruction": self.instruction,
            "instruction_kind": self.instruction_kind.value,
            "object_count": self.object_count,
            "policy_id": self.policy_id,
            "scene_index": self.scene_index,
            "source_mix": self.source_mix.value,
            "steps_used": self.steps_used,
            "success": self.success,
            "trial_seed": self.trial_seed,
        }


def result_from_dict(raw: dict) -> EpisodeResult:
    return EpisodeResult(
        scene_index=raw["scene_index"],
        instruction=raw["instruction"],
        instruction_kind=InstructionKind(raw["instruction_kind"]),
        success=raw["success"],
        steps_used=raw["steps_used"],
        object_count=raw["object_count"],
        source_mix=SourceMix(raw["source_mix"]),
        env_variant=EnvVariant(raw["env_variant"]),
        policy_id=raw["policy_id"],
        trial_seed=raw["trial_seed"],
        error=raw.get("error"),
    )


def save_results(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(canonical_dumps(result.to_dict()))
            fh.write("\n")


def load_results(path) -> list[EpisodeResult]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(result_from_dict(json.loads(line)))
    return out


# ---- builtin policies -----------------------------------------------------


class _OracleBrain:
    """Scripted pick-and-place controller over privileged snapshots.

    Tracks its own commanded gripper position from the home pose; every
    target it chooses is interior to the workspace, so dead reckoning
    matches the simulator exactly.
    """

    def __init__(self, ctx: ResetContext, a_index: int) -> None:
        self.ctx = ctx
        self.a_index = a_index
        self.pos = GRIPPER_HOME
        self.stage = "approach"

    def _step_toward(
        self, target: tuple[float, float, float]
    ) -> tuple[tuple[float, float, float], bool]:
        lim = ACTION_DELTA_LIMIT
        dx = max(-lim, min(lim, target[0] - self.pos[0]))
        dy = max(-lim, min(lim, target[1] - self.pos[1]))
        dz = max(-lim, min(lim, target[2] - self.pos[2]))
        arrived = (
            abs(target[0] - self.pos[0]) <= lim
            and abs(target[1] - self.pos[1]) <= lim
            and abs(target[2] - self.pos[2]) <= lim
        )
        self.pos = (self.pos[0] + dx, self.pos[1] + dy, self.pos[2] + dz)
        return (dx, dy, dz), arrived

    def _carry_target(self, snaps) -> tuple[float, float, float]:
        ctx = self.ctx
        half_a = ctx.object_heights[self.a_index] / 2.0
        if ctx.task is Task.PICK_UP:
            return (self.pos[0], self.pos[1], PICK_HEIGHT + half_a + _CARRY_MARGIN)
        assert ctx.target_b_index is not None
        b = snaps[ctx.target_b_index].pose.position_m
        if ctx.task is Task.MOVE_NEAR:
            bx, by = b[0], b[1]
            norm = math.sqrt(bx * bx + by * by)
            if norm > 1e-9:
                x = bx * (1.0 - _NEAR_OFFSET / norm)
                y = by * (1.0 - _NEAR_OFFSET / norm)
            else:
                x, y = _NEAR_OFFSET, 0.0
            return (x, y, max(half_a + _CARRY_MARGIN, _MIN_CARRY_Z))
        top_b = b[2] + self.ctx.object_heights[ctx.target_b_index] / 2.0
        return (b[0], b[1], top_b + half_a + _DROP_CLEARANCE)

    def next_action(self, snaps) -> Action:
        if self.a_index >= len(snaps):
            return Action.make(0.0, 0.0, 0.0, GripperCommand.HOLD)
        if self.stage == "approach":
            target = snaps[self.a_index].pose.position_m
            delta, arrived = self._step_toward(target)
            if arrived:
                self.stage = "carry"
                return Action.make(*delta, GripperCommand.CLOSE)
            return Action.make(*delta, GripperCommand.HOLD)
        if self.stage == "carry":
            target = self._carry_target(snaps)
            delta, arrived = self._step_toward(target)
            if arrived:
                self.stage = "done"
                if self.ctx.task is Task.PICK_UP:
                    return Action.make(*delta, GripperCommand.HOLD)
                return Action.make(*delta, GripperCommand.OPEN)
            return Action.make(*delta, GripperCommand.HOLD)
        return Action.make(0.0, 0.0, 0.0, GripperCommand.HOLD)


class OraclePolicy:
    privileged = True

    def reset(self, ctx: ResetContext) -> None:
        self._brain = _OracleBrain(ctx, ctx.target_a_index)

    def act(self, obs: Observation) -> Action:
        return self._brain.next_action(obs.object_snapshots)


class RandomPolicy:
    privileged = False

    def reset(self, ctx: ResetContext) -> None:
        self._rng = random.Random(ctx.trial_seed)

    def act(self, obs: Observation) -> Action:
        rng = self._rng
        lim = ACTION_DELTA_LIMIT
        return Action.make(
            rng.uniform(-lim, lim),
            rng.uniform(-lim, lim),
            rng.uniform(-lim, lim),
            rng.choice(
                (GripperCommand.OPEN, GripperCommand.CLOSE, GripperCommand.HOLD)
            ),
        )


class RandomTargetPolicy:
    """Oracle mechanics pointed at a uniformly random object."""

    privileged = True

    def reset(self, ctx: ResetContext) -> None:
        self._ctx = ctx
        self._rng = random.Random(ctx.trial_seed)
        self._brain: _OracleBrain | None = None

    def act(self, obs: Observation) -> Action:
        if self._brain is None:
            index = self._rng.randrange(len(obs.object_snapshots))
            self._brain = _OracleBrain(self._ctx, index)
        return self._brain.next_action(obs.object_snapshots)


class InstructionBrittlePolicy:
    """Competent only on the exact instruction it was planned with."""

    privileged = True

    def reset(self, ctx: ResetContext) -> None:
        self._ctx = ctx
        self._rng = random.Random(ctx.trial_seed)
        self._mode: str | None = None
        self._brain: _OracleBrain | None = None

    def act(self, obs: Observation) -> Action:
        if self._mode is None:
            literal = obs.instruction == self._ctx.basic_instruction
            self._mode = "oracle" if literal else "random"
            if literal:
                self._brain = _OracleBrain(self._ctx, self._ctx.target_a_index)
        if self._mode == "oracle":
            return self._brain.next_action(obs.object_snapshots)
        rng = self._rng
        lim = ACTION_DELTA_LIMIT
        return Action.make(
            rng.uniform(-lim, lim),
            rng.uniform(-lim, lim),
            rng.uniform(-lim, lim),
            rng.choice(
                (GripperCommand.OPEN, GripperCommand.CLOSE, GripperCommand.HOLD)
            ),
        )


_BUILTIN_CLASSES = {
    "oracle": OraclePolicy,
    "random": RandomPolicy,
    "random_target": RandomTargetPolicy,
    "instruction_brittle": InstructionBrittlePolicy,
}


def make_builtin_policy(name: str):
    try:
        return _BUILTIN_CLASSES[name]()
    except KeyError:
        raise UsageError(f"unknown builtin policy {name!r}") from None


# ---- wire clients ---------------------------------------------------------


def _encode_observe(obs: Observation) -> str:
    raster = obs.raster
    payload = {
        "type": "observe",
        "instruction": obs.instruction,
        "raster_base64": base64.b64encode(
            raster.tobytes() if raster is not None else b""
        ).decode("ascii"),
        "step": obs.step_count,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _decode_act(line: str) -> Action:
    try:
        raw = json.loads(line)
    except ValueError as exc:
        raise PolicyProtocolError(f"policy sent non-JSON line: {line[:80]!r}") from exc
    if not isinstance(raw, dict):
        raise PolicyProtocolError("policy reply is not a JSON object")
    if set(raw.keys()) != {"type", "delta_position", "gripper"}:
        raise PolicyProtocolError(
            f"policy reply has wrong fields: {sorted(raw.keys())}"
        )
    if raw["type"] != "act":
        raise PolicyProtocolError(f"policy reply type is {raw['type']!r}, not 'act'")
    delta = raw["delta_position"]
    if (
        not isinstance(delta, list)
        or len(delta) != 3
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in delta)
    ):
        raise PolicyProtocolError("delta_position must be a list of 3 numbers")
    try:
        gripper = GripperCommand(raw["gripper"])
    except (ValueError, TypeError):
        raise PolicyProtocolError(
            f"gripper must be OPEN, CLOSE, or HOLD, got {raw['gripper']!r}"
        ) from None
    return Action.make(float(delta[0]), float(delta[1]), float(delta[2]), gripper)


class SubprocessPolicyClient:
    """One external policy process speaking NDJSON over stdio."""

    def __init__(self, command: str, act_timeout_s: float) -> None:
        self.act_timeout_s = act_timeout_s
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._queue: Queue[str | None] = Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._queue.put(line)
        self._queue.put(None)

    def _send(self, text: str) -> None:
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(text + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PolicyProtocolError("policy process closed its stdin") from exc

    def reset(self) -> None:
        self._send('{"type":"reset"}')

    def act(self, obs: Observation) -> Action:
        self._send(_encode_observe(obs))
        try:
            line = self._queue.get(timeout=self.act_timeout_s)
        except Empty:
            raise PolicyTimeout(
                f"policy did not reply within {self.act_timeout_s}s"
            ) from None
        if line is None:
            raise PolicyProtocolError("policy process closed its stdout")
        return _decode_act(line)

    def close(self) -> None:
        proc = self._proc
        try:
            if proc.stdin is not None:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.terminate()
            proc.wait(timeout=2)
        except (OSError, subprocess.TimeoutExpired):
            try:
                proc.kill()
            except OSError:
                pass


class HttpPolicyClient:
    def __init__(self, url: str, act_timeout_s: float) -> None:
        import requests

        self.url = url
        self.act_timeout_s = act_timeout_s
        self._session = requests.Session()

    def reset(self) -> None:
        import requests

        try:
            self._session.post(
                self.url, json={"type": "reset"}, timeout=self.act_timeout_s
            )
        except requests.Timeout:
            raise PolicyTimeout("policy reset timed out") from None
        except requests.ConnectionError as exc:
            raise PolicyProtocolError(f"cannot reach policy at {self.url}") from exc

    def act(self, obs: Observation) -> Action:
        import requests

        try:
            resp = self._session.post(
                self.url, data=_encode_observe(obs),
                headers={"Content-Type": "application/json"},
                timeout=self.act_timeout_s,
            )
        except requests.Timeout:
            raise PolicyTimeout(
                f"policy did not reply within {self.act_timeout_s}s"
            ) from None
        except requests.ConnectionError as exc:
            raise PolicyProtocolError(f"cannot reach policy at {self.url}") from exc
        return _decode_act(resp.text)

    def close(self) -> None:
        self._session.close()


# ---- episode and campaign execution ---------------------------------------


def run_builtin_episode(
    config, catalog: Catalog, policy, ctx: ResetContext, goal: TaskGoal,
    max_steps: int,
) -> tuple[bool, int, str | None]:
    state = init_world(config, catalog, max_steps)
    policy.reset(ctx)
    privileged = getattr(policy, "privileged", False)
    if check_success(state, goal):
        return True, 0, None
    while state.step_count < max_steps:
        obs = observe(
            state, config.env, ctx.instruction,
            privileged=privileged, render=False,
        )
        action = policy.act(obs)
        state = step(state, action)
        if check_success(state, goal):
            return True, state.step_count, None
    return False, state.step_count, None


def run_wire_episode(
    config, catalog: Catalog, client, ctx: ResetContext, goal: TaskGoal,
    max_steps: int,
) -> tuple[bool, int, str | None]:
    state = init_world(config, catalog, max_steps)
    try:
        client.reset()
        if check_success(state, goal):
            return True, 0, None
        while state.step_count < max_steps:
            obs = observe(
                state, config.env, ctx.instruction,
                privileged=False, render=True,
            )
            action = client.act(obs)
            state = step(state, action)
            if check_success(state, goal):
                return True, state.step_count, None
        return False, state.step_count, None
    except (PolicyTimeout, PolicyProtocolError) as exc:
        return False, state.step_count, f"{type(exc).__name__}: {exc}"


class _WireClientCache:
    """Per-thread wire client, replaced after any protocol failure."""

    def __init__(self, endpoint: PolicyEndpoint, act_timeout_s: float) -> None:
        self.endpoint = endpoint
        self.act_timeout_s = act_timeout_s
        self._local = threading.local()
        self._lock = threading.Lock()
        self._all: list = []

    def get(self):
        client = getattr(self._local, "client", None)
        if client is None:
            if self.endpoint.kind is PolicyKind.SUBPROCESS:
                client = SubprocessPolicyClient(
                    self.endpoint.address, self.act_timeout_s
                )
            else:
                client = HttpPolicyClient(self.endpoint.address, self.act_timeout_s)
            self._local.client = client
            with self._lock:
                self._all.append(client)
        return client

    def discard(self) -> None:
        client = getattr(self._local, "client", None)
        if client is not None:
            client.close()
            with self._lock:
                if client in self._all:
                    self._all.remove(client)
            self._local.client = None

    def close_all(self) -> None:
        with self._lock:
            clients, self._all = list(self._all), []
        for client in clients:
            client.close()


def run_campaign(
    manifest: CampaignManifest,
    catalog: Catalog,
    endpoint: PolicyEndpoint,
    *,
    parallelism: int = 1,
    max_steps: int = DEFAULT_MAX_STEPS,
    act_timeout_s: float = DEFAULT_ACT_TIMEOUT_S,
    out_path=None,
) -> list[EpisodeResult]:
    """Execute every trial in the manifest, in manifest order."""
    if parallelism < 1:
        raise UsageError(f"parallelism must be >= 1, got {parallelism}")
    manifest.validate(catalog)
    task = manifest.spec.task
    heights = [
        tuple(catalog.get(op.model_id).height_m for op in scene.adds)
        for scene in manifest.scenes
    ]
    cache = None
    if endpoint.kind is not PolicyKind.BUILTIN:
        cache = _WireClientCache(endpoint, act_timeout_s)

    def run_one(trial) -> EpisodeResult:
        meta = manifest.scene_meta[trial.scene_index]
        config = manifest.scenes[trial.scene_index]
        ctx = ResetContext(
            task=task,
            target_a_index=meta.target_a_index,
            target_b_index=meta.target_b_index,
            basic_instruction=meta.basic_instruction,
            instruction=trial.instruction_text,
            trial_seed=trial.trial_seed,
            object_heights=heights[trial.scene_index],
        )
        goal = TaskGoal(
            task=task,
            target_a_index=meta.target_a_index,
            target_b_index=meta.target_b_index,
        )
        if endpoint.kind is PolicyKind.BUILTIN:
            policy = make_builtin_policy(endpoint.address)
            success, steps, error = run_builtin_episode(
                config, catalog, policy, ctx, goal, max_steps
            )
        else:
            client = cache.get()
            success, steps, error = run_wire_episode(
                config, catalog, client, ctx, goal, max_steps
            )
            if error is not None:
                cache.discard()
        return EpisodeResult(
            scene_index=trial.scene_index,
            instruction=trial.instruction_text,
            instruction_kind=trial.instruction_kind,
            success=success,
            steps_used=steps,
            object_count=meta.object_count,
            source_mix=meta.source_mix,
            env_variant=meta.env_variant,
            policy_id=endpoint.policy_id,
            trial_seed=trial.trial_seed,
            error=error,
        )

    try:
        if parallelism == 1:
            results = [run_one(t) for t in manifest.trials]
        else:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                futures = [pool.submit(run_one, t) for t in manifest.trials]
                results = [f.result() for f in futures]
    finally:
        if cache is not None:
            cache.close_all()

    if out_path is not None:
        save_results(results, out_path)
    return results
