"""Episode replay files and pick-and-place blueprint export.

A replay is JSON lines: a header record (format marker, version, episode
configuration, valley width, and the base64 scene snapshot of the fresh
scene) followed by one record per step pairing the decoded instruction
with the reward breakdown and the settled scene's snapshot and probe
heights. A blueprint is the instruction-only distillation of a replay —
one record per step of {step, object_id, y, z, angle} or the literal
"reset" target — and re-simulating it reproduces the terminal scene.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import episode_config_from_dict
from .env import (BridgeEnv, EpisodeConfig, Instruction, Placement, RESET,
                  RewardBreakdown, compute_heights, is_success)
from .errors import CheckpointError, UsageError
from .physics2d import FIRST_BLOCK, STAGED, Scene, create_scene
from .policy import AttentionPolicy

REPLAY_FORMAT = "blockspan-replay"
BLUEPRINT_FORMAT = "blockspan-blueprint"
FORMAT_VERSION = 1


@dataclass
class ReplayStep:
    """One executed instruction and the settled scene it produced."""

    step: int
    instruction: Instruction
    reward: RewardBreakdown
    success: bool
    heights: List[float]
    snapshot: bytes

    def scene(self, config) -> Scene:
        return Scene.from_bytes(self.snapshot, config)


@dataclass
class Replay:
    """A decoded replay file."""

    episode_config: EpisodeConfig
    valley_width: float
    seed: Optional[int]
    initial_snapshot: bytes
    steps: List[ReplayStep]

    @property
    def success(self) -> bool:
        return self.steps[-1].success if self.steps else False


def _encode_instruction(instruction: Instruction,
                        rotations: Sequence[float]) -> Dict:
    if instruction.is_reset:
        return {"object_id": instruction.object_id, "target": "reset"}
    p = instruction.target
    return {"object_id": instruction.object_id,
            "y": p.y, "z": p.z, "angle": rotations[p.rotation_bin],
            "rotation_bin": p.rotation_bin}


def _decode_instruction(record: Dict) -> Instruction:
    if record.get("target") == "reset":
        return Instruction(int(record["object_id"]), RESET)
    return Instruction(int(record["object_id"]),
                       Placement(float(record["y"]), float(record["z"]),
                                 int(record["rotation_bin"])))


class ReplayRecorder:
    """Collects an episode's instructions and settled snapshots."""

    def __init__(self, env: BridgeEnv, seed: Optional[int] = None):
        if env.scene is None:
            raise UsageError("reset the environment before recording")
        self.env = env
        self.seed = seed
        self.valley_width = env.scene.valley_width
        self.episode_config = env.config
        self.initial_snapshot = env.scene.to_bytes()
        self.steps: List[ReplayStep] = []

    def record_step(self, info: Dict, reward: RewardBreakdown) -> None:
        """Call right after env.step with its outputs."""
        scene = self.env.scene
        self.steps.append(ReplayStep(
            step=len(self.steps), instruction=info["instruction"],
            reward=reward, success=bool(info["success"]),
            heights=[float(h) for h in
                     compute_heights(scene, self.episode_config.n_probes)],
            snapshot=scene.to_bytes()))

    def replay(self) -> Replay:
        return Replay(episode_config=self.episode_config,
                      valley_width=self.valley_width, seed=self.seed,
                      initial_snapshot=self.initial_snapshot,
                      steps=list(self.steps))


def record_episode(policy: AttentionPolicy, env: BridgeEnv,
                   valley_width: Optional[float] = None, seed: int = 0,
                   deterministic: bool = True,
                   rng: Optional[np.random.Generator] = None) -> Replay:
    """Roll one policy episode and capture it as a replay."""
    obs = env.reset(seed=seed, valley_width=valley_width)
    recorder = ReplayRecorder(env, seed=seed)
    done = False
    while not done:
        action, _ = policy.sample_action(obs, rng=rng,
                                         deterministic=deterministic)
        obs, reward, done, info = env.step(action)
        recorder.record_step(info, reward)
    return recorder.replay()


def save_replay(path: str, replay: Replay) -> None:
    header = {
        "format": REPLAY_FORMAT, "version": FORMAT_VERSION,
        "episode": asdict(replay.episode_config),
        "valley_width": replay.valley_width,
        "seed": replay.seed,
        "snapshot": base64.b64encode(replay.initial_snapshot).decode("ascii"),
    }
    rotations = replay.episode_config.rotations
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in replay.steps:
            fh.write(json.dumps({
                "step": s.step,
                "instruction": _encode_instruction(s.instruction, rotations),
                "reward": asdict(s.reward),
                "success": s.success,
                "heights": s.heights,
                "snapshot": base64.b64encode(s.snapshot).decode("ascii"),
            }) + "\n")


def _parse_header(path: str, expected_format: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path!r}: {exc}") from exc
    if not lines:
        raise CheckpointError(f"{path!r} is empty")
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise CheckpointError(f"{path!r} header is not valid JSON: {exc}") from exc
    if header.get("format") != expected_format:
        raise CheckpointError(
            f"{path!r} is not a {expected_format} file "
            f"(format={header.get('format')!r})")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported {expected_format} version {header.get('version')}")
    header["_lines"] = lines[1:]
    return header


def load_replay(path: str) -> Replay:
    header = _parse_header(path, REPLAY_FORMAT)
    episode = episode_config_from_dict(header["episode"])
    steps = []
    for line in header["_lines"]:
        try:
            record = json.loads(line)
        except ValueError as exc:
            raise CheckpointError(f"bad replay record: {exc}") from exc
        steps.append(ReplayStep(
            step=int(record["step"]),
            instruction=_decode_instruction(record["instruction"]),
            reward=RewardBreakdown(**record["reward"]),
            success=bool(record["success"]),
            heights=[float(h) for h in record["heights"]],
            snapshot=base64.b64decode(record["snapshot"])))
    return Replay(episode_config=episode,
                  valley_width=float(header["valley_width"]),
                  seed=header.get("seed"),
                  initial_snapshot=base64.b64decode(header["snapshot"]),
                  steps=steps)


# -- blueprints --------------------------------------------------------------


@dataclass
class BlueprintRecord:
    """One pick-and-place order: place object_id at (y, z, angle), or
    send it back to staging ("reset")."""

    step: int
    object_id: int
    target: Union[Dict, str]  # {"y","z","angle"} or "reset"


def export_blueprint(replay: Replay, path: str) -> List[BlueprintRecord]:
    """Write the instruction-only schedule of a replay."""
    rotations = replay.episode_config.rotations
    records = []
    header = {
        "format": BLUEPRINT_FORMAT, "version": FORMAT_VERSION,
        "valley_width": replay.valley_width,
        "n_blocks": replay.episode_config.n_blocks,
        "scene": asdict(replay.episode_config.scene),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in replay.steps:
            if s.instruction.is_reset:
                record = {"step": s.step,
                          "object_id": s.instruction.object_id,
                          "target": "reset"}
            else:
                p = s.instruction.target
                record = {"step": s.step,
                          "object_id": s.instruction.object_id,
                          "y": p.y, "z": p.z,
                          "angle": rotations[p.rotation_bin]}
            fh.write(json.dumps(record) + "\n")
            records.append(BlueprintRecord(
                step=s.step, object_id=s.instruction.object_id,
                target=("reset" if s.instruction.is_reset else
                        {"y": record["y"], "z": record["z"],
                         "angle": record["angle"]})))
    return records


def load_blueprint(path: str) -> Dict:
    """Blueprint header plus its ordered instruction records."""
    header = _parse_header(path, BLUEPRINT_FORMAT)
    records = []
    for line in header["_lines"]:
        try:
            records.append(json.loads(line))
        except ValueError as exc:
            raise CheckpointError(f"bad blueprint record: {exc}") from exc
    header["records"] = records
    del header["_lines"]
    return header


def simulate_blueprint(header: Dict,
                       episode_config: Optional[EpisodeConfig] = None) -> Scene:
    """Re-execute a blueprint's teleports on a fresh scene, settling after
    each, and return the terminal scene."""
    from .checkpoint import scene_config_from_dict

    episode = episode_config or EpisodeConfig(
        scene=scene_config_from_dict(header["scene"]))
    scene = create_scene(episode.scene, float(header["valley_width"]))
    for record in header["records"]:
        body = FIRST_BLOCK + int(record["object_id"])
        if record.get("target") == "reset":
            scene.teleport(body, STAGED)
        else:
            scene.teleport(body, (float(record["y"]), float(record["z"]),
                                  float(record["angle"])))
        scene.settle()
    return scene


def terminal_pose_errors(replay: Replay, scene: Scene) -> Dict[str, float]:
    """Worst position (m) and angle (rad) gaps between a replay's final
    snapshot and a re-simulated scene, over non-staged blocks."""
    final = Scene.from_bytes(replay.steps[-1].snapshot,
                             replay.episode_config.scene)
    worst_pos, worst_angle = 0.0, 0.0
    for i in final.block_indices:
        if final.is_staged(i) != scene.is_staged(i):
            return {"position": np.inf, "angle": np.inf}
        if final.is_staged(i):
            continue
        worst_pos = max(worst_pos, float(
            np.hypot(*(final.pos[i] - scene.pos[i]))))
        gap = abs(float(final.angle[i] - scene.angle[i]))
        worst_angle = max(worst_angle, min(gap, 2.0 * math.pi - gap))
    return {"position": worst_pos, "angle": worst_angle}


def verify_roundtrip(replay: Replay, scene: Scene) -> bool:
    """Re-simulation fidelity: success preserved and terminal block poses
    within 2 mm and 1 degree."""
    errors = terminal_pose_errors(replay, scene)
    success_match = (is_success(scene, replay.episode_config)
                     == replay.success)
    return bool(success_match and errors["position"] <= 2.0e-3
                and errors["angle"] <= np.deg2rad(1.0))
