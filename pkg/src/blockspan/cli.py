"""Command-line interface.

Subcommands: train, eval, rollout, render, export, inspect-checkpoint,
env-server.
Configuration layers, lowest precedence first: named preset defaults, a
key=value config file, repeated ``--set section.field=value`` overrides,
then dedicated flags. Exit codes: 0 success, 1 usage error, 2 data or
checkpoint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import (episode_config_from_dict, load_checkpoint,
                         load_policy, restore_trainer)
from .curriculum import CurriculumConfig
from .env import BridgeEnv, EpisodeConfig
from .errors import (BlockspanError, CheckpointError, ConfigurationError,
                     TrainingDiverged, UsageError)
from .evaluation import evaluate_hard, evaluate_policy
from .policy import AttentionPolicy, NetworkConfig
from .presets import PRESETS
from .render import save_frames
from .replay import (ReplayRecorder, export_blueprint, load_blueprint,
                     load_replay, record_episode, save_replay,
                     simulate_blueprint, terminal_pose_errors,
                     verify_roundtrip)
from .trainer import TrainConfig, Trainer

METRICS_ENV_VAR = "BLOCKSPAN_METRICS"
CHECKPOINT_DIR_ENV_VAR = "BLOCKSPAN_CHECKPOINT_DIR"
TRACE_FORMAT = "blockspan-trace"


@dataclasses.dataclass
class ConfigBundle:
    """The three config sections a run is built from."""

    episode: EpisodeConfig
    curriculum: CurriculumConfig
    train: TrainConfig


def load_preset(name: str) -> ConfigBundle:
    if name not in PRESETS:
        raise UsageError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    episode_fn, curriculum_fn, train_fn = PRESETS[name]
    return ConfigBundle(episode=episode_fn(), curriculum=curriculum_fn(),
                        train=train_fn())


def _coerce(current, text: str):
    """Parse ``text`` to the type of the field's current value."""
    if isinstance(current, bool):
        lowered = text.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        parts = [p for p in text.replace("(", "").replace(")", "").split(",")
                 if p.strip()]
        kind = type(current[0]) if current else float
        return tuple(kind(p) for p in parts)
    return text


def _set_path(obj, path: List[str], text: str):
    name = path[0]
    if not dataclasses.is_dataclass(obj) or not hasattr(obj, name):
        raise UsageError(f"no config field {'.'.join(path)!r} "
                         f"on {type(obj).__name__}")
    if len(path) == 1:
        try:
            value = _coerce(getattr(obj, name), text)
        except ValueError as exc:
            raise UsageError(f"bad value for {name!r}: {exc}") from exc
        return replace(obj, **{name: value})
    return replace(obj, **{name: _set_path(getattr(obj, name), path[1:], text)})


def apply_setting(bundle: ConfigBundle, key: str, value: str) -> ConfigBundle:
    """Apply one dotted override like ``train.learning_rate=1e-4``."""
    section, _, rest = key.partition(".")
    if section not in ("episode", "curriculum", "train") or not rest:
        raise UsageError(
            f"override key must start with episode./curriculum./train., "
            f"got {key!r}")
    updated = _set_path(getattr(bundle, section), rest.split("."), value)
    return replace(bundle, **{section: updated})


def parse_config_file(path: str) -> List[Tuple[str, str]]:
    """Read ``key = value`` lines; '#' starts a comment."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc}") from exc
    items = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip() or not value.strip():
            raise UsageError(
                f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
        items.append((key.strip(), value.strip()))
    return items


def build_bundle(args) -> ConfigBundle:
    bundle = load_preset(args.preset)
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config):
            bundle = apply_setting(bundle, key, value)
    for item in getattr(args, "set", None) or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects key=value, got {item!r}")
        bundle = apply_setting(bundle, key.strip(), value.strip())
    return bundle


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors via exceptions, not exit code 2."""

    def error(self, message):
        raise UsageError(message)


# -- subcommand implementations ----------------------------------------------


def _cmd_train(args) -> int:
    metrics = args.metrics or os.environ.get(METRICS_ENV_VAR)
    ckpt_dir = args.checkpoint_dir or os.environ.get(CHECKPOINT_DIR_ENV_VAR)
    if args.resume:
        trainer = restore_trainer(args.resume, metrics_path=metrics,
                                  checkpoint_dir=ckpt_dir)
        if args.total_steps is not None:
            trainer.config = replace(trainer.config,
                                     total_steps=args.total_steps)
    else:
        bundle = build_bundle(args)
        train = replace(bundle.train, algorithm=args.algorithm)
        if args.total_steps is not None:
            train = replace(train, total_steps=args.total_steps)
        trainer = Trainer(train, episode_config=bundle.episode,
                          curriculum_config=bundle.curriculum,
                          variant=args.variant, seed=args.seed,
                          metrics_path=metrics, checkpoint_dir=ckpt_dir,
                          adaptive_curriculum=not args.fixed_curriculum)
    try:
        records = trainer.run()
    finally:
        trainer.close()
    last = records[-1] if records else {}
    print(json.dumps({"steps": trainer.global_steps,
                      "iterations": trainer.iteration,
                      "final_success": last.get("success_all"),
                      "p": last.get("p")}))
    return 0


def _cmd_eval(args) -> int:
    if args.full_range:
        policy, header = load_policy(args.checkpoint)
        episode = episode_config_from_dict(header["episode"])
        report = evaluate_policy(policy, episode, n_tasks=args.n_tasks,
                                 seed=args.seed)
    else:
        report = evaluate_hard(args.checkpoint, n_tasks=args.n_tasks,
                               seed=args.seed)
    payload = json.dumps(report.to_dict())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def _fresh_policy(episode: EpisodeConfig, seed: int) -> AttentionPolicy:
    return AttentionPolicy(NetworkConfig.for_episode(episode), seed=seed)


def _load_actions(path: str) -> List[Tuple[int, int, int, int]]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise UsageError(f"cannot read actions file {path}: {err}")
    except json.JSONDecodeError as err:
        raise UsageError(f"actions file {path} is not valid JSON: {err}")
    if not isinstance(data, list) or not data:
        raise UsageError("actions file must be a non-empty JSON array of "
                         "[object, y, z, rotation] bins")
    actions = []
    for i, row in enumerate(data):
        if (not isinstance(row, list) or len(row) != 4
                or not all(isinstance(v, int) for v in row)):
            raise UsageError(f"action {i} must be four integer bins, "
                             f"got {row!r}")
        actions.append(tuple(row))
    return actions


def _scripted_rollout(args):
    """Drive a fixed action list; returns the replay and the full trace."""
    from .env_server import public_info
    episode = build_bundle(args).episode
    env = BridgeEnv(episode)
    observation = env.reset(seed=args.seed, valley_width=args.width)
    recorder = ReplayRecorder(env, seed=args.seed)
    trace = [{"op": "reset", "observation": observation.tolist()}]
    for raw in _load_actions(args.actions):
        observation, reward, done, info = env.step(raw)
        recorder.record_step(info, reward)
        trace.append({"op": "step", "step": info["t"] - 1,
                      "observation": observation.tolist(),
                      "reward": dataclasses.asdict(reward), "done": done,
                      "info": public_info(info)})
        if done:
            break
    return recorder.replay(), trace


def _cmd_rollout(args) -> int:
    sources = [bool(args.checkpoint), args.untrained, bool(args.actions)]
    if sum(sources) != 1:
        raise UsageError(
            "give exactly one of --checkpoint, --untrained, or --actions")
    if args.trace and not args.actions:
        raise UsageError("--trace requires a scripted rollout (--actions)")
    if args.actions:
        replay, trace = _scripted_rollout(args)
    else:
        if args.checkpoint:
            policy, header = load_policy(args.checkpoint)
            episode = episode_config_from_dict(header["episode"])
        else:
            episode = load_preset(args.preset).episode
            policy = _fresh_policy(episode, args.seed)
        env = BridgeEnv(episode)
        rng = None if args.deterministic else np.random.default_rng(args.seed)
        replay = record_episode(policy, env, valley_width=args.width,
                                seed=args.seed,
                                deterministic=args.deterministic, rng=rng)
    save_replay(args.out, replay)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            header = {"format": TRACE_FORMAT, "version": 1,
                      "valley_width": replay.valley_width, "seed": args.seed}
            for record in [header] + trace:
                fh.write(json.dumps(record) + "\n")
    final = replay.steps[-1]
    print(json.dumps({"out": args.out, "steps": len(replay.steps),
                      "valley_width": replay.valley_width,
                      "success": replay.success,
                      "final_reward": final.reward.total}))
    return 0


def _cmd_env_server(args) -> int:
    from .env_server import serve
    return serve()


def _cmd_render(args) -> int:
    replay = load_replay(args.replay)
    paths = save_frames(replay, args.out_dir, stem=args.stem)
    print(json.dumps({"frames": len(paths), "out_dir": args.out_dir}))
    return 0


def _cmd_export(args) -> int:
    replay = load_replay(args.replay)
    records = export_blueprint(replay, args.out)
    result = {"out": args.out, "records": len(records)}
    if args.verify:
        scene = simulate_blueprint(load_blueprint(args.out))
        errors = terminal_pose_errors(replay, scene)
        result["verified"] = verify_roundtrip(replay, scene)
        result["position_error"] = errors["position"]
        result["angle_error"] = errors["angle"]
        if not result["verified"]:
            print(json.dumps(result))
            print("error: re-simulated blueprint diverged from the replay",
                  file=sys.stderr)
            return 2
    print(json.dumps(result))
    return 0


def _cmd_inspect(args) -> int:
    data = load_checkpoint(args.checkpoint)
    header = dict(data.header)
    header.pop("rng", None)
    n_params = sum(t.data.size for t in data.params.tensors())
    print(json.dumps({"header": header, "n_parameters": int(n_params),
                      "n_tensors": len(list(data.params.tensors())),
                      "adam_tensors": len(data.moments)}))
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="blockspan",
                     description="Bridge-building simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add_config_flags(p):
        p.add_argument("--preset", default="scaled", help="configuration "
                       f"preset: {', '.join(sorted(PRESETS))}")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config field, e.g. "
                       "train.learning_rate=1e-4 (repeatable)")

    p = sub.add_parser("train", help="train a policy")
    add_config_flags(p)
    p.add_argument("--algorithm", choices=("ppo", "ppg"), default="ppg")
    p.add_argument("--variant", choices=("shared", "dual"), default="shared")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--fixed-curriculum", action="store_true",
                   help="pin the hard-case probability at p_max")
    p.add_argument("--metrics", default=None,
                   help=f"metrics JSONL path (or ${METRICS_ENV_VAR})")
    p.add_argument("--checkpoint-dir", default=None,
                   help=f"checkpoint directory (or ${CHECKPOINT_DIR_ENV_VAR})")
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from (config flags ignored)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on sampled widths")
    p.add_argument("checkpoint")
    p.add_argument("--n-tasks", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full-range", action="store_true",
                   help="sample the full width range instead of the hard band")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("rollout", help="roll one episode to a replay file")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--untrained", action="store_true",
                   help="use a freshly initialized policy")
    p.add_argument("--actions", default=None, metavar="FILE",
                   help="JSON array of [object, y, z, rotation] bins to "
                   "replay as a scripted episode")
    add_config_flags(p)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", dest="deterministic", action="store_false",
                   help="sample actions instead of taking the argmax")
    p.add_argument("--out", required=True, help="replay JSONL path")
    p.add_argument("--trace", default=None, metavar="FILE",
                   help="with --actions: also write the per-step "
                   "observation/reward/done trace as JSONL")
    p.set_defaults(func=_cmd_rollout)

    p = sub.add_parser("render", help="render a replay to SVG frames")
    p.add_argument("replay")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stem", default="frame")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("export", help="export a replay's instruction blueprint")
    p.add_argument("replay")
    p.add_argument("--out", required=True, help="blueprint JSONL path")
    p.add_argument("--verify", action="store_true",
                   help="re-simulate the blueprint and check the round-trip")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("inspect-checkpoint",
                       help="print a checkpoint's header and sizes")
    p.add_argument("checkpoint")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("env-server",
                       help="serve the environment over stdin/stdout, one "
                       "JSON request per line")
    p.set_defaults(func=_cmd_env_server)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BlockspanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
