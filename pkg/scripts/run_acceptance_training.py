#!/usr/bin/env python3
"""Train the policies the acceptance suite compares.

Three arms on the scaled preset, three seeds each, evaluated periodically
with 100 deterministic episodes over the full width range and another 100
over the hard band:

* ``ppg-shared`` (adaptive curriculum) — the learning run; stops early
  once full-range success >= 0.70 and hard-band success >= 0.50.
* ``ppo-dual`` (adaptive curriculum) — ablation reference; stops early
  once hard-band success >= 0.50 (the ablation compares hard-band
  crossings, so the arm must run until it crosses or spends the budget).
* ``ppg-fixed`` (curriculum pinned at p_max) — difficulty baseline;
  stops early once hard-band success >= 0.50.

Every arm is capped at the step budget. Results accumulate in
``<cache-dir>/state.json`` next to each arm's final checkpoint and
metrics stream; finished arms are skipped on re-runs, so the script is
safe to interrupt and resume.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from blockspan.evaluation import evaluate_policy  # noqa: E402
from blockspan.presets import (scaled_curriculum, scaled_episode,  # noqa: E402
                               scaled_train)
from blockspan.trainer import Trainer  # noqa: E402

FULL_EVAL_SEED = 97
HARD_EVAL_SEED = 193


@dataclass(frozen=True)
class Arm:
    name: str
    algorithm: str
    variant: str
    adaptive: bool
    stop: Callable[[Dict], bool]

    def key(self, seed: int) -> str:
        return f"{self.name}-s{seed}"


ARMS = [
    Arm("ppg-shared", "ppg", "shared", True,
        stop=lambda point: point["full"] >= 0.70 and point["hard"] >= 0.50),
    Arm("ppo-dual", "ppo", "dual", True,
        stop=lambda point: point["hard"] >= 0.50),
    Arm("ppg-fixed", "ppg", "shared", False,
        stop=lambda point: point["hard"] >= 0.50),
]


def load_state(path: str) -> Dict:
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {"arms": {}}


def save_state(path: str, state: Dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(state, fh, indent=2)
    os.replace(tmp, path)


def run_arm(arm: Arm, seed: int, args, state: Dict, state_path: str) -> None:
    key = arm.key(seed)
    entry = state["arms"].get(key)
    if entry and entry.get("status") == "done" and not args.force:
        print(f"[{key}] cached ({entry['steps']} steps, "
              f"full={entry['curve'][-1]['full']:.2f} "
              f"hard={entry['curve'][-1]['hard']:.2f}) — skipping")
        return

    arm_dir = os.path.join(args.cache_dir, key)
    os.makedirs(arm_dir, exist_ok=True)
    train = scaled_train(algorithm=arm.algorithm, total_steps=args.budget,
                         checkpoint_interval=0)
    trainer = Trainer(train, episode_config=scaled_episode(),
                      curriculum_config=scaled_curriculum(),
                      variant=arm.variant, seed=seed,
                      metrics_path=os.path.join(arm_dir, "metrics.jsonl"),
                      checkpoint_dir=arm_dir,
                      adaptive_curriculum=arm.adaptive)
    hard_band = scaled_curriculum().hard_band
    curve: List[Dict] = []
    entry = {"arm": arm.name, "algorithm": arm.algorithm,
             "variant": arm.variant, "adaptive": arm.adaptive, "seed": seed,
             "status": "running", "curve": curve,
             "checkpoint": os.path.join(arm_dir, "checkpoint_final.ckpt")}
    state["arms"][key] = entry
    started = time.time()

    def evaluate(step: int) -> Dict:
        full = evaluate_policy(trainer.policy, trainer.episode_config,
                               n_tasks=args.eval_tasks, seed=FULL_EVAL_SEED)
        hard = evaluate_policy(trainer.policy, trainer.episode_config,
                               n_tasks=args.eval_tasks, seed=HARD_EVAL_SEED,
                               width_range=hard_band, hard_band_only=True)
        point = {"step": step, "full": full.success_rate,
                 "hard": hard.success_rate}
        curve.append(point)
        entry["steps"] = trainer.global_steps
        save_state(state_path, state)
        print(f"[{key}] step {step:>8}  full={point['full']:.2f}  "
              f"hard={point['hard']:.2f}  p={trainer.curriculum.p:.2f}  "
              f"({time.time() - started:6.0f}s)", flush=True)
        return point

    def stop_fn(tr: Trainer, record: Dict) -> bool:
        if record["iteration"] % args.eval_every != 0:
            return False
        return arm.stop(evaluate(record["step"]))

    trainer.run(stop_fn=stop_fn)
    # make sure the stored curve ends at the final parameters
    if not curve or curve[-1]["step"] != trainer.global_steps:
        evaluate(trainer.global_steps)
    entry["status"] = "done"
    entry["steps"] = trainer.global_steps
    entry["wall_seconds"] = round(time.time() - started, 1)
    save_state(state_path, state)
    trainer.close()
    print(f"[{key}] done at {trainer.global_steps} steps "
          f"in {entry['wall_seconds']:.0f}s", flush=True)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cache-dir", default="artifacts/acceptance")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--budget", type=int, default=2_000_000)
    parser.add_argument("--eval-every", type=int, default=25,
                        help="iterations between evaluation points")
    parser.add_argument("--eval-tasks", type=int, default=100)
    parser.add_argument("--arms", nargs="+",
                        default=[a.name for a in ARMS],
                        choices=[a.name for a in ARMS])
    parser.add_argument("--force", action="store_true",
                        help="retrain arms already marked done")
    args = parser.parse_args(argv)

    os.makedirs(args.cache_dir, exist_ok=True)
    state_path = os.path.join(args.cache_dir, "state.json")
    state = load_state(state_path)
    for arm in ARMS:
        if arm.name not in args.arms:
            continue
        for seed in args.seeds:
            run_arm(arm, seed, args, state, state_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
