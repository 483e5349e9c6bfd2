"""Bridge-building MDP over the planar simulator.

One episode: a valley of sampled width, N staged blocks, T instruction
steps. Each step decodes a factorized discrete action into a pick-and-place
instruction, teleports the block, settles the scene, and scores the
resulting surface with downward ray casts.

Observation rows are [left cliff, right cliff, block_0 .. block_{N-1}],
each a 14-vector: [pos(3), euler(3), lin_vel(3), ang_vel(3), type, t/T]
with planar quantities embedded as pos = (0, y, z), euler = (angle, 0, 0),
lin_vel = (0, vy, vz), ang_vel = (omega, 0, 0). Staged blocks have their
first 12 entries replaced by the reset token.

Action layout: (object_bin, y_bin, z_bin, rot_bin). Object bins address
observation rows (cliff rows are masked by the policy and rejected here);
the last y bin is the dedicated reset bin; remaining y/z bins map linearly
onto the placement region; rotation bins map onto configured angles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from .errors import ConfigurationError, InvalidInstructionError, UsageError
from .physics2d import FIRST_BLOCK, STAGED, Scene, SceneConfig, create_scene

N_OBS_FEATURES = 14
RESET_TOKEN = -1.0
CLIFF_ROWS = 2


class _ResetTarget:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "RESET"


RESET = _ResetTarget()


class Placement(NamedTuple):
    y: float
    z: float
    rotation_bin: int


@dataclass(frozen=True)
class Instruction:
    """Decoded action: put object_id at a placement, or stage it."""

    object_id: int
    target: Union[Placement, _ResetTarget]

    @property
    def is_reset(self) -> bool:
        return self.target is RESET


@dataclass(frozen=True)
class RewardBreakdown:
    r_cons: float
    r_succ: float
    r_flat: float
    r_mat: float
    total: float


@dataclass
class EpisodeConfig:
    """Episode shape, reward coefficients, and action discretization."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    horizon: int = 30
    n_probes: int = 21
    gamma: float = 0.97
    c_cons: float = 0.05
    c_succ: float = 0.1
    c_flat: float = 1.5
    c_mat: float = 0.1
    flat_margin: float = 0.1
    # heights must clear (cliff height + block thickness - success_margin);
    # the margin absorbs contact-slop sink of a resting flat deck
    success_margin: float = 0.005
    n_y_bins: int = 64
    n_z_bins: int = 32
    rotations: Tuple[float, ...] = (0.0, math.pi / 2)

    @property
    def n_blocks(self) -> int:
        return self.scene.n_blocks

    @property
    def n_objects(self) -> int:
        return self.scene.n_blocks + CLIFF_ROWS

    @property
    def reset_bin(self) -> int:
        return self.n_y_bins

    @property
    def action_cardinalities(self) -> Tuple[int, int, int, int]:
        return (self.n_objects, self.n_y_bins + 1, self.n_z_bins,
                len(self.rotations))

    @property
    def success_threshold(self) -> float:
        return (self.scene.cliff_height + self.scene.block_thickness
                - self.success_margin)

    def validate(self) -> None:
        self.scene.validate()
        if self.horizon <= 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if self.n_probes < 2:
            raise ConfigurationError(f"need at least 2 probes, got {self.n_probes}")
        if self.n_y_bins < 1 or self.n_z_bins < 1 or not self.rotations:
            raise ConfigurationError("action heads need at least one bin each")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError(f"gamma must be in (0, 1], got {self.gamma}")


def probe_positions(valley_width: float, n_probes: int) -> np.ndarray:
    """Evenly spaced ray positions, endpoints inset half a spacing from
    the cliff edges so every probe is strictly inside the gap."""
    spacing = valley_width / n_probes
    return (-valley_width / 2.0) + spacing * (np.arange(n_probes) + 0.5)


def encode_observation(scene: Scene, t: int, horizon: int) -> np.ndarray:
    """Object rows (2 cliffs then blocks) as an (N+2, 14) float matrix."""
    n_rows = CLIFF_ROWS + scene.n_blocks
    obs = np.zeros((n_rows, N_OBS_FEATURES))
    for row in range(n_rows):
        body = row + 1  # cliffs are bodies 1 and 2, blocks follow
        is_block = row >= CLIFF_ROWS
        if is_block and scene.is_staged(body):
            obs[row, :12] = RESET_TOKEN
        else:
            obs[row, 1] = scene.pos[body, 0]
            obs[row, 2] = scene.pos[body, 1]
            obs[row, 3] = scene.angle[body]
            obs[row, 7] = scene.vel[body, 0]
            obs[row, 8] = scene.vel[body, 1]
            obs[row, 9] = scene.omega[body]
        obs[row, 12] = 1.0 if is_block else 0.0
        obs[row, 13] = t / horizon
    return obs


def compute_heights(scene: Scene, n_probes: int) -> np.ndarray:
    """Downward ray-cast surface heights at the standard probe grid."""
    return scene.surface_profile(probe_positions(scene.valley_width, n_probes))


def count_blocks_in_valley(scene: Scene) -> int:
    """Non-staged blocks whose center lies strictly between the cliffs."""
    left, right = scene.gap
    count = 0
    for i in scene.block_indices:
        if not scene.is_staged(i) and left < scene.pos[i, 0] < right:
            count += 1
    return count


def compute_reward(heights: np.ndarray, used_blocks: int,
                   config: EpisodeConfig) -> RewardBreakdown:
    """Score a settled scene from its probe heights."""
    threshold = config.success_threshold
    above = heights > threshold
    r_cons = float(np.count_nonzero(above)) / len(heights)
    r_succ = 1.0 if above.all() else 0.0
    if r_cons == 1.0:
        roughness = float(np.abs(np.diff(heights)).sum())
        r_flat = max(config.flat_margin - roughness, 0.0)
        r_mat = 1.0 - used_blocks / config.n_blocks
    else:
        r_flat = 0.0
        r_mat = 0.0
    total = (config.c_cons * r_cons + config.c_succ * r_succ
             + config.c_flat * r_flat + config.c_mat * r_mat)
    return RewardBreakdown(r_cons, r_succ, r_flat, r_mat, total)


def is_success(scene: Scene, config: EpisodeConfig) -> bool:
    """True iff every probe height strictly clears the success threshold."""
    return bool((compute_heights(scene, config.n_probes)
                 > config.success_threshold).all())


class BridgeEnv:
    """Episodic environment; one instance per worker, independently seeded."""

    def __init__(self, config: Optional[EpisodeConfig] = None, seed: int = 0):
        self.config = config if config is not None else EpisodeConfig()
        self.config.validate()
        self.rng = np.random.default_rng(seed)
        self.scene: Optional[Scene] = None
        self.t = 0
        self.done = True
        self.ever_success = False

    # -- episode lifecycle ------------------------------------------------

    def reset(self, seed: Optional[int] = None,
              valley_width: Optional[float] = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if valley_width is None:
            lo, hi = self.config.scene.width_range
            valley_width = float(self.rng.uniform(lo, hi))
        self.scene = create_scene(replace(self.config.scene), valley_width)
        self.t = 0
        self.done = False
        self.ever_success = False
        return self._observe()

    def _observe(self) -> np.ndarray:
        return encode_observation(self.scene, self.t, self.config.horizon)

    # -- action plumbing ----------------------------------------------------

    def decode_action(self, raw) -> Instruction:
        """Map (object_bin, y_bin, z_bin, rot_bin) onto an Instruction.

        y/z bin centers are spread linearly over the placement region
        y in [-w/2 - L, w/2 + L], z in (0, cliff_height + 2L]; the last
        y bin requests a reset.
        """
        object_bin, y_bin, z_bin, rot_bin = (int(v) for v in raw)
        cfg = self.config
        n_obj, n_y, n_z, n_rot = cfg.action_cardinalities
        if not 0 <= object_bin < n_obj:
            raise InvalidInstructionError(f"object bin {object_bin} out of range")
        if object_bin < CLIFF_ROWS:
            raise InvalidInstructionError(f"object bin {object_bin} addresses a cliff")
        if not 0 <= y_bin < n_y:
            raise InvalidInstructionError(f"y bin {y_bin} out of range")
        if not 0 <= z_bin < n_z:
            raise InvalidInstructionError(f"z bin {z_bin} out of range")
        if not 0 <= rot_bin < n_rot:
            raise InvalidInstructionError(f"rotation bin {rot_bin} out of range")

        object_id = object_bin - CLIFF_ROWS
        if y_bin == cfg.reset_bin:
            return Instruction(object_id, RESET)
        half_w = self.scene.valley_width / 2.0
        length = cfg.scene.block_length
        y_lo, y_hi = -half_w - length, half_w + length
        z_hi = cfg.scene.cliff_height + 2.0 * length
        y = y_lo + (y_bin + 0.5) * (y_hi - y_lo) / cfg.n_y_bins
        z = (z_bin + 0.5) * z_hi / cfg.n_z_bins
        return Instruction(object_id, Placement(y, z, rot_bin))

    def object_mask(self) -> np.ndarray:
        """Selectable observation rows (cliffs excluded)."""
        mask = np.ones(self.config.n_objects, dtype=bool)
        mask[:CLIFF_ROWS] = False
        return mask

    def apply_instruction(self, instruction: Instruction) -> None:
        body = FIRST_BLOCK + instruction.object_id
        if instruction.is_reset:
            self.scene.teleport(body, STAGED)
        else:
            p = instruction.target
            angle = self.config.rotations[p.rotation_bin]
            self.scene.teleport(body, (p.y, p.z, angle))

    # -- transition ---------------------------------------------------------

    def step(self, raw_action):
        """Decode, teleport, settle, score. Returns (obs, reward, done, info)."""
        if self.done:
            raise UsageError("step() called on a finished episode; call reset()")
        instruction = self.decode_action(raw_action)
        self.apply_instruction(instruction)
        settle = self.scene.settle()
        heights = compute_heights(self.scene, self.config.n_probes)
        used = count_blocks_in_valley(self.scene)
        reward = compute_reward(heights, used, self.config)
        success = reward.r_succ == 1.0
        self.ever_success = self.ever_success or success
        self.t += 1
        self.done = self.t >= self.config.horizon
        info = {
            "instruction": instruction,
            "settle_steps": settle.steps_used,
            "settle_converged": settle.converged,
            "success": success,
            "ever_success": self.ever_success,
            "blocks_in_valley": used,
            "valley_width": self.scene.valley_width,
            "t": self.t,
        }
        return self._observe(), reward, self.done, info
