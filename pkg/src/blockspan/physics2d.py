"""Planar rigid-body scene: rectangles under gravity with frictional contacts.

The world is the yz-plane with gravity along -z. A scene holds three static
bodies (floor, left cliff, right cliff) followed by N dynamic blocks. Blocks
can be teleported to an exact pose or back to a staging area; staged blocks
are excluded from contact generation and ray casts.

Body order is fixed: index 0 floor, 1 left cliff, 2 right cliff, blocks
from FIRST_BLOCK on. All state lives in struct-of-arrays buffers consumed
directly by the numba kernels, and stepping is bit-deterministic for
identical inputs.

Snapshot format (version 1, little-endian, fixed field order):

    magic          4 bytes  b"BS2D"
    version        uint16
    reserved       uint16   zero
    n_bodies       uint32
    step_count     uint64
    valley_width   float64
    cliff_height   float64
    gravity        float64
    per body (in index order):
        half_length, half_thickness, inv_mass, inv_inertia,
        pos_y, pos_z, angle, vel_y, vel_z, omega   (10 x float64)
        flags        uint8   bit 0: active (0 = staged)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

from . import _kernels
from .errors import (
    CheckpointError,
    ConfigurationError,
    DomainError,
    InvalidInstructionError,
)

FLOOR = 0
CLIFF_LEFT = 1
CLIFF_RIGHT = 2
FIRST_BLOCK = 3

_SNAPSHOT_MAGIC = b"BS2D"
_SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sHHIQddd")
_BODY = struct.Struct("<10dB")


class _StagedType:
    """Singleton teleport target meaning "return to the staging area"."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "STAGED"


STAGED = _StagedType()

Pose = Tuple[float, float, float]


@dataclass
class SceneConfig:
    """Geometry, material, and solver parameters for a scene."""

    n_blocks: int = 7
    block_half_length: float = 0.06
    block_half_thickness: float = 0.025
    block_mass: float = 0.15
    cliff_height: float = 0.24
    cliff_top_depth: float = 0.24
    width_range: Tuple[float, float] = (0.06, 0.42)
    floor_half_length: float = 5.0
    floor_half_thickness: float = 0.05
    staging_y: float = 2.0
    staging_pitch: float = 0.15
    gravity: float = 9.81
    dt: float = 1.0 / 240.0
    friction: float = 0.8
    solver_iterations: int = 8
    baumgarte: float = 0.2
    slop: float = 5.0e-4
    eps_v: float = 1.0e-3
    eps_omega: float = 1.0e-2
    quiet_steps: int = 10
    max_settle_steps: int = 2000

    @property
    def block_length(self) -> float:
        return 2.0 * self.block_half_length

    @property
    def block_thickness(self) -> float:
        return 2.0 * self.block_half_thickness

    def validate(self) -> None:
        if self.n_blocks < 1:
            raise ConfigurationError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.block_half_length <= 0 or self.block_half_thickness <= 0:
            raise ConfigurationError("block half extents must be positive")
        if self.block_mass <= 0:
            raise ConfigurationError(f"block_mass must be positive, got {self.block_mass}")
        if self.cliff_height <= 0 or self.cliff_top_depth <= 0:
            raise ConfigurationError("cliff dimensions must be positive")
        lo, hi = self.width_range
        if not (0 < lo <= hi):
            raise ConfigurationError(f"width_range must satisfy 0 < lo <= hi, got {self.width_range}")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.solver_iterations < 1 or self.quiet_steps < 1 or self.max_settle_steps < 1:
            raise ConfigurationError("iteration counts must be >= 1")


class Contact(NamedTuple):
    body_a: int
    body_b: int
    point: Tuple[float, float]
    normal: Tuple[float, float]
    penetration_depth: float


class SettleResult(NamedTuple):
    steps_used: int
    converged: bool


def _normalize_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass
class Scene:
    """Mutable simulation state; create with :func:`create_scene`.

    Array attributes are laid out per body index: ``pos`` (n, 2) holds
    (y, z) centers, ``half`` (n, 2) holds (half_length, half_thickness),
    ``alive`` is 0 for staged blocks and 1 otherwise. Static bodies have
    ``inv_mass == 0``.
    """

    config: SceneConfig
    valley_width: float
    pos: np.ndarray
    angle: np.ndarray
    vel: np.ndarray
    omega: np.ndarray
    half: np.ndarray
    inv_mass: np.ndarray
    inv_inertia: np.ndarray
    alive: np.ndarray
    step_count: int = 0
    _probe_out: np.ndarray = field(default_factory=lambda: np.empty(1), repr=False)

    # -- introspection --------------------------------------------------

    @property
    def n_bodies(self) -> int:
        return self.pos.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.n_bodies - FIRST_BLOCK

    @property
    def block_indices(self) -> range:
        return range(FIRST_BLOCK, self.n_bodies)

    def is_block(self, index: int) -> bool:
        return FIRST_BLOCK <= index < self.n_bodies

    def is_staged(self, index: int) -> bool:
        return self.alive[index] == 0

    @property
    def gap(self) -> Tuple[float, float]:
        """(left, right) y-coordinates of the inner cliff edges."""
        h = self.valley_width / 2.0
        return -h, h

    def staging_pose(self, index: int) -> Pose:
        """Parking pose for a block index (blocks laid in a row off-scene)."""
        k = index - FIRST_BLOCK
        c = self.config
        return (c.staging_y + k * c.staging_pitch, c.block_half_thickness, 0.0)

    # -- dynamics -------------------------------------------------------

    def step(self, n_steps: int = 1) -> None:
        """Advance exactly n_steps integration steps (no quiescence check)."""
        if n_steps <= 0:
            return
        c = self.config
        done, _ = _kernels.advance(
            self.pos, self.angle, self.vel, self.omega, self.half,
            self.inv_mass, self.inv_inertia, self.alive,
            c.dt, c.gravity, c.friction, c.solver_iterations,
            c.baumgarte, c.slop,
            n_steps, c.eps_v, c.eps_omega, c.quiet_steps, False)
        self.step_count += done

    def settle(self) -> SettleResult:
        """Step until all dynamic bodies are quiet for quiet_steps in a row.

        Gives up after max_settle_steps; ``converged`` is False in that
        case (the scene is left jittering, not rolled back).
        """
        c = self.config
        done, converged = _kernels.advance(
            self.pos, self.angle, self.vel, self.omega, self.half,
            self.inv_mass, self.inv_inertia, self.alive,
            c.dt, c.gravity, c.friction, c.solver_iterations,
            c.baumgarte, c.slop,
            c.max_settle_steps, c.eps_v, c.eps_omega, c.quiet_steps, True)
        self.step_count += done
        return SettleResult(done, bool(converged))

    def teleport(self, body_index: int, pose: Union[Pose, _StagedType]) -> None:
        """Set a block's pose exactly (or stage it); velocities are zeroed.

        Overlapping placements are accepted as-is — the contact solver
        resolves them over subsequent steps.
        """
        if not self.is_block(body_index):
            raise InvalidInstructionError(
                f"body {body_index} is not a teleportable block "
                f"(blocks start at index {FIRST_BLOCK})")
        if pose is STAGED:
            y, z, a = self.staging_pose(body_index)
            self.alive[body_index] = 0
        else:
            y, z, a = pose
            self.alive[body_index] = 1
        self.pos[body_index, 0] = y
        self.pos[body_index, 1] = z
        self.angle[body_index] = _normalize_angle(a)
        self.vel[body_index, 0] = 0.0
        self.vel[body_index, 1] = 0.0
        self.omega[body_index] = 0.0

    # -- queries --------------------------------------------------------

    def raycast_down(self, y: float) -> float:
        """Height of the highest non-staged surface on a downward ray at y.

        y must lie strictly inside the valley gap.
        """
        left, right = self.gap
        if not (left < y < right):
            raise DomainError(
                f"ray y={y} is outside the open valley gap ({left}, {right})")
        probe = np.array([y], dtype=np.float64)
        out = np.empty(1, dtype=np.float64)
        _kernels.surface_heights(self.pos, self.angle, self.half,
                                 self.alive, probe, out)
        return float(out[0])

    def surface_profile(self, probes: np.ndarray) -> np.ndarray:
        """Vectorized downward ray casts at the given y positions."""
        probes = np.ascontiguousarray(probes, dtype=np.float64)
        out = np.empty(probes.shape[0], dtype=np.float64)
        _kernels.surface_heights(self.pos, self.angle, self.half,
                                 self.alive, probes, out)
        return out

    def contacts(self) -> List[Contact]:
        """Current contact points among live bodies (static pairs skipped)."""
        n = self.n_bodies
        cap = n * n * 2
        c_a = np.empty(cap, np.int64)
        c_b = np.empty(cap, np.int64)
        c_py = np.empty(cap, np.float64)
        c_pz = np.empty(cap, np.float64)
        c_ny = np.empty(cap, np.float64)
        c_nz = np.empty(cap, np.float64)
        c_sep = np.empty(cap, np.float64)
        pts = np.empty((2, 2), np.float64)
        seps = np.empty(2, np.float64)
        wa = np.empty((2, 2), np.float64)
        wb = np.empty((2, 2), np.float64)
        m = _kernels._gather_contacts(
            self.pos, self.angle, self.half, self.inv_mass, self.alive,
            c_a, c_b, c_py, c_pz, c_ny, c_nz, c_sep, pts, seps, wa, wb)
        out = []
        for k in range(m):
            norm = math.hypot(c_ny[k], c_nz[k])
            out.append(Contact(
                int(c_a[k]), int(c_b[k]),
                (float(c_py[k]), float(c_pz[k])),
                (float(c_ny[k] / norm), float(c_nz[k] / norm)),
                float(max(-c_sep[k], 0.0))))
        return out

    def max_penetration(self) -> float:
        """Deepest pairwise overlap among live bodies, in meters."""
        return float(_kernels.max_penetration(
            self.pos, self.angle, self.half, self.inv_mass, self.alive))

    def kinetic_energy(self) -> float:
        """Total kinetic energy of live dynamic bodies."""
        total = 0.0
        for i in range(self.n_bodies):
            if self.inv_mass[i] > 0.0 and self.alive[i]:
                m = 1.0 / self.inv_mass[i]
                inertia = 1.0 / self.inv_inertia[i]
                total += 0.5 * m * (self.vel[i, 0] ** 2 + self.vel[i, 1] ** 2)
                total += 0.5 * inertia * self.omega[i] ** 2
        return total

    # -- lifecycle ------------------------------------------------------

    def copy(self) -> "Scene":
        return Scene(
            config=self.config,
            valley_width=self.valley_width,
            pos=self.pos.copy(),
            angle=self.angle.copy(),
            vel=self.vel.copy(),
            omega=self.omega.copy(),
            half=self.half.copy(),
            inv_mass=self.inv_mass.copy(),
            inv_inertia=self.inv_inertia.copy(),
            alive=self.alive.copy(),
            step_count=self.step_count)

    # -- snapshot serialization ------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(
            _SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, 0,
            self.n_bodies, self.step_count,
            self.valley_width, self.config.cliff_height, self.config.gravity)]
        for i in range(self.n_bodies):
            parts.append(_BODY.pack(
                self.half[i, 0], self.half[i, 1],
                self.inv_mass[i], self.inv_inertia[i],
                self.pos[i, 0], self.pos[i, 1], self.angle[i],
                self.vel[i, 0], self.vel[i, 1], self.omega[i],
                int(self.alive[i]) & 1))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, config: Optional[SceneConfig] = None) -> "Scene":
        if len(data) < _HEADER.size:
            raise CheckpointError("snapshot truncated: header incomplete")
        magic, version, _reserved, n_bodies, step_count, width, cliff_h, gravity = \
            _HEADER.unpack_from(data, 0)
        if magic != _SNAPSHOT_MAGIC:
            raise CheckpointError(f"bad snapshot magic {magic!r}")
        if version != _SNAPSHOT_VERSION:
            raise CheckpointError(f"unsupported snapshot version {version}")
        expected = _HEADER.size + n_bodies * _BODY.size
        if len(data) != expected:
            raise CheckpointError(
                f"snapshot length {len(data)} != expected {expected} "
                f"for {n_bodies} bodies")
        if config is None:
            config = SceneConfig()
        config = SceneConfig(**{**config.__dict__})
        config.cliff_height = cliff_h
        config.gravity = gravity
        config.n_blocks = max(n_bodies - FIRST_BLOCK, 0)

        pos = np.zeros((n_bodies, 2))
        angle = np.zeros(n_bodies)
        vel = np.zeros((n_bodies, 2))
        omega = np.zeros(n_bodies)
        half = np.zeros((n_bodies, 2))
        inv_mass = np.zeros(n_bodies)
        inv_inertia = np.zeros(n_bodies)
        alive = np.zeros(n_bodies, dtype=np.uint8)
        off = _HEADER.size
        for i in range(n_bodies):
            (half[i, 0], half[i, 1], inv_mass[i], inv_inertia[i],
             pos[i, 0], pos[i, 1], angle[i],
             vel[i, 0], vel[i, 1], omega[i],
             flags) = _BODY.unpack_from(data, off)
            alive[i] = flags & 1
            off += _BODY.size
        return cls(config=config, valley_width=width,
                   pos=pos, angle=angle, vel=vel, omega=omega, half=half,
                   inv_mass=inv_mass, inv_inertia=inv_inertia, alive=alive,
                   step_count=step_count)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, config: Optional[SceneConfig] = None) -> "Scene":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), config)


def create_scene(config: SceneConfig, valley_width: float) -> Scene:
    """Build floor + two cliffs + n_blocks staged blocks.

    Cliffs sit on the floor symmetrically about y = 0 with their inner
    edges gap = valley_width apart; the floor's top surface is at z = 0.
    """
    config.validate()
    lo, hi = config.width_range
    if not (lo <= valley_width <= hi):
        raise ConfigurationError(
            f"valley_width {valley_width} outside configured range [{lo}, {hi}]")

    n = FIRST_BLOCK + config.n_blocks
    pos = np.zeros((n, 2))
    angle = np.zeros(n)
    vel = np.zeros((n, 2))
    omega = np.zeros(n)
    half = np.zeros((n, 2))
    inv_mass = np.zeros(n)
    inv_inertia = np.zeros(n)
    alive = np.zeros(n, dtype=np.uint8)

    # floor: top surface at z = 0
    half[FLOOR] = (config.floor_half_length, config.floor_half_thickness)
    pos[FLOOR] = (0.0, -config.floor_half_thickness)
    alive[FLOOR] = 1

    # cliffs: resting on the floor, inner edges at -+ valley_width/2
    ch = config.cliff_height / 2.0
    cd = config.cliff_top_depth / 2.0
    for idx, side in ((CLIFF_LEFT, -1.0), (CLIFF_RIGHT, 1.0)):
        half[idx] = (cd, ch)
        pos[idx] = (side * (valley_width / 2.0 + cd), ch)
        alive[idx] = 1

    scene = Scene(config=config, valley_width=valley_width,
                  pos=pos, angle=angle, vel=vel, omega=omega, half=half,
                  inv_mass=inv_mass, inv_inertia=inv_inertia, alive=alive)

    hl, ht = config.block_half_length, config.block_half_thickness
    m = config.block_mass
    # rectangle moment of inertia about its center: m (w^2 + h^2) / 12
    inertia = m * ((2 * hl) ** 2 + (2 * ht) ** 2) / 12.0
    for i in scene.block_indices:
        half[i] = (hl, ht)
        inv_mass[i] = 1.0 / m
        inv_inertia[i] = 1.0 / inertia
        y, z, a = scene.staging_pose(i)
        pos[i] = (y, z)
        angle[i] = a
        alive[i] = 0
    return scene
