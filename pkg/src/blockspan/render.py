"""SVG rendering of replays.

Each frame is a standalone SVG document: frame 0 shows the freshly built
scene, then one frame per executed step shows the settled result with
probe-height markers and the reward breakdown. Staged blocks are parked
far off-scene and are not drawn. Strings are assembled with fixed float
formatting so the same replay always renders byte-identical frames.
"""

from __future__ import annotations

import math
import os
from typing import List, Optional

from .env import RewardBreakdown, probe_positions
from .physics2d import CLIFF_LEFT, FLOOR, Scene
from .replay import Replay

_STATIC_FILL = {FLOOR: "#8d99ae"}
_CLIFF_FILL = "#5c677d"
_FLAT_FILL = "#e09f3e"
_UPRIGHT_FILL = "#3a7ca5"
_PROBE_FILL = "#d62828"
_SUCCESS_FILL = "#2a9d34"


class _Viewport:
    """Maps world (y right, z up) meters to SVG pixel coordinates."""

    def __init__(self, scene: Scene, width_px: int = 720):
        cfg = scene.config
        pad = 2.0 * cfg.block_length
        self.y_min = -(scene.valley_width / 2.0 + cfg.cliff_top_depth + pad)
        self.y_max = -self.y_min
        self.z_min = -4.0 * cfg.floor_half_thickness
        self.z_max = cfg.cliff_height + 4.0 * cfg.block_length
        self.width = width_px
        self.scale = width_px / (self.y_max - self.y_min)
        self.height = int(math.ceil((self.z_max - self.z_min) * self.scale))

    def x(self, y: float) -> float:
        return (y - self.y_min) * self.scale

    def y(self, z: float) -> float:
        return (self.z_max - z) * self.scale

    def length(self, meters: float) -> float:
        return meters * self.scale


def _rect(view: _Viewport, cy: float, cz: float, half_l: float,
          half_t: float, angle: float, fill: str) -> str:
    w, h = view.length(2.0 * half_l), view.length(2.0 * half_t)
    px, py = view.x(cy), view.y(cz)
    # SVG rotates clockwise in screen coordinates; world angles are
    # counter-clockwise with z up, so the sign flips
    deg = -math.degrees(angle)
    return (f'<rect x="{-w / 2.0:.2f}" y="{-h / 2.0:.2f}" '
            f'width="{w:.2f}" height="{h:.2f}" fill="{fill}" '
            f'stroke="#1d2433" stroke-width="1" '
            f'transform="translate({px:.2f} {py:.2f}) rotate({deg:.2f})"/>')


def _block_fill(angle: float) -> str:
    return _UPRIGHT_FILL if abs(math.sin(angle)) > 0.5 else _FLAT_FILL


def render_scene(scene: Scene, heights: Optional[List[float]] = None,
                 reward: Optional[RewardBreakdown] = None,
                 success: bool = False, caption: str = "") -> str:
    """One SVG document for a scene state."""
    view = _Viewport(scene)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{view.width}" height="{view.height}" '
        f'viewBox="0 0 {view.width} {view.height}">',
        f'<rect width="{view.width}" height="{view.height}" fill="#f4f1ea"/>',
    ]
    for i in range(scene.n_bodies):
        if scene.is_staged(i):
            continue
        if scene.is_block(i):
            fill = _block_fill(float(scene.angle[i]))
        else:
            fill = _STATIC_FILL.get(i, _CLIFF_FILL)
        parts.append(_rect(view, float(scene.pos[i, 0]),
                           float(scene.pos[i, 1]),
                           float(scene.half[i, 0]), float(scene.half[i, 1]),
                           float(scene.angle[i]), fill))
    if heights is not None:
        probes = probe_positions(scene.valley_width, len(heights))
        for y, h in zip(probes, heights):
            parts.append(f'<circle cx="{view.x(float(y)):.2f}" '
                         f'cy="{view.y(float(h)):.2f}" r="2.5" '
                         f'fill="{_PROBE_FILL}"/>')
    texts = []
    if caption:
        texts.append(caption)
    if reward is not None:
        texts.append(f"reward {reward.total:+.4f} "
                     f"(cons {reward.r_cons:.3f} succ {reward.r_succ:.3f} "
                     f"flat {reward.r_flat:.3f} mat {reward.r_mat:.3f})")
    if texts:
        parts.append(f'<text x="10" y="20" font-family="monospace" '
                     f'font-size="13" fill="#1d2433">'
                     f'{" | ".join(texts)}</text>')
    if success:
        parts.append(f'<g id="success-marker"><text x="10" y="40" '
                     f'font-family="monospace" font-size="13" '
                     f'font-weight="bold" fill="{_SUCCESS_FILL}">'
                     f'bridged</text></g>')
    parts.append("</svg>")
    return "\n".join(parts)


def render_frames(replay: Replay) -> List[str]:
    """SVG documents for a whole replay: the initial scene plus one frame
    per step (an unstepped episode renders a single frame)."""
    config = replay.episode_config.scene
    frames = [render_scene(Scene.from_bytes(replay.initial_snapshot, config),
                           caption=f"w={replay.valley_width:.3f}m")]
    for s in replay.steps:
        frames.append(render_scene(
            s.scene(config), heights=s.heights, reward=s.reward,
            success=s.success,
            caption=f"step {s.step + 1} | w={replay.valley_width:.3f}m"))
    return frames


def save_frames(replay: Replay, out_dir: str, stem: str = "frame") -> List[str]:
    """Write every frame as ``<stem>_###.svg``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, doc in enumerate(render_frames(replay)):
        path = os.path.join(out_dir, f"{stem}_{i:03d}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(doc)
        paths.append(path)
    return paths
