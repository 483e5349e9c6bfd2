"""SVG rendering: frame counts, annotations, and determinism."""

import xml.etree.ElementTree as ET

import numpy as np

from blockspan.env import BridgeEnv
from blockspan.physics2d import create_scene
from blockspan.policy import AttentionPolicy, NetworkConfig
from blockspan.presets import scaled_episode
from blockspan.render import render_frames, render_scene, save_frames
from blockspan.replay import ReplayRecorder, record_episode

SUCCESS_WIDTH = 0.096
PLACE_BRIDGE = (2, 31, 18, 0)
RESET_IDLE = (4, 64, 0, 0)


def _scripted_replay(actions, width=SUCCESS_WIDTH):
    env = BridgeEnv(scaled_episode())
    env.reset(seed=0, valley_width=width)
    recorder = ReplayRecorder(env, seed=0)
    for raw in actions:
        _, reward, _, info = env.step(raw)
        recorder.record_step(info, reward)
    return recorder.replay()


def _policy_replay(seed=0):
    episode = scaled_episode()
    env = BridgeEnv(episode)
    policy = AttentionPolicy(NetworkConfig.for_episode(episode), seed=seed)
    return record_episode(policy, env, valley_width=0.1, seed=seed,
                          deterministic=False,
                          rng=np.random.default_rng(seed))


def test_full_episode_renders_initial_frame_plus_one_per_step():
    replay = _policy_replay()
    assert len(render_frames(replay)) == 31


def test_empty_episode_renders_a_single_frame():
    env = BridgeEnv(scaled_episode())
    env.reset(seed=1, valley_width=0.1)
    replay = ReplayRecorder(env, seed=1).replay()
    assert len(render_frames(replay)) == 1


def test_every_frame_is_parseable_xml():
    for doc in render_frames(_policy_replay()):
        root = ET.fromstring(doc)
        assert root.tag.endswith("svg")


def test_rendering_is_deterministic():
    replay = _policy_replay(seed=4)
    assert render_frames(replay) == render_frames(replay)


def test_success_marker_appears_exactly_on_successful_frames():
    replay = _scripted_replay([PLACE_BRIDGE] + [RESET_IDLE] * 4)
    frames = render_frames(replay)
    assert "success-marker" not in frames[0]  # initial scene
    for frame, step in zip(frames[1:], replay.steps):
        assert ("success-marker" in frame) == step.success
    assert all(s.success for s in replay.steps)


def test_unsuccessful_frames_carry_no_marker():
    replay = _scripted_replay([RESET_IDLE] * 3)
    for frame in render_frames(replay):
        assert "success-marker" not in frame


def test_staged_blocks_are_not_drawn():
    replay = _scripted_replay([PLACE_BRIDGE])
    frames = render_frames(replay)
    # background + floor + two cliffs, then one more rect once placed
    assert frames[0].count("<rect") == 4
    assert frames[1].count("<rect") == 5


def test_probe_markers_and_reward_annotation_on_step_frames():
    replay = _scripted_replay([PLACE_BRIDGE])
    initial, stepped = render_frames(replay)
    assert initial.count("<circle") == 0
    assert stepped.count("<circle") == scaled_episode().n_probes
    assert "reward" in stepped
    assert "reward" not in initial


def test_rotation_shading_differs_between_flat_and_upright():
    scene = create_scene(scaled_episode().scene, SUCCESS_WIDTH)
    scene.teleport(3, (0.0, 0.2775, 0.0))
    flat = render_scene(scene)
    scene.teleport(3, (0.0, 0.2775, np.pi / 2))
    upright = render_scene(scene)
    flat_fill, upright_fill = "#e09f3e", "#3a7ca5"
    assert flat_fill in flat and upright_fill not in flat
    assert upright_fill in upright and flat_fill not in upright
    assert 'rotate(-90.00)' in upright


def test_save_frames_writes_numbered_files(tmp_path):
    replay = _scripted_replay([PLACE_BRIDGE, RESET_IDLE])
    paths = save_frames(replay, str(tmp_path / "frames"))
    assert len(paths) == 3
    assert paths[0].endswith("frame_000.svg")
    assert paths[-1].endswith("frame_002.svg")
    for p in paths:
        ET.parse(p)
