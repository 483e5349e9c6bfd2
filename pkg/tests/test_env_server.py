"""Line-protocol environment server: dispatch, parity, error mapping."""

import json
import subprocess
import sys

import numpy as np
import pytest

from blockspan.env import BridgeEnv
from blockspan.env_server import EnvServer, public_info
from blockspan.presets import scaled_episode

WIDTH = 0.096
PLACE_BRIDGE = [2, 31, 18, 0]
RESET_IDLE = [4, 64, 0, 0]


def _request(server, op, **fields):
    response = server.handle_line(json.dumps({"op": op, **fields}))
    assert "ok" in response, response
    return response["ok"]


def _error(server, line) -> dict:
    if not isinstance(line, str):
        line = json.dumps(line)
    response = server.handle_line(line)
    assert "error" in response, response
    return response["error"]


def _ready(preset="scaled", **overrides):
    server = EnvServer()
    init = _request(server, "init", preset=preset, overrides=overrides)
    return server, init


# -- init and space descriptors -----------------------------------------------


def test_init_reports_space_descriptors():
    server, init = _ready()
    episode = scaled_episode()
    assert init["observation_shape"] == [episode.n_objects, 14]
    assert init["action_cardinalities"] == list(episode.action_cardinalities)
    assert init["horizon"] == episode.horizon
    assert init["width_range"] == list(episode.scene.width_range)
    assert init["protocol"] == 1


def test_init_overrides_reshape_the_spaces():
    _, init = _ready(**{"episode.scene.n_blocks": "4"})
    assert init["observation_shape"] == [6, 14]
    assert init["action_cardinalities"][0] == 6


def test_second_init_rejected():
    server, _ = _ready()
    assert _error(server, {"op": "init", "preset": "scaled"})["type"] == "usage"


# -- parity with the in-process environment -----------------------------------


def test_reset_and_step_match_native_env_exactly():
    server, _ = _ready()
    env = BridgeEnv(scaled_episode())

    served = _request(server, "reset", seed=7, width=WIDTH)
    native = env.reset(seed=7, valley_width=WIDTH)
    assert np.array_equal(np.asarray(served["observation"]), native)

    for action in (PLACE_BRIDGE, RESET_IDLE, PLACE_BRIDGE):
        served = _request(server, "step", action=action)
        obs, reward, done, info = env.step(tuple(action))
        assert np.array_equal(np.asarray(served["observation"]), obs)
        assert served["reward"] == {
            "r_cons": reward.r_cons, "r_succ": reward.r_succ,
            "r_flat": reward.r_flat, "r_mat": reward.r_mat,
            "total": reward.total}
        assert served["done"] is done
        assert served["info"] == public_info(info)


def test_observation_payloads_are_fresh_copies():
    server, _ = _ready()
    first = _request(server, "reset", seed=1, width=WIDTH)["observation"]
    first[0][0] = 123.0  # mutate the returned payload
    second = _request(server, "reset", seed=1, width=WIDTH)["observation"]
    assert second[0][0] != 123.0


# -- error mapping -------------------------------------------------------------


@pytest.mark.parametrize("line,label", [
    ("{broken", "usage"),
    ('"just a string"', "usage"),
    ('{"noop": 1}', "usage"),
    ('{"op": "meditate"}', "usage"),
])
def test_malformed_requests_are_usage_errors(line, label):
    assert _error(EnvServer(), line)["type"] == label


def test_ops_before_init_are_usage_errors():
    for op in ("reset", "step", "render"):
        err = _error(EnvServer(), {"op": op})
        assert err["type"] == "usage"
        assert "init" in err["message"]
    # close is always legal so clients can tear down a failed startup
    assert _request(EnvServer(), "close") == {"closed": True}


def test_step_before_reset_is_usage_error():
    server, _ = _ready()
    assert _error(server, {"op": "step", "action": PLACE_BRIDGE})["type"] \
        == "usage"


def test_invalid_width_is_config_error():
    server, _ = _ready()
    err = _error(server, {"op": "reset", "width": 0.5})
    assert err["type"] == "config"


def test_out_of_range_bin_names_the_component():
    server, _ = _ready()
    _request(server, "reset", seed=0, width=WIDTH)
    for action, word in ([9, 0, 0, 0], "object"), ([2, 99, 0, 0], "y"), \
            ([2, 0, 99, 0], "z"), ([2, 0, 0, 9], "rotation"):
        err = _error(server, {"op": "step", "action": action})
        assert err["type"] == "invalid-instruction"
        assert word in err["message"]


def test_non_integer_action_is_usage_error():
    server, _ = _ready()
    _request(server, "reset", seed=0, width=WIDTH)
    for action in ([2, 31, 18], [2, 31, 18, 0.5], "nope", None):
        assert _error(server, {"op": "step", "action": action})["type"] \
            == "usage"


def test_every_op_after_close_is_an_error():
    server, _ = _ready()
    assert _request(server, "close") == {"closed": True}
    for op in ("init", "reset", "step", "stats", "close"):
        err = _error(server, {"op": op})
        assert err["type"] == "usage"
        assert "closed" in err["message"]


# -- render and stats ----------------------------------------------------------


def test_render_before_reset_errors_then_returns_svg():
    server, _ = _ready()
    assert _error(server, {"op": "render"})["type"] == "usage"
    _request(server, "reset", seed=0, width=WIDTH)
    assert _request(server, "render")["svg"].startswith("<svg")


def test_stats_counts_episodes_and_steps():
    server = EnvServer()
    stats = _request(server, "stats")
    assert stats["initialized"] is False and stats["rss_bytes"] > 0
    server, _ = _ready()
    _request(server, "reset", seed=0, width=WIDTH)
    _request(server, "step", action=PLACE_BRIDGE)
    _request(server, "step", action=RESET_IDLE)
    _request(server, "reset", seed=1, width=WIDTH)
    stats = _request(server, "stats")
    assert (stats["episodes"], stats["steps"]) == (2, 2)


# -- trace/server cross-check and the serve loop -------------------------------


def test_cli_trace_matches_served_transitions(tmp_path):
    from blockspan.cli import main
    actions = [PLACE_BRIDGE] + [RESET_IDLE] * 4
    actions_path = tmp_path / "actions.json"
    actions_path.write_text(json.dumps(actions))
    trace_path = tmp_path / "trace.jsonl"
    code = main(["rollout", "--actions", str(actions_path), "--preset",
                 "scaled", "--width", str(WIDTH), "--seed", "5", "--out",
                 str(tmp_path / "ep.jsonl"), "--trace", str(trace_path)])
    assert code == 0
    lines = [json.loads(l) for l in trace_path.read_text().splitlines()]
    header, reset, steps = lines[0], lines[1], lines[2:]
    assert header["format"] == "blockspan-trace" and header["version"] == 1

    server, _ = _ready()
    served_reset = _request(server, "reset", seed=5, width=WIDTH)
    assert served_reset["observation"] == reset["observation"]
    for record, action in zip(steps, actions):
        served = _request(server, "step", action=action)
        assert served["observation"] == record["observation"]
        assert served["reward"] == record["reward"]
        assert served["done"] == record["done"]
        assert served["info"] == record["info"]


def test_serve_loop_over_pipes_exits_cleanly_on_close():
    requests = [
        {"op": "init", "preset": "scaled"},
        {"op": "reset", "seed": 2, "width": WIDTH},
        {"op": "step", "action": PLACE_BRIDGE},
        {"op": "close"},
    ]
    proc = subprocess.run(
        [sys.executable, "-m", "blockspan", "env-server"],
        input="".join(json.dumps(r) + "\n" for r in requests),
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    responses = [json.loads(l) for l in proc.stdout.splitlines()]
    assert len(responses) == 4
    assert all("ok" in r for r in responses)
    assert responses[2]["ok"]["reward"]["r_succ"] == 1.0
    assert responses[3]["ok"] == {"closed": True}


def test_serve_loop_survives_errors_and_eof(tmp_path):
    lines = "{broken\n" + json.dumps({"op": "stats"}) + "\n"
    proc = subprocess.run(
        [sys.executable, "-m", "blockspan", "env-server"],
        input=lines, capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0  # EOF without close is a clean shutdown
    responses = [json.loads(l) for l in proc.stdout.splitlines()]
    assert responses[0]["error"]["type"] == "usage"
    assert responses[1]["ok"]["initialized"] is False
