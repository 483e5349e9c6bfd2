"""Line-oriented environment server for out-of-process clients.

Speaks newline-delimited JSON over stdin/stdout — one request object per
line, one response per line — so a foreign training loop in any language
can drive a single native environment instance through the standard
episodic surface: space descriptors, reset, step, render, close.

Requests are ``{"op": ..., ...}``; responses are ``{"ok": {...}}`` or
``{"error": {"type": ..., "message": ...}}``.  Ops:

    init    {preset?, overrides?}   -> space descriptors
    reset   {seed?, width?}         -> observation
    step    {action: [o, y, z, r]}  -> observation, reward, done, info
    render  {}                      -> current scene as an SVG string
    stats   {}                      -> process counters (rss_bytes, ...)
    close   {}                      -> acknowledged; the serve loop exits

``init`` must come first and exactly once; every op after ``close`` is a
usage error.  Observations are nested row-major float lists built fresh
per call, so a client can never alias live simulator state.  Error types
are stable strings (``usage``, ``config``, ``invalid-instruction``,
``data``, ``internal``) for clients to map back onto exception classes.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from typing import Dict, Optional, TextIO

from .env import BridgeEnv
from .errors import (BlockspanError, CheckpointError, ConfigurationError,
                     InvalidInstructionError, UsageError)
from .render import render_scene

PROTOCOL_VERSION = 1

_ERROR_TYPES = (
    (UsageError, "usage"),
    (ConfigurationError, "config"),
    (InvalidInstructionError, "invalid-instruction"),
    (CheckpointError, "data"),
    (BlockspanError, "internal"),
)

# step-info fields that serialize cleanly and mean something off-process
_INFO_FIELDS = ("success", "ever_success", "blocks_in_valley",
                "valley_width", "t", "settle_steps", "settle_converged")


def public_info(info: Dict) -> Dict:
    """The JSON-safe, client-facing slice of a step's info dict."""
    return {key: info[key] for key in _INFO_FIELDS}


def _rss_bytes() -> int:
    try:
        with open("/proc/self/statm", encoding="ascii") as fh:
            return int(fh.read().split()[1]) * os.sysconf("SC_PAGESIZE")
    except (OSError, ValueError, IndexError):
        import resource
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


class EnvServer:
    """One environment instance behind a request/response dispatcher."""

    def __init__(self):
        self.env: Optional[BridgeEnv] = None
        self.closed = False
        self.episodes = 0
        self.steps = 0

    # -- dispatch -----------------------------------------------------------

    def handle_line(self, line: str) -> Dict:
        """Parse and dispatch one request line; never raises."""
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            return _error("usage", "request is not valid JSON")
        if not isinstance(request, dict) or "op" not in request:
            return _error("usage", 'request must be an object with an "op"')
        try:
            return {"ok": self.handle(request)}
        except BlockspanError as err:
            for cls, label in _ERROR_TYPES:
                if isinstance(err, cls):
                    return _error(label, str(err))
            raise AssertionError("unreachable")  # BlockspanError is listed

    def handle(self, request: Dict) -> Dict:
        op = request["op"]
        if self.closed:
            raise UsageError(f"{op!r} requested on a closed server")
        ops = {"init": self._op_init, "reset": self._op_reset,
               "step": self._op_step, "render": self._op_render,
               "stats": self._op_stats, "close": self._op_close}
        if op not in ops:
            raise UsageError(f"unknown op {op!r}; expected one of "
                             f"{sorted(ops)}")
        if op in ("reset", "step", "render") and self.env is None:
            raise UsageError(f"{op!r} requested before 'init'")
        return ops[op](request)

    # -- ops ------------------------------------------------------------------

    def _op_init(self, request: Dict) -> Dict:
        if self.env is not None:
            raise UsageError("server is already initialized")
        from .cli import apply_setting, load_preset
        bundle = load_preset(request.get("preset", "full"))
        overrides = request.get("overrides") or {}
        if not isinstance(overrides, dict):
            raise UsageError("overrides must be an object of path -> value")
        for path, value in overrides.items():
            bundle = apply_setting(bundle, path, str(value))
        config = bundle.episode
        config.validate()
        self.env = BridgeEnv(config)
        return {
            "protocol": PROTOCOL_VERSION,
            "observation_shape": [config.n_objects, 14],
            "action_cardinalities": list(config.action_cardinalities),
            "horizon": config.horizon,
            "width_range": list(config.scene.width_range),
        }

    def _op_reset(self, request: Dict) -> Dict:
        seed = request.get("seed")
        width = request.get("width")
        observation = self.env.reset(
            seed=None if seed is None else int(seed),
            valley_width=None if width is None else float(width))
        self.episodes += 1
        return {"observation": observation.tolist()}

    def _op_step(self, request: Dict) -> Dict:
        action = request.get("action")
        if (not isinstance(action, list) or len(action) != 4
                or not all(isinstance(v, int) for v in action)):
            raise UsageError(f"action must be four integer bins, got "
                             f"{action!r}")
        observation, reward, done, info = self.env.step(tuple(action))
        self.steps += 1
        return {"observation": observation.tolist(),
                "reward": dataclasses.asdict(reward),
                "done": bool(done),
                "info": public_info(info)}

    def _op_render(self, request: Dict) -> Dict:
        if self.env.scene is None:
            raise UsageError("'render' requested before the first reset")
        return {"svg": render_scene(self.env.scene)}

    def _op_stats(self, request: Dict) -> Dict:
        return {"rss_bytes": _rss_bytes(), "episodes": self.episodes,
                "steps": self.steps, "initialized": self.env is not None}

    def _op_close(self, request: Dict) -> Dict:
        self.closed = True
        return {"closed": True}


def _error(label: str, message: str) -> Dict:
    return {"error": {"type": label, "message": message}}


def serve(stdin: Optional[TextIO] = None,
          stdout: Optional[TextIO] = None) -> int:
    """Serve one client until close or end of input."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    server = EnvServer()
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(json.dumps(server.handle_line(line)) + "\n")
        stdout.flush()
        if server.closed:
            break
    return 0
