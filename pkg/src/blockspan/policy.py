"""Attention-based actor-critic over object-centric observations.

Rows of the observation matrix are embedded with a small MLP, mixed by a
stack of single-head self-attention blocks (residual + feed-forward, no
layer normalization), and read out by two heads: a pooled value estimate
and a factorized action distribution over (object, y bin, z bin, rotation).
The object branch masks the two cliff rows, and the placement branch pools
the per-object features with a trainable attention query after conditioning
on the object probabilities.

Two wiring variants exist: "shared" uses one trunk for both heads, "dual"
keeps separate policy and value trunks and attaches an auxiliary value head
to the policy trunk for distillation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .autodiff import ParamSet, Tensor, concat, no_grad
from .env import CLIFF_ROWS, N_OBS_FEATURES, EpisodeConfig
from .errors import ConfigurationError, DimensionError

VARIANTS = ("shared", "dual")


@dataclass
class NetworkConfig:
    """Shape of the actor-critic network."""

    n_rows: int
    y_bins: int
    z_bins: int
    rot_bins: int
    obs_features: int = N_OBS_FEATURES
    feature_dim: int = 64
    n_attention: int = 3
    embed_layers: int = 2
    variant: str = "shared"

    @classmethod
    def for_episode(cls, episode: EpisodeConfig, variant: str = "shared",
                    **overrides) -> "NetworkConfig":
        n_obj, n_y, n_z, n_rot = episode.action_cardinalities
        return cls(n_rows=n_obj, y_bins=n_y, z_bins=n_z, rot_bins=n_rot,
                   variant=variant, **overrides)

    def validate(self) -> None:
        if self.feature_dim <= 0:
            raise ConfigurationError(f"feature_dim must be > 0, got {self.feature_dim}")
        if self.n_attention < 1:
            raise ConfigurationError(f"n_attention must be >= 1, got {self.n_attention}")
        if self.embed_layers < 1:
            raise ConfigurationError(f"embed_layers must be >= 1, got {self.embed_layers}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_rows <= CLIFF_ROWS:
            raise ConfigurationError(f"n_rows must exceed {CLIFF_ROWS}, got {self.n_rows}")
        for name in ("y_bins", "z_bins", "rot_bins", "obs_features"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")


class ActionDistributions(NamedTuple):
    """Factorized per-head distributions; probs and log-probs share masking."""

    object_probs: Tensor
    y_probs: Tensor
    z_probs: Tensor
    rot_probs: Tensor
    object_log_probs: Tensor
    y_log_probs: Tensor
    z_log_probs: Tensor
    rot_log_probs: Tensor

    def probs(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self[:4]

    def log_probs(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self[4:]


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int,
                gain: float, dtype: np.dtype) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    # contiguous layout so a freshly built and a deserialized parameter use
    # the same BLAS path (transposed views round differently in matmul)
    return np.ascontiguousarray((gain * q).astype(dtype))


_LOGIT_GAIN = 0.01


class AttentionPolicy:
    """Actor-critic with factorized discrete action heads.

    Parameters and activations default to single precision, which roughly
    halves training step time; pass ``dtype=np.float64`` where gradient
    checks need the extra headroom.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0,
                 dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        if config.variant == "shared":
            self._policy_trunk = "net"
            self._build_trunk(rng, "net")
            self._build_policy_heads(rng, "net")
            self._build_value_head(rng, "net.value")
        else:
            self._policy_trunk = "pi"
            self._build_trunk(rng, "pi")
            self._build_policy_heads(rng, "pi")
            self._build_value_head(rng, "pi.aux")
            self._build_trunk(rng, "vf")
            self._build_value_head(rng, "vf.value")

    # -- construction -------------------------------------------------------

    def _linear(self, rng, name: str, fan_in: int, fan_out: int,
                gain: float = 1.0, bias: bool = True) -> None:
        self.params.add(f"{name}.w",
                        _orthogonal(rng, fan_in, fan_out, gain, self.dtype))
        if bias:
            self.params.add(f"{name}.b", np.zeros(fan_out, dtype=self.dtype))

    def _build_trunk(self, rng, prefix: str) -> None:
        cfg = self.config
        width = cfg.obs_features
        for i in range(cfg.embed_layers):
            self._linear(rng, f"{prefix}.embed{i}", width, cfg.feature_dim)
            width = cfg.feature_dim
        for i in range(cfg.n_attention):
            blk = f"{prefix}.att{i}"
            for part in ("q", "k", "v", "g"):
                self._linear(rng, f"{blk}.{part}", cfg.feature_dim, cfg.feature_dim)
            self._linear(rng, f"{blk}.ff0", cfg.feature_dim, cfg.feature_dim)
            self._linear(rng, f"{blk}.ff1", cfg.feature_dim, cfg.feature_dim)

    def _build_value_head(self, rng, name: str) -> None:
        d = self.config.feature_dim
        self._linear(rng, f"{name}0", d, d)
        self._linear(rng, f"{name}1", d, 1)

    def _build_policy_heads(self, rng, prefix: str) -> None:
        cfg = self.config
        d = cfg.feature_dim
        # a shared bias on the per-row object logit would be a softmax null
        # direction (zero gradient forever), so branch 1 is bias-free
        self._linear(rng, f"{prefix}.obj", d, 1, gain=_LOGIT_GAIN, bias=False)
        self.params.add(f"{prefix}.pool.q",
                        (rng.standard_normal((1, d)) / np.sqrt(d))
                        .astype(self.dtype))
        self._linear(rng, f"{prefix}.pool.k", d + 1, d)
        self._linear(rng, f"{prefix}.pool.v", d + 1, d)
        self._linear(rng, f"{prefix}.pool.g", d, d)
        for head, bins in (("y", cfg.y_bins), ("z", cfg.z_bins),
                           ("rot", cfg.rot_bins)):
            self._linear(rng, f"{prefix}.{head}0", d, d)
            self._linear(rng, f"{prefix}.{head}1", d, bins, gain=_LOGIT_GAIN)

    # -- forward pieces -----------------------------------------------------

    def _apply(self, name: str, x: Tensor) -> Tensor:
        w = self.params[f"{name}.w"]
        # fold row batches into one GEMM: a (B, R, I) @ (I, O) product would
        # otherwise dispatch B tiny per-row GEMMs forward and backward
        folded = x.ndim == 3
        if folded:
            batch, rows = x.shape[0], x.shape[1]
            x = x.reshape((batch * rows, x.shape[2]))
        out = x @ w
        if f"{name}.b" in self.params:
            out = out + self.params[f"{name}.b"]
        if folded:
            out = out.reshape((batch, rows, w.shape[1]))
        return out

    def _as_batch(self, obs) -> Tuple[Tensor, bool]:
        data = obs.data if isinstance(obs, Tensor) else obs
        data = np.asarray(data, dtype=self.dtype)
        squeeze = data.ndim == 2
        if squeeze:
            data = data[None]
        if data.ndim != 3 or data.shape[1:] != (self.config.n_rows,
                                                self.config.obs_features):
            raise DimensionError(
                f"observation batch must be (B, {self.config.n_rows}, "
                f"{self.config.obs_features}), got {data.shape}")
        return Tensor(data), squeeze

    def forward_features(self, obs: Tensor, trunk: Optional[str] = None) -> Tensor:
        """Embed rows and mix them through the attention stack: (B, R, D)."""
        cfg = self.config
        prefix = trunk or self._policy_trunk
        x = obs
        for i in range(cfg.embed_layers):
            x = self._apply(f"{prefix}.embed{i}", x).tanh()
        scale = 1.0 / np.sqrt(cfg.feature_dim)
        for i in range(cfg.n_attention):
            blk = f"{prefix}.att{i}"
            q = self._apply(f"{blk}.q", x)
            k = self._apply(f"{blk}.k", x)
            v = self._apply(f"{blk}.v", x)
            att = ((q @ k.transpose()) * scale).softmax(axis=-1) @ v
            x = x + self._apply(f"{blk}.g", att)
            ff = self._apply(f"{blk}.ff1", self._apply(f"{blk}.ff0", x).tanh())
            x = x + ff
        return x

    def _value_from(self, name: str, f: Tensor) -> Tensor:
        pooled = f.mean(axis=-2)
        hidden = self._apply(f"{name}0", pooled).tanh()
        return self._apply(f"{name}1", hidden).reshape(pooled.shape[0])

    def _object_mask(self, batch: int) -> np.ndarray:
        mask = np.zeros((batch, self.config.n_rows), dtype=bool)
        mask[:, :CLIFF_ROWS] = True
        return mask

    def policy_head(self, f: Tensor) -> ActionDistributions:
        cfg = self.config
        prefix = self._policy_trunk
        batch = f.shape[0]
        logits = self._apply(f"{prefix}.obj", f).reshape(batch, cfg.n_rows)
        logits = logits.masked_fill(self._object_mask(batch), -np.inf)
        object_probs = logits.softmax(axis=-1)
        object_log_probs = logits.log_softmax(axis=-1)

        h = concat([f, object_probs.reshape(batch, cfg.n_rows, 1)], axis=-1)
        k = self._apply(f"{prefix}.pool.k", h)
        v = self._apply(f"{prefix}.pool.v", h)
        weights = ((self.params[f"{prefix}.pool.q"] @ k.transpose())
                   * (1.0 / np.sqrt(cfg.feature_dim))).softmax(axis=-1)
        f_a = self._apply(f"{prefix}.pool.g", weights @ v).reshape(
            batch, cfg.feature_dim)

        heads = {}
        for head in ("y", "z", "rot"):
            hidden = self._apply(f"{prefix}.{head}0", f_a).tanh()
            head_logits = self._apply(f"{prefix}.{head}1", hidden)
            heads[head] = (head_logits.softmax(axis=-1),
                           head_logits.log_softmax(axis=-1))
        return ActionDistributions(
            object_probs, heads["y"][0], heads["z"][0], heads["rot"][0],
            object_log_probs, heads["y"][1], heads["z"][1], heads["rot"][1])

    # -- public API ----------------------------------------------------------

    def distributions(self, obs) -> ActionDistributions:
        batch, _ = self._as_batch(obs)
        return self.policy_head(self.forward_features(batch))

    def value(self, obs) -> Tensor:
        """Main value estimate V(s); the training target for L^V."""
        batch, _ = self._as_batch(obs)
        if self.config.variant == "shared":
            return self._value_from("net.value", self.forward_features(batch, "net"))
        return self._value_from("vf.value", self.forward_features(batch, "vf"))

    def aux_value(self, obs) -> Tensor:
        """Value estimate attached to the policy trunk (distillation target)."""
        batch, _ = self._as_batch(obs)
        if self.config.variant == "shared":
            return self._value_from("net.value", self.forward_features(batch, "net"))
        return self._value_from("pi.aux", self.forward_features(batch, "pi"))

    def forward(self, obs) -> Tuple[ActionDistributions, Tensor]:
        """Distributions plus main value, sharing trunk work where possible."""
        batch, _ = self._as_batch(obs)
        f = self.forward_features(batch, self._policy_trunk)
        dists = self.policy_head(f)
        if self.config.variant == "shared":
            value = self._value_from("net.value", f)
        else:
            value = self._value_from("vf.value", self.forward_features(batch, "vf"))
        return dists, value

    def sample_action(self, obs, rng: Optional[np.random.Generator] = None,
                      deterministic: bool = False) -> Tuple[np.ndarray, float]:
        """Draw one factorized action; returns (raw action, log-prob)."""
        with no_grad():
            dists = self.distributions(obs)
        action = np.empty(4, dtype=np.int64)
        log_prob = 0.0
        for i, (p, lp) in enumerate(zip(dists.probs(), dists.log_probs())):
            probs = p.data[0]
            if deterministic:
                idx = int(np.argmax(probs))
            else:
                cdf = np.cumsum(probs)
                idx = int(min(np.searchsorted(cdf, rng.random(), side="right"),
                              len(probs) - 1))
            action[i] = idx
            log_prob += float(lp.data[0, idx])
        return action, log_prob

    def evaluate_actions(self, obs_batch, action_batch) -> Tuple[Tensor, Tensor, Tensor]:
        """Per-sample log pi(a|s), total entropy, and value predictions."""
        actions = np.asarray(action_batch, dtype=np.int64)
        if actions.ndim != 2 or actions.shape[1] != 4:
            raise DimensionError(f"action batch must be (B, 4), got {actions.shape}")
        dists, values = self.forward(obs_batch)
        log_probs = None
        entropy = None
        mask = self._object_mask(actions.shape[0])
        for i, (p, lp) in enumerate(zip(dists.probs(), dists.log_probs())):
            lp_safe = lp.masked_fill(mask, 0.0) if i == 0 else lp
            component = lp_safe.gather(actions[:, i])
            head_entropy = -(p * lp_safe).sum(axis=-1)
            log_probs = component if log_probs is None else log_probs + component
            entropy = head_entropy if entropy is None else entropy + head_entropy
        return log_probs, entropy, values
