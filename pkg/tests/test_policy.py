"""Structural and distributional checks for the attention policy."""

import numpy as np
import pytest

from blockspan.autodiff import ParamSet
from blockspan.env import CLIFF_ROWS, EpisodeConfig
from blockspan.errors import ConfigurationError, DimensionError
from blockspan.policy import ActionDistributions, AttentionPolicy, NetworkConfig


def _config(variant="shared", **overrides):
    base = dict(n_rows=9, y_bins=65, z_bins=32, rot_bins=2, variant=variant)
    base.update(overrides)
    return NetworkConfig(**base)


def _tiny_config(variant="shared"):
    return NetworkConfig(n_rows=4, y_bins=5, z_bins=3, rot_bins=2,
                         feature_dim=8, n_attention=1, variant=variant)


def _random_obs(rng, n_rows=9, batch=None):
    shape = (n_rows, 14) if batch is None else (batch, n_rows, 14)
    return rng.standard_normal(shape)


def _zero_logit_heads(policy):
    prefix = "net" if policy.config.variant == "shared" else "pi"
    for name in (f"{prefix}.obj.w", f"{prefix}.y1.w", f"{prefix}.y1.b",
                 f"{prefix}.z1.w", f"{prefix}.z1.b",
                 f"{prefix}.rot1.w", f"{prefix}.rot1.b"):
        policy.params[name].data[:] = 0.0


def test_for_episode_matches_action_cardinalities():
    cfg = NetworkConfig.for_episode(EpisodeConfig())
    assert (cfg.n_rows, cfg.y_bins, cfg.z_bins, cfg.rot_bins) == (9, 65, 32, 2)
    assert cfg.feature_dim == 64
    assert cfg.n_attention == 3
    assert cfg.embed_layers == 2


@pytest.mark.parametrize("bad", [
    dict(feature_dim=0), dict(n_attention=0), dict(embed_layers=0),
    dict(variant="both"), dict(n_rows=2), dict(y_bins=0),
])
def test_config_validation_rejects(bad):
    with pytest.raises(ConfigurationError):
        _config(**bad).validate()


def test_features_have_expected_shape():
    policy = AttentionPolicy(_config(), seed=0)
    obs, _ = policy._as_batch(_random_obs(np.random.default_rng(0)))
    f = policy.forward_features(obs)
    assert f.shape == (1, 9, 64)


def test_features_are_permutation_equivariant():
    policy = AttentionPolicy(_config(), seed=1, dtype=np.float64)
    rng = np.random.default_rng(1)
    obs = _random_obs(rng)
    perm = np.arange(9)
    perm[3], perm[7] = perm[7], perm[3]
    batch, _ = policy._as_batch(obs)
    batch_p, _ = policy._as_batch(obs[perm])
    f = policy.forward_features(batch).data[0]
    f_p = policy.forward_features(batch_p).data[0]
    assert np.allclose(f[perm], f_p, atol=1e-10)


def test_zero_weights_make_rows_identical():
    policy = AttentionPolicy(_config(), seed=2)
    for t in policy.params.tensors():
        t.data[:] = 0.0
    rng = np.random.default_rng(2)
    obs_a, _ = policy._as_batch(_random_obs(rng))
    obs_b, _ = policy._as_batch(_random_obs(rng))
    f_a = policy.forward_features(obs_a).data[0]
    f_b = policy.forward_features(obs_b).data[0]
    assert (f_a == f_a[0]).all()
    assert (f_a == f_b).all()


def test_value_is_permutation_invariant_and_pooled():
    policy = AttentionPolicy(_config(), seed=3, dtype=np.float64)
    rng = np.random.default_rng(3)
    obs = _random_obs(rng)
    perm = np.random.default_rng(4).permutation(9)
    v = policy.value(obs).data[0]
    v_p = policy.value(obs[perm]).data[0]
    assert v == pytest.approx(v_p, abs=1e-10)


def test_value_head_ignores_row_duplication():
    # duplicating every row leaves the mean pool fixed only if attention
    # outputs repeat as well, which permutation equivariance guarantees
    policy = AttentionPolicy(_config(n_rows=4), seed=4, dtype=np.float64)
    rng = np.random.default_rng(5)
    rows = rng.standard_normal((2, 14))
    obs = np.concatenate([rows, rows], axis=0)
    doubled = np.concatenate([rows, rows, rows, rows], axis=0)
    policy_8 = AttentionPolicy(_config(n_rows=8), seed=4, dtype=np.float64)
    policy_8.params.copy_from(policy.params)
    v = policy.value(obs).data[0]
    v_dup = policy_8.value(doubled).data[0]
    assert v == pytest.approx(v_dup, abs=1e-10)


def test_distributions_sum_to_one_and_mask_cliffs():
    policy = AttentionPolicy(_config(), seed=5)
    rng = np.random.default_rng(6)
    dists = policy.distributions(_random_obs(rng, batch=3))
    assert isinstance(dists, ActionDistributions)
    for p, bins in zip(dists.probs(), (9, 65, 32, 2)):
        assert p.shape == (3, bins)
        assert np.abs(p.data.sum(axis=-1) - 1.0).max() < 1e-6
        assert (p.data >= 0.0).all()
    assert (dists.object_probs.data[:, :CLIFF_ROWS] == 0.0).all()
    assert np.isneginf(dists.object_log_probs.data[:, :CLIFF_ROWS]).all()


def test_deterministic_sampling_takes_lowest_index_mode():
    policy = AttentionPolicy(_config(), seed=7, dtype=np.float64)
    _zero_logit_heads(policy)
    obs = _random_obs(np.random.default_rng(7))
    action, log_prob = policy.sample_action(obs, deterministic=True)
    # all heads uniform: argmax falls on the first unmasked / first bin
    assert action.tolist() == [CLIFF_ROWS, 0, 0, 0]
    expected = -(np.log(7) + np.log(65) + np.log(32) + np.log(2))
    assert log_prob == pytest.approx(expected, abs=1e-12)


def test_peaked_head_sampled_deterministically():
    policy = AttentionPolicy(_config(), seed=8)
    _zero_logit_heads(policy)
    policy.params["net.y1.b"].data[17] = 50.0
    policy.params["net.z1.b"].data[4] = 50.0
    obs = _random_obs(np.random.default_rng(8))
    action, _ = policy.sample_action(obs, deterministic=True)
    assert action[1] == 17
    assert action[2] == 4
    action_s, _ = policy.sample_action(obs, rng=np.random.default_rng(0))
    assert action_s[1] == 17
    assert action_s[2] == 4


def test_sampled_log_prob_matches_evaluate_actions():
    policy = AttentionPolicy(_config(), seed=9, dtype=np.float64)
    rng = np.random.default_rng(9)
    obs = _random_obs(rng)
    for _ in range(5):
        action, log_prob = policy.sample_action(obs, rng=rng)
        lp, _, _ = policy.evaluate_actions(obs[None], action[None])
        assert lp.data[0] == pytest.approx(log_prob, abs=1e-12)


def test_sampling_frequencies_match_probabilities():
    policy = AttentionPolicy(_tiny_config(), seed=10)
    for t in policy.params.tensors():
        t.data *= 3.0  # spread the distributions away from uniform
    rng = np.random.default_rng(10)
    obs = rng.standard_normal((4, 14))
    dists = policy.distributions(obs)
    n = 10_000
    counts = [np.zeros(4), np.zeros(5), np.zeros(3), np.zeros(2)]
    for _ in range(n):
        action, _ = policy.sample_action(obs, rng=rng)
        for i in range(4):
            counts[i][action[i]] += 1
    for count, p in zip(counts, dists.probs()):
        probs = p.data[0]
        sigma = np.sqrt(np.maximum(probs * (1 - probs), 1e-12) / n)
        assert (np.abs(count / n - probs) <= 3.0 * sigma + 1.0 / n).all()


def test_entropy_of_uniform_heads_is_sum_of_logs():
    policy = AttentionPolicy(_config(), seed=11, dtype=np.float64)
    _zero_logit_heads(policy)
    rng = np.random.default_rng(11)
    obs = _random_obs(rng, batch=2)
    actions = np.array([[2, 0, 0, 0], [5, 64, 31, 1]])
    _, entropy, _ = policy.evaluate_actions(obs, actions)
    expected = np.log(7) + np.log(65) + np.log(32) + np.log(2)
    assert entropy.data == pytest.approx([expected, expected], abs=1e-10)


def test_batched_evaluation_matches_per_sample():
    policy = AttentionPolicy(_config(), seed=12, dtype=np.float64)
    rng = np.random.default_rng(12)
    obs = _random_obs(rng, batch=4)
    actions = np.stack([
        [2, 10, 3, 0], [8, 64, 31, 1], [4, 0, 0, 0], [3, 33, 16, 1]])
    lp_b, ent_b, val_b = policy.evaluate_actions(obs, actions)
    for i in range(4):
        lp, ent, val = policy.evaluate_actions(obs[i][None], actions[i][None])
        assert lp.data[0] == pytest.approx(lp_b.data[i], abs=1e-10)
        assert ent.data[0] == pytest.approx(ent_b.data[i], abs=1e-10)
        assert val.data[0] == pytest.approx(val_b.data[i], abs=1e-10)


@pytest.mark.parametrize("variant", ["shared", "dual"])
def test_every_parameter_receives_gradient(variant):
    policy = AttentionPolicy(_config(variant=variant), seed=13)
    rng = np.random.default_rng(13)
    obs = _random_obs(rng, batch=3)
    actions = np.stack([[2, 1, 2, 0], [7, 30, 17, 1], [4, 64, 5, 0]])
    lp, ent, val = policy.evaluate_actions(obs, actions)
    loss = lp.sum() + 0.3 * ent.sum() + (val ** 2.0).sum()
    loss = loss + (policy.aux_value(obs) ** 2.0).sum()
    loss.backward()
    missing = [name for name, t in policy.params.items()
               if t.grad is None or not np.abs(t.grad).max() > 0.0]
    assert missing == []


def test_dual_variant_has_separate_value_trunk():
    shared = AttentionPolicy(_config("shared"), seed=14)
    dual = AttentionPolicy(_config("dual"), seed=14)
    size = lambda ps: sum(t.data.size for t in ps.tensors())
    assert size(dual.params) > 1.5 * size(shared.params)

    rng = np.random.default_rng(14)
    obs = _random_obs(rng)
    # perturbing the dual value trunk moves value() but not the policy
    before = dual.distributions(obs).object_probs.data.copy()
    v_before = dual.value(obs).data[0]
    for name, t in dual.params.items():
        if name.startswith("vf."):
            t.data += 0.05
    assert dual.value(obs).data[0] != pytest.approx(v_before, abs=1e-12)
    assert (dual.distributions(obs).object_probs.data == before).all()
    # in the shared variant the value and auxiliary heads coincide
    assert shared.value(obs).data[0] == pytest.approx(
        shared.aux_value(obs).data[0], abs=0.0)


def test_dual_aux_value_reads_policy_trunk():
    dual = AttentionPolicy(_config("dual"), seed=15)
    rng = np.random.default_rng(15)
    obs = _random_obs(rng)
    aux_before = dual.aux_value(obs).data[0]
    v_before = dual.value(obs).data[0]
    for name, t in dual.params.items():
        if name.startswith("pi.att0."):
            t.data += 0.05
    assert dual.aux_value(obs).data[0] != pytest.approx(aux_before, abs=1e-12)
    assert dual.value(obs).data[0] == pytest.approx(v_before, abs=0.0)


def test_construction_is_deterministic():
    a = AttentionPolicy(_config(), seed=16)
    b = AttentionPolicy(_config(), seed=16)
    for name in a.params.names():
        assert (a.params[name].data == b.params[name].data).all()
    c = AttentionPolicy(_config(), seed=17)
    assert any(not (a.params[n].data == c.params[n].data).all()
               for n in a.params.names())


def test_parameter_roundtrip_preserves_outputs():
    policy = AttentionPolicy(_config(), seed=18)
    rng = np.random.default_rng(18)
    obs = _random_obs(rng, batch=2)
    dists = policy.distributions(obs)
    blob = policy.params.to_bytes()
    clone = AttentionPolicy(_config(), seed=99)
    loaded, _ = ParamSet.from_bytes(blob)
    clone.params.copy_from(loaded)
    for name in policy.params.names():
        assert (policy.params[name].data == clone.params[name].data).all()
    dists2 = clone.distributions(obs)
    for p, q in zip(dists.probs(), dists2.probs()):
        assert (p.data == q.data).all()


def test_shape_errors():
    policy = AttentionPolicy(_config(), seed=19)
    with pytest.raises(DimensionError):
        policy.distributions(np.zeros((3, 14)))
    with pytest.raises(DimensionError):
        policy.distributions(np.zeros((9, 13)))
    with pytest.raises(DimensionError):
        policy.evaluate_actions(np.zeros((2, 9, 14)), np.zeros((2, 3)))


def test_default_precision_is_single():
    policy = AttentionPolicy(_config(), seed=20)
    assert all(t.data.dtype == np.float32 for t in policy.params.tensors())
    rng = np.random.default_rng(20)
    dists, value = policy.forward(_random_obs(rng, batch=2))
    assert value.data.dtype == np.float32
    assert all(p.data.dtype == np.float32 for p in dists.probs())
    double = AttentionPolicy(_config(), seed=20, dtype=np.float64)
    assert all(t.data.dtype == np.float64 for t in double.params.tensors())
