"""Hard-case width sampling and the success-driven p schedule."""

import numpy as np
import pytest

from blockspan.curriculum import Curriculum, CurriculumConfig
from blockspan.errors import ConfigurationError


def make(p=None, window=100, **kw):
    cur = Curriculum(config=CurriculumConfig(window=window, **kw))
    if p is not None:
        cur.p = p
    return cur


def test_p_zero_samples_whole_range():
    cur = make(p=0.0, p_min=0.0, p_init=0.0)
    rng = np.random.default_rng(0)
    widths = [cur.sample_width(rng) for _ in range(2000)]
    assert min(widths) >= 0.06
    assert max(widths) <= 0.42
    assert any(w < 0.30 for w in widths)


def test_p_one_samples_only_hard_band():
    cur = make(p=1.0, p_max=1.0)
    rng = np.random.default_rng(1)
    widths = [cur.sample_width(rng) for _ in range(2000)]
    assert all(w > 0.30 for w in widths)
    assert all(cur.is_hard(w) for w in widths)


def test_mixture_hard_fraction():
    # p = 0.5: hard with probability 0.5 + 0.5 * (0.12 / 0.36) = 2/3
    cur = make(p=0.5)
    rng = np.random.default_rng(2)
    n = 100_000
    hard = sum(cur.is_hard(cur.sample_width(rng)) for _ in range(n))
    assert hard / n == pytest.approx(2 / 3, abs=0.01)


def test_width_sequence_reproducible():
    cur_a = make(p=0.37)
    cur_b = make(p=0.37)
    seq_a = [cur_a.sample_width(np.random.default_rng(7)) for _ in range(1)]
    rng_a = np.random.default_rng(9)
    rng_b = np.random.default_rng(9)
    assert [cur_a.sample_width(rng_a) for _ in range(50)] == \
        [cur_b.sample_width(rng_b) for _ in range(50)]


@pytest.mark.parametrize("p0,rate,expected", [
    (0.01, 0.65, 0.11),
    (0.5, 0.2, 0.4),
    (0.91, 0.9, 0.91),
    (0.5, 0.45, 0.5),
])
def test_update_rule_on_full_window(p0, rate, expected):
    cur = make(p=p0, window=100)
    successes = int(round(rate * 100))
    for i in range(100):
        cur.update(i < successes)
    assert cur.p == pytest.approx(expected)
    assert cur.window_fill == 0
    assert cur.updates == 1


def test_partial_window_never_moves_p():
    cur = make(p=0.31, window=100)
    for _ in range(99):
        cur.update(True)
    assert cur.p == pytest.approx(0.31)
    assert cur.window_fill == 99
    cur.update(True)
    assert cur.p == pytest.approx(0.41)


def test_p_stays_clamped_over_many_windows():
    cur = make(window=10)
    for _ in range(40):  # relentless success
        for _ in range(10):
            cur.update(True)
    assert cur.p == pytest.approx(0.91)
    for _ in range(40):  # relentless failure
        for _ in range(10):
            cur.update(False)
    assert cur.p == pytest.approx(0.01)


def test_p_moves_in_fixed_quanta():
    cur = make(window=10)
    seen = {round(cur.p, 10)}
    rng = np.random.default_rng(3)
    for _ in range(30):
        for _ in range(10):
            cur.update(bool(rng.random() < 0.8))
        seen.add(round(cur.p, 10))
    for value in seen:
        steps = (value - 0.01) / 0.1
        assert steps == pytest.approx(round(steps), abs=1e-9)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        Curriculum(config=CurriculumConfig(p_init=0.005))
    with pytest.raises(ConfigurationError):
        Curriculum(config=CurriculumConfig(hard_band=(0.4, 0.3)))
    with pytest.raises(ConfigurationError):
        Curriculum(config=CurriculumConfig(window=0))
