import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import auc_pairs
from splitshield.attack import (
    AttackKind,
    hint_attack,
    joint_embedding_label,
    leak_auc,
    norm_attack,
    pick_hints,
    run_attack,
    spectral_attack,
)


def planted(rng, n=10_000, d=8, eps=0.1, sigma=1.0, sep=None):
    y = (rng.random(n) < eps).astype(int)
    mu = np.zeros(d)
    mu[0] = np.sqrt(6 * sigma**2 / eps) if sep is None else sep
    X = sigma * rng.standard_normal((n, d)) + y[:, None] * mu
    return X, y


def test_norm_scores():
    assert np.allclose(norm_attack([[3.0, 4.0], [0.3, 0.4]]), [5.0, 0.5])


def test_zero_batch_flagged():
    res = run_attack(AttackKind("norm"), np.zeros((4, 3)), [0, 1, 0, 1])
    assert np.all(res.scores == 0)
    assert res.leak_auc == 0.5 and res.degraded


def test_norm_leak_on_gaussian_populations(rng):
    n = 2000
    y = (rng.random(n) < 0.3).astype(int)
    direction = rng.standard_normal((n, 5))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = np.where(y == 1, 2.0, 1.0) * (1 + 0.1 * rng.standard_normal(n))
    g = direction * radius[:, None]
    s = norm_attack(g)
    assert auc_pairs(s[:400], y[:400]) >= 0.9
    assert leak_auc(s, y)[0] >= 0.9


def test_hint_identical_row_scores_one():
    g = np.array([[1.0, 2.0], [1.0, 2.0], [-1.0, 0.5]])
    s, rest = hint_attack(g, [0], "cosine")
    assert list(rest) == [1, 2]
    assert s[0] == pytest.approx(1.0)


def test_hint_opposite_directions_separate(rng):
    w = rng.standard_normal(4)
    y = np.array([1] * 10 + [0] * 30)
    g = np.where(y[:, None] == 1, 1.0, -1.0) * w * rng.uniform(0.2, 2, (40, 1))
    res = run_attack(AttackKind("hint", n_hints=5), g, y, rng)
    assert res.leak_auc == 1.0
    assert len(res.attacked_indices) == 35


def test_hint_excludes_hint_rows(rng):
    y = np.array([1] * 8 + [0] * 8)
    hints = pick_hints(y, 5, rng)
    s, rest = hint_attack(rng.standard_normal((16, 3)), hints)
    assert len(rest) == 11 and not set(rest) & set(hints)
    assert pick_hints(y, 8, rng) is None


def test_hint_cosine_scale_invariance(rng):
    g = rng.standard_normal((20, 3))
    scaled = g.copy()
    scaled[7] *= 3
    a, _ = hint_attack(g, [0, 1], "cosine")
    b, _ = hint_attack(scaled, [0, 1], "cosine")
    assert np.allclose(a, b)


@given(st.integers(0, 2**32 - 1))
def test_hint_cosine_leak_invariant_to_rescaling(seed):
    rng = np.random.default_rng(seed)
    y = np.r_[np.ones(10, dtype=int), np.zeros(20, dtype=int)]
    g = rng.standard_normal((30, 4)) + y[:, None]
    c = rng.uniform(0.1, 10, (30, 1))
    r1 = run_attack(AttackKind("hint", similarity="cosine"), g, y, np.random.default_rng(1))
    r2 = run_attack(AttackKind("hint", similarity="cosine"), g * c, y, np.random.default_rng(1))
    assert r1.leak_auc == pytest.approx(r2.leak_auc, abs=1e-12)


def test_spectral_planted_mixture(rng):
    X, y = planted(rng)
    assert leak_auc(spectral_attack(X), y)[0] >= 0.9


def test_spectral_identical_populations():
    vals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X, _ = planted(rng, n=2000, sep=0.0)
        y = (rng.random(2000) < 0.1).astype(int)
        vals.append(leak_auc(spectral_attack(X), y)[0])
    assert 0.45 <= np.mean(vals) <= 0.55


def test_spectral_symmetric_points():
    X = np.array([[1.0, 2.0], [-1.0, -2.0], [0.0, 0.0]])
    s = spectral_attack(X)
    assert s[0] == pytest.approx(s[1])


@given(st.integers(0, 2**32 - 1))
def test_score_invariances(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 4)) * [3, 1, 1, 0.5]
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    assert np.allclose(norm_attack(X @ Q), norm_attack(X))
    shift = rng.standard_normal(4) * 10
    assert np.allclose(spectral_attack(X + shift), spectral_attack(X), atol=1e-8)
    J = joint_embedding_label(X, np.ones(30))
    assert np.allclose(spectral_attack(J), spectral_attack(X), atol=1e-8)


def test_leak_auc_basics(rng):
    assert leak_auc([0.9, 0.8, 0.1], [1, 1, 0]) == (1.0, False)
    s = rng.random(50)
    y = np.r_[np.ones(25, dtype=int), np.zeros(25, dtype=int)]
    assert leak_auc(s, y)[0] + leak_auc(-s, y)[0] == pytest.approx(1.0)
    assert leak_auc([0.1, 0.2], [0, 0]) == (0.5, True)


def test_independent_scores_average_half(rng):
    vals = []
    for _ in range(10_000 // 100):
        s = rng.random(100)
        y = rng.integers(0, 2, 100)
        vals.append(leak_auc(s, y)[0])
    assert abs(np.mean(vals) - 0.5) < 0.02


def test_attack_kind_validation():
    with pytest.raises(ValueError):
        AttackKind("bogus")
    with pytest.raises(ValueError):
        AttackKind("hint", n_hints=0)
    with pytest.raises(ValueError):
        run_attack(AttackKind("hint"), np.zeros((10, 2)), [1] * 6 + [0] * 4)
