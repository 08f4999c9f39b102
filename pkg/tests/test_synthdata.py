import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import kl_product_grid
from splitshield.errors import StrategyUnavailableError
from splitshield.splitnn import Dataset, SplitModel, TrainConfig, train
from splitshield.synthdata import (
    CalibrationConfig,
    ClampCounter,
    FeatureStrategy,
    LabelStrategy,
    RandomMovingStats,
    UnionFiller,
    calibrate,
    expected_random_pred_gradient,
    gen_features,
    gen_labels,
    kl_to_product,
    marginal_kl_check,
    parse_strategy,
    synthetic_attack_auc,
)


def test_majority_and_minority(rng):
    assert list(gen_labels(LabelStrategy("majority"), 5, rng)) == [0] * 5
    assert list(gen_labels(LabelStrategy("minority"), 3, rng)) == [1] * 3


def test_random_pos_rate(rng):
    y = gen_labels(LabelStrategy("random_pos"), 20_000, rng, pos_ratio=0.2)
    assert abs(y.mean() - 0.2) < 3 * np.sqrt(0.16 / 20_000)


def test_random_pred_soft_label_is_mean_of_draws(rng):
    p = np.full(1000, 0.3)
    y = gen_labels(LabelStrategy("random_pred", sample_times=4), 1000, rng, pred_prob=p)
    assert set(np.unique(y)) <= {0, 0.25, 0.5, 0.75, 1.0}


def test_random_pred_closed_form_is_exactly_zero(rng):
    p = rng.random(500)
    w = rng.standard_normal(6)
    assert np.all(expected_random_pred_gradient(p, w) == 0.0)


def test_neighbors_vote():
    owned = np.array([[0.99, np.sqrt(1 - 0.99**2)], [0.1, np.sqrt(1 - 0.01)]])
    q = np.array([[1.0, 0.0]])
    y = gen_labels(LabelStrategy("neighbors", k=1), 1, None, query_emb=q, owned_emb=owned, owned_labels=[1, 0])
    assert y[0] == 1
    # two owned neighbours, one vote each: tie goes to 0
    y = gen_labels(LabelStrategy("neighbors", k=2), 1, None, query_emb=q, owned_emb=owned, owned_labels=[1, 0])
    assert y[0] == 0
    with pytest.raises(StrategyUnavailableError):
        gen_labels(LabelStrategy("neighbors"), 1, None, query_emb=q, owned_emb=np.zeros((0, 2)), owned_labels=[])


def test_feature_strategies(rng):
    owned = rng.standard_normal((10, 3))
    rows = gen_features(FeatureStrategy("sampling"), 25, rng, owned_rows=owned)
    assert all(any(np.array_equal(r, o) for o in owned) for r in rows)
    with pytest.raises(StrategyUnavailableError):
        gen_features(FeatureStrategy("sampling"), 2, rng, owned_rows=np.zeros((0, 3)))
    assert np.all(gen_features(FeatureStrategy("gaussian", s=0.0), 4, rng, real_emb=owned) == 0)
    g = gen_features(FeatureStrategy("gaussian", s=1.0), 100_000, rng, real_emb=np.array([[2.0, 0, 0]]))
    assert abs(np.mean(np.sum(g**2, axis=1)) - 4.0) < 0.1
    mv = RandomMovingStats()
    for _ in range(5):
        mv.update(np.tile([1.0, -2.0, 0.5], (8, 1)))
    assert np.array_equal(gen_features(FeatureStrategy("random_moving"), 3, rng, moving=mv), np.tile([1.0, -2.0, 0.5], (3, 1)))


def test_moving_average_decay():
    mv = RandomMovingStats(decay=0.99)
    mv.update(np.zeros((4, 2)))
    mv.update(np.ones((4, 2)))
    assert np.allclose(mv.mean, 0.01)


def test_strategy_names():
    assert parse_strategy("label-majority") == LabelStrategy("majority")
    assert parse_strategy("fea-random") == FeatureStrategy("random_moving")
    with pytest.raises(ValueError):
        parse_strategy("label-bogus")
    with pytest.raises(ValueError):
        LabelStrategy("random_pred", sample_times=0)


def test_calibrate_examples():
    assert calibrate(0.6, CalibrationConfig("label_only", p_a=1.0)) == 0.6
    assert calibrate(0.6, CalibrationConfig("label_only", p_a=0.5)) == pytest.approx(0.3)
    both = CalibrationConfig("both", p_a=0.8, p_p=0.5, base_rate=0.2)
    assert calibrate(0.6, both) == pytest.approx(0.32)
    feat = CalibrationConfig("feature_only", p_p=0.5, base_rate=0.2)
    assert calibrate(0.6, feat) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        CalibrationConfig("label_only", p_a=0.0)
    assert CalibrationConfig(mode="tr").mode == "train_time"


@given(st.floats(0, 1), st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.01, 0.99))
def test_calibrate_round_trip(prob, pa, pp, base):
    cfg = CalibrationConfig("both", pa, pp, base)
    back = calibrate(calibrate(prob, cfg), cfg, "model_to_report")
    assert back == pytest.approx(prob, abs=1e-12)


def test_inverse_clamps_and_counts():
    cfg = CalibrationConfig("label_only", p_a=0.5)
    c = ClampCounter()
    out = calibrate(np.array([0.2, 0.7, 0.9]), cfg, "model_to_report", c)
    assert np.allclose(out, [0.4, 1.0, 1.0])
    assert c.clamped == 2 and c.total == 3


def test_marginal_kl_examples():
    assert np.allclose(marginal_kl_check(np.full((2, 2), 0.25)), [0.5, 0.5])
    D = np.array([[0.4, 0.1], [0.2, 0.3]])
    assert np.allclose(marginal_kl_check(D), [0.5, 0.5])
    p, kl = marginal_kl_check(D, return_kl=True)
    assert kl == pytest.approx(kl_to_product(D, D.sum(axis=1)))


@pytest.mark.parametrize("seed", range(3))
def test_marginal_kl_matches_loop_oracle(seed):
    D = np.random.default_rng(seed).dirichlet(np.ones(6)).reshape(3, 2)
    p = marginal_kl_check(D, 0.02)
    ref, _ = kl_product_grid(D, 0.02)
    assert np.allclose(p, ref)
    assert kl_to_product(D, D.sum(axis=1)) <= kl_to_product(D, p) + 1e-12


def test_zero_cells():
    D = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert np.allclose(marginal_kl_check(D), [0.5, 0.5])


def _union_data(rng, n=4096, missing_label=0.0, missing_feat=0.0):
    y = (rng.random(n) < 0.2).astype(int)
    X = rng.standard_normal((n, 6)) + 2.0 * (y[:, None] - 0.5)
    has_l = rng.random(n) >= missing_label
    has_f = rng.random(n) >= missing_feat
    has_f[~has_l] = True  # every row belongs to someone
    return Dataset(X, y, None, has_l, has_f)


def test_random_pred_batch_gradients_average_to_zero():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.05, 0.95, 64)
    w = rng.standard_normal(3)
    means = []
    for _ in range(10_000):
        y = gen_labels(LabelStrategy("random_pred"), 64, rng, pred_prob=p)
        means.append(((p - y)[:, None] * w).mean(axis=0))
    means = np.array(means)
    se = means.std(axis=0) / np.sqrt(len(means))
    assert np.all(np.abs(means.mean(axis=0)) <= 3 * se)


@pytest.mark.parametrize("label", ["majority", "minority", "random_pos", "random_pred", "neighbors"])
@pytest.mark.parametrize("feature", ["sampling", "gaussian", "random_moving"])
def test_filler_trains(label, feature):
    rng = np.random.default_rng(1)
    data = _union_data(rng, 2048, 0.3, 0.3)
    ls, fs = LabelStrategy(label), FeatureStrategy(feature)
    cal = UnionFiller.calibration_for(data, "tr", ls, fs)
    filler = UnionFiller(ls, fs, cal, np.random.default_rng(2))
    m = SplitModel.init(6, d=4, seed=0)
    rep = train(m, data, TrainConfig(batch_size=256, learning_rate=0.5, epochs=1), ["norm"], synth=filler)
    assert np.all(np.isfinite(rep.column("train_loss")))
    assert filler.synthetic_label_rows > 0 and filler.synthetic_feature_rows > 0


def test_sampled_features_hard_to_detect(rng):
    real = rng.standard_normal((5000, 6)) @ rng.standard_normal((6, 6))
    fake = gen_features(FeatureStrategy("sampling"), 5000, rng, owned_rows=real)
    rows = np.vstack([real, fake])
    flag = np.r_[np.zeros(5000), np.ones(5000)]
    assert 0.45 <= synthetic_attack_auc(rows, flag) <= 0.6


def test_gaussian_fakes_detected_when_separated(rng):
    # real rows cluster around c; fakes are centred at 0 with per-coordinate
    # variance |c|^2/d, so the mean gap |c|^2 beats 6 sigma^2 / eps once d eps >= 6
    d, n, eps = 64, 9000, 0.1
    c = np.full(d, 2.0)
    real = c + 0.3 * rng.standard_normal((n, d))
    k = int(n * eps / (1 - eps))
    fake = gen_features(FeatureStrategy("gaussian"), k, rng, real_emb=real)
    y = (rng.random(n + k) < 0.3).astype(int)
    flag = np.r_[np.zeros(n), np.ones(k)]
    assert synthetic_attack_auc(np.vstack([real, fake]), flag, labels=y) >= 0.85


def test_lagging_moving_stats_are_detected(rng):
    # the real embeddings jump; the decayed running mean still points at the old cluster
    d, n = 8, 900
    mv = RandomMovingStats(decay=0.99)
    for _ in range(200):
        mv.update(0.3 * rng.standard_normal((256, d)))
    real = 4.0 + 0.3 * rng.standard_normal((n, d))
    mv.update(real)
    fake = gen_features(FeatureStrategy("random_moving"), 100, rng, moving=mv)
    y = (rng.random(n + 100) < 0.3).astype(int)
    flag = np.r_[np.zeros(n), np.ones(100)]
    assert synthetic_attack_auc(np.vstack([real, fake]), flag, labels=y) >= 0.85


@pytest.mark.slow
def test_majority_labels_visible_in_gradients():
    # Few missing labels: the model stays confident, so synthetic positives
    # (filled as 0) get large gradients while real positives get small ones.
    from splitshield.harness.data import DatasetSpec, gen_dataset
    from splitshield.splitnn import active_step, forward_passive

    rng = np.random.default_rng(0)
    data, _ = gen_dataset(DatasetSpec(pos_fraction=0.25, seed=0))
    data.has_label = rng.random(len(data)) >= 0.1
    filler = UnionFiller(LabelStrategy("majority"), None, None, rng)
    m = SplitModel.init(data.X.shape[1], d=8, seed=0)
    train(m, data, TrainConfig(learning_rate=1.0, epochs=3), synth=filler)
    aucs = []
    for _ in range(50):
        idx = rng.choice(len(data), 1024, replace=False)
        miss = ~data.has_label[idx]
        y = np.where(miss, 0, data.y[idx]).astype(float)
        _, gb, _ = active_step(m, forward_passive(m, data.X[idx]), y)
        aucs.append(synthetic_attack_auc(gb.grads, miss))
    se = np.std(aucs) / np.sqrt(len(aucs))
    assert np.mean(aucs) - 3 * se > 0.5
