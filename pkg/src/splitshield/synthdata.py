"""Synthetic labels and features for training on the union of two id sets.

After set-union alignment, each uid is owned by the label party, the
feature party, or both. Rows a party does not own are filled in here:
the label party invents labels, the feature party invents raw features or
cut-layer embeddings. Because the filled rows shift what the model sees,
an affine correction on predicted probabilities undoes the shift, either
inside the loss (train time) or on reported predictions (test time).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import joint_embedding_label, spectral_attack
from .errors import DegenerateDataError, StrategyUnavailableError
from .metrics import auc
from .splitnn import Calibration, Dataset, _log_sigmoid

LABEL_KINDS = ("majority", "minority", "random_pos", "random_pred", "neighbors")
FEATURE_KINDS = ("sampling", "gaussian", "random_moving")
STRATEGY_NAMES = {
    "label-majority": ("label", "majority"),
    "label-minority": ("label", "minority"),
    "label-random-pos": ("label", "random_pos"),
    "label-random-pred": ("label", "random_pred"),
    "label-neighbors": ("label", "neighbors"),
    "fea-sampling": ("feature", "sampling"),
    "fea-gaussian": ("feature", "gaussian"),
    "fea-random": ("feature", "random_moving"),
}
SCENARIOS = ("label_only", "feature_only", "both")
CALIBRATION_MODES = {"none": "none", "tr": "train_time", "te": "test_time", "train_time": "train_time", "test_time": "test_time"}


@dataclass(frozen=True)
class LabelStrategy:
    kind: str = "majority"
    sample_times: int = 1
    k: int = 3

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ValueError(f"unknown label strategy {self.kind!r}")
        if self.sample_times < 1 or self.k < 1:
            raise ValueError("sample_times and k must be >= 1")


@dataclass(frozen=True)
class FeatureStrategy:
    kind: str = "sampling"
    s: float = 1.0
    decay: float = 0.99

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature strategy {self.kind!r}")
        if self.s < 0:
            raise ValueError("s must be >= 0")
        if not 0 <= self.decay < 1:
            raise ValueError("decay must lie in [0, 1)")


def parse_strategy(name: str):
    """``"label-majority"`` -> ``LabelStrategy("majority")`` and so on."""
    if name not in STRATEGY_NAMES:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGY_NAMES)}")
    side, kind = STRATEGY_NAMES[name]
    return LabelStrategy(kind) if side == "label" else FeatureStrategy(kind)


@dataclass(frozen=True)
class CalibrationConfig:
    scenario: str = "label_only"
    p_a: float = 1.0
    p_p: float = 1.0
    base_rate: float = 0.5
    mode: str = "none"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.mode not in CALIBRATION_MODES:
            raise ValueError(f"unknown calibration mode {self.mode!r}")
        object.__setattr__(self, "mode", CALIBRATION_MODES[self.mode])
        for name in ("p_a", "p_p"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not 0 < self.base_rate < 1:
            raise ValueError("base_rate must lie in (0, 1)")

    def affine(self) -> tuple[float, float]:
        """``(scale, offset)`` with ``D' = scale * D + offset``."""
        if self.scenario == "label_only":
            return self.p_a, 0.0
        if self.scenario == "feature_only":
            return self.p_p, (1 - self.p_p) * self.base_rate
        return self.p_a * self.p_p, self.p_a * (1 - self.p_p) * self.base_rate


@dataclass
class ClampCounter:
    clamped: int = 0
    total: int = 0

    @property
    def rate(self) -> float:
        return self.clamped / self.total if self.total else 0.0


def calibrate(prob, cfg: CalibrationConfig, direction: str = "model_to_loss", counter: ClampCounter | None = None):
    """Map true-label probabilities to filled-label ones (``model_to_loss``) or back (``model_to_report``).

    The backward map is clamped to [0, 1]; ``counter`` tallies how often.
    """
    a, b = cfg.affine()
    p = np.asarray(prob, dtype=float)
    if direction == "model_to_loss":
        out = a * p + b
    elif direction == "model_to_report":
        raw = (p - b) / a
        out = np.clip(raw, 0.0, 1.0)
        if counter is not None:
            counter.clamped += int(np.count_nonzero(raw != out))
            counter.total += raw.size
    else:
        raise ValueError("direction must be 'model_to_loss' or 'model_to_report'")
    return float(out) if out.ndim == 0 else out


def _cosine_matrix(A, B):
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    na[na == 0] = 1.0
    nb[nb == 0] = 1.0
    return (A / na) @ (B / nb).T


def gen_labels(strategy: LabelStrategy, n_missing: int, rng: np.random.Generator, *, pos_ratio=None,
               pred_prob=None, query_emb=None, owned_emb=None, owned_labels=None) -> np.ndarray:
    """Labels for ``n_missing`` rows without a real label.

    ``random_pred`` returns the mean of ``sample_times`` Bernoulli draws; the
    loss gradient is linear in the label, so training on this soft label is
    the same as averaging the per-draw gradients.
    """
    kind = strategy.kind
    if kind == "majority":
        return np.zeros(n_missing)
    if kind == "minority":
        return np.ones(n_missing)
    if kind == "random_pos":
        if pos_ratio is None:
            raise StrategyUnavailableError("random_pos needs the owned positive ratio")
        return (rng.random(n_missing) < pos_ratio).astype(float)
    if kind == "random_pred":
        if pred_prob is None:
            raise StrategyUnavailableError("random_pred needs model predictions")
        p = np.asarray(pred_prob, dtype=float).ravel()
        draws = rng.random((strategy.sample_times, p.shape[0])) < p
        return draws.mean(axis=0)
    # neighbors
    if owned_emb is None or len(owned_emb) == 0:
        raise StrategyUnavailableError("no owned labels in the batch to vote with")
    sim = _cosine_matrix(np.asarray(query_emb, dtype=float), np.asarray(owned_emb, dtype=float))
    k = min(strategy.k, sim.shape[1])
    top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    votes = np.asarray(owned_labels, dtype=float)[top].sum(axis=1)
    return (votes > k / 2).astype(float)  # ties go to 0


def expected_random_pred_gradient(pred_prob, head_w) -> np.ndarray:
    """Closed-form E_y[(p - y) w] with y ~ Bernoulli(p); identically zero."""
    p = np.asarray(pred_prob, dtype=float).ravel()
    w = np.asarray(head_w, dtype=float)
    q = 1.0 - p
    # p * (p - 1) + q * p; fl(p - 1) == -fl(1 - p), so the sum is exactly 0
    return (p * -q + q * p)[:, None] * w[None, :]


@dataclass
class RandomMovingStats:
    """Exponential moving mean and std of real cut-layer rows."""

    decay: float = 0.99
    mean: np.ndarray | None = None
    var: np.ndarray | None = None

    def update(self, rows):
        rows = np.asarray(rows, dtype=float)
        if rows.shape[0] == 0:
            return
        m, v = rows.mean(axis=0), rows.var(axis=0)
        if self.mean is None:
            self.mean, self.var = m, v
        else:
            self.mean = self.decay * self.mean + (1 - self.decay) * m
            self.var = self.decay * self.var + (1 - self.decay) * v

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.mean is None:
            raise StrategyUnavailableError("no real embeddings observed yet")
        return self.mean + np.sqrt(self.var) * rng.standard_normal((n, self.mean.shape[0]))


def gen_features(strategy: FeatureStrategy, n_missing: int, rng: np.random.Generator, *,
                 owned_rows=None, real_emb=None, moving: RandomMovingStats | None = None) -> np.ndarray:
    """Raw rows (``sampling``) or cut-layer rows (the other two kinds)."""
    if strategy.kind == "sampling":
        if owned_rows is None or len(owned_rows) == 0:
            raise StrategyUnavailableError("sampling needs at least one owned feature row")
        owned_rows = np.asarray(owned_rows, dtype=float)
        return owned_rows[rng.integers(0, owned_rows.shape[0], n_missing)].copy()
    if strategy.kind == "gaussian":
        if real_emb is None or len(real_emb) == 0:
            raise StrategyUnavailableError("gaussian needs real embeddings to set its scale")
        E = np.asarray(real_emb, dtype=float)
        d = E.shape[1]
        var = strategy.s / d * float(np.max(np.sum(E * E, axis=1)))
        return np.sqrt(var) * rng.standard_normal((n_missing, d))
    if moving is None:
        raise StrategyUnavailableError("random_moving needs running statistics")
    return moving.sample(n_missing, rng)


def marginal_kl_check(joint, grid_step: float = 0.01, return_kl: bool = False):
    """Brute-force the feature marginal ``p`` minimising KL(D || p x q), q = D's label marginal.

    ``joint`` is a |X| x |Y| array. Candidates are all points of the
    probability simplex on a ``grid_step`` lattice.
    """
    D = np.asarray(joint, dtype=float)
    if D.ndim != 2 or np.any(D < 0) or not np.isclose(D.sum(), 1.0):
        raise ValueError("joint must be a nonnegative matrix summing to 1")
    nx = D.shape[0]
    q = D.sum(axis=0)
    m = int(round(1 / grid_step))
    grid = _simplex_grid(nx, m) / m
    with np.errstate(divide="ignore", invalid="ignore"):
        logD = np.where(D > 0, np.log(D), 0.0)
        logq = np.where(q > 0, np.log(q), 0.0)
        logp = np.log(grid)  # -inf where a candidate puts zero mass
    # KL = sum D log D - sum_x D_x. log p_x - sum_y D_.y log q_y
    mass_x = D.sum(axis=1)
    const = float(np.sum(D * logD) - np.sum(q * logq))
    cross = np.where(mass_x[None, :] > 0, mass_x[None, :] * logp, 0.0).sum(axis=1)
    kl = const - cross
    i = int(np.argmin(kl))
    return (grid[i], float(kl[i])) if return_kl else grid[i]


def kl_to_product(joint, p) -> float:
    D = np.asarray(joint, dtype=float)
    Q = np.outer(np.asarray(p, dtype=float), D.sum(axis=0))
    mask = D > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(D[mask] * (np.log(D[mask]) - np.log(Q[mask]))))


def _simplex_grid(n: int, m: int) -> np.ndarray:
    """Integer points of {k in N^n : sum k = m}."""
    if n == 1:
        return np.array([[m]])
    parts = []
    for first in range(m + 1):
        rest = _simplex_grid(n - 1, m - first)
        parts.append(np.hstack([np.full((rest.shape[0], 1), first), rest]))
    return np.vstack(parts).astype(float)


def synthetic_attack_auc(rows, is_synthetic, labels=None) -> float:
    """AUC of the spectral outlier score for predicting which rows are filled in.

    With ``labels`` the detector runs on embeddings joined with the label
    (the label party's view); without, on the rows as given (for the feature
    party, the received gradients). Reported raw: below 0.5 means the filled
    rows sit closer to the centre than real ones.
    """
    X = np.asarray(rows, dtype=float)
    if labels is not None:
        X = joint_embedding_label(X, labels)
    try:
        scores = spectral_attack(X)
    except DegenerateDataError:
        return 0.5
    return auc(scores, np.asarray(is_synthetic).astype(int))


@dataclass
class UnionSchedule:
    """Sorted union uids with each party's ownership flags."""

    uids: list
    has_label: np.ndarray
    has_features: np.ndarray

    @classmethod
    def from_maps(cls, active_map, passive_map) -> "UnionSchedule":
        if active_map.uids != passive_map.uids:
            raise ValueError("parties disagree on the union")
        a_set, p_set = set(active_map.mapping.values()), set(passive_map.mapping.values())
        uids = list(active_map.uids)
        return cls(uids, np.array([u in a_set for u in uids]), np.array([u in p_set for u in uids]))

    def batches(self, batch_size: int, rng: np.random.Generator):
        order = rng.permutation(len(self.uids))
        for k in range(0, len(order), batch_size):
            yield order[k:k + batch_size]


def union_dataset(active_map, passive_map, ids, X, y) -> tuple[Dataset, UnionSchedule]:
    """Arrange rows in uid order with ownership masks.

    ``ids, X, y`` hold the simulation's ground truth for every id in the
    union. Unowned entries stay in the arrays for evaluation only; the
    fillers never read them.
    """
    sched = UnionSchedule.from_maps(active_map, passive_map)
    uid_to_id = {}
    for m in (active_map, passive_map):
        for own_id, uid in m.mapping.items():
            uid_to_id[uid] = own_id
    pos = {str(i): k for k, i in enumerate(ids)}
    rows = np.array([pos[str(uid_to_id[u])] for u in sched.uids], dtype=int)
    data = Dataset(np.asarray(X)[rows], np.asarray(y)[rows], np.asarray(ids)[rows], sched.has_label.copy(), sched.has_features.copy())
    return data, sched


@dataclass
class UnionFiller:
    """Hooks called by ``splitnn.train`` to fill rows a party does not own."""

    label_strategy: LabelStrategy | None = None
    feature_strategy: FeatureStrategy | None = None
    calibration: CalibrationConfig | None = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    moving: RandomMovingStats | None = None
    clamps: ClampCounter = field(default_factory=ClampCounter)
    synthetic_label_rows: int = 0
    synthetic_feature_rows: int = 0

    def __post_init__(self):
        if self.feature_strategy is not None and self.feature_strategy.kind == "random_moving" and self.moving is None:
            self.moving = RandomMovingStats(self.feature_strategy.decay)

    @staticmethod
    def calibration_for(data: Dataset, mode: str, label_strategy=None, feature_strategy=None) -> CalibrationConfig:
        """Ownership fractions and owned-label base rate, as both parties know them."""
        n = len(data)
        has_l = _mask(data.has_label, n)
        has_f = _mask(data.has_features, n)
        owned = data.y[has_l]
        base = float(np.clip(owned.mean() if owned.size else 0.5, 1e-6, 1 - 1e-6))
        if label_strategy is not None and feature_strategy is not None:
            scenario = "both"
        elif feature_strategy is not None:
            scenario = "feature_only"
        else:
            scenario = "label_only"
        return CalibrationConfig(scenario, max(has_l.mean(), 1e-9), max(has_f.mean(), 1e-9), base, mode)

    def train_calibration(self):
        if self.calibration is None or self.calibration.mode != "train_time":
            return None
        return Calibration(*self.calibration.affine())

    def report_map(self):
        if self.calibration is None or self.calibration.mode != "test_time":
            return None
        cfg = self.calibration
        return lambda prob: calibrate(prob, cfg, "model_to_report", self.clamps)

    def fill_features(self, data: Dataset, idx, X_b):
        if self.feature_strategy is None or self.feature_strategy.kind != "sampling":
            return X_b
        missing = ~_mask(data.has_features, len(data))[idx]
        if not missing.any():
            return X_b
        owned = data.X[_mask(data.has_features, len(data))]
        X_b = X_b.copy()
        X_b[missing] = gen_features(self.feature_strategy, int(missing.sum()), self.rng, owned_rows=owned)
        self.synthetic_feature_rows += int(missing.sum())
        return X_b

    def fill_embeddings(self, data: Dataset, idx, emb):
        if self.feature_strategy is None:
            return emb, None
        has_f = _mask(data.has_features, len(data))[idx]
        mask = has_f.astype(float)
        missing = ~has_f
        if self.feature_strategy.kind == "sampling" or not missing.any():
            return emb, mask
        real = emb[has_f]
        if self.moving is not None and self.moving.mean is None:
            self.moving.update(real)
        emb = emb.copy()
        emb[missing] = gen_features(self.feature_strategy, int(missing.sum()), self.rng, real_emb=real, moving=self.moving)
        self.synthetic_feature_rows += int(missing.sum())
        return emb, mask

    def fill_labels(self, model, data: Dataset, idx, emb, y_true):
        if self.label_strategy is None:
            return y_true
        has_l = _mask(data.has_label, len(data))
        own = has_l[idx]
        missing = ~own
        y = np.asarray(y_true, dtype=float).copy()
        if not missing.any():
            return y
        kwargs = {}
        kind = self.label_strategy.kind
        if kind == "random_pos":
            kwargs["pos_ratio"] = float(data.y[has_l].mean()) if has_l.any() else 0.5
        elif kind == "random_pred":
            p = np.exp(_log_sigmoid(emb[missing] @ model.h_w + model.h_b))
            cal = self.train_calibration()
            if cal is not None:
                p = cal.scale * p + cal.offset
            kwargs["pred_prob"] = p
        elif kind == "neighbors":
            kwargs.update(query_emb=emb[missing], owned_emb=emb[own], owned_labels=y[own])
        y[missing] = gen_labels(self.label_strategy, int(missing.sum()), self.rng, **kwargs)
        self.synthetic_label_rows += int(missing.sum())
        return y

    def observe(self, emb, mask):
        if self.moving is not None and mask is not None:
            self.moving.update(np.asarray(emb)[np.asarray(mask) > 0])


def _mask(m, n):
    return np.ones(n, dtype=bool) if m is None else np.asarray(m, dtype=bool)
