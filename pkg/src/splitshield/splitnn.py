"""Two-party split learning for binary classification.

The feature party owns ``f`` (affine+ReLU layers mapping raw features to a
``d``-dimensional cut layer); the label party owns ``h`` (affine map to one
logit) and the labels. Per step the feature party sends ``f(X)``, the label
party returns the per-example gradients ``dL_i/df(x_i)`` (optionally
perturbed by a protection hook) and each side takes an SGD step.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackKind, run_attack
from .errors import NumericalOverflowError, ProtocolError
from .metrics import auc
from .numerics import child_seed, make_rng
from .protect import ProtectionConfig, make_protector


@dataclass
class SplitModel:
    f_layers: list  # [(W, b)], W has shape (fan_in, fan_out)
    h_w: np.ndarray
    h_b: float

    @property
    def d(self) -> int:
        return self.h_w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.f_layers[0][0].shape[0]

    @classmethod
    def init(cls, input_dim: int, d: int = 8, hidden: tuple = (), seed: int = 0) -> "SplitModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        rng = make_rng(seed)
        sizes = [input_dim, *hidden, d]
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            r = 1.0 / np.sqrt(fan_in)
            layers.append((rng.uniform(-r, r, (fan_in, fan_out)), rng.uniform(-r, r, fan_out)))
        r = 1.0 / np.sqrt(d)
        return cls(layers, rng.uniform(-r, r, d), float(rng.uniform(-r, r)))

    def copy(self) -> "SplitModel":
        return SplitModel([(W.copy(), b.copy()) for W, b in self.f_layers], self.h_w.copy(), self.h_b)

    def params(self) -> list:
        out = []
        for W, b in self.f_layers:
            out += [W, b]
        return out + [self.h_w, np.array([self.h_b])]

    def logits(self, X) -> np.ndarray:
        return forward_passive(self, X) @ self.h_w + self.h_b


@dataclass
class GradBatch:
    """Per-example cut-layer gradients. Row i belongs to example i."""

    grads: np.ndarray
    labels: np.ndarray
    ids: np.ndarray | None = None


@dataclass
class HeadGrads:
    w: np.ndarray
    b: float


@dataclass(frozen=True)
class Calibration:
    """Affine map ``q = scale * sigmoid(logit) + offset`` used inside the loss."""

    scale: float = 1.0
    offset: float = 0.0

    @property
    def identity(self) -> bool:
        return self.scale == 1.0 and self.offset == 0.0


def _forward(model: SplitModel, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected features of width {model.input_dim}, got shape {X.shape}")
    acts = [X]
    a = X
    for W, b in model.f_layers:
        a = np.maximum(a @ W + b, 0.0)
        acts.append(a)
    return acts


def forward_passive(model: SplitModel, X) -> np.ndarray:
    """Cut-layer embeddings ``f(X)``."""
    return _forward(model, X)[-1]


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def active_step(model: SplitModel, embeddings, labels, calibration: Calibration | None = None):
    """Label-party forward/backward on received embeddings.

    ``labels`` may be soft (in [0, 1]); a soft label is what averaging the
    gradients of several sampled hard labels amounts to. Returns
    ``(mean loss, GradBatch of per-example dL_i/da_i, HeadGrads of the mean loss)``.
    """
    A = np.asarray(embeddings, dtype=float)
    if A.ndim != 2 or A.shape[1] != model.d:
        raise ValueError(f"embeddings must have width {model.d}")
    y = np.asarray(labels, dtype=float).ravel()
    if y.shape[0] != A.shape[0]:
        raise ValueError("one label per embedding row required")
    logit = A @ model.h_w + model.h_b
    if not np.all(np.isfinite(logit)):
        raise NumericalOverflowError("non-finite logits")
    cal = calibration or Calibration()
    log_s, log_1ms = _log_sigmoid(logit), _log_sigmoid(-logit)
    if cal.identity:
        # log(1 + e^-l) + (1 - y) l, written with softplus for stability
        losses = -log_s + (1.0 - y) * logit
        dl = np.exp(log_s) - y
    else:
        with np.errstate(divide="ignore"):
            log_a, log_b = np.log(cal.scale), np.log(cal.offset)
            log_rest = np.log(max(1.0 - cal.scale - cal.offset, 0.0))
        log_q = np.logaddexp(log_a + log_s, log_b)
        log_1mq = np.logaddexp(log_a + log_1ms, log_rest)
        losses = -(y * log_q + (1.0 - y) * log_1mq)
        dq = log_a + log_s + log_1ms  # log of dq/dlogit
        dl = -y * np.exp(dq - log_q) + (1.0 - y) * np.exp(dq - log_1mq)
    grads = dl[:, None] * model.h_w[None, :]
    B = A.shape[0]
    head = HeadGrads(A.T @ dl / B, float(dl.sum() / B))
    return float(losses.mean()), GradBatch(grads, y), head


def passive_param_grads(model: SplitModel, X, received, row_mask=None):
    """Gradients of the batch-mean loss w.r.t. ``f``'s parameters, from per-example cut-layer rows."""
    acts = _forward(model, X)
    G = np.asarray(received, dtype=float)
    B = acts[0].shape[0]
    if G.shape != acts[-1].shape:
        raise ProtocolError(f"received gradient shape {G.shape} does not match batch {acts[-1].shape}")
    if row_mask is not None:
        G = G * np.asarray(row_mask, dtype=float)[:, None]
    delta = G / B
    out = []
    for k in range(len(model.f_layers) - 1, -1, -1):
        W, _ = model.f_layers[k]
        delta = delta * (acts[k + 1] > 0)
        out.append((acts[k].T @ delta, delta.sum(axis=0)))
        delta = delta @ W.T
    return out[::-1]


def backward_passive(model: SplitModel, X, received, learning_rate: float, row_mask=None) -> list:
    """Backpropagate received cut-layer gradients through ``f`` and take an SGD step."""
    grads = passive_param_grads(model, X, received, row_mask)
    for (W, b), (gW, gb) in zip(model.f_layers, grads):
        W -= learning_rate * gW
        b -= learning_rate * gb
    return model.f_layers


def step_head(model: SplitModel, head: HeadGrads, learning_rate: float):
    model.h_w -= learning_rate * head.w
    model.h_b -= learning_rate * head.b


# -- training ----------------------------------------------------------------

@dataclass
class Dataset:
    """Features, labels and ids; ownership masks are used for union training."""

    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray | None = None
    has_label: np.ndarray | None = None  # label party owns this id
    has_features: np.ndarray | None = None  # feature party owns this id

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y).astype(int)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("features and labels differ in length")
        if self.ids is None:
            self.ids = np.arange(self.y.shape[0])

    def __len__(self):
        return self.y.shape[0]


@dataclass
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 0.1
    epochs: int = 3
    seed: int = 0
    protection: ProtectionConfig = field(default_factory=ProtectionConfig)
    eval_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0 or self.eval_every < 1:
            raise ValueError("batch_size/eval_every must be positive, epochs and learning_rate non-negative")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    attack_names: tuple = ()
    last_batch: tuple | None = None  # (sent gradients, true labels) of the final step

    @property
    def columns(self) -> list:
        return ["step", "train_loss", *[f"leak_auc_{a}" for a in self.attack_names], "test_loss", "test_auc"]

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name) for r in self.rows], dtype=float)

    def late_mean(self, name: str, fraction: float = 0.25) -> float:
        vals = self.column(name)
        k = max(1, int(round(len(vals) * fraction)))
        tail = vals[-k:]
        tail = tail[np.isfinite(tail)]
        return float(tail.mean()) if tail.size else float("nan")

    def last_eval(self) -> dict:
        for r in reversed(self.rows):
            if r.get("test_auc") is not None:
                return r
        return {}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow(["" if r.get(c) is None else _fmt(r[c]) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def predict_proba(model: SplitModel, X) -> np.ndarray:
    z = model.logits(X)
    return np.exp(_log_sigmoid(z))


def evaluate(model: SplitModel, data: Dataset, report_map=None) -> tuple[float, float, np.ndarray]:
    """Test loss and AUC of (optionally remapped) predicted probabilities."""
    prob = predict_proba(model, data.X)
    if report_map is not None:
        prob = report_map(prob)
    pc = np.clip(prob, 1e-12, 1 - 1e-12)
    y = data.y
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
    return loss, auc(prob, y), prob


def train(
    model: SplitModel,
    data: Dataset,
    cfg: TrainConfig,
    attacks=(),
    test: Dataset | None = None,
    synth=None,
    link=None,
    protector=None,
) -> TrainReport:
    """Shuffled mini-batch SGD over ``data``.

    ``synth`` (see ``synthdata.UnionFiller``) fills in rows a party does not
    own. ``link`` routes embeddings and gradients through a wire codec.
    Leak AUC of every attack is computed on the gradients actually sent,
    against the batch's true labels.
    """
    attacks = [a if isinstance(a, AttackKind) else AttackKind(a) for a in attacks]
    report = TrainReport(attack_names=tuple(a.name for a in attacks))
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.y.min() == data.y.max():
        raise ValueError("training data must contain both classes")
    shuffle_rng = make_rng(child_seed(cfg.seed, "shuffle"))
    attack_rng = make_rng(child_seed(cfg.seed, "attack"))
    if protector is None:
        protector = make_protector(cfg.protection, make_rng(child_seed(cfg.seed, "protect", cfg.protection.seed)))
    calibration = synth.train_calibration() if synth is not None else None
    report_map = synth.report_map() if synth is not None else None
    n = len(data)
    steps_per_epoch = -(-n // cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for k in range(steps_per_epoch):
            idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
            X_b = data.X[idx]
            y_true = data.y[idx]
            mask = None
            if synth is not None:
                X_b = synth.fill_features(data, idx, X_b)
            emb = forward_passive(model, X_b)
            if synth is not None:
                emb, mask = synth.fill_embeddings(data, idx, emb)
            if link is not None:
                emb = link.send_embeddings(emb)
            y_train = y_true if synth is None else synth.fill_labels(model, data, idx, emb, y_true)
            loss, gb, head = active_step(model, emb, y_train, calibration)
            gb.ids = data.ids[idx]
            sent = protector(gb.grads, (np.asarray(y_train) >= 0.5).astype(int))
            row = {"step": step, "epoch": epoch, "train_loss": loss, "test_loss": None, "test_auc": None}
            for a in attacks:
                row[f"leak_auc_{a.name}"] = run_attack(a, sent, y_true, attack_rng).leak_auc
            report.last_batch = (sent, y_true)
            if link is not None:
                sent = link.send_gradients(sent)
            step_head(model, head, cfg.learning_rate)
            backward_passive(model, X_b, sent, cfg.learning_rate, row_mask=mask)
            if synth is not None:
                synth.observe(emb, mask)
            if test is not None and ((step + 1) % cfg.eval_every == 0 or step == total - 1):
                row["test_loss"], row["test_auc"], _ = evaluate(model, test, report_map)
            report.rows.append(row)
            step += 1
    return report
