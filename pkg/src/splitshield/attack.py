"""Label-recovery attacks run by the feature party on received gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, UndefinedAUCError
from .metrics import auc
from .numerics import top_singular_direction

ATTACK_KINDS = ("norm", "hint", "spectral")


@dataclass(frozen=True)
class AttackKind:
    kind: str = "norm"
    n_hints: int = 5
    similarity: str = "inner"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.kind!r}")
        if self.kind == "hint":
            if self.n_hints < 1:
                raise ValueError("n_hints must be >= 1")
            if self.similarity not in ("inner", "cosine"):
                raise ValueError("similarity must be 'inner' or 'cosine'")

    @property
    def name(self) -> str:
        return self.kind


@dataclass
class AttackResult:
    scores: np.ndarray
    leak_auc: float
    attacked_indices: np.ndarray
    degraded: bool = False


def norm_attack(grads) -> np.ndarray:
    """Score each example by the 2-norm of its gradient row."""
    g = np.asarray(grads, dtype=float)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("need at least two gradient rows")
    return np.linalg.norm(g, axis=1)


def hint_attack(grads, hint_indices, similarity: str = "inner"):
    """Max similarity of every non-hint row to the known-positive hint rows.

    Returns ``(scores, indices)`` where ``indices`` are the scored (non-hint) rows.
    """
    g = np.asarray(grads, dtype=float)
    hints = np.unique(np.asarray(hint_indices, dtype=int))
    if hints.size == 0:
        raise ValueError("need at least one hint")
    rest = np.setdiff1d(np.arange(g.shape[0]), hints)
    H, R = g[hints], g[rest]
    if similarity == "inner":
        sim = R @ H.T
    elif similarity == "cosine":
        nr = np.linalg.norm(R, axis=1, keepdims=True)
        nh = np.linalg.norm(H, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = (R @ H.T) / (nr * nh.T)
        sim[~np.isfinite(sim)] = 0.0  # zero-norm rows have similarity 0
    else:
        raise ValueError(f"unknown similarity {similarity!r}")
    return sim.max(axis=1), rest


def spectral_attack(X) -> np.ndarray:
    """Outlier score ``|<x - mean, v>|`` along the top covariance direction ``v``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("need at least three rows")
    v = top_singular_direction(X)
    return np.abs((X - X.mean(axis=0)) @ v)


def joint_embedding_label(embeddings, labels) -> np.ndarray:
    """Embeddings with the label appended, scaled to the embeddings' coordinate std.

    This is the input the label party feeds to the spectral detector.
    """
    E = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=float).reshape(-1, 1)
    scale = float(E.std(axis=0).mean())
    return np.hstack([E, y * (scale if scale > 0 else 1.0)])


def leak_auc(scores, true_labels) -> tuple[float, bool]:
    """AUC of attack scores against labels.

    Single-class input or constant scores (nothing to rank) give ``(0.5, True)``.
    """
    s = np.asarray(scores, dtype=float)
    if s.size and np.all(s == s.flat[0]):
        return 0.5, True
    try:
        return auc(scores, true_labels), False
    except UndefinedAUCError:
        return 0.5, True


def pick_hints(labels, n_hints: int, rng: np.random.Generator):
    """Fresh random known-positive rows for one batch (``None`` if too few positives)."""
    pos = np.flatnonzero(np.asarray(labels) == 1)
    if pos.size <= n_hints:
        return None
    return rng.choice(pos, size=n_hints, replace=False)


def run_attack(kind: AttackKind, grads, labels, rng: np.random.Generator | None = None) -> AttackResult:
    """Score a batch with one attack and compute its leak AUC."""
    y = np.asarray(labels).ravel()
    g = np.asarray(grads, dtype=float)
    if kind.kind == "norm":
        s = norm_attack(g)
        idx = np.arange(g.shape[0])
    elif kind.kind == "spectral":
        try:
            s = spectral_attack(g)
        except DegenerateDataError:
            return AttackResult(np.zeros(g.shape[0]), 0.5, np.arange(g.shape[0]), degraded=True)
        idx = np.arange(g.shape[0])
    else:
        if rng is None:
            raise ValueError("hint attack needs an rng to draw hints")
        hints = pick_hints(y, kind.n_hints, rng)
        if hints is None:
            return AttackResult(np.zeros(0), 0.5, np.zeros(0, dtype=int), degraded=True)
        s, idx = hint_attack(g, hints, kind.similarity)
    value, degraded = leak_auc(s, y[idx])
    return AttackResult(s, value, idx, degraded)
