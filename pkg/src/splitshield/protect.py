"""Gradient perturbations applied by the label party before sending gradients.

Three families: ``iso`` (isotropic Gaussian scaled to the largest row norm),
``max_norm`` (noise along each row, lifting its expected squared norm to the
batch maximum) and ``marvell`` (class-dependent Gaussian noise whose
covariances minimise the symmetric KL between the perturbed positive and
negative gradient distributions under a noise-power budget).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .metrics import VARIANCE_FLOOR, fit_spherical_pair, sum_kl_target
from .numerics import StructuredCov, sample_structured_gaussian

log = logging.getLogger(__name__)

PROTECTION_KINDS = ("none", "iso", "max_norm", "marvell")


# -- baselines ---------------------------------------------------------------

def iso_protect(grads, s: float, rng: np.random.Generator) -> np.ndarray:
    """Add N(0, (s/d) max_i ||g_i||^2 I) independently to every row."""
    if s < 0:
        raise ValueError("s must be non-negative")
    g = np.asarray(grads, dtype=float)
    if s == 0:
        return g.copy()
    d = g.shape[1]
    max_sq = float(np.max(np.einsum("ij,ij->i", g, g))) if g.size else 0.0
    if max_sq == 0.0:
        return g.copy()
    return g + rng.standard_normal(g.shape) * math.sqrt(s / d * max_sq)


def max_norm_protect(grads, rng: np.random.Generator) -> np.ndarray:
    """Scale every row by ``1 + lambda_j`` with ``lambda_j ~ N(0, M^2/||g_j||^2 - 1)``.

    ``M`` is the largest row norm, so each perturbed row keeps its direction
    and has expected squared norm ``M^2``. Zero rows pass through.
    """
    g = np.asarray(grads, dtype=float)
    norms_sq = np.einsum("ij,ij->i", g, g)
    if g.size == 0:
        return g.copy()
    m_sq = norms_sq.max()
    nz = norms_sq > 0
    sigma = np.zeros_like(norms_sq)
    sigma[nz] = np.sqrt(np.maximum(m_sq / norms_sq[nz] - 1.0, 0.0))
    lam = rng.standard_normal(g.shape[0]) * sigma
    return g + lam[:, None] * g


# -- Marvell -----------------------------------------------------------------

@dataclass(frozen=True)
class GradStats:
    """Spherical Gaussian summary of one batch of gradients, per class."""

    mean_pos: np.ndarray
    mean_neg: np.ndarray
    u: float  # positive-class variance per coordinate
    v: float  # negative-class variance per coordinate
    delta_norm_sq: float
    p: float
    d: int

    @classmethod
    def from_batch(cls, grads, labels, floor: float = VARIANCE_FLOOR) -> "GradStats":
        g = np.asarray(grads, dtype=float)
        y = np.asarray(labels).ravel()
        pos, neg = fit_spherical_pair(g[y == 1], g[y == 0], floor=floor)
        delta = pos.mean - neg.mean
        return cls(pos.mean, neg.mean, pos.var_iso, neg.var_iso, float(delta @ delta), float((y == 1).mean()), g.shape[1])

    @classmethod
    def scalar(cls, u: float, v: float, delta_norm_sq: float, p: float, d: int) -> "GradStats":
        """Stats without explicit means (enough for the solver)."""
        mean_pos = np.zeros(d)
        mean_pos[0] = math.sqrt(delta_norm_sq)
        return cls(mean_pos, np.zeros(d), u, v, delta_norm_sq, p, d)

    @property
    def direction(self) -> np.ndarray:
        delta = self.mean_pos - self.mean_neg
        n = float(np.linalg.norm(delta))
        if n == 0.0:
            e = np.zeros(self.d)
            e[0] = 1.0
            return e
        return delta / n


@dataclass(frozen=True)
class MarvellSolution:
    lam1_pos: float
    lam2_pos: float
    lam1_neg: float
    lam2_neg: float
    power: float
    objective: float
    sum_kl_star: float
    rounds: int = 0

    @property
    def lams(self) -> tuple[float, float, float, float]:
        return (self.lam1_pos, self.lam2_pos, self.lam1_neg, self.lam2_neg)

    def budget_used(self, stats: GradStats) -> float:
        return budget(self.lams, stats)

    def cov_pos(self, direction) -> StructuredCov:
        return StructuredCov(self.lam1_pos, self.lam2_pos, np.asarray(direction, dtype=float))

    def cov_neg(self, direction) -> StructuredCov:
        return StructuredCov(self.lam1_neg, self.lam2_neg, np.asarray(direction, dtype=float))


def budget(lams, stats: GradStats) -> float:
    l1p, l2p, l1n, l2n = lams
    d, p = stats.d, stats.p
    return p * (l1p + (d - 1) * l2p) + (1 - p) * (l1n + (d - 1) * l2n)


def marvell_objective(lams, stats: GradStats):
    """Four-variable objective; equals ``2 * sumKL + 2d`` of the perturbed pair.

    Positive gradients have per-coordinate variance ``u`` and receive noise
    eigenvalues ``lam*_pos``; negatives have ``v`` and ``lam*_neg``. Index 1
    is the direction of the mean difference, index 2 the d-1 orthogonal ones.
    Accepts scalars or equal-shape arrays.
    """
    l1p, l2p, l1n, l2n = (np.asarray(x, dtype=float) for x in lams)
    x1, y1 = l1p + stats.u, l1n + stats.v
    x2, y2 = l2p + stats.u, l2n + stats.v
    if np.any(x1 <= 0) or np.any(y1 <= 0) or np.any(x2 <= 0) or np.any(y2 <= 0):
        raise ZeroDivisionError("objective denominator is zero")
    D = stats.delta_norm_sq
    out = (stats.d - 1) * (y2 / x2 + x2 / y2) + (y1 + D) / x1 + (x1 + D) / y1
    return float(out) if out.ndim == 0 else out


def sum_kl_from_objective(objective: float, d: int) -> float:
    return max((objective - 2.0 * d) / 2.0, 0.0)


class _Reduced:
    """The solver's 3-share parametrisation of the active budget hyperplane.

    The class with the larger variance ("big") never gets isotropic noise;
    the other class ("small") gets isotropic level ``c`` plus an extra ``e``
    along the mean difference. Shares are the budget spent on each piece:
    ``(w_big * a, w_small * e, w_small * d * c)`` and sum to ``P``, so every
    share vector on the simplex is feasible, including ``lam2 <= lam1``.
    """

    def __init__(self, stats: GradStats):
        self.stats = stats
        self.pos_is_big = stats.u >= stats.v
        p = stats.p
        self.w_big = p if self.pos_is_big else 1 - p
        self.w_small = 1 - p if self.pos_is_big else p

    def lams(self, s0, s1, s2):
        a = s0 / self.w_big
        e = s1 / self.w_small
        c = s2 / (self.w_small * self.stats.d)
        zero = np.zeros_like(np.asarray(a, dtype=float))
        if self.pos_is_big:
            return a, zero, c + e, c  # lam1_pos, lam2_pos, lam1_neg, lam2_neg
        return c + e, c, a, zero

    def f(self, s0, s1, s2):
        return marvell_objective(self.lams(s0, s1, s2), self.stats)

    def f_scalar(self, s0: float, s1: float, s2: float) -> float:
        st = self.stats
        a = s0 / self.w_big
        e = s1 / self.w_small
        c = s2 / (self.w_small * st.d)
        if self.pos_is_big:
            x1, x2, y1, y2 = a + st.u, st.u, c + e + st.v, c + st.v
        else:
            x1, x2, y1, y2 = c + e + st.u, c + st.u, a + st.v, st.v
        D = st.delta_norm_sq
        return (st.d - 1) * (y2 / x2 + x2 / y2) + (y1 + D) / x1 + (x1 + D) / y1

    def shares_of(self, lams) -> np.ndarray:
        l1p, l2p, l1n, l2n = lams
        if self.pos_is_big:
            a, c, e = l1p, l2n, l1n - l2n
        else:
            a, c, e = l1n, l2p, l1p - l2p
        return np.array([self.w_big * a, self.w_small * e, self.w_small * self.stats.d * c], dtype=float)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_PAIRS = ((0, 1), (0, 2), (1, 2))


def _line_search(fun, fun_vec, T: float, t_now: float, f_now: float, n_scan: int = 9, xtol: float = 1e-12):
    """Minimise ``fun`` on [0, T]: coarse vectorised scan, then golden section."""
    ts = np.linspace(0.0, T, n_scan)
    fs = fun_vec(ts)
    k = int(np.argmin(fs))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, n_scan - 1)]
    best_t, best_f = float(ts[k]), float(fs[k])
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = fun(x1), fun(x2)
    tol = xtol * max(T, 1e-300)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = fun(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = fun(x2)
    for t, ft in ((x1, f1), (x2, f2)):
        if ft < best_f:
            best_t, best_f = t, ft
    if f_now <= best_f:
        return t_now, f_now
    return best_t, best_f


def marvell_solve(
    stats: GradStats,
    P: float,
    *,
    warm_start=None,
    max_rounds: int = 200,
    tol: float = 1e-10,
    grid: int = 12,
) -> MarvellSolution:
    """Minimise the four-variable objective under power budget ``P``.

    The search is restricted to the active budget hyperplane with the
    isotropic eigenvalue of the larger-variance class pinned at zero. On that
    2-simplex it runs SMO-style sweeps: each step frees one pair of budget
    shares, holds the third fixed, and line-searches the pair along the
    budget line. Sweeps stop once a full round improves the objective by
    less than ``tol`` (relative).

    ``warm_start`` may be a previous ``MarvellSolution`` (at a smaller or equal
    power); its eigenvalues are lifted along the mean-difference direction to
    spend the extra budget, which can only lower the objective.
    """
    if not (P >= 0) or not math.isfinite(P):
        raise ValueError("P must be a finite non-negative number")
    if stats.u <= 0 or stats.v <= 0:
        raise ValueError("u and v must be positive (apply the variance floor first)")
    if not 0 < stats.p < 1:
        raise ValueError("p must lie in (0, 1)")
    if stats.d < 2:
        raise ValueError("d must be at least 2")
    d = stats.d
    if P == 0:
        obj = marvell_objective((0.0, 0.0, 0.0, 0.0), stats)
        return MarvellSolution(0.0, 0.0, 0.0, 0.0, 0.0, obj, sum_kl_from_objective(obj, d))

    red = _Reduced(stats)
    # coarse simplex grid picks the starting basin
    i, j = np.meshgrid(np.arange(grid + 1), np.arange(grid + 1), indexing="ij")
    keep = i + j <= grid
    S0 = i[keep] / grid * P
    S1 = j[keep] / grid * P
    S2 = np.maximum(P - S0 - S1, 0.0)
    vals = red.f(S0, S1, S2)
    k = int(np.argmin(vals))
    s = np.array([S0[k], S1[k], S2[k]])
    f = float(vals[k])
    if warm_start is not None and warm_start.power <= P:
        extra = P - warm_start.power
        l1p, l2p, l1n, l2n = warm_start.lams
        cand = red.shares_of((l1p + extra, l2p, l1n + extra, l2n))
        if np.all(cand >= -1e-12 * P):
            cand = np.maximum(cand, 0.0)
            cand *= P / cand.sum()
            fc = red.f(*cand)
            if fc < f:
                s, f = cand, float(fc)

    rounds = 0
    while True:
        rounds += 1
        f_start = f
        for a, b in _PAIRS:
            T = s[a] + s[b]
            if T <= 0:
                continue
            rest = [float(x) for x in s]

            def fun(t, a=a, b=b, T=T, rest=rest):
                args = list(rest)
                args[a] = t
                args[b] = max(T - t, 0.0)
                return red.f_scalar(*args)

            def fun_vec(t, a=a, b=b, T=T, rest=rest):
                args = [np.full_like(t, rest[0]), np.full_like(t, rest[1]), np.full_like(t, rest[2])]
                args[a] = t
                args[b] = np.maximum(T - t, 0.0)
                return red.f(*args)

            t, f = _line_search(fun, fun_vec, T, float(s[a]), f)
            s[a], s[b] = t, max(T - t, 0.0)
        if f_start - f <= tol * max(abs(f), 1.0):
            break
        if rounds >= max_rounds:
            lams = tuple(float(x) for x in red.lams(*s))
            best = MarvellSolution(*lams, P, f, sum_kl_from_objective(f, d), rounds)
            raise ConvergenceError(f"solver did not converge in {max_rounds} rounds", best=best)

    s *= P / s.sum()  # remove drift off the hyperplane
    lams = tuple(float(x) for x in red.lams(*s))
    obj = marvell_objective(lams, stats)
    return MarvellSolution(*lams, P, obj, sum_kl_from_objective(obj, d), rounds)


def tune_power(
    stats: GradStats,
    target_sum_kl: float,
    P0: float | None = None,
    growth: float = 2.0,
    max_iters: int = 64,
    rel_tol: float = 0.01,
    trace: list | None = None,
):
    """Smallest power (to ``rel_tol``) whose optimum meets ``sumKL* <= target``.

    Grows ``P`` geometrically from ``P0`` (default ``0.25 (u+v) d``) until the
    target is met, then bisects between the last failing and first passing
    power. Every visited ``(P, sumKL*)`` is appended to ``trace`` when given.
    Returns ``(P, MarvellSolution)``.
    """
    if not target_sum_kl > 0:
        raise ValueError("target_sum_kl must be positive")
    if growth <= 1:
        raise ValueError("growth must exceed 1")
    if P0 is None:
        P0 = 0.25 * (stats.u + stats.v) * stats.d
    if not P0 > 0:
        raise ValueError("P0 must be positive")

    def visit(P, warm):
        sol = marvell_solve(stats, P, warm_start=warm)
        if trace is not None:
            trace.append((P, sol.sum_kl_star))
        return sol

    sol = visit(0.0, None)
    if sol.sum_kl_star <= target_sum_kl:
        return 0.0, sol
    lo_P, lo_sol = 0.0, sol
    P = P0
    for _ in range(max_iters):
        sol = visit(P, lo_sol)
        if sol.sum_kl_star <= target_sum_kl:
            break
        lo_P, lo_sol = P, sol
        P *= growth
    else:
        raise ConvergenceError(f"target sumKL {target_sum_kl} not reached", best=(lo_P, lo_sol))
    hi_P, hi_sol = P, sol
    while hi_P - lo_P > rel_tol * hi_P:
        mid = 0.5 * (lo_P + hi_P)
        sol = visit(mid, lo_sol)
        if sol.sum_kl_star <= target_sum_kl:
            hi_P, hi_sol = mid, sol
        else:
            lo_P, lo_sol = mid, sol
    return hi_P, hi_sol


def marvell_protect(grads, labels, target_sum_kl: float, rng: np.random.Generator, *, P0=None, info: dict | None = None):
    """Add Marvell noise to a gradient batch.

    Fits per-class spherical Gaussians, tunes the power to reach
    ``target_sum_kl``, then adds zero-mean noise with covariance
    ``(lam1 - lam2) dd^T + lam2 I`` (``d`` the unit mean difference) for
    each class. Single-class batches pass through unchanged. If the class
    means coincide the per-class noise trace is spread isotropically.
    """
    g = np.asarray(grads, dtype=float)
    y = np.asarray(labels).ravel()
    n_pos = int((y == 1).sum())
    if n_pos == 0 or n_pos == y.size:
        log.warning("single-class batch: marvell passes gradients through")
        return g.copy()
    stats = GradStats.from_batch(g, y)
    try:
        P, sol = tune_power(stats, target_sum_kl, P0=P0)
    except ConvergenceError as err:
        if not isinstance(err.best, tuple):
            raise
        P, sol = err.best
        log.warning("power tuning stopped early at P=%g", P)
    if info is not None:
        info.update(power=P, solution=sol, stats=stats)
    out = g.copy()
    if P == 0:
        return out
    direction = stats.direction
    isotropic = stats.delta_norm_sq == 0.0
    for cls_val, (l1, l2) in ((1, (sol.lam1_pos, sol.lam2_pos)), (0, (sol.lam1_neg, sol.lam2_neg))):
        rows = y == cls_val
        if isotropic:
            l1 = l2 = (l1 + (stats.d - 1) * l2) / stats.d
        cov = StructuredCov(l1, l2, direction)
        out[rows] += sample_structured_gaussian(np.zeros(stats.d), cov, int(rows.sum()), rng)
    return out


# -- configuration and hooks -------------------------------------------------

@dataclass
class ProtectionConfig:
    """Which protection to run. For ``marvell`` give ``sum_kl`` or ``L``."""

    kind: str = "none"
    s: float = 1.0
    sum_kl: float | None = None
    L: float | None = None
    reuse_power: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROTECTION_KINDS:
            raise ValueError(f"unknown protection kind {self.kind!r}")
        if self.kind == "marvell":
            if (self.sum_kl is None) == (self.L is None):
                raise ValueError("marvell needs exactly one of sum_kl or L")
            if self.L is not None:
                sum_kl_target(self.L)  # validates range
            elif not self.sum_kl > 0:
                raise ValueError("sum_kl must be positive")
        if self.kind == "iso" and self.s < 0:
            raise ValueError("s must be non-negative")

    @property
    def target_sum_kl(self) -> float:
        if self.sum_kl is not None:
            return float(self.sum_kl)
        return sum_kl_target(self.L)

    @property
    def label(self) -> str:
        if self.kind == "iso":
            return f"iso(s={self.s:g})"
        if self.kind == "marvell":
            return f"marvell(L={self.L:g})" if self.L is not None else f"marvell(sumKL={self.sum_kl:g})"
        return self.kind


@dataclass
class Protector:
    """Callable hook ``(grads, labels) -> grads`` with its own RNG stream."""

    cfg: ProtectionConfig
    rng: np.random.Generator
    last_power: float | None = None
    history: list = field(default_factory=list)

    def __call__(self, grads, labels):
        kind = self.cfg.kind
        if kind == "none":
            return np.array(grads, dtype=float, copy=True)
        if kind == "iso":
            return iso_protect(grads, self.cfg.s, self.rng)
        y = np.asarray(labels).ravel()
        single = y.min() == y.max()
        if single:
            log.warning("single-class batch: %s passes gradients through", kind)
            return np.array(grads, dtype=float, copy=True)
        if kind == "max_norm":
            return max_norm_protect(grads, self.rng)
        if self.cfg.reuse_power and self.last_power is not None:
            return self._fixed_power(grads, y)
        info: dict = {}
        out = marvell_protect(grads, y, self.cfg.target_sum_kl, self.rng, info=info)
        self.last_power = info.get("power")
        self.history.append(self.last_power)
        return out

    def _fixed_power(self, grads, y):
        g = np.asarray(grads, dtype=float)
        stats = GradStats.from_batch(g, y)
        sol = marvell_solve(stats, self.last_power)
        out = g.copy()
        for cls_val, cov in ((1, sol.cov_pos(stats.direction)), (0, sol.cov_neg(stats.direction))):
            rows = y == cls_val
            out[rows] += sample_structured_gaussian(np.zeros(stats.d), cov, int(rows.sum()), self.rng)
        self.history.append(self.last_power)
        return out


def make_protector(cfg: ProtectionConfig, rng: np.random.Generator) -> Protector:
    return Protector(cfg, rng)
