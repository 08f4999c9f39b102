"""AUC, adaptive calibration error and Gaussian divergences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import SingularDivergenceError, UndefinedAUCError
from .numerics import StructuredCov, sample_structured_gaussian

VARIANCE_FLOOR = 1e-12


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs both classes")
    ranks = rankdata(s)  # midranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ace(pred_probs, labels, n_bins: int = 10) -> float:
    """Adaptive calibration error over ``n_bins`` equal-mass bins.

    A sample whose probability has (0-based) rank ``r`` among ``n`` goes to
    bin ``floor(r * n_bins / n)``, using the lowest rank of its tie group so
    tied probabilities always share a bin. Without ties the bins are
    contiguous and their sizes differ by at most one. Returns the
    count-weighted mean over non-empty bins of ``|mean prob - positive fraction|``.
    """
    p = np.asarray(pred_probs, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if p.shape != y.shape:
        raise ValueError("probabilities and labels differ in length")
    if n_bins < 1 or n_bins > p.size:
        raise ValueError(f"n_bins must be in [1, {p.size}]")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    n = p.size
    r = rankdata(p, method="min") - 1
    bins = (r * n_bins) // n
    counts = np.bincount(bins, minlength=n_bins)
    sum_p = np.bincount(bins, weights=p, minlength=n_bins)
    sum_y = np.bincount(bins, weights=y, minlength=n_bins)
    used = counts > 0
    gaps = np.abs(sum_p[used] - sum_y[used]) / counts[used]
    return float(np.sum(gaps * counts[used]) / n)


# -- Gaussians with commuting structured covariance -------------------------

@dataclass(frozen=True)
class GaussianSpec:
    """N(mean, (var_along - var_iso) dir dir^T + var_iso I)."""

    mean: np.ndarray
    var_along: float
    var_iso: float
    dir: np.ndarray

    @property
    def dim(self) -> int:
        return int(np.asarray(self.mean).shape[0])

    @property
    def spherical(self) -> bool:
        return self.var_along == self.var_iso

    def cov(self) -> StructuredCov:
        return StructuredCov(self.var_along, self.var_iso, np.asarray(self.dir, dtype=float))

    def logpdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = self.dim
        diff = X - self.mean
        along = diff @ self.dir
        perp_sq = np.einsum("ij,ij->i", diff, diff) - along**2
        return -0.5 * (
            d * np.log(2 * np.pi)
            + np.log(self.var_along)
            + (d - 1) * np.log(self.var_iso)
            + along**2 / self.var_along
            + perp_sq / self.var_iso
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return sample_structured_gaussian(self.mean, self.cov(), n, rng)


def _shared_dir(a: GaussianSpec, b: GaussianSpec) -> np.ndarray:
    if not a.spherical and not b.spherical:
        if not np.allclose(a.dir, b.dir, atol=1e-9) and not np.allclose(a.dir, -b.dir, atol=1e-9):
            raise ValueError("covariances do not commute: directions differ")
        return np.asarray(a.dir, dtype=float)
    if not a.spherical:
        return np.asarray(a.dir, dtype=float)
    return np.asarray(b.dir, dtype=float)


def gaussian_sum_kl(a: GaussianSpec, b: GaussianSpec) -> float:
    """KL(a||b) + KL(b||a) for a commuting pair, in closed form.

    The pair splits into one 1-D problem along the shared direction and
    d-1 identical isotropic ones; log-determinant terms cancel in the sum.
    """
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    variances = (a.var_along, a.var_iso, b.var_along, b.var_iso)
    if min(variances) <= 0:
        raise SingularDivergenceError("zero variance component")
    u = _shared_dir(a, b)
    delta = np.asarray(a.mean, dtype=float) - np.asarray(b.mean, dtype=float)
    d_along = float(delta @ u) ** 2
    d_perp = max(float(delta @ delta) - d_along, 0.0)
    d = a.dim

    def pair(s1, s2, m2):
        return 0.5 * (s1 / s2 + s2 / s1 - 2.0 + m2 * (1.0 / s1 + 1.0 / s2))

    # the d-1 orthogonal coordinates share one variance pair; their squared
    # mean differences add up to d_perp
    total = pair(a.var_along, b.var_along, d_along) + (d - 1) * pair(a.var_iso, b.var_iso, 0.0)
    total += 0.5 * d_perp * (1.0 / a.var_iso + 1.0 / b.var_iso)
    return float(total)


def tv_upper_bound(sum_kl: float) -> float:
    """``TV <= sqrt(sum_kl) / 2`` (Pinsker on each KL, then Jensen)."""
    if sum_kl < 0:
        raise ValueError("sum_kl must be non-negative")
    return 0.5 * float(np.sqrt(sum_kl))


def detection_error_lower_bound(sum_kl: float) -> float:
    """Worst-case detection error ``(1 - TV)/2`` implied by the bound, clamped to [0, 0.5]."""
    return float(np.clip((1.0 - tv_upper_bound(sum_kl)) / 2.0, 0.0, 0.5))


def sum_kl_target(L: float) -> float:
    """Largest sumKL that still guarantees detection error >= L."""
    if not 0 < L < 0.5:
        raise ValueError("L must lie in (0, 0.5)")
    return (2.0 - 4.0 * L) ** 2


def mc_tv_estimate(a: GaussianSpec, b: GaussianSpec, n: int, rng: np.random.Generator):
    """Monte Carlo total variation between two Gaussians.

    Samples from the equal mixture m = (a+b)/2 and averages
    ``|a(x) - b(x)| / (2 m(x))``. Returns ``(estimate, stderr)``.
    """
    if n < 10_000:
        raise ValueError("n must be at least 1e4")
    which = rng.random(n) < 0.5
    n_a = int(which.sum())
    X = np.empty((n, a.dim))
    X[which] = a.sample(n_a, rng)
    X[~which] = b.sample(n - n_a, rng)
    la, lb = a.logpdf(X), b.logpdf(X)
    # |a-b|/(a+b) = |tanh((la-lb)/2)|, stable for large log ratios
    vals = np.abs(np.tanh(0.5 * (la - lb)))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


def fit_spherical_pair(g_pos, g_neg, floor: float | None = None):
    """Maximum-likelihood spherical Gaussian fit of each class.

    Returns ``(spec_pos, spec_neg)``; both share ``dir = (mean_pos - mean_neg)/norm``
    (``e_1`` when the means coincide). Variances are ``sum ||g - mean||^2 / (n d)``,
    optionally floored.
    """
    g_pos = np.atleast_2d(np.asarray(g_pos, dtype=float))
    g_neg = np.atleast_2d(np.asarray(g_neg, dtype=float))
    if g_pos.shape[0] == 0 or g_neg.shape[0] == 0 or g_pos.size == 0 or g_neg.size == 0:
        raise ValueError("both classes need at least one row")
    if g_pos.shape[1] != g_neg.shape[1]:
        raise ValueError("dimension mismatch")
    d = g_pos.shape[1]
    m1, m0 = g_pos.mean(axis=0), g_neg.mean(axis=0)
    u = float(((g_pos - m1) ** 2).sum() / (g_pos.shape[0] * d))
    v = float(((g_neg - m0) ** 2).sum() / (g_neg.shape[0] * d))
    if floor is not None:
        u, v = max(u, floor), max(v, floor)
    delta = m1 - m0
    nd = float(np.linalg.norm(delta))
    if nd > 0:
        direction = delta / nd
    else:
        direction = np.zeros(d)
        direction[0] = 1.0
    return GaussianSpec(m1, u, u, direction), GaussianSpec(m0, v, v, direction)
