"""Small deterministic numerical kernel.

Random numbers come from numpy's ``PCG64`` bit generator, always seeded
explicitly; nothing here touches global RNG state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError

UNIT_TOL = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    """Return a fresh PCG64 generator for ``seed`` (64-bit integer)."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def child_seed(seed: int, *tags: int | str) -> int:
    """Derive a reproducible sub-seed from ``seed`` and integer/string tags."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            words.extend(t.encode())
        else:
            words.append(int(t) & 0xFFFFFFFFFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class StructuredCov:
    """Covariance ``(lam_along - lam_iso) dir dir^T + lam_iso I``."""

    lam_along: float
    lam_iso: float
    dir: np.ndarray

    def __post_init__(self):
        if self.lam_along < 0 or self.lam_iso < 0:
            raise ValueError("variances must be non-negative")
        n = float(np.linalg.norm(self.dir))
        if abs(n - 1.0) > UNIT_TOL:
            raise ValueError(f"dir must be unit norm, got norm {n}")

    @property
    def dim(self) -> int:
        return self.dir.shape[0]

    def matrix(self) -> np.ndarray:
        d = self.dir
        return (self.lam_along - self.lam_iso) * np.outer(d, d) + self.lam_iso * np.eye(d.shape[0])


def sample_structured_gaussian(mean, cov: StructuredCov, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows from N(mean, cov).

    Uses ``mean + sqrt(lam_iso) z + (sqrt(lam_along) - sqrt(lam_iso)) (dir.z) dir``
    with ``z ~ N(0, I)``, which has exactly the structured covariance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mean = np.asarray(mean, dtype=float)
    if mean.shape != cov.dir.shape:
        raise ValueError("mean and dir lengths differ")
    z = rng.standard_normal((n, mean.shape[0]))
    a, b = np.sqrt(cov.lam_iso), np.sqrt(cov.lam_along)
    out = mean + a * z
    if b != a:
        out += (b - a) * np.outer(z @ cov.dir, cov.dir)
    return out


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def top_singular_direction(X, max_iters: int = 1000, tol: float = 1e-9, return_trace: bool = False):
    """Unit vector maximising ``v^T Cov(X) v``, found by power iteration.

    Works on the d x d centred covariance. The sign is fixed so the
    largest-magnitude coordinate is positive. With ``return_trace`` the
    Rayleigh quotient after every iteration is returned as well.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / X.shape[0]
    scale = float(np.trace(C))
    if scale <= 0.0 or not np.isfinite(scale):
        raise DegenerateDataError("covariance is zero")
    C = C / scale
    d = C.shape[0]
    # start from the column of largest norm; a fixed start keeps runs reproducible
    v = C[:, int(np.argmax(np.einsum("ij,ij->j", C, C)))].copy()
    v /= np.linalg.norm(v)
    trace = [float(v @ C @ v)]
    for _ in range(max_iters):
        w = C @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        w /= nw
        cos = abs(float(w @ v))
        v = w
        trace.append(float(v @ C @ v))
        if 1.0 - cos < tol:
            break
    v = _canonical_sign(v / np.linalg.norm(v))
    if d == 1:
        v = np.ones(1)
    if return_trace:
        return v, [t * scale for t in trace]
    return v


# -- plain helpers -----------------------------------------------------------

def _check_len(x, y):
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")


def add(x, y):
    _check_len(x, y)
    return np.asarray(x, dtype=float) + np.asarray(y, dtype=float)


def scale(x, c: float):
    return c * np.asarray(x, dtype=float)


def dot(x, y) -> float:
    _check_len(x, y)
    return float(np.dot(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))


def norm2(x) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=float)))


def mean_rows(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-D matrix")
    return X.mean(axis=0)


def centered_cov_trace(X) -> float:
    """Trace of the (biased) sample covariance of the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    Xc = X - mean_rows(X)
    return float(np.einsum("ij,ij->", Xc, Xc) / X.shape[0])
