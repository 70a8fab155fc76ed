"""Deterministic numerical substrate: SPD matrices, Cholesky, seeded sampling.

Everything here is a pure function of its inputs (including the RNG stream),
so any computation built on top can be replayed bit-for-bit from a seed.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import InvalidHyperparameter, NotPositiveDefinite

# Relative symmetry tolerance accepted on ingest; anything worse is a bug
# upstream, not accumulation drift.
SYMMETRY_RTOL = 1e-12

# Dense storage only; vectors beyond this are rejected at validation time.
MAX_DIM = 512


def rng_stream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent, reproducible random stream.

    The stream is identified by ``(seed, *path)``: identical identifiers give
    identical draw sequences, distinct paths give statistically independent
    streams (counter-based Philox under a spawned SeedSequence). Callers own
    the returned generator exclusively; splitting further is just another
    ``path`` element.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def as_vector(values, d: int | None = None) -> np.ndarray:
    """Validate and return a finite 1-d float64 feature vector."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if v.size > MAX_DIM:
        raise ValueError(f"vector dimension {v.size} exceeds supported max {MAX_DIM}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    if d is not None and v.size != d:
        raise ValueError(f"expected dimension {d}, got {v.size}")
    return v


def as_spd(matrix) -> np.ndarray:
    """Validate a symmetric matrix and return its symmetrized copy.

    Symmetry is checked to ``SYMMETRY_RTOL`` relative; the returned matrix is
    ``(M + M.T) / 2`` so that rank-1 update drift cannot accumulate. Positive
    definiteness is only established by a later factorization.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return (m + m.T) / 2.0


def cholesky(matrix) -> np.ndarray:
    """Lower-triangular factor L with ``L @ L.T == matrix``.

    Raises NotPositiveDefinite when any pivot is non-positive.
    """
    m = as_spd(matrix)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def sample_mvn(
    rng: np.random.Generator,
    mean,
    precision,
    scale: float = 1.0,
    size: int | None = None,
    chol_precision: np.ndarray | None = None,
) -> np.ndarray:
    """Draw from a Gaussian parameterized by mean, precision and scale.

    The covariance is ``scale * inv(precision)``. ``chol_precision`` may pass
    a precomputed lower Cholesky factor of the precision matrix to skip
    refactorization in hot loops. With ``size=None`` returns one vector of
    shape (d,); otherwise shape (size, d).
    """
    mu = as_vector(mean)
    if scale < 0:
        raise InvalidHyperparameter(f"scale must be >= 0, got {scale}")
    L = cholesky(precision) if chol_precision is None else chol_precision
    if L.shape[0] != mu.size:
        raise ValueError("mean and precision dimensions disagree")
    n = 1 if size is None else int(size)
    z = rng.standard_normal((mu.size, n))
    # cov = scale * (L L^T)^-1, so x = mu + sqrt(scale) * L^-T z.
    x = mu[:, None] + np.sqrt(scale) * solve_triangular(L, z, lower=True, trans="T")
    return x[:, 0] if size is None else x.T


def sample_inverse_gamma(
    rng: np.random.Generator, a: float, b: float, size: int | None = None
):
    """Draw from InverseGamma(shape=a, rate=b); mean is b / (a - 1) for a > 1."""
    if a <= 0 or b <= 0:
        raise InvalidHyperparameter(f"inverse-gamma needs a > 0 and b > 0, got ({a}, {b})")
    return 1.0 / rng.gamma(shape=a, scale=1.0 / b, size=size)


def sample_gaussian(
    rng: np.random.Generator, mean: float, std: float, size: int | None = None
):
    """Univariate Gaussian draw; thin wrapper kept for a uniform sampling surface."""
    if std < 0:
        raise InvalidHyperparameter(f"std must be >= 0, got {std}")
    return mean + std * rng.standard_normal(size=size)


def sample_gamma(
    rng: np.random.Generator, shape: float, rate: float, size: int | None = None
):
    """Gamma draw parameterized by shape and rate."""
    if shape <= 0 or rate <= 0:
        raise InvalidHyperparameter(f"gamma needs shape > 0 and rate > 0, got ({shape}, {rate})")
    return rng.gamma(shape=shape, scale=1.0 / rate, size=size)
