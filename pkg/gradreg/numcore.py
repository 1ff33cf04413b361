"""
Numeric foundation: Lp norms, dual exponents, the Gaussian CDF and seeded
random streams.

Vectors and matrices are plain float64 numpy arrays. Functions that take a
vector also accept a 2-D array and then work row-wise on the last axis.
"""

import logging
import math
from typing import Union

import numpy as np
from scipy.special import ndtr

from gradreg.errors import InvalidParameterError, ShapeError

logger = logging.getLogger(__name__)

INF = math.inf

# p this close to 1, or above P_INF_THRESHOLD, takes the exact limit path
P_ONE_TOL = 1e-9
P_INF_THRESHOLD = 1e6

ArrayLike = Union[np.ndarray, list, tuple]


def as_vector(v: ArrayLike, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_matrix(m: ArrayLike, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def canonical_p(p: float) -> float:
    """Validate p and snap it onto the exact limits 1 and inf when it is close."""
    p = float(p)
    if math.isnan(p) or p < 1.0:
        raise InvalidParameterError(f"norm parameter p must be in [1, inf], got {p}")
    if p - 1.0 <= P_ONE_TOL:
        return 1.0
    if p > P_INF_THRESHOLD:
        return INF
    return p


def lp_norm(v: ArrayLike, p: float):
    """
    Lp norm over the last axis.

    Returns a float for a vector and an array of row norms for a matrix.
    Finite p is evaluated as ``m * (sum (|v|/m)^p)^(1/p)`` with ``m = max|v|``
    so large exponents neither overflow nor underflow.
    """
    p = canonical_p(p)
    arr = np.abs(np.asarray(v, dtype=np.float64))
    if arr.shape[-1] == 0:
        out = np.zeros(arr.shape[:-1])
    elif p == INF:
        out = arr.max(axis=-1)
    elif p == 1.0:
        out = arr.sum(axis=-1)
    elif p == 2.0:
        out = np.sqrt(np.einsum("...i,...i->...", arr, arr))
    else:
        m = arr.max(axis=-1, keepdims=True)
        safe = np.where(m > 0, m, 1.0)
        scaled = np.sum((arr / safe) ** p, axis=-1) ** (1.0 / p)
        out = np.where(m[..., 0] > 0, m[..., 0] * scaled, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def dual_exponent(p: float) -> float:
    """The exponent p* with 1/p + 1/p* = 1 (1 and inf are each other's dual)."""
    p = canonical_p(p)
    if p == 1.0:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


def gaussian_cdf(z):
    """Standard normal CDF; accepts scalars or arrays, including +-inf."""
    out = ndtr(np.asarray(z, dtype=np.float64))
    if np.ndim(out) == 0:
        return float(out)
    return out


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 stream (period 2^128)."""
    return np.random.default_rng(seed)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent child stream for (seed, keys...); same keys give the same stream."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def gaussian_sample(rng: np.random.Generator, mu: float, sigma: float, n: int) -> np.ndarray:
    if sigma < 0:
        raise InvalidParameterError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.full(n, float(mu))
    return rng.normal(mu, sigma, size=n)


def histogram_counts(values: ArrayLike, bin_width: float) -> np.ndarray:
    """
    Counts of ``values`` in bins ``[k*w, (k+1)*w)`` starting at 0.

    The bin index carries a 1e-9 guard so a value produced as ``k*w`` lands
    in bin k rather than k-1 after rounding.
    """
    if bin_width <= 0:
        raise InvalidParameterError(f"bin_width must be positive, got {bin_width}")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(vals < 0):
        raise InvalidParameterError("histogram values must be non-negative")
    idx = np.floor(vals / bin_width + 1e-9).astype(np.int64)
    return np.bincount(idx)
