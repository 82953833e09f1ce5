"""Deterministic numeric primitives: seeded RNG, row normalization, stable
log-sum-exp, and pairwise similarity/distance kernels.

All functions are pure and operate on float64 numpy arrays. The RNG is
numpy's PCG64; child streams are derived with ``SeedSequence.spawn`` so
parallel consumers stay independent and reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyInput, NonFiniteInput, ShapeMismatch, ZeroNormRow

ZERO_NORM_EPS = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator. Same seed, same build => same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent child generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteInput(f"{name} contains NaN or Inf")
    return a


def normalize_rows(m, eps: float = ZERO_NORM_EPS) -> np.ndarray:
    """Scale each row to unit Euclidean norm.

    Rows with norm below ``eps`` are reported via ZeroNormRow rather than
    silently divided. Rows already unit within 1e-13 are left untouched,
    which makes normalization bitwise idempotent.
    """
    a = as_matrix(m)
    if eps <= 0:
        raise ValueError("eps must be positive")
    norms = np.linalg.norm(a, axis=1)
    small = np.flatnonzero(norms < eps)
    if small.size:
        i = int(small[0])
        raise ZeroNormRow(i, float(norms[i]))
    scale = np.where(np.abs(norms - 1.0) <= 1e-13, 1.0, norms)
    return a / scale[:, None]


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Inner products between rows of a and rows of b.

    Equals cosine similarity when the rows are unit-norm (caller contract).
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


def clamp_cosines(s: np.ndarray) -> np.ndarray:
    """Clamp similarity values into [-1, 1] before any arccos."""
    return np.clip(s, -1.0, 1.0)


def log_sum_exp(v) -> float:
    """log(sum(exp(v))) via max-shift; safe for |v_i| up to ~1e4."""
    a = np.asarray(v, dtype=np.float64).ravel()
    if a.size == 0:
        raise EmptyInput("log_sum_exp of empty vector")
    if not np.isfinite(a).all():
        raise NonFiniteInput("log_sum_exp input contains NaN or Inf")
    m = a.max()
    return float(m + np.log(np.exp(a - m).sum()))


def log_sum_exp_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise stable log-sum-exp for a 2-D array."""
    mx = m.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(m - mx).sum(axis=1, keepdims=True)))[:, 0]


def softmax_rows(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1, keepdims=True)
    e = np.exp(m - mx)
    return e / e.sum(axis=1, keepdims=True)


def pairwise_sq_dist(a, b) -> np.ndarray:
    """Squared Euclidean distances ||a_i - b_j||^2.

    Computed via the expanded form with a final clip at zero so the
    diagonal of pairwise_sq_dist(x, x) is exactly 0 after symmetrization.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    aa = (a * a).sum(axis=1)
    bb = (b * b).sum(axis=1)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    if a is b:
        d2 = 0.5 * (d2 + d2.T)
        np.fill_diagonal(d2, 0.0)
    return d2
