"""Dense parameter-vector arithmetic and similarity measures.

A parameter vector is a 1-D float64 numpy array of fixed length p.  All
models, updates, and predictions in the package are flattened into this
representation.  Accumulations use numpy's left-to-right (pairwise) sums,
which is consistent across runs of the same build; determinism is what
matters here, not a particular summation order.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import DimensionMismatch, ZeroNormVector


def as_vector(values, *, copy: bool = False) -> np.ndarray:
    """Coerce to a finite 1-D float64 vector, validating the invariants."""
    v = np.array(values, dtype=np.float64, copy=True) if copy else np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains NaN or Inf")
    return v


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")


def dot(a, b) -> float:
    """Inner product a . b."""
    a, b = as_vector(a), as_vector(b)
    _check_same_dim(a, b)
    return float(a @ b)


def norm(a) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(as_vector(a)))


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1].

    Raises ZeroNormVector when either input has zero norm: the angle of a
    zero update is undefined and the caller must pick a fallback.
    """
    a, b = as_vector(a), as_vector(b)
    _check_same_dim(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormVector("cosine similarity of a zero-norm vector is undefined")
    # Clamp against floating-point drift so downstream range checks are exact.
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def cosine_distance(a, b) -> float:
    """1 - cosine_similarity(a, b), in [0, 2]."""
    return 1.0 - cosine_similarity(a, b)


def weighted_sum(vectors: Sequence, weights: Sequence[float]) -> np.ndarray:
    """Weighted sum of equally sized vectors."""
    if len(vectors) == 0:
        raise DimensionMismatch("weighted_sum of an empty vector list")
    if len(vectors) != len(weights):
        raise DimensionMismatch(f"{len(vectors)} vectors but {len(weights)} weights")
    vecs = [as_vector(v) for v in vectors]
    for v in vecs[1:]:
        _check_same_dim(vecs[0], v)
    stacked = np.stack(vecs, axis=0)
    w = np.asarray(weights, dtype=np.float64)
    return w @ stacked
