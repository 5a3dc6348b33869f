"""Dense embedding-vector arithmetic shared by every pipeline stage.

All math runs in float64 regardless of the 32-bit storage format, and every
function treats its inputs as immutable.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptySet, ZeroVector

# Norms at or below this are treated as zero vectors.
ZERO_NORM_EPS = 1e-12
# Relative residual below which a candidate column adds no new rank.
RANK_REL_TOL = 1e-8

Vector = np.ndarray


def as_vector(values: Sequence[float] | np.ndarray) -> Vector:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {arr.shape}")
    return arr


def _same_dim(u: Vector, v: Vector) -> None:
    if u.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")


def normalize(v) -> Vector:
    """Scale ``v`` to unit Euclidean norm, preserving direction."""
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm <= ZERO_NORM_EPS:
        raise ZeroVector("cannot normalize a (near-)zero vector")
    return arr / norm


def cosine_similarity(u, v) -> float:
    a = as_vector(u)
    b = as_vector(v)
    _same_dim(a, b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= ZERO_NORM_EPS or nb <= ZERO_NORM_EPS:
        raise ZeroVector("cosine similarity is undefined for zero vectors")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def cosine_distance(u, v) -> float:
    """1 - cosine similarity: 0 for identical directions, 2 for antipodal."""
    return 1.0 - cosine_similarity(u, v)


def mean_embedding(vectors: Iterable) -> Vector:
    """Componentwise mean of a non-empty collection.

    Deliberately not renormalized: downstream equalization works with raw
    group means, and callers must treat a (near-)zero mean as degenerate.
    """
    rows = [as_vector(v) for v in vectors]
    if not rows:
        raise EmptySet("mean of an empty collection of vectors")
    dim = rows[0].shape[0]
    for r in rows[1:]:
        _same_dim(rows[0], r)
    return np.stack(rows).mean(axis=0)


def _as_basis(basis) -> np.ndarray:
    arr = np.asarray(basis, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


def project_out(v, basis) -> Vector:
    """Residual of ``v`` after removing its components along an orthonormal basis.

    ``basis`` is a (r, d) array (or sequence of vectors) assumed mutually
    orthonormal. May return a near-zero vector; callers decide whether that
    is degenerate.
    """
    arr = as_vector(v)
    b = _as_basis(basis)
    if b.size == 0:
        return arr.copy()
    _same_dim(arr, b[0])
    residual = arr - b.T @ (b @ arr)
    # Second pass scrubs reintroduced components when v nearly lies in the span.
    residual = residual - b.T @ (b @ residual)
    return residual


def gram_schmidt(columns: Iterable, rel_tol: float = RANK_REL_TOL) -> tuple[np.ndarray, int]:
    """Sequential Gram-Schmidt with rank filtering.

    Columns whose residual norm after projection onto the accepted basis
    falls below ``rel_tol`` times their original norm are dropped (zero
    columns always are). Returns the orthonormal basis as an (r, d) array,
    in acceptance order, plus the dropped-column count.
    """
    basis: list[np.ndarray] = []
    dropped = 0
    dim = None
    for col in columns:
        vec = as_vector(col)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DimensionMismatch("columns must share one dimension")
        original = float(np.linalg.norm(vec))
        if original <= ZERO_NORM_EPS:
            dropped += 1
            continue
        residual = vec.copy()
        for b in basis:
            residual -= (residual @ b) * b
        for b in basis:
            residual -= (residual @ b) * b
        norm = float(np.linalg.norm(residual))
        if norm < rel_tol * original:
            dropped += 1
            continue
        basis.append(residual / norm)
    if not basis:
        return np.empty((0, 0 if dim is None else dim)), dropped
    return np.stack(basis), dropped
