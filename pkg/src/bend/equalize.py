"""Debias step 2: minimally rotate an embedding so that its mean similarity
is equal across attribute groups.

The constraints "mean similarity to group i equals mean similarity to group
1" are homogeneous linear in the embedding, so the closest unit vector to the
input that satisfies them is the normalized projection of the input onto the
constraint null-space. The binary case additionally exposes the Lagrange
multiplier of the equivalent single-constraint problem; a projected-ascent
numeric solver is kept solely as an independent test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateMeans,
    NoConvergence,
    QueryInsideConstraintSpan,
    ZeroResult,
)
from .metrics import group_distance_gap
from .subspace import AttributeMatrix, orthogonalize
from .vectors import Vector, as_vector, gram_schmidt, normalize

MEANS_EQUAL_EPS = 1e-10
GAP_EPS = 1e-12
RESULT_EPS = 1e-10

MODES = ("baseline", "step1-only", "step2-only", "full")


@dataclass(frozen=True)
class EqualizationSolution:
    z_star: Vector
    lam: float | None             # Lagrange multiplier, binary closed form only
    residuals: tuple[float, ...]  # |mu_i . z* - mu_1 . z*| for i >= 2
    method: str                   # analytic-binary | projection-general | numeric
    iterations: int | None = None  # numeric oracle only

    @property
    def max_residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0


def _residuals(z: Vector, means: Sequence[Vector]) -> tuple[float, ...]:
    base = float(means[0] @ z)
    return tuple(abs(float(m @ z) - base) for m in means[1:])


def solve_binary(z_prime, mu1, mu2) -> EqualizationSolution:
    """Closed-form equalization for a binary attribute.

    With raw (unnormalized) group means mu1, mu2 and a unit-norm input z',
    the minimizer is normalize(z' - lam*mu2 + lam*mu1) with

        lam = (mu1.z' - mu2.z') / (2*mu1.mu2 - mu2.mu2 - mu1.mu1)

    whose denominator is -||mu2 - mu1||^2.
    """
    z = as_vector(z_prime)
    m1 = as_vector(mu1)
    m2 = as_vector(mu2)
    gap = float(m1 @ z) - float(m2 @ z)
    diff_norm = float(np.linalg.norm(m1 - m2))
    if diff_norm <= MEANS_EQUAL_EPS:
        if abs(gap) <= GAP_EPS:
            # Identical means satisfy the constraint for every z.
            return EqualizationSolution(z.copy(), 0.0, _residuals(z, (m1, m2)),
                                        "analytic-binary")
        raise DegenerateMeans(
            "group means coincide but mean similarities differ; input is inconsistent"
        )
    if abs(gap) <= GAP_EPS:
        return EqualizationSolution(z.copy(), 0.0, _residuals(z, (m1, m2)),
                                    "analytic-binary")
    denominator = 2.0 * float(m1 @ m2) - float(m2 @ m2) - float(m1 @ m1)
    lam = gap / denominator
    unnormalized = z - lam * m2 + lam * m1
    if float(np.linalg.norm(unnormalized)) < RESULT_EPS:
        raise ZeroResult("equalized vector collapsed to zero")
    z_star = normalize(unnormalized)
    return EqualizationSolution(z_star, lam, _residuals(z_star, (m1, m2)),
                                "analytic-binary")


def solve_general(z_prime, means: Sequence) -> EqualizationSolution:
    """Equalization for any number of groups via null-space projection.

    The constraints (mu_k - mu_1).z = 0 are homogeneous linear, so the
    constrained maximizer of z.z' on the unit sphere is the normalized
    projection of z' onto their orthogonal complement. Identical means make
    the constraints vacuous and return z' unchanged.
    """
    z = as_vector(z_prime)
    mus = [as_vector(m) for m in means]
    if len(mus) < 2:
        raise ConfigError("equalization needs at least two group means")
    deltas = [m - mus[0] for m in mus[1:]]
    if all(float(np.linalg.norm(d)) <= MEANS_EQUAL_EPS for d in deltas):
        return EqualizationSolution(z.copy(), None, _residuals(z, mus),
                                    "projection-general")
    basis, _ = gram_schmidt(deltas)
    residual = z - basis.T @ (basis @ z)
    residual -= basis.T @ (basis @ residual)
    if float(np.linalg.norm(residual)) < RESULT_EPS:
        raise QueryInsideConstraintSpan(
            "query lies inside the span of the constraint directions"
        )
    z_star = normalize(residual)
    return EqualizationSolution(z_star, None, _residuals(z_star, mus),
                                "projection-general")


def _span_basis_svd(deltas: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the row span via SVD (independent of gram_schmidt)."""
    if deltas.size == 0:
        return np.empty((0, deltas.shape[1] if deltas.ndim == 2 else 0))
    _, singular, vt = np.linalg.svd(deltas, full_matrices=False)
    keep = singular > 1e-12 * (singular[0] if singular.size else 1.0)
    return vt[keep]


def solve_numeric_oracle(
    z_prime,
    means: Sequence,
    tol: float = 1e-10,
    max_iterations: int = 10000,
) -> EqualizationSolution:
    """Projected-ascent maximizer of z.z' on the constrained unit sphere.

    Alternates a tangent gradient step toward z', projection onto the
    complement of the constraint span, and renormalization. Intended as an
    independent oracle for the closed forms, not a production path.
    """
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    z_ref = as_vector(z_prime)
    mus = [as_vector(m) for m in means]
    if len(mus) < 2:
        raise ConfigError("equalization needs at least two group means")
    deltas = np.stack([m - mus[0] for m in mus[1:]])
    span = _span_basis_svd(deltas)

    def project(x: np.ndarray) -> np.ndarray:
        if span.shape[0] == 0:
            return x
        return x - span.T @ (span @ x)

    start = project(z_ref)
    start_norm = float(np.linalg.norm(start))
    if start_norm < RESULT_EPS:
        raise QueryInsideConstraintSpan(
            "query lies inside the span of the constraint directions"
        )
    z = start / start_norm
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        gradient = z_ref - float(z @ z_ref) * z
        stepped = project(z + gradient)
        norm = float(np.linalg.norm(stepped))
        if norm < RESULT_EPS:
            raise ZeroResult("ascent step collapsed to zero")
        z_new = stepped / norm
        change = float(np.linalg.norm(z_new - z))
        z = z_new
        if change < tol:
            converged = True
            break
    residuals = _residuals(z, mus)
    if not converged and max(residuals, default=0.0) > 1e-6:
        raise NoConvergence(
            f"no convergence after {max_iterations} iterations; "
            f"max residual {max(residuals):.3e}"
        )
    return EqualizationSolution(z, None, residuals, "numeric", iterations=iterations)


@dataclass(frozen=True)
class DebiasReport:
    """Everything one debias run produced, for diagnostics and serialization."""

    mode: str
    baseline: Vector
    step1: Vector | None
    final: Vector
    lam: float | None
    residuals: tuple[float, ...]
    dropped_columns: int
    distance_gap: dict[str, float | None]  # per-stage group distance gaps
    skipped: bool = False
    skip_reason: str | None = None
    augmented_texts: dict[str, str] | None = None


def _equalize(z: Vector, subsets) -> EqualizationSolution:
    means = [subsets.means[value] for value in subsets.indices]
    if len(means) == 2:
        return solve_binary(z, means[0], means[1])
    return solve_general(z, means)


def debias(query_emb, matrix: AttributeMatrix | None, subsets, mode: str) -> DebiasReport:
    """Run one ablation mode of the two-step debiasing pipeline.

    ``subsets`` supplies the per-value relevant reference records whose raw
    means define the equalization constraints; the report records the
    group-distance gap over those records at every stage it produces.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    query = normalize(query_emb)
    groups = subsets.group_vectors()
    gap_by_stage: dict[str, float | None] = {
        "baseline": group_distance_gap(query, groups),
        "step1": None,
    }
    step1 = None
    lam = None
    residuals: tuple[float, ...] = ()
    dropped = matrix.dropped_count if matrix is not None else 0

    if mode == "baseline":
        final = query
    elif mode == "step1-only":
        step1 = orthogonalize(query, matrix)
        gap_by_stage["step1"] = group_distance_gap(step1, groups)
        final = step1
    elif mode == "step2-only":
        solution = _equalize(query, subsets)
        lam = solution.lam
        residuals = solution.residuals
        final = solution.z_star
    else:  # full
        step1 = orthogonalize(query, matrix)
        gap_by_stage["step1"] = group_distance_gap(step1, groups)
        solution = _equalize(step1, subsets)
        lam = solution.lam
        residuals = solution.residuals
        final = solution.z_star

    gap_by_stage["final"] = group_distance_gap(final, groups)
    return DebiasReport(
        mode=mode,
        baseline=query,
        step1=step1,
        final=final,
        lam=lam,
        residuals=residuals,
        dropped_columns=dropped,
        distance_gap=gap_by_stage,
    )
