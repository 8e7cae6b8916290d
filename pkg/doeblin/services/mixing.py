"""
Mixing diagnostics for restart chains: one-step contraction, convergence
curves and the distance between π_ε and the base chain's stationary law.
"""

import logging
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from numpy.random import Generator

from doeblin.core.constants import BOUND_TOL, FIXED_POINT_TOL, MASS_TOL, TAIL_MASS
from doeblin.core.exceptions import InvalidInputError
from doeblin.models.chain import DenseDistribution, DenseKernel, random_distribution
from doeblin.services.linalg import apply, stationary_of, tv_distance
from doeblin.services.restart import (
    check_epsilon,
    restart_series_terms,
    series_cutoff,
    stationary_dense,
    wrapped_dense_kernel,
)

logger = logging.getLogger(__name__)


class ContractionCheck(NamedTuple):
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + MASS_TOL


class MixingPoint(NamedTuple):
    t: int
    tv: float
    envelope: float


class GapRow(NamedTuple):
    epsilon: float
    gap: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound + BOUND_TOL


class AuditResult(NamedTuple):
    epsilon: float
    checks: List[ContractionCheck]

    @property
    def violations(self) -> int:
        return sum(not c.holds for c in self.checks)


def contraction_check(
    base: DenseKernel,
    reference: DenseDistribution,
    epsilon: float,
    mu: DenseDistribution,
    nu: DenseDistribution,
) -> ContractionCheck:
    """lhs = TV(μÃ, νÃ), rhs = (1−ε)·TV(μ, ν)"""
    wrapped = wrapped_dense_kernel(base, reference, epsilon)
    lhs = tv_distance(apply(wrapped, mu), apply(wrapped, nu))
    rhs = (1.0 - epsilon) * tv_distance(mu, nu)
    return ContractionCheck(lhs, rhs)


def contraction_audit(
    base: DenseKernel,
    reference: DenseDistribution,
    epsilon: float,
    rng: Generator,
    num_pairs: int = 100,
) -> AuditResult:
    """contraction_check over random Dirichlet pairs (μ, ν)"""
    checks = []
    for _ in range(num_pairs):
        mu = random_distribution(base.space, rng)
        nu = random_distribution(base.space, rng)
        checks.append(contraction_check(base, reference, epsilon, mu, nu))
    result = AuditResult(check_epsilon(epsilon), checks)
    if result.violations:
        logger.warning(
            f"contraction_violations epsilon={epsilon} violations={result.violations}"
        )
    return result


def mixing_curve(
    base: DenseKernel,
    reference: DenseDistribution,
    epsilon: float,
    start: DenseDistribution,
    t_max: int,
) -> List[MixingPoint]:
    """
    TV(start·Ãᵗ, π_ε) for t = 0..t_max with its (1−ε)ᵗ envelope.

    value(t) ≤ (1−ε)ᵗ·value(0) always holds up to round-off.
    """
    if t_max < 0:
        raise InvalidInputError("t_max must be nonnegative")
    wrapped = wrapped_dense_kernel(base, reference, epsilon)
    target = stationary_dense(base, reference, epsilon)

    dist = start
    initial = tv_distance(start, target)
    curve = []
    for t in range(t_max + 1):
        if t > 0:
            dist = apply(wrapped, dist)
        curve.append(MixingPoint(t, tv_distance(dist, target), (1.0 - epsilon) ** t * initial))
    return curve


def envelope_violations(curve: Sequence[MixingPoint]) -> int:
    return sum(point.tv > point.envelope + FIXED_POINT_TOL for point in curve)


def mixing_time(curve: Sequence[MixingPoint], threshold: float = 0.25) -> Optional[int]:
    """First t with TV below the threshold, None if the curve never gets there"""
    for point in curve:
        if point.tv <= threshold:
            return point.t
    return None


def approximation_gap(
    base: DenseKernel, reference: DenseDistribution, epsilons: Sequence[float]
) -> List[GapRow]:
    """
    TV(π_ε, π) per ε, with the bound proxy

        B(ε) = Σ_{t ≤ t_cap} ε(1−ε)^t · TV(π̃Aᵗ, π)

    where the neglected tail (1−ε)^(t_cap+1) is at most 1e-10. The terms are
    streamed, so memory stays O(N + t_cap) however small ε is. Raises
    NonErgodicKernelError when the base chain has no unique stationary law.
    """
    pi = stationary_of(base)
    caps = {eps: series_cutoff(check_epsilon(eps), TAIL_MASS) for eps in epsilons}
    num_terms = max(caps.values(), default=0) + 1
    term_gaps = np.fromiter(
        (
            0.5 * np.abs(term - pi.probs).sum()
            for term in restart_series_terms(base, reference, num_terms)
        ),
        dtype=np.float64,
        count=num_terms,
    )

    rows = []
    for eps in epsilons:
        cap = caps[eps]
        weights = eps * (1.0 - eps) ** np.arange(cap + 1)
        bound = float(weights @ term_gaps[: cap + 1])
        gap = tv_distance(stationary_dense(base, reference, eps), pi)
        rows.append(GapRow(float(eps), gap, bound))
        logger.debug(f"approximation_gap epsilon={eps} gap={gap:.6g} bound={bound:.6g}")
    return rows
