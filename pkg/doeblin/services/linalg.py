"""
Dense linear-algebra operations every oracle relies on
"""

import logging
import warnings
from typing import Sequence

import numpy as np
import scipy.linalg

from doeblin.core.constants import FIXED_POINT_TOL
from doeblin.core.exceptions import InvalidInputError, NonErgodicKernelError
from doeblin.models.chain import DenseDistribution, DenseKernel, StateSpace

logger = logging.getLogger(__name__)

# Smallest pivot (relative to the largest) accepted by the stationary solve
_PIVOT_RTOL = 1e-12


def _check_same_space(n_left: int, n_right: int):
    if n_left != n_right:
        raise InvalidInputError(f"dimension mismatch: {n_left} vs {n_right}")


def apply(kernel: DenseKernel, dist: DenseDistribution) -> DenseDistribution:
    """One chain step in distribution space: result[y] = Σ_x dist[x]·kernel[x][y]"""
    _check_same_space(kernel.cardinality, dist.cardinality)
    return DenseDistribution.normalized(dist.space, dist.probs @ kernel.rows)


def tv_distance(p: DenseDistribution, q: DenseDistribution) -> float:
    """Total variation distance ½ Σ |p − q|"""
    _check_same_space(p.cardinality, q.cardinality)
    return float(0.5 * np.abs(p.probs - q.probs).sum())


def stationary_of(kernel: DenseKernel) -> DenseDistribution:
    """
    Unique stationary distribution π = πA.

    Solves (I − Aᵀ)π = 0 with the last equation replaced by Σπ = 1. A
    vanishing pivot or a residual above tolerance means the kernel has no
    unique stationary law.

    Periodic but irreducible kernels are accepted: their stationary law is
    unique and the solve is well posed, even though Aᵗ does not converge.
    Only reducible kernels (several closed classes) raise
    NonErgodicKernelError. Use stationary_power when convergence of the
    iterates matters.
    """
    n = kernel.cardinality
    system = np.eye(n) - kernel.rows.T
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(system, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= _PIVOT_RTOL * max(pivots.max(), 1.0):
        raise NonErgodicKernelError("non-ergodic kernel: stationary distribution is not unique")

    pi = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    if np.any(pi < -FIXED_POINT_TOL):
        raise NonErgodicKernelError("non-ergodic kernel: solve produced negative mass")
    result = DenseDistribution.normalized(kernel.space, pi)

    residual = float(np.max(np.abs(result.probs @ kernel.rows - result.probs)))
    if residual > FIXED_POINT_TOL:
        raise NonErgodicKernelError(f"non-ergodic kernel: fixed-point residual {residual:.3e}")
    logger.debug(f"stationary_solved n={n} residual={residual:.3e}")
    return result


def stationary_power(
    kernel: DenseKernel, tol: float = 1e-13, max_iter: int = 1_000_000
) -> DenseDistribution:
    """
    Power-iteration cross-check for stationary_of.

    Iterates the lazy chain (I + A)/2, which has the same stationary law and
    converges for periodic kernels too.
    """
    n = kernel.cardinality
    lazy = 0.5 * (np.eye(n) + kernel.rows)
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = mu @ lazy
        if 0.5 * np.abs(nxt - mu).sum() < tol:
            return DenseDistribution.normalized(kernel.space, nxt)
        mu = nxt
    raise NonErgodicKernelError(f"power iteration did not converge in {max_iter} steps")


def empirical_distribution(samples: Sequence[int], space: StateSpace) -> DenseDistribution:
    """Normalised histogram of flat state indices"""
    n = space.require_dense()
    indices = np.asarray(samples, dtype=np.int64)
    if indices.size == 0:
        raise InvalidInputError("empirical distribution of an empty sample")
    if indices.min() < 0 or indices.max() >= n:
        raise InvalidInputError(f"sample indices must lie in 0..{n - 1}")
    counts = np.bincount(indices, minlength=n)
    return DenseDistribution(space=space, probs=counts / counts.sum())
