"""
Restart (strong Doeblin) chains.

The wrapped kernel is Ã = (1−ε)·A + ε·𝟙π̃ᵀ: each step first decides whether
to restart from the reference π̃ and otherwise takes one base step. Its
stationary law is the geometric mixture π_ε = ε Σ_t (1−ε)^t π̃Aᵗ, which is
sampled exactly by drawing the time since the last restart.
"""

import logging
import math
from typing import Iterator, List, NamedTuple, Union

import numpy as np
import scipy.linalg
from numpy.random import Generator
from pydantic import BaseModel, ConfigDict, field_validator

from doeblin.core.constants import FIXED_POINT_TOL
from doeblin.core.exceptions import InvalidInputError, SolverError
from doeblin.models.chain import (
    DenseDistribution,
    DenseKernel,
    DenseKernelSampler,
    ReferenceDistribution,
    SamplingKernel,
    State,
)

logger = logging.getLogger(__name__)


def check_epsilon(epsilon: float) -> float:
    """Restart probability must lie in (0, 1]"""
    epsilon = float(epsilon)
    if not (0.0 < epsilon <= 1.0):
        raise InvalidInputError(f"epsilon must lie in (0, 1], got {epsilon}")
    return epsilon


class DoeblinChain(BaseModel):
    """Base kernel A, reference π̃ and restart probability ε"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    base: SamplingKernel
    reference: ReferenceDistribution
    epsilon: float

    @field_validator("epsilon")
    @classmethod
    def validate_epsilon(cls, v: float) -> float:
        return check_epsilon(v)

    @field_validator("base", mode="before")
    @classmethod
    def wrap_dense_base(cls, v):
        """A bare DenseKernel is accepted and wrapped in a sampler"""
        if isinstance(v, DenseKernel):
            return DenseKernelSampler(v)
        return v

    @property
    def space(self):
        return self.base.space

    def dense_kernel(self) -> DenseKernel:
        return wrapped_dense_kernel(self.base.dense(), self.reference.to_dense(), self.epsilon)

    def stationary(self) -> DenseDistribution:
        return stationary_dense(self.base.dense(), self.reference.to_dense(), self.epsilon)


class RestartEvent(NamedTuple):
    restarted: bool
    next_state: State


def wrapped_step(chain: DoeblinChain, x: State, rng: Generator) -> RestartEvent:
    """One step of Ã; the restart decision is drawn before (and replaces) the base step"""
    x = chain.space.validate_state(x)
    if chain.epsilon >= 1.0 or rng.random() < chain.epsilon:
        return RestartEvent(True, chain.reference.sample(rng))
    return RestartEvent(False, chain.base.step(x, rng))


def run_wrapped_chain(chain: DoeblinChain, x: State, num_steps: int, rng: Generator) -> List[State]:
    """Forward trajectory of Ã starting from x (x included)"""
    states = [chain.space.validate_state(x)]
    for _ in range(num_steps):
        states.append(wrapped_step(chain, states[-1], rng).next_state)
    return states


def sample_restart_time(epsilon: float, rng: Generator) -> int:
    """T with P(T = t) = ε(1−ε)^t, by inversion of one uniform"""
    epsilon = check_epsilon(epsilon)
    if epsilon == 1.0:
        return 0
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return int(math.floor(math.log(u) / math.log1p(-epsilon)))


def sample_restart_times(epsilon: float, rng: Generator, size: int) -> np.ndarray:
    """Vectorised sample_restart_time"""
    epsilon = check_epsilon(epsilon)
    if epsilon == 1.0:
        return np.zeros(size, dtype=np.int64)
    u = rng.random(size)
    while np.any(u == 0.0):
        zero = u == 0.0
        u[zero] = rng.random(int(zero.sum()))
    return np.floor(np.log(u) / np.log1p(-epsilon)).astype(np.int64)


def sample_stationary(chain: DoeblinChain, rng: Generator) -> State:
    """
    Exact draw from π_ε: T ~ Geom(ε), x₀ ~ π̃, then T base steps.

    No restarts happen after x₀ because T is the time since the last one.
    """
    steps = sample_restart_time(chain.epsilon, rng)
    x = chain.reference.sample(rng)
    for _ in range(steps):
        x = chain.base.step(x, rng)
    return x


def sample_stationary_batch(
    base: Union[DenseKernel, DenseKernelSampler],
    reference: DenseDistribution,
    epsilon: float,
    rng: Generator,
    size: int,
) -> np.ndarray:
    """Flat indices of `size` exact π_ε draws for a dense base kernel"""
    sampler = base if isinstance(base, DenseKernelSampler) else DenseKernelSampler(base)
    steps = sample_restart_times(epsilon, rng, size)
    current = reference.sample_indices(rng, size)
    for t in range(int(steps.max(initial=0))):
        active = np.flatnonzero(steps > t)
        current[active] = sampler.step_indices(current[active], rng)
    return current


def wrapped_dense_kernel(
    base: DenseKernel, reference: DenseDistribution, epsilon: float
) -> DenseKernel:
    """Ã = (1−ε)·A + ε·𝟙π̃ᵀ"""
    epsilon = check_epsilon(epsilon)
    if base.cardinality != reference.cardinality:
        raise InvalidInputError("base kernel and reference live on different spaces")
    rows = (1.0 - epsilon) * base.rows + epsilon * reference.probs[None, :]
    return DenseKernel(space=base.space, rows=rows)


def stationary_dense(
    base: DenseKernel, reference: DenseDistribution, epsilon: float
) -> DenseDistribution:
    """
    π_ε solving π_εᵀ(I − (1−ε)A) = ε·π̃ᵀ.

    The system is nonsingular for every ε > 0 because (1−ε)A has spectral
    radius below one.
    """
    epsilon = check_epsilon(epsilon)
    n = base.space.require_dense()
    if reference.cardinality != n:
        raise InvalidInputError("base kernel and reference live on different spaces")

    system = np.eye(n) - (1.0 - epsilon) * base.rows.T
    try:
        pi = scipy.linalg.solve(system, epsilon * reference.probs, check_finite=False)
    except scipy.linalg.LinAlgError as e:
        raise SolverError(f"restart stationary solve failed: {e}") from e
    result = DenseDistribution.normalized(base.space, pi)

    wrapped = (1.0 - epsilon) * (result.probs @ base.rows) + epsilon * reference.probs
    residual = 0.5 * float(np.abs(wrapped - result.probs).sum())
    if residual > FIXED_POINT_TOL:
        raise SolverError(f"restart stationary residual {residual:.3e} above tolerance")
    logger.debug(f"restart_stationary_solved n={n} epsilon={epsilon} residual={residual:.3e}")
    return result


def restart_series_terms(
    base: DenseKernel, reference: DenseDistribution, num_terms: int
) -> Iterator[np.ndarray]:
    """π̃Aᵗ for t = 0..num_terms-1, one vector alive at a time"""
    term = reference.probs.copy()
    for t in range(num_terms):
        if t > 0:
            term = term @ base.rows
        yield term


def stationary_series(
    base: DenseKernel, reference: DenseDistribution, epsilon: float, tail_mass: float = 1e-14
) -> DenseDistribution:
    """Truncated geometric series ε Σ (1−ε)^t π̃Aᵗ; cross-check for stationary_dense"""
    epsilon = check_epsilon(epsilon)
    num_terms = series_cutoff(epsilon, tail_mass) + 1
    total = np.zeros(reference.cardinality)
    weight = epsilon
    for term in restart_series_terms(base, reference, num_terms):
        total += weight * term
        weight *= 1.0 - epsilon
    return DenseDistribution.normalized(reference.space, total)


def series_cutoff(epsilon: float, tail_mass: float) -> int:
    """Smallest t_cap with (1−ε)^(t_cap+1) ≤ tail_mass"""
    epsilon = check_epsilon(epsilon)
    if epsilon == 1.0:
        return 0
    return max(0, math.ceil(math.log(tail_mass) / math.log1p(-epsilon)) - 1)
