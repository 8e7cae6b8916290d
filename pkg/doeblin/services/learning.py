"""
Likelihood of data under π_ε and its maximisation.

The stochastic gradient uses the Fisher identity

    ∇ log π_ε(y) = E[ Σ_t ∇ log A_{v_t}(x_{t−1} → x_t) | x_T = y ]

over restart paths ending at y. Paths are proposed backwards from y with the
same single-site kernel (each A_v is reversible with respect to p̃) and
weighted by π̃(x₀)/p̃(x₀); the y-only constant cancels under self-normalisation.
The reference is fixed, so it contributes no gradient.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from numpy.random import Generator
from pydantic import BaseModel, ConfigDict

from doeblin.core.config import settings
from doeblin.core.constants import ESS_DEGENERACY_FRACTION, FD_STEP, StreamTag
from doeblin.core.exceptions import DivergenceError, InvalidInputError, SolverError
from doeblin.models.chain import DenseDistribution, State
from doeblin.models.mrf import PairwiseModel, ReferenceModel
from doeblin.models.schemas import TrainConfig, TrainRecord
from doeblin.services.gibbs import (
    dense_gibbs_kernel,
    gibbs_step,
    step_gradient_terms,
    sufficient_statistics,
    unnorm_logp,
)
from doeblin.services.restart import check_epsilon, sample_restart_time, stationary_dense
from doeblin.utils.logger import get_structured_logger
from doeblin.utils.rng import child_rng, derive_rng, stream_entropy

logger = get_structured_logger(__name__)


class RestartPath(NamedTuple):
    """
    States x₀…x_T in forward order; coords[t−1] and labels[t−1] describe the
    update x_{t−1} → x_t.
    """

    states: List[State]
    coords: List[int]
    labels: List[int]
    log_weight: float

    @property
    def restart_time(self) -> int:
        return len(self.coords)


class GradientEstimate(BaseModel):
    """Self-normalised estimate of ∇θ log π_ε(y) with weight diagnostics"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grad: np.ndarray
    std_error: np.ndarray
    num_particles: int
    ess: float
    max_weight: float

    @property
    def degenerate(self) -> bool:
        return self.ess < ESS_DEGENERACY_FRACTION * self.num_particles


class TrainingLog(BaseModel):
    records: List[TrainRecord] = []

    def deterministic_view(self) -> List[dict]:
        """Records without wallclock fields"""
        return [r.model_dump(exclude={"wallclock_ms"}) for r in self.records]


def stationary_logprobs(
    model: PairwiseModel, reference: ReferenceModel, epsilon: float
) -> np.ndarray:
    """log π_ε over every state of the model's space, one dense solve"""
    epsilon = check_epsilon(epsilon)
    states = model.space.all_states()
    log_ref = reference.log_probs(states)
    if epsilon == 1.0:
        return log_ref
    pi = stationary_dense(dense_gibbs_kernel(model), reference.to_dense(), epsilon)
    # π_ε ≥ ε·π̃ pointwise; clamp round-off below that floor
    return np.maximum(np.log(np.maximum(pi.probs, 1e-300)), np.log(epsilon) + log_ref)


def loglik_exact(
    model: PairwiseModel, reference: ReferenceModel, epsilon: float, y: Sequence[int]
) -> float:
    return float(stationary_logprobs(model, reference, epsilon)[model.space.index_of(y)])


def mean_loglik_exact(
    model: PairwiseModel, reference: ReferenceModel, epsilon: float, rows: np.ndarray
) -> float:
    logp = stationary_logprobs(model, reference, epsilon)
    return float(np.mean(logp[model.space.indices_of(rows)]))


def grad_loglik_fd(
    model: PairwiseModel,
    reference: ReferenceModel,
    epsilon: float,
    y: Sequence[int],
    step: float = FD_STEP,
) -> np.ndarray:
    """Central differences of loglik_exact per parameter"""
    index = model.space.index_of(y)
    model.space.require_dense()
    grad = np.zeros(model.num_parameters)
    for j in range(model.num_parameters):
        shifted = model.theta.copy()
        shifted[j] += step
        up = stationary_logprobs(model.with_theta(shifted), reference, epsilon)[index]
        shifted[j] -= 2.0 * step
        down = stationary_logprobs(model.with_theta(shifted), reference, epsilon)[index]
        grad[j] = (up - down) / (2.0 * step)
    return grad


def sample_posterior_path(
    model: PairwiseModel,
    reference: ReferenceModel,
    epsilon: float,
    y: Sequence[int],
    rng: Generator,
) -> RestartPath:
    """
    T ~ Geom(ε), then T Gibbs steps backwards from y.

    log_weight = log π̃(x₀) − unnorm_logp(x₀).
    """
    y = model.space.validate_state(y)
    steps = sample_restart_time(epsilon, rng)
    backward = [y]
    coords = []
    for _ in range(steps):
        move = gibbs_step(model, backward[-1], rng)
        backward.append(move.state)
        coords.append(move.variable)

    states = backward[::-1]
    coords = coords[::-1]
    labels = [states[t + 1][v] for t, v in enumerate(coords)]
    log_weight = reference.log_prob(states[0]) - unnorm_logp(model, states[0])
    return RestartPath(states, coords, labels, log_weight)


def path_gradient(model: PairwiseModel, path: RestartPath) -> np.ndarray:
    """Σ_t ∇ log A_{v_t}(x_{t−1} → x_t) along a forward path"""
    grad = np.zeros(model.num_parameters)
    for t, (v, k) in enumerate(zip(path.coords, path.labels)):
        indices, values = step_gradient_terms(model, path.states[t], v, k)
        grad[indices] += values
    return grad


def _particle_block(
    model: PairwiseModel,
    reference: ReferenceModel,
    epsilon: float,
    y: State,
    entropy: int,
    particles: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    log_weights = np.empty(len(particles))
    grads = np.empty((len(particles), model.num_parameters))
    for row, m in enumerate(particles):
        path = sample_posterior_path(model, reference, epsilon, y, child_rng(entropy, int(m)))
        log_weights[row] = path.log_weight
        grads[row] = path_gradient(model, path)
    return log_weights, grads


def grad_loglik_estimate(
    model: PairwiseModel,
    reference: ReferenceModel,
    epsilon: float,
    y: Sequence[int],
    num_particles: int,
    rng: Generator,
    workers: Optional[int] = None,
) -> GradientEstimate:
    """
    Self-normalised importance sampling over num_particles backward paths.

    Particle m draws from its own child stream of one entropy value taken
    from rng, and the reduction runs in particle order, so the result does
    not depend on the number of worker threads.
    """
    epsilon = check_epsilon(epsilon)
    y = model.space.validate_state(y)
    if num_particles < 1:
        raise InvalidInputError("num_particles must be at least 1")
    workers = min(workers or settings.PARTICLE_WORKERS, num_particles)

    entropy = stream_entropy(rng)
    blocks = np.array_split(np.arange(num_particles), workers)
    if workers == 1:
        parts = [_particle_block(model, reference, epsilon, y, entropy, blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda block: _particle_block(model, reference, epsilon, y, entropy, block),
                    blocks,
                )
            )
    log_weights = np.concatenate([lw for lw, _ in parts])
    grads = np.concatenate([g for _, g in parts], axis=0)

    weights = np.exp(log_weights - log_weights.max())
    weights /= weights.sum()
    grad = weights @ grads
    std_error = np.sqrt(weights**2 @ (grads - grad) ** 2)
    ess = float(min(1.0 / np.sum(weights**2), num_particles))
    estimate = GradientEstimate(
        grad=grad,
        std_error=std_error,
        num_particles=num_particles,
        ess=ess,
        max_weight=float(weights.max()),
    )
    if estimate.degenerate:
        logger.warning(
            "ess_degenerate",
            context="Estimator",
            ess=ess,
            particles=num_particles,
            max_weight=estimate.max_weight,
        )
    return estimate


def start_posterior_exact(
    model: PairwiseModel, reference: ReferenceModel, epsilon: float, y: Sequence[int]
) -> DenseDistribution:
    """P(x₀ | x_T = y) with T marginalised: ∝ π̃(x₀)·[(I − (1−ε)A)⁻¹]_{x₀, y}"""
    epsilon = check_epsilon(epsilon)
    space = model.space
    n = space.require_dense()
    target = np.zeros(n)
    target[space.index_of(y)] = 1.0
    system = np.eye(n) - (1.0 - epsilon) * dense_gibbs_kernel(model).rows
    try:
        column = scipy.linalg.solve(system, target, check_finite=False)
    except scipy.linalg.LinAlgError as e:
        raise SolverError(f"path posterior solve failed: {e}") from e
    return DenseDistribution.normalized(space, reference.to_dense().probs * column)


def cd_gradient(model: PairwiseModel, y: Sequence[int], k_steps: int, rng: Generator) -> np.ndarray:
    """CD-k: φ(y) − φ(x_k), x_k = y after k Gibbs steps without restarts"""
    if k_steps < 1:
        raise InvalidInputError("k_steps must be at least 1")
    x = model.space.validate_state(y)
    for _ in range(k_steps):
        x = gibbs_step(model, x, rng).state
    return sufficient_statistics(model, y) - sufficient_statistics(model, x)


def _evaluate(
    model: PairwiseModel,
    reference: ReferenceModel,
    epsilon: float,
    train_rows: np.ndarray,
    heldout_rows: Optional[np.ndarray],
) -> Tuple[Optional[float], Optional[float]]:
    if not model.space.densifiable:
        return None, None
    logp = stationary_logprobs(model, reference, epsilon)
    train = float(np.mean(logp[model.space.indices_of(train_rows)]))
    heldout = None
    if heldout_rows is not None and len(heldout_rows):
        heldout = float(np.mean(logp[model.space.indices_of(heldout_rows)]))
    return train, heldout


def sgd_train(
    dataset: Sequence[Sequence[int]],
    initial: PairwiseModel,
    reference: ReferenceModel,
    config: TrainConfig,
    heldout: Optional[Sequence[Sequence[int]]] = None,
    workers: Optional[int] = None,
) -> Tuple[PairwiseModel, TrainingLog]:
    """
    Minibatch SGD ascent on mean log π_ε.

    Iteration i samples a minibatch from stream (seed, minibatch, i) and
    estimates each point's gradient from stream (seed, particles, i, row).
    Evaluations run before the first update, every eval_every updates and
    after the last; they are exact when the space is densifiable.
    """
    space = initial.space
    rows = space.validate_rows(dataset)
    heldout_rows = space.validate_rows(heldout) if heldout is not None and len(heldout) else None
    log = TrainingLog()
    model = initial
    theta = initial.theta.copy()
    started = time.perf_counter()
    last_ess: Optional[float] = None
    last_max_weight: Optional[float] = None

    def record(iteration: int) -> None:
        eps = config.epsilon_at(max(iteration - 1, 0))
        train, held = _evaluate(model, reference, eps, rows, heldout_rows)
        entry = TrainRecord(
            iteration=iteration,
            epsilon=eps,
            train_loglik_exact=train,
            heldout_loglik_exact=held,
            mean_ess=last_ess,
            max_weight=last_max_weight,
            wallclock_ms=(time.perf_counter() - started) * 1000.0,
        )
        log.records.append(entry)
        logger.info(
            "evaluation",
            context="Training",
            iteration=iteration,
            epsilon=eps,
            train_loglik=train,
            heldout_loglik=held,
            mean_ess=last_ess,
        )

    logger.info(
        "training_started",
        context="Training",
        rows=len(rows),
        parameters=initial.num_parameters,
        iterations=config.iterations,
        particles=config.particles,
    )
    record(0)
    batch_size = min(config.batch_size, len(rows))
    for i in range(config.iterations):
        eps = config.epsilon_at(i)
        batch = derive_rng(config.seed, StreamTag.MINIBATCH, i).choice(
            len(rows), size=batch_size, replace=False
        )
        estimates = [
            grad_loglik_estimate(
                model,
                reference,
                eps,
                rows[b],
                config.particles,
                derive_rng(config.seed, StreamTag.PARTICLES, i, int(b)),
                workers=workers,
            )
            for b in batch
        ]
        grad = np.mean([e.grad for e in estimates], axis=0)
        theta = theta + config.learning_rate_at(i) * grad
        last_ess = float(np.mean([e.ess for e in estimates]))
        last_max_weight = float(max(e.max_weight for e in estimates))

        if np.max(np.abs(theta)) > config.theta_limit:
            logger.error(
                "training_diverged",
                context="Training",
                iteration=i + 1,
                max_abs_theta=float(np.max(np.abs(theta))),
            )
            raise DivergenceError(
                f"|theta| exceeded {config.theta_limit} at iteration {i + 1}",
                iteration=i + 1,
                records=list(log.records),
            )
        model = model.with_theta(theta)
        if (i + 1) % config.eval_every == 0 or i + 1 == config.iterations:
            record(i + 1)

    # full θ only for small models
    detail = {"theta": model.theta} if model.num_parameters <= 20 else {}
    logger.info(
        "training_finished", context="Training", iterations=config.iterations, **detail
    )
    return model, log
