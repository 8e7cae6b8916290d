"""
Random-scan single-site Gibbs kernels for pairwise MRFs, enumeration oracles
and reference fitting.

One base step picks a variable uniformly and resamples it from its exact
conditional; restart times therefore count single-site updates.
"""

import logging
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from numpy.random import Generator
from scipy.special import logsumexp, softmax

from doeblin.core.exceptions import InvalidInputError
from doeblin.models.chain import DenseDistribution, DenseKernel, State, StateSpace
from doeblin.models.mrf import Edge, LocalFeatureGradient, PairwiseModel, ReferenceModel

logger = logging.getLogger(__name__)


class GibbsMove(NamedTuple):
    state: State
    variable: int
    label: int


def chain_edges(num_variables: int) -> List[Edge]:
    """Path graph 0-1-...-(V-1)"""
    return [(v, v + 1) for v in range(num_variables - 1)]


def grid_edges(rows: int, cols: int) -> List[Edge]:
    """4-neighbour lattice, variable r·cols + c"""
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return sorted(edges)


def random_model(
    space: StateSpace, edges: Sequence[Edge], rng: Generator, scale: float = 1.0
) -> PairwiseModel:
    """θ ~ N(0, scale²) on every parameter"""
    template = PairwiseModel.zeros(space, edges)
    return template.with_theta(scale * rng.standard_normal(template.num_parameters))


def unnorm_logp(model: PairwiseModel, x: Sequence[int]) -> float:
    """Σ_v θ_node[v][x_v] + Σ_(u,v) θ_edge[(u,v)][x_u][x_v]"""
    x = model.space.validate_state(x)
    node, edge = model.node_weights, model.edge_weights
    total = sum(node[v, k] for v, k in enumerate(x))
    total += sum(edge[e, x[u], x[v]] for e, (u, v) in enumerate(model.edges))
    return float(total)


def unnorm_logp_all(model: PairwiseModel, states: np.ndarray) -> np.ndarray:
    """Vectorised unnorm_logp for an (n, V) array"""
    states = np.asarray(states)
    node, edge = model.node_weights, model.edge_weights
    total = node[np.arange(model.space.num_variables), states].sum(axis=1)
    for e, (u, v) in enumerate(model.edges):
        total = total + edge[e, states[:, u], states[:, v]]
    return total


def exact_distribution(model: PairwiseModel) -> DenseDistribution:
    """Enumeration oracle: probs ∝ exp(unnorm_logp)"""
    logp = unnorm_logp_all(model, model.space.all_states())
    return DenseDistribution.normalized(model.space, np.exp(logp - logsumexp(logp)))


def _conditional_logits(model: PairwiseModel, x: State, v: int) -> np.ndarray:
    logits = model.node_weights[v].copy()
    edge = model.edge_weights
    for e, neighbour, first in model.incidence(v):
        if first:
            logits += edge[e, :, x[neighbour]]
        else:
            logits += edge[e, x[neighbour], :]
    return logits


def conditional(model: PairwiseModel, x: Sequence[int], v: int) -> np.ndarray:
    """P(x_v = · | x_−v) as a length-K vector"""
    x = model.space.validate_state(x)
    if not 0 <= v < model.space.num_variables:
        raise InvalidInputError(f"variable {v} out of range")
    return softmax(_conditional_logits(model, x, v))


def conditional_all(model: PairwiseModel, states: np.ndarray, v: int) -> np.ndarray:
    """(n, K) conditionals of variable v for every row of an (n, V) array"""
    logits = np.repeat(model.node_weights[v][None, :], len(states), axis=0)
    edge = model.edge_weights
    for e, neighbour, first in model.incidence(v):
        if first:
            logits += edge[e][:, states[:, neighbour]].T
        else:
            logits += edge[e][states[:, neighbour], :]
    return softmax(logits, axis=1)


def gibbs_step(model: PairwiseModel, x: Sequence[int], rng: Generator) -> GibbsMove:
    """Pick v uniformly, draw x'_v ~ conditional(x, v)"""
    x = model.space.validate_state(x)
    v = int(rng.integers(model.space.num_variables))
    probs = softmax(_conditional_logits(model, x, v))
    k = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    k = min(k, model.space.num_labels - 1)
    nxt = list(x)
    nxt[v] = k
    return GibbsMove(tuple(nxt), v, k)


def kernel_logprob(model: PairwiseModel, x: Sequence[int], x_next: Sequence[int]) -> float:
    """
    log A(x → x'). Zero or one differing site; a self-transition collects
    the stay probability of every variable.
    """
    x = model.space.validate_state(x)
    x_next = model.space.validate_state(x_next)
    num_vars = model.space.num_variables
    diff = [v for v in range(num_vars) if x[v] != x_next[v]]
    if len(diff) > 1:
        return -np.inf
    if diff:
        v = diff[0]
        return float(np.log(conditional(model, x, v)[x_next[v]]) - np.log(num_vars))
    stay = sum(conditional(model, x, v)[x[v]] for v in range(num_vars))
    return float(np.log(stay) - np.log(num_vars))


def step_gradient_terms(
    model: PairwiseModel, x_prev: State, v: int, k_new: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Flat indices and values of ∇θ log conditional(x_prev, v)[k_new]: indicator
    features of the new label minus their conditional expectation. Indices are
    distinct; only v's node weights and the weights of edges incident to v appear.
    """
    probs = softmax(_conditional_logits(model, x_prev, v))
    delta = -probs
    delta[k_new] += 1.0

    num_labels = model.space.num_labels
    labels = np.arange(num_labels)
    indices = [model.node_index(v, 0) + labels]
    for e, neighbour, first in model.incidence(v):
        if first:
            indices.append(model.edge_index(e, 0, x_prev[neighbour]) + labels * num_labels)
        else:
            indices.append(model.edge_index(e, x_prev[neighbour], 0) + labels)
    return np.concatenate(indices), np.tile(delta, len(indices))


def grad_step_logprob(
    model: PairwiseModel, x_prev: Sequence[int], v: int, k_new: int
) -> LocalFeatureGradient:
    """∇θ log conditional(x_prev, v)[k_new] as a sparse gradient"""
    x_prev = model.space.validate_state(x_prev)
    if not 0 <= v < model.space.num_variables:
        raise InvalidInputError(f"variable {v} out of range")
    if not 0 <= k_new < model.space.num_labels:
        raise InvalidInputError(f"label {k_new} out of range")
    indices, values = step_gradient_terms(model, x_prev, v, k_new)
    return LocalFeatureGradient(entries=dict(zip(indices.tolist(), values.tolist())))


def dense_gibbs_kernel(model: PairwiseModel) -> DenseKernel:
    """Densified random-scan kernel, entry [x][x'] = exp(kernel_logprob(x, x'))"""
    space = model.space
    states = space.all_states()
    n = states.shape[0]
    num_vars, num_labels = space.num_variables, space.num_labels
    rows = np.zeros((n, n))
    source = np.arange(n)
    for v in range(num_vars):
        stride = num_labels ** (num_vars - 1 - v)
        cond = conditional_all(model, states, v) / num_vars
        for k in range(num_labels):
            target = source + (k - states[:, v]) * stride
            rows[source, target] += cond[:, k]
    return DenseKernel(space=space, rows=rows)


class GibbsKernel:
    """SamplingKernel view of the random-scan Gibbs chain of a model"""

    def __init__(self, model: PairwiseModel):
        self.model = model
        self.space = model.space

    def step(self, state: State, rng: Generator) -> State:
        return gibbs_step(self.model, state, rng).state

    def move(self, state: State, rng: Generator) -> GibbsMove:
        return gibbs_step(self.model, state, rng)

    def log_prob(self, state: State, next_state: State) -> float:
        return kernel_logprob(self.model, state, next_state)

    def grad_log_prob(self, state: State, v: int, k_new: int) -> LocalFeatureGradient:
        return grad_step_logprob(self.model, state, v, k_new)

    def dense(self) -> DenseKernel:
        return dense_gibbs_kernel(self.model)


def sufficient_statistics(model: PairwiseModel, x: Sequence[int]) -> np.ndarray:
    """φ(x): indicator of every node label and every edge label pair"""
    x = model.space.validate_state(x)
    phi = np.zeros(model.num_parameters)
    for v, k in enumerate(x):
        phi[model.node_index(v, k)] = 1.0
    for e, (u, v) in enumerate(model.edges):
        phi[model.edge_index(e, x[u], x[v])] = 1.0
    return phi


def fit_reference(
    dataset: Sequence[Sequence[int]], space: StateSpace, smoothing: float = 1.0
) -> ReferenceModel:
    """q_v[k] = (count(x_v = k) + α) / (n + αK), floored at 1e-6"""
    if smoothing <= 0:
        raise InvalidInputError("smoothing must be positive")
    rows = space.validate_rows(dataset)
    counts = np.stack(
        [np.bincount(rows[:, v], minlength=space.num_labels) for v in range(space.num_variables)]
    ).astype(np.float64)
    q = (counts + smoothing) / (rows.shape[0] + smoothing * space.num_labels)
    logger.debug(f"reference_fitted rows={rows.shape[0]} smoothing={smoothing}")
    return ReferenceModel(space=space, q=q)


def uniform_reference(space: StateSpace) -> ReferenceModel:
    return ReferenceModel.uniform(space)
