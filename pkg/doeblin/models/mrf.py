"""
Pairwise discrete MRF and product-form reference distribution.

Parameter layout (flat θ, stable order):
    θ_node[v][k]        at v·K + k
    θ_edge[e][k][k']    at V·K + e·K² + k·K + k'
with edges canonicalised as sorted (u, v) pairs, u < v. θ given against any
other edge order has its edge blocks moved (and transposed for swapped pairs)
to match.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np
from numpy.random import Generator
from pydantic import (
    BaseModel,
    ConfigDict,
    PrivateAttr,
    ValidationError,
    field_validator,
    model_validator,
)

from doeblin.core.constants import MASS_TOL, REFERENCE_FLOOR
from doeblin.core.exceptions import InvalidInputError
from doeblin.models.chain import DenseDistribution, State, StateSpace

Edge = Tuple[int, int]


def canonical_order(edges: Sequence[Sequence[int]]) -> Tuple[List[Edge], List[int], List[bool]]:
    """
    Sorted (u, v) pairs with u < v, plus for each sorted edge its position in
    the input and whether its endpoints were swapped. Rejects self-loops and
    duplicates.
    """
    pairs = []
    for edge in edges:
        if len(edge) != 2:
            raise InvalidInputError(f"edge {edge!r} is not a pair")
        u, v = int(edge[0]), int(edge[1])
        if u == v:
            raise InvalidInputError(f"self-loop on variable {u}")
        pairs.append((u, v))
    source = sorted(range(len(pairs)), key=lambda i: (min(pairs[i]), max(pairs[i])))
    out = [(min(pairs[i]), max(pairs[i])) for i in source]
    if len(set(out)) != len(out):
        raise InvalidInputError("duplicate edges")
    flipped = [pairs[i][0] > pairs[i][1] for i in source]
    return out, source, flipped


def canonical_edges(edges: Sequence[Sequence[int]]) -> List[Edge]:
    """Sorted (u, v) pairs with u < v; rejects self-loops and duplicates"""
    return canonical_order(edges)[0]


def _reorder_edge_blocks(
    theta, space: StateSpace, source: List[int], flipped: List[bool]
) -> np.ndarray:
    """Move θ's K×K edge blocks to the sorted edge order, transposing swapped edges"""
    k = space.num_labels
    offset = space.num_variables * k
    arr = np.array(theta, dtype=np.float64).reshape(-1)
    blocks = arr[offset:].reshape(len(source), k, k)[source]
    swapped = np.array(flipped, dtype=bool)
    blocks[swapped] = blocks[swapped].transpose(0, 2, 1)
    return np.concatenate([arr[:offset], blocks.reshape(-1)])


class PairwiseModel(BaseModel):
    """Discrete pairwise MRF with overcomplete indicator features"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: StateSpace
    edges: List[Edge]
    theta: np.ndarray

    # incidence[v] = list of (edge index, neighbour, v is the first endpoint)
    _incidence: List[List[Tuple[int, int, bool]]] = PrivateAttr()

    @model_validator(mode="before")
    @classmethod
    def canonicalize(cls, data):
        """Sort edges; θ's edge blocks follow their edge"""
        if not isinstance(data, dict) or data.get("edges") is None:
            return data
        edges, source, flipped = canonical_order(data["edges"])
        data = {**data, "edges": edges}
        theta, space = data.get("theta"), data.get("space")
        if theta is None or (source == list(range(len(source))) and not any(flipped)):
            return data
        if isinstance(space, dict):
            try:
                space = StateSpace.model_validate(space)
            except (ValidationError, InvalidInputError):
                return data
        if not isinstance(space, StateSpace):
            return data
        # a wrong θ length is reported by check_layout
        if np.size(theta) == parameter_count(space, len(edges)):
            data["theta"] = _reorder_edge_blocks(theta, space, source, flipped)
        return data

    @field_validator("theta", mode="before")
    @classmethod
    def coerce_theta(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64).reshape(-1)
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def check_layout(self) -> "PairwiseModel":
        num_vars = self.space.num_variables
        for u, v in self.edges:
            if v >= num_vars:
                raise InvalidInputError(f"edge ({u}, {v}) references a missing variable")
        expected = parameter_count(self.space, len(self.edges))
        if self.theta.shape != (expected,):
            raise InvalidInputError(f"theta has {self.theta.size} entries, expected {expected}")
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInputError("theta must be finite")

        incidence: List[List[Tuple[int, int, bool]]] = [[] for _ in range(num_vars)]
        for e, (u, v) in enumerate(self.edges):
            incidence[u].append((e, v, True))
            incidence[v].append((e, u, False))
        self._incidence = incidence
        return self

    @classmethod
    def zeros(cls, space: StateSpace, edges: Sequence[Sequence[int]]) -> "PairwiseModel":
        edges = canonical_edges(edges)
        return cls(space=space, edges=edges, theta=np.zeros(parameter_count(space, len(edges))))

    def with_theta(self, theta: np.ndarray) -> "PairwiseModel":
        return PairwiseModel(space=self.space, edges=self.edges, theta=theta)

    @property
    def num_parameters(self) -> int:
        return self.theta.shape[0]

    @property
    def node_weights(self) -> np.ndarray:
        """(V, K) view"""
        v, k = self.space.num_variables, self.space.num_labels
        return self.theta[: v * k].reshape(v, k)

    @property
    def edge_weights(self) -> np.ndarray:
        """(|E|, K, K) view"""
        v, k = self.space.num_variables, self.space.num_labels
        return self.theta[v * k :].reshape(len(self.edges), k, k)

    def incidence(self, v: int) -> List[Tuple[int, int, bool]]:
        return self._incidence[v]

    def node_index(self, v: int, k: int) -> int:
        return v * self.space.num_labels + k

    def edge_index(self, e: int, k: int, k_prime: int) -> int:
        num_labels = self.space.num_labels
        return (
            self.space.num_variables * num_labels
            + e * num_labels * num_labels
            + k * num_labels
            + k_prime
        )


def parameter_count(space: StateSpace, num_edges: int) -> int:
    """V·K + |E|·K²"""
    return space.num_variables * space.num_labels + num_edges * space.num_labels**2


class LocalFeatureGradient(BaseModel):
    """Sparse gradient: flat parameter index → value"""

    model_config = ConfigDict(frozen=True)

    entries: Dict[int, float]

    def add_to(self, target: np.ndarray, scale: float = 1.0) -> np.ndarray:
        for index, value in self.entries.items():
            target[index] += scale * value
        return target

    def to_dense(self, num_parameters: int) -> np.ndarray:
        return self.add_to(np.zeros(num_parameters))

    def get(self, index: int) -> float:
        return self.entries.get(index, 0.0)


class ReferenceModel(BaseModel):
    """Product of per-variable categoricals q_v, floored at 1e-6 and renormalised"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: StateSpace
    q: np.ndarray

    _cdf: np.ndarray = PrivateAttr()
    _log_q: np.ndarray = PrivateAttr()

    @field_validator("q", mode="before")
    @classmethod
    def coerce_q(cls, v) -> np.ndarray:
        return np.array(v, dtype=np.float64)

    @model_validator(mode="after")
    def floor_and_check(self) -> "ReferenceModel":
        shape = (self.space.num_variables, self.space.num_labels)
        if self.q.shape != shape:
            raise InvalidInputError(f"q has shape {self.q.shape}, expected {shape}")
        if not np.all(np.isfinite(self.q)) or np.any(self.q < 0):
            raise InvalidInputError("q must be finite and nonnegative")
        if np.any(self.q.sum(axis=1) <= 0):
            raise InvalidInputError("every q_v needs positive mass")
        # smallest entry a floored, renormalised row can hold
        floor = REFERENCE_FLOOR / (1.0 + self.space.num_labels * REFERENCE_FLOOR)
        q = self.q
        if np.max(np.abs(q.sum(axis=1) - 1.0)) > MASS_TOL or q.min() < floor:
            q = q / q.sum(axis=1, keepdims=True)
            q = np.maximum(q, REFERENCE_FLOOR)
            q = q / q.sum(axis=1, keepdims=True)
        if np.max(np.abs(q.sum(axis=1) - 1.0)) > MASS_TOL:
            raise InvalidInputError("q rows do not normalise")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        # caches follow the floored q
        self._cdf = np.cumsum(q, axis=1)
        self._log_q = np.log(q)
        return self

    @classmethod
    def uniform(cls, space: StateSpace) -> "ReferenceModel":
        return cls(space=space, q=np.full((space.num_variables, space.num_labels), 1.0))

    def sample(self, rng: Generator) -> State:
        u = rng.random(self.space.num_variables)
        labels = (self._cdf <= u[:, None]).sum(axis=1)
        return tuple(int(k) for k in np.minimum(labels, self.space.num_labels - 1))

    def log_prob(self, state: Sequence[int]) -> float:
        state = self.space.validate_state(state)
        return float(sum(self._log_q[v, k] for v, k in enumerate(state)))

    def log_probs(self, states: np.ndarray) -> np.ndarray:
        """Vectorised log_prob for an (n, V) array"""
        return self._log_q[np.arange(self.space.num_variables), np.asarray(states)].sum(axis=1)

    def to_dense(self) -> DenseDistribution:
        logp = self.log_probs(self.space.all_states())
        return DenseDistribution.normalized(self.space, np.exp(logp))
