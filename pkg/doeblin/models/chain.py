"""
Finite state spaces, probability vectors and transition kernels.

Kernels are row-stochastic with rows indexing the current state: a
distribution evolves as μ ← μA.
"""

from typing import Iterable, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from numpy.random import Generator
from pydantic import BaseModel, ConfigDict, PrivateAttr, field_validator, model_validator

from doeblin.core.constants import DENSE_STATE_CAP, MASS_TOL
from doeblin.core.exceptions import DenseSizeError, InvalidInputError

State = Tuple[int, ...]


class StateSpace(BaseModel):
    """
    Product space {0..K-1}^V with a mixed-radix flat index (variable 0 most significant).

    A flat space of N states is StateSpace(num_variables=1, num_labels=N).
    """

    model_config = ConfigDict(frozen=True)

    num_variables: int
    num_labels: int

    @field_validator("num_variables", "num_labels")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("state space dimensions must be positive")
        return v

    @classmethod
    def flat(cls, cardinality: int) -> "StateSpace":
        return cls(num_variables=1, num_labels=cardinality)

    @property
    def cardinality(self) -> int:
        return self.num_labels**self.num_variables

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.num_labels,) * self.num_variables

    @property
    def densifiable(self) -> bool:
        return self.cardinality <= DENSE_STATE_CAP

    def require_dense(self) -> int:
        """Cardinality, or DenseSizeError when the dense oracles must refuse"""
        n = self.cardinality
        if n > DENSE_STATE_CAP:
            raise DenseSizeError(n, DENSE_STATE_CAP)
        return n

    def validate_state(self, state: Sequence[int]) -> State:
        if len(state) != self.num_variables:
            raise InvalidInputError(
                f"state has {len(state)} entries, space has {self.num_variables} variables"
            )
        out = tuple(int(x) for x in state)
        if any(x < 0 or x >= self.num_labels for x in out):
            raise InvalidInputError(f"state {out} has labels outside 0..{self.num_labels - 1}")
        return out

    def validate_rows(self, rows: Sequence[Sequence[int]]) -> np.ndarray:
        """Nonempty (n, V) integer array with every label in range"""
        if len(rows) == 0:
            raise InvalidInputError("dataset is empty")
        out = np.asarray(rows, dtype=np.int64)
        if out.ndim != 2 or out.shape[1] != self.num_variables:
            raise InvalidInputError(f"rows must have {self.num_variables} labels each")
        if out.min() < 0 or out.max() >= self.num_labels:
            raise InvalidInputError(f"labels must lie in 0..{self.num_labels - 1}")
        return out

    def index_of(self, state: Sequence[int]) -> int:
        index = 0
        for label in self.validate_state(state):
            index = index * self.num_labels + label
        return index

    def state_of(self, index: int) -> State:
        if not 0 <= index < self.cardinality:
            raise InvalidInputError(f"flat index {index} outside 0..{self.cardinality - 1}")
        labels = []
        for _ in range(self.num_variables):
            index, label = divmod(index, self.num_labels)
            labels.append(label)
        return tuple(reversed(labels))

    def all_states(self) -> np.ndarray:
        """(N, V) array of every state, row i is state_of(i)"""
        n = self.require_dense()
        return np.stack(np.unravel_index(np.arange(n), self.shape), axis=1)

    def indices_of(self, states: np.ndarray) -> np.ndarray:
        """Vectorised index_of for an (n, V) integer array"""
        states = np.asarray(states, dtype=np.int64)
        if states.ndim != 2 or states.shape[1] != self.num_variables:
            raise InvalidInputError("states must be an (n, V) array")
        if states.size and (states.min() < 0 or states.max() >= self.num_labels):
            raise InvalidInputError("labels out of range")
        return np.ravel_multi_index(states.T, self.shape)


class DenseDistribution(BaseModel):
    """Probability vector over an enumerated state space"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: StateSpace
    probs: np.ndarray

    _cdf: np.ndarray = PrivateAttr()

    @field_validator("probs", mode="before")
    @classmethod
    def coerce_probs(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64)
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def check_simplex(self) -> "DenseDistribution":
        n = self.space.require_dense()
        if self.probs.shape != (n,):
            raise InvalidInputError(f"probs has shape {self.probs.shape}, expected ({n},)")
        if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
            raise InvalidInputError("probabilities must be finite and nonnegative")
        if abs(self.probs.sum() - 1.0) > MASS_TOL:
            raise InvalidInputError(f"probabilities sum to {self.probs.sum()!r}, not 1")
        return self

    def model_post_init(self, __context) -> None:
        self._cdf = np.cumsum(self.probs)

    @classmethod
    def normalized(cls, space: StateSpace, weights: Iterable[float]) -> "DenseDistribution":
        """Clip round-off negatives and renormalise"""
        arr = np.clip(np.asarray(weights, dtype=np.float64), 0.0, None)
        return cls(space=space, probs=arr / arr.sum())

    @classmethod
    def uniform(cls, space: StateSpace) -> "DenseDistribution":
        n = space.require_dense()
        return cls(space=space, probs=np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, space: StateSpace, index: int) -> "DenseDistribution":
        n = space.require_dense()
        if not 0 <= index < n:
            raise InvalidInputError(f"state index {index} outside 0..{n - 1}")
        probs = np.zeros(n)
        probs[index] = 1.0
        return cls(space=space, probs=probs)

    @property
    def cardinality(self) -> int:
        return self.probs.shape[0]

    def prob(self, state: Sequence[int]) -> float:
        return float(self.probs[self.space.index_of(state)])

    def log_prob(self, state: Sequence[int]) -> float:
        p = self.prob(state)
        return float(np.log(p)) if p > 0 else -np.inf

    def sample_index(self, rng: Generator) -> int:
        index = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        return min(index, self.cardinality - 1)

    def sample(self, rng: Generator) -> State:
        return self.space.state_of(self.sample_index(rng))

    def sample_indices(self, rng: Generator, size: int) -> np.ndarray:
        indices = np.searchsorted(self._cdf, rng.random(size), side="right")
        return np.minimum(indices, self.cardinality - 1)

    def to_dense(self) -> "DenseDistribution":
        return self


class DenseKernel(BaseModel):
    """Row-stochastic transition matrix: rows[x][y] = P(next = y | current = x)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: StateSpace
    rows: np.ndarray

    @field_validator("rows", mode="before")
    @classmethod
    def coerce_rows(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=np.float64)
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def check_stochastic(self) -> "DenseKernel":
        n = self.space.require_dense()
        if self.rows.shape != (n, n):
            raise InvalidInputError(f"kernel has shape {self.rows.shape}, expected ({n}, {n})")
        if not np.all(np.isfinite(self.rows)) or np.any(self.rows < 0):
            raise InvalidInputError("kernel entries must be finite and nonnegative")
        worst = float(np.max(np.abs(self.rows.sum(axis=1) - 1.0)))
        if worst > MASS_TOL:
            raise InvalidInputError(f"kernel rows deviate from 1 by {worst!r}")
        return self

    @classmethod
    def identity(cls, space: StateSpace) -> "DenseKernel":
        return cls(space=space, rows=np.eye(space.require_dense()))

    @property
    def cardinality(self) -> int:
        return self.rows.shape[0]


@runtime_checkable
class SamplingKernel(Protocol):
    """
    Behaviour contract of a base chain A.

    step draws x' ~ A(x, ·). Kernels that support learning also expose
    log_prob(x, x') and the parameter gradient of a single step.
    """

    space: StateSpace

    def step(self, state: State, rng: Generator) -> State: ...

    def dense(self) -> DenseKernel: ...


@runtime_checkable
class ReferenceDistribution(Protocol):
    """Restart distribution π̃: exact sampling plus pointwise log-probability"""

    space: StateSpace

    def sample(self, rng: Generator) -> State: ...

    def log_prob(self, state: Sequence[int]) -> float: ...

    def to_dense(self) -> DenseDistribution: ...


class DenseKernelSampler:
    """SamplingKernel over an explicit matrix, one inverse-CDF draw per step"""

    def __init__(self, kernel: DenseKernel):
        self.kernel = kernel
        self.space = kernel.space
        self._cdf = np.cumsum(kernel.rows, axis=1)

    def step_index(self, index: int, rng: Generator) -> int:
        nxt = int(np.searchsorted(self._cdf[index], rng.random(), side="right"))
        return min(nxt, self.kernel.cardinality - 1)

    def step(self, state: State, rng: Generator) -> State:
        return self.space.state_of(self.step_index(self.space.index_of(state), rng))

    def step_indices(self, indices: np.ndarray, rng: Generator) -> np.ndarray:
        """One step for a batch of chains"""
        u = rng.random(len(indices))
        cdf = self._cdf[indices]
        nxt = (cdf <= u[:, None]).sum(axis=1)
        return np.minimum(nxt, self.kernel.cardinality - 1)

    def log_prob(self, state: State, next_state: State) -> float:
        p = self.kernel.rows[self.space.index_of(state), self.space.index_of(next_state)]
        return float(np.log(p)) if p > 0 else -np.inf

    def dense(self) -> DenseKernel:
        return self.kernel


def random_distribution(space: StateSpace, rng: Generator, concentration: float = 1.0):
    """Dirichlet draw over the space"""
    n = space.require_dense()
    return DenseDistribution.normalized(space, rng.dirichlet(np.full(n, concentration)))


def random_kernel(space: StateSpace, rng: Generator, concentration: float = 1.0) -> DenseKernel:
    """Kernel with independent Dirichlet rows (ergodic with probability one)"""
    n = space.require_dense()
    rows = rng.dirichlet(np.full(n, concentration), size=n)
    return DenseKernel(space=space, rows=rows / rows.sum(axis=1, keepdims=True))
