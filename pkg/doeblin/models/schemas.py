"""
Pydantic schemas for experiment configuration, persisted documents and run records
"""

import hashlib
import json
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from doeblin.core.constants import THETA_LIMIT, ReferenceKind, Topology
from doeblin.core.exceptions import InvalidInputError
from doeblin.models.chain import StateSpace
from doeblin.models.mrf import PairwiseModel, ReferenceModel, parameter_count
from doeblin.services.gibbs import chain_edges, grid_edges
from doeblin.services.restart import check_epsilon
from doeblin.utils.rng import check_seed

ScheduleEntry = Tuple[int, float]


def _check_schedule(schedule: List[ScheduleEntry]) -> List[ScheduleEntry]:
    starts = [start for start, _ in schedule]
    if any(start < 0 for start in starts):
        raise InvalidInputError("epsilon schedule iterations must be nonnegative")
    if starts != sorted(set(starts)):
        raise InvalidInputError("epsilon schedule iterations must be strictly increasing")
    return [(int(start), check_epsilon(eps)) for start, eps in schedule]


class TrainOptions(BaseModel):
    """Optimiser settings an experiment file sets under "train" """

    model_config = ConfigDict(extra="forbid", frozen=True)

    particles: int = Field(100, ge=1, description="Posterior paths per data point (M)")
    learning_rate: float = Field(0.5, ge=0, description="Initial step size η0")
    decay_tau: float = Field(100.0, gt=0, description="η_i = η0 / (1 + i/τ)")
    iterations: int = Field(200, ge=0, description="SGD iterations")
    batch_size: int = Field(20, ge=1, description="Data points per minibatch")
    eval_every: int = Field(10, ge=1, description="Iterations between exact evaluations")
    theta_limit: float = Field(THETA_LIMIT, gt=0, description="Divergence guard on |θ|")


class TrainConfig(TrainOptions):
    """
    Everything sgd_train needs besides data and models.

    epsilon_schedule is piecewise constant: the ε of the last entry whose
    iteration is ≤ i applies at iteration i, and `epsilon` before the first.
    """

    epsilon: float = Field(0.3, description="Restart probability ε in (0, 1]")
    epsilon_schedule: List[ScheduleEntry] = Field(
        default_factory=list, description="Piecewise-constant [[iteration, ε], ...] overrides"
    )
    seed: int = Field(0, description="64-bit root seed")

    @field_validator("epsilon")
    @classmethod
    def validate_epsilon(cls, v: float) -> float:
        return check_epsilon(v)

    @field_validator("epsilon_schedule")
    @classmethod
    def validate_schedule(cls, v: List[ScheduleEntry]) -> List[ScheduleEntry]:
        return _check_schedule(v)

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v: int) -> int:
        return check_seed(v)

    def epsilon_at(self, iteration: int) -> float:
        eps = self.epsilon
        for start, value in self.epsilon_schedule:
            if iteration >= start:
                eps = value
        return eps

    def learning_rate_at(self, iteration: int) -> float:
        return self.learning_rate / (1.0 + iteration / self.decay_tau)


class ModelSpec(BaseModel):
    """Teacher / initial model: a named topology or explicit edges, θ given or sampled"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    topology: Topology = Field(Topology.CHAIN, description="chain | grid | custom")
    num_variables: Optional[int] = Field(None, ge=1, description="V (derived for grids)")
    num_labels: int = Field(2, ge=1, description="K")
    rows: Optional[int] = Field(None, ge=1, description="Grid rows")
    cols: Optional[int] = Field(None, ge=1, description="Grid columns")
    edges: Optional[List[Tuple[int, int]]] = Field(None, description="Edges for custom")
    theta: Optional[List[float]] = Field(None, description="Flat θ; sampled when absent")
    theta_scale: float = Field(1.0, ge=0, description="σ of the Gaussian θ draw")

    @model_validator(mode="after")
    def check_topology(self) -> "ModelSpec":
        if self.topology == Topology.GRID:
            if self.rows is None or self.cols is None:
                raise InvalidInputError("grid topology needs rows and cols")
            if self.num_variables not in (None, self.rows * self.cols):
                raise InvalidInputError("num_variables must equal rows * cols for a grid")
        elif self.num_variables is None:
            raise InvalidInputError(f"{self.topology.value} topology needs num_variables")
        if self.topology == Topology.CUSTOM and self.edges is None:
            raise InvalidInputError("custom topology needs an explicit edge list")
        if self.theta is not None:
            expected = parameter_count(self.space(), len(self.edge_list()))
            if len(self.theta) != expected:
                raise InvalidInputError(f"theta has {len(self.theta)} entries, expected {expected}")
        return self

    def space(self) -> StateSpace:
        num_vars = self.num_variables
        if self.topology == Topology.GRID:
            num_vars = self.rows * self.cols
        return StateSpace(num_variables=num_vars, num_labels=self.num_labels)

    def edge_list(self) -> List[Tuple[int, int]]:
        if self.topology == Topology.GRID:
            return grid_edges(self.rows, self.cols)
        if self.topology == Topology.CHAIN:
            return chain_edges(self.space().num_variables)
        return list(self.edges)


class ReferenceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ReferenceKind = Field(ReferenceKind.FIT, description="fit | uniform | explicit")
    smoothing: float = Field(1.0, gt=0, description="Additive smoothing α for kind=fit")
    q: Optional[List[List[float]]] = Field(None, description="V×K table for kind=explicit")

    @model_validator(mode="after")
    def check_kind(self) -> "ReferenceSpec":
        if self.kind == ReferenceKind.EXPLICIT and self.q is None:
            raise InvalidInputError("explicit reference needs q")
        return self


class GenSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_rows: int = Field(2000, ge=1, description="Training rows drawn from the teacher's π_ε")
    heldout_rows: int = Field(500, ge=0, description="Held-out rows drawn the same way")


class DataSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train_path: Optional[str] = Field(None, description="Training dataset file")
    heldout_path: Optional[str] = Field(None, description="Held-out dataset file")
    model_path: Optional[str] = Field(None, description="Model file for eval / diag")
    reference_path: Optional[str] = Field(None, description="Reference file for eval / diag")


class DiagSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilons: List[float] = Field(
        default_factory=lambda: [0.05, 0.1, 0.3, 0.5, 1.0], description="ε grid"
    )
    t_max: int = Field(50, ge=0, description="Mixing curve horizon")
    audit_pairs: int = Field(100, ge=1, description="Random pairs in the contraction audit")
    toy: Optional[Literal["flip"]] = Field(None, description="Replace the model by a toy chain")

    @field_validator("epsilons")
    @classmethod
    def validate_epsilons(cls, v: List[float]) -> List[float]:
        if not v:
            raise InvalidInputError("diag needs at least one epsilon")
        return [check_epsilon(eps) for eps in v]


class BenchSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sizes: List[int] = Field(default_factory=lambda: [16, 256, 4096], description="Solve sizes N")
    particle_counts: List[int] = Field(
        default_factory=lambda: [10, 100, 1000], description="Gradient estimator M values"
    )
    gibbs_steps: int = Field(10000, ge=1, description="Gibbs steps per timing")
    repeats: int = Field(5, ge=1, description="Timings per measurement (median reported)")


class ExperimentConfig(BaseModel):
    """One experiment file drives every command"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(0, description="64-bit root seed for every stream")
    epsilon: float = Field(0.3, description="Restart probability ε in (0, 1]")
    epsilon_schedule: List[ScheduleEntry] = Field(
        default_factory=list, description="Training ε schedule [[iteration, ε], ...]"
    )
    model: ModelSpec = Field(default_factory=lambda: ModelSpec(num_variables=3))
    reference: ReferenceSpec = Field(default_factory=ReferenceSpec)
    train: TrainOptions = Field(default_factory=TrainOptions)
    gen: GenSpec = Field(default_factory=GenSpec)
    data: DataSpec = Field(default_factory=DataSpec)
    diag: DiagSpec = Field(default_factory=DiagSpec)
    bench: BenchSpec = Field(default_factory=BenchSpec)
    output_dir: str = Field("runs/default", description="Directory receiving all artifacts")

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v: int) -> int:
        return check_seed(v)

    @field_validator("epsilon")
    @classmethod
    def validate_epsilon(cls, v: float) -> float:
        return check_epsilon(v)

    @field_validator("epsilon_schedule")
    @classmethod
    def validate_schedule(cls, v: List[ScheduleEntry]) -> List[ScheduleEntry]:
        return _check_schedule(v)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epsilon=self.epsilon,
            epsilon_schedule=self.epsilon_schedule,
            seed=self.seed,
            **self.train.model_dump(),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump"""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


class ModelDocument(BaseModel):
    """On-disk model: {"V", "K", "edges", "theta"}"""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    num_variables: int = Field(..., alias="V")
    num_labels: int = Field(..., alias="K")
    edges: List[Tuple[int, int]]
    theta: List[float]

    @classmethod
    def from_model(cls, model: PairwiseModel) -> "ModelDocument":
        return cls(
            num_variables=model.space.num_variables,
            num_labels=model.space.num_labels,
            edges=[tuple(e) for e in model.edges],
            theta=model.theta.tolist(),
        )

    def to_model(self) -> PairwiseModel:
        space = StateSpace(num_variables=self.num_variables, num_labels=self.num_labels)
        return PairwiseModel(space=space, edges=self.edges, theta=np.array(self.theta))


class ReferenceDocument(BaseModel):
    """On-disk reference: {"V", "K", "q"}"""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    num_variables: int = Field(..., alias="V")
    num_labels: int = Field(..., alias="K")
    q: List[List[float]]

    @classmethod
    def from_reference(cls, reference: ReferenceModel) -> "ReferenceDocument":
        return cls(
            num_variables=reference.space.num_variables,
            num_labels=reference.space.num_labels,
            q=reference.q.tolist(),
        )

    def to_reference(self) -> ReferenceModel:
        space = StateSpace(num_variables=self.num_variables, num_labels=self.num_labels)
        return ReferenceModel(space=space, q=np.array(self.q))


class Dataset(BaseModel):
    """Rows of states over one space"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    space: StateSpace
    rows: np.ndarray

    @field_validator("rows", mode="before")
    @classmethod
    def coerce_rows(cls, v) -> np.ndarray:
        return np.array(v, dtype=np.int64)

    @model_validator(mode="after")
    def check_rows(self) -> "Dataset":
        rows = self.space.validate_rows(self.rows)
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        return self

    def __len__(self) -> int:
        return self.rows.shape[0]


class TrainRecord(BaseModel):
    """One training-log line, written at every evaluation"""

    model_config = ConfigDict(frozen=True)

    iteration: int
    epsilon: float
    train_loglik_exact: Optional[float] = None
    heldout_loglik_exact: Optional[float] = None
    mean_ess: Optional[float] = None
    max_weight: Optional[float] = None
    wallclock_ms: float = 0.0


class EvalMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: int
    epsilon: float
    mean_loglik: float = Field(..., description="Mean exact log π_ε")
    mean_reference_logprob: float = Field(..., description="Mean log π̃")
    mean_model_logprob: float = Field(..., description="Mean exact log p_θ")
