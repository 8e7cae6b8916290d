"""
Tests for experiment configuration and document schemas
"""

import numpy as np
import pytest
from pydantic import ValidationError

from doeblin.core.constants import Topology
from doeblin.core.exceptions import InvalidInputError
from doeblin.models.chain import StateSpace
from doeblin.models.schemas import (
    Dataset,
    ExperimentConfig,
    ModelDocument,
    ModelSpec,
    ReferenceSpec,
    TrainConfig,
    TrainRecord,
)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert config.epsilon == 0.3
        assert config.particles == 100
        assert config.epsilon_schedule == []

    def test_epsilon_schedule_is_piecewise_constant(self):
        config = TrainConfig(epsilon=0.5, epsilon_schedule=[[10, 0.3], [20, 0.1]])
        assert [config.epsilon_at(i) for i in (0, 9, 10, 19, 20, 500)] == [
            0.5,
            0.5,
            0.3,
            0.3,
            0.1,
            0.1,
        ]

    def test_learning_rate_decay(self):
        config = TrainConfig(learning_rate=0.4, decay_tau=10)
        assert config.learning_rate_at(0) == 0.4
        assert config.learning_rate_at(10) == pytest.approx(0.2)

    @pytest.mark.parametrize(
        "schedule", [[[5, 0.3], [5, 0.2]], [[5, 0.3], [2, 0.2]], [[-1, 0.3]], [[3, 0.0]]]
    )
    def test_bad_schedule_rejected(self, schedule):
        with pytest.raises(InvalidInputError):
            TrainConfig(epsilon_schedule=schedule)

    def test_bad_epsilon_rejected(self):
        with pytest.raises(InvalidInputError):
            TrainConfig(epsilon=1.2)

    @pytest.mark.parametrize("field", ["particles", "batch_size", "eval_every"])
    def test_counts_must_be_positive(self, field):
        with pytest.raises(ValidationError):
            TrainConfig(**{field: 0})

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=-0.1)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(momentum=0.9)


class TestModelSpec:
    def test_chain(self):
        spec = ModelSpec(topology="chain", num_variables=4, num_labels=3)
        assert spec.space() == StateSpace(num_variables=4, num_labels=3)
        assert spec.edge_list() == [(0, 1), (1, 2), (2, 3)]

    def test_grid_derives_variable_count(self):
        spec = ModelSpec(topology=Topology.GRID, rows=2, cols=3)
        assert spec.space().num_variables == 6
        assert len(spec.edge_list()) == 7

    def test_grid_needs_shape(self):
        with pytest.raises(InvalidInputError):
            ModelSpec(topology="grid", rows=2)

    def test_grid_variable_count_consistent(self):
        with pytest.raises(InvalidInputError):
            ModelSpec(topology="grid", rows=2, cols=2, num_variables=5)

    def test_custom_needs_edges(self):
        with pytest.raises(InvalidInputError):
            ModelSpec(topology="custom", num_variables=3)
        spec = ModelSpec(topology="custom", num_variables=3, edges=[[0, 2]])
        assert spec.edge_list() == [(0, 2)]

    def test_theta_length_checked(self):
        with pytest.raises(InvalidInputError):
            ModelSpec(num_variables=2, theta=[0.0] * 7)
        assert len(ModelSpec(num_variables=2, theta=[0.0] * 8).theta) == 8

    def test_unknown_topology(self):
        with pytest.raises(ValidationError):
            ModelSpec(topology="ring", num_variables=3)


class TestExperimentConfig:
    def test_defaults_validate(self):
        config = ExperimentConfig()
        assert config.model.space().cardinality == 8
        assert config.train_config().particles == 100

    def test_train_config_carries_run_fields(self, small_config):
        train = small_config.train_config()
        assert train.seed == 11
        assert train.epsilon == 0.3
        assert train.iterations == 3

    def test_hash_stable_and_sensitive(self, small_config):
        same = ExperimentConfig.model_validate(small_config.model_dump(mode="json"))
        assert same.config_hash() == small_config.config_hash()
        changed = small_config.model_copy(update={"seed": 12})
        assert changed.config_hash() != small_config.config_hash()

    def test_canonical_json_sorted(self, small_config):
        text = small_config.canonical_json()
        assert text.index('"bench"') < text.index('"data"') < text.index('"seed"')

    def test_explicit_reference_needs_q(self):
        with pytest.raises(InvalidInputError):
            ReferenceSpec(kind="explicit")

    def test_seed_range(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig(seed=-1)

    def test_typo_rejected(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.model_validate({"epsilom": 0.2})

    def test_empty_epsilon_grid_rejected(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig.model_validate({"diag": {"epsilons": []}})


class TestDocuments:
    def test_model_document_aliases(self, chain3_model):
        payload = ModelDocument.from_model(chain3_model).model_dump(by_alias=True)
        assert set(payload) == {"V", "K", "edges", "theta"}
        assert payload["V"] == 3
        rebuilt = ModelDocument.model_validate(payload).to_model()
        np.testing.assert_array_equal(rebuilt.theta, chain3_model.theta)
        assert rebuilt.edges == chain3_model.edges

    def test_dataset_rows_checked(self):
        space = StateSpace(num_variables=2, num_labels=2)
        dataset = Dataset(space=space, rows=[[0, 1], [1, 1]])
        assert len(dataset) == 2
        assert not dataset.rows.flags.writeable
        with pytest.raises(InvalidInputError):
            Dataset(space=space, rows=[[0, 2]])
        with pytest.raises(InvalidInputError):
            Dataset(space=space, rows=[])

    def test_train_record_optional_fields(self):
        record = TrainRecord(iteration=0, epsilon=0.3)
        assert record.heldout_loglik_exact is None
        assert record.wallclock_ms == 0.0
