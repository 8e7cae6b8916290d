"""
Tests for exact likelihood oracles, the path gradient estimator and SGD training
"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from doeblin.core.exceptions import DenseSizeError, DivergenceError, InvalidInputError
from doeblin.models.chain import StateSpace
from doeblin.models.mrf import PairwiseModel, ReferenceModel
from doeblin.models.schemas import TrainConfig
from doeblin.services.gibbs import (
    chain_edges,
    dense_gibbs_kernel,
    exact_distribution,
    random_model,
    unnorm_logp,
)
from doeblin.services.learning import (
    cd_gradient,
    grad_loglik_estimate,
    grad_loglik_fd,
    loglik_exact,
    mean_loglik_exact,
    path_gradient,
    sample_posterior_path,
    sgd_train,
    start_posterior_exact,
    stationary_logprobs,
)
from doeblin.services.restart import sample_stationary_batch


@pytest.fixture
def uniform_pair(ising_pair):
    return ReferenceModel.uniform(ising_pair.space)


def single_variable(weights):
    space = StateSpace(num_variables=1, num_labels=len(weights))
    return PairwiseModel(space=space, edges=[], theta=weights)


def train_config(**overrides):
    options = {
        "epsilon": 0.3,
        "particles": 6,
        "learning_rate": 0.3,
        "iterations": 3,
        "batch_size": 3,
        "eval_every": 1,
        "seed": 4,
    }
    options.update(overrides)
    return TrainConfig(**options)


TRAIN_ROWS = [[0, 0], [1, 1], [1, 1], [0, 1], [1, 1], [0, 0]]


class TestExactLikelihood:
    def test_epsilon_one_is_reference(self, chain3_model, chain3_reference):
        y = (1, 0, 1)
        assert loglik_exact(chain3_model, chain3_reference, 1.0, y) == pytest.approx(
            chain3_reference.log_prob(y), abs=1e-12
        )

    def test_single_variable_closed_form(self):
        model = single_variable([0.4, -0.3, 0.9])
        reference = ReferenceModel(space=model.space, q=[[0.2, 0.5, 0.3]])
        p = exact_distribution(model).probs
        for k in range(3):
            expected = math.log(0.25 * reference.q[0, k] + 0.75 * p[k])
            assert loglik_exact(model, reference, 0.25, (k,)) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("epsilon", [0.05, 0.3, 1.0])
    def test_normalization(self, chain3_model, chain3_reference, epsilon):
        total = np.exp(stationary_logprobs(chain3_model, chain3_reference, epsilon)).sum()
        assert abs(total - 1.0) < 1e-10

    def test_lower_bound(self, chain3_model, chain3_reference):
        logp = stationary_logprobs(chain3_model, chain3_reference, 0.2)
        floor = math.log(0.2) + chain3_reference.log_probs(chain3_model.space.all_states())
        assert np.all(logp >= floor)

    def test_mean_over_rows(self, chain3_model, chain3_reference):
        rows = np.array([[0, 0, 0], [1, 1, 0]])
        expected = np.mean([loglik_exact(chain3_model, chain3_reference, 0.3, r) for r in rows])
        assert mean_loglik_exact(chain3_model, chain3_reference, 0.3, rows) == pytest.approx(
            expected
        )

    def test_size_cap(self):
        space = StateSpace(num_variables=13, num_labels=2)
        model = PairwiseModel.zeros(space, chain_edges(13))
        with pytest.raises(DenseSizeError):
            loglik_exact(model, ReferenceModel.uniform(space), 0.5, (0,) * 13)


class TestFiniteDifferenceGradient:
    def test_epsilon_one_is_zero(self, ising_pair, uniform_pair):
        np.testing.assert_array_equal(grad_loglik_fd(ising_pair, uniform_pair, 1.0, (1, 0)), 0.0)

    def test_node_shift_invariance(self, chain3_model, chain3_reference):
        grad = grad_loglik_fd(chain3_model, chain3_reference, 0.3, (0, 1, 1))
        for v in range(3):
            start = chain3_model.node_index(v, 0)
            assert abs(grad[start : start + 2].sum()) < 1e-6


class TestPosteriorPaths:
    def test_epsilon_one(self, ising_pair, uniform_pair, rng):
        path = sample_posterior_path(ising_pair, uniform_pair, 1.0, (1, 0), rng)
        assert path.states == [(1, 0)]
        assert path.restart_time == 0
        expected = uniform_pair.log_prob((1, 0)) - unnorm_logp(ising_pair, (1, 0))
        assert path.log_weight == pytest.approx(expected)
        np.testing.assert_array_equal(path_gradient(ising_pair, path), 0.0)

    def test_structure(self, chain3_model, chain3_reference, rng):
        for _ in range(50):
            path = sample_posterior_path(chain3_model, chain3_reference, 0.2, (1, 1, 0), rng)
            assert path.states[-1] == (1, 1, 0)
            assert len(path.states) == path.restart_time + 1
            for t, (v, k) in enumerate(zip(path.coords, path.labels)):
                before, after = path.states[t], path.states[t + 1]
                assert [u for u in range(3) if before[u] != after[u]] in ([], [v])
                assert after[v] == k

    def test_weighted_start_matches_exact_posterior(self, ising_pair, uniform_pair, rng):
        y = (1, 1)
        space = ising_pair.space
        exact = start_posterior_exact(ising_pair, uniform_pair, 0.3, y)
        weights = np.zeros(space.cardinality)
        for _ in range(20_000):
            path = sample_posterior_path(ising_pair, uniform_pair, 0.3, y, rng)
            weights[space.index_of(path.states[0])] += math.exp(path.log_weight)
        assert 0.5 * np.abs(weights / weights.sum() - exact.probs).sum() < 0.02

    def test_exact_posterior_epsilon_one(self, ising_pair, uniform_pair):
        exact = start_posterior_exact(ising_pair, uniform_pair, 1.0, (0, 1))
        np.testing.assert_allclose(exact.probs, [0.0, 1.0, 0.0, 0.0], atol=1e-15)


class TestGradientEstimate:
    def test_epsilon_one_is_zero(self, ising_pair, uniform_pair, rng):
        estimate = grad_loglik_estimate(ising_pair, uniform_pair, 1.0, (0, 1), 25, rng)
        np.testing.assert_array_equal(estimate.grad, 0.0)
        assert estimate.ess == pytest.approx(25)
        assert not estimate.degenerate

    def test_ess_within_bounds(self, chain3_model, chain3_reference, rng):
        estimate = grad_loglik_estimate(chain3_model, chain3_reference, 0.3, (0, 1, 0), 200, rng)
        assert 1.0 <= estimate.ess <= 200
        assert 0.0 < estimate.max_weight <= 1.0
        assert estimate.std_error.shape == estimate.grad.shape

    def test_particle_count_checked(self, ising_pair, uniform_pair, rng):
        with pytest.raises(InvalidInputError):
            grad_loglik_estimate(ising_pair, uniform_pair, 0.3, (0, 0), 0, rng)

    def test_thread_count_does_not_change_result(self, chain3_model, chain3_reference):
        results = [
            grad_loglik_estimate(
                chain3_model,
                chain3_reference,
                0.3,
                (1, 0, 1),
                101,
                np.random.default_rng(9),
                workers=workers,
            )
            for workers in (1, 4)
        ]
        np.testing.assert_array_equal(results[0].grad, results[1].grad)
        assert results[0].ess == results[1].ess

    def test_default_workers_from_settings(self, ising_pair, uniform_pair):
        with patch("doeblin.services.learning.settings") as mock_settings:
            mock_settings.PARTICLE_WORKERS = 3
            threaded = grad_loglik_estimate(
                ising_pair, uniform_pair, 0.3, (1, 1), 40, np.random.default_rng(2)
            )
        serial = grad_loglik_estimate(
            ising_pair, uniform_pair, 0.3, (1, 1), 40, np.random.default_rng(2), workers=1
        )
        np.testing.assert_array_equal(threaded.grad, serial.grad)

    def test_single_particle_not_degenerate(self, ising_pair, uniform_pair):
        estimate = grad_loglik_estimate(
            ising_pair, uniform_pair, 0.3, (1, 1), 1, np.random.default_rng(0)
        )
        assert estimate.ess == pytest.approx(1.0)
        assert estimate.max_weight == 1.0
        assert not estimate.degenerate

    def test_collapsed_weights_flagged(self, ising_pair, uniform_pair):
        log_weights = np.full(200, -60.0)
        log_weights[7] = 0.0
        grads = np.zeros((200, ising_pair.num_parameters))
        with patch(
            "doeblin.services.learning._particle_block", return_value=(log_weights, grads)
        ), patch("doeblin.services.learning.logger") as mock_logger:
            estimate = grad_loglik_estimate(
                ising_pair, uniform_pair, 0.3, (1, 1), 200, np.random.default_rng(0), workers=1
            )
        assert estimate.degenerate
        assert estimate.max_weight == pytest.approx(1.0)
        mock_logger.warning.assert_called_once()
        assert mock_logger.warning.call_args[0][0] == "ess_degenerate"

    def test_agrees_with_finite_differences(self, ising_pair, uniform_pair):
        y = (1, 1)
        fd = grad_loglik_fd(ising_pair, uniform_pair, 0.3, y)
        estimate = grad_loglik_estimate(
            ising_pair, uniform_pair, 0.3, y, 4000, np.random.default_rng(17)
        )
        assert np.all(np.abs(estimate.grad - fd) <= 4 * estimate.std_error + 1e-3)

    @pytest.mark.slow
    @pytest.mark.parametrize("epsilon", [0.3, 0.5])
    def test_agrees_with_finite_differences_many_particles(
        self, chain3_model, chain3_reference, epsilon
    ):
        y = (0, 1, 1)
        fd = grad_loglik_fd(chain3_model, chain3_reference, epsilon, y)
        estimate = grad_loglik_estimate(
            chain3_model, chain3_reference, epsilon, y, 50_000, np.random.default_rng(23)
        )
        assert np.all(np.abs(estimate.grad - fd) <= 4 * estimate.std_error + 1e-4)

    @pytest.mark.slow
    def test_error_shrinks_with_particles(self, chain3_model, chain3_reference):
        y = (1, 0, 1)
        fd = grad_loglik_fd(chain3_model, chain3_reference, 0.3, y)
        errors = {10_000: [], 100_000: []}
        for seed in range(20):
            for num_particles, found in errors.items():
                estimate = grad_loglik_estimate(
                    chain3_model,
                    chain3_reference,
                    0.3,
                    y,
                    num_particles,
                    np.random.default_rng(seed),
                )
                found.append(np.abs(estimate.grad - fd).max())
        assert np.median(errors[10_000]) > np.median(errors[100_000])


class TestContrastiveDivergence:
    def test_no_move_gives_zero(self, rng):
        model = single_variable([40.0, 0.0])
        np.testing.assert_array_equal(cd_gradient(model, (0,), 3, rng), 0.0)

    def test_single_variable_expectation(self, rng):
        model = single_variable([0.4, -0.3, 0.9])
        mean = np.mean([cd_gradient(model, (1,), 1, rng) for _ in range(20_000)], axis=0)
        expected = np.array([0.0, 1.0, 0.0]) - exact_distribution(model).probs
        np.testing.assert_allclose(mean, expected, atol=0.02)

    @pytest.mark.parametrize("seed", range(5))
    def test_direction_agrees_with_restart_gradient(self, ising_pair, uniform_pair, seed):
        epsilon = 0.05
        rng = np.random.default_rng(seed)
        space = ising_pair.space
        draws = sample_stationary_batch(
            dense_gibbs_kernel(ising_pair), uniform_pair.to_dense(), epsilon, rng, 400
        )
        states = space.all_states()[draws]
        student = PairwiseModel.zeros(space, ising_pair.edges)

        cd = np.mean([cd_gradient(student, y, 1, rng) for y in states], axis=0)
        indices, counts = np.unique(draws, return_counts=True)
        exact = sum(
            count * grad_loglik_fd(student, uniform_pair, epsilon, space.state_of(int(i)))
            for i, count in zip(indices, counts)
        ) / len(draws)
        cosine = cd @ exact / (np.linalg.norm(cd) * np.linalg.norm(exact))
        assert cosine > 0

    def test_k_checked(self, ising_pair, rng):
        with pytest.raises(InvalidInputError):
            cd_gradient(ising_pair, (0, 0), 0, rng)


class TestSgdTrain:
    def test_zero_step_size_keeps_model(self, ising_pair, uniform_pair):
        final, log = sgd_train(TRAIN_ROWS, ising_pair, uniform_pair, train_config(learning_rate=0))
        np.testing.assert_array_equal(final.theta, ising_pair.theta)
        assert [r.iteration for r in log.records] == [0, 1, 2, 3]

    def test_records_follow_schedule(self, ising_pair, uniform_pair):
        config = train_config(epsilon=0.5, epsilon_schedule=[[2, 1.0]], iterations=4, eval_every=2)
        _, log = sgd_train(TRAIN_ROWS, ising_pair, uniform_pair, config, heldout=TRAIN_ROWS[:2])
        assert [r.iteration for r in log.records] == [0, 2, 4]
        assert [r.epsilon for r in log.records] == [0.5, 0.5, 1.0]
        first = log.records[0]
        assert first.mean_ess is None
        assert first.heldout_loglik_exact is not None
        assert log.records[-1].mean_ess is not None

    def test_same_seed_same_log(self, ising_pair, uniform_pair):
        runs = [
            sgd_train(TRAIN_ROWS, ising_pair, uniform_pair, train_config(), workers=workers)
            for workers in (1, 3)
        ]
        np.testing.assert_array_equal(runs[0][0].theta, runs[1][0].theta)
        assert runs[0][1].deterministic_view() == runs[1][1].deterministic_view()

    def test_different_seed_differs(self, ising_pair, uniform_pair):
        a, _ = sgd_train(TRAIN_ROWS, ising_pair, uniform_pair, train_config(seed=1))
        b, _ = sgd_train(TRAIN_ROWS, ising_pair, uniform_pair, train_config(seed=2))
        assert not np.array_equal(a.theta, b.theta)

    def test_divergence_guard(self, ising_pair, uniform_pair):
        config = train_config(learning_rate=5.0, theta_limit=0.1)
        with pytest.raises(DivergenceError) as exc_info:
            sgd_train(TRAIN_ROWS, ising_pair, uniform_pair, config)
        assert exc_info.value.iteration == 1
        assert [r.iteration for r in exc_info.value.records] == [0]

    def test_empty_dataset_rejected(self, ising_pair, uniform_pair):
        with pytest.raises(InvalidInputError):
            sgd_train([], ising_pair, uniform_pair, train_config())



def teacher_chain3() -> PairwiseModel:
    space = StateSpace(num_variables=3, num_labels=2)
    teacher = PairwiseModel.zeros(space, chain_edges(3))
    theta = teacher.theta.copy()
    for e in range(2):
        theta[teacher.edge_index(e, 0, 0)] = 2.0
        theta[teacher.edge_index(e, 1, 1)] = 2.0
    return teacher.with_theta(theta)


@pytest.mark.slow
class TestLearningAcceptance:
    def test_estimate_within_three_errors_on_random_models(self):
        passed = 0
        for seed in range(20):
            rng = np.random.default_rng(5000 + seed)
            num_variables = 2 + seed % 2
            space = StateSpace(num_variables=num_variables, num_labels=2)
            model = random_model(space, chain_edges(num_variables), rng)
            reference = ReferenceModel.uniform(space)
            epsilon = (0.3, 0.5)[seed % 2]
            y = space.state_of(int(rng.integers(space.cardinality)))

            fd = grad_loglik_fd(model, reference, epsilon, y)
            estimate = grad_loglik_estimate(model, reference, epsilon, y, 50_000, rng)
            passed += bool(np.all(np.abs(estimate.grad - fd) <= 3 * estimate.std_error + 1e-6))
        assert passed >= 18

    def test_teacher_student_over_seeds(self):
        teacher = teacher_chain3()
        space = teacher.space
        reference = ReferenceModel.uniform(space)
        epsilon = 0.3
        draws = sample_stationary_batch(
            dense_gibbs_kernel(teacher),
            reference.to_dense(),
            epsilon,
            np.random.default_rng(3),
            3000,
        )
        states = space.all_states()[draws]
        train, heldout = states[:2000], states[2000:]
        initial = PairwiseModel.zeros(space, chain_edges(3))
        start = mean_loglik_exact(initial, reference, epsilon, heldout)
        target = mean_loglik_exact(teacher, reference, epsilon, heldout)

        successes = 0
        for seed in (1, 2, 3):
            config = train_config(
                epsilon=epsilon,
                particles=30,
                learning_rate=0.5,
                iterations=300,
                batch_size=20,
                eval_every=50,
                seed=seed,
            )
            final, log = sgd_train(train, initial, reference, config, heldout=heldout)
            reached = log.records[-1].heldout_loglik_exact
            assert reached == pytest.approx(mean_loglik_exact(final, reference, epsilon, heldout))
            successes += reached - start >= 0.05 and reached >= target - 0.05
        assert successes >= 2
