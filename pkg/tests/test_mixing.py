"""
Tests for mixing diagnostics
"""

import tracemalloc

import numpy as np
import pytest

from doeblin.core.exceptions import NonErgodicKernelError
from doeblin.models.chain import (
    DenseDistribution,
    DenseKernel,
    StateSpace,
    random_distribution,
    random_kernel,
)
from doeblin.services.linalg import stationary_of
from doeblin.services.mixing import (
    approximation_gap,
    contraction_audit,
    contraction_check,
    envelope_violations,
    mixing_curve,
    mixing_time,
)


@pytest.fixture
def two_state():
    """A = [[1-a, a], [b, 1-b]] with a=0.2, b=0.3, restarting at state 0"""
    space = StateSpace.flat(2)
    kernel = DenseKernel(space=space, rows=[[0.8, 0.2], [0.3, 0.7]])
    return kernel, DenseDistribution.point_mass(space, 0)


class TestContraction:
    def test_audit_has_no_violations(self, random_triple, rng):
        base, reference, epsilon = random_triple
        result = contraction_audit(base, reference, epsilon, rng, num_pairs=100)
        assert len(result.checks) == 100
        assert result.violations == 0

    def test_epsilon_one_collapses(self, random_triple, rng):
        base, reference, _ = random_triple
        mu = DenseDistribution.point_mass(base.space, 0)
        nu = DenseDistribution.point_mass(base.space, 3)
        check = contraction_check(base, reference, 1.0, mu, nu)
        assert check.lhs == pytest.approx(0.0, abs=1e-15)
        assert check.rhs == 0.0

    def test_identity_base_equality(self):
        space = StateSpace.flat(2)
        base = DenseKernel.identity(space)
        mu = DenseDistribution.point_mass(space, 0)
        nu = DenseDistribution.point_mass(space, 1)
        check = contraction_check(base, DenseDistribution.uniform(space), 0.3, mu, nu)
        assert check.lhs == pytest.approx(0.7, abs=1e-12)
        assert check.rhs == pytest.approx(0.7, abs=1e-12)

    def test_flip_chain_is_tight(self, flip_chain):
        kernel, reference = flip_chain
        mu = DenseDistribution.point_mass(kernel.space, 0)
        nu = DenseDistribution.point_mass(kernel.space, 1)
        check = contraction_check(kernel, reference, 0.25, mu, nu)
        assert check.lhs == pytest.approx(check.rhs, abs=1e-12)
        assert check.holds


class TestMixingCurve:
    def test_envelope_respected(self, random_triple):
        base, reference, epsilon = random_triple
        start = DenseDistribution.point_mass(base.space, 2)
        curve = mixing_curve(base, reference, epsilon, start, 30)
        assert [p.t for p in curve] == list(range(31))
        assert envelope_violations(curve) == 0
        assert curve[-1].tv < 0.7**30

    def test_epsilon_one_mixes_in_one_step(self, random_triple):
        base, reference, _ = random_triple
        start = DenseDistribution.point_mass(base.space, 0)
        curve = mixing_curve(base, reference, 1.0, start, 3)
        assert all(point.tv < 1e-12 for point in curve[1:])
        assert mixing_time(curve, threshold=1e-9) == 1

    def test_mixing_time_not_reached(self, flip_chain):
        kernel, reference = flip_chain
        start = DenseDistribution.point_mass(kernel.space, 1)
        curve = mixing_curve(kernel, reference, 0.01, start, 2)
        assert mixing_time(curve, threshold=1e-6) is None


class TestApproximationGap:
    def test_closed_form_two_state(self, two_state):
        kernel, reference = two_state
        rows = approximation_gap(kernel, reference, [0.05, 0.5])
        # gap = ε / (1 − (1−ε)λ) · a/(a+b) with λ = 0.5
        assert rows[0].gap == pytest.approx(0.05 / 0.525 * 0.4, abs=1e-12)
        assert rows[1].gap == pytest.approx(0.5 / 0.75 * 0.4, abs=1e-12)
        assert all(row.holds for row in rows)
        assert rows[0].gap < rows[1].gap

    def test_bound_strict_for_oscillating_chain(self):
        space = StateSpace.flat(2)
        kernel = DenseKernel(space=space, rows=[[0.3, 0.7], [0.6, 0.4]])
        rows = approximation_gap(kernel, DenseDistribution.point_mass(space, 0), [0.2])
        assert rows[0].gap < rows[0].bound - 1e-3

    def test_random_kernel_within_bound(self, random_triple):
        base, reference, _ = random_triple
        for row in approximation_gap(base, reference, [0.05, 0.1, 0.3, 0.5, 1.0]):
            assert row.gap <= row.bound + 1e-8

    def test_reference_at_stationarity(self, random_triple):
        base, _, _ = random_triple
        pi = stationary_of(base)
        for row in approximation_gap(base, pi, [0.05, 0.5, 1.0]):
            assert row.gap < 1e-10

    def test_reducible_base_rejected(self):
        space = StateSpace.flat(2)
        with pytest.raises(NonErgodicKernelError):
            approximation_gap(
                DenseKernel.identity(space), DenseDistribution.uniform(space), [0.5]
            )

    def test_epsilon_one_gap_is_reference_distance(self, two_state):
        kernel, reference = two_state
        (row,) = approximation_gap(kernel, reference, [1.0])
        np.testing.assert_allclose(row.gap, 0.4, atol=1e-12)
        np.testing.assert_allclose(row.bound, 0.4, atol=1e-12)

    def test_small_epsilon_memory_stays_flat(self, rng):
        space = StateSpace.flat(64)
        base = random_kernel(space, rng)
        reference = DenseDistribution.uniform(space)
        tracemalloc.start()
        try:
            (row,) = approximation_gap(base, reference, [1e-3])
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
        assert row.holds
        # ~23k series terms; keeping them all would take about 12 MB
        assert peak < 4 * 1024**2


def random_instance(seed: int, num_states: int):
    rng = np.random.default_rng(seed)
    space = StateSpace.flat(num_states)
    return random_kernel(space, rng), random_distribution(space, rng), rng


@pytest.mark.slow
class TestAcceptance:
    @pytest.mark.parametrize("epsilon", [0.1, 0.3, 0.5])
    @pytest.mark.parametrize("seed", range(10))
    def test_contraction_audit_over_random_chains(self, seed, epsilon):
        base, reference, rng = random_instance(1000 + seed, 5)
        result = contraction_audit(base, reference, epsilon, rng, num_pairs=100)
        assert len(result.checks) == 100
        assert result.violations == 0

    @pytest.mark.parametrize("seed", range(10))
    def test_envelope_on_eight_state_kernels(self, seed):
        base, reference, rng = random_instance(2000 + seed, 8)
        start = DenseDistribution.point_mass(base.space, int(rng.integers(8)))
        curve = mixing_curve(base, reference, 0.2, start, 50)
        assert envelope_violations(curve) == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_gap_shrinks_with_epsilon(self, seed):
        base, reference, _ = random_instance(3000 + seed, 6)
        small, large = approximation_gap(base, reference, [0.05, 0.5])
        assert small.holds and large.holds
        assert small.gap < large.gap
