import math
from fractions import Fraction

import numpy as np
import pytest

from helpers import random_coupling, random_ordered_pair
from lambda_asg.duality import (
    DualityReport,
    generator_duality_check,
    limit_generator_duality,
    limit_moment_duality_check,
    line_count_generator,
    pathwise_duality_check,
    sampling_function,
    sampling_matrix,
)
from lambda_asg.measures import CoupledMeasure, quantile_coupling
from lambda_asg.moran import MoranConfig, generator_matrix


class TestSamplingFunction:
    def test_small_case(self):
        assert sampling_function(4, 2, 2) == pytest.approx(1 / 6)

    def test_empty_sample(self):
        for N, i in ((4, 0), (9, 5), (30, 30)):
            assert sampling_function(N, i, 0) == 1.0

    def test_saturated_population(self):
        for n in range(8):
            assert sampling_function(7, 7, n) == 1.0

    def test_oversized_sample_is_zero(self):
        assert sampling_function(6, 2, 3) == 0.0

    def test_exact_binomial_ratio(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            N = int(rng.integers(2, 60))
            i = int(rng.integers(0, N + 1))
            n = int(rng.integers(0, N + 1))
            exact = Fraction(math.comb(i, n), math.comb(N, n))
            assert sampling_function(N, i, n) == pytest.approx(float(exact), rel=1e-13)

    def test_matrix_agrees_with_scalar(self):
        N = 17
        D = sampling_matrix(N)
        for i in range(N + 1):
            for n in range(N + 1):
                assert D[i, n] == pytest.approx(sampling_function(N, i, n), abs=1e-15)

    def test_monotonicity(self):
        D = sampling_matrix(20)
        assert np.all(np.diff(D, axis=0) >= -1e-15)   # more carriers, likelier
        assert np.all(np.diff(D, axis=1) <= 1e-15)    # larger sample, less likely

    def test_large_population_power_limit(self):
        # S(floor(xN), n) -> x^n at rate O(1/N); x irrational so the floor
        # never lands exactly on the target
        x = 1.0 / math.e
        for n in range(1, 7):
            errs = []
            for N in (100, 1000, 10_000):
                i = int(math.floor(x * N))
                errs.append(abs(sampling_function(N, i, n) - x**n))
            assert errs[0] > errs[1] > errs[2]
            assert errs[2] <= 1.5 * errs[0] / 100


class TestGeneratorDuality:
    def test_neutral(self, neutral_coupling):
        assert generator_duality_check(10, neutral_coupling) < 1e-10

    def test_selective(self, example_coupling):
        assert generator_duality_check(10, example_coupling) < 1e-10

    def test_random_couplings_various_sizes(self):
        rng = np.random.default_rng(5)
        for N in (5, 17, 40):
            for _ in range(3):
                assert generator_duality_check(N, random_coupling(rng)) < 1e-10

    def test_constant_column_in_kernel(self, example_coupling):
        # D[., 0] is constant, so the column-0 residual is a pure row-sum
        N = 12
        B = generator_matrix(MoranConfig(N=N, coupling=example_coupling, initial_count=0))
        A = line_count_generator(N, example_coupling)
        D = sampling_matrix(N)
        assert np.abs((B @ D)[:, 0]).max() < 1e-12
        assert np.abs((B @ D - D @ A.T)[:, 0]).max() < 1e-12

    def test_line_count_generator_conservative(self, example_coupling):
        A = line_count_generator(14, example_coupling)
        assert np.abs(A.sum(axis=1)).max() < 1e-12
        assert np.all(A[0] == 0.0)


class TestPathwiseDuality:
    def test_all_disadvantaged_exact(self, example_coupling):
        report = pathwise_duality_check(
            8, example_coupling, T=1.0, initial_count=8, sample_size=2,
            replicates=200, seed=3,
        )
        assert report.lhs == 1.0
        assert report.rhs == 1.0
        assert report.z == 0.0

    def test_statistical_agreement(self, example_coupling):
        report = pathwise_duality_check(
            10, example_coupling, T=1.0, initial_count=5, sample_size=2,
            replicates=30_000, seed=21,
        )
        assert abs(report.z) < 4.0
        assert report.stderr_lhs > 0

    def test_threads_reproduce(self, example_coupling):
        kw = dict(T=0.8, initial_count=3, sample_size=2, replicates=4100, seed=9)
        a = pathwise_duality_check(6, example_coupling, **kw, threads=1)
        b = pathwise_duality_check(6, example_coupling, **kw, threads=2)
        assert a == b

    def test_report_round_trips_to_dict(self, example_coupling):
        report = pathwise_duality_check(
            6, example_coupling, T=0.5, initial_count=3, sample_size=1,
            replicates=50, seed=1,
        )
        d = report.to_dict()
        assert set(d) == {"lhs", "rhs", "stderr_lhs", "stderr_rhs", "z",
                          "replicates", "params"}
        assert DualityReport(**d) == report


class TestLimitGeneratorDuality:
    def test_example_coupling(self, example_coupling):
        assert limit_generator_duality(example_coupling, 12, 101) < 1e-10

    def test_single_power_tight(self, example_coupling):
        assert limit_generator_duality(example_coupling, 1, 101) < 1e-14

    def test_zero_coupling(self):
        empty = CoupledMeasure.from_atoms([])
        assert limit_generator_duality(empty, 12, 51) == 0.0

    def test_random_couplings(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            assert limit_generator_duality(random_coupling(rng), 12, 101) < 1e-10

    def test_couplings_of_ordered_pairs(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            lm, lp = random_ordered_pair(rng)
            assert limit_generator_duality(quantile_coupling(lm, lp), 10, 51) < 1e-10


class TestLimitMomentDuality:
    def test_absorbed_start_exact(self, example_coupling):
        report = limit_moment_duality_check(
            example_coupling, x=1.0, n=2, t=0.5, replicates=500, seed=4
        )
        assert report.lhs == 1.0
        assert report.rhs == 1.0

    def test_statistical_agreement(self, mild_selective_coupling):
        report = limit_moment_duality_check(
            mild_selective_coupling, x=0.5, n=2, t=1.0, replicates=100_000, seed=6
        )
        assert abs(report.z) < 4.0
