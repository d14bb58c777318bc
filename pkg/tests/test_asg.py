import numpy as np
import pytest
from scipy.stats import chi2_contingency

from helpers import merged_chisquare_pvalue
from lambda_asg.asg import (
    OUTCOME_NEUTRAL,
    OUTCOME_SELECTIVE,
    AsgRealization,
    TypeAssignment,
    ancestry_consistency_check,
    generate_asg,
    line_count_rates,
    potential_ancestors,
    propagate_forward,
    read_event_log,
    simulate_line_count,
    stream_asg_to_log,
    write_event_log,
)
from lambda_asg.errors import SizeLimit
from lambda_asg.measures import CoupledMeasure

HALF = CoupledMeasure.from_atoms([(0.5, 0.0, 1.0)])
SEL_ONLY = CoupledMeasure.from_atoms([(0.0, 0.5, 1.0)])


def one_event_realization(N, reproducer, outcome_pairs, y=0.4, z=0.2):
    """A single handcrafted event at t = 1 on horizon [0, 2]."""
    outcome = np.zeros(N, dtype=np.uint8)
    for j, label in outcome_pairs:
        outcome[j] = label
    return AsgRealization(
        N=N, horizon=2.0,
        times=np.array([1.0]),
        reproducers=np.array([reproducer]),
        ys=np.array([y]),
        zs=np.array([z]),
        outcomes=outcome[None, :],
    )


class TestGeneration:
    def test_zero_mass_empty(self):
        empty = CoupledMeasure.from_atoms([])
        asg = generate_asg(4, empty, horizon=3.0, seed=1)
        assert len(asg) == 0

    def test_full_neutral_hits_everyone(self):
        sweep = CoupledMeasure.from_atoms([(1.0, 0.0, 1.0)])
        asg = generate_asg(6, sweep, horizon=3.0, seed=2)
        assert len(asg) > 0
        assert np.all(asg.outcomes == OUTCOME_NEUTRAL)

    def test_poisson_event_count(self, example_coupling):
        # mass 1, horizon 3: mean 3 events per realization
        rate = example_coupling.total_mass
        horizon = 3.0
        counts = [
            len(generate_asg(5, example_coupling, horizon, seed=s)) for s in range(4000)
        ]
        mean = np.mean(counts)
        se = np.std(counts) / np.sqrt(len(counts))
        assert abs(mean - rate * horizon) < 3 * se

    def test_outcome_frequencies(self, example_coupling):
        asg = generate_asg(200, example_coupling, horizon=50.0, seed=3)
        # conditional on atom (y, z), labels are iid over individuals
        for e in range(0, len(asg), 7):
            y, z = asg.ys[e], asg.zs[e]
            freq_n = (asg.outcomes[e] == OUTCOME_NEUTRAL).mean()
            assert abs(freq_n - y) < 5 * np.sqrt(y * (1 - y) / 200) + 0.05

    def test_times_strictly_increasing(self, example_coupling):
        asg = generate_asg(5, example_coupling, horizon=200.0, seed=4)
        assert np.all(np.diff(asg.times) > 0)
        assert asg.times[-1] <= 200.0

    def test_memory_guard(self):
        big = CoupledMeasure.from_atoms([(0.5, 0.0, 2000.0)])
        with pytest.raises(SizeLimit):
            generate_asg(10_000, big, horizon=10.0, seed=5)


class TestPropagation:
    def test_all_minus_closed(self, example_coupling):
        asg = generate_asg(10, example_coupling, horizon=5.0, seed=6)
        out = propagate_forward(asg, TypeAssignment.all_minus(10))
        assert out.minus_count == 10

    def test_all_plus_closed(self, example_coupling):
        asg = generate_asg(10, example_coupling, horizon=5.0, seed=7)
        out = propagate_forward(asg, TypeAssignment.all_plus(10))
        assert out.minus_count == 0

    def test_selective_arrow_from_disadvantaged_is_inert(self):
        asg = one_event_realization(4, reproducer=0, outcome_pairs=[(2, OUTCOME_SELECTIVE)])
        init = TypeAssignment.from_minus_set(4, {0, 2})
        out = propagate_forward(asg, init)
        assert out.minus[2]  # unchanged: the reproducer carried no advantage

    def test_selective_arrow_from_advantaged_converts(self):
        asg = one_event_realization(4, reproducer=0, outcome_pairs=[(2, OUTCOME_SELECTIVE)])
        out = propagate_forward(asg, TypeAssignment.from_minus_set(4, {2, 3}))
        assert not out.minus[2]
        assert out.minus[3]

    def test_neutral_arrow_copies_either_type(self):
        asg = one_event_realization(4, reproducer=1, outcome_pairs=[(3, OUTCOME_NEUTRAL)])
        out = propagate_forward(asg, TypeAssignment.from_minus_set(4, {1}))
        assert out.minus[3]
        out = propagate_forward(asg, TypeAssignment.from_minus_set(4, {3}))
        assert not out.minus[3]


class TestPotentialAncestors:
    def test_no_events_identity(self, example_coupling):
        asg = generate_asg(8, example_coupling, horizon=1.0, seed=8)
        quiet = AsgRealization(
            N=8, horizon=1.0, times=np.empty(0), reproducers=np.empty(0, dtype=int),
            ys=np.empty(0), zs=np.empty(0), outcomes=np.empty((0, 8), dtype=np.uint8),
        )
        assert potential_ancestors(quiet, {2, 5}, 1.0, 0.0) == {2, 5}

    def test_neutral_merge_keeps_count(self):
        # outside reproducer, one neutral arrow into the set: swap, same size
        asg = one_event_realization(5, reproducer=4, outcome_pairs=[(1, OUTCOME_NEUTRAL)])
        anc = potential_ancestors(asg, {1, 2}, 2.0, 0.0)
        assert anc == {2, 4}

    def test_selective_branches(self):
        asg = one_event_realization(5, reproducer=4, outcome_pairs=[(1, OUTCOME_SELECTIVE)])
        anc = potential_ancestors(asg, {1, 2}, 2.0, 0.0)
        assert anc == {1, 2, 4}

    def test_mixed_event_removes_then_adds(self):
        asg = one_event_realization(
            6, reproducer=5,
            outcome_pairs=[(0, OUTCOME_NEUTRAL), (1, OUTCOME_SELECTIVE), (2, OUTCOME_NEUTRAL)],
        )
        anc = potential_ancestors(asg, {0, 1, 2, 3}, 2.0, 0.0)
        assert anc == {1, 3, 5}

    def test_reproducer_inside_set(self):
        asg = one_event_realization(5, reproducer=0, outcome_pairs=[(1, OUTCOME_NEUTRAL)])
        anc = potential_ancestors(asg, {0, 1}, 2.0, 0.0)
        assert anc == {0}

    def test_untouched_event_ignored(self):
        asg = one_event_realization(6, reproducer=4, outcome_pairs=[(5, OUTCOME_NEUTRAL)])
        anc = potential_ancestors(asg, {0, 1}, 2.0, 0.0)
        assert anc == {0, 1}

    def test_window_respected(self):
        asg = one_event_realization(5, reproducer=4, outcome_pairs=[(1, OUTCOME_NEUTRAL)])
        # event at t = 1 lies outside (0, 0.5] and outside (1.5, 2.0]
        assert potential_ancestors(asg, {1}, 0.5, 0.0) == {1}
        assert potential_ancestors(asg, {1}, 2.0, 1.5) == {1}


class TestLineCountRates:
    def test_neutral_half_atom(self):
        coalesce, branch = line_count_rates(4, HALF, 2)
        assert coalesce[1] == pytest.approx(3 / 8)
        assert branch == 0.0

    def test_full_sample_no_branching(self, example_coupling):
        _, branch = line_count_rates(6, example_coupling, 6)
        assert branch == 0.0

    def test_pure_selective_single_line(self):
        N = 5
        coalesce, branch = line_count_rates(N, SEL_ONLY, 1)
        assert coalesce.sum() == 0.0
        assert branch == pytest.approx((1 - 1 / N) * 0.5)

    def test_rates_nonnegative(self, example_coupling):
        for n in range(1, 13):
            coalesce, branch = line_count_rates(12, example_coupling, n)
            assert np.all(coalesce >= 0) and branch >= 0


class TestLineCountSimulation:
    def test_stuck_at_one_without_branching(self):
        path = simulate_line_count(6, HALF, 1, horizon=50.0, seed=9)
        assert len(path) == 1
        assert path.final == 1

    def test_values_in_range(self, example_coupling):
        for seed in range(5):
            path = simulate_line_count(8, example_coupling, 4, horizon=20.0, seed=seed)
            assert path.values.min() >= 1
            assert path.values.max() <= 8

    def test_transition_law_chisquare(self, example_coupling):
        # the first embedded transition out of a pinned state is one exact
        # draw from the jump law there
        N, n0 = 10, 5
        coalesce, branch = line_count_rates(N, example_coupling, n0)
        total = coalesce.sum() + branch
        probs = {n0 - k: coalesce[k] / total for k in range(1, n0)}
        probs[n0 + 1] = branch / total
        horizon = 5.0 / total
        observed: dict[int, int] = {}
        count = 0
        for seed in range(30_000):
            path = simulate_line_count(N, example_coupling, n0, horizon, seed=seed)
            if len(path) > 1:
                first = int(path.values[1])
                observed[first] = observed.get(first, 0) + 1
                count += 1
        assert count > 25_000
        assert merged_chisquare_pvalue(observed, probs, count) > 1e-3

    def test_matches_backward_sweep_distribution(self, example_coupling):
        # ancestor counts from graph traversal vs the standalone chain
        N, n0, T, reps = 10, 4, 1.5, 12_000
        rng = np.random.default_rng(31)
        from_sweeps = np.empty(reps, dtype=int)
        for r in range(reps):
            asg = generate_asg(N, example_coupling, T, rng=rng)
            sample = rng.permutation(N)[:n0]
            from_sweeps[r] = len(potential_ancestors(asg, sample, T, 0.0))
        from_chain = np.array([
            simulate_line_count(N, example_coupling, n0, T, seed=10_000 + r).final
            for r in range(reps)
        ])
        lo, hi = 1, N
        table = np.array([
            np.bincount(from_sweeps, minlength=hi + 1)[lo:],
            np.bincount(from_chain, minlength=hi + 1)[lo:],
        ])
        table = table[:, table.sum(axis=0) > 0]
        assert chi2_contingency(table).pvalue > 1e-3

    def test_transitions_bounded(self, example_coupling):
        for seed in range(20):
            path = simulate_line_count(9, example_coupling, 5, horizon=30.0, seed=seed)
            steps = np.diff(path.values)
            assert steps.max(initial=0) <= 1
            assert steps.min(initial=0) >= -(9 - 1)


class TestConsistency:
    def test_no_violations(self, example_coupling):
        checked, violations = ancestry_consistency_check(
            9, example_coupling, horizon=2.0, replicates=200, seed=12
        )
        assert checked == 1800
        assert violations == 0

    def test_threads_do_not_change_result(self, example_coupling):
        a = ancestry_consistency_check(6, example_coupling, 1.5, 64, seed=13, threads=1)
        b = ancestry_consistency_check(6, example_coupling, 1.5, 64, seed=13, threads=2)
        assert a == b


class TestEventLog:
    def test_round_trip(self, tmp_path, example_coupling):
        asg = generate_asg(7, example_coupling, horizon=8.0, seed=14)
        path = tmp_path / "events.asg"
        write_event_log(asg, str(path))
        back = read_event_log(str(path))
        assert back.N == asg.N
        assert back.horizon == asg.horizon
        assert np.array_equal(back.times, asg.times)
        assert np.array_equal(back.reproducers, asg.reproducers)
        assert np.array_equal(back.ys, asg.ys)
        assert np.array_equal(back.outcomes, asg.outcomes)

    def test_header_layout(self, tmp_path, example_coupling):
        asg = generate_asg(3, example_coupling, horizon=1.0, seed=15)
        path = tmp_path / "events.asg"
        write_event_log(asg, str(path))
        raw = path.read_bytes()
        assert raw[:4] == b"ASG1"
        assert int.from_bytes(raw[4:8], "little") == 3
        assert np.frombuffer(raw[8:16], "<f8")[0] == 1.0
        record = 8 + 4 + 8 + 8 + 3
        assert (len(raw) - 16) % record == 0

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\0" * 32)
        with pytest.raises(ValueError):
            read_event_log(str(path))

    def test_streaming_deterministic(self, tmp_path, example_coupling):
        p1 = tmp_path / "a.asg"
        p2 = tmp_path / "b.asg"
        n1 = stream_asg_to_log(6, example_coupling, 40.0, 16, str(p1), events_per_block=7)
        n2 = stream_asg_to_log(6, example_coupling, 40.0, 16, str(p2), events_per_block=7)
        assert n1 == n2
        assert p1.read_bytes() == p2.read_bytes()
        back = read_event_log(str(p1))
        assert len(back) == n1
        assert np.all(np.diff(back.times) > 0)
