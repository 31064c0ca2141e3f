import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energyshare.env import (
    CENTRALIZED, NO_SHARING, SHARING, ArrivalModel, EnvConfig, NetworkState,
    SensorNetworkEnv, conversion_bits, critical_rate, project_action, reset,
    check_feasible, sample_arrivals, single_stage_cost, step, trim_allocation,
)

from oracles import brute_force_step, poisson_log2_expectation


def one_node(d_max=10, e_max=10.0, mode=SHARING):
    return EnvConfig.from_rates([1.0], [1.0], d_max=d_max, e_max=e_max, mode=mode)


@pytest.mark.parametrize("energy, bits", [(0, 0.0), (1, 1.0), (3, 2.0), (10, math.log2(11))])
def test_conversion_bits_values(energy, bits):
    assert conversion_bits(energy) == pytest.approx(bits, abs=1e-15)


def test_conversion_bits_log2_of_eleven():
    assert conversion_bits(10) == pytest.approx(3.4594, abs=1e-4)


def test_conversion_bits_rejects_negative():
    with pytest.raises(ValueError):
        conversion_bits(-0.1)


@given(st.floats(0, 50), st.floats(0, 50))
def test_conversion_bits_monotone_and_concave(a, b):
    lo, hi = min(a, b), max(a, b)
    assert conversion_bits(lo) <= conversion_bits(hi)
    mid = conversion_bits((a + b) / 2)
    assert mid >= (conversion_bits(a) + conversion_bits(b)) / 2 - 1e-12


class TestProjectAction:
    def state(self, energies=(10.0, 10.0)):
        return NetworkState([0] * len(energies), energies)

    def test_under_budget_row_scales_directly(self):
        alloc = project_action([[0.2, 0.3], [0.0, 0.0]], self.state())
        np.testing.assert_allclose(alloc[0], [2.0, 3.0])

    def test_oversubscribed_row_is_normalized(self):
        alloc = project_action([[0.8, 0.8], [0.0, 0.0]], self.state())
        np.testing.assert_allclose(alloc[0], [5.0, 5.0])

    def test_zero_raw_gives_zero(self):
        assert not project_action(np.zeros((2, 2)), self.state()).any()

    def test_no_sharing_zeroes_off_diagonal(self):
        alloc = project_action([[0.5, 0.9], [0.9, 0.5]], self.state(), NO_SHARING)
        np.testing.assert_allclose(alloc, [[5.0, 0.0], [0.0, 5.0]])

    def test_centralized_uses_pool(self):
        state = NetworkState([0, 0], [20.0])
        alloc = project_action([0.75, 0.75], state, CENTRALIZED)
        np.testing.assert_allclose(alloc, np.diag([10.0, 10.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            project_action(np.zeros((3, 3)), self.state())

    def test_out_of_range_raw(self):
        with pytest.raises(ValueError):
            project_action([[1.5, 0], [0, 0]], self.state())

    @settings(max_examples=200)
    @given(st.integers(1, 4).flatmap(lambda n: st.tuples(
        st.lists(st.lists(st.floats(0, 1), min_size=n, max_size=n), min_size=n, max_size=n),
        st.lists(st.floats(0, 10), min_size=n, max_size=n))))
    def test_row_sums_within_energy(self, case):
        raw, energies = case
        state = NetworkState([0] * len(energies), energies)
        alloc = project_action(raw, state)
        assert np.all(alloc >= 0)
        assert np.all(alloc.sum(axis=1) <= np.asarray(energies))

    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.floats(0.1, 10))
    def test_idempotent_on_normalized_input(self, raw, energy):
        raw = np.reshape(raw, (2, 2))
        raw = raw / max(1.0, raw.sum(axis=1).max())
        state = NetworkState([0, 0], [energy, energy])
        alloc = project_action(raw, state)
        again = project_action(alloc / energy, state)
        np.testing.assert_allclose(again, alloc, rtol=1e-12, atol=1e-12)


class TestStep:
    def test_single_node_hand_computed(self):
        config = one_node()
        nxt, cost, stats = step(config, NetworkState([5], [6.0]), [[3.0]], ([2], [1.0]))
        assert nxt.queues.tolist() == [5]
        assert nxt.energies.tolist() == [4.0]
        assert cost == 9.0
        assert stats.packets_transmitted == 2
        assert stats.packets_dropped == 0

    def test_queue_overflow_drops_arrivals(self):
        config = one_node()
        nxt, cost, stats = step(config, NetworkState([9], [5.0]), [[3.0]], ([5], [0.0]))
        assert stats.post_action_queues.tolist() == [7]
        assert nxt.queues.tolist() == [10]
        assert stats.packets_dropped == 2

    def test_zero_action_zero_arrivals(self):
        config = EnvConfig.from_rates([1, 1], [1, 1])
        state = NetworkState([3, 4], [2.5, 7.0])
        nxt, cost, _ = step(config, state, np.zeros((2, 2)), ([0, 0], [0.0, 0.0]))
        assert nxt == state
        assert cost == 25.0

    def test_shared_energy_is_spent_by_receiver(self):
        config = EnvConfig.from_rates([1, 1], [1, 1])
        state = NetworkState([0, 5], [10.0, 0.0])
        nxt, _, stats = step(config, state, [[0.0, 7.0], [0.0, 0.0]], ([0, 0], [0.0, 0.0]))
        assert stats.transmitted.tolist() == [0, 3]
        assert nxt.energies.tolist() == [3.0, 0.0]

    def test_energy_overflow_is_wasted(self):
        config = one_node()
        nxt, _, stats = step(config, NetworkState([0], [9.0]), [[0.0]], ([0], [4.0]))
        assert nxt.energies.tolist() == [10.0]
        assert stats.energy_wasted == 3.0

    def test_infeasible_action_rejected(self):
        with pytest.raises(ValueError, match="project"):
            step(one_node(), NetworkState([0], [1.0]), [[2.0]], ([0], [0.0]))

    def test_centralized_pool(self):
        config = EnvConfig.from_rates([1, 1], [5, 5], mode=CENTRALIZED)
        state = NetworkState([4, 4], [12.0])
        nxt, cost, stats = step(config, state, np.diag([7.0, 3.0]), ([1, 0], [6.0, 4.0]))
        assert stats.transmitted.tolist() == [3, 2]
        assert nxt.energies.tolist() == [12.0]
        assert nxt.queues.tolist() == [2, 2]
        assert cost == 1 + 4

    def test_centralized_pool_capacity(self):
        config = EnvConfig.from_rates([1, 1], [5, 5], mode=CENTRALIZED)
        assert config.energy_capacity == 20.0
        nxt, _, stats = step(config, NetworkState([0, 0], [18.0]), np.zeros((2, 2)),
                             ([0, 0], [3.0, 2.0]))
        assert nxt.energies.tolist() == [20.0]
        assert stats.energy_wasted == 3.0

    def test_no_sharing_rejects_transfers(self):
        config = EnvConfig.from_rates([1, 1], [5, 5], mode=NO_SHARING)
        with pytest.raises(ValueError):
            step(config, NetworkState([0, 0], [5.0, 5.0]), [[1.0, 1.0], [0, 0]],
                 ([0, 0], [0.0, 0.0]))


def random_feasible(rng, config, state):
    n = config.n_nodes
    raw = rng.uniform(0, 1, (n, n)) * (rng.random((n, n)) < 0.7)
    return project_action(raw, state, config.mode)


class TestTrimAllocation:
    @pytest.mark.parametrize("queue, energy, kept", [(10, 5.0, 3.0), (10, 7.5, 7.0), (1, 5.0, 1.0),
                                                      (0, 5.0, 0.0), (10, 0.5, 0.0), (10, 3.0, 3.0)])
    def test_single_node(self, queue, energy, kept):
        state = NetworkState([queue], [10.0])
        assert trim_allocation([[energy]], state)[0, 0] == kept

    def test_shared_column_scaled_proportionally(self):
        state = NetworkState([0, 10], [4.0, 4.0])
        out = trim_allocation([[0.0, 2.0], [0.0, 3.0]], state)
        assert out[:, 1] == pytest.approx([1.2, 1.8], abs=1e-12)
        assert out[:, 1].sum() >= 3.0

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 2**32 - 1),
           st.sampled_from([SHARING, NO_SHARING, CENTRALIZED]))
    def test_same_packets_less_energy(self, n, seed, mode):
        rng = np.random.default_rng(seed)
        config = EnvConfig.from_rates([1.0] * n, [5.0] * n, mode=mode)
        state = reset(config, rng, random_start=True)
        alloc = random_feasible(rng, config, state)
        trimmed = trim_allocation(alloc, state)
        check_feasible(config, state, trimmed)
        assert np.all(trimmed <= alloc)
        arrivals = sample_arrivals(config.arrivals, rng)
        before, _, s1 = step(config, state, alloc, arrivals)
        after, _, s2 = step(config, state, trimmed, arrivals)
        assert np.array_equal(s1.transmitted, s2.transmitted)
        assert np.array_equal(before.queues, after.queues)
        assert np.all(after.energies >= before.energies)


@pytest.mark.parametrize("mode", [SHARING, NO_SHARING, CENTRALIZED])
def test_matches_brute_force(mode):
    rng = np.random.default_rng(7)
    for trial in range(600):
        n = int(rng.integers(1, 4))
        config = EnvConfig.from_rates(rng.uniform(0, 5, n), rng.uniform(0, 8, n), mode=mode)
        state = reset(config, rng, random_start=True)
        alloc = random_feasible(rng, config, state)
        x, y = sample_arrivals(config.arrivals, rng)
        nxt, cost, stats = step(config, state, alloc, (x, y))
        q, e, c, dropped, wasted = brute_force_step(
            n, config.d_max, config.e_max, mode == CENTRALIZED, state.queues.tolist(),
            state.energies.tolist(), alloc.tolist(), x.tolist(), y.tolist())
        assert nxt.queues.tolist() == q
        assert nxt.energies.tolist() == e
        assert cost == c
        assert stats.dropped.tolist() == dropped
        assert stats.wasted.tolist() == wasted


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1),
       st.sampled_from([SHARING, NO_SHARING, CENTRALIZED]))
def test_invariants_and_accounting(n, seed, mode):
    rng = np.random.default_rng(seed)
    config = EnvConfig.from_rates(rng.uniform(0, 6, n), rng.uniform(0, 9, n), d_max=8,
                                  e_max=6.0, mode=mode)
    env = SensorNetworkEnv(config, seed=seed)
    state = env.reset()
    start = state.queues.sum()
    arrived = transmitted = dropped = 0
    for _ in range(100):
        alloc = random_feasible(rng, config, state)
        spent = np.array([alloc.sum()]) if mode == CENTRALIZED else alloc.sum(axis=1)
        before = state.copy()
        state, cost, stats = env.step(alloc)
        config.check_state(state)
        assert cost >= 0
        if mode == NO_SHARING:
            assert not alloc[~np.eye(n, dtype=bool)].any()
        arrived += stats.arrived.sum()
        transmitted += stats.packets_transmitted
        dropped += stats.packets_dropped
        np.testing.assert_allclose(state.energies + spent + stats.wasted,
                                   before.energies + stats.harvested, atol=1e-9)
    assert arrived == transmitted + dropped + (state.queues.sum() - start)


def test_energy_accounting_with_known_arrivals():
    rng = np.random.default_rng(3)
    config = EnvConfig.from_rates([2, 2, 2], [5, 5, 5])
    state = reset(config, rng, random_start=True)
    for _ in range(2000):
        alloc = random_feasible(rng, config, state)
        x, y = sample_arrivals(config.arrivals, rng)
        nxt, _, stats = step(config, state, alloc, (x, y))
        np.testing.assert_allclose(nxt.energies + alloc.sum(axis=1) + stats.wasted,
                                   state.energies + y, atol=1e-9)
        state = nxt


class TestArrivals:
    def test_zero_rate(self):
        model = ArrivalModel((0.0, 0.0), (0.0, 0.0))
        rng = np.random.default_rng(0)
        for _ in range(100):
            x, y = sample_arrivals(model, rng)
            assert not x.any() and not y.any()

    def test_empirical_mean(self):
        model = ArrivalModel((2.0,), (5.0,))
        rng = np.random.default_rng(11)
        xs = np.array([sample_arrivals(model, rng)[0][0] for _ in range(100_000)])
        # 3 sigma of the sample mean is 3 * sqrt(2 / 1e5) ~ 0.013
        assert abs(xs.mean() - 2.0) < 0.05

    def test_deterministic_given_seed(self):
        model = ArrivalModel((1.5, 3.0), (5.0, 2.0))
        r1, r2 = np.random.default_rng(42), np.random.default_rng(42)
        for _ in range(50):
            x1, y1 = sample_arrivals(model, r1)
            x2, y2 = sample_arrivals(model, r2)
            assert x1.tolist() == x2.tolist() and y1.tolist() == y2.tolist()

    def test_data_and_energy_are_independent(self):
        model = ArrivalModel((3.0,), (3.0,))
        rng = np.random.default_rng(1)
        draws = np.array([np.concatenate(sample_arrivals(model, rng)) for _ in range(20_000)])
        assert abs(np.corrcoef(draws.T)[0, 1]) < 0.03

    def test_stub_kinds(self):
        det = ArrivalModel((2.0,), (4.0,), kind="deterministic")
        x, y = sample_arrivals(det, np.random.default_rng(0))
        assert x.tolist() == [2] and y.tolist() == [4.0]
        emp = ArrivalModel((1.0,), (1.0,), kind="empirical", empirical_data=[[0, 2]],
                           empirical_energy=[[1.0, 3.0]])
        x, y = sample_arrivals(emp, np.random.default_rng(0))
        assert x[0] in (0, 2) and y[0] in (1.0, 3.0)

    def test_rejects_negative_rate(self):
        with pytest.raises(ValueError):
            ArrivalModel((-1.0,), (1.0,))


@pytest.mark.parametrize("queues, cost", [((0, 0), 0.0), ((3, 4), 25.0), ((5, 0), 25.0),
                                          ((3, 2), 13.0)])
def test_single_stage_cost(queues, cost):
    assert single_stage_cost(queues) == cost


class TestCriticalRate:
    def test_two_nodes_rate_five(self):
        config = EnvConfig.from_rates([1, 1], [5, 5])
        assert critical_rate(config) == pytest.approx(3.395, abs=0.005)

    def test_matches_scipy_pmf_sum(self):
        for total in (0.5, 3.0, 10.0, 25.0, 60.0):
            config = EnvConfig.from_rates([1], [total])
            assert critical_rate(config) == pytest.approx(poisson_log2_expectation(total),
                                                          abs=1e-10)

    def test_deterministic_energy_is_jensen_equality(self):
        arrivals = ArrivalModel((1.0, 1.0), (5.0, 5.0), kind="deterministic")
        config = EnvConfig(n_nodes=2, arrivals=arrivals)
        assert critical_rate(config) == conversion_bits(10.0)

    def test_zero_energy(self):
        assert critical_rate(EnvConfig.from_rates([1, 1], [0, 0])) == 0.0

    @given(st.lists(st.floats(0, 30), min_size=1, max_size=5))
    def test_jensen_upper_bound(self, rates):
        config = EnvConfig.from_rates([0.0] * len(rates), rates)
        assert critical_rate(config) <= conversion_bits(sum(rates)) + 1e-12

    def test_empirical_pooled_distribution(self):
        arrivals = ArrivalModel((1.0, 1.0), (1.0, 1.0), kind="empirical",
                                empirical_data=[[0], [0]],
                                empirical_energy=[[0.0, 2.0], [1.0]])
        config = EnvConfig(n_nodes=2, arrivals=arrivals)
        assert critical_rate(config) == pytest.approx(0.5 * math.log2(2) + 0.5 * math.log2(4))

    def test_large_mean_does_not_underflow(self):
        config = EnvConfig.from_rates([1], [800.0])
        assert critical_rate(config) == pytest.approx(poisson_log2_expectation(800.0, 2000),
                                                      abs=1e-9)


class TestReset:
    def test_empty_start(self):
        state = reset(EnvConfig.from_rates([1, 1], [5, 5]))
        assert state.queues.tolist() == [0, 0]
        assert state.energies.tolist() == [0.0, 0.0]

    def test_random_start_within_bounds_and_seeded(self):
        config = EnvConfig.from_rates([1, 1, 1], [5, 5, 5], random_start=True)
        a = reset(config, np.random.default_rng(9))
        b = reset(config, np.random.default_rng(9))
        assert a == b
        config.check_state(a)

    def test_centralized_has_one_buffer(self):
        state = reset(EnvConfig.from_rates([1, 1], [5, 5], mode=CENTRALIZED))
        assert state.energies.shape == (1,)


def test_fixed_seed_gives_identical_trajectory():
    config = EnvConfig.from_rates([1.0, 3.0], [5.0, 5.0], seed=123)

    def run():
        env = SensorNetworkEnv(config)
        state = env.reset()
        out = []
        for _ in range(300):
            alloc = project_action(np.full((2, 2), 0.3), state)
            state, cost, _ = env.step(alloc)
            out.append((state.queues.tobytes(), state.energies.tobytes(), cost))
        return out

    assert run() == run()


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig.from_rates([1], [1], d_max=0)
    with pytest.raises(ValueError):
        EnvConfig.from_rates([1], [1], e_max=0.0)
    with pytest.raises(ValueError):
        EnvConfig.from_rates([1], [1], mode="bogus")
    with pytest.raises(ValueError):
        EnvConfig(n_nodes=3, arrivals=ArrivalModel((1.0,), (1.0,)))
