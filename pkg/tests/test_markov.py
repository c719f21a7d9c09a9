import numpy as np
import pytest

from sharedlane.markov import (EstimationError, HiddenRates, JointGenerator, ObservationParams, build_joint_generator,
                               mle_rates, mle_rates_from_paths, sample_coupled_paths, sample_path, td_mode_labeling)
from sharedlane.metrics import path_observation_quality
from sharedlane.models import TaskDifficultyParams


def stationary(nu):
    """Left null vector of a generator, normalised (independent of the package code)."""
    n = nu.shape[0]
    M = np.vstack([nu.T, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


class TestHiddenRates:
    def test_row_sums_validated(self):
        with pytest.raises(ValueError):
            HiddenRates(np.array([[-0.1, 0.2], [0.1, -0.1]]))
        with pytest.raises(ValueError):
            HiddenRates(np.array([[0.1, -0.1], [0.1, -0.1]]))

    def test_stationary(self, rates):
        assert rates.stationary()[0] == pytest.approx(0.1117 / 0.1571)


class TestJointGenerator:
    def test_hand_expanded_entry(self, gen):
        assert gen.nu[gen.index(1, 1), gen.index(2, 2)] == pytest.approx(0.95 * 0.0454, abs=1e-15)
        assert gen.nu[gen.index(1, 1), gen.index(2, 2)] == pytest.approx(0.043130, abs=1e-9)
        assert gen.nu[gen.index(1, 1), gen.index(2, 1)] == pytest.approx(0.05 * 0.0454)
        assert gen.nu[gen.index(1, 1), gen.index(1, 2)] == pytest.approx(0.02)
        assert gen.nu[gen.index(1, 1), gen.index(1, 1)] == pytest.approx(-0.0454 - 0.02)

    def test_index_map(self, gen):
        for idx, (i, k) in enumerate(gen.states):
            assert gen.index(i, k) == idx
            assert gen.state(idx) == (i, k)
        assert gen.states[0] == (1, 1) and gen.states[1] == (1, 2)

    @pytest.mark.parametrize("alpha,q", [(0.05, 0.02), (0.0, 0.0), (0.3, 0.3), (1.0, 5.0)])
    def test_generator_properties(self, rates, alpha, q):
        g = build_joint_generator(rates, ObservationParams(alpha, q))
        assert np.abs(g.nu.sum(axis=1)).max() <= 1e-12
        off = g.nu - np.diag(np.diag(g.nu))
        assert off.min() >= 0
        # alpha-marginalisation recovers the hidden rates exactly
        for i in (1, 2):
            for k in (1, 2):
                for j in (1, 2):
                    if j != i:
                        total = sum(g.nu[g.index(i, k), g.index(j, l)] for l in (1, 2))
                        assert total == rates.lam[i - 1, j - 1]

    def test_perfect_observation_reduces_to_hidden_chain(self, rates):
        g = build_joint_generator(rates, ObservationParams(0.0, 0.0))
        a, b = g.index(1, 1), g.index(2, 2)
        assert g.nu[a, b] == rates.lam[0, 1] and g.nu[b, a] == rates.lam[1, 0]
        assert g.nu[a, g.index(1, 2)] == 0 and g.nu[a, g.index(2, 1)] == 0
        assert g.neighbors(a) == [b]

    def test_neighbor_support(self, gen):
        for idx in range(4):
            assert len(gen.neighbors(idx)) == 3

    def test_general_tables(self, rates):
        A = np.zeros((2, 2, 2))
        A[:, :, :] = [[1.0, 0.0], [0.0, 1.0]]
        Q = np.array([[[-0.1, 0.1], [0.3, -0.3]], [[-0.2, 0.2], [0.0, 0.0]]])
        g = build_joint_generator(rates, ObservationParams(alpha_table=A, q_table=Q))
        assert g.nu[g.index(1, 2), g.index(1, 1)] == 0.3
        assert np.abs(g.nu.sum(axis=1)).max() <= 1e-12

    @pytest.mark.parametrize("alpha,q", [(-0.1, 0.0), (1.1, 0.0), (0.1, -1.0)])
    def test_invalid_observation_params(self, alpha, q):
        with pytest.raises(ValueError):
            ObservationParams(alpha, q)


class TestSamplePath:
    def test_absorbing(self, rates):
        g = JointGenerator(np.zeros((4, 4)), 2, 2)
        p = sample_path(g, (1, 1), 50.0, seed=1)
        assert list(p.times) == [0.0] and list(p.states) == [0]

    def test_deterministic(self, gen):
        a = sample_path(gen, (1, 1), 500.0, seed=7)
        b = sample_path(gen, (1, 1), 500.0, seed=7)
        assert np.array_equal(a.times, b.times) and np.array_equal(a.states, b.states)
        assert a.times.tobytes() == b.times.tobytes()

    def test_structure(self, gen):
        p = sample_path(gen, (2, 1), 1000.0, seed=3)
        assert p.times[0] == 0.0 and p.states[0] == gen.index(2, 1)
        assert np.all(np.diff(p.times) > 0) and p.times[-1] < p.horizon
        assert p.at(0.0) == gen.index(2, 1)

    def test_stationary_fraction(self, gen, rates):
        p = sample_path(gen, (1, 1), 1e5, seed=11)
        ends = np.append(p.times[1:], p.horizon)
        frac = (ends - p.times)[p.hidden() == 1].sum() / p.horizon
        assert frac == pytest.approx(0.1117 / 0.1571, abs=0.01)

    def test_mean_holding_times(self, gen):
        p = sample_path(gen, (1, 1), 2e5, seed=5)
        ends = np.append(p.times[1:], p.horizon)
        dwell = (ends - p.times)[:-1]
        for z in range(4):
            d = dwell[p.states[:-1] == z]
            mean, se = d.mean(), d.std(ddof=1) / np.sqrt(len(d))
            assert abs(mean - 1 / -gen.nu[z, z]) <= 3 * se + 1e-12

    def test_horizon_validation(self, gen):
        with pytest.raises(ValueError):
            sample_path(gen, (1, 1), 0.0)


class TestCoupledPaths:
    def test_marginal_law_matches_generator(self, rates):
        obs = [ObservationParams(0.05, 0.02), ObservationParams(0.3, 0.3)]
        paths = sample_coupled_paths(rates, obs, (1, 1), 2e5, seed=2)
        for o, p in zip(obs, paths):
            pi = stationary(build_joint_generator(rates, o).nu)
            ends = np.append(p.times[1:], p.horizon)
            occ = np.array([(ends - p.times)[p.states == z].sum() for z in range(4)]) / p.horizon
            np.testing.assert_allclose(occ, pi, atol=0.02)

    def test_shared_hidden_path(self, rates):
        a, b = sample_coupled_paths(rates, [ObservationParams(0.0, 0.0), ObservationParams(0.2, 0.1)], (1, 1), 1e4, 4)
        t = np.linspace(0, 1e4, 5001)[:-1]
        np.testing.assert_array_equal(a.at(t) // 2, b.at(t) // 2)

    def test_perfect_observation(self, rates):
        (p,) = sample_coupled_paths(rates, [ObservationParams(0.0, 0.0)], (1, 1), 1e4, seed=0)
        assert path_observation_quality(p) == (1.0, 0.0)

    def test_rejects_tables(self, rates):
        with pytest.raises(ValueError):
            sample_coupled_paths(rates, [ObservationParams(q_table=np.zeros((2, 2, 2)))], (1, 1), 10.0)


class TestMle:
    def test_hand_example(self):
        # 10 s in mode 1, 5 s in mode 2, 5 s in mode 1, sampled at 1 Hz
        labels = [1] * 10 + [2] * 5 + [1] * 5
        est = mle_rates([(np.arange(20.0), labels)])
        assert est.lam[0, 1] == pytest.approx(1 / 15)
        assert est.lam[1, 0] == pytest.approx(1 / 5)

    def test_unvisited_mode(self):
        with pytest.raises(EstimationError, match="mode 2"):
            mle_rates([(np.arange(10.0), [1] * 10)])

    def test_empty(self):
        with pytest.raises(EstimationError):
            mle_rates([])

    def test_pooling(self):
        seqs = [(np.arange(10.0), [1] * 5 + [2] * 5), (np.arange(10.0), [2] * 5 + [1] * 5)]
        est = mle_rates(seqs)
        assert est.lam[0, 1] == pytest.approx(1 / 10) and est.lam[1, 0] == pytest.approx(1 / 10)

    def test_recovery_from_paths(self, gen, rates):
        paths = [sample_path(gen, (1, 1), 1e3, seed=s) for s in range(10)]
        est = mle_rates_from_paths(paths)
        assert est.lam[0, 1] == pytest.approx(rates.lam[0, 1], rel=0.10)
        assert est.lam[1, 0] == pytest.approx(rates.lam[1, 0], rel=0.10)

    def test_recovery_from_sampled_labels(self, gen, rates):
        p = sample_path(gen, (1, 1), 1e4, seed=21)
        t = np.arange(0, 1e4, 0.1)
        est = mle_rates([(t, (p.at(t) // 2) + 1)])
        assert est.lam[0, 1] == pytest.approx(rates.lam[0, 1], rel=0.10)
        assert est.lam[1, 0] == pytest.approx(rates.lam[1, 0], rel=0.10)


class TestTdLabeling:
    def test_large_gap_mode1(self, td_params):
        assert np.all(td_mode_labeling(np.full(20, 8.0), np.full(20, 60.0), td_params) == 1)

    def test_flip_at_threshold_crossing(self, td_params):
        s_thr = 20 * 1.09 / 0.7
        s = np.linspace(40, 20, 201)
        lab = td_mode_labeling(np.full_like(s, 20.0), s, td_params)
        first = np.flatnonzero(lab == 2)[0]
        assert s[first] <= s_thr < s[first - 1]
        assert np.all(lab[:first] == 1) and np.all(lab[first:] == 2)

    def test_empty(self, td_params):
        with pytest.raises(ValueError):
            td_mode_labeling([], [], td_params)
