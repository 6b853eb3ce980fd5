"""State operations, audit, and the marginal law against enumeration oracles."""

import numpy as np
import pytest

from crmhaz.data import HCRMParams
from crmhaz.kernels import DykstraLaud, KernelAggregate, OrnsteinUhlenbeck, Rectangular
from crmhaz.partition import (
    ExistingTable,
    LatentState,
    NewCluster,
    NewTable,
    audit_state,
    base_measure_grid,
    base_measure_integral,
    log_marginal,
)

from oracles import (
    build_state,
    nested_configs,
    oracle_joint_density,
    production_joint_density,
    set_partitions,
)


def _signature(state):
    """Isomorphism-invariant of a state: per-cluster location and table layout."""
    sig = []
    for j in range(state.k):
        tabs = []
        for d in range(state.D):
            ids = state.tables_of(j, d)
            tabs.append(tuple(sorted(int(state.tab_q[t]) for t in ids)))
        sig.append((round(float(state.clu_loc[j]), 12), tuple(tabs)))
    return tuple(sorted(sig))


class TestStateOps:
    def test_new_cluster(self):
        s = LatentState(3, 2, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        assert s.k == 1 and s.m == 1
        assert s.clu_n[0] == 1 and s.clu_r[0] == 1 and s.tab_q[0] == 1
        assert s.clu_nd[0, 0] == 1 and s.clu_rd[0, 0] == 1

    def test_existing_table_grows(self):
        s = LatentState(3, 2, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        s.insert_observation(1, 1, ExistingTable(0, 0, 0))
        assert s.tab_q[0] == 2 and s.clu_r[0] == 1 and s.clu_n[0] == 2

    def test_new_table_grows_r(self):
        s = LatentState(3, 2, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        s.insert_observation(1, 2, NewTable(0))
        assert s.k == 1 and s.m == 2
        assert s.clu_r[0] == 2 and s.clu_n[0] == 2
        assert s.clu_rd[0, 1] == 1 and s.clu_nd[0, 1] == 1

    def test_remove_from_shared_table(self):
        s = LatentState(3, 1, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        s.insert_observation(1, 1, ExistingTable(0, 0, 0))
        s.remove_observation(1)
        assert s.tab_q[0] == 1 and s.clu_r[0] == 1 and s.clu_n[0] == 1
        assert s.obs_cluster[1] == -1

    def test_remove_last_member_deletes_cluster(self):
        s = LatentState(2, 1, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        s.insert_observation(1, 1, NewCluster(2.0))
        s.remove_observation(0)
        assert s.k == 1 and s.m == 1
        assert s.clu_loc[0] == 2.0
        # indices compacted: observation 1 now points at slot 0
        assert s.obs_cluster[1] == 0 and s.obs_table[1] == 0

    def test_single_obs_round_to_empty(self):
        s = LatentState(1, 1, 5.0)
        s.insert_observation(0, 1, NewCluster(0.5))
        s.remove_observation(0)
        assert s.k == 0 and s.m == 0

    def test_cause_mismatch_rejected(self):
        s = LatentState(2, 2, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        with pytest.raises(ValueError, match="cause"):
            s.insert_observation(1, 2, ExistingTable(0, 0, 0))

    def test_remove_unassigned_rejected(self):
        s = LatentState(2, 1, 5.0)
        with pytest.raises(ValueError, match="not assigned"):
            s.remove_observation(0)

    def test_location_window_enforced(self):
        s = LatentState(1, 1, 2.0)
        with pytest.raises(ValueError, match="outside"):
            s.insert_observation(0, 1, NewCluster(2.5))

    def _random_state(self, rng, n=12, D=3, t_max=4.0):
        causes = rng.integers(1, D + 1, size=n)
        s = LatentState(n, D, t_max)
        for i in range(n):
            d = int(causes[i]) - 1
            opts = ["new_cluster"]
            if s.k > 0:
                opts.append("new_table")
                for j in range(s.k):
                    for h in range(len(s.tables_of(j, d))):
                        opts.append((j, d, h))
            pick = opts[rng.integers(len(opts))]
            if pick == "new_cluster":
                s.insert_observation(i, d + 1, NewCluster(rng.uniform(0.1, t_max)))
            elif pick == "new_table":
                s.insert_observation(i, d + 1, NewTable(int(rng.integers(s.k))))
            else:
                s.insert_observation(i, d + 1, ExistingTable(*pick))
        return s, causes

    def test_randomized_remove_insert_round_trip(self):
        rng = np.random.default_rng(2024)
        for _ in range(25):
            s, causes = self._random_state(rng)
            before = _signature(s)
            i = int(rng.integers(s.n_obs))
            j = int(s.obs_cluster[i])
            t = int(s.obs_table[i])
            d = int(s.tab_cause[t])
            loc = float(s.clu_loc[j])
            table_ids = list(s.tables_of(j, d))
            h = table_ids.index(t)
            table_survives = s.tab_q[t] > 1
            cluster_survives = s.clu_n[j] > 1
            s.remove_observation(i)
            if table_survives:
                s.insert_observation(i, d + 1, ExistingTable(j, d, h))
                assert _signature(s) == before
            elif cluster_survives:
                s.insert_observation(i, d + 1, NewTable(j))
                assert _signature(s) == before
            else:
                s.insert_observation(i, d + 1, NewCluster(loc))
                assert _signature(s) == before

    def test_audit_random_states(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            s, causes = self._random_state(rng)
            times = np.full(s.n_obs, 10.0)  # all kernels positive at any location
            audit_state(s, times, causes, DykstraLaud(1.0))

    def test_audit_catches_corruption(self):
        s = LatentState(2, 1, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        s.insert_observation(1, 1, ExistingTable(0, 0, 0))
        s.tab_q[0] = 3
        with pytest.raises(ValueError, match="table sizes"):
            audit_state(s, [2.0, 2.0], [1, 1], DykstraLaud(1.0))

    def test_audit_rejects_censored_in_partition(self):
        s = LatentState(2, 1, 5.0)
        s.insert_observation(0, 1, NewCluster(1.0))
        s.insert_observation(1, 1, ExistingTable(0, 0, 0))
        with pytest.raises(ValueError, match="censored"):
            audit_state(s, [2.0, 2.0], [1, 0], DykstraLaud(1.0))


class TestSerialization:
    def test_json_round_trip(self):
        rng = np.random.default_rng(15)
        ops = TestStateOps()
        for _ in range(5):
            s, causes = ops._random_state(rng)
            back = LatentState.from_json(s.to_json())
            assert _signature(back) == _signature(s)
            np.testing.assert_array_equal(back.obs_cluster, s.obs_cluster)
            np.testing.assert_array_equal(back.obs_table, s.obs_table)
            np.testing.assert_array_equal(back.clu_nd[: back.k], s.clu_nd[: s.k])
            times = np.full(s.n_obs, 10.0)
            audit_state(back, times, causes, DykstraLaud(1.0))


class TestBaseIntegral:
    def test_no_data_is_zero(self):
        agg = KernelAggregate(DykstraLaud(1.0), [])
        assert base_measure_integral(agg, HCRMParams(), 2, 3.0) == 0.0

    def test_window_extension_adds_nothing(self):
        times = [0.7, 1.1]
        agg = KernelAggregate(DykstraLaud(1.3), times)
        params = HCRMParams(theta=0.9)
        i1 = base_measure_integral(agg, params, 2, 1.1)
        i2 = base_measure_integral(agg, params, 2, 2.2)
        # integrand vanishes beyond the largest time, so only quadrature
        # node placement distinguishes the two values
        assert i2 == pytest.approx(i1, abs=2e-7)
        grid = base_measure_grid(agg, 2.2, 512)
        beyond = grid[grid >= 1.1]
        assert np.all(agg.exposure(beyond) == 0.0)


class TestLogMarginal:
    def test_single_observation_hand_form(self):
        gamma, theta = 1.4, 0.8
        sigma, beta, sigma0, beta0 = 0.25, 1.2, 0.4, 0.7
        t_obs, t_max, x_star = 0.9, 0.9, 0.45
        agg = KernelAggregate(DykstraLaud(gamma), [t_obs])
        params = HCRMParams(sigma=sigma, sigma0=sigma0, beta=beta, beta0=beta0, theta=theta)
        s = LatentState(1, 1, t_max)
        s.insert_observation(0, 1, NewCluster(x_star))
        got = log_marginal(s, agg, params)

        def psi(u):
            return ((beta + u) ** sigma - beta**sigma) / sigma

        def psi0(u):
            return ((beta0 + u) ** sigma0 - beta0**sigma0) / sigma0

        # same trapezoid rule, rebuilt from scratch
        grid = np.unique(np.concatenate([np.linspace(0.0, t_max, 4096), [t_obs]]))
        kn = gamma * np.maximum(t_obs - grid, 0.0)
        integral = np.trapezoid(psi0(psi(kn)), grid)
        k_star = gamma * (t_obs - x_star)
        want = (
            np.log(gamma)
            + np.log(theta)
            - theta * integral
            + (sigma - 1.0) * np.log(beta + k_star)
            + (sigma0 - 1.0) * np.log(beta0 + psi(k_star))
        )
        assert got == pytest.approx(want, rel=1e-12)

    def test_support_violation_is_minus_inf(self):
        agg = KernelAggregate(DykstraLaud(1.0), [1.0])
        s = LatentState(1, 1, 2.0)
        s.insert_observation(0, 1, NewCluster(1.5))
        assert log_marginal(s, agg, HCRMParams()) == -np.inf

    def test_independent_single_observation(self):
        gamma, theta, sigma, beta = 1.1, 0.6, 0.3, 0.8
        t_obs = 1.2
        agg = KernelAggregate(DykstraLaud(gamma), [t_obs])
        params = HCRMParams(
            sigma=sigma, beta=beta, theta=theta, independent_mode=True
        )
        s = LatentState(1, 2, t_obs)
        s.insert_observation(0, 1, NewCluster(0.3))
        got = log_marginal(s, agg, params)

        def psi(u):
            return ((beta + u) ** sigma - beta**sigma) / sigma

        grid = np.unique(np.concatenate([np.linspace(0.0, t_obs, 4096), [t_obs]]))
        kn = gamma * np.maximum(t_obs - grid, 0.0)
        integral = np.trapezoid(2.0 * psi(kn), grid)
        k_star = gamma * (t_obs - 0.3)
        want = (
            np.log(gamma)
            + np.log(theta)
            - theta * integral
            + (sigma - 1.0) * np.log(beta + k_star)
        )
        assert got == pytest.approx(want, rel=1e-12)


class TestEnumeration:
    def test_set_partition_counts(self):
        # Bell numbers 1, 1, 2, 5, 15
        for n, bell in [(0, 1), (1, 1), (2, 2), (3, 5), (4, 15)]:
            assert sum(1 for _ in set_partitions(range(n))) == bell

    def test_nested_config_counts(self):
        # two same-cause observations: same table, two tables, two clusters
        assert sum(1 for _ in nested_configs([0, 1], {0: 1, 1: 1})) == 3
        # different causes cannot share a table
        assert sum(1 for _ in nested_configs([0, 1], {0: 1, 1: 2})) == 2
        # three same-cause: 5 table layouts in one cluster, 3 splits x 2, singleton
        assert sum(1 for _ in nested_configs([0, 1, 2], {0: 1, 1: 1, 2: 1})) == 12

    def test_build_state_matches_config(self):
        config = [([0, 2], [(1, [0, 2])]), ([1], [(2, [1])])]
        s = build_state(3, 2, 5.0, config, [1.0, 2.0])
        assert s.k == 2 and s.m == 2
        assert s.tab_q[0] == 2 and s.clu_nd[0, 0] == 2
        assert s.clu_nd[1, 1] == 1
        audit_state(s, [3.0, 4.0, 3.5], [1, 2, 1], DykstraLaud(1.0))


class TestJointDensityOracle:
    """Production marginal law vs independent transcription, small n."""

    PARAMS = HCRMParams(sigma=0.25, sigma0=0.4, beta=1.1, beta0=0.8, theta=0.7)

    def _compare(self, spec, times, causes, params, D, t_max, rtol=1e-6):
        cox = np.ones(len(times))
        want = oracle_joint_density(spec, times, causes, cox, params, D, t_max)
        got = production_joint_density(spec, times, causes, cox, params, D, t_max)
        assert got == pytest.approx(want, rel=rtol)

    def test_two_obs_same_cause(self):
        self._compare(DykstraLaud(0.9), [0.8, 1.5], [1, 1], self.PARAMS, 2, 1.5)

    def test_two_obs_different_causes(self):
        self._compare(DykstraLaud(0.9), [0.8, 1.5], [1, 2], self.PARAMS, 2, 1.5)

    def test_three_obs_with_censoring(self):
        self._compare(
            DykstraLaud(0.7), [0.6, 1.0, 1.4, 0.9], [1, 2, 1, 0], self.PARAMS, 2, 1.4
        )

    def test_two_obs_window_kernel(self):
        # bandwidth below the gap: the shared-cluster configs are infeasible
        spec = Rectangular(gamma=1.2, bandwidth=0.5)
        self._compare(spec, [0.8, 1.5], [1, 1], self.PARAMS, 2, 1.5)

    def test_two_obs_decay_kernel(self):
        self._compare(OrnsteinUhlenbeck(1.8), [0.8, 1.5], [1, 1], self.PARAMS, 2, 1.5)

    def test_independent_mode(self):
        params = HCRMParams(
            sigma=0.25, beta=1.1, theta=0.7, independent_mode=True
        )
        self._compare(DykstraLaud(0.9), [0.8, 1.5], [1, 1], params, 2, 1.5)
        self._compare(DykstraLaud(0.9), [0.8, 1.5], [1, 2], params, 2, 1.5)
