"""Measure draws: truncation algebra, jump inversion, moments, induced curves."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gammaln

from crmhaz.data import ConfigError, HCRMParams, NumericError
from crmhaz.kernels import (
    DykstraLaud,
    KernelAggregate,
    OrnsteinUhlenbeck,
    kernel_primitive,
)
from crmhaz.levy import GenGammaMeasure, gammainc_upper, laplace_exponent, log_gammainc_upper
from crmhaz.measures import (
    AtomicMeasure,
    TruncationPolicy,
    _arrival_times,
    _discard_bound,
    _solve_jumps,
    functional_draw,
    root_fixed_atom_rates,
    sample_bottom_measure,
    sample_fixed_atoms_root,
    sample_root_measure,
    truncation_threshold,
)
from crmhaz.partition import LatentState

from oracles import build_state

T_MAX = 2.0


def small_state():
    """Two clusters, two causes: (n, r) = (4, 3) and (2, 1)."""
    config = [
        ([0, 1, 2, 3], [(1, [0, 1]), (1, [2]), (2, [3])]),
        ([4, 5], [(2, [4, 5])]),
    ]
    return build_state(6, 2, T_MAX, config, [0.4, 1.1])


def small_agg(spec=None):
    times = np.array([0.5, 0.9, 1.3, 0.7, 1.5, 1.8])
    return KernelAggregate(spec or DykstraLaud(0.8), times, np.ones(6))


def empty_agg(spec=None):
    return KernelAggregate(spec or DykstraLaud(0.8), np.empty(0), np.empty(0))


def empty_state(num_causes=2):
    return LatentState(0, num_causes, T_MAX)


PARAMS = HCRMParams(sigma=0.25, sigma0=0.25, beta=1.0, beta0=1.0, theta=1.5)


class TestContainers:
    def test_policy_validation(self):
        with pytest.raises(ConfigError):
            TruncationPolicy(epsilon=0.0)
        with pytest.raises(ConfigError):
            TruncationPolicy(epsilon=-1e-3)
        with pytest.raises(ConfigError):
            TruncationPolicy(max_atoms=0)
        assert TruncationPolicy().epsilon == 1e-4
        assert TruncationPolicy().max_atoms == 1_000_000

    def test_atomic_measure_total_and_len(self):
        mu = AtomicMeasure(np.array([0.2, 1.4, 0.2]), np.array([1.0, 2.5, 0.5]))
        assert mu.total_mass == pytest.approx(4.0, rel=1e-12)
        assert len(mu) == 3

    def test_atomic_measure_rejects_bad_atoms(self):
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([0.1]), np.array([0.0]))
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([0.1]), np.array([-1.0]))
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([-0.1]), np.array([1.0]))
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([0.1, 0.2]), np.array([1.0]))
        with pytest.raises(ValueError):
            AtomicMeasure(np.array([np.inf]), np.array([1.0]))

    def test_empty_measure_allowed(self):
        mu = AtomicMeasure(np.empty(0), np.empty(0))
        assert mu.total_mass == 0.0
        assert len(mu) == 0


class TestThresholdAlgebra:
    """The untilted jump solved at the threshold arrival is the cutoff itself."""

    @pytest.mark.parametrize(
        "sigma,beta",
        [(0.25, 1.0), (0.0, 2.0), (0.6, 0.3), (0.25, 0.0), (0.5, 0.0), (0.9, 5.0)],
    )
    def test_untilted_jump_at_threshold_is_epsilon(self, sigma, beta):
        measure = GenGammaMeasure(sigma, beta)
        base_total = 3.7
        eps = 1e-4
        thr = truncation_threshold(measure, base_total, eps)
        jump = _solve_jumps(
            measure, np.array([beta]), np.array([thr]), base_total
        )[0]
        assert jump == pytest.approx(eps, rel=1e-8)

    def test_threshold_scales_with_base_and_shrinks_with_epsilon(self):
        measure = GenGammaMeasure(0.25, 1.0)
        t1 = truncation_threshold(measure, 1.0, 1e-4)
        assert truncation_threshold(measure, 2.5, 1e-4) == pytest.approx(2.5 * t1)
        assert truncation_threshold(measure, 1.0, 2e-4) < t1


class TestJumpSolver:
    @pytest.mark.parametrize(
        "sigma,rate",
        [(0.25, 1.0), (0.25, 50.0), (0.0, 2.0), (0.9, 0.2), (0.5, 10.0)],
    )
    def test_round_trip(self, sigma, rate):
        # Forward tail values at known jumps, then invert; spans the small
        # and continued-fraction branches (rate * jump up to ~600).
        measure = GenGammaMeasure(sigma, 1.0)
        base_total = 4.2
        v_true = np.logspace(-8.0, np.log10(600.0 / rate), 25)
        y = rate * v_true
        unit = rate**sigma * gammainc_upper(-sigma, y) * np.exp(-gammaln(1.0 - sigma))
        arrivals = unit * base_total
        got = _solve_jumps(measure, np.full(v_true.size, rate), arrivals, base_total)
        assert np.allclose(got, v_true, rtol=1e-8)

    def test_extreme_small_arrival_log_residual(self):
        # An absurdly early arrival gives a huge jump; verify in log space.
        measure = GenGammaMeasure(0.25, 1.0)
        rate, base_total = 3.0, 2.0
        arrivals = np.array([1e-250])
        v = _solve_jumps(measure, np.array([rate]), arrivals, base_total)[0]
        log_target = (
            np.log(arrivals[0] / base_total)
            + gammaln(0.75)
            - 0.25 * np.log(rate)
        )
        assert log_gammainc_upper(-0.25, rate * v) == pytest.approx(
            log_target, abs=1e-7
        )

    def test_stable_zero_rate_closed_form(self):
        measure = GenGammaMeasure(0.5, 0.0)
        base_total = 2.0
        arrivals = np.array([0.3, 1.7])
        got = _solve_jumps(measure, np.zeros(2), arrivals, base_total)
        want = (0.5 * np.exp(gammaln(0.5)) * arrivals / base_total) ** (-2.0)
        assert np.allclose(got, want, rtol=1e-12)

    def test_jumps_decrease_along_arrivals(self):
        measure = GenGammaMeasure(0.25, 1.0)
        arrivals = np.linspace(0.2, 40.0, 60)
        got = _solve_jumps(measure, np.full(60, 1.3), arrivals, 2.0)
        assert np.all(np.diff(got) < 0.0)


class TestArrivalTimes:
    def test_prefix_property_across_thresholds(self):
        a1 = _arrival_times(np.random.default_rng(7), 30.0, 10_000)
        a2 = _arrival_times(np.random.default_rng(7), 300.0, 10_000)
        assert a2.size > a1.size
        assert np.array_equal(a1, a2[: a1.size])

    def test_all_below_threshold_and_sorted(self):
        arr = _arrival_times(np.random.default_rng(3), 120.0, 10_000)
        assert np.all(arr <= 120.0)
        assert np.all(np.diff(arr) > 0.0)

    def test_cap_raises(self):
        with pytest.raises(NumericError):
            _arrival_times(np.random.default_rng(0), 500.0, 100)

    def test_zero_threshold_empty(self):
        assert _arrival_times(np.random.default_rng(0), 0.0, 10).size == 0


class TestRootFixedAtoms:
    def test_rates_formula(self):
        state, agg = small_state(), small_agg()
        got = root_fixed_atom_rates(state, agg, PARAMS)
        expo = agg.exposure(state.locations)
        want = PARAMS.beta0 + 2.0 * laplace_exponent(PARAMS.bottom(), expo)
        assert np.allclose(got, want, rtol=1e-14)
        assert np.all(got > PARAMS.beta0)

    def test_no_data_rate_is_prior_rate(self):
        state = small_state()
        got = root_fixed_atom_rates(state, empty_agg(), PARAMS)
        assert np.all(got == PARAMS.beta0)

    def test_gamma_limit_continuity(self):
        state, agg = small_state(), small_agg()
        at_zero = root_fixed_atom_rates(
            state, agg, HCRMParams(sigma=0.0, sigma0=0.25, beta=1.0, beta0=1.0)
        )
        near_zero = root_fixed_atom_rates(
            state, agg, HCRMParams(sigma=1e-8, sigma0=0.25, beta=1.0, beta0=1.0)
        )
        assert np.allclose(near_zero, at_zero, rtol=1e-5)

    def test_moments(self):
        state, agg = small_state(), small_agg()
        rng = np.random.default_rng(11)
        draws = np.array(
            [sample_fixed_atoms_root(state, agg, PARAMS, rng) for _ in range(20_000)]
        )
        rates = root_fixed_atom_rates(state, agg, PARAMS)
        shapes = state.clu_r[: state.k] - PARAMS.sigma0
        want = shapes / rates
        se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - want) < 3.0 * se)

    def test_independent_mode_rejected(self):
        state, agg = small_state(), small_agg()
        params = HCRMParams(independent_mode=True)
        with pytest.raises(ConfigError):
            root_fixed_atom_rates(state, agg, params)
        with pytest.raises(ConfigError):
            sample_root_measure(
                state, agg, params, TruncationPolicy(), np.random.default_rng(0)
            )


class TestRootMeasure:
    def test_seed_determinism(self):
        state, agg = small_state(), small_agg()
        policy = TruncationPolicy()
        mu1 = sample_root_measure(state, agg, PARAMS, policy, np.random.default_rng(42))
        mu2 = sample_root_measure(state, agg, PARAMS, policy, np.random.default_rng(42))
        assert np.array_equal(mu1.locations, mu2.locations)
        assert np.array_equal(mu1.masses, mu2.masses)

    def test_random_jumps_bounded_by_untilted_sequence(self):
        state, agg = small_state(), small_agg()
        policy = TruncationPolicy()
        mu = sample_root_measure(state, agg, PARAMS, policy, np.random.default_rng(5))
        # Replay the documented draw order to recover the arrivals.
        rng = np.random.default_rng(5)
        root = PARAMS.root()
        base_total = PARAMS.theta * state.t_max
        thr = truncation_threshold(root, base_total, policy.epsilon)
        arrivals = _arrival_times(rng, thr, policy.max_atoms)
        x = rng.uniform(0.0, state.t_max, arrivals.size)
        n = arrivals.size
        assert np.array_equal(mu.locations[:n], x)
        jumps = mu.masses[:n]
        bound = _solve_jumps(root, np.full(n, PARAMS.beta0), arrivals, base_total)
        assert np.all(jumps <= bound * (1.0 + 1e-9))
        exposed = agg.exposure(x) > 0.0
        assert exposed.any()
        assert np.all(jumps[exposed] < bound[exposed])
        assert np.all(np.diff(bound) < 0.0)

    def test_fixed_atoms_appended_at_cluster_locations(self):
        state, agg = small_state(), small_agg()
        mu = sample_root_measure(
            state, agg, PARAMS, TruncationPolicy(), np.random.default_rng(5)
        )
        assert np.array_equal(mu.locations[-state.k :], state.locations)
        assert np.all(mu.masses > 0.0)
        assert np.all(mu.locations <= state.t_max)

    def test_prior_total_mass_mean(self):
        # No data: E[total] = theta * t_max * beta0^(sigma0 - 1).
        params = HCRMParams(sigma=0.25, sigma0=0.25, beta=1.0, beta0=1.0, theta=1.0)
        state, agg = empty_state(), empty_agg()
        policy = TruncationPolicy()
        rng = np.random.default_rng(301)
        totals = np.array(
            [
                sample_root_measure(state, agg, params, policy, rng).total_mass
                for _ in range(10_000)
            ]
        )
        want = params.theta * T_MAX * params.beta0 ** (params.sigma0 - 1.0)
        se = totals.std(ddof=1) / np.sqrt(totals.size)
        assert abs(totals.mean() - want) < 3.0 * se

    def test_epsilon_doubling_never_adds_atoms(self):
        state, agg = small_state(), small_agg()
        for seed in range(10):
            eps = 1e-4
            fine = sample_root_measure(
                state, agg, PARAMS, TruncationPolicy(epsilon=eps),
                np.random.default_rng(seed),
            )
            coarse = sample_root_measure(
                state, agg, PARAMS, TruncationPolicy(epsilon=2.0 * eps),
                np.random.default_rng(seed),
            )
            assert len(coarse) <= len(fine)

    def test_max_atoms_guard(self):
        state, agg = small_state(), small_agg()
        with pytest.raises(NumericError):
            sample_root_measure(
                state,
                agg,
                PARAMS,
                TruncationPolicy(epsilon=1e-12, max_atoms=100),
                np.random.default_rng(0),
            )

    def test_truncation_bound_matches_quadrature(self):
        sigma0, beta0 = 0.25, 1.0
        base_total = PARAMS.theta * T_MAX
        eps = 1e-4
        mu = sample_root_measure(
            small_state(), small_agg(), PARAMS, TruncationPolicy(), np.random.default_rng(1)
        )
        want, _ = quad(
            lambda s: s**-sigma0 * np.exp(-beta0 * s - gammaln(1.0 - sigma0)),
            0.0,
            eps,
        )
        assert mu.truncation_bound == pytest.approx(base_total * want, rel=1e-8)

    def test_discard_bound_stable_branch(self):
        measure = GenGammaMeasure(0.5, 0.0)
        got = _discard_bound(measure, 3.0, 1e-4)
        want = 3.0 * (1e-4) ** 0.5 / (0.5 * np.exp(gammaln(0.5)))
        assert got == pytest.approx(want, rel=1e-12)


class TestBottomMeasure:
    def test_random_locations_live_on_base_atoms(self):
        state, agg = small_state(), small_agg()
        rng = np.random.default_rng(17)
        base = sample_root_measure(state, agg, PARAMS, TruncationPolicy(), rng)
        mu = sample_bottom_measure(1, base, state, agg, PARAMS, TruncationPolicy(), rng)
        assert np.isin(mu.locations, base.locations).all()

    def test_group_sum_moments(self):
        state, agg = small_state(), small_agg()
        rng = np.random.default_rng(23)
        base = sample_root_measure(state, agg, PARAMS, TruncationPolicy(), rng)
        cause = 1
        d = cause - 1
        occupied = state.clu_nd[: state.k, d] > 0
        shapes = (
            state.clu_nd[: state.k, d][occupied]
            - state.clu_rd[: state.k, d][occupied] * PARAMS.sigma
        )
        rates = PARAMS.beta + agg.exposure(state.locations[occupied])
        want = shapes / rates
        num_fixed = int(occupied.sum())
        draws = np.empty((12_000, num_fixed))
        for i in range(draws.shape[0]):
            mu = sample_bottom_measure(
                cause, base, state, agg, PARAMS, TruncationPolicy(), rng
            )
            draws[i] = mu.masses[-num_fixed:]
        se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - want) < 3.0 * se)

    def test_fixed_atoms_only_where_cause_present(self):
        state, agg = small_state(), small_agg()
        rng = np.random.default_rng(29)
        base = sample_root_measure(state, agg, PARAMS, TruncationPolicy(), rng)
        # Cause 1 occupies only the first cluster; its fixed atom sits there.
        mu = sample_bottom_measure(1, base, state, agg, PARAMS, TruncationPolicy(), rng)
        assert mu.locations[-1] == state.locations[0]

    def test_prior_two_level_total_mass_mean(self):
        # Tower property: E[cause total] = theta * t_max * beta0^(sigma0-1) * beta^(sigma-1).
        params = HCRMParams(sigma=0.25, sigma0=0.25, beta=1.0, beta0=1.0, theta=1.0)
        state, agg = empty_state(), empty_agg()
        policy = TruncationPolicy()
        rng = np.random.default_rng(404)
        totals = np.empty(8000)
        for i in range(totals.size):
            base = sample_root_measure(state, agg, params, policy, rng)
            totals[i] = sample_bottom_measure(
                1, base, state, agg, params, policy, rng
            ).total_mass
        want = (
            params.theta
            * T_MAX
            * params.beta0 ** (params.sigma0 - 1.0)
            * params.beta ** (params.sigma - 1.0)
        )
        se = totals.std(ddof=1) / np.sqrt(totals.size)
        assert abs(totals.mean() - want) < 3.0 * se

    def test_independent_mode_contract(self):
        state, agg = small_state(), small_agg()
        rng = np.random.default_rng(31)
        indep = HCRMParams(
            sigma=0.25, sigma0=0.25, beta=1.0, beta0=1.0, theta=1.5,
            independent_mode=True,
        )
        mu = sample_bottom_measure(2, None, state, agg, indep, TruncationPolicy(), rng)
        assert np.all(mu.locations <= state.t_max)
        assert len(mu) > 0
        base = sample_root_measure(state, agg, PARAMS, TruncationPolicy(), rng)
        with pytest.raises(ConfigError):
            sample_bottom_measure(2, base, state, agg, indep, TruncationPolicy(), rng)
        with pytest.raises(ConfigError):
            sample_bottom_measure(2, None, state, agg, PARAMS, TruncationPolicy(), rng)

    def test_cause_out_of_range(self):
        state, agg = small_state(), small_agg()
        rng = np.random.default_rng(0)
        base = sample_root_measure(state, agg, PARAMS, TruncationPolicy(), rng)
        for cause in (0, 3):
            with pytest.raises(ConfigError):
                sample_bottom_measure(
                    cause, base, state, agg, PARAMS, TruncationPolicy(), rng
                )


class TestFunctionalDraw:
    GRID = np.linspace(0.0, 3.0, 121)

    def test_single_shared_atom_closed_form(self):
        x, m = 0.7, 1.3
        mu = AtomicMeasure(np.array([x]), np.array([m]))
        for spec in (DykstraLaud(0.9), OrnsteinUhlenbeck(1.7)):
            est = functional_draw([mu, mu], spec, self.GRID)
            want = np.exp(-2.0 * m * kernel_primitive(spec, self.GRID, x))
            assert np.allclose(est.survival, want, rtol=1e-12, atol=0.0)

    def test_survival_starts_at_one_and_decreases(self):
        rng = np.random.default_rng(8)
        mus = [
            AtomicMeasure(rng.uniform(0.0, 2.0, 15), rng.gamma(1.0, 0.3, 15))
            for _ in range(3)
        ]
        est = functional_draw(mus, DykstraLaud(0.8), self.GRID)
        assert est.survival[0] == 1.0
        assert np.all(np.diff(est.survival) <= 0.0)
        est.validate()

    def test_incidence_is_hazard_times_survival(self):
        rng = np.random.default_rng(9)
        mu1 = AtomicMeasure(rng.uniform(0.0, 2.0, 10), rng.gamma(1.0, 0.3, 10))
        mu2 = AtomicMeasure(rng.uniform(0.0, 2.0, 5), rng.gamma(1.0, 0.5, 5))
        spec = OrnsteinUhlenbeck(2.0)
        est = functional_draw([mu1, mu2], spec, self.GRID)
        from crmhaz.kernels import eval_kernel

        haz1 = eval_kernel(spec, self.GRID[:, None], mu1.locations[None, :]) @ mu1.masses
        assert np.allclose(est.incidence[0], haz1 * est.survival, rtol=1e-12)

    def test_subdistribution_is_cumtrapz_of_incidence(self):
        rng = np.random.default_rng(10)
        mus = [
            AtomicMeasure(rng.uniform(0.0, 2.0, 8), rng.gamma(1.0, 0.4, 8))
            for _ in range(2)
        ]
        est = functional_draw(mus, DykstraLaud(1.1), self.GRID)
        manual = np.concatenate(
            [
                [0.0],
                np.cumsum(
                    0.5
                    * np.diff(self.GRID)
                    * (est.incidence[0][1:] + est.incidence[0][:-1])
                ),
            ]
        )
        assert np.allclose(est.subdistribution[0], manual, rtol=1e-12, atol=1e-15)

    def test_prediction_uniform_before_support(self):
        mu = AtomicMeasure(np.array([1.0]), np.array([2.0]))
        est = functional_draw([mu, mu, mu], DykstraLaud(0.5), self.GRID)
        early = self.GRID < 1.0
        assert np.allclose(est.prediction[:, early], 1.0 / 3.0)
        late = self.GRID >= 1.0
        assert np.allclose(est.prediction[:, late], 1.0 / 3.0)
        assert np.allclose(est.prediction.sum(axis=0), 1.0, atol=1e-12)

    def test_empty_measures(self):
        empty = AtomicMeasure(np.empty(0), np.empty(0))
        est = functional_draw([empty, empty], DykstraLaud(1.0), self.GRID)
        assert np.all(est.survival == 1.0)
        assert np.all(est.incidence == 0.0)
        assert np.all(est.prediction == 0.5)
