"""Posterior curve estimation, chain aggregation, and frequentist baselines.

Given one latent configuration, the posterior mean of the survival curve,
of each cause's incidence density, and of the next-event cause
probabilities all have closed forms: products of moment ratios over the
occupied clusters times an exponential of a location integral.
`conditional_estimate` evaluates them on a time grid; `aggregate_chain`
averages over retained sweeps and attaches pointwise credible bands from
explicit measure draws.  Kaplan-Meier and Aalen-Johansen step estimators
plus rescaled comparison metrics support benchmarking against the
standard nonparametric answers on the same grid.

Location integrals use the composite midpoint rule on a kink-aware grid
(see `CURVE_GRID_SIZE`).  The kernel factor of the incidence integrand
jumps where the kernel support ends; those edges are grid knots, and
midpoints never sample a jump site, so every cell integrates a smooth
function.  Prospective exposure vanishes at locations the kernel cannot
reach from the evaluation time, so integrating over the whole window is
the same as stopping at min(t, t_max); no explicit truncation is
applied.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .data import ConfigError, DataFormatError, EstimateGrid, NumericError
from .kernels import KernelAggregate, Rectangular, eval_kernel, kernel_primitive
from .levy import laplace_exponent, tilted_laplace_exponent
from .measures import (
    TruncationPolicy,
    functional_draw,
    sample_bottom_measure,
    sample_root_measure,
)

__all__ = [
    "CURVE_GRID_SIZE",
    "ConditionalEstimate",
    "StepCurve",
    "aggregate_chain",
    "aalen_johansen",
    "conditional_estimate",
    "conditional_incidence",
    "conditional_survival",
    "dataset_agg_factory",
    "error_metrics",
    "kaplan_meier",
    "output_grid",
    "prediction_curve",
    "write_curves_csv",
]

# Knot budget for the location integrals.  Every point where an
# integrand kinks or jumps (observed times, evaluation times, window
# edges) is a knot, cells are integrated at their midpoints, and the
# uniform fill controls the smooth-region error (around 1e-8 relative at
# this size, far inside the Monte Carlo noise any chain average carries).
CURVE_GRID_SIZE = 4096


@dataclass(frozen=True)
class ConditionalEstimate:
    """Posterior mean curves for one latent configuration on a time grid.

    survival[t]; incidence[d][t] and prediction[d][t] indexed cause-first
    (cause d+1 at row d), matching the EstimateGrid layout.
    """

    times: np.ndarray
    survival: np.ndarray
    incidence: np.ndarray
    prediction: np.ndarray

    def __post_init__(self):
        for name in ("survival", "incidence", "prediction"):
            arr = np.asarray(getattr(self, name))
            if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
                raise NumericError(f"conditional {name} must be finite and non-negative")
        colsum = np.asarray(self.prediction).sum(axis=0)
        if np.any(np.abs(colsum - 1.0) > 1e-9):
            raise NumericError("prediction columns must sum to one")


def output_grid(dataset, num: int = 200) -> np.ndarray:
    """Default evaluation grid: uniform points from zero to just past the data."""
    if not dataset.observations:
        raise DataFormatError("need at least one observation to place the grid")
    return np.linspace(0.0, 1.05 * float(np.max(dataset.times)), num)


def _check_eval(params, times):
    if params.beta <= 0.0 or (not params.independent_mode and params.beta0 <= 0.0):
        raise ConfigError(                # rate zero makes the location integrands blow
            "curve estimators need beta > 0 (and beta0 > 0 with a shared root)"
        )
    if np.any(times < 0.0):
        raise ConfigError("evaluation times must be >= 0")


def _quadrature_grid(agg: KernelAggregate, t_max, times, num) -> np.ndarray:
    """Trapezoid nodes: uniform fill joined with every kink of the integrands.

    Observed times are kinks of the exposure; evaluation times are kinks of
    the prospective exposure; the window kernel adds a kink one bandwidth
    before each.
    """
    knots = [np.linspace(0.0, t_max, num), agg.times, times]
    if isinstance(agg.spec, Rectangular):
        knots.append(agg.times - agg.spec.bandwidth)
        knots.append(times - agg.spec.bandwidth)
    grid = np.unique(np.concatenate(knots))
    return grid[(grid >= 0.0) & (grid <= t_max)]


def _pow_with_diff(rate, grown, sigma):
    """grown**sigma and (grown**sigma - rate**sigma)/sigma, sigma=0 by log limit.

    `rate` is the pre-jump rate, `grown` the rate with prospective exposure
    added; the difference is the tilted exponent increment for any measure
    with these parameters.
    """
    if sigma == 0.0:
        return np.ones_like(grown), np.log(grown) - np.log(rate)
    gp = grown**sigma
    return gp, (gp - rate**sigma) / sigma


class _Curves:
    """Shared geometry and term assembly for one (state, grid) evaluation.

    Everything is vectorized with evaluation times on the first axis:
    cluster arrays are (T, k), location-integral arrays (T, X).
    """

    def __init__(self, state, agg, params, times, grid_size):
        self.state = state
        self.params = params
        self.D = state.D
        self.theta = params.theta
        spec = agg.spec

        k = state.k
        locs = state.locations
        self.n_d = state.clu_nd[:k].astype(float)
        self.r_d = state.clu_rd[:k].astype(float)
        self.n_tot = state.clu_n[:k].astype(float)
        self.r_tot = state.clu_r[:k].astype(float)
        self.expo = agg.exposure(locs)
        self.prim = kernel_primitive(spec, times[:, None], locs[None, :])
        self.kern = eval_kernel(spec, times[:, None], locs[None, :])

        knots = _quadrature_grid(agg, state.t_max, times, grid_size)
        self.cell_widths = np.diff(knots)
        mids = 0.5 * (knots[1:] + knots[:-1])
        self.expo_x = agg.exposure(mids)
        self.prim_x = kernel_primitive(spec, times[:, None], mids[None, :])
        self.kern_x = eval_kernel(spec, times[:, None], mids[None, :])

    def _integrate(self, integrand):
        return self.theta * (integrand @ self.cell_widths)

    def survival_and_incidence(self):
        """Survival curve and per-cause incidence via the tilted calculus.

        The posterior intensity at a location is the prior one tilted by the
        accumulated exposure, so every factor is a tilted-exponent increment
        evaluated at the prospective exposure of the evaluation time.
        """
        p = self.params
        bottom = p.bottom()
        rate = p.beta + self.expo
        grown = rate[None, :] + self.prim
        log_surv = ((p.sigma * self.r_tot - self.n_tot) * (np.log(grown) - np.log(rate))).sum(axis=1)

        psi_plus = tilted_laplace_exponent(bottom, self.expo, self.prim)
        rate_x = p.beta + self.expo_x
        grown_x = rate_x[None, :] + self.prim_x
        gpow_x, psi_x = _pow_with_diff(rate_x, grown_x, p.sigma)

        if p.independent_mode:
            log_surv -= self._integrate(self.D * psi_x)
            brace_const = self._integrate(self.kern_x * gpow_x / grown_x)
        else:
            root_rate = p.beta0 + self.D * laplace_exponent(bottom, self.expo)
            root_grown = root_rate[None, :] + self.D * psi_plus
            log_surv += ((p.sigma0 - self.r_tot) * (np.log(root_grown) - np.log(root_rate))).sum(
                axis=1
            )
            c0_x = p.beta0 + self.D * laplace_exponent(bottom, self.expo_x)
            root_grown_x = c0_x[None, :] + self.D * psi_x
            rpow_x, psi0_x = _pow_with_diff(c0_x, root_grown_x, p.sigma0)
            log_surv -= self._integrate(psi0_x)
            brace_const = self._integrate(self.kern_x * (gpow_x / grown_x) * (rpow_x / root_grown_x))
            brace_const += (
                self.kern * grown ** (p.sigma - 1.0) * (self.r_tot - p.sigma0) / root_grown
            ).sum(axis=1)

        survival = np.exp(log_surv)
        shape_d = self.n_d - p.sigma * self.r_d
        brace = np.einsum("tk,kd->dt", self.kern / grown, shape_d) + brace_const[None, :]
        return survival, survival[None, :] * brace

    def prediction_weights(self):
        """Unnormalized next-event cause weights at total exposure.

        Deliberately not the tilted route: each factor is an untilted moment
        ratio at the exposure a new subject observed at t would contribute
        on top of the data.  The two routes agree analytically; keeping them
        separate makes that a checkable statement.
        """
        p = self.params
        bottom = p.bottom()
        expo_next = self.expo[None, :] + self.prim
        denom = p.beta + expo_next
        shape_d = self.n_d - p.sigma * self.r_d
        weights = np.einsum("tk,kd->dt", self.kern / denom, shape_d)

        expo_next_x = self.expo_x[None, :] + self.prim_x
        denom_x = p.beta + expo_next_x
        if p.independent_mode:
            const = self._integrate(self.kern_x * denom_x ** (p.sigma - 1.0))
        else:
            root_next = p.beta0 + self.D * laplace_exponent(bottom, expo_next)
            const = (
                self.kern * denom ** (p.sigma - 1.0) * (self.r_tot - p.sigma0) / root_next
            ).sum(axis=1)
            root_next_x = p.beta0 + self.D * laplace_exponent(bottom, expo_next_x)
            const += self._integrate(
                self.kern_x * denom_x ** (p.sigma - 1.0) * root_next_x ** (p.sigma0 - 1.0)
            )
        return weights + const[None, :]


def _normalize_weights(weights, num_causes):
    total = weights.sum(axis=0)
    safe = np.where(total > 0.0, total, 1.0)
    out = np.where(total[None, :] > 0.0, weights / safe[None, :], 1.0 / num_causes)
    # cause-symmetric weights (every empty configuration) must normalize to
    # the uniform vector exactly, not to within a rounding ulp of it
    same = np.all(weights == weights[:1], axis=0)
    return np.where(same[None, :], 1.0 / num_causes, out)


def _as_times(t):
    times = np.asarray(t, dtype=float)
    return np.atleast_1d(times), times.ndim == 0


def conditional_estimate(
    state, agg, params, times, grid_size: int = CURVE_GRID_SIZE
) -> ConditionalEstimate:
    """All three posterior mean curves for one latent configuration."""
    times, _ = _as_times(times)
    _check_eval(params, times)
    curves = _Curves(state, agg, params, times, grid_size)
    survival, incidence = curves.survival_and_incidence()
    prediction = _normalize_weights(curves.prediction_weights(), state.D)
    return ConditionalEstimate(times=times, survival=survival, incidence=incidence, prediction=prediction)


def conditional_survival(state, agg, params, t, grid_size: int = CURVE_GRID_SIZE):
    """Posterior mean of the survival function at t (scalar or vector)."""
    times, scalar = _as_times(t)
    _check_eval(params, times)
    survival, _ = _Curves(state, agg, params, times, grid_size).survival_and_incidence()
    return float(survival[0]) if scalar else survival


def conditional_incidence(state, agg, params, t, cause: int, grid_size: int = CURVE_GRID_SIZE):
    """Posterior mean of the cause's incidence density at t (scalar or vector)."""
    if not 1 <= cause <= state.D:
        raise ConfigError(f"cause must be in 1..{state.D}, got {cause}")
    times, scalar = _as_times(t)
    _check_eval(params, times)
    _, incidence = _Curves(state, agg, params, times, grid_size).survival_and_incidence()
    return float(incidence[cause - 1, 0]) if scalar else incidence[cause - 1]


def prediction_curve(state, agg, params, t, grid_size: int = CURVE_GRID_SIZE):
    """Probability of each cause for a new event observed at t.

    Returns a vector over causes for scalar t, a (causes, times) array
    otherwise.  Where no cause carries any weight (t = 0, or an empty
    configuration at times the kernel cannot reach) the curve falls back
    to the uniform distribution, which is the exact no-data answer.
    """
    times, scalar = _as_times(t)
    _check_eval(params, times)
    weights = _Curves(state, agg, params, times, grid_size).prediction_weights()
    prediction = _normalize_weights(weights, state.D)
    return prediction[:, 0] if scalar else prediction


def dataset_agg_factory(dataset):
    """Aggregate factory for chain samples, caching per kernel setting.

    Chains with a fixed kernel reuse a single exposure aggregate; adaptive
    chains get one per distinct (kernel, predictor-scale) pair.
    """
    cache = {}

    def make(sample):
        key = (sample.spec, tuple(np.asarray(sample.eta, dtype=float)))
        if key not in cache:
            cache[key] = KernelAggregate.from_dataset(sample.spec, dataset, sample.eta)
        return cache[key]

    return make


def aggregate_chain(
    samples,
    agg_factory,
    params,
    grid,
    conditional_draws: int = 0,
    *,
    policy: TruncationPolicy = None,
    rng=None,
    quantiles=(0.025, 0.975),
    grid_size: int = CURVE_GRID_SIZE,
) -> EstimateGrid:
    """Monte Carlo average of conditional estimates over retained sweeps.

    Point estimates are plain means of the per-sample closed forms (no
    monotonicity post-processing; the survival mean is non-increasing by
    construction).  The subdistribution integrates the aggregated incidence
    by cumulative trapezoid.  With conditional_draws > 0, each sample also
    contributes that many explicit measure draws and the bands are pointwise
    empirical quantiles of the drawn curves.

    `agg_factory` maps a chain sample to its exposure aggregate (see
    `dataset_agg_factory`); each sample is evaluated at its own sampled
    total-mass value.
    """
    samples = list(samples)
    if not samples:
        raise ConfigError("aggregate_chain needs at least one retained sample")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0.0):
        raise ConfigError("grid must be a strictly increasing vector")
    if conditional_draws < 0:
        raise ConfigError("conditional_draws must be >= 0")
    if conditional_draws > 0:
        policy = policy if policy is not None else TruncationPolicy()
        rng = rng if rng is not None else np.random.default_rng(0)
    lo, hi = quantiles
    if not 0.0 < lo < hi < 1.0:
        raise ConfigError(f"quantiles must satisfy 0 < lower < upper < 1, got {quantiles}")

    num_causes = samples[0].state.D
    survival = np.zeros(grid.size)
    incidence = np.zeros((num_causes, grid.size))
    prediction = np.zeros((num_causes, grid.size))
    drawn = {key: [] for key in ("survival", "incidence", "subdistribution", "prediction")}

    for sample in samples:
        agg = agg_factory(sample)
        sweep_params = replace(params, theta=sample.theta)
        est = conditional_estimate(sample.state, agg, sweep_params, grid, grid_size=grid_size)
        survival += est.survival
        incidence += est.incidence
        prediction += est.prediction
        for _ in range(conditional_draws):
            if params.independent_mode:
                root = None
            else:
                root = sample_root_measure(sample.state, agg, sweep_params, policy, rng)
            causes = [
                sample_bottom_measure(d + 1, root, sample.state, agg, sweep_params, policy, rng)
                for d in range(num_causes)
            ]
            curves = functional_draw(causes, sample.spec, grid)
            for key in drawn:
                drawn[key].append(getattr(curves, key))

    count = float(len(samples))
    survival /= count
    incidence /= count
    prediction /= count
    subdistribution = cumulative_trapezoid(incidence, grid, axis=-1, initial=0.0)

    bands = None
    if conditional_draws > 0:
        bands = {}
        for key, stack in drawn.items():
            low, high = np.quantile(np.stack(stack), [lo, hi], axis=0)
            bands[key] = {"lower": low, "upper": high}

    return EstimateGrid(
        times=grid,
        survival=survival,
        incidence=incidence,
        subdistribution=subdistribution,
        prediction=prediction,
        bands=bands,
    )


# ---------------------------------------------------------------------------
# Frequentist baselines


@dataclass(frozen=True)
class StepCurve:
    """Right-continuous step function: values[i] holds on [times[i], times[i+1])."""

    times: np.ndarray
    values: np.ndarray
    initial: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise DataFormatError("jump times and values must be matching vectors")
        if np.any(np.diff(times) <= 0.0):
            raise DataFormatError("jump times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        levels = np.concatenate(([self.initial], self.values))
        out = levels[np.searchsorted(self.times, t, side="right")]
        return float(out) if t.ndim == 0 else out


def _event_table(dataset):
    times = dataset.times
    causes = dataset.causes
    event_times = np.unique(times[causes > 0])
    at_risk = np.array([np.sum(times >= t) for t in event_times], dtype=float)
    return times, causes, event_times, at_risk


def kaplan_meier(dataset) -> StepCurve:
    """Product-limit survival estimate treating every cause as an event.

    Censored subjects stay in the risk set up to their follow-up time; with
    no events at all the curve is identically one.
    """
    times, causes, event_times, at_risk = _event_table(dataset)
    deaths = np.array([np.sum((times == t) & (causes > 0)) for t in event_times], dtype=float)
    values = np.cumprod(1.0 - deaths / at_risk)
    return StepCurve(times=event_times, values=values, initial=1.0)


def aalen_johansen(dataset, cause: int) -> StepCurve:
    """Cumulative incidence estimate for one cause.

    Each any-cause event time contributes the left-limit of the all-cause
    product-limit survival times the cause's share of the risk set.
    """
    if not 1 <= cause <= dataset.num_causes:
        raise ConfigError(f"cause must be in 1..{dataset.num_causes}, got {cause}")
    times, causes, event_times, at_risk = _event_table(dataset)
    deaths = np.array([np.sum((times == t) & (causes > 0)) for t in event_times], dtype=float)
    own = np.array([np.sum((times == t) & (causes == cause)) for t in event_times], dtype=float)
    surv_left = np.concatenate(([1.0], np.cumprod(1.0 - deaths / at_risk)[:-1]))
    values = np.cumsum(surv_left * own / at_risk)
    return StepCurve(times=event_times, values=values, initial=0.0)


def error_metrics(est: EstimateGrid, truth: EstimateGrid, pi) -> dict:
    """Grid discrepancies between an estimate and reference curves.

    e_tv[d] is half the integrated absolute incidence gap over the cause's
    probability; e_k[d] the sup subdistribution gap over the same; d_k the
    raw sup survival gap.
    """
    pi = np.asarray(pi, dtype=float)
    est_times = np.asarray(est.times, dtype=float)
    truth_times = np.asarray(truth.times, dtype=float)
    if est_times.shape != truth_times.shape or not np.allclose(
        est_times, truth_times, rtol=0.0, atol=1e-12
    ):
        raise ConfigError("estimate and reference must share one time grid")
    if pi.shape != (np.asarray(est.incidence).shape[0],):
        raise ConfigError("need one cause probability per incidence row")
    if np.any(pi <= 0.0):
        raise ConfigError("cause probabilities must be positive")
    e_tv = np.trapezoid(np.abs(est.incidence - truth.incidence), est_times, axis=-1) / (2.0 * pi)
    e_k = np.max(np.abs(est.subdistribution - truth.subdistribution), axis=-1) / pi
    d_k = float(np.max(np.abs(est.survival - truth.survival)))
    return {"e_tv": e_tv, "e_k": e_k, "d_k": d_k}


def write_curves_csv(est: EstimateGrid, path) -> None:
    """Write the grid to CSV, one row per time, cause columns 1-based.

    Band columns, when present, follow the point estimates as
    `<quantity>[_<cause>]_lower` / `_upper`.
    """
    columns = {"time": np.asarray(est.times)}
    columns["survival"] = np.asarray(est.survival)
    for name in ("incidence", "subdistribution", "prediction"):
        arr = np.asarray(getattr(est, name))
        for d in range(arr.shape[0]):
            columns[f"{name}_{d + 1}"] = arr[d]
    if est.bands is not None:
        for key in sorted(est.bands):
            for side in ("lower", "upper"):
                arr = np.asarray(est.bands[key][side])
                if arr.ndim == 1:
                    columns[f"{key}_{side}"] = arr
                else:
                    for d in range(arr.shape[0]):
                        columns[f"{key}_{d + 1}_{side}"] = arr[d]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns.keys())
        writer.writerows(zip(*columns.values()))
