"""Marginal Gibbs sampler over the nested latent partition.

One iteration reallocates every event observation (remove, reweight,
reinsert), refreshes cluster locations by reflected random-walk moves,
draws the base-measure mass from its conjugate gamma conditional, and
updates kernel and regression hyperparameters by random-walk MH on the
collapsed marginal law.  The compiled inner loops live in `_sweep`; this
module owns the caches, the RNG stream, and the bookkeeping.

Grid policy: allocation integrals for the new-cluster case run on the
512-point knot-augmented grid; the base-measure integral (theta update,
marginal-law evaluations) runs on the finer 4096-point grid.  Both grids
are fixed for the life of a chain; only the exposure values on them are
refreshed when a kernel parameter or regression coefficient moves.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import numpy as np

from . import _sweep
from .data import ConfigError, HCRMParams, HyperPriors, validate_config
from .kernels import (
    DykstraLaud,
    KernelAggregate,
    KernelSpec,
    OrnsteinUhlenbeck,
    Rectangular,
    cox_weights,
    eval_kernel,
    log_kernel_product,
)
from .levy import laplace_exponent, log_cumulant
from .partition import (
    LAW_GRID_SIZE,
    SWEEP_GRID_SIZE,
    ExistingTable,
    LatentState,
    NewCluster,
    NewTable,
    base_measure_grid,
    base_measure_integral,
)

# exp() overflow guard for the decay kernel's rescaled cumulative integrand
_DECAY_EXP_LIMIT = 600.0


def _kind_params(spec: KernelSpec):
    """Encode a kernel spec as (kind, p1, p2) for the compiled loops."""
    if isinstance(spec, DykstraLaud):
        return 0, spec.gamma, 0.0
    if isinstance(spec, Rectangular):
        return 1, spec.gamma, spec.bandwidth
    if isinstance(spec, OrnsteinUhlenbeck):
        return 2, spec.kappa, 0.0
    raise TypeError(f"unknown kernel spec {spec!r}")


def kernel_param_value(spec: KernelSpec) -> float:
    """The sampled scalar of a kernel: height for the flat kernels, decay
    rate for the exponential one."""
    return _kind_params(spec)[1]


def replace_kernel_param(spec: KernelSpec, value: float) -> KernelSpec:
    if isinstance(spec, DykstraLaud):
        return DykstraLaud(gamma=value)
    if isinstance(spec, Rectangular):
        return Rectangular(gamma=value, bandwidth=spec.bandwidth)
    if isinstance(spec, OrnsteinUhlenbeck):
        return OrnsteinUhlenbeck(kappa=value)
    raise TypeError(f"unknown kernel spec {spec!r}")


def _agg_arrays(agg: KernelAggregate):
    """Unpack aggregate internals for the compiled exposure routine."""
    if agg._ou_suffix is not None:
        return agg.times, agg.cox, agg._s0, agg._s1, agg._ou_suffix, True
    return agg.times, agg.cox, agg._s0, agg._s1, np.zeros(1), False


def _cluster_integrand(u, params: HCRMParams, num_causes: int):
    """Density factor of the new-cluster allocation integral at exposure u."""
    u = np.asarray(u, dtype=float)
    out = (params.beta + u) ** (params.sigma - 1.0)
    if not params.independent_mode:
        inner = laplace_exponent(params.bottom(), u)
        out = out * (params.beta0 + num_causes * inner) ** (params.sigma0 - 1.0)
    return out


def _cumtrapz(f, x):
    out = np.zeros(f.size)
    np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x), out=out[1:])
    return out


def _case3_cache(agg, params, num_causes, t_max, grid_size=SWEEP_GRID_SIZE):
    """Grid, integrand values, and cumulative integral for case (3)."""
    xg = base_measure_grid(agg, t_max, grid_size)
    kg = agg.exposure(xg)
    gv = _cluster_integrand(kg, params, num_causes)
    kind, p1, _ = _kind_params(agg.spec)
    ou_fallback = False
    if kind == 2:
        ou_fallback = p1 * t_max > _DECAY_EXP_LIMIT
        if ou_fallback:
            g3cum = np.zeros_like(xg)
        else:
            g3cum = _cumtrapz(np.exp(p1 * xg) * gv, xg)
    else:
        g3cum = _cumtrapz(gv, xg)
    return xg, gv, g3cum, ou_fallback


def _law_integral(xl, kl, params: HCRMParams, num_causes: int) -> float:
    """Base-measure integral from precomputed exposures on the law grid."""
    inner = laplace_exponent(params.bottom(), kl)
    if params.independent_mode:
        integrand = num_causes * inner
    else:
        integrand = laplace_exponent(params.root(), num_causes * inner)
    return float(np.trapezoid(integrand, xl))


def _log_q(state: LatentState, agg: KernelAggregate) -> float:
    ids = np.flatnonzero(state.obs_cluster >= 0)
    locs = state.clu_loc[state.obs_cluster[ids]]
    return log_kernel_product(agg.spec, agg.times_input[ids], agg.cox_input[ids], locs)


def _log_law_terms(state, params, theta, kclu, log_q, integral) -> float:
    """Collapsed marginal log-law from cached cluster exposures."""
    if log_q == -np.inf:
        return -np.inf
    gg = params.bottom()
    k, m = state.k, state.m
    total = log_q - theta * integral + k * np.log(theta)
    total += float(
        np.sum(log_cumulant(gg, state.tab_q[:m], kclu[state.tab_cluster[:m]]))
    )
    if not params.independent_mode:
        inner = state.D * laplace_exponent(gg, kclu[:k])
        total += float(np.sum(log_cumulant(params.root(), state.clu_r[:k], inner)))
    return total


def full_conditional_weights(i, cause, state, agg, params,
                             grid_size=SWEEP_GRID_SIZE):
    """Allocation law for event observation i, currently out of the state.

    Returns (choices, log_weights): seats at existing tables of the same
    cause, fresh tables in existing clusters (hierarchical mode only), and
    a fresh cluster, in that order; weights are unnormalized logs.
    """
    t_i = float(agg.times_input[i])
    cxw = float(agg.cox_input[i])
    d = cause - 1
    kind, p1, p2 = _kind_params(agg.spec)
    kvals = eval_kernel(agg.spec, t_i, state.locations)
    kclu = agg.exposure(state.locations)
    choices = []
    logw = []
    seen = {}
    for t in range(state.m):
        if state.tab_cause[t] != d:
            continue
        j = int(state.tab_cluster[t])
        h = seen.get(j, 0)
        seen[j] = h + 1
        if kvals[j] <= 0.0:
            continue
        choices.append(ExistingTable(j, d, h))
        logw.append(
            np.log(cxw * kvals[j])
            + np.log(state.tab_q[t] - params.sigma)
            - np.log(params.beta + kclu[j])
        )
    if not params.independent_mode:
        for j in range(state.k):
            if kvals[j] <= 0.0:
                continue
            inner = laplace_exponent(params.bottom(), kclu[j])
            logw.append(
                np.log(cxw * kvals[j])
                + (params.sigma - 1.0) * np.log(params.beta + kclu[j])
                + np.log(state.clu_r[j] - params.sigma0)
                - np.log(params.beta0 + state.D * inner)
            )
            choices.append(NewTable(j))
    xg, gv, g3cum, ou_fb = _case3_cache(agg, params, state.D, state.t_max,
                                        grid_size)
    i_t = int(np.searchsorted(xg, t_i))
    i_lo = int(np.searchsorted(xg, max(t_i - p2, 0.0))) if kind == 1 else 0
    mass = _sweep._case3_log_mass(kind, p1, i_t, i_lo, t_i, xg, gv, g3cum,
                                  ou_fb)
    choices.append(NewCluster(np.nan))
    logw.append(np.log(params.theta * cxw) + mass)
    return choices, np.asarray(logw)


def sample_new_location(i, state, agg, params, rng,
                        grid_size=SWEEP_GRID_SIZE) -> float:
    """Draw the location of a fresh cluster seeded by observation i."""
    t_i = float(agg.times_input[i])
    kind, p1, p2 = _kind_params(agg.spec)
    xg, gv, g3cum, ou_fb = _case3_cache(agg, params, state.D, state.t_max,
                                        grid_size)
    i_t = int(np.searchsorted(xg, t_i))
    i_lo = int(np.searchsorted(xg, max(t_i - p2, 0.0))) if kind == 1 else 0
    u = float(rng.random())
    return float(
        _sweep._draw_location(kind, p1, u, i_t, i_lo, t_i, xg, gv, g3cum, ou_fb)
    )


def acceleration_step(state, agg, params, rng, scale=0.3) -> int:
    """Refresh every cluster location in place; returns accepted count."""
    ev_ids = np.flatnonzero(state.obs_cluster >= 0)
    ev_t = agg.times_input[ev_ids]
    kclu = agg.exposure(state.clu_loc[: state.k])
    kind, p1, p2 = _kind_params(agg.spec)
    ts, cs, s0, s1, ou_suf, use_suf = _agg_arrays(agg)
    z = rng.standard_normal(state.k)
    u = rng.random(state.k)
    km = np.array([state.k, state.m], dtype=np.int64)
    accepted = _sweep.accelerate(
        ev_ids, ev_t, state.obs_cluster,
        state.clu_loc, state.clu_n, state.clu_r,
        km, kclu,
        kind, p1, p2, params.sigma, params.beta, params.sigma0, params.beta0,
        state.D, 1 if params.independent_mode else 0,
        ts, cs, s0, s1, ou_suf, use_suf,
        z, u, scale,
    )
    return int(accepted)


def update_theta(state, agg, params, priors: HyperPriors, rng,
                 integral=None) -> float:
    """Conjugate gamma draw of the base-measure total mass."""
    if integral is None:
        integral = base_measure_integral(agg, params, state.D, state.t_max)
    shape = priors.theta_shape + state.k
    rate = priors.theta_rate + integral
    return float(rng.gamma(shape, 1.0 / rate))


@dataclass
class _HyperUpdate:
    agg: KernelAggregate
    accepted: bool
    value: float


def update_kernel_param(state, agg, params, priors: HyperPriors, rng,
                        step=0.5, theta=None) -> _HyperUpdate:
    """Log-scale random-walk MH move of the kernel's sampled scalar."""
    theta = params.theta if theta is None else theta
    old = kernel_param_value(agg.spec)
    prop = old * np.exp(step * rng.standard_normal())
    u = rng.random()
    agg_new = agg.with_spec(replace_kernel_param(agg.spec, prop))
    xl = base_measure_grid(agg, state.t_max, LAW_GRID_SIZE)
    lm_old = _log_law_terms(
        state, params, theta,
        agg.exposure(state.clu_loc[: state.k]),
        _log_q(state, agg),
        _law_integral(xl, agg.exposure(xl), params, state.D),
    )
    lm_new = _log_law_terms(
        state, params, theta,
        agg_new.exposure(state.clu_loc[: state.k]),
        _log_q(state, agg_new),
        _law_integral(xl, agg_new.exposure(xl), params, state.D),
    )
    log_ratio = (
        lm_new - lm_old
        - priors.kernel_rate * (prop - old)
        + np.log(prop) - np.log(old)
    )
    if np.log(u) < log_ratio:
        return _HyperUpdate(agg_new, True, prop)
    return _HyperUpdate(agg, False, old)


def update_eta(state, dataset, eta, spec, params, priors: HyperPriors, rng,
               step=0.5, theta=None) -> tuple[np.ndarray, KernelAggregate, int]:
    """Per-coefficient random-walk MH for the regression coefficients."""
    theta = params.theta if theta is None else theta
    z = dataset.predictor_matrix
    eta = np.array(eta, dtype=float)
    agg = KernelAggregate(spec, dataset.times, cox_weights(z, eta))
    if z.shape[1] == 0:
        return eta, agg, 0
    xl = base_measure_grid(agg, state.t_max, LAW_GRID_SIZE)
    accepted = 0
    lm_cur = _log_law_terms(
        state, params, theta,
        agg.exposure(state.clu_loc[: state.k]),
        _log_q(state, agg),
        _law_integral(xl, agg.exposure(xl), params, state.D),
    )
    for c in range(eta.size):
        prop = eta.copy()
        prop[c] += step * rng.standard_normal()
        u = rng.random()
        agg_new = KernelAggregate(spec, dataset.times, cox_weights(z, prop))
        lm_new = _log_law_terms(
            state, params, theta,
            agg_new.exposure(state.clu_loc[: state.k]),
            _log_q(state, agg_new),
            _law_integral(xl, agg_new.exposure(xl), params, state.D),
        )
        log_ratio = lm_new - lm_cur + (eta[c] ** 2 - prop[c] ** 2) / (
            2.0 * priors.eta_variance
        )
        if np.log(u) < log_ratio:
            eta = prop
            agg = agg_new
            lm_cur = lm_new
            accepted += 1
    return eta, agg, accepted


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 25000
    burn_in: int = 5000
    thin: int | None = None  # None: thin so about 2000 samples are kept
    seed: int = 0
    mh_step_kernel: float = 0.5
    mh_step_eta: float = 0.5
    conditional_draws: int = 10
    grid_size: int = 200
    accel_scale: float = 0.3
    adapt: bool = True
    checkpoint_path: str | None = None
    checkpoint_every: int = 0
    progress: bool = False

    def __post_init__(self):
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must lie in [0, iterations)")
        if self.thin is not None and self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.conditional_draws < 0:
            raise ConfigError("conditional_draws must be nonnegative")
        if self.grid_size < 2:
            raise ConfigError("grid_size must be at least 2")

    @property
    def resolved_thin(self) -> int:
        if self.thin is not None:
            return self.thin
        return max(1, (self.iterations - self.burn_in) // 2000)


@dataclass
class ChainSample:
    iteration: int
    state: LatentState
    theta: float
    spec: KernelSpec
    eta: np.ndarray
    log_marginal: float
    accept_accel: int
    accept_kernel: bool
    accept_eta: int

    @property
    def num_clusters(self) -> int:
        return self.state.k


@dataclass
class ChainResult:
    samples: list
    diagnostics: dict
    config: ChainConfig
    params: HCRMParams

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.samples])

    @property
    def cluster_counts(self) -> np.ndarray:
        return np.array([s.num_clusters for s in self.samples])


def effective_sample_size(x) -> float:
    """ESS by autocorrelation with initial-positive-sequence truncation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    if np.all(xc == 0.0):
        return float(n)
    nf = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nf)
    acov = np.fft.irfft(f * np.conj(f), nf)[:n] / n
    if acov[0] <= 0.0:
        return float(n)
    rho = acov / acov[0]
    tau = 0.0
    pair = 0
    while 2 * pair + 1 < n:
        g = rho[2 * pair] + rho[2 * pair + 1]
        if g <= 0.0:
            break
        tau += g
        pair += 1
    tau = 2.0 * tau - 1.0
    if tau < 1e-12:
        return float(n)
    return float(min(n, n / tau))


def _write_checkpoint(path, iteration, state, theta, spec, eta, config):
    payload = {
        "iteration": iteration,
        "theta": theta,
        "kernel": type(spec).__name__,
        "kernel_param": kernel_param_value(spec),
        "eta": list(map(float, eta)),
        "seed": config.seed,
        "state": state.to_json(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def run_chain(dataset, kernel, params: HCRMParams, hyperpriors=None,
              config: ChainConfig | None = None, observer=None) -> ChainResult:
    """Run the full sampler; deterministic given config.seed.

    Per-iteration order: reallocation sweep over every event observation,
    location acceleration, conjugate theta draw, kernel-parameter MH,
    regression-coefficient MH.  Retains post-burn-in thinned samples.

    `observer(iteration, state, rec_kind, rec_idx, rec_loc)`, when given,
    is called after every sweep (the initial allocation passes -1) with the
    live state and the per-event decision record, and again after each
    acceleration pass with the record arguments set to None; used by
    diagnostics and the replay tests.  The record encodes, per event:
    0 = seated at the existing table with that slot id, 1 = new table in
    that cluster slot, 2 = new cluster at the recorded location.
    """
    config = config if config is not None else ChainConfig()
    priors = hyperpriors if hyperpriors is not None else HyperPriors()
    validate_config(dataset, kernel, params)
    if params.beta <= 0.0 or (not params.independent_mode and params.beta0 <= 0.0):
        raise ConfigError(
            "the allocation grid integral needs strictly positive beta rates"
        )
    rng = np.random.default_rng(config.seed)
    num_causes = dataset.num_causes
    t_max = dataset.t_max
    n_pred = dataset.predictor_matrix.shape[1]
    eta = np.zeros(n_pred)
    agg = KernelAggregate.from_dataset(kernel, dataset, eta if n_pred else None)

    ev_ids = np.flatnonzero(dataset.causes > 0).astype(np.int64)
    ne = ev_ids.size
    cap = ne + 1
    state = LatentState(dataset.n, num_causes, t_max)
    while state.clu_loc.size < cap:
        state._grow_clusters()
    while state.tab_cluster.size < cap:
        state._grow_tables()
    kclu = np.zeros(cap)
    km = np.zeros(2, dtype=np.int64)
    ev_t = dataset.times[ev_ids]
    ev_d0 = (dataset.causes[ev_ids] - 1).astype(np.int64)

    kind, p1, p2 = _kind_params(kernel)
    xg = base_measure_grid(agg, t_max, SWEEP_GRID_SIZE)
    xl = base_measure_grid(agg, t_max, LAW_GRID_SIZE)
    idx_t = np.searchsorted(xg, ev_t).astype(np.int64)
    if kind == 1:
        idx_lo = np.searchsorted(xg, np.maximum(ev_t - p2, 0.0)).astype(np.int64)
    else:
        idx_lo = np.zeros(ne, dtype=np.int64)
    if not np.all(xg[idx_t] == ev_t):
        raise RuntimeError("allocation grid lost an observation knot")

    sigma, beta = params.sigma, params.beta
    sigma0, beta0 = params.sigma0, params.beta0
    indep = 1 if params.independent_mode else 0
    theta = params.theta

    gv = np.zeros(1)
    g3cum = np.zeros(1)
    ou_fb = False
    agg_arrays = None
    integral = 0.0
    ev_cox = None

    def rebuild_caches():
        nonlocal gv, g3cum, ou_fb, agg_arrays, integral, ev_cox
        _, gv, g3cum, ou_fb = _case3_cache(agg, params, num_causes, t_max,
                                           SWEEP_GRID_SIZE)
        agg_arrays = _agg_arrays(agg)
        integral = _law_integral(xl, agg.exposure(xl), params, num_causes)
        ev_cox = agg.cox_input[ev_ids]

    rebuild_caches()

    rec_kind = np.zeros(ne, dtype=np.int64)
    rec_idx = np.zeros(ne, dtype=np.int64)
    rec_loc = np.zeros(ne)
    wbuf = np.zeros(2 * cap + 1)
    ckind = np.zeros(2 * cap + 1, dtype=np.int64)
    cid = np.zeros(2 * cap + 1, dtype=np.int64)

    def do_sweep():
        u2 = rng.random((ne, 2))
        _sweep.sweep(
            ev_ids, ev_t, ev_d0, ev_cox,
            state.obs_cluster, state.obs_table,
            state.clu_loc, state.clu_n, state.clu_r, state.clu_nd, state.clu_rd,
            state.tab_cluster, state.tab_cause, state.tab_q,
            km, kclu,
            kind, p1, p2, sigma, beta, sigma0, beta0, theta, num_causes, indep,
            xg, gv, g3cum, idx_t, idx_lo, ou_fb,
            agg_arrays[0], agg_arrays[1], agg_arrays[2], agg_arrays[3],
            agg_arrays[4], agg_arrays[5],
            np.ascontiguousarray(u2[:, 0]), np.ascontiguousarray(u2[:, 1]),
            rec_kind, rec_idx, rec_loc,
            wbuf, ckind, cid,
        )
        state.k = int(km[0])
        state.m = int(km[1])

    def do_accelerate():
        z = rng.standard_normal(state.k)
        u = rng.random(state.k)
        return int(
            _sweep.accelerate(
                ev_ids, ev_t, state.obs_cluster,
                state.clu_loc, state.clu_n, state.clu_r,
                km, kclu,
                kind, p1, p2, sigma, beta, sigma0, beta0, num_causes, indep,
                agg_arrays[0], agg_arrays[1], agg_arrays[2], agg_arrays[3],
                agg_arrays[4], agg_arrays[5],
                z, u, config.accel_scale,
            )
        )

    # sequential allocation into the empty structure
    do_sweep()
    if observer is not None:
        observer(-1, state, rec_kind, rec_idx, rec_loc)

    thin = config.resolved_thin
    step_kernel = config.mh_step_kernel
    step_eta = config.mh_step_eta
    samples = []
    tot_accel = 0
    tot_accel_tries = 0
    tot_kernel = 0
    tot_eta = 0
    report_every = max(1, config.iterations // 20)

    for it in range(config.iterations):
        do_sweep()
        if observer is not None:
            observer(it, state, rec_kind, rec_idx, rec_loc)
        tot_accel_tries += state.k
        acc_accel = do_accelerate()
        tot_accel += acc_accel
        if observer is not None:
            observer(it, state, None, None, None)

        if not priors.fix_theta:
            theta = float(
                rng.gamma(priors.theta_shape + state.k,
                          1.0 / (priors.theta_rate + integral))
            )

        acc_kernel = False
        if not priors.fix_kernel:
            zk = rng.standard_normal()
            uk = rng.random()
            prop = p1 * np.exp(step_kernel * zk)
            agg_new = agg.with_spec(replace_kernel_param(agg.spec, prop))
            kclu_new = agg_new.exposure(state.clu_loc[: state.k])
            integral_new = _law_integral(xl, agg_new.exposure(xl), params,
                                         num_causes)
            lm_old = _log_law_terms(state, params, theta, kclu,
                                    _log_q(state, agg), integral)
            lm_new = _log_law_terms(state, params, theta, kclu_new,
                                    _log_q(state, agg_new), integral_new)
            log_ratio = (
                lm_new - lm_old
                - priors.kernel_rate * (prop - p1)
                + np.log(prop) - np.log(p1)
            )
            alpha = np.exp(min(0.0, log_ratio))
            if np.log(uk) < log_ratio:
                acc_kernel = True
                tot_kernel += 1
                agg = agg_new
                p1 = prop
                kclu[: state.k] = kclu_new
                rebuild_caches()
            if config.adapt and it < config.burn_in:
                gain = min(0.1, 1.0 / np.sqrt(it + 1.0))
                step_kernel *= np.exp(gain * (alpha - 0.44))

        acc_eta = 0
        if n_pred:
            for c in range(n_pred):
                ze = rng.standard_normal()
                ue = rng.random()
                prop_eta = eta.copy()
                prop_eta[c] += step_eta * ze
                agg_new = KernelAggregate(
                    agg.spec, dataset.times, cox_weights(dataset.predictor_matrix, prop_eta)
                )
                kclu_new = agg_new.exposure(state.clu_loc[: state.k])
                integral_new = _law_integral(xl, agg_new.exposure(xl), params,
                                             num_causes)
                lm_old = _log_law_terms(state, params, theta, kclu,
                                        _log_q(state, agg), integral)
                lm_new = _log_law_terms(state, params, theta, kclu_new,
                                        _log_q(state, agg_new), integral_new)
                log_ratio = lm_new - lm_old + (
                    eta[c] ** 2 - prop_eta[c] ** 2
                ) / (2.0 * priors.eta_variance)
                alpha = np.exp(min(0.0, log_ratio))
                if np.log(ue) < log_ratio:
                    acc_eta += 1
                    eta = prop_eta
                    agg = agg_new
                    kclu[: state.k] = kclu_new
                    rebuild_caches()
                if config.adapt and it < config.burn_in:
                    gain = min(0.1, 1.0 / np.sqrt(it + 1.0))
                    step_eta *= np.exp(gain * (alpha - 0.44))
            tot_eta += acc_eta

        if it >= config.burn_in and (it - config.burn_in) % thin == 0:
            lm = _log_law_terms(state, params, theta, kclu,
                                _log_q(state, agg), integral)
            samples.append(
                ChainSample(
                    iteration=it,
                    state=state.copy(),
                    theta=theta,
                    spec=agg.spec,
                    eta=eta.copy(),
                    log_marginal=lm,
                    accept_accel=acc_accel,
                    accept_kernel=acc_kernel,
                    accept_eta=acc_eta,
                )
            )

        if (
            config.checkpoint_path
            and config.checkpoint_every > 0
            and (it + 1) % config.checkpoint_every == 0
        ):
            _write_checkpoint(config.checkpoint_path, it + 1, state, theta,
                              agg.spec, eta, config)

        if config.progress and (it + 1) % report_every == 0:
            print(
                f"iteration {it + 1}/{config.iterations}  clusters={state.k}"
                f"  theta={theta:.3f}",
                file=sys.stderr,
            )

    counts = np.array([s.num_clusters for s in samples], dtype=float)
    thetas = np.array([s.theta for s in samples])
    lms = np.array([s.log_marginal for s in samples])
    diagnostics = {
        "accept_rate_accel": tot_accel / max(1, tot_accel_tries),
        "accept_rate_kernel": tot_kernel / max(1, config.iterations),
        "accept_rate_eta": tot_eta / max(1, config.iterations * max(1, n_pred)),
        "mean_clusters": float(counts.mean()) if counts.size else 0.0,
        "mh_step_kernel_final": step_kernel,
        "mh_step_eta_final": step_eta,
        "ess": {
            "theta": effective_sample_size(thetas),
            "num_clusters": effective_sample_size(counts),
            "log_marginal": effective_sample_size(lms),
        },
        "kept": len(samples),
    }
    return ChainResult(samples=samples, diagnostics=diagnostics, config=config,
                       params=params)
