"""Conditional draws of the mixing measures behind the hazards.

Given a latent partition state, the mixing measures decompose into fixed
atoms at the cluster locations (gamma-distributed masses) plus a random
part whose jumps, paired with unit-rate Poisson arrival times, solve an
incomplete-gamma tail equation.  Arrivals are generated until the matching
untilted jump bound drops below a cutoff epsilon, which caps the mass the
truncation can discard.  The shared-level draw feeds the cause-level draws:
cause-specific random atoms sit on the shared draw's atom set.

`functional_draw` turns one joint draw of the cause measures into the
survival, incidence, subdistribution, and prediction curves it induces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import gammaln

from .data import ConfigError, EstimateGrid, NumericError
from .kernels import eval_kernel, kernel_primitive
from .levy import GenGammaMeasure, gammainc_upper, laplace_exponent, log_gammainc_upper

__all__ = [
    "AtomicMeasure",
    "TruncationPolicy",
    "truncation_threshold",
    "root_fixed_atom_rates",
    "sample_fixed_atoms_root",
    "sample_root_measure",
    "sample_bottom_measure",
    "functional_draw",
]

_FIRST_BLOCK = 64
_JUMP_TOL = 1e-10
_NEWTON_MAX_ITER = 100
_BISECT_ITER = 120
# Bracket on the jump itself; the solver works on log(rate * jump), shifted
# per atom so the jump stays inside this window.
_JUMP_LO = 1e-300
_JUMP_HI = 1e6


@dataclass(frozen=True)
class TruncationPolicy:
    """Where to cut the small-jump tail of a measure draw.

    Jumps are kept while the matching untilted bound exceeds `epsilon`;
    `max_atoms` guards against configurations where that takes absurdly
    many atoms (a sign that epsilon is too small for the measure at hand).
    """

    epsilon: float = 1e-4
    max_atoms: int = 1_000_000

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_atoms < 1:
            raise ConfigError(f"max_atoms must be at least 1, got {self.max_atoms}")


@dataclass(frozen=True)
class AtomicMeasure:
    """A purely atomic measure: paired locations and strictly positive masses.

    `truncation_bound` reports an upper bound on the expected mass the
    small-jump cutoff discarded while producing the draw (0.0 for exact
    parts).  `total_mass` is computed once at construction.
    """

    locations: np.ndarray
    masses: np.ndarray
    truncation_bound: float = 0.0

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        mass = np.asarray(self.masses, dtype=float)
        if loc.ndim != 1 or mass.ndim != 1 or loc.size != mass.size:
            raise ValueError("locations and masses must be 1-d arrays of equal length")
        if not np.all(np.isfinite(loc)) or np.any(loc < 0.0):
            raise ValueError("locations must be finite and non-negative")
        if not np.all(np.isfinite(mass)) or np.any(mass <= 0.0):
            raise ValueError("masses must be finite and strictly positive")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "masses", mass)
        object.__setattr__(self, "_total", float(mass.sum()))

    @property
    def total_mass(self) -> float:
        return self._total

    def __len__(self) -> int:
        return self.locations.size


# ---------------------------------------------------------------------------
# Truncation algebra
# ---------------------------------------------------------------------------

def _unit_prior_tail(measure: GenGammaMeasure, level: float) -> float:
    """Mass the untilted jump intensity puts above `level`, per unit base."""
    s, b = measure.sigma, measure.beta
    if b > 0.0:
        return float(b**s * gammainc_upper(-s, b * level) * np.exp(-gammaln(1.0 - s)))
    return float(level ** (-s) * np.exp(-gammaln(1.0 - s)) / s)


def truncation_threshold(measure: GenGammaMeasure, base_total: float, epsilon: float) -> float:
    """Arrival count past which every remaining untilted jump falls below epsilon.

    The arrival at the threshold solves the untilted jump equation at
    exactly epsilon, so retained jumps (arrivals at or below it) are the
    ones whose bounding sequence still exceeds the cutoff.
    """
    return base_total * _unit_prior_tail(measure, epsilon)


def _discard_bound(measure: GenGammaMeasure, base_total: float, epsilon: float) -> float:
    """Upper bound on the expected mass carried by jumps below epsilon.

    Uses the untilted intensity, which dominates every tilted one, so the
    bound holds for any exposure configuration.
    """
    s, b = measure.sigma, measure.beta
    if b > 0.0:
        lower = np.exp(gammaln(1.0 - s)) - gammainc_upper(1.0 - s, b * epsilon)
        return float(base_total * b ** (s - 1.0) * lower * np.exp(-gammaln(1.0 - s)))
    return float(base_total * epsilon ** (1.0 - s) / ((1.0 - s) * np.exp(gammaln(1.0 - s))))


def _arrival_times(rng, threshold: float, max_atoms: int) -> np.ndarray:
    """Unit-rate Poisson arrival times up to `threshold`.

    Exponential gaps are drawn in doubling blocks (64, 128, ...) so that a
    smaller threshold consumes a prefix of the same arrival sequence for a
    fixed seed: shrinking epsilon can only append atoms, never reshuffle.
    """
    if threshold <= 0.0:
        return np.empty(0)
    chunks = []
    last = 0.0
    size = _FIRST_BLOCK
    drawn = 0
    while True:
        gaps = rng.standard_exponential(size)
        arrivals = last + np.cumsum(gaps)
        chunks.append(arrivals)
        drawn += size
        if arrivals[-1] > threshold:
            break
        if drawn > max_atoms:
            raise NumericError(
                f"jump truncation needs more than {max_atoms} atoms; raise epsilon"
            )
        last = float(arrivals[-1])
        size *= 2
    times = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
    count = int(np.searchsorted(times, threshold, side="right"))
    if count > max_atoms:
        raise NumericError(
            f"jump truncation needs {count} atoms, above the cap {max_atoms}; raise epsilon"
        )
    return times[:count]


# ---------------------------------------------------------------------------
# Jump equation solver
# ---------------------------------------------------------------------------

def _invert_upper_gamma_log(a: float, log_target, wlo, whi):
    """Solve log Gamma(a, e^w) = log_target for each element.

    Safeguarded Newton on w with the analytic slope
    d log Gamma(a, e^w) / dw = -exp(a w - e^w - log Gamma(a, e^w)),
    falling back to bisection on the supplied bracket for any element the
    Newton phase leaves unconverged.  Returns e^w (the linear solution).
    """
    log_target = np.asarray(log_target, dtype=float)
    wlo = wlo.copy()
    whi = whi.copy()
    # Start from the asymptote the root actually lives on: targets below the
    # value at y = 2 have large roots governed by Gamma(a,y) ~ y^(a-1) e^(-y),
    # the rest small roots governed by the power tail.  A bad side pick makes
    # Newton crawl linearly, so this split is what keeps iteration counts low.
    w = np.empty_like(log_target)
    big = log_target < float(log_gammainc_upper(a, 2.0))
    if big.any():
        y0 = np.maximum(-log_target[big], 2.0)
        for _ in range(2):
            y0 = np.maximum(-log_target[big] + (a - 1.0) * np.log(y0), 2.0)
        w[big] = np.log(y0)
    rest = ~big
    if rest.any():
        if a < 0.0:
            # Gamma(a,y) ~ -y^a / a for small y.
            est = (log_target[rest] + np.log(-a)) / a
        else:
            # a = 0: Gamma(0,y) ~ -log y - euler_gamma for small y.
            est = -np.euler_gamma - np.exp(log_target[rest])
        # The power tail overshoots wildly once the root nears the switch
        # point, so cap the start there; Newton closes the rest.
        w[rest] = np.minimum(est, np.log(2.0))
    w = np.clip(w, wlo, whi)
    converged = np.zeros(w.shape, dtype=bool)
    for _ in range(_NEWTON_MAX_ITER):
        y = np.exp(w)
        logval = log_gammainc_upper(a, y)
        g = logval - log_target
        too_small = g > 0.0
        active = ~converged
        wlo = np.where(active & too_small, np.maximum(wlo, w), wlo)
        whi = np.where(active & ~too_small, np.minimum(whi, w), whi)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            slope = -np.exp(a * w - y - logval)
            step = g / slope
            proposal = w - step
        # A vanishing step means the current point already solves the
        # equation; it must win over the bracket guard, whose endpoint can
        # equal w right after the tightening above.
        done = np.isfinite(step) & (np.abs(step) < _JUMP_TOL)
        off = ~done & (
            ~np.isfinite(proposal) | (proposal <= wlo) | (proposal >= whi)
        )
        proposal = np.where(off, 0.5 * (wlo + whi), proposal)
        w = np.where(active, proposal, w)
        converged |= done
        if converged.all():
            break
    if not converged.all():
        rest = ~converged
        lo, hi = wlo[rest], whi[rest]
        target = log_target[rest]
        for _ in range(_BISECT_ITER):
            mid = 0.5 * (lo + hi)
            gm = log_gammainc_upper(a, np.exp(mid)) - target
            lo = np.where(gm > 0.0, mid, lo)
            hi = np.where(gm > 0.0, hi, mid)
        w[rest] = 0.5 * (lo + hi)
    return np.exp(w)


def _solve_jumps(measure: GenGammaMeasure, rates, arrivals, base_total: float) -> np.ndarray:
    """Masses whose tilted tail at each arrival equals arrival / base_total.

    `rates` holds the per-atom tilted decay rate (prior rate plus local
    exposure terms).  Zero rates, possible only for strictly-stable priors
    beyond the data window, use the closed power-law inverse.
    """
    s = measure.sigma
    rates = np.asarray(rates, dtype=float)
    arrivals = np.asarray(arrivals, dtype=float)
    out = np.empty_like(rates)
    if out.size == 0:
        return out
    unit = arrivals / base_total
    zero = rates == 0.0
    if zero.any():
        out[zero] = (s * np.exp(gammaln(1.0 - s)) * unit[zero]) ** (-1.0 / s)
    if (~zero).any():
        c = rates[~zero]
        log_target = np.log(unit[~zero]) + gammaln(1.0 - s) - s * np.log(c)
        shift = np.log(c)
        y = _invert_upper_gamma_log(
            -s, log_target, np.log(_JUMP_LO) + shift, np.log(_JUMP_HI) + shift
        )
        out[~zero] = y / c
    return out


# ---------------------------------------------------------------------------
# Measure draws
# ---------------------------------------------------------------------------

def root_fixed_atom_rates(state, agg, params) -> np.ndarray:
    """Posterior decay rate of the shared-level mass at each cluster location.

    The prior rate picks up the cause-level Laplace exponent of the total
    exposure, once per cause (all causes are exchangeable at this level).
    """
    if params.independent_mode:
        raise ConfigError("the shared root measure exists only in hierarchical mode")
    exposure = agg.exposure(state.locations)
    return params.beta0 + state.D * laplace_exponent(params.bottom(), exposure)


def sample_fixed_atoms_root(state, agg, params, rng) -> np.ndarray:
    """Shared-level masses at the cluster locations, one gamma draw per cluster."""
    rates = root_fixed_atom_rates(state, agg, params)
    shapes = state.clu_r[: state.k].astype(float) - params.sigma0
    return rng.gamma(shapes, 1.0 / rates)


def sample_root_measure(state, agg, params, policy, rng) -> AtomicMeasure:
    """One draw of the shared measure: random jumps plus cluster fixed atoms.

    Random locations are uniform on the observation window; arrival times
    come from `_arrival_times` (block-doubled exponential gaps), then the
    jump equation is solved at the tilted per-location rate.  Draw order:
    arrival gaps, then locations, then the fixed-atom gammas.
    """
    if params.independent_mode:
        raise ConfigError("the shared root measure exists only in hierarchical mode")
    root = params.root()
    base_total = params.theta * state.t_max
    threshold = truncation_threshold(root, base_total, policy.epsilon)
    arrivals = _arrival_times(rng, threshold, policy.max_atoms)
    x = rng.uniform(0.0, state.t_max, arrivals.size)
    rates = params.beta0 + state.D * laplace_exponent(params.bottom(), agg.exposure(x))
    jumps = _solve_jumps(root, rates, arrivals, base_total)
    fixed = sample_fixed_atoms_root(state, agg, params, rng)
    locations = np.concatenate([x, state.locations])
    masses = np.concatenate([jumps, fixed])
    keep = masses > 0.0
    return AtomicMeasure(
        locations[keep],
        masses[keep],
        truncation_bound=_discard_bound(root, base_total, policy.epsilon),
    )


def sample_bottom_measure(cause, base, state, agg, params, policy, rng) -> AtomicMeasure:
    """One draw of the measure for `cause` (1-based label).

    In hierarchical mode `base` is the shared-measure draw, and random
    locations are sampled from its atoms proportionally to mass (ties with
    the fixed atoms are expected).  In independent mode pass `base=None`:
    the base is then continuous uniform with total theta * t_max.  Fixed
    atoms sit at the clusters the cause occupies, with the within-cluster
    masses drawn as one gamma group sum per cluster (only the totals ever
    enter the curves).  Draw order: arrival gaps, then locations, then the
    group-sum gammas.
    """
    d = int(cause) - 1
    if not 0 <= d < state.D:
        raise ConfigError(f"cause must lie in 1..{state.D}, got {cause}")
    if params.independent_mode != (base is None):
        raise ConfigError("pass base=None exactly when the model is independent")
    bottom = params.bottom()
    base_total = params.theta * state.t_max if base is None else base.total_mass
    threshold = truncation_threshold(bottom, base_total, policy.epsilon)
    arrivals = _arrival_times(rng, threshold, policy.max_atoms)
    if base is None:
        x = rng.uniform(0.0, state.t_max, arrivals.size)
    elif arrivals.size:
        cum = np.cumsum(base.masses)
        idx = np.searchsorted(cum, rng.random(arrivals.size) * base_total, side="right")
        x = base.locations[np.minimum(idx, len(base) - 1)]
    else:
        x = np.empty(0)
    rates = params.beta + agg.exposure(x)
    jumps = _solve_jumps(bottom, rates, arrivals, base_total)

    k = state.k
    occupied = state.clu_nd[:k, d] > 0
    shapes = (
        state.clu_nd[:k, d][occupied].astype(float)
        - state.clu_rd[:k, d][occupied].astype(float) * params.sigma
    )
    fixed_loc = state.locations[occupied]
    fixed = rng.gamma(shapes, 1.0 / (params.beta + agg.exposure(fixed_loc)))

    locations = np.concatenate([x, fixed_loc])
    masses = np.concatenate([jumps, fixed])
    keep = masses > 0.0
    return AtomicMeasure(
        locations[keep],
        masses[keep],
        truncation_bound=_discard_bound(bottom, base_total, policy.epsilon),
    )


# ---------------------------------------------------------------------------
# Curves induced by one joint draw
# ---------------------------------------------------------------------------

def functional_draw(measures, spec, times) -> EstimateGrid:
    """Curves induced by one joint draw of the cause-specific measures.

    Survival comes from the closed-form kernel primitive summed over every
    atom of every cause; cause incidences multiply the cause hazard by the
    common survival; subdistributions integrate incidence by cumulative
    trapezoid; the prediction curve is the hazard share of each cause, with
    a uniform fallback where every hazard vanishes.
    """
    times = np.asarray(times, dtype=float)
    num_causes = len(measures)
    hazard = np.zeros((num_causes, times.size))
    cumulative = np.zeros((num_causes, times.size))
    for d, mu in enumerate(measures):
        if len(mu) == 0:
            continue
        tcol = times[:, None]
        xrow = mu.locations[None, :]
        hazard[d] = eval_kernel(spec, tcol, xrow) @ mu.masses
        cumulative[d] = kernel_primitive(spec, tcol, xrow) @ mu.masses
    survival = np.exp(-cumulative.sum(axis=0))
    incidence = hazard * survival
    subdistribution = cumulative_trapezoid(incidence, times, axis=1, initial=0.0)
    total = hazard.sum(axis=0)
    safe = np.where(total > 0.0, total, 1.0)
    prediction = np.where(total > 0.0, hazard / safe, 1.0 / num_causes)
    return EstimateGrid(
        times=times,
        survival=survival,
        incidence=incidence,
        subdistribution=subdistribution,
        prediction=prediction,
    )
