"""Synthetic competing-risks data and the matching ground-truth curves.

Subjects carry one independent latent time per cause; the observed pair
is the smallest latent time and its cause, optionally overridden by an
independent censoring time (cause 0).  Latent laws are Weibull, possibly
shifted, or finite mixtures of them.  `true_curves` returns the curves
such a model implies, for benchmarking estimates against the generating
truth on a shared grid.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .data import ConfigError, Dataset, EstimateGrid

__all__ = [
    "LatentTimesModel",
    "Mixture",
    "SCENARIOS",
    "Weibull",
    "generate",
    "scenario_model",
    "true_curves",
    "truth_grid",
]


@dataclass(frozen=True)
class Weibull:
    """Weibull law with unit default scale; `shift` moves the support start."""

    shape: float
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.shape <= 0.0 or self.scale <= 0.0:
            raise ConfigError(
                f"shape and scale must be positive, got ({self.shape}, {self.scale})"
            )
        if self.shift < 0.0:
            raise ConfigError(f"shift must be non-negative, got {self.shift}")

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        z = np.maximum(t - self.shift, 0.0) / self.scale
        with np.errstate(divide="ignore"):
            density = (self.shape / self.scale) * z ** (self.shape - 1.0) * np.exp(-(z**self.shape))
        return np.where(t >= self.shift, density, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        z = np.maximum(t - self.shift, 0.0) / self.scale
        return -np.expm1(-(z**self.shape))

    def sf(self, t):
        # Direct exp keeps relative accuracy deep in the tail, where 1 - cdf
        # would round to zero while the density is still positive.
        t = np.asarray(t, dtype=float)
        z = np.maximum(t - self.shift, 0.0) / self.scale
        return np.exp(-(z**self.shape))

    def upper_quantile(self, eps: float) -> float:
        return self.shift + self.scale * (-np.log(eps)) ** (1.0 / self.shape)

    def support_starts(self) -> Tuple[float, ...]:
        return (self.shift,)

    def sample(self, rng, n: int) -> np.ndarray:
        return self.shift + self.scale * rng.weibull(self.shape, size=n)


@dataclass(frozen=True)
class Mixture:
    """Finite mixture of latent-time laws with fixed weights."""

    weights: Tuple[float, ...]
    components: Tuple[Weibull, ...]

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", tuple(self.components))
        if len(weights) != len(self.components) or not self.components:
            raise ConfigError("need one weight per mixture component")
        if any(w <= 0.0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
            raise ConfigError(f"weights must be positive and sum to one, got {weights}")

    def pdf(self, t):
        return sum(w * law.pdf(t) for w, law in zip(self.weights, self.components))

    def cdf(self, t):
        return sum(w * law.cdf(t) for w, law in zip(self.weights, self.components))

    def sf(self, t):
        return sum(w * law.sf(t) for w, law in zip(self.weights, self.components))

    def upper_quantile(self, eps: float) -> float:
        return max(law.upper_quantile(eps) for law in self.components)

    def support_starts(self) -> Tuple[float, ...]:
        return tuple(edge for law in self.components for edge in law.support_starts())

    def sample(self, rng, n: int) -> np.ndarray:
        picks = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty(n)
        for j, law in enumerate(self.components):
            chosen = picks == j
            out[chosen] = law.sample(rng, int(chosen.sum()))
        return out


@dataclass(frozen=True)
class LatentTimesModel:
    """Independent latent time per cause, with optional independent censoring."""

    causes: Tuple
    censoring: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, "causes", tuple(self.causes))
        if not self.causes:
            raise ConfigError("need at least one cause law")


def generate(model: LatentTimesModel, n: int, seed) -> Dataset:
    """Draw a dataset of n subjects: smallest latent time wins, censoring last."""
    if n < 1:
        raise ConfigError(f"need at least one subject, got {n}")
    rng = np.random.default_rng(seed)
    latent = np.column_stack([law.sample(rng, n) for law in model.causes])
    times = latent.min(axis=1)
    causes = latent.argmin(axis=1) + 1
    if model.censoring is not None:
        cutoff = model.censoring.sample(rng, n)
        censored = cutoff < times
        times = np.where(censored, cutoff, times)
        causes = np.where(censored, 0, causes)
    return Dataset.from_arrays(times, causes, num_causes=len(model.causes))


def _cause_probability(model: LatentTimesModel, index: int) -> float:
    """Mass of the cause: integral of its incidence density to a far horizon."""
    horizon = max(law.upper_quantile(1e-8) for law in model.causes)
    edges = sorted(
        {edge for law in model.causes for edge in law.support_starts() if 0.0 < edge < horizon}
    )

    def incidence(t):
        value = model.causes[index].pdf(t)
        for other, law in enumerate(model.causes):
            if other != index:
                value = value * law.sf(t)
        return value

    mass, _ = quad(incidence, 0.0, horizon, points=edges or None, limit=200)
    return mass


def true_curves(model: LatentTimesModel, grid) -> dict:
    """Curves the generating model implies, on the given grid.

    Survival multiplies the per-cause tails (the latent times are
    independent); hazards divide each cause's density by its own tail;
    incidence is hazard times survival; subdistributions integrate
    incidence by cumulative trapezoid; cause probabilities integrate the
    incidence densities to a far horizon by adaptive quadrature.
    """
    grid = np.asarray(grid, dtype=float)
    density = np.vstack([law.pdf(grid) for law in model.causes])
    tail = np.vstack([law.sf(grid) for law in model.causes])
    survival = tail.prod(axis=0)
    hazard = density / tail
    # The product over the competitors' tails, not hazard times survival:
    # this form stays finite even where one tail has underflowed to zero.
    incidence = np.vstack(
        [
            density[d] * np.prod(np.delete(tail, d, axis=0), axis=0)
            for d in range(len(model.causes))
        ]
    )
    subdistribution = cumulative_trapezoid(incidence, grid, axis=-1, initial=0.0)
    pi = np.array([_cause_probability(model, d) for d in range(len(model.causes))])
    return {
        "survival": survival,
        "hazard": hazard,
        "incidence": incidence,
        "subdistribution": subdistribution,
        "pi": pi,
    }


def truth_grid(model: LatentTimesModel, grid) -> EstimateGrid:
    """`true_curves` packed as an EstimateGrid, for the comparison metrics.

    The prediction rows are each cause's share of the total incidence, with
    the uniform fallback where every density vanishes (e.g. t = 0).
    """
    curves = true_curves(model, grid)
    incidence = curves["incidence"]
    total = incidence.sum(axis=0)
    safe = np.where(total > 0.0, total, 1.0)
    prediction = np.where(
        total[None, :] > 0.0, incidence / safe[None, :], 1.0 / len(model.causes)
    )
    return EstimateGrid(
        times=np.asarray(grid, dtype=float),
        survival=curves["survival"],
        incidence=incidence,
        subdistribution=curves["subdistribution"],
        prediction=prediction,
    )


def three_weibull_model() -> LatentTimesModel:
    """Three causes with unit-scale increasing-hazard laws of spread shapes."""
    return LatentTimesModel(causes=(Weibull(1.2), Weibull(1.6), Weibull(2.4)))


def two_weibull_model() -> LatentTimesModel:
    """Two causes, mild versus steep increasing hazard."""
    return LatentTimesModel(causes=(Weibull(1.2), Weibull(2.4)))


def shared_component_model() -> LatentTimesModel:
    """Three causes drawing half their mass from one common bimodal law.

    Each cause mixes its own law with a shared component that is itself an
    even blend of an early mild law and a late steep one, inducing strong
    dependence between the cause-specific hazards.
    """

    def cause(shape):
        return Mixture(
            weights=(0.5, 0.25, 0.25),
            components=(Weibull(shape), Weibull(1.2), Weibull(3.0, shift=1.0)),
        )

    return LatentTimesModel(causes=(cause(1.5), cause(2.0), cause(2.5)))


SCENARIOS = {
    "weibull3": three_weibull_model,
    "mixture3": shared_component_model,
    "weibull2": two_weibull_model,
}


def scenario_model(name: str) -> LatentTimesModel:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; pick from {sorted(SCENARIOS)}")
    return SCENARIOS[name]()
