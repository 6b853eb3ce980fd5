"""Domain types shared across the package: observations, model configuration,
hyperpriors, and the estimate-grid output container, plus CSV/JSON plumbing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .kernels import DykstraLaud, KernelSpec, OrnsteinUhlenbeck, Rectangular
from .levy import GenGammaMeasure

__all__ = [
    "ConfigError",
    "DataFormatError",
    "NumericError",
    "Observation",
    "Dataset",
    "HCRMParams",
    "HyperPriors",
    "EstimateGrid",
    "validate_config",
    "read_dataset",
    "write_dataset",
]


class ConfigError(ValueError):
    """Model/dataset combination fails a validity requirement."""


class DataFormatError(ValueError):
    """Input file violates the documented dialect."""


class NumericError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


@dataclass(frozen=True)
class Observation:
    """One subject: follow-up time, event cause (0 = right-censored), predictors."""

    time: float
    cause: int
    predictors: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.time > 0.0:
            raise DataFormatError(f"time must be positive, got {self.time}")
        if self.cause < 0:
            raise DataFormatError(f"cause must be >= 0, got {self.cause}")


@dataclass(frozen=True)
class Dataset:
    """A competing-risks sample with D causes on the latent window [0, t_max].

    t_max defaults to the largest observed time; its coverage of the data
    (and the presence of at least one event for fitting) is checked by
    `validate_config`, not here, so malformed configurations surface at the
    fitting gate with a clear message.
    """

    observations: Tuple[Observation, ...]
    num_causes: int
    t_max: float

    def __post_init__(self):
        arities = {len(o.predictors) for o in self.observations}
        if len(arities) > 1:
            raise DataFormatError(f"inconsistent predictor arity: {sorted(arities)}")
        for o in self.observations:
            if o.cause > self.num_causes:
                raise DataFormatError(
                    f"cause {o.cause} exceeds declared cause count {self.num_causes}"
                )

    @classmethod
    def from_arrays(cls, times, causes, predictors=None, num_causes=None, t_max=None):
        times = np.asarray(times, dtype=float)
        causes = np.asarray(causes, dtype=int)
        if predictors is None:
            predictors = np.zeros((times.size, 0))
        predictors = np.asarray(predictors, dtype=float)
        obs = tuple(
            Observation(float(t), int(c), tuple(float(v) for v in z))
            for t, c, z in zip(times, causes, predictors)
        )
        if num_causes is None:
            num_causes = max(int(causes.max(initial=1)), 1)
        if t_max is None:
            t_max = float(times.max(initial=0.0))
        return cls(obs, int(num_causes), float(t_max))

    @property
    def n(self) -> int:
        return len(self.observations)

    @property
    def times(self) -> np.ndarray:
        return np.array([o.time for o in self.observations])

    @property
    def causes(self) -> np.ndarray:
        return np.array([o.cause for o in self.observations], dtype=int)

    @property
    def predictor_matrix(self) -> np.ndarray:
        if not self.observations:
            return np.zeros((0, 0))
        return np.array([o.predictors for o in self.observations], dtype=float)

    @property
    def censored_mask(self) -> np.ndarray:
        return self.causes == 0

    @property
    def num_events(self) -> int:
        return int(np.count_nonzero(self.causes > 0))


@dataclass(frozen=True)
class HCRMParams:
    """Hierarchical random-measure hyperparameters.

    (sigma0, beta0) govern the shared root measure, (sigma, beta) the
    cause-specific measures drawn around it, theta the total mass rate of
    the base intensity on [0, t_max].  `independent_mode` drops the shared
    root and fits one unlinked measure per cause.
    """

    sigma: float = 0.25
    sigma0: float = 0.25
    beta: float = 1.0
    beta0: float = 1.0
    theta: float = 1.0
    independent_mode: bool = False

    def __post_init__(self):
        for name, s, b in (("", self.sigma, self.beta), ("0", self.sigma0, self.beta0)):
            if not 0.0 <= s < 1.0:
                raise ConfigError(f"sigma{name} must lie in [0, 1), got {s}")
            if b < 0.0:
                raise ConfigError(f"beta{name} must be non-negative, got {b}")
            if s == 0.0 and b == 0.0:
                raise ConfigError(
                    f"sigma{name} = 0 with beta{name} = 0 is not infinitely active"
                )
        if self.theta <= 0.0:
            raise ConfigError(f"theta must be positive, got {self.theta}")

    def bottom(self) -> GenGammaMeasure:
        """Jump intensity of the cause-level measures."""
        return GenGammaMeasure(self.sigma, self.beta)

    def root(self) -> GenGammaMeasure:
        """Jump intensity of the shared root measure."""
        return GenGammaMeasure(self.sigma0, self.beta0)


@dataclass(frozen=True)
class HyperPriors:
    """Priors on theta, the kernel scale parameter, and predictor coefficients.

    theta ~ Gamma(theta_shape, theta_rate) (shape 1 recovers exponential),
    the kernel scale (gamma or kappa) ~ Exponential(kernel_rate), and each
    predictor coefficient ~ Normal(0, eta_variance).  Fixed flags freeze a
    parameter at its initial value.
    """

    theta_shape: float = 1.0
    theta_rate: float = 0.1
    kernel_rate: float = 0.1
    eta_variance: float = 100.0
    fix_theta: bool = False
    fix_kernel: bool = False

    def __post_init__(self):
        for name in ("theta_shape", "theta_rate", "kernel_rate", "eta_variance"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class EstimateGrid:
    """Estimates on a common time grid.

    survival[t]; incidence[d][t] and subdistribution[d][t] and
    prediction[d][t] indexed cause-first (cause d+1 at row d); bands is an
    optional mapping quantity -> {"lower": ..., "upper": ...} with shapes
    matching the point estimates.
    """

    times: np.ndarray
    survival: np.ndarray
    incidence: np.ndarray
    subdistribution: np.ndarray
    prediction: np.ndarray
    bands: Optional[dict] = None

    def validate(self, atol: float = 1e-9):
        t = np.asarray(self.times)
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("times must be strictly increasing")
        if np.any(np.diff(self.survival) > atol):
            raise ValueError("survival must be non-increasing")
        if np.any(np.diff(self.subdistribution, axis=1) < -atol):
            raise ValueError("subdistribution must be non-decreasing")
        colsum = self.prediction.sum(axis=0)
        if np.any(np.abs(colsum - 1.0) > 1e-12):
            raise ValueError("prediction columns must sum to one")
        if self.bands is not None:
            for key, band in self.bands.items():
                point = getattr(self, key)
                if np.any(np.asarray(band["lower"]) > point + atol) or np.any(
                    np.asarray(band["upper"]) < point - atol
                ):
                    raise ValueError(f"{key} band does not contain the point estimate")
        return self

    def to_json(self) -> str:
        payload = {
            "times": np.asarray(self.times).tolist(),
            "survival": np.asarray(self.survival).tolist(),
            "incidence": np.asarray(self.incidence).tolist(),
            "subdistribution": np.asarray(self.subdistribution).tolist(),
            "prediction": np.asarray(self.prediction).tolist(),
        }
        if self.bands is not None:
            payload["bands"] = {
                key: {
                    "lower": np.asarray(band["lower"]).tolist(),
                    "upper": np.asarray(band["upper"]).tolist(),
                }
                for key, band in self.bands.items()
            }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EstimateGrid":
        raw = json.loads(text)
        bands = None
        if "bands" in raw:
            bands = {
                key: {
                    "lower": np.asarray(band["lower"]),
                    "upper": np.asarray(band["upper"]),
                }
                for key, band in raw["bands"].items()
            }
        return cls(
            times=np.asarray(raw["times"]),
            survival=np.asarray(raw["survival"]),
            incidence=np.asarray(raw["incidence"]),
            subdistribution=np.asarray(raw["subdistribution"]),
            prediction=np.asarray(raw["prediction"]),
            bands=bands,
        )


def validate_config(dataset: Dataset, kernel: KernelSpec, params: HCRMParams) -> None:
    """Reject model/data combinations that cannot be fit.

    Checks: infinitely active measures at both levels, a latent window
    covering the data, a valid cause count, at least one event, and a known
    kernel family with positive parameters.  Raises ConfigError; returns
    None on success.  Pure function of its arguments.
    """
    if dataset.num_causes < 1:
        raise ConfigError(f"need at least one cause, got {dataset.num_causes}")
    if dataset.n == 0:
        raise ConfigError("dataset is empty")
    t_top = float(dataset.times.max())
    if dataset.t_max < t_top:
        raise ConfigError(
            f"latent window [0, {dataset.t_max}] does not cover the largest "
            f"observed time {t_top}"
        )
    if dataset.t_max <= 0.0:
        raise ConfigError("t_max must be positive")
    if dataset.num_events == 0:
        raise ConfigError("no uncensored events; nothing to fit")
    if not isinstance(kernel, (DykstraLaud, Rectangular, OrnsteinUhlenbeck)):
        raise ConfigError(f"unknown kernel spec {kernel!r}")
    # HCRMParams enforces its own invariants at construction; re-assert the
    # activity condition here so hand-built objects cannot slip through.
    for s, b in ((params.sigma, params.beta), (params.sigma0, params.beta0)):
        if s == 0.0 and b == 0.0:
            raise ConfigError("not infinitely active: sigma = 0 requires beta > 0")


def read_dataset(
    path, num_causes: Optional[int] = None, t_max: Optional[float] = None
) -> Dataset:
    """Read `time,cause[,z1,z2,...]` CSV (header optional) into a Dataset.

    Cause 0 marks right censoring.  The cause count is inferred as the
    largest cause seen unless given explicitly; rows with a cause above an
    explicit count are rejected.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if lineno == 1 and _looks_like_header(cells):
                continue
            try:
                time = float(cells[0])
                cause = int(cells[1])
                preds = tuple(float(c) for c in cells[2:])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed row {cells!r}") from exc
            if time <= 0.0:
                raise DataFormatError(f"{path}:{lineno}: time must be positive, got {time}")
            if cause < 0:
                raise DataFormatError(f"{path}:{lineno}: cause must be >= 0, got {cause}")
            rows.append((time, cause, preds))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arities = {len(p) for _, _, p in rows}
    if len(arities) > 1:
        raise DataFormatError(f"{path}: inconsistent predictor arity {sorted(arities)}")
    max_cause = max(c for _, c, _ in rows)
    if num_causes is None:
        num_causes = max(max_cause, 1)
    elif max_cause > num_causes:
        raise DataFormatError(
            f"{path}: cause {max_cause} exceeds declared cause count {num_causes}"
        )
    obs = tuple(Observation(t, c, p) for t, c, p in rows)
    if t_max is None:
        t_max = max(t for t, _, _ in rows)
    return Dataset(obs, int(num_causes), float(t_max))


def write_dataset(dataset: Dataset, path) -> None:
    """Write the CSV dialect read_dataset accepts; floats round-trip exactly."""
    arity = len(dataset.observations[0].predictors) if dataset.observations else 0
    header = ["time", "cause"] + [f"z{i + 1}" for i in range(arity)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for o in dataset.observations:
            writer.writerow(
                [repr(float(o.time)), int(o.cause)] + [repr(float(z)) for z in o.predictors]
            )


def _looks_like_header(cells) -> bool:
    try:
        float(cells[0])
        return False
    except ValueError:
        return True
