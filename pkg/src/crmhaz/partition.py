"""The nested latent partition and its exact marginal log-law.

Uncensored observations are grouped twice: into clusters sharing a latent
location, and within each (cluster, cause) pair into tables.  Censored
observations never join the partition; they influence the law only through
the exposure function.  State lives in flat numpy arrays (cluster slots
0..k-1 and table slots 0..m-1 active, compacted left on deletion so slot
order is stable and deterministic), which the compiled sweep mutates in
place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import HCRMParams
from .kernels import KernelAggregate, Rectangular, eval_kernel, log_kernel_product
from .levy import laplace_exponent, log_cumulant

__all__ = [
    "ExistingTable",
    "NewTable",
    "NewCluster",
    "LatentState",
    "audit_state",
    "base_measure_grid",
    "base_measure_integral",
    "log_marginal",
]

# Uniform grid sizes for the two composite-trapezoid contexts: the coarse one
# drives per-sweep weight integrals, the fine one the base-measure integral
# inside the marginal law (where relative accuracy ~1e-7 is needed; the
# integrand is piecewise smooth between observed-time knots, so the
# knot-augmented trapezoid error is O(h^2) with a small constant).
SWEEP_GRID_SIZE = 512
LAW_GRID_SIZE = 4096


@dataclass(frozen=True)
class ExistingTable:
    """Join table number `index` (0-based) among cause-`cause` tables of cluster `cluster`."""

    cluster: int
    cause: int
    index: int


@dataclass(frozen=True)
class NewTable:
    """Open a new table of the observation's own cause in an existing cluster."""

    cluster: int


@dataclass(frozen=True)
class NewCluster:
    """Open a new cluster at the given latent location (with one new table)."""

    location: float


class LatentState:
    """Flat-array nested partition over a fixed observation set.

    Arrays (active prefixes of length k and m):
      obs_cluster[i], obs_table[i]: assignment of observation i (-1 if none);
      clu_loc[j], clu_n[j], clu_r[j]: cluster location, member count, table count;
      clu_nd[j, d], clu_rd[j, d]: per-cause member and table counts;
      tab_cluster[t], tab_cause[t], tab_q[t]: table membership and size.
    Causes are stored 0-based in table/cluster arrays (cause label d+1).
    """

    def __init__(self, n_obs: int, num_causes: int, t_max: float):
        self.n_obs = int(n_obs)
        self.D = int(num_causes)
        self.t_max = float(t_max)
        self.obs_cluster = np.full(self.n_obs, -1, dtype=np.int64)
        self.obs_table = np.full(self.n_obs, -1, dtype=np.int64)
        cap = 16
        self.k = 0
        self.clu_loc = np.zeros(cap)
        self.clu_n = np.zeros(cap, dtype=np.int64)
        self.clu_r = np.zeros(cap, dtype=np.int64)
        self.clu_nd = np.zeros((cap, self.D), dtype=np.int64)
        self.clu_rd = np.zeros((cap, self.D), dtype=np.int64)
        self.m = 0
        self.tab_cluster = np.zeros(cap, dtype=np.int64)
        self.tab_cause = np.zeros(cap, dtype=np.int64)
        self.tab_q = np.zeros(cap, dtype=np.int64)

    # -- capacity -----------------------------------------------------------

    @staticmethod
    def _grown(arr: np.ndarray) -> np.ndarray:
        out = np.zeros((arr.shape[0] * 2,) + arr.shape[1:], dtype=arr.dtype)
        out[: arr.shape[0]] = arr
        return out

    def _grow_clusters(self):
        for name in ("clu_loc", "clu_n", "clu_r", "clu_nd", "clu_rd"):
            setattr(self, name, self._grown(getattr(self, name)))

    def _grow_tables(self):
        for name in ("tab_cluster", "tab_cause", "tab_q"):
            setattr(self, name, self._grown(getattr(self, name)))

    def copy(self) -> "LatentState":
        out = LatentState.__new__(LatentState)
        out.n_obs, out.D, out.t_max = self.n_obs, self.D, self.t_max
        out.k, out.m = self.k, self.m
        for name in (
            "obs_cluster", "obs_table", "clu_loc", "clu_n", "clu_r",
            "clu_nd", "clu_rd", "tab_cluster", "tab_cause", "tab_q",
        ):
            setattr(out, name, getattr(self, name).copy())
        return out

    # -- lookups ------------------------------------------------------------

    @property
    def locations(self) -> np.ndarray:
        return self.clu_loc[: self.k]

    def tables_of(self, cluster: int, cause0: int) -> np.ndarray:
        """Global table ids of cause `cause0` (0-based) in `cluster`, slot order."""
        t = np.arange(self.m)
        return t[(self.tab_cluster[: self.m] == cluster) & (self.tab_cause[: self.m] == cause0)]

    def _resolve_table(self, choice: ExistingTable) -> int:
        ids = self.tables_of(choice.cluster, choice.cause)
        if choice.index >= ids.size:
            raise IndexError(
                f"cluster {choice.cluster} has {ids.size} tables of cause "
                f"{choice.cause}, not {choice.index + 1}"
            )
        return int(ids[choice.index])

    # -- mutations ----------------------------------------------------------

    def remove_observation(self, i: int) -> None:
        """Detach observation i; deletes its table/cluster if left empty."""
        j = int(self.obs_cluster[i])
        t = int(self.obs_table[i])
        if j < 0 or t < 0:
            raise ValueError(f"observation {i} is not assigned")
        d = int(self.tab_cause[t])
        self.tab_q[t] -= 1
        self.clu_n[j] -= 1
        self.clu_nd[j, d] -= 1
        self.obs_cluster[i] = -1
        self.obs_table[i] = -1
        if self.tab_q[t] == 0:
            self.clu_r[j] -= 1
            self.clu_rd[j, d] -= 1
            self._delete_table(t)
        if self.clu_n[j] == 0:
            self._delete_cluster(j)

    def _delete_table(self, t: int) -> None:
        m = self.m
        self.tab_cluster[t : m - 1] = self.tab_cluster[t + 1 : m]
        self.tab_cause[t : m - 1] = self.tab_cause[t + 1 : m]
        self.tab_q[t : m - 1] = self.tab_q[t + 1 : m]
        self.m = m - 1
        shift = self.obs_table > t
        self.obs_table[shift] -= 1

    def _delete_cluster(self, j: int) -> None:
        k = self.k
        self.clu_loc[j : k - 1] = self.clu_loc[j + 1 : k]
        self.clu_n[j : k - 1] = self.clu_n[j + 1 : k]
        self.clu_r[j : k - 1] = self.clu_r[j + 1 : k]
        self.clu_nd[j : k - 1] = self.clu_nd[j + 1 : k]
        self.clu_rd[j : k - 1] = self.clu_rd[j + 1 : k]
        self.k = k - 1
        self.obs_cluster[self.obs_cluster > j] -= 1
        self.tab_cluster[: self.m][self.tab_cluster[: self.m] > j] -= 1

    def insert_observation(self, i: int, cause: int, choice) -> None:
        """Attach observation i (event cause 1..D) according to `choice`."""
        if not 1 <= cause <= self.D:
            raise ValueError(f"cause must be in 1..{self.D}, got {cause}")
        if self.obs_cluster[i] >= 0:
            raise ValueError(f"observation {i} is already assigned")
        d = cause - 1
        if isinstance(choice, ExistingTable):
            if choice.cause != d:
                raise ValueError(
                    f"cannot seat a cause-{cause} observation at a table of "
                    f"cause {choice.cause + 1}"
                )
            t = self._resolve_table(choice)
            j = int(self.tab_cluster[t])
            self.tab_q[t] += 1
        elif isinstance(choice, NewTable):
            j = int(choice.cluster)
            if not 0 <= j < self.k:
                raise IndexError(f"no cluster {j}")
            t = self._append_table(j, d)
            self.clu_r[j] += 1
            self.clu_rd[j, d] += 1
        elif isinstance(choice, NewCluster):
            x = float(choice.location)
            if not 0.0 < x <= self.t_max:
                raise ValueError(f"location {x} outside (0, {self.t_max}]")
            j = self._append_cluster(x)
            t = self._append_table(j, d)
            self.clu_r[j] = 1
            self.clu_rd[j, d] = 1
        else:
            raise TypeError(f"unknown choice {choice!r}")
        self.clu_n[j] += 1
        self.clu_nd[j, d] += 1
        self.obs_cluster[i] = j
        self.obs_table[i] = t

    def _append_table(self, j: int, d: int) -> int:
        if self.m == self.tab_cluster.size:
            self._grow_tables()
        t = self.m
        self.tab_cluster[t] = j
        self.tab_cause[t] = d
        self.tab_q[t] = 1
        self.m += 1
        return t

    def _append_cluster(self, x: float) -> int:
        if self.k == self.clu_loc.size:
            self._grow_clusters()
        j = self.k
        self.clu_loc[j] = x
        self.clu_n[j] = 0
        self.clu_r[j] = 0
        self.clu_nd[j, :] = 0
        self.clu_rd[j, :] = 0
        self.k += 1
        return j

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_obs": self.n_obs,
                "num_causes": self.D,
                "t_max": self.t_max,
                "locations": self.clu_loc[: self.k].tolist(),
                "tables": [
                    [int(self.tab_cluster[t]), int(self.tab_cause[t])]
                    for t in range(self.m)
                ],
                "assignments": np.stack([self.obs_cluster, self.obs_table]).tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LatentState":
        raw = json.loads(text)
        state = cls(raw["n_obs"], raw["num_causes"], raw["t_max"])
        locs = raw["locations"]
        while state.clu_loc.size < max(len(locs), 1):
            state._grow_clusters()
        while state.tab_cluster.size < max(len(raw["tables"]), 1):
            state._grow_tables()
        state.k = len(locs)
        state.clu_loc[: state.k] = locs
        state.m = len(raw["tables"])
        for t, (j, d) in enumerate(raw["tables"]):
            state.tab_cluster[t] = j
            state.tab_cause[t] = d
            state.tab_q[t] = 0
        state.obs_cluster[:] = raw["assignments"][0]
        state.obs_table[:] = raw["assignments"][1]
        for i in range(state.n_obs):
            t = state.obs_table[i]
            if t >= 0:
                j = state.obs_cluster[i]
                d = state.tab_cause[t]
                state.tab_q[t] += 1
                state.clu_n[j] += 1
                state.clu_nd[j, d] += 1
        for t in range(state.m):
            j = state.tab_cluster[t]
            state.clu_r[j] += 1
            state.clu_rd[j, state.tab_cause[t]] += 1
        return state


def audit_state(state: LatentState, times, causes, spec) -> None:
    """Recompute every count and support condition from scratch; raise on drift.

    Intended after sweeps and deserialization: O(n + m + k) and allocation
    light, so it is cheap enough to run on every sweep of a smoke chain.
    """
    times = np.asarray(times, dtype=float)
    causes = np.asarray(causes, dtype=int)
    k, m = state.k, state.m
    if np.any(state.tab_q[:m] < 1):
        raise ValueError("empty table retained")
    if np.any(state.clu_n[:k] < 1):
        raise ValueError("empty cluster retained")
    if np.any((state.tab_cluster[:m] < 0) | (state.tab_cluster[:m] >= k)):
        raise ValueError("table points at a dead cluster")
    locs = state.clu_loc[:k]
    if np.any((locs <= 0.0) | (locs > state.t_max)):
        raise ValueError("cluster location outside (0, t_max]")
    nd = np.zeros((k, state.D), dtype=np.int64)
    rd = np.zeros((k, state.D), dtype=np.int64)
    q = np.zeros(m, dtype=np.int64)
    for i in range(state.n_obs):
        j, t = int(state.obs_cluster[i]), int(state.obs_table[i])
        if causes[i] == 0:
            if j != -1 or t != -1:
                raise ValueError(f"censored observation {i} sits in the partition")
            continue
        if j < 0 or t < 0 or j >= k or t >= m:
            raise ValueError(f"observation {i} has invalid assignment ({j}, {t})")
        if int(state.tab_cluster[t]) != j:
            raise ValueError(f"observation {i}: table {t} is not in cluster {j}")
        if int(state.tab_cause[t]) != causes[i] - 1:
            raise ValueError(f"observation {i}: cause mismatch at table {t}")
        if eval_kernel(spec, times[i], state.clu_loc[j]) <= 0.0:
            raise ValueError(f"observation {i}: kernel support violated at cluster {j}")
        q[t] += 1
        nd[j, causes[i] - 1] += 1
    for t in range(m):
        rd[int(state.tab_cluster[t]), int(state.tab_cause[t])] += 1
    if not np.array_equal(q, state.tab_q[:m]):
        raise ValueError("table sizes inconsistent with assignments")
    if not np.array_equal(nd, state.clu_nd[:k, :]):
        raise ValueError("per-cause member counts inconsistent")
    if not np.array_equal(rd, state.clu_rd[:k, :]):
        raise ValueError("per-cause table counts inconsistent")
    if not np.array_equal(nd.sum(axis=1), state.clu_n[:k]):
        raise ValueError("cluster sizes inconsistent")
    if not np.array_equal(rd.sum(axis=1), state.clu_r[:k]):
        raise ValueError("cluster table counts inconsistent")
    if int(nd.sum()) != int(np.count_nonzero(causes > 0)):
        raise ValueError("not every event observation is assigned")


def base_measure_grid(agg: KernelAggregate, t_max: float, num: int) -> np.ndarray:
    """Trapezoid nodes: uniform grid joined with every exposure kink.

    Observed times are kinks for all kernels; the window kernel adds kinks a
    bandwidth before each observed time.
    """
    knots = [np.linspace(0.0, t_max, num), agg.times]
    if isinstance(agg.spec, Rectangular):
        knots.append(agg.times - agg.spec.bandwidth)
    grid = np.unique(np.concatenate(knots))
    return grid[(grid >= 0.0) & (grid <= t_max)]


def base_measure_integral(
    agg: KernelAggregate,
    params: HCRMParams,
    num_causes: int,
    t_max: float,
    num: int = LAW_GRID_SIZE,
) -> float:
    """Integral over the window of the marginal-law exponent rate.

    Hierarchical: psi0(D * psi(exposure(x))); independent: D * psi(exposure(x)).
    """
    grid = base_measure_grid(agg, t_max, num)
    inner = num_causes * laplace_exponent(params.bottom(), agg.exposure(grid))
    if not params.independent_mode:
        inner = laplace_exponent(params.root(), inner)
    return float(np.trapezoid(inner, grid))


def log_marginal(state: LatentState, agg: KernelAggregate, params: HCRMParams) -> float:
    """Exact log marginal law of the nested partition with locations.

    log of: [product of kernel factors at assigned locations]
          x exp(-theta * base integral)
          x prod_clusters { prod_tables cumulant(q; exposure)
                            x root-cumulant(r_j; D psi(exposure)) x theta }.
    In independent mode each cluster is single-cause single-table and the
    root factor disappears.  Returns -inf for infeasible assignments.
    """
    k, m = state.k, state.m
    assigned = state.obs_cluster >= 0
    locs_per_obs = state.clu_loc[state.obs_cluster[assigned]]
    lq = log_kernel_product(
        agg.spec,
        agg.times_input[assigned],
        agg.cox_input[assigned],
        locs_per_obs,
    )
    if lq == -np.inf:
        return -np.inf
    integral = base_measure_integral(agg, params, state.D, state.t_max)
    total = lq - params.theta * integral + k * np.log(params.theta)
    if k == 0:
        return float(total)
    expo = agg.exposure(state.clu_loc[:k])
    gg = params.bottom()
    table_terms = log_cumulant(gg, state.tab_q[:m], expo[state.tab_cluster[:m]])
    total += float(np.sum(table_terms))
    if not params.independent_mode:
        inner = state.D * laplace_exponent(gg, expo)
        total += float(np.sum(log_cumulant(params.root(), state.clu_r[:k], inner)))
    return float(total)
