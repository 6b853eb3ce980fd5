"""Brute-force oracles used by the test suite.

The joint-density oracle here evaluates the marginal law of a small sample
by direct transcription of the closed-form partition density: a sum over
every nested configuration (clusters, then per-cause tables within each
cluster) of products of one-dimensional location integrals, with adaptive
quadrature everywhere.  It shares only the leaf primitives (Laplace
exponent, cumulants, kernel evaluation) with the library, each of which is
validated against defining integrals separately; the combinatorial
structure is rebuilt here from scratch so the two routes are independent.
"""

import itertools

import numpy as np
from scipy.integrate import quad

from crmhaz.data import Dataset, HCRMParams
from crmhaz.kernels import KernelAggregate, eval_kernel, kernel_primitive
from crmhaz.levy import cumulant, laplace_exponent
from crmhaz.partition import ExistingTable, LatentState, NewCluster, NewTable, log_marginal


def set_partitions(items):
    """All partitions of a sequence into unordered nonempty blocks."""
    items = list(items)
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for b in range(len(part)):
            yield part[:b] + [[head] + part[b]] + part[b + 1 :]
        yield [[head]] + part


def _cluster_table_options(members, causes):
    """All table layouts of one cluster: per-cause partitions, combined."""
    groups = {}
    for i in members:
        groups.setdefault(causes[i], []).append(i)
    per_cause = [
        [(d, p) for p in set_partitions(mem)] for d, mem in sorted(groups.items())
    ]
    for combo in itertools.product(*per_cause):
        tables = []
        for d, part in combo:
            for block in part:
                tables.append((d, block))
        yield tables


def nested_configs(event_indices, causes, independent=False):
    """Every nested configuration of the given event observations.

    Yields lists of clusters; each cluster is (members, tables) with tables
    a list of (cause, member-list).  In independent mode clusters are
    single-cause with a single table (the degenerate nesting).
    """
    if independent:
        by_cause = {}
        for i in event_indices:
            by_cause.setdefault(causes[i], []).append(i)
        per_cause_parts = [
            [(d, p) for p in set_partitions(mem)] for d, mem in sorted(by_cause.items())
        ]
        for combo in itertools.product(*per_cause_parts):
            config = []
            for d, part in combo:
                for block in part:
                    config.append((block, [(d, block)]))
            yield config
        return
    for clusters in set_partitions(event_indices):
        for tables_combo in itertools.product(
            *[_cluster_table_options(c, causes) for c in clusters]
        ):
            yield [
                (members, tables) for members, tables in zip(clusters, tables_combo)
            ]


def build_state(n_obs, num_causes, t_max, config, locations):
    """Materialize a configuration through the incremental state operations."""
    state = LatentState(n_obs, num_causes, t_max)
    for j, ((members, tables), x) in enumerate(zip(config, locations)):
        created = {}
        for d, block in tables:
            h = created.get(d, 0)
            for pos, i in enumerate(block):
                if j == state.k and pos == 0:
                    choice = NewCluster(x)
                elif pos == 0:
                    choice = NewTable(j)
                else:
                    choice = ExistingTable(j, d - 1, h)
                state.insert_observation(i, d, choice)
            created[d] = h + 1
    return state


def oracle_exposure(spec, times, cox, x):
    return float(np.sum(cox * kernel_primitive(spec, times, x)))


def random_small_state(rng, spec, num_causes=2, t_max=2.0):
    """A legal latent configuration with n <= 5 plus its exposure aggregate."""
    n = int(rng.integers(0, 6))
    times = np.empty(n)
    causes = np.empty(n, dtype=int)
    config = []
    locations = []
    order = list(rng.permutation(n))
    while order:
        take = int(rng.integers(1, len(order) + 1))
        members, order = order[:take], order[take:]
        center = rng.uniform(0.3, 1.6)
        for i in members:
            times[i] = min(center + rng.uniform(0.0, 0.3), t_max)
        tables = []
        pos = 0
        while pos < len(members):
            size = int(rng.integers(1, len(members) - pos + 1))
            block = members[pos : pos + size]
            cause = int(rng.integers(1, num_causes + 1))
            for i in block:
                causes[i] = cause
            tables.append((cause, block))
            pos += size
        lo, hi = feasible_interval(spec, times[members], t_max)
        config.append((members, tables))
        locations.append(rng.uniform(lo, hi))
    state = build_state(n, num_causes, t_max, config, locations)
    dataset = Dataset.from_arrays(times, causes, num_causes=num_causes, t_max=t_max)
    return state, KernelAggregate.from_dataset(spec, dataset)


def feasible_interval(spec, member_times, t_max):
    """Open-closed interval of locations where every member's kernel is positive."""
    lo = 0.0
    if hasattr(spec, "bandwidth"):
        lo = max(lo, max(member_times) - spec.bandwidth)
    hi = min(min(member_times), t_max)
    return lo, hi


def oracle_joint_density(spec, times, causes, cox, params, num_causes, t_max):
    """Joint density of the observed sample, by independent transcription.

    density = exp(-theta * I) * sum over configs of prod_j theta * A_j,
    where I integrates the law's exponent rate and A_j integrates the
    cluster-j factor (kernel product x table cumulants x root cumulant)
    over its location.
    """
    times = np.asarray(times, dtype=float)
    causes = np.asarray(causes, dtype=int)
    cox = np.asarray(cox, dtype=float)
    D = num_causes
    gg, gg0 = params.bottom(), params.root()
    events = [i for i in range(times.size) if causes[i] > 0]

    def K(x):
        return oracle_exposure(spec, times, cox, x)

    def exponent_rate(x):
        if params.independent_mode:
            return D * laplace_exponent(gg, K(x))
        return laplace_exponent(gg0, D * laplace_exponent(gg, K(x)))

    brk = sorted({float(t) for t in times if 0.0 < t < t_max})
    big_i, _ = quad(exponent_rate, 0.0, t_max, points=brk or None, limit=200)

    def cluster_integral(members, tables):
        r_j = len(tables)

        def integrand(x):
            val = 1.0
            for i in members:
                val *= cox[i] * float(eval_kernel(spec, times[i], x))
            if val == 0.0:
                return 0.0
            kx = K(x)
            for d, block in tables:
                val *= float(cumulant(gg, len(block), kx))
            if not params.independent_mode:
                val *= float(cumulant(gg0, r_j, D * laplace_exponent(gg, kx)))
            return val

        pts = sorted(
            {float(times[i]) for i in members if 0.0 < times[i] < t_max} | set(brk)
        )
        val, _ = quad(integrand, 0.0, t_max, points=pts or None, limit=400)
        return val

    total = 0.0
    for config in nested_configs(events, causes, params.independent_mode):
        term = 1.0
        for members, tables in config:
            term *= params.theta * cluster_integral(members, tables)
        total += term
    return float(np.exp(-params.theta * big_i) * total)


def production_joint_density(
    spec, times, causes, cox, params, num_causes, t_max, separability_rtol=1e-9
):
    """Same quantity through the library's state operations and log-law.

    For each configuration the location integral factorizes over clusters
    (the log-law splits into per-cluster terms plus a location-free rest);
    the factorization itself is asserted at random joint locations before
    being exploited, so this route only trusts `log_marginal`.
    """
    times = np.asarray(times, dtype=float)
    causes = np.asarray(causes, dtype=int)
    cox = np.asarray(cox, dtype=float)
    agg = KernelAggregate(spec, times, cox)
    events = [i for i in range(times.size) if causes[i] > 0]
    rng = np.random.default_rng(99)

    total = 0.0
    for config in nested_configs(events, causes, params.independent_mode):
        k = len(config)
        spans = [
            feasible_interval(spec, [times[i] for i in members], t_max)
            for members, _ in config
        ]
        if any(lo >= hi for lo, hi in spans):
            continue  # no feasible location; the configuration has mass zero
        ref = np.array([0.5 * (lo + hi) for lo, hi in spans])
        state = build_state(times.size, num_causes, t_max, config, ref)
        lm_ref = log_marginal(state, agg, params)
        assert np.isfinite(lm_ref)

        def lm_at(locs):
            state.clu_loc[:k] = locs
            val = log_marginal(state, agg, params)
            state.clu_loc[:k] = ref
            return val

        # factorization check at random joint locations
        for _ in range(3):
            draw = np.array([rng.uniform(lo, hi) for lo, hi in spans])
            joint = lm_at(draw)
            split = lm_ref + sum(
                lm_at(np.where(np.arange(k) == j, draw, ref)) - lm_ref
                for j in range(k)
            )
            assert abs(joint - split) <= separability_rtol * max(1.0, abs(joint))

        config_val = np.exp(lm_ref)
        for j in range(k):

            def f(x, j=j):
                locs = ref.copy()
                locs[j] = x
                return np.exp(lm_at(locs) - lm_ref)

            lo, hi = spans[j]
            pts = [v for v in (lo, hi) if 0.0 < v < t_max]
            val, _ = quad(f, 0.0, t_max, points=pts or None, limit=200)
            config_val *= val
        total += config_val
    return float(total)
