"""Batch front-end: simulate, fit, estimate, baselines, compare.

Every subcommand is deterministic given its seed and emits exactly one
manifest next to its primary output, echoing the resolved configuration,
versions, wall clock, and (for fits) chain diagnostics.  Options resolve
in three layers: built-in defaults, then a flat JSON config file given
with --config, then explicit command-line flags.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

import argparse
import gzip
import json
import platform
import sys
import time
from multiprocessing import Pool

import numpy as np
import scipy

from . import __version__
from .data import (
    ConfigError,
    DataFormatError,
    Dataset,
    EstimateGrid,
    HCRMParams,
    HyperPriors,
    NumericError,
    read_dataset,
    write_dataset,
)
from .estimators import (
    aalen_johansen,
    aggregate_chain,
    dataset_agg_factory,
    error_metrics,
    kaplan_meier,
    output_grid,
    write_curves_csv,
)
from .kernels import DykstraLaud, OrnsteinUhlenbeck, Rectangular
from .measures import TruncationPolicy
from .partition import LatentState
from .sampler import ChainConfig, ChainSample, kernel_param_value, run_chain
from .synth import SCENARIOS, generate, scenario_model, true_curves, truth_grid

CHAIN_FORMAT = "crmhaz-chain/1"

KERNEL_NAMES = {DykstraLaud: "dl", Rectangular: "rect", OrnsteinUhlenbeck: "ou"}


def build_kernel(name, scale, bandwidth):
    if name == "dl":
        return DykstraLaud(scale)
    if name == "rect":
        return Rectangular(scale, bandwidth)
    if name == "ou":
        return OrnsteinUhlenbeck(scale)
    raise ConfigError(f"unknown kernel {name!r}; pick from dl, rect, ou")


# -- option resolution ------------------------------------------------------

MODEL_DEFAULTS = {
    "kernel": "dl",
    "kernel_start": 1.0,
    "bandwidth": 1.0,
    "sigma": 0.25,
    "sigma0": 0.25,
    "beta": 1.0,
    "beta0": 1.0,
    "theta": 1.0,
    "theta_rate": 0.1,
    "kernel_rate": 0.1,
    "independent": False,
    "cox": False,
}

CHAIN_DEFAULTS = {
    "iters": 25000,
    "burnin": 5000,
    "thin": 0,  # 0: thin automatically so about 2000 samples are kept
    "seed": 0,
    "fix_theta": False,
    "fix_kernel": False,
    "checkpoint": None,
    "checkpoint_every": 0,
    "progress": False,
}

ESTIMATE_DEFAULTS = {
    "grid": 200,
    "draws": 0,
    "eps": 1e-4,
}


def resolve_options(args, fallbacks):
    """Merge defaults, the optional flat JSON config, and explicit flags."""
    layered = dict(fallbacks)
    config_path = getattr(args, "config", None)
    if config_path:
        raw = _read_json(config_path)
        if not isinstance(raw, dict):
            raise ConfigError(f"{config_path}: config must be a flat JSON object")
        unknown = sorted(set(raw) - set(fallbacks))
        if unknown:
            raise ConfigError(f"{config_path}: unknown config keys {unknown}")
        layered.update(raw)
    for key in fallbacks:
        flag = getattr(args, key, None)
        if flag is not None:
            layered[key] = flag
    return layered


def _add_option(parser, name, kind, help_text, metavar=None):
    if kind is bool:
        parser.add_argument(
            name, action="store_const", const=True, default=None, help=help_text
        )
    else:
        parser.add_argument(
            name, type=kind, default=None, metavar=metavar, help=help_text
        )


def add_model_flags(parser):
    group = parser.add_argument_group("model")
    group.add_argument(
        "--kernel", choices=("dl", "rect", "ou"), default=None,
        help="mixing kernel: monotone step, sliding window, exponential decay",
    )
    _add_option(group, "--kernel-start", float, "initial kernel scale (sampled under its prior)")
    _add_option(group, "--bandwidth", float, "window width for --kernel rect")
    _add_option(group, "--sigma", float, "stability index of the cause-level measures")
    _add_option(group, "--sigma0", float, "stability index of the shared root measure")
    _add_option(group, "--beta", float, "tempering rate of the cause-level measures")
    _add_option(group, "--beta0", float, "tempering rate of the shared root measure")
    _add_option(group, "--theta", float, "initial base-intensity mass rate")
    _add_option(group, "--theta-rate", float, "exponential prior rate on theta")
    _add_option(group, "--kernel-rate", float, "exponential prior rate on the kernel scale")
    _add_option(group, "--independent", bool, "fit unlinked per-cause measures (no shared root)")
    _add_option(group, "--cox", bool, "use the predictor columns as log-linear risk weights")


def add_chain_flags(parser):
    group = parser.add_argument_group("chain")
    _add_option(group, "--iters", int, "total iterations")
    _add_option(group, "--burnin", int, "iterations discarded before retention")
    _add_option(group, "--thin", int, "keep every thin-th iteration (0: auto, about 2000 kept)")
    _add_option(group, "--seed", int, "RNG seed; equal seeds give identical runs")
    _add_option(group, "--fix-theta", bool, "freeze theta at its initial value")
    _add_option(group, "--fix-kernel", bool, "freeze the kernel scale at its initial value")
    _add_option(group, "--checkpoint", str, "path for mid-run state snapshots", "PATH")
    _add_option(group, "--checkpoint-every", int, "iterations between snapshots (0: never)")
    _add_option(group, "--progress", bool, "report progress to stderr")


def add_estimate_flags(parser):
    group = parser.add_argument_group("estimate")
    _add_option(group, "--grid", int, "number of output grid points", "N")
    _add_option(group, "--draws", int, "posterior measure draws per retained sample (0: no bands)")
    _add_option(group, "--eps", float, "small-jump truncation threshold for measure draws")


# -- small IO helpers -------------------------------------------------------


def _open_text(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def _read_json(path):
    try:
        with _open_text(path, "r") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON ({exc})") from exc


def _write_json(path, payload):
    with _open_text(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_manifest(anchor, command, resolved, seed, started, diagnostics=None):
    payload = {
        "command": command,
        "configuration": {k: v for k, v in sorted(resolved.items())},
        "seed": seed,
        "versions": {
            "crmhaz": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    if diagnostics is not None:
        payload["diagnostics"] = diagnostics
    path = str(anchor) + ".manifest.json"
    _write_json(path, payload)
    return path


# -- chain persistence ------------------------------------------------------


def write_chain_file(path, dataset, params, result):
    samples = [
        {
            "iteration": s.iteration,
            "theta": s.theta,
            "kernel_param": kernel_param_value(s.spec),
            "eta": [float(v) for v in s.eta],
            "state": json.loads(s.state.to_json()),
        }
        for s in result.samples
    ]
    first = result.samples[0].spec
    payload = {
        "format": CHAIN_FORMAT,
        "version": __version__,
        "kernel": KERNEL_NAMES[type(first)],
        "bandwidth": getattr(first, "bandwidth", None),
        "params": {
            "sigma": params.sigma,
            "sigma0": params.sigma0,
            "beta": params.beta,
            "beta0": params.beta0,
            "theta": params.theta,
            "independent_mode": params.independent_mode,
        },
        "chain": {
            "iterations": result.config.iterations,
            "burn_in": result.config.burn_in,
            "thin": result.config.resolved_thin,
            "seed": result.config.seed,
        },
        "dataset": {
            "times": dataset.times.tolist(),
            "causes": dataset.causes.tolist(),
            "predictors": dataset.predictor_matrix.tolist(),
            "num_causes": dataset.num_causes,
            "t_max": dataset.t_max,
        },
        "samples": samples,
        "diagnostics": result.diagnostics,
    }
    _write_json(path, payload)


def read_chain_file(path):
    raw = _read_json(path)
    if raw.get("format") != CHAIN_FORMAT:
        raise DataFormatError(f"{path}: not a chain file (format {raw.get('format')!r})")
    ds = raw["dataset"]
    predictors = np.asarray(ds["predictors"], dtype=float)
    dataset = Dataset.from_arrays(
        ds["times"],
        ds["causes"],
        predictors=predictors if predictors.size else None,
        num_causes=ds["num_causes"],
        t_max=ds["t_max"],
    )
    params = HCRMParams(**raw["params"])
    samples = []
    for rec in raw["samples"]:
        spec = build_kernel(raw["kernel"], rec["kernel_param"], raw["bandwidth"])
        samples.append(
            ChainSample(
                iteration=rec["iteration"],
                state=LatentState.from_json(json.dumps(rec["state"])),
                theta=rec["theta"],
                spec=spec,
                eta=np.asarray(rec["eta"], dtype=float),
                log_marginal=0.0,
                accept_accel=0,
                accept_kernel=False,
                accept_eta=0,
            )
        )
    if not samples:
        raise DataFormatError(f"{path}: chain file holds no samples")
    return dataset, params, samples, raw


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args):
    started = time.perf_counter()
    opts = resolve_options(args, {"n": 300, "seed": 0, "grid": 200})
    model = scenario_model(args.scenario)
    data = generate(model, opts["n"], opts["seed"])
    out = args.out or f"{args.scenario}.csv"
    truth_path = args.truth or (out[:-4] if out.endswith(".csv") else out) + "_truth.json"
    write_dataset(data, out)
    grid = output_grid(data, opts["grid"])
    curves = true_curves(model, grid)
    packed = truth_grid(model, grid)
    payload = json.loads(packed.to_json())
    payload["hazard"] = curves["hazard"].tolist()
    payload["pi"] = curves["pi"].tolist()
    payload["scenario"] = args.scenario
    _write_json(truth_path, payload)
    write_manifest(out, "simulate", {**opts, "scenario": args.scenario,
                                     "out": out, "truth": truth_path},
                   opts["seed"], started)
    print(f"wrote {data.n} observations to {out}, truth to {truth_path}")
    return 0


def _strip_predictors(dataset):
    return Dataset.from_arrays(
        dataset.times, dataset.causes,
        num_causes=dataset.num_causes, t_max=dataset.t_max,
    )


def fit_from_options(dataset, opts):
    """Shared by `fit` and replicate mode: options dict -> ChainResult pieces."""
    if opts["cox"]:
        if dataset.predictor_matrix.shape[1] == 0:
            raise ConfigError("--cox needs predictor columns in the dataset")
    else:
        dataset = _strip_predictors(dataset)
    kernel = build_kernel(opts["kernel"], opts["kernel_start"], opts["bandwidth"])
    params = HCRMParams(
        sigma=opts["sigma"], sigma0=opts["sigma0"],
        beta=opts["beta"], beta0=opts["beta0"],
        theta=opts["theta"], independent_mode=bool(opts["independent"]),
    )
    priors = HyperPriors(
        theta_rate=opts["theta_rate"], kernel_rate=opts["kernel_rate"],
        fix_theta=bool(opts["fix_theta"]), fix_kernel=bool(opts["fix_kernel"]),
    )
    config = ChainConfig(
        iterations=opts["iters"], burn_in=opts["burnin"],
        thin=opts["thin"] if opts["thin"] else None,
        seed=opts["seed"],
        checkpoint_path=opts["checkpoint"],
        checkpoint_every=opts["checkpoint_every"],
        progress=bool(opts["progress"]),
    )
    result = run_chain(dataset, kernel, params, priors, config)
    return dataset, params, result


def chain_diagnostics(result):
    eta = np.array([s.eta for s in result.samples])
    posterior_means = {
        "clusters": float(np.mean([s.num_clusters for s in result.samples])),
        "theta": float(result.thetas.mean()),
        "kernel_scale": float(np.mean([kernel_param_value(s.spec) for s in result.samples])),
    }
    if eta.size:
        posterior_means["eta"] = np.asarray(eta).mean(axis=0).tolist()
    return {**result.diagnostics, "posterior_means": posterior_means}


def cmd_fit(args):
    started = time.perf_counter()
    opts = resolve_options(args, {**MODEL_DEFAULTS, **CHAIN_DEFAULTS})
    dataset = read_dataset(args.data)
    dataset, params, result = fit_from_options(dataset, opts)
    out = args.out or "chain.json.gz"
    write_chain_file(out, dataset, params, result)
    diagnostics = chain_diagnostics(result)
    write_manifest(out, "fit", {**opts, "data": args.data, "out": out},
                   opts["seed"], started, diagnostics)
    kept = diagnostics["kept"]
    print(f"kept {kept} samples to {out}; "
          f"posterior mean clusters {diagnostics['posterior_means']['clusters']:.2f}, "
          f"theta {diagnostics['posterior_means']['theta']:.3f}")
    return 0


def cmd_estimate(args):
    started = time.perf_counter()
    opts = resolve_options(args, {**ESTIMATE_DEFAULTS, "seed": 0})
    dataset, params, samples, _ = read_chain_file(args.chain)
    grid = output_grid(dataset, opts["grid"])
    est = aggregate_chain(
        samples,
        dataset_agg_factory(dataset),
        params,
        grid,
        conditional_draws=opts["draws"],
        policy=TruncationPolicy(epsilon=opts["eps"]),
        rng=np.random.default_rng(opts["seed"]),
    )
    try:
        est.validate()
    except ValueError as exc:
        raise NumericError(f"estimate failed invariants: {exc}") from exc
    out = args.out or "estimate.json"
    with _open_text(out, "w") as fh:
        fh.write(est.to_json())
        fh.write("\n")
    if args.csv:
        write_curves_csv(est, args.csv)
    write_manifest(out, "estimate",
                   {**opts, "chain": args.chain, "out": out, "csv": args.csv},
                   opts["seed"], started)
    banded = "with bands" if est.bands is not None else "point estimates only"
    print(f"wrote {grid.size}-point estimate to {out} ({banded})")
    return 0


def baseline_grid(dataset, grid):
    """Frequentist reference curves evaluated on the estimate grid."""
    km = kaplan_meier(dataset)
    survival = km.evaluate(grid)
    subdist = np.vstack(
        [aalen_johansen(dataset, d + 1).evaluate(grid) for d in range(dataset.num_causes)]
    )
    return survival, subdist


def cmd_baselines(args):
    started = time.perf_counter()
    opts = resolve_options(args, {"grid": 200})
    dataset = read_dataset(args.data)
    grid = output_grid(dataset, opts["grid"])
    survival, subdist = baseline_grid(dataset, grid)
    out = args.out or "baselines.json"
    payload = {
        "times": grid.tolist(),
        "survival": survival.tolist(),
        "subdistribution": subdist.tolist(),
    }
    _write_json(out, payload)
    if args.csv:
        import csv as _csv

        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(
                ["time", "survival"]
                + [f"subdistribution_{d + 1}" for d in range(dataset.num_causes)]
            )
            writer.writerows(zip(grid, survival, *subdist))
    write_manifest(out, "baselines", {**opts, "data": args.data, "out": out,
                                      "csv": args.csv},
                   None, started)
    print(f"wrote product-limit and cause-incidence baselines to {out}")
    return 0


# -- compare ----------------------------------------------------------------


def _load_truth(path):
    raw = _read_json(path)
    needed = {"times", "survival", "incidence", "subdistribution", "prediction", "pi"}
    missing = needed - set(raw)
    if missing:
        raise DataFormatError(f"{path}: truth file lacks {sorted(missing)}")
    est = EstimateGrid.from_json(json.dumps({k: raw[k] for k in needed - {"pi"}}))
    return est, np.asarray(raw["pi"], dtype=float)


def _metric_rows(label, metrics, clusters=None):
    rows = []
    d_k = metrics["d_k"]
    for d in range(metrics["e_tv"].size):
        rows.append(
            {
                "method": label,
                "cause": d + 1,
                "e_tv": float(metrics["e_tv"][d]),
                "e_k": float(metrics["e_k"][d]),
                "d_k": float(d_k) if d == 0 else None,
                "clusters": clusters if d == 0 else None,
            }
        )
    return rows


def _baseline_rows(path, truth, pi):
    raw = _read_json(path)
    times = np.asarray(raw["times"], dtype=float)
    if times.shape != truth.times.shape or not np.allclose(
        times, truth.times, rtol=0.0, atol=1e-12
    ):
        raise ConfigError(f"{path}: baseline grid does not match the truth grid")
    survival = np.asarray(raw["survival"], dtype=float)
    subdist = np.asarray(raw["subdistribution"], dtype=float)
    rows = []
    d_k = float(np.max(np.abs(survival - truth.survival)))
    for d in range(subdist.shape[0]):
        e_k = float(np.max(np.abs(subdist[d] - truth.subdistribution[d])) / pi[d])
        rows.append(
            {
                "method": "km+aj",
                "cause": d + 1,
                "e_tv": None,
                "e_k": e_k,
                "d_k": d_k if d == 0 else None,
                "clusters": None,
            }
        )
    return rows


def _format_cell(value):
    if value is None:
        return "-"
    if isinstance(value, str):
        return value
    return f"{value:.4f}"


def print_table(rows, keys=("method", "cause", "e_tv", "e_k", "d_k", "clusters")):
    keys = [k for k in keys if any(r.get(k) is not None for r in rows)]
    table = [keys] + [
        [r["method"], str(r["cause"])] + [_format_cell(r.get(k)) for k in keys[2:]]
        for r in rows
    ]
    widths = [max(len(line[c]) for line in table) for c in range(len(keys))]
    for line in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip())


def _replicate_worker(task):
    scenario, n, seed, opts = task
    model = scenario_model(scenario)
    data = generate(model, n, seed)
    data, params, result = fit_from_options(data, {**opts, "seed": seed})
    grid = output_grid(data, opts["grid"])
    truth = truth_grid(model, grid)
    pi = true_curves(model, grid)["pi"]
    keep = result.samples
    if opts["band_samples"] and len(keep) > opts["band_samples"]:
        stride = len(keep) / opts["band_samples"]
        keep = [keep[int(i * stride)] for i in range(opts["band_samples"])]
    est = aggregate_chain(
        keep,
        dataset_agg_factory(data),
        params,
        grid,
        conditional_draws=opts["draws"],
        policy=TruncationPolicy(epsilon=opts["eps"]),
        rng=np.random.default_rng(seed + 1),
    )
    rows = _metric_rows(
        "posterior",
        error_metrics(est, truth, pi),
        clusters=float(np.mean([s.num_clusters for s in result.samples])),
    )
    survival, subdist = baseline_grid(data, grid)
    d_k = float(np.max(np.abs(survival - truth.survival)))
    for d in range(data.num_causes):
        rows.append(
            {
                "method": "km+aj",
                "cause": d + 1,
                "e_tv": None,
                "e_k": float(np.max(np.abs(subdist[d] - truth.subdistribution[d])) / pi[d]),
                "d_k": d_k if d == 0 else None,
                "clusters": None,
            }
        )
    coverage = None
    if est.bands is not None:
        band = est.bands["survival"]
        inside = (band["lower"] <= truth.survival) & (truth.survival <= band["upper"])
        coverage = float(inside.mean())
    return {"seed": seed, "rows": rows, "coverage": coverage}


def _average_rows(per_rep):
    keyed = {}
    for rep in per_rep:
        for row in rep["rows"]:
            keyed.setdefault((row["method"], row["cause"]), []).append(row)
    out = []
    for (method, cause), rows in sorted(keyed.items()):
        entry = {"method": method, "cause": cause, "reps": len(rows)}
        for key in ("e_tv", "e_k", "d_k", "clusters"):
            values = [r[key] for r in rows if r[key] is not None]
            if values:
                arr = np.asarray(values, dtype=float)
                entry[key] = float(arr.mean())
                entry[f"{key}_se"] = float(arr.std(ddof=1) / np.sqrt(arr.size)) \
                    if arr.size > 1 else 0.0
        out.append(entry)
    return out


def cmd_compare(args):
    started = time.perf_counter()
    if args.replicate:
        return _compare_replicates(args, started)
    if not args.truth:
        raise ConfigError("compare needs --truth (or --replicate for a scenario study)")
    if not args.estimates:
        raise ConfigError("compare needs at least one estimate file")
    truth, pi = _load_truth(args.truth)
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(args.estimates):
        raise ConfigError("need exactly one label per estimate file")
    rows = []
    for i, path in enumerate(args.estimates):
        with _open_text(path, "r") as fh:
            est = EstimateGrid.from_json(fh.read())
        label = labels[i] if labels else path
        rows.extend(_metric_rows(label, error_metrics(est, truth, pi)))
    if args.baseline:
        rows.extend(_baseline_rows(args.baseline, truth, pi))
    print_table(rows)
    anchor = args.out or "compare"
    if args.out:
        _write_json(args.out, rows)
    write_manifest(anchor, "compare",
                   {"truth": args.truth, "estimates": list(args.estimates),
                    "baseline": args.baseline, "out": args.out},
                   None, started)
    return 0


def _compare_replicates(args, started):
    fallbacks = {
        **MODEL_DEFAULTS, **CHAIN_DEFAULTS, **ESTIMATE_DEFAULTS,
        "reps": 20, "n": 100, "workers": 1, "band_samples": 0,
    }
    opts = resolve_options(args, fallbacks)
    scenario = args.replicate
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; pick from {sorted(SCENARIOS)}")
    if opts["reps"] < 1:
        raise ConfigError("need at least one replicate")
    tasks = [
        (scenario, opts["n"], opts["seed"] + i, opts) for i in range(opts["reps"])
    ]
    if opts["workers"] > 1:
        with Pool(opts["workers"]) as pool:
            per_rep = pool.map(_replicate_worker, tasks)
    else:
        per_rep = [_replicate_worker(t) for t in tasks]
    rows = _average_rows(per_rep)
    coverages = [r["coverage"] for r in per_rep if r["coverage"] is not None]
    print(f"{scenario}: {opts['reps']} replicates at n={opts['n']}, mean +/- SE")
    print_table(
        [
            {**r, "e_tv": r.get("e_tv"), "clusters": r.get("clusters")}
            for r in rows
        ]
    )
    if coverages:
        print(f"mean survival band coverage {np.mean(coverages):.3f}")
    anchor = args.out or f"{scenario}_compare"
    payload = {
        "scenario": scenario,
        "rows": rows,
        "per_replicate": [
            {"seed": r["seed"], "rows": r["rows"], "coverage": r["coverage"]}
            for r in per_rep
        ],
    }
    if coverages:
        payload["mean_coverage"] = float(np.mean(coverages))
    if args.out:
        _write_json(args.out, payload)
    write_manifest(anchor, "compare",
                   {**opts, "replicate": scenario, "out": args.out},
                   opts["seed"], started)
    return 0


# -- entry point ------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crmhaz",
        description="Competing-risks survival analysis with shared-root random-measure hazards.",
    )
    parser.add_argument("--version", action="version", version=f"crmhaz {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="draw a benchmark dataset and its true curves")
    p.add_argument("scenario", help=f"one of {', '.join(sorted(SCENARIOS))}")
    _add_option(p, "--n", int, "number of subjects")
    _add_option(p, "--seed", int, "RNG seed")
    _add_option(p, "--grid", int, "truth grid size", "N")
    p.add_argument("--out", default=None, help="dataset CSV path (default <scenario>.csv)")
    p.add_argument("--truth", default=None, help="truth JSON path (default <out>_truth.json)")
    p.add_argument("--config", default=None, help="flat JSON option file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the posterior sampler on a dataset")
    p.add_argument("data", help="dataset CSV (time,cause[,z...]; cause 0 censors)")
    p.add_argument("--out", default=None, help="chain file path (default chain.json.gz)")
    p.add_argument("--config", default=None, help="flat JSON option file")
    add_model_flags(p)
    add_chain_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate", help="turn a chain file into posterior curves")
    p.add_argument("chain", help="chain file from fit")
    p.add_argument("--out", default=None, help="estimate JSON path (default estimate.json)")
    p.add_argument("--csv", default=None, help="also write plot-ready CSV here")
    p.add_argument("--config", default=None, help="flat JSON option file")
    _add_option(p, "--seed", int, "RNG seed for band draws")
    add_estimate_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("baselines", help="frequentist reference curves for a dataset")
    p.add_argument("data", help="dataset CSV")
    p.add_argument("--out", default=None, help="baseline JSON path (default baselines.json)")
    p.add_argument("--csv", default=None, help="also write plot-ready CSV here")
    p.add_argument("--config", default=None, help="flat JSON option file")
    _add_option(p, "--grid", int, "evaluation grid size", "N")
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser(
        "compare",
        help="score estimates against the truth, or run a replicate study",
    )
    p.add_argument("estimates", nargs="*", help="estimate JSON files to score")
    p.add_argument("--truth", default=None, help="truth JSON from simulate")
    p.add_argument("--baseline", default=None, help="baseline JSON to score alongside")
    p.add_argument("--labels", default=None, help="comma-separated method labels")
    p.add_argument("--out", default=None, help="write the metric rows as JSON here")
    p.add_argument("--config", default=None, help="flat JSON option file")
    p.add_argument(
        "--replicate", default=None, metavar="SCENARIO",
        help="loop simulate-fit-estimate-score over seeds for this scenario",
    )
    _add_option(p, "--reps", int, "number of replicates")
    _add_option(p, "--n", int, "subjects per replicate")
    _add_option(p, "--workers", int, "parallel worker processes")
    _add_option(
        p, "--band-samples", int,
        "cap on retained samples used for band draws (0: all)",
    )
    add_model_flags(p)
    add_chain_flags(p)
    add_estimate_flags(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
