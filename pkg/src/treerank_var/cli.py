"""Command-line front end.

Commands: ``simulate``, ``fit``, ``treerank``, ``select``, ``bench`` and
``summarize``. Exit codes: 2 for I/O and parse errors, 3 for infeasible
configurations, 4 for numerical failures and 5 when step-size adaptation fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import warnings
from dataclasses import fields
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .analysis import (
    METRIC_FIELDS,
    FitSettings,
    GrangerGraph,
    MetricsRow,
    ScenarioConfig,
    aggregate,
    effective_tree_rank,
    extract_graph,
    fit_pipeline,
    make_ground_truth,
    run_scenario,
    write_json,
    write_metrics_csv,
)
from .graph_trees import (
    EXACT_RANK_LIMIT,
    GraphError,
    InfeasibleTreesError,
    adjacency_from_edges,
    forest_decomposition,
    greedy_tree_cover,
    tree_rank_exact,
)
from .init_select import DegenerateSurfaceWarning, plateau_select
from .posterior import NumericalError
from .priors import ConfigError, HyperParams, hyper_from_strings, read_hyper_config
from .sampler import AdaptationError, HmcConfig
from .state import SupportError
from .var_core import (
    DegenerateInputError,
    InsufficientDataError,
    InvalidInputError,
    StabilityError,
    TimeSeries,
    read_series_csv,
    simulate_var,
    standardize,
    write_matrix_csv,
    write_series_csv,
)

EXIT_IO, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_ADAPTATION = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_IO) from None
    return out


def _read_series(path) -> TimeSeries:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file not found: {p}", EXIT_IO)
    try:
        return read_series_csv(p)
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_IO) from None


def _read_kv(path) -> dict:
    """Flat ``key = value`` file with ``#`` comments."""
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}", EXIT_IO)
    out = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{p}:{lineno}: expected 'key = value'", EXIT_IO)
        k, v = (x.strip() for x in line.split("=", 1))
        out[k] = v
    return out


def _hyper(args) -> HyperParams:
    hyper = read_hyper_config(args.config) if getattr(args, "config", None) else HyperParams()
    if getattr(args, "delta", None) is not None:
        hyper = hyper.with_(delta=args.delta)
    return hyper


def _hmc(args) -> HmcConfig:
    return HmcConfig(n_iter=args.n_iter, n_warmup=args.n_warmup, leapfrog_steps=args.leapfrog,
                     eps0=args.eps0, seed=args.seed)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    if args.kind == "tree" and args.m0 > args.p // 2:
        raise CliError(f"m0 = {args.m0} exceeds floor(p / 2) = {args.p // 2} disjoint spanning trees",
                       EXIT_INFEASIBLE)
    cfg = ScenarioConfig(p=args.p, T=args.T, kind=args.kind, m0=args.m0, density=args.density,
                         snr=args.snr, d0=args.d0)
    gt = make_ground_truth(cfg, args.seed)
    ts = simulate_var(gt.C0, gt.Sigma, args.T, seed=args.seed + 1)
    out = _out_dir(args.out)
    write_series_csv(out / "series.csv", ts)
    write_matrix_csv(out / "truth_coef.csv", gt.C0.cbar)
    write_matrix_csv(out / "truth_noise_cov.csv", gt.Sigma)
    GrangerGraph.from_undirected(gt.G0).write_edge_csv(out / "truth_edges.csv")
    write_json(out / "truth.json", {"p": args.p, "T": args.T, "d0": args.d0, "kind": args.kind,
                                    "m0": args.m0, "seed": args.seed, "n_edges": int(gt.G0.sum() // 2)})
    print(f"wrote {args.T} x {args.p} series to {out / 'series.csv'}")
    return 0


# ---------------------------------------------------------------------------
# fit

FIT_KEYS = ("input", "config", "d", "m", "d_max", "m_max", "delta", "n_iter", "n_warmup", "leapfrog",
            "eps0", "seed", "chains", "threads", "trace_theta")


def _load_manifest(args):
    path = Path(args.manifest)
    if not path.is_file():
        raise CliError(f"manifest not found: {path}", EXIT_IO)
    try:
        man = json.loads(path.read_text())
        stored = man["args"]
        hyper = HyperParams(**man["hyper"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(f"{path}: not a fit manifest ({exc})", EXIT_IO) from None
    for k in FIT_KEYS:
        if k in stored:
            setattr(args, k, stored[k])
    return hyper


def cmd_fit(args) -> int:
    hyper = _load_manifest(args) if args.manifest else _hyper(args)
    if args.input is None:
        raise CliError("fit needs --input (or --manifest)", EXIT_IO)
    ts = _read_series(args.input)
    settings = FitSettings(d=args.d, m=args.m, d_max=args.d_max, m_max=args.m_max, n_chains=args.chains,
                           threads=args.threads, hmc=_hmc(args))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateSurfaceWarning)
        fit = fit_pipeline(ts, hyper, settings)
    for w in caught:
        if issubclass(w.category, DegenerateSurfaceWarning):
            print(f"warning: {w.message}", file=sys.stderr)
    out = _out_dir(args.out)
    C = fit.coef()
    write_matrix_csv(out / "coef_mean.csv", C.cbar)
    write_matrix_csv(out / "coef_mean_standardized.csv", fit.coef_standardized().cbar)
    graph = extract_graph(C, fit.hyper.delta)
    graph.write_edge_csv(out / "graph_edges.csv", np.abs(C.coef).max(axis=0))
    hist, mode = effective_tree_rank(fit.draws.s)
    write_json(out / "tree_rank.json", {"m": fit.m, "histogram": hist.tolist(), "mode": mode,
                                        "s_mean": fit.draws.s.mean(axis=0).tolist()})
    write_json(out / "diagnostics.json", fit.draws.summary())
    fit.draws.write_trace_csv(out / "trace.csv", theta=bool(args.trace_theta))
    if fit.plateau is not None:
        fit.plateau.write_csv(out / "plateau.csv")
    manifest = {
        "command": "fit",
        "args": {k: getattr(args, k) for k in FIT_KEYS},
        "hyper": hyper.to_dict(),
        "hmc": settings.hmc.to_dict(),
        "selected": {"d": fit.d, "m": fit.m},
        "versions": _versions(),
    }
    write_json(out / "manifest.json", manifest)
    print(f"d = {fit.d}, m = {fit.m}, accept rate = {fit.draws.accept_rate:.3f}, "
          f"edges at delta = {fit.hyper.delta}: {graph.n_edges}")
    return 0


# ---------------------------------------------------------------------------
# treerank


def _read_edges(path) -> tuple[list[tuple[int, int]], int]:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"edge file not found: {p}", EXIT_IO)
    edges = []
    with p.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            row = [c.strip() for c in row if c.strip()]
            if not row:
                continue
            try:
                i, j = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise CliError(f"{p}:{lineno}: expected two integer node indices", EXIT_IO) from None
            if i < 0 or j < 0:
                raise CliError(f"{p}:{lineno}: node indices must be nonnegative", EXIT_IO)
            if i != j:
                edges.append((min(i, j), max(i, j)))
    if not edges:
        raise CliError(f"{p}: no edges", EXIT_IO)
    return sorted(set(edges)), max(max(e) for e in edges) + 1


def cmd_treerank(args) -> int:
    edges, p_min = _read_edges(args.edges)
    p = args.p if args.p is not None else p_min
    if p < p_min:
        raise CliError(f"--p {p} is smaller than the largest node index + 1 = {p_min}", EXIT_IO)
    A = adjacency_from_edges(edges, p)
    trees = greedy_tree_cover(A)
    if p <= EXACT_RANK_LIMIT:
        print(f"exact tree rank: {tree_rank_exact(A)}")
    else:
        print(f"exact tree rank: skipped (p = {p} > {EXACT_RANK_LIMIT})")
    print(f"upper bound: {len(trees)}")
    for l, forest in enumerate(forest_decomposition(A, trees), 1):
        print(f"forest {l}: " + " ".join(f"{i}-{j}" for i, j in forest.edges))
    return 0


# ---------------------------------------------------------------------------
# select


def cmd_select(args) -> int:
    ts = standardize(_read_series(args.input))
    m_max = min(args.m_max, ts.p // 2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateSurfaceWarning)
        surf = plateau_select(ts, args.d_max, m_max, rule=args.rule)
    out = _out_dir(args.out)
    surf.write_csv(out / "plateau.csv")
    d, m = surf.selected
    write_json(out / "selection.json", {"d": d, "m": m, "degenerate": surf.degenerate, "rule": args.rule,
                                        "d_max": args.d_max, "m_max": m_max})
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"selected d = {d}, m = {m}")
    return 0


# ---------------------------------------------------------------------------
# bench and summarize

_SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)}
_FIT_INT_KEYS = ("d", "m", "d_max", "m_max", "n_chains")
_HMC_KEYS = {"n_iter": int, "n_warmup": int, "leapfrog_steps": int, "eps0": float}


def read_scenario_config(path) -> tuple[list[ScenarioConfig], FitSettings, HyperParams]:
    """Scenario file: ScenarioConfig keys (``T`` may list several lengths), fit keys and hyperparameters."""
    try:
        return _parse_scenario(_read_kv(path), path)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None


def _parse_scenario(kv: dict, path):
    scen, fit, hmc, hyp = {}, {}, {}, {}
    Ts = [200]
    for k, v in kv.items():
        if k == "T":
            Ts = [int(x) for x in v.replace(",", " ").split()]
        elif k == "seeds":
            scen[k] = tuple(int(x) for x in v.replace(",", " ").split())
        elif k in ("kind",):
            scen[k] = v
        elif k in ("snr", "density"):
            scen[k] = float(v)
        elif k in _SCENARIO_KEYS:
            scen[k] = int(v)
        elif k in _FIT_INT_KEYS:
            fit[k] = None if v.lower() == "none" else int(v)
        elif k in _HMC_KEYS:
            hmc[k] = _HMC_KEYS[k](v)
        elif k == "hyper_delta":
            hyp["delta"] = v
        else:
            raise CliError(f"{path}: unknown key {k!r}", EXIT_IO)
    cfgs = [ScenarioConfig(T=T, **scen) for T in Ts]
    return cfgs, FitSettings(**fit, hmc=HmcConfig(**hmc)), hyper_from_strings(hyp)


def _group_by_T(rows: list[MetricsRow]) -> dict:
    out = {}
    for T in sorted({r.T for r in rows}):
        out[str(T)] = aggregate([r for r in rows if r.T == T])
    return out


def cmd_bench(args) -> int:
    cfgs, settings, hyper = read_scenario_config(args.config)
    if args.hyper:
        hyper = read_hyper_config(args.hyper, hyper)
    for cfg in cfgs:
        if cfg.kind == "tree" and cfg.m0 > cfg.p // 2:
            raise CliError(f"m0 = {cfg.m0} exceeds floor(p / 2) = {cfg.p // 2}", EXIT_INFEASIBLE)
    rows = []
    for cfg in cfgs:
        rows += run_scenario(cfg, hyper, settings, workers=args.threads)
    out = _out_dir(args.out)
    write_metrics_csv(out / "metrics.csv", rows)
    write_json(out / "aggregate.json", {"all": aggregate(rows), "by_T": _group_by_T(rows)})
    print(f"{len(rows)} replicates written to {out / 'metrics.csv'}")
    return 0


def read_metrics_csv(path) -> list[MetricsRow]:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"metrics file not found: {p}", EXIT_IO)
    types = {f.name: f.type for f in fields(MetricsRow)}
    rows = []
    with p.open(newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                if k not in types:
                    raise CliError(f"{p}: unexpected column {k!r}", EXIT_IO)
                kw[k] = float(v) if "float" in str(types[k]) else int(v)
            kw.setdefault("seconds", 0.0)
            rows.append(MetricsRow(**kw))
    return rows


def cmd_summarize(args) -> int:
    rows = []
    for path in args.metrics:
        rows += read_metrics_csv(path)
    if not rows:
        raise CliError("no metric rows to summarize", EXIT_IO)
    summary = {"all": aggregate(rows), "by_T": _group_by_T(rows)}
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print("T      " + " ".join(f"{k:>12s}" for k in METRIC_FIELDS))
    for T, agg in summary["by_T"].items():
        print(f"{T:<6s} " + " ".join(f"{agg[k]:12.4f}" for k in METRIC_FIELDS))
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_hmc_flags(sp):
    sp.add_argument("--n-iter", dest="n_iter", type=int, default=5000)
    sp.add_argument("--n-warmup", dest="n_warmup", type=int, default=2500)
    sp.add_argument("--leapfrog", type=int, default=32, help="leapfrog steps per iteration (jittered +-20%%)")
    sp.add_argument("--eps0", type=float, default=0.01, help="initial step size")
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treerank-var", description="Tree-rank regularized Bayesian VAR.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate a series with a known Granger graph")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--T", type=int, required=True)
    sp.add_argument("--kind", choices=["tree", "random"], default="tree")
    sp.add_argument("--m0", type=int, default=2, help="number of disjoint trees (kind=tree)")
    sp.add_argument("--density", type=float, default=0.05, help="edge density (kind=random)")
    sp.add_argument("--snr", type=float, default=2.0)
    sp.add_argument("--d0", type=int, default=1, help="true lag order")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="sim")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit the model to a series CSV")
    sp.add_argument("--input")
    sp.add_argument("--out", default="fit")
    sp.add_argument("--config", help="hyperparameter file (key = value)")
    sp.add_argument("--manifest", help="re-run the fit recorded in a manifest.json")
    sp.add_argument("--d", type=int, help="lag order; skips plateau selection together with --m")
    sp.add_argument("--m", type=int, help="number of trees")
    sp.add_argument("--d-max", dest="d_max", type=int, default=3)
    sp.add_argument("--m-max", dest="m_max", type=int, default=3)
    sp.add_argument("--delta", type=float, help="edge threshold for the reported graph")
    sp.add_argument("--chains", type=int, default=1)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--trace-theta", dest="trace_theta", action="store_true",
                    help="include all coordinates in trace.csv")
    _add_hmc_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("treerank", help="tree rank of a graph given as an edge-list CSV")
    sp.add_argument("--edges", required=True)
    sp.add_argument("--p", type=int, help="node count (default: largest index + 1)")
    sp.set_defaults(func=cmd_treerank)

    sp = sub.add_parser("select", help="plateau selection of (d, m)")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", default="select")
    sp.add_argument("--d-max", dest="d_max", type=int, default=3)
    sp.add_argument("--m-max", dest="m_max", type=int, default=3)
    sp.add_argument("--rule", choices=["axis", "grid"], default="axis")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("bench", help="run a simulation scenario")
    sp.add_argument("--config", required=True, help="scenario file (key = value)")
    sp.add_argument("--hyper", help="hyperparameter file")
    sp.add_argument("--out", default="bench")
    sp.add_argument("--threads", type=int, default=1, help="replicates run in parallel")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("summarize", help="aggregate metrics CSVs by series length")
    sp.add_argument("metrics", nargs="+")
    sp.add_argument("--out", help="write the summary JSON here")
    sp.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ConfigError, DegenerateInputError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InfeasibleTreesError, InsufficientDataError) as exc:
        print(f"error: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except AdaptationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ADAPTATION
    except (NumericalError, np.linalg.LinAlgError, StabilityError, SupportError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
