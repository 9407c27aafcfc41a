"""Command-line pipeline: build-covariates, contiguity, simulate, fit, evaluate, summarize.

Each run writes into its own output directory with a manifest recording
the resolved configuration, input digests, seed and timing.  Exit
codes: 0 success, 2 input parse error, 3 dimension mismatch, 4
numerical failure, 5 incomplete fit directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, data, evaluate, figures, graph as graphmod, summarize, synthgen
from .exceptions import (
    ArealTrendError,
    DimensionMismatchError,
    IncompleteRunError,
    InputError,
    NumericalError,
)
from .model import BAYES_FAMILIES, ModelConfig, ModelFamily
from .sampler import ChainOutput, run_chains

log = logging.getLogger("arealtrend")

EXIT_CODES = {
    InputError: 2,
    DimensionMismatchError: 3,
    NumericalError: 4,
    IncompleteRunError: 5,
}

MODEL_ALIASES = {
    "global": ModelFamily.GLOBAL_TREND,
    "noshrink": ModelFamily.NO_SHRINKAGE,
    "globalshrink": ModelFamily.GLOBAL_SHRINKAGE,
    "car": ModelFamily.SPATIAL_CAR,
    "varborders": ModelFamily.VARIABLE_BORDERS,
    "varborders-alpha": ModelFamily.VARIABLE_BORDERS_ALPHA_ONLY,
}


def _setup_logging() -> None:
    level = os.environ.get("ARELTREND_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, config: dict | None, inputs: dict, seed, elapsed) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs.values() if p is not None},
        "seed": seed,
        "timing_seconds": elapsed,
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_model(name: str) -> ModelFamily:
    if name in MODEL_ALIASES:
        return MODEL_ALIASES[name]
    try:
        return ModelFamily(name)
    except ValueError:
        raise InputError(
            f"unknown model {name!r}; choose from {', '.join(MODEL_ALIASES)}"
        ) from None


def _resolve_config(args) -> ModelConfig:
    config = ModelConfig.from_json(args.config) if getattr(args, "config", None) else ModelConfig()
    overrides = {}
    if getattr(args, "model", None):
        overrides["family"] = _resolve_model(args.model)
    if getattr(args, "prior", None):
        overrides["prior_mode"] = {"eb": "empirical_bayes", "noninf": "noninformative"}[args.prior]
    if getattr(args, "two_stage", False):
        overrides["two_stage"] = True
    for flag, key in (
        ("iters", "n_iter"),
        ("burnin", "burn_in"),
        ("thin", "thin"),
        ("chains", "n_chains"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    for flag in ("alpha_threshold", "beta_threshold"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    return config.with_overrides(**overrides)


# ---------------------------------------------------------------------------
# Shared input loading


def _load_inputs(args, config: ModelConfig):
    """Load panel, covariates and graph; apply exclusions consistently."""
    panel = data.load_crimes_csv(args.crimes)
    explicit = data.load_exclusions(args.exclusions) if args.exclusions else []

    covariates = None
    missing_ids: set[str] = set()
    raw = None
    table = None
    if args.covariates_raw:
        raw = data.load_raw_covariates_csv(args.covariates_raw, _load_ethnicity_map(args))
        absent = [u for u in panel.unit_ids if u not in raw]
        if absent:
            raise DimensionMismatchError(f"raw covariates missing panel units: {absent[:5]}")
    elif args.covariates:
        unit_ids, names, values = data.load_covariates_csv(args.covariates)
        index = {u: i for i, u in enumerate(unit_ids)}
        absent = [u for u in panel.unit_ids if u not in index]
        if absent:
            raise DimensionMismatchError(f"covariates file missing panel units: {absent[:5]}")
        table = (names, {u: values[index[u]] for u in panel.unit_ids})
        missing_ids = {u for u in panel.unit_ids if np.any(~np.isfinite(table[1][u]))}

    try:
        panel, excluded = data.apply_exclusions(
            panel, raw=raw, exclude_ids=explicit, missing_ids=missing_ids
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if excluded:
        log.info("excluded %d units: %s", len(excluded), ", ".join(excluded[:10]))

    try:
        if raw is not None:
            covariates = data.build_covariates(raw, panel.unit_ids)
        elif table is not None:
            names, by_unit = table
            values = np.array([by_unit[u] for u in panel.unit_ids])
            covariates = data.covariates_from_table(panel.unit_ids, names, values)
    except ValueError as exc:
        raise InputError(str(exc)) from exc

    g = None
    if args.edges:
        full = graphmod.load_edges_csv(args.edges, unit_ids=None)
        known = set(full.unit_ids)
        unknown = sorted(known - set(panel.unit_ids) - set(excluded))
        if unknown:
            raise DimensionMismatchError(f"edges reference units outside the panel: {unknown[:5]}")
        merged_ids = sorted(set(panel.unit_ids) | known)
        g = graphmod.load_edges_csv(args.edges, unit_ids=merged_ids).subgraph(panel.unit_ids)
    elif args.polygons:
        polys = graphmod.load_polygons_geojson(args.polygons)
        absent = [u for u in panel.unit_ids if u not in polys]
        if absent:
            raise DimensionMismatchError(f"polygons missing panel units: {absent[:5]}")
        snap = getattr(args, "snap_tolerance", None) or 1e-9
        g = graphmod.queen_contiguity(polys, snap_tolerance=snap).subgraph(panel.unit_ids)

    if g is None and config.family in BAYES_FAMILIES and config.family is not ModelFamily.GLOBAL_SHRINKAGE:
        raise DimensionMismatchError(
            f"model {config.family.value!r} needs an adjacency structure: pass --edges or --polygons"
        )
    if g is None and config.family is ModelFamily.GLOBAL_SHRINKAGE:
        g = graphmod.AdjacencyGraph(tuple(panel.unit_ids), ())
    return panel, covariates, g, excluded


def _load_ethnicity_map(args):
    path = getattr(args, "ethnicity_map", None)
    if not path:
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _input_paths(args) -> dict:
    return {
        "crimes": getattr(args, "crimes", None),
        "covariates": getattr(args, "covariates", None),
        "covariates_raw": getattr(args, "covariates_raw", None),
        "edges": getattr(args, "edges", None),
        "polygons": getattr(args, "polygons", None),
        "exclusions": getattr(args, "exclusions", None),
        "config": getattr(args, "config", None),
    }


# ---------------------------------------------------------------------------
# Chain persistence

DRAW_ORDER = (
    "gamma",
    "alpha",
    "beta",
    "alpha0",
    "beta0",
    "sigma2",
    "tau2_gamma",
    "tau2_alpha",
    "tau2_beta",
    "rho",
    "w_alpha",
    "phi_alpha",
    "w_beta",
    "phi_beta",
)


def save_chain(chain: ChainOutput, outdir: Path) -> None:
    np.savez_compressed(outdir / "draws.npz", **chain.draws)
    meta = {
        "family": chain.family.value,
        "seed": chain.seed,
        "config": chain.config,
        "unit_ids": list(chain.unit_ids),
        "edge_ids": [list(e) for e in chain.edge_ids],
        "rho_accept_rate": chain.rho_accept_rate,
        "flip_counts": {k: v.tolist() for k, v in chain.flip_counts.items()},
        "clip_count": chain.clip_count,
        "n_chains": chain.n_chains,
        "chain_draw_counts": list(chain.chain_draw_counts),
        "fixed_gamma": chain.fixed_gamma.tolist() if chain.fixed_gamma is not None else None,
        "elapsed_seconds": chain.elapsed_seconds,
    }
    with open(outdir / "chain_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_chain(fit_dir: Path) -> ChainOutput:
    meta_path = fit_dir / "chain_meta.json"
    draws_path = fit_dir / "draws.npz"
    if not meta_path.exists() or not draws_path.exists():
        raise IncompleteRunError(
            f"fit directory {fit_dir} is incomplete: need chain_meta.json and draws.npz"
        )
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("family") not in [f.value for f in BAYES_FAMILIES]:
        raise IncompleteRunError(f"fit directory {fit_dir} holds no posterior draws")
    with np.load(draws_path) as npz:
        draws = {k: npz[k] for k in npz.files}
    return ChainOutput(
        family=ModelFamily(meta["family"]),
        unit_ids=tuple(meta["unit_ids"]),
        edge_ids=tuple(tuple(e) for e in meta["edge_ids"]),
        draws=draws,
        seed=meta["seed"],
        config=meta["config"],
        rho_accept_rate=meta["rho_accept_rate"],
        flip_counts={k: np.asarray(v) for k, v in meta["flip_counts"].items()},
        clip_count=meta["clip_count"],
        n_chains=meta["n_chains"],
        chain_draw_counts=tuple(meta["chain_draw_counts"]),
        fixed_gamma=np.asarray(meta["fixed_gamma"]) if meta["fixed_gamma"] is not None else None,
        elapsed_seconds=meta["elapsed_seconds"],
    )


def write_draws_csv(chain: ChainOutput, path) -> None:
    """One row per retained draw; vector parameters are flattened by name."""
    columns: list[str] = []
    getters: list[tuple[str, int | None]] = []
    for key in DRAW_ORDER:
        if key not in chain.draws:
            continue
        arr = chain.draws[key]
        if arr.ndim == 1:
            columns.append(key)
            getters.append((key, None))
        elif key == "gamma":
            for j in range(arr.shape[1]):
                columns.append(f"gamma_{j + 1}")
                getters.append((key, j))
        elif key in ("alpha", "beta"):
            for j, u in enumerate(chain.unit_ids):
                columns.append(f"{key}_{u}")
                getters.append((key, j))
        else:  # per-edge weights
            for j, (a, b) in enumerate(chain.edge_ids):
                columns.append(f"{key}_{a}__{b}")
                getters.append((key, j))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in range(chain.n_draws):
            row = []
            for key, j in getters:
                v = chain.draws[key][r] if j is None else chain.draws[key][r, j]
                row.append(repr(float(v)))
            writer.writerow(row)


def _write_point_summary_csv(fit: evaluate.FitResult, path) -> None:
    """summary.csv for least-squares fits: point estimates, no intervals."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(summarize.SUMMARY_COLUMNS)
        for i, u in enumerate(fit.unit_ids):
            writer.writerow(
                [u, repr(float(fit.alpha[i])), "", "", "", "", ""]
                + [repr(float(fit.beta[i])), "", "", "", "", ""]
            )


def _write_mean_only_summary_csv(chain: ChainOutput, path) -> None:
    alpha = chain.draws["alpha"].mean(axis=0)
    beta = chain.draws["beta"].mean(axis=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(summarize.SUMMARY_COLUMNS)
        for i, u in enumerate(chain.unit_ids):
            writer.writerow(
                [u, repr(float(alpha[i])), "", "", "", "", ""]
                + [repr(float(beta[i])), "", "", "", "", ""]
            )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_build_covariates(args) -> int:
    raw = data.load_raw_covariates_csv(args.raw, _load_ethnicity_map(args))
    explicit = data.load_exclusions(args.exclusions) if args.exclusions else []
    keep, dropped = [], []
    for u in sorted(raw):
        if u in explicit or raw[u].missing_economic():
            dropped.append(u)
        else:
            keep.append(u)
    if not keep:
        raise InputError("no units left after exclusions")
    cov = data.build_covariates({u: raw[u] for u in keep}, keep)
    data.write_covariates_csv(args.output, cov.unit_ids, cov.names, cov.destandardize())
    for u in dropped:
        log.info("excluded unit %s", u)
    print(f"wrote {args.output} ({len(keep)} units, {len(dropped)} excluded)")
    return 0


def cmd_contiguity(args) -> int:
    polys = graphmod.load_polygons_geojson(args.polygons)
    try:
        g = graphmod.queen_contiguity(polys, snap_tolerance=args.snap_tolerance)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    graphmod.write_edges_csv(g, args.output)
    print(f"wrote {args.output} ({g.n} units, {g.n_edges} edges)")
    return 0


def _parse_edge_list(specs, graph):
    index = {u: i for i, u in enumerate(graph.unit_ids)}
    out = []
    for s in specs or []:
        a, _, b = s.partition(":")
        if a not in index or b not in index:
            raise InputError(f"barrier {s!r} references unknown units")
        out.append(tuple(sorted((index[a], index[b]))))
    return tuple(out)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    if args.grid:
        r, _, c = args.grid.partition("x")
        g = synthgen.grid_graph(int(r), int(c))
    elif args.cycle:
        g = synthgen.cycle_graph(args.cycle)
    else:
        g = synthgen.path_graph(args.path)
    gamma = tuple(float(v) for v in args.gamma.split(",")) if args.gamma else ()
    spec = synthgen.SyntheticSpec(
        graph=g,
        T=args.periods,
        seed=args.seed,
        alpha0=args.alpha0,
        beta0=args.beta0,
        tau2_alpha=args.tau2_alpha,
        tau2_beta=args.tau2_beta,
        sigma2=args.sigma2,
        rho=args.rho,
        gamma=gamma,
        barriers_alpha=_parse_edge_list(args.barrier_alpha, g),
        barriers_beta=_parse_edge_list(args.barrier_beta, g),
    )
    sim = synthgen.simulate(spec)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    data.write_crimes_csv(sim.panel, outdir / "crimes.csv")
    graphmod.write_edges_csv(g, outdir / "edges.csv")
    if sim.covariates is not None:
        data.write_covariates_csv(
            outdir / "covariates.csv",
            sim.covariates.unit_ids,
            sim.covariates.names,
            sim.covariates.destandardize(),
        )
    truth = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in sim.truth.items()}
    with open(outdir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(outdir, "simulate", None, {}, args.seed, time.perf_counter() - started)
    print(f"wrote {outdir} ({g.n} units, {args.periods} periods)")
    return 0


def _train_periods(panel, holdout):
    if holdout is None:
        return list(panel.periods[:-1]), panel.periods[-1]
    if holdout not in panel.periods:
        raise InputError(f"holdout period {holdout} not present in the panel")
    return [p for p in panel.periods if p != holdout], holdout


def cmd_fit(args) -> int:
    started = time.perf_counter()
    config = _resolve_config(args)
    panel, covariates, g, _ = _load_inputs(args, config)
    train, holdout = _train_periods(panel, args.holdout)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    if config.family in BAYES_FAMILIES:
        chain = run_chains(config, panel, covariates, g, train_periods=train, jobs=args.jobs)
        save_chain(chain, outdir)
        if args.save_draws:
            write_draws_csv(chain, outdir / "draws.csv")
        if chain.n_draws >= summarize.MIN_DRAWS:
            summaries = summarize.summarize_units(chain)
            summarize.write_summary_csv(summaries, outdir / "summary.csv")
        else:
            log.warning(
                "only %d retained draws; summary.csv holds posterior means without intervals",
                chain.n_draws,
            )
            _write_mean_only_summary_csv(chain, outdir / "summary.csv")
        if args.figures:
            figures.plot_traces(chain, outdir / "traces.png")
    else:
        fit = evaluate.fit_ols(panel, covariates, config.family, train)
        _write_point_summary_csv(fit, outdir / "summary.csv")
        meta = {
            "family": config.family.value,
            "seed": config.chain.seed,
            "config": config.to_dict(),
            "rss": fit.rss,
            "n_params": fit.n_params,
        }
        with open(outdir / "chain_meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

    _write_manifest(
        outdir, "fit", config.to_dict(), _input_paths(args), config.chain.seed,
        time.perf_counter() - started,
    )
    log.info("fit complete: %s (holdout %s)", config.family.value, holdout)
    print(f"wrote {outdir}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    config = _resolve_config(args)
    families = [_resolve_model(m.strip()) for m in args.models.split(",")]
    # adjacency is mandatory only if some requested family needs it
    probe_family = next(
        (f for f in families if f in BAYES_FAMILIES and f is not ModelFamily.GLOBAL_SHRINKAGE),
        ModelFamily.GLOBAL_SHRINKAGE,
    )
    panel, covariates, g, _ = _load_inputs(args, config.with_overrides(family=probe_family))
    _, holdout = _train_periods(panel, args.holdout)

    table = evaluate.compare_models(
        panel, covariates, g, families, config,
        holdout_period=holdout, cv=args.cv, jobs=args.jobs,
    )
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    evaluate.write_comparison_csv(table, outdir / "comparison.csv")
    detail = {
        "holdout_period": table.holdout_period,
        "train_periods": list(table.train_periods),
        "cv_folds": {fam: {str(p): v for p, v in folds.items()} for fam, folds in table.cv_folds.items()},
        "rows": [
            {
                "model": r.family.value,
                "mse_in": r.mse_in,
                "mse_out": r.mse_out,
                "pct_change": r.pct_change,
                "mse_cv": r.mse_cv,
                "morans_i_beta": r.morans_i_beta,
            }
            for r in table.rows
        ],
    }
    with open(outdir / "evaluation.json", "w", encoding="utf-8") as fh:
        json.dump(detail, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.figures:
        figures.plot_mse_comparison(table, outdir / "mse_comparison.png")
    _write_manifest(
        outdir, "evaluate", config.to_dict(), _input_paths(args), config.chain.seed,
        time.perf_counter() - started,
    )
    print(f"wrote {outdir}")
    return 0


def cmd_summarize(args) -> int:
    started = time.perf_counter()
    fit_dir = Path(args.fit_dir)
    chain = load_chain(fit_dir)
    var_a = "w_alpha" in chain.draws
    var_b = "w_beta" in chain.draws
    if args.barriers and not (var_a or var_b):
        raise IncompleteRunError(
            f"fit in {fit_dir} used fixed borders ({chain.family.value}); no barrier report available"
        )
    alpha_thr = args.alpha_threshold if args.alpha_threshold is not None else chain.config.get("alpha_threshold", 0.6)
    beta_thr = args.beta_threshold if args.beta_threshold is not None else chain.config.get("beta_threshold", 0.5)

    outdir = Path(args.output) if args.output else fit_dir
    outdir.mkdir(parents=True, exist_ok=True)
    summaries = summarize.summarize_units(chain)
    summarize.write_summary_csv(summaries, outdir / "summary.csv")

    report = None
    if var_a or var_b:
        report = summarize.barrier_report(chain, alpha_thr, beta_thr)
        summarize.write_barriers_csv(report, outdir / "barriers.csv")

    if args.polygons:
        polys = graphmod.load_polygons_geojson(args.polygons)
        try:
            summarize.export_geojson(summaries, report, polys, outdir / "results.geojson")
        except KeyError as exc:
            raise DimensionMismatchError(str(exc)) from exc

    if args.figures:
        figures.plot_traces(chain, outdir / "traces.png")
        if report is not None:
            figures.plot_barrier_probabilities(report, outdir / "barriers.png")

    _write_manifest(
        outdir, "summarize", chain.config, {"polygons": args.polygons} if args.polygons else {},
        chain.seed, time.perf_counter() - started,
    )
    print(f"wrote {outdir}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arealtrend",
        description="Bayesian CAR models for areal count panels with barrier detection.",
    )
    parser.add_argument("--version", action="version", version=f"arealtrend {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-covariates", help="derive the six predictors from raw inputs")
    p.add_argument("--raw", required=True, help="covariates_raw.csv")
    p.add_argument("--ethnicity-map", help="JSON mapping raw ethnicity columns to the five categories")
    p.add_argument("--exclusions", help="exclusions.txt, one unit id per line")
    p.add_argument("-o", "--output", required=True, help="covariates.csv to write")
    p.set_defaults(func=cmd_build_covariates)

    p = sub.add_parser("contiguity", help="queen-contiguity edges from polygons")
    p.add_argument("--polygons", required=True, help="polygons.geojson")
    p.add_argument("--snap-tolerance", type=float, default=1e-9)
    p.add_argument("-o", "--output", required=True, help="edges.csv to write")
    p.set_defaults(func=cmd_contiguity)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    shape = p.add_mutually_exclusive_group(required=True)
    shape.add_argument("--grid", help="RxC rook lattice, e.g. 10x10")
    shape.add_argument("--cycle", type=int, help="cycle graph size")
    shape.add_argument("--path", type=int, help="path graph size")
    p.add_argument("--periods", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--beta0", type=float, default=-0.05)
    p.add_argument("--tau2-alpha", type=float, default=0.5)
    p.add_argument("--tau2-beta", type=float, default=0.01)
    p.add_argument("--sigma2", type=float, default=0.05)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--gamma", help="comma-separated covariate coefficients")
    p.add_argument("--barrier-alpha", action="append", help="planted alpha barrier unitA:unitB")
    p.add_argument("--barrier-beta", action="append", help="planted beta barrier unitA:unitB")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    def add_common_inputs(p):
        p.add_argument("--crimes", required=True, help="crimes.csv")
        p.add_argument("--covariates", help="precomputed covariates.csv")
        p.add_argument("--covariates-raw", help="covariates_raw.csv (derive the six predictors)")
        p.add_argument("--ethnicity-map")
        p.add_argument("--edges", help="edges.csv adjacency")
        p.add_argument("--polygons", help="polygons.geojson (queen contiguity)")
        p.add_argument("--snap-tolerance", type=float, default=1e-9)
        p.add_argument("--exclusions", help="exclusions.txt")
        p.add_argument("--config", help="config.json with ModelConfig fields")
        p.add_argument("--holdout", type=int, help="holdout period (default: final period)")
        p.add_argument("--iters", type=int, help="total iterations")
        p.add_argument("--burnin", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--prior", choices=["eb", "noninf"])
        p.add_argument("--two-stage", action="store_true")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--figures", action="store_true", help="render report figures")
        p.add_argument("-o", "--output", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit one model family")
    add_common_inputs(p)
    p.add_argument("--model", help=f"one of {', '.join(MODEL_ALIASES)} (or set family in --config)")
    p.add_argument("--save-draws", action="store_true", help="also write draws.csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="compare model families on a shared split")
    add_common_inputs(p)
    p.add_argument("--models", required=True, help="comma-separated families")
    p.add_argument("--cv", action="store_true", help="leave-one-period-out cross-validation")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("summarize", help="summaries, barrier report and GeoJSON from a fit")
    p.add_argument("--fit-dir", required=True, help="directory produced by 'fit'")
    p.add_argument("--polygons", help="polygons.geojson for results.geojson")
    p.add_argument("--barriers", action="store_true", help="require the barrier report")
    p.add_argument("--alpha-threshold", type=float)
    p.add_argument("--beta-threshold", type=float)
    p.add_argument("--figures", action="store_true")
    p.add_argument("-o", "--output", help="output directory (default: the fit directory)")
    p.set_defaults(func=cmd_summarize)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ArealTrendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 1
    except (FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
