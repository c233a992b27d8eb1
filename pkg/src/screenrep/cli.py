"""Command-line interface.

One executable, ``screenrep``, with subcommands for every pipeline stage:

    fit        fit per-study two-groups models
    screen     cluster-based replicability fdr (SCREEN)
    screen-ind exact fdr under independence (SCREEN-ind)
    repfdr-ub  restricted-EM upper bound (repfdr-UB)
    baselines  Fisher / BH-count / Exp-count
    cluster    study correlation network + communities
    simulate   scenario generators with ground truth
    evaluate   Jaccard/FDP of a selection against a truth matrix
    bench      run and score several methods over seeds

Every run writes ``<out>.manifest.json`` capturing the configuration, seed,
package versions and wall time; tabular outputs reference it in a leading
comment line. Exit codes: 0 success, 1 runtime failure, 2 usage error.

Defaults may be overridden by ``SCREENREP_<FLAG>`` environment variables
(e.g. ``SCREENREP_THREADS=1``), which explicit flags in turn override.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, _kernels
from .baselines import bh_count, exp_count, fisher_meta
from .config_em import EMOptions, repfdr_upper_bound
from .data_io import (
    StatsMatrix,
    as_zscores,
    load_matrix,
    load_truth_matrix,
    save_matrix,
    truth_matrix_to_tsv,
)
from .indep_dp import fdr_k_table, select_at_cutoff
from .screen_pipeline import FdrTable, ScreenOptions, screen
from .simbench import (
    evaluate,
    run_benchmark,
    simulate_dense,
    simulate_scenario1,
    simulate_scenario2,
    write_scores_csv,
)
from .study_cluster import correlation_matrix, detect_communities
from .two_groups import FitOptions, fit_study_models, models_from_json, models_to_json


def _env_default(name: str, fallback, cast):
    raw = os.environ.get(f"SCREENREP_{name.upper()}")
    if raw is None:
        return fallback
    return cast(raw)


def _parse_ks(text: str) -> list[int]:
    """Parse '4' or an inclusive range '2..5'."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise argparse.ArgumentTypeError(f"empty k range {text!r}")
        return list(range(lo_i, hi_i + 1))
    return [int(text)]


def _add_io_args(sp, needs_tail: bool = True):
    sp.add_argument("--input", required=True, help="TSV statistic matrix")
    sp.add_argument("--scale", choices=["pvalue", "zscore"], default="pvalue")
    if needs_tail:
        sp.add_argument(
            "--tail",
            choices=["one_sided", "two_sided_abs"],
            default=None,
            help="p-to-z convention; required for p-value input, rejected for z-scores",
        )


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=_env_default("seed", 0, int))
    sp.add_argument("--threads", type=int, default=_env_default("threads", None, int))
    sp.add_argument("--out", required=True)


def _load_zscores(args) -> StatsMatrix:
    mat = load_matrix(args.input, args.scale)
    tail = getattr(args, "tail", None)
    if mat.scale == "pvalue" and tail is None:
        raise SystemExit2("--tail is required for p-value input")
    return as_zscores(mat, tail if mat.scale == "pvalue" else None)


class SystemExit2(Exception):
    """Usage error discovered after argparse (exit code 2)."""


def _manifest(args, parser_name: str, outputs: list[str], t0: float, extra: dict | None = None) -> dict:
    return {
        "tool": "screenrep",
        "version": __version__,
        "subcommand": parser_name,
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "kernel_backend": _kernels.backend(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "outputs": outputs,
        "wall_time_sec": time.perf_counter() - t0,
    }


def _write_manifest(manifest: dict, out_path: str) -> str:
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return str(path)


def _manifest_comment(out_path: str) -> str:
    return f"run-manifest: {Path(str(out_path) + '.manifest.json').name}"


def _get_models(args, Z: StatsMatrix):
    if getattr(args, "models", None):
        models = models_from_json(args.models)
        if len(models) != Z.n_studies:
            raise SystemExit2(
                f"model file has {len(models)} studies, input matrix has {Z.n_studies}"
            )
        return models
    return fit_study_models(
        Z, null_mode=args.null_mode, opts=FitOptions(), threads=args.threads
    )


def _write_fdr_table(table: FdrTable, args) -> None:
    table.to_tsv(args.out, comment=_manifest_comment(args.out))


# -- subcommand handlers -----------------------------------------------------


def cmd_fit(args) -> list[str]:
    Z = _load_zscores(args)
    models = fit_study_models(
        Z, null_mode=args.null_mode, opts=FitOptions(), threads=args.threads
    )
    models_to_json(models, args.out)
    return [args.out]


def cmd_screen(args) -> list[str]:
    Z = _load_zscores(args)
    models = _get_models(args, Z)
    opts = ScreenOptions(
        null_mode=args.null_mode,
        n_h=args.nh,
        bootstrap=args.bootstrap,
        edge_threshold=args.threshold,
        seed=args.seed,
        cutoff=args.cutoff,
        threads=args.threads,
    )
    result = screen(Z, args.k, opts=opts, models=models)
    _write_fdr_table(result.table, args)
    outputs = [args.out]
    if args.report:
        Path(args.report).write_text(
            json.dumps(result.report, indent=2, default=str) + "\n", encoding="utf-8"
        )
        outputs.append(args.report)
    return outputs


def cmd_screen_ind(args) -> list[str]:
    Z = _load_zscores(args)
    models = _get_models(args, Z)
    values = fdr_k_table(models, Z, args.k)
    table = FdrTable(Z.gene_ids, list(args.k), values, method="screen_ind", cutoff=args.cutoff)
    _write_fdr_table(table, args)
    return [args.out]


def cmd_repfdr_ub(args) -> list[str]:
    Z = _load_zscores(args)
    models = _get_models(args, Z)
    values, state = repfdr_upper_bound(
        models, Z, args.k, n_h=args.nh, opts=EMOptions(), order=args.order
    )
    table = FdrTable(Z.gene_ids, list(args.k), values, method="repfdr_ub", cutoff=args.cutoff)
    _write_fdr_table(table, args)
    outputs = [args.out]
    if args.state:
        state.to_json(args.state)
        outputs.append(args.state)
    return outputs


def cmd_baselines(args) -> list[str]:
    mat = load_matrix(args.input, args.scale)
    if args.method in ("fisher", "bh-count") and mat.scale != "pvalue":
        raise SystemExit2(f"{args.method} requires p-value input")
    rows: dict[str, np.ndarray] = {}
    if args.method == "fisher":
        res = fisher_meta(mat)
        rows = {"combined_p": res.statistic, "qvalue": res.qvalues}
    elif args.method == "bh-count":
        res = bh_count(mat)
        rows = {"count": res.statistic}
    else:  # exp-count
        Z = as_zscores(mat, args.tail if mat.scale == "pvalue" else None)
        models = _get_models(args, Z)
        res = exp_count(models, Z)
        rows = {"exp_count": res.statistic}
    header = list(rows)
    out_mat = StatsMatrix(
        mat.gene_ids, tuple(header), np.column_stack([rows[h] for h in header]), "zscore"
    )
    save_matrix(out_mat, args.out, comment=_manifest_comment(args.out))
    return [args.out]


def cmd_cluster(args) -> list[str]:
    Z = _load_zscores(args)
    models = _get_models(args, Z)
    corr = correlation_matrix(
        models, Z, B=args.bootstrap, seed=args.seed, threads=args.threads
    )
    clustering = detect_communities(
        corr, edge_threshold=args.threshold, seed=args.seed, study_ids=Z.study_ids
    )
    clustering.to_json(args.out)
    return [args.out]


def cmd_simulate(args) -> list[str]:
    if args.scenario == "s1":
        inst = simulate_scenario1(n=args.n, m=args.m, x=args.x, seed=args.seed)
    elif args.scenario == "s2":
        inst = simulate_scenario2(n=args.n, m=args.m, M=args.M, r=args.r, x=args.x, seed=args.seed)
    else:
        inst = simulate_dense(n=args.n, m=30, seed=args.seed)
    save_matrix(inst.stats, args.out_p, comment=_manifest_comment(args.out_p))
    truth_matrix_to_tsv(inst.truth, inst.stats.gene_ids, inst.stats.study_ids, args.out_truth)
    return [args.out_p, args.out_truth]


def cmd_evaluate(args) -> list[str]:
    gene_ids, truth = load_truth_matrix(args.truth)
    index = {g: i for i, g in enumerate(gene_ids)}
    selected_ids = [
        ln.strip() for ln in Path(args.selected).read_text(encoding="utf-8").splitlines() if ln.strip()
    ]
    missing = [g for g in selected_ids if g not in index]
    if missing:
        raise SystemExit2(f"selected genes not present in the truth matrix: {missing[:5]}")
    score = evaluate([index[g] for g in selected_ids], truth, args.k)
    payload = {
        "k": score.k,
        "jaccard": score.jaccard,
        "fdp": score.fdp,
        "n_selected": score.n_selected,
    }
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        return [args.out]
    return []


def cmd_bench(args) -> list[str]:
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = run_benchmark(
        scenario=args.scenario,
        ks=args.k,
        seeds=seeds,
        methods=tuple(args.methods.split(",")),
        x=args.x,
        M=args.M,
        r=args.r,
        n=args.n,
        m=args.m,
        null_mode=args.null_mode,
        n_h=args.nh,
        cutoff=args.cutoff,
        threads=args.threads,
    )
    write_scores_csv(rows, args.out)
    return [args.out]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="screenrep",
        description="Replicability analysis across multiple studies",
    )
    parser.add_argument("--version", action="version", version=f"screenrep {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit", help="fit per-study two-groups models")
    _add_io_args(p)
    p.add_argument("--null-mode", choices=["theoretical", "empirical"], default="theoretical")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("screen", help="cluster-based replicability fdr")
    _add_io_args(p)
    p.add_argument("--models", help="precomputed models JSON (skips fitting)")
    p.add_argument("--null-mode", choices=["theoretical", "empirical"], default="theoretical")
    p.add_argument("--k", type=_parse_ks, required=True, help="k or inclusive range a..b")
    p.add_argument("--nh", type=int, default=_env_default("nh", 512, int))
    p.add_argument("--cutoff", type=float, default=0.2)
    p.add_argument("--bootstrap", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.1, help="absolute-correlation edge threshold")
    p.add_argument("--report", help="write models/clustering/diagnostics JSON here")
    _add_common(p)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("screen-ind", help="exact fdr_k under independence")
    _add_io_args(p)
    p.add_argument("--models", help="precomputed models JSON (skips fitting)")
    p.add_argument("--null-mode", choices=["theoretical", "empirical"], default="theoretical")
    p.add_argument("--k", type=_parse_ks, required=True)
    p.add_argument("--cutoff", type=float, default=0.2)
    _add_common(p)
    p.set_defaults(func=cmd_screen_ind)

    p = sub.add_parser("repfdr-ub", help="restricted-EM fdr_k upper bound")
    _add_io_args(p)
    p.add_argument("--models", help="precomputed models JSON (skips fitting)")
    p.add_argument("--null-mode", choices=["theoretical", "empirical"], default="theoretical")
    p.add_argument("--k", type=_parse_ks, required=True)
    p.add_argument("--nh", type=int, default=_env_default("nh", 512, int))
    p.add_argument("--cutoff", type=float, default=0.2)
    p.add_argument("--order", choices=["input", "power"], default="input")
    p.add_argument("--state", help="serialize the final configuration state here")
    _add_common(p)
    p.set_defaults(func=cmd_repfdr_ub)

    p = sub.add_parser("baselines", help="Fisher / BH-count / Exp-count")
    _add_io_args(p)
    p.add_argument("--method", choices=["fisher", "bh-count", "exp-count"], required=True)
    p.add_argument("--models", help="precomputed models JSON (exp-count only)")
    p.add_argument("--null-mode", choices=["theoretical", "empirical"], default="theoretical")
    _add_common(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("cluster", help="study correlations and communities")
    _add_io_args(p)
    p.add_argument("--models", help="precomputed models JSON (skips fitting)")
    p.add_argument("--null-mode", choices=["theoretical", "empirical"], default="theoretical")
    p.add_argument("--bootstrap", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("simulate", help="generate a scenario with ground truth")
    p.add_argument("--scenario", choices=["s1", "s2", "dense"], required=True)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--x", type=float, default=1000.0)
    p.add_argument("--M", type=int, default=4)
    p.add_argument("--r", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=_env_default("seed", 0, int))
    p.add_argument("--out-p", required=True, help="statistics TSV")
    p.add_argument("--out-truth", required=True, help="ground-truth TSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score a selection against ground truth")
    p.add_argument("--selected", required=True, help="text file, one gene id per line")
    p.add_argument("--truth", required=True, help="ground-truth TSV")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="benchmark methods over seeds")
    p.add_argument("--scenario", choices=["s1", "s2", "dense"], required=True)
    p.add_argument("--k", type=_parse_ks, default=list(range(2, 6)))
    p.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds")
    p.add_argument(
        "--methods",
        default="fisher,exp_count,bh_count,screen_ind,repfdr_ub,screen",
        help="comma-separated subset of methods",
    )
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--x", type=float, default=1000.0)
    p.add_argument("--M", type=int, default=4)
    p.add_argument("--r", type=float, default=0.8)
    p.add_argument("--null-mode", choices=["theoretical", "empirical"], default="theoretical")
    p.add_argument("--nh", type=int, default=_env_default("nh", 512, int))
    p.add_argument("--cutoff", type=float, default=0.2)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        if getattr(args, "scale", None) == "zscore" and getattr(args, "tail", None):
            raise SystemExit2("--tail does not apply to z-score input")
        outputs = args.func(args)
    except SystemExit2 as exc:
        print(f"screenrep {args.subcommand}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    anchor = getattr(args, "out", None) or (outputs[0] if outputs else None)
    if anchor:
        _write_manifest(_manifest(args, args.subcommand, outputs, t0), anchor)
    return 0


if __name__ == "__main__":
    sys.exit(main())
