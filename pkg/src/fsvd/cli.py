"""Command-line front door.

Exit codes: 0 ok, 2 input/config error, 3 numerical failure,
4 reference (model/subject) not found.  stdout carries only data and
tables; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import simlab, tasks
from .core import emit_long_csv, ingest_long_csv
from .decomposition import DEFAULT_NU_GRID, FitConfig, FsvdModel, _dumps17, fsvd
from .errors import (
    DegenerateTimeRange,
    EmptyDataset,
    FsvdError,
    MalformedRow,
    NonFiniteValue,
    SchemaError,
    SubjectOutOfRange,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_NOT_FOUND = 4

_INPUT_ERRORS = (
    MalformedRow,
    NonFiniteValue,
    EmptyDataset,
    DegenerateTimeRange,
    SchemaError,
    FileNotFoundError,
    ValueError,
)


def _parse_rank(text: str):
    if text in ("auto-ratio", "auto-aic"):
        return "auto", text.split("-")[1]
    return int(text), "ratio"


def _parse_nu(text: str):
    return "cv" if text == "cv" else float(text)


def _load_model(path: str) -> FsvdModel:
    with open(path, "r", encoding="utf-8") as fh:
        return FsvdModel.from_json(fh.read())


def cmd_fit(args) -> int:
    ds, _, report = ingest_long_csv(args.input)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    R, rank_method = _parse_rank(args.rank)
    cfg = FitConfig(
        tau=args.tau, max_iter=args.max_iter, nu=_parse_nu(args.nu), seed=args.seed
    )
    try:
        model = fsvd(ds, R=R, cfg=cfg, rank_method=rank_method)
    except FsvdError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())
    print(f"{'r':>3} {'rho':>12} {'iters':>6} {'converged':>9} {'nu':>12}")
    for r, (c, nu) in enumerate(zip(model.components, model.nus), start=1):
        print(f"{r:>3} {c.rho:>12.6g} {c.iterations_used:>6} {str(c.converged):>9} {nu:>12.4g}")
    return EXIT_OK


def _parse_times(text: str) -> np.ndarray:
    if text.startswith("grid:"):
        N = int(text.split(":", 1)[1])
        if N < 1:
            raise ValueError("grid size must be >= 1")
        return np.linspace(0.0, 1.0, N) if N > 1 else np.array([0.0])
    return np.array([float(x) for x in text.split(",")])


def cmd_complete(args) -> int:
    model = _load_model(args.model)
    try:
        idx = model.subject_ids.index(args.subject)
    except ValueError:
        print(f"unknown subject: {args.subject}", file=sys.stderr)
        return EXIT_NOT_FOUND
    times = _parse_times(args.times)
    values = tasks.complete(model, idx, times)
    print("time,value")
    for t, v in zip(times, values):
        print(f"{t:.17g},{v:.17g}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    ds, _, _ = ingest_long_csv(args.input)
    model = _load_model(args.model)
    if model.subject_ids != ds.subject_ids:
        print("model subjects do not match input subjects", file=sys.stderr)
        return EXIT_INPUT
    try:
        cm = tasks.cluster(ds, model, H=args.clusters, K=args.k, seed=args.seed)
    except FsvdError as exc:
        print(f"clustering failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = tasks.cluster_to_json(cm, model.subject_ids)
    _write_or_print(text, args.output)
    return EXIT_OK


def cmd_regress(args) -> int:
    model = _load_model(args.model)
    z_by_id = {}
    with open(args.z_input, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "subject_id,z":
            print("z file must have header subject_id,z", file=sys.stderr)
            return EXIT_INPUT
        for line in fh:
            line = line.strip()
            if not line:
                continue
            sid, z = line.split(",")
            z_by_id[sid] = float(z)
    try:
        Z = np.array([z_by_id[sid] for sid in model.subject_ids])
    except KeyError as exc:
        print(f"missing response for subject {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        rm = tasks.regress(model, Z, R_use=args.r_use)
    except FsvdError as exc:
        print(f"regression failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write_or_print(tasks.regression_to_json(rm), args.output)
    return EXIT_OK


def cmd_factor(args) -> int:
    model = _load_model(args.model)
    try:
        fm = tasks.factor_model(model, K=args.k)
    except FsvdError as exc:
        print(f"factor model failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write_or_print(tasks.factor_to_json(fm, model.subject_ids), args.output)
    return EXIT_OK


def _write_or_print(text: str, path: str | None):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text)


def _truth_to_json(truth: simlab.ScenarioTruth) -> str:
    obj = {
        "schema": "fsvd-truth/1",
        "variant": truth.variant,
        "grid": list(truth.grid),
        "true_functions": [list(row) for row in truth.true_functions],
        "true_vectors": [list(row) for row in truth.true_vectors],
        "subjectwise_X": [list(row) for row in truth.subjectwise_X],
        "noise_vars": list(truth.noise_vars),
    }
    if truth.labels is not None:
        obj["labels"] = [int(x) for x in truth.labels]
    if truth.beta_grid is not None:
        obj["beta_grid"] = list(truth.beta_grid)
    return _dumps17(obj)


def cmd_simulate(args) -> int:
    scenario = args.scenario
    if scenario == "completion":
        ds, truth = simlab.gen_completion(
            args.n, args.j_low, args.j_high, homogeneous=args.homogeneous, seed=args.seed
        )
        Z = None
    elif scenario == "clustering":
        ds, truth = simlab.gen_clustering(args.n, args.j_low, args.j_high, seed=args.seed)
        Z = None
    elif scenario == "regression":
        ds, Z, truth = simlab.gen_regression(args.n, args.j_low, args.j_high, seed=args.seed)
    elif scenario == "factor":
        ds, truth = simlab.gen_factor(args.n, args.j_low, args.j_high, seed=args.seed)
        Z = None
    else:
        print(f"unknown scenario: {scenario}", file=sys.stderr)
        return EXIT_INPUT
    try:
        with open(f"{args.out_prefix}_data.csv", "w", encoding="utf-8") as fh:
            fh.write(emit_long_csv(ds))
        with open(f"{args.out_prefix}_truth.json", "w", encoding="utf-8") as fh:
            fh.write(_truth_to_json(truth))
        if Z is not None:
            with open(f"{args.out_prefix}_z.csv", "w", encoding="utf-8") as fh:
                fh.write("subject_id,z\n")
                for sid, z in zip(ds.subject_ids, Z):
                    fh.write(f"{sid},{z:.17g}\n")
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.verify:
        A = truth.true_vectors
        if np.any(A) and np.max(np.abs(A.T @ A - np.eye(A.shape[1]))) > 1e-8:
            print("verification failed: loadings not orthonormal", file=sys.stderr)
            return EXIT_NUMERICAL
        print("verify: ok", file=sys.stderr)
    return EXIT_OK


VALID_METHODS = ("fsvd", "spline", "svd")


def cmd_bench(args) -> int:
    scenario = args.scenario
    if scenario not in simlab.SCENARIOS:
        print(
            f"unknown scenario: {scenario}; valid: {', '.join(simlab.SCENARIOS)}",
            file=sys.stderr,
        )
        return EXIT_INPUT
    methods = tuple(args.methods.split(","))
    for m in methods:
        if m not in VALID_METHODS:
            print(
                f"unknown method: {m}; valid: {', '.join(VALID_METHODS)}",
                file=sys.stderr,
            )
            return EXIT_INPUT
    n_list = [int(x) for x in args.n_list.split(",")]
    j_specs = []
    for spec in args.j_specs.split(","):
        lo, hi = spec.split("-")
        j_specs.append((int(lo), int(hi)))
    rows = simlab.run_bench(
        scenario,
        n_list,
        j_specs,
        replicates=args.replicates,
        methods=methods,
        seed=args.seed,
        threads=args.threads,
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(simlab.bench_rows_to_csv(rows))
    print(simlab.format_bench_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsvd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a decomposition from a long CSV")
    f.add_argument("--input", required=True)
    f.add_argument("--rank", default="auto-ratio", help="R, auto-ratio, or auto-aic")
    f.add_argument("--nu", default="cv", help="penalty value or 'cv'")
    f.add_argument("--tau", type=float, default=1e-4)
    f.add_argument("--max-iter", type=int, default=100)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--output", required=True)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("complete", help="evaluate a fitted trajectory")
    c.add_argument("--model", required=True)
    c.add_argument("--subject", required=True)
    c.add_argument("--times", required=True, help="comma list or grid:N")
    c.set_defaults(func=cmd_complete)

    cl = sub.add_parser("cluster", help="cluster subjects from a fitted model")
    cl.add_argument("--input", required=True)
    cl.add_argument("--model", required=True)
    cl.add_argument("--clusters", type=int, required=True)
    cl.add_argument("--k", type=int, required=True)
    cl.add_argument("--seed", type=int, default=0)
    cl.add_argument("--output")
    cl.set_defaults(func=cmd_cluster)

    rg = sub.add_parser("regress", help="scalar-on-function regression")
    rg.add_argument("--model", required=True)
    rg.add_argument("--z-input", required=True, help="CSV with header subject_id,z")
    rg.add_argument("--r-use", type=int, default=3)
    rg.add_argument("--output")
    rg.set_defaults(func=cmd_regress)

    fa = sub.add_parser("factor", help="factor loadings and curves")
    fa.add_argument("--model", required=True)
    fa.add_argument("--k", type=int, required=True)
    fa.add_argument("--output")
    fa.set_defaults(func=cmd_factor)

    sm = sub.add_parser("simulate", help="emit a synthetic scenario")
    sm.add_argument(
        "--scenario", required=True,
        choices=["completion", "clustering", "regression", "factor"],
    )
    sm.add_argument("--n", type=int, required=True)
    sm.add_argument("--j-low", type=int, required=True)
    sm.add_argument("--j-high", type=int, required=True)
    sm.add_argument("--homogeneous", action="store_true")
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out-prefix", required=True)
    sm.add_argument("--verify", action="store_true")
    sm.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="Monte Carlo benchmark grid")
    b.add_argument("--scenario", required=True)
    b.add_argument("--n-list", required=True, help="comma list, e.g. 50,100")
    b.add_argument("--j-specs", required=True, help="comma list, e.g. 4-8,6-10")
    b.add_argument("--replicates", type=int, default=100)
    b.add_argument("--methods", default="fsvd")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SubjectOutOfRange as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NOT_FOUND
    except _INPUT_ERRORS as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT
    except FsvdError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
