"""Command-line interface.

Exit codes: 0 success / converged, 1 input (ingest, encoding, imputation)
error, 2 invalid flags, 3 fit stopped at max iterations without
converging, 4 solver failure, 5 selection or importance failure.
Errors go to stderr as one JSON object per line; stdout only carries
progress messages.
"""
import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (apply_report, ingest_csv, preprocess, read_schema, write_panel_csv,
                   PreprocessReport)
from .exceptions import (DivergenceError, EncodingError, ImportanceError,
                         ImputationError, IngestError, InvalidArgumentError,
                         SelectionError, StepSizeError)
from .flsa import FusionProblem, flsa_solve
from .model import Coefficients, PenaltyParams, class_probabilities
from .selection import Grid, make_grid, select, selection_table
from .simulate import SimConfig, generate, scaled_trajectories
from .solver import SolverConfig, fit
from .stability import ImportanceConfig, importance

EXIT_OK, EXIT_INPUT, EXIT_FLAGS, EXIT_NOT_CONVERGED, EXIT_SOLVER, EXIT_SELECTION = range(6)
THREADS_ENV = "MULTIFUSED_THREADS"
INTERCEPT = "(intercept)"


class UsageError(Exception):
    pass


def fmt(v):
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _rows_to_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else 1


# -- shared pieces -----------------------------------------------------------

def _load_raw(args):
    classes, schema = (None, None)
    if getattr(args, "schema", None):
        classes, schema = read_schema(args.schema)
    if getattr(args, "classes", None):
        classes = tuple(c.strip() for c in args.classes.split(","))
    return ingest_csv(args.data, schema=schema, classes=classes)


def _solver_config(args):
    return SolverConfig(max_iters=args.max_iters, tau0=args.tau0, gamma=args.gamma,
                        epsilon=args.eps, stop_rule=args.stop)


def coefficients_csv(coeffs, predictor_names, class_labels, times):
    rows = []
    for k in range(coeffs.K - 1):
        for s, t in enumerate(times):
            rows.append((INTERCEPT, class_labels[k], t, fmt(coeffs.beta0[s, k])))
    for j, name in enumerate(predictor_names):
        for k in range(coeffs.K - 1):
            for s, t in enumerate(times):
                rows.append((name, class_labels[k], t, fmt(coeffs.beta[j, s, k])))
    return _rows_to_csv(("predictor", "class", "time", "value"), rows)


def read_coefficients_csv(path, predictor_names, class_labels, times):
    p, T, K = len(predictor_names), len(times), len(class_labels)
    beta0 = np.zeros((T, K - 1))
    beta = np.zeros((p, T, K - 1))
    pos = {name: j for j, name in enumerate(predictor_names)}
    cpos = {lab: k for k, lab in enumerate(class_labels[:-1])}
    tpos = {t: s for s, t in enumerate(times)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["predictor", "class", "time", "value"]:
            raise IngestError(f"{path}: expected header predictor,class,time,value")
        for row in reader:
            try:
                k, s = cpos[row["class"]], tpos[int(row["time"])]
            except (KeyError, ValueError):
                raise IngestError(f"{path}: row {row} does not match the data's "
                                  "classes/times") from None
            value = float(row["value"])
            if row["predictor"] == INTERCEPT:
                beta0[s, k] = value
            elif row["predictor"] in pos:
                beta[pos[row["predictor"]], s, k] = value
            else:
                raise IngestError(f"{path}: unknown predictor {row['predictor']!r}")
    return Coefficients(beta0, beta)


def trace_csv(result):
    rows = [(0, fmt(result.objective_trace[0]), "")]
    rows += [(s + 1, fmt(result.objective_trace[s + 1]), fmt(result.step_sizes[s]))
             for s in range(result.iterations_run)]
    return _rows_to_csv(("iteration", "objective", "step_size"), rows)


# -- commands ----------------------------------------------------------------

def cmd_simulate(args, out):
    traj = scaled_trajectories(args.p, args.T)
    cfg = SimConfig(n=args.n, T=args.T, K=args.K, p=args.p, seed=args.seed, trajectories=traj)
    panel, truth = generate(cfg)
    write_panel_csv(panel, out / "panel.csv")
    schema = {"classes": list(panel.class_labels),
              "predictors": {name: {"kind": "numeric"} for name in panel.predictor_names}}
    _write(out / "schema.json", json.dumps(schema, indent=2) + "\n")
    _write(out / "truth.csv", coefficients_csv(truth, panel.predictor_names,
                                               panel.class_labels, panel.times))
    if args.test_n:
        test, _ = generate(replace(cfg, n=args.test_n, seed=args.seed + 1))
        write_panel_csv(test, out / "test.csv")
    return EXIT_OK


def cmd_fit(args, out):
    raw = _load_raw(args)
    panel, report = preprocess(raw)
    result = fit(panel, PenaltyParams(args.lam1, args.lam2), _solver_config(args))
    _write(out / "coefficients.csv", coefficients_csv(
        result.coefficients, panel.predictor_names, panel.class_labels, panel.times))
    _write(out / "trace.csv", trace_csv(result))
    _write(out / "report.json", report.to_json() + "\n")
    print(f"fit: {result.iterations_run} iterations, converged={result.converged}, "
          f"objective={result.objective:.6g}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_predict(args, out):
    raw = _load_raw(args)
    if args.report:
        report = PreprocessReport.from_json(Path(args.report).read_text(encoding="utf-8"))
        panel = apply_report(raw, report)
    else:
        panel = preprocess(raw)[0]
    coeffs = read_coefficients_csv(args.coefficients, panel.predictor_names,
                                   panel.class_labels, panel.times)
    labels = panel.class_labels
    rows = []
    for i, ident in enumerate(panel.ids):
        for s, t in enumerate(panel.times):
            probs = class_probabilities(coeffs, panel.X[i, :, s], s)
            best = int(np.argmax(probs))
            rows.append((ident, t, labels[best], *(fmt(q) for q in probs)))
    header = ("id", "time", "predicted", *(f"p_{lab}" for lab in labels))
    _write(out / "predictions.csv", _rows_to_csv(header, rows))
    return EXIT_OK


def _grid_for(args, panel):
    if args.lam1_values or args.lam2_values:
        if not (args.lam1_values and args.lam2_values):
            raise UsageError("--lam1-values and --lam2-values must be given together")
        return Grid(tuple(float(v) for v in args.lam1_values.split(",")),
                    tuple(float(v) for v in args.lam2_values.split(",")))
    return make_grid(panel, args.grid_n1, args.grid_n2)


def cmd_cv(args, out):
    raw = _load_raw(args)
    panel, report = preprocess(raw)
    grid = _grid_for(args, panel)
    table = selection_table(raw, grid, folds=args.folds, seed=args.seed,
                            config=_solver_config(args), threads=_threads(args))
    lam1, lam2 = select(table, args.rule)
    result = fit(panel, PenaltyParams(lam1, lam2), _solver_config(args))
    _write(out / "selection.csv", table.to_csv())
    chosen = {"rule": args.rule, "lam1": lam1, "lam2": lam2,
              "all_rules": {r: list(v) for r, v in table.chosen.items()},
              "grid": {"lam1": list(grid.lam1_values), "lam2": list(grid.lam2_values),
                       **grid.meta},
              "meta": table.meta}
    _write(out / "chosen.json", json.dumps(chosen, indent=2, sort_keys=True) + "\n")
    _write(out / "coefficients.csv", coefficients_csv(
        result.coefficients, panel.predictor_names, panel.class_labels, panel.times))
    _write(out / "report.json", report.to_json() + "\n")
    print(f"cv: chose lam1={lam1:.6g}, lam2={lam2:.6g} by {args.rule}")
    return EXIT_OK


def cmd_importance(args, out):
    raw = _load_raw(args)
    cfg = ImportanceConfig(replicates=args.replicates, fraction=args.fraction,
                           inner_selection=not args.no_inner_selection, seed=args.seed,
                           lam1=args.lam1, lam2=args.lam2, folds=args.folds,
                           grid_n1=args.grid_n1, grid_n2=args.grid_n2,
                           reuse_cv_folds=args.reuse_cv_folds,
                           solver=_solver_config(args))
    res = importance(raw, cfg, threads=_threads(args))
    _write(out / "importance.csv", res.to_csv())
    chosen = [{"replicate": r + 1, "lam1": a, "lam2": b} for r, (a, b) in enumerate(res.chosen)]
    _write(out / "replicates.json", json.dumps(chosen, indent=2) + "\n")
    return EXIT_OK


def cmd_flsa(args, out):
    src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    with src:
        tokens = [line.strip() for line in src if line.strip()]
    try:
        x = np.array([float(v) for v in tokens])
    except ValueError as exc:
        raise IngestError(f"flsa input: {exc}") from None
    theta = flsa_solve(FusionProblem(x, args.lam1, args.lam2))
    text = "\n".join(fmt(v) for v in theta) + "\n"
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "cv": cmd_cv, "importance": cmd_importance, "flsa": cmd_flsa}


# -- parser ------------------------------------------------------------------

def _nonneg(v):
    x = float(v)
    if not np.isfinite(x) or x < 0:
        raise argparse.ArgumentTypeError(f"expected a finite value >= 0, got {v}")
    return x


def _posint(v):
    x = int(v)
    if x < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return x


def build_parser():
    parser = argparse.ArgumentParser(
        prog="multifused",
        description="Multinomial fused lasso for longitudinal classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (created if needed)")
    common.add_argument("--threads", type=_posint, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, help="long-format CSV: id,time,y,<predictors>")
    data.add_argument("--schema", help="JSON sidecar with classes and predictor kinds")
    data.add_argument("--classes", help="comma-separated class order; last is the reference")

    solver = argparse.ArgumentParser(add_help=False)
    d = SolverConfig()
    solver.add_argument("--max-iters", type=_posint, default=d.max_iters)
    solver.add_argument("--tau0", type=float, default=d.tau0)
    solver.add_argument("--gamma", type=float, default=d.gamma)
    solver.add_argument("--eps", type=float, default=d.epsilon)
    solver.add_argument("--stop", choices=("obj", "iter"), default="obj")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--folds", type=int, default=4)
    grid.add_argument("--grid-n1", type=_posint, default=8)
    grid.add_argument("--grid-n2", type=_posint, default=6)
    grid.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic panel")
    p.add_argument("--n", type=_posint, default=50)
    p.add_argument("--T", type=_posint, default=15)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--p", type=_posint, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-n", type=int, default=0, help="also write an i.i.d. test panel")

    p = sub.add_parser("fit", parents=[common, data, solver], help="fit at fixed lam1, lam2")
    p.add_argument("--lam1", type=_nonneg, required=True)
    p.add_argument("--lam2", type=_nonneg, required=True)

    p = sub.add_parser("predict", parents=[common, data], help="predict from a coefficient CSV")
    p.add_argument("--coefficients", required=True)
    p.add_argument("--report", help="preprocessing report from the training run")

    p = sub.add_parser("cv", parents=[common, data, solver, grid],
                       help="select lam1, lam2 and refit")
    p.add_argument("--rule", default="cv_min",
                   choices=("cv_min", "cv_one_se", "aic", "bic", "aic_mc", "bic_mc"))
    p.add_argument("--lam1-values", help="explicit comma-separated lam1 grid")
    p.add_argument("--lam2-values", help="explicit comma-separated lam2 grid")

    p = sub.add_parser("importance", parents=[common, data, solver, grid],
                       help="subsampling variable importance")
    p.add_argument("--replicates", type=_posint, default=4)
    p.add_argument("--fraction", type=float, default=0.75)
    p.add_argument("--no-inner-selection", action="store_true")
    p.add_argument("--reuse-cv-folds", action="store_true")
    p.add_argument("--lam1", type=_nonneg, default=0.0)
    p.add_argument("--lam2", type=_nonneg, default=0.0)

    p = sub.add_parser("flsa", parents=[common], help="solve one fused lasso signal problem")
    p.add_argument("--input", default="-", help="newline-separated numbers ('-' = stdin)")
    p.add_argument("--output", help="write the solution here instead of stdout")
    p.add_argument("--lam1", type=_nonneg, default=0.0)
    p.add_argument("--lam2", type=_nonneg, default=0.0)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="override the recorded output directory")
    return parser


def _error(kind, exc, code):
    payload = {"error": kind, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def _manifest(args, argv, out, started, code):
    inputs = {}
    for key in ("data", "schema", "coefficients", "report", "input"):
        path = getattr(args, key, None)
        if path and path != "-" and Path(path).is_file():
            inputs[key] = {"path": str(path), "sha256": _sha256(path)}
    outputs = {p.name: _sha256(p) for p in sorted(out.iterdir())
               if p.is_file() and p.name != "manifest.json"}
    config = {k: v for k, v in vars(args).items() if k not in ("out",)}
    return {
        "command": args.command,
        "argv": argv,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "exit_code": code,
        "wall_time_s": round(time.perf_counter() - started, 6),
    }


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "replay":
        recorded = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        again = list(recorded["argv"])
        if args.out:
            again = _replace_out(again, args.out)
        return main(again)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, out)
    except UsageError as exc:
        return _error("usage", exc, EXIT_FLAGS)
    except (IngestError, EncodingError, ImputationError, OSError) as exc:
        return _error(type(exc).__name__, exc, EXIT_INPUT)
    except (SelectionError, ImportanceError) as exc:
        return _error(type(exc).__name__, exc, EXIT_SELECTION)
    except (StepSizeError, DivergenceError) as exc:
        return _error(type(exc).__name__, exc, EXIT_SOLVER)
    except InvalidArgumentError as exc:
        return _error("InvalidArgument", exc, EXIT_FLAGS)
    manifest = _manifest(args, argv, out, started, code)
    _write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def _replace_out(argv, out):
    argv = list(argv)
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            argv[i + 1] = out
            return argv
        if a.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    return argv + ["--out", out]


if __name__ == "__main__":
    sys.exit(main())
