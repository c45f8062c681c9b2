"""Command-line front end: fit, predict, select, path, and bench.

Exit codes: 0 on success, 1 on user or input errors, 2 on numerical
non-convergence.  Floating-point output is printed with 17 significant
digits so files round-trip exactly.  Option precedence is
flags > config file > defaults; the config file holds one key=value per
line with keys named like the long flags (dashes or underscores).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys as _sys

import numpy as np

from . import experiments
from .kernels import GAUSSIAN, LINEAR, POLYNOMIAL, KernelSpec
from .model import FittedModel, load_model_json, rls_fit, save_model_json
from .operators import Dataset, assemble
from .selection import select
from .solver import FitState, SolverConfig, SolverError, fit, fit_path

EXIT_OK = 0
EXIT_USER = 1
EXIT_NUMERIC = 2


class UserError(Exception):
    """Input or usage problem; reported on stderr with exit code 1."""


class NumericError(Exception):
    """Solver did not converge; reported on stderr with exit code 2."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def load_csv_dataset(path: str, target: str | None = None) -> Dataset:
    """Read a numeric CSV with a header row; one column is the response.

    The response column is ``target`` when given, otherwise the last
    column.  Malformed rows are reported with their 1-based line number.
    """
    if not os.path.exists(path):
        raise UserError(f"{path}: no such file")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UserError(f"{path}: no rows") from None
        header = [h.strip() for h in header]
        if len(header) < 2:
            raise UserError(f"{path}: need at least one feature column and a "
                            f"response column")
        if target is None:
            y_col = len(header) - 1
        else:
            if target not in header:
                raise UserError(f"{path}: no column named {target!r}")
            y_col = header.index(target)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise UserError(f"{path}:{lineno}: expected {len(header)} fields, "
                                f"got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise UserError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise UserError(f"{path}: no rows")
    M = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(M)):
        bad = int(np.where(~np.all(np.isfinite(M), axis=1))[0][0]) + 2
        raise UserError(f"{path}:{bad}: NaN or Inf value")
    mask = [c for c in range(len(header)) if c != y_col]
    names = [header[c] for c in mask]
    return Dataset(M[:, mask], M[:, y_col], names=names)


def load_feature_csv(path: str, expected_d: int) -> tuple[np.ndarray, list[str]]:
    """Read a feature-only CSV (no response column required)."""
    if not os.path.exists(path):
        raise UserError(f"{path}: no such file")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UserError(f"{path}: no rows") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise UserError(f"{path}:{lineno}: expected {len(header)} fields, "
                                f"got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise UserError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise UserError(f"{path}: no rows")
    M = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(M)):
        raise UserError(f"{path}: NaN or Inf value")
    cols = M.shape[1]
    if cols == expected_d + 1:
        M = M[:, :expected_d]   # trailing response column tolerated
    elif cols != expected_d:
        raise UserError(f"{path}: {cols} columns, model expects {expected_d} "
                        f"features")
    return M, header


def _read_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise UserError(f"{path}: no such config file")
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UserError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip().strip("\"'")
    return values


def build_kernel(args, train: Dataset | None = None) -> KernelSpec:
    fam = (args.kernel or GAUSSIAN).lower()
    if fam in ("gaussian", "rbf"):
        gamma = args.gamma
        if gamma is None:
            if train is None:
                raise UserError("--gamma is required for the gaussian kernel here")
            gamma = experiments.gaussian_width_heuristic(
                train.X, k=min(20, max(1, train.n - 1)))
            print(f"using data-driven gaussian width gamma={_fmt(gamma)}")
            if gamma <= 0:
                raise UserError("data-driven gaussian width is degenerate (0); "
                                "pass --gamma explicitly")
        return KernelSpec(GAUSSIAN, gamma=float(gamma))
    if fam in ("poly", "polynomial"):
        return KernelSpec(POLYNOMIAL, degree=int(args.degree or 2))
    if fam == "linear":
        return KernelSpec(LINEAR)
    raise UserError(f"unknown kernel {args.kernel!r}: expected gaussian, poly "
                    f"or linear")


def _parse_tau_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UserError(f"--tau-grid expects lo:hi:count, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UserError(f"--tau-grid expects numbers lo:hi:count, got {text!r}") \
            from None
    if lo <= 0 or hi <= lo or count < 1:
        raise UserError("--tau-grid needs 0 < lo < hi and count >= 1")
    if count == 1:
        return [hi]
    return list(np.geomspace(hi, lo, count))


def _solver_config(args, tau: float) -> SolverConfig:
    nu = args.nu if args.nu is not None else 1.0
    if nu == 0 and not args.allow_nonstrict:
        raise UserError("--nu 0 drops strong convexity and voids the convergence "
                        "guarantee; pass --allow-nonstrict to run anyway")
    return SolverConfig(tau=tau, nu=nu,
                        ext_tol=args.ext_tol if args.ext_tol is not None else 1e-6,
                        max_outer=int(args.max_outer or 100_000),
                        max_inner=int(args.max_inner or 10_000))


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _convergence_doc(st: FitState) -> dict:
    doc = {
        "outer_iters": st.outer_iters,
        "inner_iters_total": st.inner_iters_total,
        "objective": st.objective,
        "converged": st.converged,
    }
    if st.trace is not None:
        doc["inner_iters_per_step"] = st.trace.inner_iters
        doc["certified_gap_trace"] = st.trace.gap
        doc["objective_trace"] = st.trace.objective
    return doc


def _fit_once(args, train: Dataset, tau: float):
    kernel = build_kernel(args, train)
    sys_ops = assemble(kernel, train)
    cfg = _solver_config(args, tau)
    try:
        st = fit(sys_ops, train, cfg)
    except SolverError as exc:
        raise NumericError(str(exc)) from exc
    report = select(sys_ops, cfg, st, delta=args.delta,
                    names=train.var_names())
    return kernel, sys_ops, cfg, st, report


def _require_tau(args) -> float:
    if args.tau is None:
        raise UserError("--tau is required for this command")
    if args.tau <= 0:
        raise UserError("--tau must be positive")
    return float(args.tau)


def cmd_fit(args) -> int:
    train = load_csv_dataset(args.data, target=args.target)
    tau = _require_tau(args)
    kernel, _, _, st, report = _fit_once(args, train, tau)
    out = _out_dir(args)
    model = FittedModel(spec=kernel, anchors=train.X, alpha=st.alpha,
                        beta=st.beta, selected=report.selected,
                        names=train.var_names())
    save_model_json(model, os.path.join(out, "model.json"))
    _write_json(os.path.join(out, "selection.json"), report.to_json_dict())
    if args.format == "csv":
        with open(os.path.join(out, "selection.csv"), "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    _write_json(os.path.join(out, "convergence.json"), _convergence_doc(st))
    print(f"fit: {st.outer_iters} outer iterations, objective "
          f"{_fmt(st.objective)}, selected {report.selected_names()}")
    return EXIT_OK if st.converged else EXIT_NUMERIC


def cmd_select(args) -> int:
    train = load_csv_dataset(args.data, target=args.target)
    tau = _require_tau(args)
    _, _, _, st, report = _fit_once(args, train, tau)
    out = _out_dir(args)
    if args.format == "csv":
        with open(os.path.join(out, "selection.csv"), "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    _write_json(os.path.join(out, "selection.json"), report.to_json_dict())
    print(f"selected: {report.selected_names()}")
    return EXIT_OK if st.converged else EXIT_NUMERIC


def cmd_predict(args) -> int:
    model = load_model_json(args.model)
    expected = model.d if isinstance(model, FittedModel) else \
        int(np.asarray(model.anchors).shape[1])
    X, _ = load_feature_csv(args.data, expected)
    pred = model.predict_batch(X)
    out = _out_dir(args)
    path = os.path.join(out, "predictions.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("prediction\n")
        for v in pred:
            fh.write(_fmt(v) + "\n")
    print(f"wrote {len(pred)} predictions to {path}")
    return EXIT_OK


def cmd_path(args) -> int:
    train = load_csv_dataset(args.data, target=args.target)
    if args.tau_grid:
        taus = _parse_tau_grid(args.tau_grid)
    elif args.tau is not None:
        taus = [float(args.tau)]
    else:
        raise UserError("pass --tau or --tau-grid lo:hi:count")
    kernel = build_kernel(args, train)
    sys_ops = assemble(kernel, train)
    cfg_template = _solver_config(args, taus[0])
    path_res = fit_path(sys_ops, train, taus, cfg_template)

    out = _out_dir(args)
    rows = ["tau,objective,outer_iters,n_selected,selected,converged,error"]
    import dataclasses as _dc
    any_failed = False
    for entry in path_res.entries:
        if entry.state is None:
            rows.append(f"{_fmt(entry.tau)},,,,,,{entry.error}")
            any_failed = True
            continue
        cfg = _dc.replace(cfg_template, tau=entry.tau)
        report = select(sys_ops, cfg, entry.state, delta=args.delta,
                        names=train.var_names())
        sel = ";".join(report.selected_names())
        rows.append(f"{_fmt(entry.tau)},{_fmt(entry.state.objective)},"
                    f"{entry.state.outer_iters},{len(report.selected)},{sel},"
                    f"{int(entry.state.converged)},")
        if not entry.state.converged:
            any_failed = True
    with open(os.path.join(out, "path.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote path table for {len(taus)} tau values")
    return EXIT_NUMERIC if any_failed else EXIT_OK


def cmd_bench(args) -> int:
    name = args.design.lower()
    if name not in experiments.DESIGN_NAMES:
        raise UserError(f"unknown design {args.design!r}; valid designs: "
                        f"{', '.join(experiments.DESIGN_NAMES)}")
    design = experiments.make_design(
        name, d=args.d, n_train=args.n_train, seed=int(args.seed or 0),
        d_star=args.d_star)
    kernel = None
    if args.kernel:
        train_probe, _, _ = experiments.generate(design)
        kernel = build_kernel(args, train_probe)
    nu = args.nu if args.nu is not None else \
        (10.0 if name == "degenerate" else 1.0)
    if nu == 0 and not args.allow_nonstrict:
        raise UserError("--nu 0 drops strong convexity and voids the convergence "
                        "guarantee; pass --allow-nonstrict to run anyway")
    taus = _parse_tau_grid(args.tau_grid) if args.tau_grid else None
    opts = experiments.BenchOptions(baseline_rls=args.baseline_rls)
    if args.ext_tol is not None:
        opts = __import__("dataclasses").replace(opts, ext_tol=args.ext_tol)
    summary = experiments.run_benchmark(design, kernel=kernel, taus=taus, nu=nu,
                                        reps=int(args.reps or 1),
                                        baseline_rls=args.baseline_rls, opts=opts)
    out = _out_dir(args)
    paths = summary.write(out, stem=name)
    sel_mean, _ = summary.mean_std("selection_err")
    rmse_mean, _ = summary.mean_std("normalized_rmse")
    print(f"bench {name}: reps={len(summary.records)} "
          f"mean selection error={'n/a' if sel_mean is None else _fmt(sel_mean)} "
          f"mean normalized rmse={'n/a' if rmse_mean is None else _fmt(rmse_mean)}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_NUMERIC if summary.partial else EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", choices=["gaussian", "poly", "linear"], default=None)
    p.add_argument("--gamma", type=float, default=None,
                   help="gaussian width (default: 20-NN distance heuristic)")
    p.add_argument("--degree", type=int, default=None, help="polynomial degree")
    p.add_argument("--tau", type=float, default=None, help="regularization weight")
    p.add_argument("--tau-grid", dest="tau_grid", default=None,
                   help="geometric grid lo:hi:count (descending fits)")
    p.add_argument("--nu", type=float, default=None,
                   help="smoothness weight (default 1)")
    p.add_argument("--ext-tol", dest="ext_tol", type=float, default=None)
    p.add_argument("--max-outer", dest="max_outer", type=int, default=None)
    p.add_argument("--max-inner", dest="max_inner", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (default .)")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--target", default=None, help="response column name")
    p.add_argument("--allow-nonstrict", dest="allow_nonstrict",
                   action="store_true", default=False)
    p.add_argument("--delta", type=float, default=1e-2,
                   help="relative slack of the selection threshold")
    p.add_argument("--config", default=None, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="denovas",
        description="Nonparametric variable selection by derivative-penalized "
                    "kernel regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one tau on a CSV, write model and "
                                       "selection report")
    p_fit.add_argument("data", help="training CSV (header row, response column)")
    _add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="predict with a saved model")
    p_pred.add_argument("model", help="model JSON written by fit")
    p_pred.add_argument("data", help="feature CSV")
    _add_common(p_pred)
    p_pred.set_defaults(func=cmd_predict)

    p_sel = sub.add_parser("select", help="fit one tau and report the selection")
    p_sel.add_argument("data")
    _add_common(p_sel)
    p_sel.set_defaults(func=cmd_select)

    p_path = sub.add_parser("path", help="fit a descending tau grid")
    p_path.add_argument("data")
    _add_common(p_path)
    p_path.set_defaults(func=cmd_path)

    p_bench = sub.add_parser("bench", help="run a named synthetic benchmark")
    p_bench.add_argument("design", help=f"one of: {', '.join(experiments.DESIGN_NAMES)}")
    p_bench.add_argument("--d", type=int, default=None)
    p_bench.add_argument("--n-train", dest="n_train", type=int, default=None)
    p_bench.add_argument("--d-star", dest="d_star", type=int, default=None)
    p_bench.add_argument("--baseline-rls", dest="baseline_rls",
                         action="store_true", default=False)
    _add_common(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Fold config-file values in as defaults (flags still win)."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise UserError("--config needs a file path")
    values = _read_config_file(argv[idx + 1])
    known = {"kernel", "gamma", "degree", "tau", "tau_grid", "nu", "ext_tol",
             "max_outer", "max_inner", "seed", "reps", "out", "format",
             "target", "delta", "allow_nonstrict", "d", "n_train", "d_star",
             "baseline_rls"}
    unknown = set(values) - known
    if unknown:
        raise UserError(f"unknown config keys: {', '.join(sorted(unknown))}")
    defaults = {}
    for key, val in values.items():
        if key in ("allow_nonstrict", "baseline_rls"):
            defaults[key] = val.lower() in ("1", "true", "yes")
        else:
            defaults[key] = val
    parser.set_defaults(**defaults)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(_sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        # argparse leaves config-file strings unconverted; coerce here
        for key in ("gamma", "tau", "nu", "ext_tol", "delta"):
            v = getattr(args, key, None)
            if isinstance(v, str):
                setattr(args, key, float(v))
        for key in ("degree", "max_outer", "max_inner", "seed", "reps", "d",
                    "n_train", "d_star"):
            v = getattr(args, key, None)
            if isinstance(v, str):
                setattr(args, key, int(v))
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USER
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    raise SystemExit(main())
