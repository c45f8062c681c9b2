"""Synthetic designs, the two-step benchmark pipeline, and aggregation.

Each design fixes an input cube, a regression function with a known set
of relevant variables, and a signal-to-noise ratio.  Noise or signal is
scaled so that var(signal)/var(noise) equals the requested ratio:
analytically for the polynomial designs, by a fixed-seed 1e5-sample
Monte Carlo estimate of var(f) for the radial one.

A benchmark repetition runs the full pipeline: assemble operators on a
fresh training draw, fit a descending tau path with warm starts, select
variables at each tau, refit regularized least squares on the selection,
pick the tau minimizing hold-out RMSE of the refit predictor, and score
the winner on an independent test set.  Repetitions use substreams
seeded at seed + rep, so they are individually reproducible and can run
in parallel (capped by the DENOVAS_THREADS environment variable).

Summary CSV/JSON outputs are deterministic byte-for-byte for a fixed
(design, seed, config); wall-clock timings are therefore written to a
separate file that is excluded from that guarantee.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernels import GAUSSIAN, POLYNOMIAL, KernelSpec
from .model import RlsModel, rls_fit, rmse
from .operators import Dataset, assemble, n_norm
from .selection import select, selection_error
from .solver import SolverConfig, fit, fit_path

DESIGN_NAMES = ("additive", "twoway", "threeway", "radial", "pairwise", "degenerate")

_CAL_MC_SAMPLES = 100_000
_CAL_MC_SEED = 202_020


@dataclass(frozen=True)
class SyntheticDesign:
    """One synthetic data-generating configuration."""

    name: str
    d: int
    truth: tuple[int, ...]           # 0-based relevant variables
    snr: float
    n_train: int
    n_val: int
    n_test: int
    seed: int
    half_width: float = 1.0          # inputs uniform on [-hw, hw]^d
    d_star: int = 4                  # pairwise design only

    def with_seed(self, seed: int) -> "SyntheticDesign":
        return dataclasses.replace(self, seed=seed)


def make_design(name: str, *, d: int | None = None, snr: float | None = None,
                n_train: int | None = None, n_val: int | None = None,
                n_test: int | None = None, seed: int = 0,
                d_star: int | None = None) -> SyntheticDesign:
    """Named design with its published defaults, overridable field-wise."""
    name = name.lower()
    if name == "additive":
        base = SyntheticDesign("additive", d=40, truth=(0, 1, 2, 3), snr=15.0,
                               n_train=100, n_val=100, n_test=1000, seed=seed,
                               half_width=2.0)
    elif name == "twoway":
        base = SyntheticDesign("twoway", d=40, truth=(0, 1, 2, 3), snr=15.0,
                               n_train=100, n_val=100, n_test=1000, seed=seed,
                               half_width=2.0)
    elif name == "threeway":
        base = SyntheticDesign("threeway", d=40, truth=(0, 1, 2), snr=15.0,
                               n_train=100, n_val=100, n_test=1000, seed=seed,
                               half_width=2.0)
    elif name == "radial":
        base = SyntheticDesign("radial", d=20, truth=(0, 1), snr=15.0,
                               n_train=100, n_val=100, n_test=1000, seed=seed,
                               half_width=2.0)
    elif name == "pairwise":
        ds = 4 if d_star is None else int(d_star)
        base = SyntheticDesign("pairwise", d=20, truth=tuple(range(ds)), snr=15.0,
                               n_train=100, n_val=100, n_test=500, seed=seed,
                               half_width=1.0, d_star=ds)
    elif name == "degenerate":
        base = SyntheticDesign("degenerate", d=2, truth=(0,), snr=float("nan"),
                               n_train=20, n_val=20, n_test=1000, seed=seed,
                               half_width=1.0)
    else:
        raise ValueError(f"unknown design {name!r}; valid names: "
                         f"{', '.join(DESIGN_NAMES)}")
    over = {}
    if d is not None:
        over["d"] = int(d)
    if snr is not None:
        over["snr"] = float(snr)
    if n_train is not None:
        over["n_train"] = int(n_train)
        if n_val is None:
            over["n_val"] = int(n_train)
    if n_val is not None:
        over["n_val"] = int(n_val)
    if n_test is not None:
        over["n_test"] = int(n_test)
    if d_star is not None and base.name == "pairwise":
        over["truth"] = tuple(range(int(d_star)))
        over["d_star"] = int(d_star)
    return dataclasses.replace(base, **over) if over else base


def _radial_f(X: np.ndarray) -> np.ndarray:
    r2 = X[:, 0] ** 2 + X[:, 1] ** 2
    return (1.0 / np.pi) * r2 * np.exp(-r2)


def _signal_variance(design: SyntheticDesign, coeffs: np.ndarray | None) -> float:
    """Population variance of the unscaled signal on the design's cube."""
    a2 = design.half_width ** 2
    m2 = a2 / 3.0                       # E x^2 on U[-a, a]
    var_sq = a2 * a2 * (1.0 / 5.0 - 1.0 / 9.0)   # var of x^2
    if design.name == "additive":
        return 4.0 * var_sq
    if design.name == "twoway":
        return 6.0 * m2 * m2
    if design.name == "threeway":
        a4 = a2 * a2
        return (a4 / 5.0) ** 3 - (a2 / 3.0) ** 6
    if design.name == "pairwise":
        return float((coeffs ** 2).sum()) * m2 * m2
    if design.name == "radial":
        rng = np.random.default_rng(_CAL_MC_SEED)
        X = rng.uniform(-design.half_width, design.half_width,
                        size=(_CAL_MC_SAMPLES, 2))
        return float(np.var(_radial_f(X)))
    raise ValueError(f"no variance rule for design {design.name}")


def _eval_signal(design: SyntheticDesign, X: np.ndarray,
                 coeffs: np.ndarray | None) -> np.ndarray:
    if design.name == "additive":
        return (X[:, :4] ** 2).sum(axis=1)
    if design.name == "twoway":
        out = np.zeros(X.shape[0])
        for j in range(4):
            for jj in range(j + 1, 4):
                out += X[:, j] * X[:, jj]
        return out
    if design.name == "threeway":
        return (X[:, 0] * X[:, 1] * X[:, 2]) ** 2
    if design.name == "radial":
        return _radial_f(X)
    if design.name == "pairwise":
        out = np.zeros(X.shape[0])
        idx = 0
        for j in range(design.d_star):
            for jj in range(j + 1, design.d_star):
                out += coeffs[idx] * X[:, j] * X[:, jj]
                idx += 1
        return out
    raise ValueError(f"no signal rule for design {design.name}")


def generate(design: SyntheticDesign) -> tuple[Dataset, Dataset, Dataset]:
    """Draw (train, val, test) datasets for a design, deterministically.

    The pairwise design rescales the signal against unit-variance noise;
    the fixed table designs keep the signal and scale the noise variance
    to var(f)/snr.  The degenerate-marginal toy is fixed: x1 uniform on
    [-1, 1], x2 normal with variance 0.05, y = x1^2 plus noise of
    variance 0.1.
    """
    rng = np.random.Generator(np.random.Philox(design.seed))

    if design.name == "degenerate":
        def draw(m: int) -> Dataset:
            x1 = rng.uniform(-1.0, 1.0, size=m)
            x2 = rng.normal(0.0, np.sqrt(0.05), size=m)
            y = x1 ** 2 + rng.normal(0.0, np.sqrt(0.1), size=m)
            return Dataset(np.column_stack([x1, x2]), y)
        return draw(design.n_train), draw(design.n_val), draw(design.n_test)

    coeffs = None
    if design.name == "pairwise":
        n_pairs = design.d_star * (design.d_star - 1) // 2
        coeffs = rng.uniform(0.5, 1.0, size=n_pairs)

    var_f = _signal_variance(design, coeffs)
    if design.name == "pairwise":
        sigma_w = 1.0
        lam = np.sqrt(design.snr * sigma_w ** 2 / var_f)
    else:
        lam = 1.0
        sigma_w = np.sqrt(var_f / design.snr) if np.isfinite(design.snr) else 0.0

    def draw(m: int) -> Dataset:
        X = rng.uniform(-design.half_width, design.half_width, size=(m, design.d))
        w = rng.normal(0.0, sigma_w, size=m) if sigma_w > 0 else np.zeros(m)
        return Dataset(X, lam * _eval_signal(design, X, coeffs) + w)

    return draw(design.n_train), draw(design.n_val), draw(design.n_test)


def gaussian_width_heuristic(X, k: int = 20) -> float:
    """Mean Euclidean distance to the k-th nearest other sample."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    if n <= k:
        warnings.warn(f"only {n} samples for k={k}; using k={n - 1}", RuntimeWarning)
        k = n - 1
    sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1)
    sq.sort(axis=1)
    width = float(np.mean(np.sqrt(sq[:, k])))   # column 0 is the self distance
    if width == 0.0:
        warnings.warn("degenerate kernel width 0 (duplicate samples)", RuntimeWarning)
    return width


def default_kernel(design: SyntheticDesign, train: Dataset | None = None) -> KernelSpec:
    """The kernel used in the published experiments for each design."""
    if design.name in ("additive", "twoway", "pairwise"):
        return KernelSpec(POLYNOMIAL, degree=2)
    if design.name == "threeway":
        return KernelSpec(POLYNOMIAL, degree=6)
    if design.name == "radial":
        return KernelSpec(GAUSSIAN, gamma=2.0)
    if design.name == "degenerate":
        return KernelSpec(GAUSSIAN, gamma=0.5)
    raise ValueError(design.name)


def find_tau_max(sys, data: Dataset, nu: float, *, start: float | None = None,
                 probe_tol: float = 1e-4, probe_max_outer: int = 2000,
                 delta: float = 1e-2) -> float:
    """Smallest doubling anchor at which a probe fit selects nothing.

    Probes only need to locate the empty-selection regime, so they run
    with a loose inner-tolerance constant; the very large tau fits are
    exactly where the certified prox is most expensive.
    """
    tau = start if start is not None else 1e-2 * max(n_norm(data.y, data.n), 1e-12)
    for _ in range(64):
        cfg = SolverConfig(tau=tau, nu=nu, ext_tol=probe_tol,
                           max_outer=probe_max_outer, c_eps_scale=0.3,
                           max_inner=30_000, record_trace=False)
        st = fit(sys, data, cfg)
        if not select(sys, cfg, st, delta=delta).selected:
            return tau
        tau *= 2.0
    warnings.warn("tau doubling search did not reach an empty selection",
                  RuntimeWarning)
    return tau


def default_tau_grid(tau_max: float, count: int = 30,
                     lo_frac: float = 1e-3) -> np.ndarray:
    """Descending geometric grid on [lo_frac, 1] * tau_max."""
    return tau_max * np.geomspace(1.0, lo_frac, count)


@dataclass
class RepetitionRecord:
    rep: int
    tau_star: float
    selected: list[int]
    selection_err: float | None
    test_rmse: float
    normalized_rmse: float
    baseline_rmse: float | None
    baseline_normalized_rmse: float | None
    wall_time: float
    error: str | None = None


@dataclass
class RunSummary:
    design: SyntheticDesign
    kernel: KernelSpec
    nu: float
    records: list[RepetitionRecord]
    partial: bool = False

    def _vals(self, attr: str) -> np.ndarray:
        vals = [getattr(r, attr) for r in self.records
                if r.error is None and getattr(r, attr) is not None]
        return np.asarray(vals, dtype=float)

    def mean_std(self, attr: str) -> tuple[float | None, float | None]:
        vals = self._vals(attr)
        if vals.size == 0:
            return None, None
        return float(vals.mean()), float(vals.std())

    def to_json_dict(self) -> dict:
        agg = {}
        for attr in ("selection_err", "test_rmse", "normalized_rmse",
                     "baseline_rmse", "baseline_normalized_rmse"):
            mean, std = self.mean_std(attr)
            agg[attr] = {"mean": mean, "std": std}
        return {
            "design": {
                "name": self.design.name, "d": self.design.d,
                "truth": [a + 1 for a in self.design.truth],
                "snr": None if not np.isfinite(self.design.snr) else self.design.snr,
                "n_train": self.design.n_train, "n_val": self.design.n_val,
                "n_test": self.design.n_test, "seed": self.design.seed,
            },
            "kernel": self.kernel.to_dict(),
            "nu": self.nu,
            "reps": len(self.records),
            "partial": self.partial,
            "aggregate": agg,
            "records": [
                {
                    "rep": r.rep,
                    "tau_star": r.tau_star,
                    "selected": [a + 1 for a in r.selected],
                    "selection_err": r.selection_err,
                    "test_rmse": r.test_rmse,
                    "normalized_rmse": r.normalized_rmse,
                    "baseline_rmse": r.baseline_rmse,
                    "baseline_normalized_rmse": r.baseline_normalized_rmse,
                    "error": r.error,
                }
                for r in self.records
            ],
        }

    def to_csv(self) -> str:
        lines = ["rep,tau_star,selected,selection_err,test_rmse,normalized_rmse,"
                 "baseline_rmse,baseline_normalized_rmse,error"]
        for r in self.records:
            sel = ";".join(str(a + 1) for a in r.selected)
            lines.append(",".join([
                str(r.rep), _fmt(r.tau_star), sel, _fmt(r.selection_err),
                _fmt(r.test_rmse), _fmt(r.normalized_rmse), _fmt(r.baseline_rmse),
                _fmt(r.baseline_normalized_rmse), r.error or "",
            ]))
        return "\n".join(lines) + "\n"

    def to_long_csv(self) -> str:
        """Long-format rows (x, metric, value, series) for plotting."""
        series = f"{self.design.name}-nu{self.nu:g}"
        lines = ["x,metric,value,series"]
        for metric in ("selection_err", "test_rmse", "normalized_rmse",
                       "baseline_normalized_rmse"):
            mean, _ = self.mean_std(metric)
            if mean is not None:
                lines.append(f"{self.design.n_train},{metric},{_fmt(mean)},{series}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str = "bench") -> list[str]:
        """Write results.csv / summary.json / long.csv plus timings.

        Timings go to a separate file because the three summary files
        are guaranteed byte-identical across reruns with the same seed.
        """
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for fname, text in [
            (f"{stem}_results.csv", self.to_csv()),
            (f"{stem}_summary.json", json.dumps(self.to_json_dict(), indent=1) + "\n"),
            (f"{stem}_long.csv", self.to_long_csv()),
        ]:
            path = os.path.join(out_dir, fname)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
            paths.append(path)
        timing = {str(r.rep): r.wall_time for r in self.records}
        with open(os.path.join(out_dir, f"{stem}_timings.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(timing, fh, indent=1)
            fh.write("\n")
        return paths


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.17g}"


def _max_workers(reps: int) -> int:
    env = os.environ.get("DENOVAS_THREADS", "").strip()
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            cap = 1
    else:
        cap = 1
    return min(cap, reps)


@dataclass
class BenchOptions:
    """Solver and pipeline settings for benchmark runs."""

    tau_count: int = 20
    ext_tol: float = 1e-4
    max_outer: int = 3000
    max_inner: int = 30_000
    c_eps_scale: float = 0.1
    delta: float = 1e-2
    baseline_rls: bool = False
    taus: tuple[float, ...] | None = None
    rls_lambda_count: int = 30


def run_repetition(design: SyntheticDesign, kernel: KernelSpec, nu: float,
                   rep: int, opts: BenchOptions) -> RepetitionRecord:
    started = time.perf_counter()
    d_rep = design.with_seed(design.seed + rep)
    train, val, test = generate(d_rep)
    sys = assemble(kernel, train)

    if opts.taus is not None:
        taus = list(opts.taus)
    else:
        tau_max = find_tau_max(sys, train, nu, delta=opts.delta)
        taus = list(default_tau_grid(tau_max, count=opts.tau_count))

    cfg_template = SolverConfig(tau=taus[0], nu=nu, ext_tol=opts.ext_tol,
                                max_outer=opts.max_outer, max_inner=opts.max_inner,
                                c_eps_scale=opts.c_eps_scale, record_trace=False)
    path = fit_path(sys, train, taus, cfg_template)

    best = None   # (val_rmse, tau, selected, rls_model)
    for entry in path.entries:
        if entry.state is None:
            continue
        cfg = dataclasses.replace(cfg_template, tau=entry.tau)
        report = select(sys, cfg, entry.state, delta=opts.delta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            refit = rls_fit(kernel, train, report.selected, holdout=val)
        val_rmse = rmse(val.y, refit.predict_batch(val.X))
        if best is None or val_rmse < best[0]:
            best = (val_rmse, entry.tau, report.selected, refit)
    if best is None:
        return RepetitionRecord(rep=rep, tau_star=float("nan"), selected=[],
                                selection_err=None, test_rmse=float("nan"),
                                normalized_rmse=float("nan"), baseline_rmse=None,
                                baseline_normalized_rmse=None,
                                wall_time=time.perf_counter() - started,
                                error="no tau converged")

    _, tau_star, selected, refit = best
    test_pred = refit.predict_batch(test.X)
    t_rmse = rmse(test.y, test_pred)
    y_std = float(test.y.std())
    norm_rmse = t_rmse / y_std if y_std > 0 else float("inf")
    sel_err = selection_error(selected, design.truth, design.d) \
        if design.truth else None

    base_rmse = base_norm = None
    if opts.baseline_rls:
        baseline = rls_fit(kernel, train, list(range(design.d)), holdout=val)
        base_rmse = rmse(test.y, baseline.predict_batch(test.X))
        base_norm = base_rmse / y_std if y_std > 0 else float("inf")

    return RepetitionRecord(rep=rep, tau_star=float(tau_star),
                            selected=list(selected), selection_err=sel_err,
                            test_rmse=t_rmse, normalized_rmse=norm_rmse,
                            baseline_rmse=base_rmse,
                            baseline_normalized_rmse=base_norm,
                            wall_time=time.perf_counter() - started)


def run_benchmark(design: SyntheticDesign, kernel: KernelSpec | None = None,
                  taus=None, nu: float = 1.0, reps: int = 1,
                  baseline_rls: bool = False,
                  opts: BenchOptions | None = None) -> RunSummary:
    """Seeded repetitions of the two-step pipeline with aggregation."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if kernel is None:
        kernel = default_kernel(design)
    opts = opts or BenchOptions()
    if taus is not None:
        opts = dataclasses.replace(opts, taus=tuple(float(t) for t in taus))
    if baseline_rls:
        opts = dataclasses.replace(opts, baseline_rls=True)

    def one(rep: int) -> RepetitionRecord:
        try:
            return run_repetition(design, kernel, nu, rep, opts)
        except Exception as exc:   # noqa: BLE001 - per-rep failures are recorded
            return RepetitionRecord(rep=rep, tau_star=float("nan"), selected=[],
                                    selection_err=None, test_rmse=float("nan"),
                                    normalized_rmse=float("nan"),
                                    baseline_rmse=None,
                                    baseline_normalized_rmse=None,
                                    wall_time=0.0, error=str(exc))

    workers = _max_workers(reps)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(reps)))
    else:
        records = [one(rep) for rep in range(reps)]
    records.sort(key=lambda r: r.rep)
    partial = any(r.error is not None for r in records)
    return RunSummary(design=design, kernel=kernel, nu=nu,
                      records=records, partial=partial)
