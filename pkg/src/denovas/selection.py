"""Variable selection from the dual blocks of a converged fit.

At the exact minimizer, a variable whose dual block is strictly inside
the radius tau/sigma ball has an exactly zero empirical derivative norm,
so the active variables are those whose dual norms sit on (or at
numerical precision, near) the boundary.  The practical rule selects

    a  is selected  iff  ||vbar_a||_n >= (1 - delta) * tau / sigma

with a small relative slack delta.  The theoretically exact slack term
depends on an uncomputable rate constant; it is estimated from the
observed objective trace and reported as a diagnostic only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .operators import DerivativeSystem, block_n_norms
from .solver import FitState, SolverConfig, ensure_caches, resolve_steps


@dataclass
class SelectionReport:
    names: list[str]
    dual_norms: np.ndarray
    deriv_norms: np.ndarray
    threshold: float
    selected: list[int]
    margin: np.ndarray
    tau: float
    sigma: float
    delta: float
    slack: float | None = None          # diagnostic (eps~)^2 / (2m)
    exact_threshold: float | None = None

    @property
    def is_empty(self) -> bool:
        return not self.selected

    def selected_names(self) -> list[str]:
        return [self.names[a] for a in self.selected]

    def to_json_dict(self) -> dict:
        rows = []
        sel = set(self.selected)
        for a, name in enumerate(self.names):
            rows.append({
                "name": name,
                "dual_norm": float(self.dual_norms[a]),
                "deriv_norm": float(self.deriv_norms[a]),
                "margin": float(self.margin[a]),
                "selected": a in sel,
            })
        return {
            "threshold": self.threshold,
            "tau": self.tau,
            "sigma": self.sigma,
            "delta": self.delta,
            "selected": list(self.selected),
            "selected_names": self.selected_names(),
            "empty": self.is_empty,
            "slack_diagnostic": self.slack,
            "exact_threshold_diagnostic": self.exact_threshold,
            "variables": rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1)

    def to_csv(self) -> str:
        lines = ["name,dual_norm,deriv_norm,margin,selected"]
        sel = set(self.selected)
        for a, name in enumerate(self.names):
            lines.append(f"{name},{self.dual_norms[a]:.17g},"
                         f"{self.deriv_norms[a]:.17g},{self.margin[a]:.17g},"
                         f"{int(a in sel)}")
        return "\n".join(lines) + "\n"


def _slack_diagnostic(sys: DerivativeSystem, cfg: SolverConfig, st: FitState,
                      sigma: float, deriv_norms: np.ndarray) -> tuple[float | None, float | None]:
    """Plug-in estimate of the inexactness slack on the dual threshold."""
    if cfg.nu <= 0 or cfg.tau <= 0 or st.outer_iters < 2:
        return None, None
    positive = deriv_norms[deriv_norms > 1e-12 * max(deriv_norms.max(), 1e-300)]
    if positive.size == 0:
        return None, None
    m = float(positive.min())

    t = st.outer_iters
    if cfg.c_eps is not None:
        eps_sq = (cfg.c_eps * float(t) ** (-cfg.eps_exponent)) ** 2
    else:
        eps_sq = max(st.gap, 0.0)

    c_rate = 0.0
    if st.trace is not None and st.trace.objective:
        objs = np.asarray(st.trace.objective)
        e_star = objs.min()
        ts = np.arange(2, 2 + objs.size, dtype=float)
        c_rate = float(np.max(np.maximum(objs - e_star, 0.0) * ts * ts))
    root_blocks = np.sqrt(sys.diag_block_norms()).sum()
    eps_tilde_sq = eps_sq + np.sqrt(c_rate / (cfg.nu * cfg.tau)) * \
        ((cfg.tau / sigma) * root_blocks + 1.0) * 4.0 / t
    slack = eps_tilde_sq / (2.0 * m)
    return slack, cfg.tau / sigma - slack


def select(sys: DerivativeSystem, cfg: SolverConfig, st: FitState,
           delta: float = 1e-2, names: list[str] | None = None) -> SelectionReport:
    """Build the selection report for a fitted state.

    An empty selection is a valid outcome (reported, not an error): it
    means every dual block sits strictly inside the threshold.
    """
    if not 0 <= delta < 1:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    sigma, _ = resolve_steps(sys, cfg)
    n, d = sys.n, sys.d
    ensure_caches(sys, st)
    dual_norms = block_n_norms(st.vbar, n, d)
    deriv_norms = block_n_norms(st._Zt_alpha + st._L_beta, n, d)
    threshold = (1.0 - delta) * cfg.tau / sigma
    selected = [a for a in range(d) if dual_norms[a] >= threshold]
    margin = dual_norms - threshold
    slack, exact_thr = _slack_diagnostic(sys, cfg, st, sigma, deriv_norms)
    if names is None:
        names = [f"x{a + 1}" for a in range(d)]
    return SelectionReport(names=list(names), dual_norms=dual_norms,
                           deriv_norms=deriv_norms, threshold=threshold,
                           selected=selected, margin=margin,
                           tau=cfg.tau, sigma=sigma, delta=delta,
                           slack=slack, exact_threshold=exact_thr)


def selection_error(selected, truth, d: int) -> float:
    """Mean of false-negative and false-positive rates.

    The FP rate is counted over the d - |truth| irrelevant variables and
    defined as 0 when every variable is relevant.
    """
    truth = set(int(a) for a in truth)
    selected = set(int(a) for a in selected)
    if not truth:
        raise ValueError("truth set must be nonempty")
    if any(a < 0 or a >= d for a in truth | selected):
        raise ValueError("variable index out of range")
    fn = len(truth - selected) / len(truth)
    n_irrelevant = d - len(truth)
    fp = len(selected - truth) / n_irrelevant if n_irrelevant > 0 else 0.0
    return 0.5 * (fn + fp)
