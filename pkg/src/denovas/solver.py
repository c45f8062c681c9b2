"""Accelerated forward-backward solver with an inexact, certified prox step.

The objective over expansion coefficients (alpha, beta) is

    E(f) = ||y - S f||_n^2 + tau * (2 * sum_a ||D_a f||_n + nu * ||f||_H^2)

with  S f = K alpha + Z beta,  D_a f = Z_a^T alpha + L_a beta  and
||f||_H^2 = <alpha, K alpha>_n + 2 <alpha, Z beta>_n + <beta, L beta>_n.

The outer loop is a FISTA iteration on the smooth part (risk + ridge)
with fixed step sizes sigma >= ||K|| + tau*nu and eta >= ||L||.  The
proximity operator of the derivative penalty has no closed form; it is
computed through its dual as a projection onto a product of radius
tau/sigma balls (one per variable, in the ||.||_n norm), iterated by
projected gradient.  Each inner solve terminates on a duality-gap
certificate

    (2 tau / sigma) * sum_a ||D_a||_n - 2 * sum_a <v_a, D_a>_n  <=  (eps_t)^2

with the schedule eps_t = c_eps * t^(-l), l > 3/2, which keeps the
overall inexact iteration on the accelerated O(1/t^2) rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import Dataset, DerivativeSystem, block_n_norms

_EPS = float(np.finfo(float).eps)


class SolverError(RuntimeError):
    pass


class InnerProxError(SolverError):
    """The inner projection loop exhausted max_inner without certifying."""

    def __init__(self, outer_iter: int, inner_iters: int, gap: float, threshold: float):
        self.outer_iter = outer_iter
        self.inner_iters = inner_iters
        self.gap = gap
        self.threshold = threshold
        super().__init__(
            f"inner prox not certified at outer step {outer_iter}: "
            f"gap {gap:.3e} > threshold {threshold:.3e} "
            f"after {inner_iters} iterations")


@dataclass
class SolverConfig:
    """Regularization weights, step sizes and stopping tolerances.

    ``sigma``/``eta`` default to the safe values ||K|| + tau*nu and ||L||
    derived from the assembled system (inflated by 10% when the norm
    estimates did not converge).  ``c_eps`` defaults to
    c_eps_scale * sqrt(initial objective); the inner tolerance at outer
    step t is (c_eps * t^-eps_exponent)^2.  Any positive constant keeps
    the schedule admissible; a larger scale trades prox precision for
    fewer inner iterations, which matters on near-singular systems.
    """

    tau: float
    nu: float = 1.0
    sigma: float | None = None
    eta: float | None = None
    ext_tol: float = 1e-6
    c_eps: float | None = None
    c_eps_scale: float = 1e-2
    eps_exponent: float = 2.0
    max_outer: int = 100_000
    max_inner: int = 10_000
    warm_start: "FitState | None" = None
    record_trace: bool = True

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.nu < 0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")
        if self.ext_tol <= 0:
            raise ValueError("ext_tol must be positive")
        if self.c_eps_scale <= 0:
            raise ValueError("c_eps_scale must be positive")
        if self.eps_exponent <= 1.5:
            raise ValueError(f"inner-tolerance exponent must exceed 3/2, "
                             f"got {self.eps_exponent}")
        if self.max_outer < 2 or self.max_inner < 1:
            raise ValueError("iteration caps too small")


@dataclass
class FitTrace:
    """Per-outer-iteration diagnostics (index 0 corresponds to t = 2)."""

    objective: list[float] = field(default_factory=list)
    inner_iters: list[int] = field(default_factory=list)
    gap: list[float] = field(default_factory=list)


@dataclass
class FitState:
    """Expansion coefficients, dual blocks and iteration diagnostics."""

    alpha: np.ndarray
    beta: np.ndarray
    vbar: np.ndarray
    s: float
    outer_iters: int
    inner_iters_total: int
    objective: float
    converged: bool
    inner_iters_step: int = 0
    gap: float = 0.0
    trace: FitTrace | None = None
    _K_alpha: np.ndarray | None = field(default=None, repr=False)
    _Z_beta: np.ndarray | None = field(default=None, repr=False)
    _L_beta: np.ndarray | None = field(default=None, repr=False)
    _Zt_alpha: np.ndarray | None = field(default=None, repr=False)


@dataclass
class InnerResult:
    vbar: np.ndarray
    iterations: int
    gap: float
    certified: bool
    L_vbar: np.ndarray


def resolve_steps(sys: DerivativeSystem, cfg: SolverConfig) -> tuple[float, float]:
    """Effective (sigma, eta), validating user-supplied values."""
    inflate = 1.0 if sys.norms_converged else 1.1
    sigma_req = sys.norm_K + cfg.tau * cfg.nu
    if cfg.sigma is None:
        sigma = inflate * sys.norm_K + cfg.tau * cfg.nu
    else:
        if cfg.sigma < sigma_req * (1 - 1e-12):
            raise ValueError(f"sigma={cfg.sigma} below the safe step "
                             f"||K|| + tau*nu = {sigma_req}")
        sigma = cfg.sigma
    if cfg.eta is None:
        eta = inflate * sys.norm_L
    else:
        if cfg.eta < sys.norm_L * (1 - 1e-12):
            raise ValueError(f"eta={cfg.eta} below the safe step ||L|| = {sys.norm_L}")
        eta = cfg.eta
    if sigma <= 0:
        sigma = 1.0
    if eta <= 0:
        eta = 1.0
    return sigma, eta


def ensure_caches(sys: DerivativeSystem, st: FitState) -> FitState:
    """Fill the operator-product caches of a state in place."""
    if st._K_alpha is None:
        st._K_alpha = sys.apply_K(st.alpha)
    if st._Z_beta is None:
        st._Z_beta = sys.apply_Z(st.beta)
    if st._L_beta is None:
        st._L_beta = sys.apply_L(st.beta)
    if st._Zt_alpha is None:
        st._Zt_alpha = sys.apply_Zt(st.alpha)
    return st


def zero_state(sys: DerivativeSystem) -> FitState:
    n, d = sys.n, sys.d
    return FitState(alpha=np.zeros(n), beta=np.zeros(n * d), vbar=np.zeros(n * d),
                    s=1.0, outer_iters=0, inner_iters_total=0,
                    objective=0.0, converged=False)


def _hnorm_sq(sys: DerivativeSystem, st: FitState) -> float:
    n = sys.n
    val = (st.alpha.dot(st._K_alpha) + 2.0 * st.alpha.dot(st._Z_beta)
           + st.beta.dot(st._L_beta)) / n
    return max(val, 0.0)


def _objective_from_caches(sys: DerivativeSystem, y: np.ndarray,
                           cfg: SolverConfig, st: FitState) -> float:
    n, d = sys.n, sys.d
    resid = y - (st._K_alpha + st._Z_beta)
    risk = resid.dot(resid) / n
    deriv = st._Zt_alpha + st._L_beta
    penalty = float(block_n_norms(deriv, n, d).sum())
    return risk + cfg.tau * (2.0 * penalty + cfg.nu * _hnorm_sq(sys, st))


def objective(sys: DerivativeSystem, data: Dataset, cfg: SolverConfig,
              st: FitState) -> float:
    """Penalized empirical objective E(f) at the state's coefficients."""
    if st.alpha.size != sys.n or st.beta.size != sys.n * sys.d:
        raise ValueError("state dimensions do not match the system")
    ensure_caches(sys, st)
    return _objective_from_caches(sys, data.y, cfg, st)


def project_blocks(v: np.ndarray, radius: float, n: int, d: int) -> np.ndarray:
    """Project each variable block onto the ||.||_n ball of given radius."""
    V = v.reshape(d, n).copy()
    norms = np.sqrt((V * V).sum(axis=1) / n)
    over = norms > radius
    if np.any(over):
        V[over] *= (radius / norms[over])[:, None]
    return V.ravel()


def inner_prox(sys: DerivativeSystem, cfg: SolverConfig,
               g_alpha: np.ndarray, g_beta: np.ndarray,
               v0: np.ndarray, t: int, *,
               sigma: float | None = None, eta: float | None = None,
               eps_sq: float | None = None,
               forward: np.ndarray | None = None) -> InnerResult:
    """Dual projection loop for the proximity operator at a forward point.

    ``forward`` may carry the precomputed vector Z^T g_alpha + L g_beta;
    otherwise it is computed here.  Returns the dual blocks, the
    iteration count, the final duality gap and the product L vbar (which
    callers reuse for the derivative vector of the accepted iterate).
    """
    if sigma is None or eta is None:
        sigma_r, eta_r = resolve_steps(sys, cfg)
        sigma = sigma if sigma is not None else sigma_r
        eta = eta if eta is not None else eta_r
    if eps_sq is None:
        if cfg.c_eps is None:
            raise ValueError("c_eps is unresolved; pass eps_sq explicitly or "
                             "set cfg.c_eps")
        eps_sq = (cfg.c_eps * float(t) ** (-cfg.eps_exponent)) ** 2

    n, d = sys.n, sys.d
    radius = cfg.tau / sigma
    if forward is None:
        forward = sys.apply_Zt(g_alpha) + sys.apply_L(g_beta)

    v = project_blocks(np.asarray(v0, dtype=float).ravel(), radius, n, d)
    Lv = sys.apply_L(v)
    gap = np.inf
    for q in range(1, cfg.max_inner + 1):
        v = project_blocks(v - (Lv - forward) / eta, radius, n, d)
        Lv = sys.apply_L(v)
        deriv = forward - Lv
        pos = 2.0 * radius * float(block_n_norms(deriv, n, d).sum())
        neg = 2.0 * float(v.dot(deriv)) / n
        gap = pos - neg
        # the certificate cannot resolve below the rounding noise of its
        # own cancellation; cap the requested tolerance at that floor
        floor = 100.0 * _EPS * (pos + abs(neg))
        if gap <= max(eps_sq, floor):
            return InnerResult(v, q, gap, True, Lv)
    return InnerResult(v, cfg.max_inner, gap, False, Lv)


def momentum_next(s_prev: float) -> float:
    return 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * s_prev * s_prev))


def outer_step(sys: DerivativeSystem, data: Dataset, cfg: SolverConfig,
               prev: FitState, prev2: FitState, t: int, *,
               sigma: float | None = None, eta: float | None = None,
               eps_sq: float | None = None) -> FitState:
    """One accelerated step: extrapolate, gradient step, certified prox."""
    if t < 2:
        raise ValueError("outer steps start at t = 2")
    if sigma is None or eta is None:
        sigma_r, eta_r = resolve_steps(sys, cfg)
        sigma = sigma if sigma is not None else sigma_r
        eta = eta if eta is not None else eta_r
    ensure_caches(sys, prev)
    ensure_caches(sys, prev2)

    s_t = momentum_next(prev.s)
    c1 = 1.0 + (prev.s - 1.0) / s_t
    c2 = (1.0 - prev.s) / s_t

    alpha_tilde = c1 * prev.alpha + c2 * prev2.alpha
    beta_tilde = c1 * prev.beta + c2 * prev2.beta
    K_at = c1 * prev._K_alpha + c2 * prev2._K_alpha
    Z_bt = c1 * prev._Z_beta + c2 * prev2._Z_beta
    L_bt = c1 * prev._L_beta + c2 * prev2._L_beta

    shrink = 1.0 - cfg.tau * cfg.nu / sigma
    g_alpha = shrink * alpha_tilde - (K_at + Z_bt - data.y) / sigma
    g_beta = shrink * beta_tilde
    Zt_ga = sys.apply_Zt(g_alpha)
    L_gb = shrink * L_bt

    res = inner_prox(sys, cfg, g_alpha, g_beta, prev.vbar, t,
                     sigma=sigma, eta=eta, eps_sq=eps_sq,
                     forward=Zt_ga + L_gb)
    if not res.certified:
        thr = eps_sq if eps_sq is not None else \
            (cfg.c_eps * float(t) ** (-cfg.eps_exponent)) ** 2
        raise InnerProxError(t, res.iterations, res.gap, thr)

    beta_t = g_beta - res.vbar
    st = FitState(alpha=g_alpha, beta=beta_t, vbar=res.vbar, s=s_t,
                  outer_iters=t, inner_iters_total=prev.inner_iters_total + res.iterations,
                  objective=0.0, converged=False,
                  inner_iters_step=res.iterations, gap=res.gap,
                  _K_alpha=sys.apply_K(g_alpha), _Z_beta=sys.apply_Z(beta_t),
                  _L_beta=L_gb - res.L_vbar, _Zt_alpha=Zt_ga)
    st.objective = _objective_from_caches(sys, data.y, cfg, st)
    return st


def fit(sys: DerivativeSystem, data: Dataset, cfg: SolverConfig) -> FitState:
    """Run the outer iteration until the H-norm step drops below ext_tol.

    The stopping test is ||f_t - f_{t-1}||_H <= ext_tol * max(1, ||f_t||_H),
    both sides evaluated through the Gram quadratic forms.  The returned
    state carries a trace of objective values, inner iteration counts and
    duality gaps when ``cfg.record_trace`` is set.
    """
    if sys.n < 2:
        raise ValueError("fitting needs at least 2 samples")
    if cfg.tau * cfg.nu == 0.0:
        warnings.warn("tau*nu = 0: the objective is not strongly convex and "
                      "iterates may not converge to a unique minimizer",
                      RuntimeWarning)
    sigma, eta = resolve_steps(sys, cfg)

    if cfg.warm_start is not None:
        ws = cfg.warm_start
        init = FitState(alpha=ws.alpha.copy(), beta=ws.beta.copy(),
                        vbar=ws.vbar.copy(), s=1.0, outer_iters=0,
                        inner_iters_total=0, objective=0.0, converged=False)
    else:
        init = zero_state(sys)
    ensure_caches(sys, init)
    init.objective = _objective_from_caches(sys, data.y, cfg, init)

    if cfg.c_eps is not None:
        c_eps = cfg.c_eps
    else:
        c_eps = cfg.c_eps_scale * float(np.sqrt(max(init.objective, 0.0)))
    cfg_run = replace(cfg, c_eps=c_eps, warm_start=None)

    trace = FitTrace() if cfg.record_trace else None
    prev2 = init
    prev = init
    st = init
    converged = False
    for t in range(2, cfg.max_outer + 1):
        st = outer_step(sys, data, cfg_run, prev, prev2, t, sigma=sigma, eta=eta)
        if trace is not None:
            trace.objective.append(st.objective)
            trace.inner_iters.append(st.inner_iters_step)
            trace.gap.append(st.gap)
        d_alpha = st.alpha - prev.alpha
        d_beta = st.beta - prev.beta
        hdiff_sq = (d_alpha.dot(st._K_alpha - prev._K_alpha)
                    + 2.0 * d_alpha.dot(st._Z_beta - prev._Z_beta)
                    + d_beta.dot(st._L_beta - prev._L_beta)) / sys.n
        hdiff = np.sqrt(max(hdiff_sq, 0.0))
        hnorm = np.sqrt(_hnorm_sq(sys, st))
        if hdiff <= cfg.ext_tol * max(1.0, hnorm):
            converged = True
            break
        prev2, prev = prev, st

    st.converged = converged
    st.trace = trace
    return st


@dataclass
class PathEntry:
    tau: float
    state: FitState | None
    error: str | None = None


@dataclass
class PathResult:
    taus: list[float]
    entries: list[PathEntry]

    def states(self) -> list[FitState | None]:
        return [e.state for e in self.entries]


def fit_path(sys: DerivativeSystem, data: Dataset, taus,
             cfg_template: SolverConfig) -> PathResult:
    """Fit a strictly descending tau grid with warm starts.

    Coefficients and dual blocks carry over between consecutive taus
    (the momentum restarts at 1, and dual blocks are re-projected onto
    the shrunken ball inside the first inner solve).  A failure at one
    tau is recorded in its entry and the path continues cold.
    """
    taus = [float(t) for t in taus]
    if not taus:
        raise ValueError("empty tau grid")
    if any(t <= 0 for t in taus):
        raise ValueError("taus must be positive")
    if any(t2 >= t1 for t1, t2 in zip(taus, taus[1:])):
        raise ValueError("taus must be strictly descending")

    entries: list[PathEntry] = []
    warm: FitState | None = None
    for tau in taus:
        cfg = replace(cfg_template, tau=tau, warm_start=warm)
        try:
            st = fit(sys, data, cfg)
        except SolverError as exc:
            entries.append(PathEntry(tau=tau, state=None, error=str(exc)))
            warm = None
            continue
        entries.append(PathEntry(tau=tau, state=st))
        warm = st
    return PathResult(taus=taus, entries=entries)
