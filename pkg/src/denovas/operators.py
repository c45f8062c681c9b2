"""Empirical Gram operators built from a kernel and a training sample.

For a sample x_1..x_n in R^d the system holds three operator matrices,
all carrying a 1/n normalization:

    K      n  x n    K[i,j]          = k(x_i, x_j) / n
    Z_a    n  x n    Z_a[i,j]        = d1(a, x_j, x_i) / n
    L_ab   n  x n    L_ab[i,j]       = d2(a, b, x_i, x_j) / n

Z is the n x (n d) block row (Z_1 .. Z_d) and L the (n d) x (n d) block
matrix (L_ab).  Coefficient vectors of length n*d are laid out
variable-major: block a occupies entries [a*n, (a+1)*n).

With this orientation the function f = (1/n) sum_i alpha_i k_{x_i}
+ (1/n) sum_{i,a} beta_{a,i} (d_a k)_{x_i} satisfies, at the training
points,

    (f(x_1), .., f(x_n))   = K alpha + Z beta
    partial_a f at samples = Z_a^T alpha + L_a beta

which is what the solver's update equations and stopping rules assume.
Inner products on coefficient vectors use the 1/n convention
<u, v>_n = u.v / n throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, gram, gram_d1, gram_d2

DEFAULT_DENSE_CAP = 8000           # max n*d for a materialized L
DEFAULT_MEMORY_BUDGET = 4 << 30    # bytes


class OperatorError(ValueError):
    """Invalid dataset or conflicting operator dimensions."""


class MemoryBudgetError(MemoryError):
    """Raised when assembly would exceed the configured memory budget."""

    def __init__(self, required_bytes: int, budget_bytes: int):
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes
        super().__init__(
            f"operator assembly needs {required_bytes} bytes "
            f"but the budget is {budget_bytes} bytes")


def n_norm(v: np.ndarray, n: int) -> float:
    """1/sqrt(n)-scaled Euclidean norm, ||v||_n = sqrt(v.v / n)."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(v.dot(v) / n))


def n_dot(u: np.ndarray, v: np.ndarray, n: int) -> float:
    """1/n-scaled inner product <u, v>_n = u.v / n."""
    return float(np.asarray(u, dtype=float).dot(np.asarray(v, dtype=float)) / n)


def block_n_norms(v: np.ndarray, n: int, d: int) -> np.ndarray:
    """Per-variable ||v_a||_n for a variable-major length-n*d vector."""
    V = np.asarray(v, dtype=float).reshape(d, n)
    return np.sqrt((V * V).sum(axis=1) / n)


@dataclass
class Dataset:
    """Input matrix (rows are samples), response vector, optional names."""

    X: np.ndarray
    y: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2:
            raise OperatorError(f"X must be 2-D, got shape {self.X.shape}")
        n, d = self.X.shape
        if n < 1 or d < 1:
            raise OperatorError(f"need n >= 1 and d >= 1, got X shape {self.X.shape}")
        if self.y.shape != (n,):
            raise OperatorError(f"y has length {self.y.size}, expected {n}")
        if not np.all(np.isfinite(self.X)):
            raise OperatorError("X contains NaN or Inf")
        if not np.all(np.isfinite(self.y)):
            raise OperatorError("y contains NaN or Inf")
        if self.names is not None and len(self.names) != d:
            raise OperatorError(f"{len(self.names)} names for {d} variables")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def var_names(self) -> list[str]:
        if self.names is not None:
            return list(self.names)
        return [f"x{a + 1}" for a in range(self.d)]


@dataclass
class SpectralEstimate:
    value: float
    converged: bool
    iterations: int


def spectral_norm(M, tol: float = 1e-6, max_iter: int = 1000,
                  seed: int = 7) -> SpectralEstimate:
    """Largest singular value of a matrix by power iteration on M^T M.

    The start vector is drawn from a fixed seed so repeated runs are
    deterministic.  If the relative change has not dropped below ``tol``
    within ``max_iter`` iterations the last estimate is returned with
    ``converged=False``; callers are expected to inflate step sizes
    derived from it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("spectral_norm expects a 2-D array")
    return _power_iteration(lambda v: M.T @ (M @ v), M.shape[1],
                            tol=tol, max_iter=max_iter, seed=seed, squared=True)


def _power_iteration(apply_sym, dim: int, tol: float, max_iter: int,
                     seed: int, squared: bool) -> SpectralEstimate:
    """Power iteration for a symmetric PSD operator given as a callable."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    nv = np.linalg.norm(v)
    if nv == 0:
        v = np.ones(dim)
        nv = np.sqrt(dim)
    v /= nv
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = apply_sym(v)
        lam_new = float(v.dot(w))
        nw = np.linalg.norm(w)
        if nw == 0:
            return SpectralEstimate(0.0, True, it)
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            return SpectralEstimate(np.sqrt(lam) if squared else lam, True, it)
        lam = lam_new
    return SpectralEstimate(np.sqrt(max(lam, 0.0)) if squared else max(lam, 0.0),
                            False, max_iter)


def _symmetrize(M: np.ndarray) -> np.ndarray:
    """Copy the lower triangle onto the upper one (exact symmetry)."""
    out = np.tril(M)
    out = out + np.tril(M, -1).T
    return out


@dataclass
class DerivativeSystem:
    """Assembled operators K, Z, L plus spectral-norm estimates.

    ``L`` is dense when n*d is at or below the dense cap and ``None`` in
    matrix-free mode, in which case ``apply_L`` recomputes second
    derivative blocks on the fly from the stored sample.
    """

    spec: KernelSpec
    X: np.ndarray
    K: np.ndarray
    Z: np.ndarray
    L: np.ndarray | None
    norm_K: float
    norm_L: float
    norms_converged: bool
    _diag_block_norms: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def z_block(self, a: int) -> np.ndarray:
        n = self.n
        return self.Z[:, a * n:(a + 1) * n]

    def l_block(self, a: int, b: int) -> np.ndarray:
        n = self.n
        if self.L is not None:
            return self.L[a * n:(a + 1) * n, b * n:(b + 1) * n]
        return gram_d2(self.spec, a, b, self.X, self.X) / n

    def apply_K(self, alpha: np.ndarray) -> np.ndarray:
        alpha = self._check_vec(alpha, self.n, "alpha")
        return self.K @ alpha

    def apply_Z(self, beta: np.ndarray) -> np.ndarray:
        """Z beta = sum_a Z_a beta_a, the sample values of the beta part."""
        beta = self._check_vec(beta, self.n * self.d, "beta")
        return self.Z @ beta

    def apply_Zt(self, alpha: np.ndarray) -> np.ndarray:
        """Z^T alpha stacked variable-major, blocks Z_a^T alpha."""
        alpha = self._check_vec(alpha, self.n, "alpha")
        return self.Z.T @ alpha

    def apply_L(self, beta: np.ndarray) -> np.ndarray:
        """L beta stacked variable-major, blocks L_a beta."""
        beta = self._check_vec(beta, self.n * self.d, "beta")
        if self.L is not None:
            return self.L @ beta
        n, d = self.n, self.d
        B = beta.reshape(d, n)
        out = np.zeros_like(B)
        for a in range(d):
            for b in range(d):
                out[a] += self.l_block(a, b) @ B[b]
        return out.ravel()

    def diag_block_norms(self, tol: float = 1e-4, max_iter: int = 200) -> np.ndarray:
        """Spectral norms of the diagonal blocks L_aa (cached)."""
        if self._diag_block_norms is None:
            vals = np.empty(self.d)
            for a in range(self.d):
                M = self.l_block(a, a)
                vals[a] = _power_iteration(lambda v: M @ v, self.n, tol=tol,
                                           max_iter=max_iter, seed=7,
                                           squared=False).value
            self._diag_block_norms = vals
        return self._diag_block_norms

    @staticmethod
    def _check_vec(v: np.ndarray, size: int, name: str) -> np.ndarray:
        v = np.asarray(v, dtype=float).ravel()
        if v.size != size:
            raise OperatorError(f"{name} has length {v.size}, expected {size}")
        return v


def assemble(spec: KernelSpec, data: Dataset,
             dense_cap: int = DEFAULT_DENSE_CAP,
             memory_budget: int = DEFAULT_MEMORY_BUDGET,
             norm_tol: float = 1e-6, norm_max_iter: int = 1000) -> DerivativeSystem:
    """Build K, Z and L for a dataset and estimate their spectral norms.

    L is materialized densely while n*d <= dense_cap and its memory fits
    the budget; beyond the cap a matrix-free system is returned.  If even
    the mandatory K and Z storage exceeds the budget a
    MemoryBudgetError reports the required bytes.
    """
    X, n, d = data.X, data.n, data.d
    nd = n * d
    base_bytes = 8 * (n * n + n * nd)
    if base_bytes > memory_budget:
        raise MemoryBudgetError(base_bytes, memory_budget)
    dense_L = nd <= dense_cap and base_bytes + 8 * nd * nd <= memory_budget

    K = _symmetrize(gram(spec, X, X)) / n

    # Z_a[i,j] = d1(a, x_j, x_i)/n: derivative anchored at the column sample,
    # so that K alpha + Z beta reproduces the expansion at the training rows.
    Z = np.empty((n, nd))
    for a in range(d):
        Z[:, a * n:(a + 1) * n] = gram_d1(spec, a, X, X).T / n

    L = None
    if dense_L:
        L = np.empty((nd, nd))
        for a in range(d):
            ra = slice(a * n, (a + 1) * n)
            for b in range(a, d):
                rb = slice(b * n, (b + 1) * n)
                blk = gram_d2(spec, a, b, X, X) / n
                if a == b:
                    blk = _symmetrize(blk)
                    L[ra, rb] = blk
                else:
                    L[ra, rb] = blk
                    L[rb, ra] = blk.T

    est_K = spectral_norm(K, tol=norm_tol, max_iter=norm_max_iter)
    if L is not None:
        est_L = spectral_norm(L, tol=norm_tol, max_iter=norm_max_iter)
    else:
        sys_tmp = DerivativeSystem(spec, X, K, Z, None, 0.0, 0.0, True)
        est_L = _power_iteration(sys_tmp.apply_L, nd, tol=norm_tol,
                                 max_iter=norm_max_iter, seed=7, squared=False)
    if not (est_K.converged and est_L.converged):
        warnings.warn("power iteration did not converge; step sizes derived "
                      "from these norms will be inflated by 10%", RuntimeWarning)

    return DerivativeSystem(spec=spec, X=X.copy(), K=K, Z=Z, L=L,
                            norm_K=est_K.value, norm_L=est_L.value,
                            norms_converged=est_K.converged and est_L.converged)
