"""Twice-differentiable kernels and their analytic partial derivatives.

Three families are supported:

    gaussian      k(x, s) = exp(-||x - s||^2 / (2 gamma^2))
    polynomial    k(x, s) = (offset + <x, s>)^degree
    linear        k(x, s) = <x, s>

All are C^2 on R^d x R^d, so first partials and mixed second partials
exist in closed form.  ``d1(a, x, s)`` is the derivative of k in its
*first* argument, taken at ``x`` with the other point held at ``s``:

    d1(a, x, s) = d/du^a k(u, s) |_{u=x}

``d2(a, b, x, s)`` differentiates once in each argument:

    d2(a, b, x, s) = d^2/(du^a dw^b) k(u, w) |_{u=x, w=s}

Derivatives are always evaluated analytically, never by finite
differences, so that matrix assembly stays O(1) per entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAUSSIAN = "gaussian"
POLYNOMIAL = "polynomial"
LINEAR = "linear"

_FAMILIES = (GAUSSIAN, POLYNOMIAL, LINEAR)


class KernelError(ValueError):
    """Invalid kernel parameters or mismatched point dimensions."""


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    ``gamma`` is the Gaussian width (must be positive), ``degree`` the
    polynomial degree (integer >= 1) and ``offset`` the polynomial
    additive constant (>= 0, default 1 so that degree-p gives the
    familiar (1 + <x,s>)^p).  Parameters of the other families are
    ignored.
    """

    family: str
    gamma: float = 1.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}; "
                              f"expected one of {_FAMILIES}")
        if self.family == GAUSSIAN and not self.gamma > 0:
            raise KernelError(f"gaussian width must be positive, got {self.gamma}")
        if self.family == POLYNOMIAL:
            if int(self.degree) != self.degree or self.degree < 1:
                raise KernelError(f"polynomial degree must be an integer >= 1, "
                                  f"got {self.degree}")
            if self.offset < 0:
                raise KernelError(f"polynomial offset must be >= 0, got {self.offset}")

    def to_dict(self) -> dict:
        d = {"family": self.family}
        if self.family == GAUSSIAN:
            d["gamma"] = self.gamma
        elif self.family == POLYNOMIAL:
            d["degree"] = int(self.degree)
            d["offset"] = self.offset
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(family=d["family"],
                   gamma=d.get("gamma", 1.0),
                   degree=d.get("degree", 2),
                   offset=d.get("offset", 1.0))


def _check_points(x: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if x.size != s.size:
        raise KernelError(f"point dimensions differ: {x.size} vs {s.size}")
    if x.size < 1:
        raise KernelError("points must have dimension >= 1")
    return x, s


def _check_index(a: int, d: int) -> None:
    if not 0 <= a < d:
        raise KernelError(f"variable index {a} out of range [0, {d})")


def evaluate(spec: KernelSpec, x, s) -> float:
    """k(x, s) for a single pair of points."""
    x, s = _check_points(x, s)
    if spec.family == GAUSSIAN:
        diff = x - s
        return float(np.exp(-diff.dot(diff) / (2.0 * spec.gamma ** 2)))
    if spec.family == POLYNOMIAL:
        return float((spec.offset + x.dot(s)) ** spec.degree)
    return float(x.dot(s))


def d1(spec: KernelSpec, a: int, x, s) -> float:
    """First partial d/du^a k(u, s) at u = x (0-based index a)."""
    x, s = _check_points(x, s)
    _check_index(a, x.size)
    if spec.family == GAUSSIAN:
        g2 = spec.gamma ** 2
        diff = x - s
        return float(np.exp(-diff.dot(diff) / (2.0 * g2)) * (s[a] - x[a]) / g2)
    if spec.family == POLYNOMIAL:
        p = spec.degree
        return float(p * (spec.offset + x.dot(s)) ** (p - 1) * s[a])
    return float(s[a])


def d2(spec: KernelSpec, a: int, b: int, x, s) -> float:
    """Mixed second partial d^2/(du^a dw^b) k(u, w) at (x, s).

    For the Gaussian this is

        -k(x,s) * ((x^a - s^a)(x^b - s^b)/gamma^4 - delta_ab/gamma^2)

    whose diagonal at coincident points equals +1/gamma^2, keeping the
    assembled second-derivative Gram operator positive semidefinite.
    """
    x, s = _check_points(x, s)
    _check_index(a, x.size)
    _check_index(b, x.size)
    if spec.family == GAUSSIAN:
        g2 = spec.gamma ** 2
        diff = x - s
        k = np.exp(-diff.dot(diff) / (2.0 * g2))
        cross = diff[a] * diff[b] / (g2 * g2)
        if a == b:
            return float(-k * (cross - 1.0 / g2))
        return float(-k * cross)
    if spec.family == POLYNOMIAL:
        p = spec.degree
        base = spec.offset + x.dot(s)
        out = p * base ** (p - 1) if a == b else 0.0
        if p >= 2:
            out += p * (p - 1) * base ** (p - 2) * x[b] * s[a]
        return float(out)
    return 1.0 if a == b else 0.0


# ---------------------------------------------------------------------------
# pairwise (matrix) forms, used for Gram assembly and batched prediction
# ---------------------------------------------------------------------------

def _check_matrices(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise KernelError(f"point dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # broadcasted form keeps S[i,j] == S[j,i] exact for A is B
    return ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Matrix [k(A_i, B_j)]_{i,j}."""
    A, B = _check_matrices(A, B)
    if spec.family == GAUSSIAN:
        return np.exp(-_sqdist(A, B) / (2.0 * spec.gamma ** 2))
    if spec.family == POLYNOMIAL:
        return (spec.offset + A @ B.T) ** spec.degree
    return A @ B.T


def gram_d1(spec: KernelSpec, a: int, A, B) -> np.ndarray:
    """Matrix [d1(a, A_i, B_j)]_{i,j}: derivative anchored at the rows."""
    A, B = _check_matrices(A, B)
    _check_index(a, A.shape[1])
    if spec.family == GAUSSIAN:
        g2 = spec.gamma ** 2
        W = np.exp(-_sqdist(A, B) / (2.0 * g2))
        return W * (B[None, :, a] - A[:, None, a]) / g2
    if spec.family == POLYNOMIAL:
        p = spec.degree
        return p * (spec.offset + A @ B.T) ** (p - 1) * B[None, :, a]
    return np.broadcast_to(B[None, :, a], (A.shape[0], B.shape[0])).copy()


def gram_d2(spec: KernelSpec, a: int, b: int, A, B) -> np.ndarray:
    """Matrix [d2(a, b, A_i, B_j)]_{i,j}."""
    A, B = _check_matrices(A, B)
    _check_index(a, A.shape[1])
    _check_index(b, A.shape[1])
    if spec.family == GAUSSIAN:
        g2 = spec.gamma ** 2
        W = np.exp(-_sqdist(A, B) / (2.0 * g2))
        da = A[:, None, a] - B[None, :, a]
        db = A[:, None, b] - B[None, :, b]
        out = -W * da * db / (g2 * g2)
        if a == b:
            out += W / g2
        return out
    if spec.family == POLYNOMIAL:
        p = spec.degree
        base = spec.offset + A @ B.T
        out = p * base ** (p - 1) if a == b else np.zeros_like(base)
        if p >= 2:
            out = out + p * (p - 1) * base ** (p - 2) * (A[:, b][:, None] * B[:, a][None, :])
        return out
    shape = (A.shape[0], B.shape[0])
    return np.ones(shape) if a == b else np.zeros(shape)
