"""Fitted kernel expansions, prediction, and the regularized refit step.

A fitted model predicts through the expansion

    f(x) = (1/n) sum_i alpha_i k(x_i, x)
         + (1/n) sum_i sum_a beta_{a,i} * d1(a, x_i, x)

anchored at the training sample.  The second stage of the pipeline
refits plain kernel regularized least squares on the selected
coordinates: coefficients solve (G + lambda * n * I) c = y with the raw
(unnormalized) Gram G of the same kernel family restricted to the
selected columns, lambda picked on a hold-out set.  Note the raw-Gram
convention: a ridge weight lam here corresponds to lam * n applied to a
1/n-normalized Gram.  No intercept is modeled anywhere; center y first
if it is far from zero mean.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .kernels import KernelSpec, gram, gram_d1
from .operators import Dataset

FORMAT_VERSION = 1

RLS_LAMBDA_FLOOR = 1e-10


@dataclass
class FittedModel:
    """Kernel expansion with optional selected-variable annotation."""

    spec: KernelSpec
    anchors: np.ndarray          # training inputs, n x d
    alpha: np.ndarray            # length n
    beta: np.ndarray             # length n*d, variable-major
    selected: list[int] | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        n, d = self.anchors.shape
        if self.alpha.size != n:
            raise ValueError(f"alpha has length {self.alpha.size}, expected {n}")
        if self.beta.size != n * d:
            raise ValueError(f"beta has length {self.beta.size}, expected {n * d}")
        if self.selected is not None:
            self.selected = sorted(int(a) for a in self.selected)
            if any(a < 0 or a >= d for a in self.selected):
                raise ValueError("selected indices out of range")

    @property
    def n(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]

    def predict(self, x) -> float:
        return float(self.predict_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def predict_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise ValueError(f"points have dimension {X.shape[1]}, expected {self.d}")
        n, d = self.n, self.d
        out = self.alpha @ gram(self.spec, self.anchors, X)
        B = self.beta.reshape(d, n)
        for a in range(d):
            if np.any(B[a]):
                out = out + B[a] @ gram_d1(self.spec, a, self.anchors, X)
        return out / n

    def to_json_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "expansion",
            "kernel": self.spec.to_dict(),
            "anchors": self.anchors.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "selected": self.selected,
            "names": self.names,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FittedModel":
        _check_version(doc)
        return cls(spec=KernelSpec.from_dict(doc["kernel"]),
                   anchors=np.asarray(doc["anchors"], dtype=float),
                   alpha=np.asarray(doc["alpha"], dtype=float),
                   beta=np.asarray(doc["beta"], dtype=float),
                   selected=doc.get("selected"),
                   names=doc.get("names"))


def _check_version(doc: dict) -> None:
    v = doc.get("format_version")
    if v != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {v!r}")


@dataclass
class RlsModel:
    """Kernel regularized least squares on a subset of coordinates.

    ``coeffs`` is None for the empty-selection fallback, in which case
    the model predicts the training mean.
    """

    spec: KernelSpec
    anchors: np.ndarray              # n x |selected| (selected columns only)
    coeffs: np.ndarray | None
    lam: float
    selected: list[int]
    mean_fallback: float = 0.0

    @property
    def is_fallback(self) -> bool:
        return self.coeffs is None

    def predict_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.is_fallback:
            return np.full(X.shape[0], self.mean_fallback)
        Xs = X[:, self.selected]
        return self.coeffs @ gram(self.spec, self.anchors, Xs)

    def predict(self, x) -> float:
        return float(self.predict_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def to_json_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "rls",
            "kernel": self.spec.to_dict(),
            "anchors": self.anchors.tolist(),
            "coeffs": None if self.coeffs is None else self.coeffs.tolist(),
            "lambda": self.lam,
            "selected": list(self.selected),
            "mean_fallback": self.mean_fallback,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RlsModel":
        _check_version(doc)
        coeffs = doc["coeffs"]
        return cls(spec=KernelSpec.from_dict(doc["kernel"]),
                   anchors=np.asarray(doc["anchors"], dtype=float),
                   coeffs=None if coeffs is None else np.asarray(coeffs, dtype=float),
                   lam=doc["lambda"],
                   selected=[int(a) for a in doc["selected"]],
                   mean_fallback=doc.get("mean_fallback", 0.0))


def save_model_json(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json_dict(), fh, indent=1)
        fh.write("\n")


def load_model_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    kind = doc.get("kind", "expansion")
    if kind == "rls":
        return RlsModel.from_json_dict(doc)
    return FittedModel.from_json_dict(doc)


def default_lambda_grid(G: np.ndarray, n: int, count: int = 30) -> np.ndarray:
    """Geometric grid over [1e-6, 1e1] scaled by trace(G)/n."""
    scale = max(float(np.trace(G)) / n, 1e-300)
    return scale * np.geomspace(1e-6, 1e1, count)


def _solve_rls(G: np.ndarray, y: np.ndarray, lam_n: float) -> np.ndarray:
    A = G + lam_n * np.eye(G.shape[0])
    try:
        return cho_solve(cho_factor(A, lower=True), y)
    except np.linalg.LinAlgError:
        pass
    except ValueError:
        pass
    A = A + max(lam_n * 1e-6, RLS_LAMBDA_FLOOR) * np.eye(G.shape[0])
    try:
        return cho_solve(cho_factor(A, lower=True), y)
    except (np.linalg.LinAlgError, ValueError):
        return np.linalg.lstsq(A, y, rcond=None)[0]


def rls_fit(spec: KernelSpec, data: Dataset, selected,
            holdout: Dataset, lambda_grid=None) -> RlsModel:
    """Refit on the selected coordinates, picking lambda on the hold-out.

    For each candidate lambda the system (G + lambda * n * I) c = y is
    solved on the selected-column Gram and scored by hold-out RMSE.  An
    empty selection falls back to predicting the training mean (with a
    warning), so downstream scoring still works.
    """
    selected = sorted(int(a) for a in selected)
    if any(a < 0 or a >= data.d for a in selected):
        raise ValueError("selected indices out of range")
    if holdout.d != data.d:
        raise ValueError("holdout dimension differs from training dimension")
    if not selected:
        warnings.warn("empty selection: falling back to the training-mean model",
                      RuntimeWarning)
        return RlsModel(spec=spec, anchors=np.empty((0, 0)), coeffs=None,
                        lam=0.0, selected=[], mean_fallback=float(data.y.mean()))

    Xs = data.X[:, selected]
    n = data.n
    G = gram(spec, Xs, Xs)
    G = (G + G.T) / 2.0
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(G, n)
    Xh = holdout.X[:, selected]
    cross = gram(spec, Xs, Xh)

    best = None
    for lam in sorted(float(l) for l in lambda_grid):
        lam = max(lam, RLS_LAMBDA_FLOOR)
        c = _solve_rls(G, data.y, lam * n)
        pred = c @ cross
        rmse = float(np.sqrt(np.mean((holdout.y - pred) ** 2)))
        if best is None or rmse < best[0]:
            best = (rmse, lam, c)
    _, lam, c = best
    return RlsModel(spec=spec, anchors=Xs.copy(), coeffs=c, lam=lam,
                    selected=selected)


def rls_predict(model: RlsModel, x) -> float:
    return model.predict(x)


def rmse(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))
