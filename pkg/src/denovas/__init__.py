"""Derivative-penalized nonparametric regression and variable selection.

The pipeline: assemble kernel-derivative Gram operators from a sample,
minimize the derivative-penalized least-squares objective with an
accelerated proximal solver, read the selected variables off the dual
blocks, then refit kernel regularized least squares on the selection.
"""

from .kernels import GAUSSIAN, LINEAR, POLYNOMIAL, KernelError, KernelSpec
from .model import FittedModel, RlsModel, load_model_json, rls_fit, rls_predict, save_model_json
from .operators import (Dataset, DerivativeSystem, MemoryBudgetError,
                        OperatorError, assemble, spectral_norm)
from .selection import SelectionReport, select, selection_error
from .solver import (FitState, InnerProxError, PathResult, SolverConfig,
                     SolverError, fit, fit_path, inner_prox, objective, outer_step)
from .experiments import (BenchOptions, RunSummary, SyntheticDesign,
                          gaussian_width_heuristic, generate, make_design,
                          run_benchmark)

__version__ = "0.1.0"

__all__ = [
    "GAUSSIAN", "LINEAR", "POLYNOMIAL", "KernelError", "KernelSpec",
    "Dataset", "DerivativeSystem", "MemoryBudgetError", "OperatorError",
    "assemble", "spectral_norm",
    "FitState", "InnerProxError", "PathResult", "SolverConfig", "SolverError",
    "fit", "fit_path", "inner_prox", "objective", "outer_step",
    "FittedModel", "RlsModel", "load_model_json", "rls_fit", "rls_predict",
    "save_model_json",
    "SelectionReport", "select", "selection_error",
    "BenchOptions", "RunSummary", "SyntheticDesign",
    "gaussian_width_heuristic", "generate", "make_design", "run_benchmark",
    "__version__",
]
