"""Coordinate-subsampled SVRG for least squares and top eigenvectors on numerically sparse matrices."""

import logging

from .eigensolver import (EigenAccelConfig, EigenConfig, lambda_shift_search, top_eigenvector,
                          top_eigenvector_accelerated)
from .generator import GenSpec, generate, measure_family
from .oracle import (DenseOracle, dense_solve, dense_spectrum, enumerate_estimator,
                     function_gap, monte_carlo_moments)
from .regression import (AccelConfig, RegressionConfig, RegressionProblem, mu_search, solve,
                         solve_regression, solve_regression_accelerated)
from .report import SolveReport
from .sampling import (AliasTable, RowSampler, SamplingPlan, build_alias, build_plan,
                       build_row_sampler, samplemat, sampledotproduct, samplerankonemat,
                       samplevec, top_c_split)
from .sparse_matrix import (RowMatrix, SparseRow, from_dense, from_scipy, load_matrix_market,
                            write_matrix_market)
from .svrg import ImplicitIterate, SvrgParams, derive_params, run_epoch

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "AccelConfig", "AliasTable", "DenseOracle", "EigenAccelConfig", "EigenConfig", "GenSpec",
    "ImplicitIterate", "RegressionConfig", "RegressionProblem", "RowMatrix", "RowSampler",
    "SamplingPlan", "SolveReport", "SparseRow", "SvrgParams", "build_alias", "build_plan",
    "build_row_sampler", "dense_solve", "dense_spectrum", "derive_params", "enumerate_estimator",
    "from_dense", "from_scipy", "function_gap", "generate", "lambda_shift_search",
    "load_matrix_market", "measure_family", "monte_carlo_moments", "mu_search", "run_epoch",
    "samplemat", "sampledotproduct", "samplerankonemat", "samplevec", "solve",
    "solve_regression", "solve_regression_accelerated", "top_c_split", "top_eigenvector",
    "top_eigenvector_accelerated", "write_matrix_market",
]
