"""Multivariate Fay-Herriot small-area estimation.

Shrinkage prediction (EBLUP) for vector-valued area means, a positive-definite
moment estimator of the random-effect covariance, second-order unbiased MSEM
estimation, Bartlett-corrected confidence regions for single areas and for
differences of two areas, and a reproducible Monte Carlo coverage harness.
"""

__version__ = "0.1.0"

from . import errors
from .estimators import (
    CovarianceEstimate,
    gls_beta,
    ols_beta,
    psi_adjusted,
    psi_pr,
    psi_pr_bias,
    psi_pr_raw,
)
from .model import AreaData, Dataset, ModelParams, load_dataset, save_dataset, validate
from .numkernel import (
    EigenDecomp,
    chi2_cdf_pdf,
    chi2_quantile,
    spd_inverse,
    spd_sqrt,
    sym_eigen,
    symmetrize,
)
from .prediction import (
    Prediction,
    bayes_estimator,
    eblup,
    g1_matrix,
    g2_matrix,
    g3_matrix,
    msem_estimate,
)
from .regions import (
    BTerms,
    Region,
    b_terms,
    bartlett_h,
    contains,
    corrected_region,
    diff_b_terms,
    diff_region,
    naive_region,
)
from .simulation import (
    CoverageResult,
    SimDesign,
    coverage_experiment,
    coverage_to_json,
    d_pattern,
    draw_sample,
    make_design,
    make_psi,
    paper_design,
    write_coverage_csv,
)

__all__ = [
    "__version__",
    "errors",
    "AreaData",
    "Dataset",
    "ModelParams",
    "load_dataset",
    "save_dataset",
    "validate",
    "EigenDecomp",
    "symmetrize",
    "sym_eigen",
    "spd_inverse",
    "spd_sqrt",
    "chi2_quantile",
    "chi2_cdf_pdf",
    "CovarianceEstimate",
    "ols_beta",
    "gls_beta",
    "psi_pr_raw",
    "psi_pr_bias",
    "psi_pr",
    "psi_adjusted",
    "Prediction",
    "bayes_estimator",
    "eblup",
    "g1_matrix",
    "g2_matrix",
    "g3_matrix",
    "msem_estimate",
    "BTerms",
    "Region",
    "b_terms",
    "bartlett_h",
    "corrected_region",
    "naive_region",
    "contains",
    "diff_b_terms",
    "diff_region",
    "SimDesign",
    "CoverageResult",
    "make_design",
    "make_psi",
    "d_pattern",
    "paper_design",
    "draw_sample",
    "coverage_experiment",
    "write_coverage_csv",
    "coverage_to_json",
]
