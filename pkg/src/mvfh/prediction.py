"""Shrinkage prediction for a target area and second-order MSEM estimation.

The predictor shrinks the direct estimate toward the regression synthetic
estimate; its mean squared error matrix decomposes into the conditional
posterior covariance (g1), the coefficient-estimation term (g2), and the
covariance-estimation term (g3), with g1 + g2 + 2 g3 the second-order
unbiased plug-in estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange
from .estimators import CovarianceEstimate, _gls_gram, _psi_quad_moment, _sinv, gls_beta
from .model import AreaData, Dataset
from .numkernel import spd_inverse, spd_solve, symmetrize

__all__ = [
    "Prediction",
    "bayes_estimator",
    "eblup",
    "g1_matrix",
    "g2_matrix",
    "g3_matrix",
    "msem_estimate",
]


@dataclass(frozen=True)
class Prediction:
    """Point prediction for one area together with its MSEM decomposition."""

    area_index: int
    theta_eb: np.ndarray  # (k,)
    g1: np.ndarray  # (k, k)
    g2: np.ndarray  # (k, k)
    g3: np.ndarray  # (k, k)
    msem: np.ndarray  # g1 + g2 + 2 g3
    h_mat: np.ndarray  # g1 + g2


def _check_area(dataset: Dataset, a: int) -> int:
    a = int(a)
    if not 0 <= a < dataset.m:
        raise IndexOutOfRange(f"area index {a} outside 0..{dataset.m - 1}")
    return a


def _shrink(y_a, x_a, beta, d_sinv_a) -> np.ndarray:
    """y_a - D_a (psi + D_a)^-1 (y_a - X_a beta), given D_a (psi + D_a)^-1."""
    return y_a - d_sinv_a @ (y_a - x_a @ beta)


def bayes_estimator(area: AreaData, beta, psi) -> np.ndarray:
    """Posterior-mean predictor at known coefficients and covariance."""
    psi = symmetrize(psi)
    beta = np.asarray(beta, dtype=np.float64)
    d_sinv = spd_solve(psi + area.D, area.D).T
    return _shrink(area.y, area.X, beta, d_sinv)


def eblup(dataset: Dataset, a: int, psi) -> np.ndarray:
    """Empirical shrinkage predictor: plug GLS coefficients at psi into the posterior mean."""
    a = _check_area(dataset, a)
    beta = gls_beta(dataset, psi)
    return bayes_estimator(dataset.area(a), beta, symmetrize(psi))


def _g1_core(psi, d_a, sinv_a) -> np.ndarray:
    g1 = psi @ sinv_a @ d_a
    return 0.5 * (g1 + g1.T)


def g1_matrix(psi, d_a) -> np.ndarray:
    """Posterior covariance (psi^-1 + D_a^-1)^-1, computed as psi (psi + D_a)^-1 D_a."""
    psi = symmetrize(psi)
    d_a = symmetrize(d_a)
    return _g1_core(psi, d_a, spd_inverse(psi + d_a))


def _g2_core(x_a, d_sinv_a, gram_inv) -> np.ndarray:
    b = d_sinv_a @ x_a  # (k, s)
    g2 = b @ gram_inv @ b.T
    return 0.5 * (g2 + g2.T)


def g2_matrix(dataset: Dataset, psi, a: int) -> np.ndarray:
    """Coefficient-estimation contribution to the prediction risk (order 1/m)."""
    a = _check_area(dataset, a)
    psi = symmetrize(psi)
    sinv = _sinv(dataset, psi)
    gram_inv = spd_inverse(_gls_gram(dataset.X, sinv))
    return _g2_core(dataset.X[a], dataset.D[a] @ sinv[a], gram_inv)


def _g3_core(s_all, sinv_a, d_a) -> np.ndarray:
    d_sinv = d_a @ sinv_a
    g3 = d_sinv @ _psi_quad_moment(s_all, sinv_a) @ d_sinv.T
    return 0.5 * (g3 + g3.T)


def g3_matrix(dataset: Dataset, psi, a: int) -> np.ndarray:
    """Covariance-estimation contribution to the prediction risk, in closed form."""
    a = _check_area(dataset, a)
    psi = symmetrize(psi)
    sinv = _sinv(dataset, psi)
    return _g3_core(psi[None, :, :] + dataset.D, sinv[a], dataset.D[a])


def msem_estimate(dataset: Dataset, a: int, cov: CovarianceEstimate) -> Prediction:
    """Second-order unbiased MSEM estimate g1 + g2 + 2 g3, all at the adjusted covariance."""
    a = _check_area(dataset, a)
    psi = cov.adjusted
    sinv = _sinv(dataset, psi)
    gram_inv = spd_inverse(_gls_gram(dataset.X, sinv))
    rhs = np.einsum("aki,akl,al->i", dataset.X, sinv, dataset.y)
    beta = gram_inv @ rhs
    d_a = dataset.D[a]
    d_sinv_a = d_a @ sinv[a]
    theta = _shrink(dataset.y[a], dataset.X[a], beta, d_sinv_a)
    g1 = _g1_core(psi, d_a, sinv[a])
    g2 = _g2_core(dataset.X[a], d_sinv_a, gram_inv)
    g3 = _g3_core(psi[None, :, :] + dataset.D, sinv[a], d_a)
    return Prediction(
        area_index=a,
        theta_eb=theta,
        g1=g1,
        g2=g2,
        g3=g3,
        msem=g1 + g2 + 2.0 * g3,
        h_mat=g1 + g2,
    )
