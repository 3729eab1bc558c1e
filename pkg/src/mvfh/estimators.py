"""Regression-coefficient and random-effect covariance estimation.

Implements the OLS and GLS coefficient estimators, the moment-based estimator
of the random-effect covariance from OLS residual outer products, its exact
finite-m bias correction, and the eigenvalue-adjusted estimator that is always
strictly positive definite while staying second-order unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite, RankDeficientDesign
from .model import Dataset
from .numkernel import EigenDecomp, sym_eigen, symmetrize

__all__ = [
    "CovarianceEstimate",
    "ols_beta",
    "gls_beta",
    "psi_pr_raw",
    "psi_pr_bias",
    "psi_pr",
    "psi_adjusted",
]


@dataclass(frozen=True)
class CovarianceEstimate:
    """Moment estimates of the random-effect covariance.

    raw_pr is the residual moment estimator (may be indefinite),
    bias_corrected subtracts its exact O(1/m) bias evaluated at raw_pr, and
    adjusted is the strictly positive definite eigenvalue adjustment used by
    all downstream prediction and region code.
    """

    raw_pr: np.ndarray  # (k, k)
    bias_corrected: np.ndarray  # (k, k)
    adjusted: np.ndarray  # (k, k), strictly PD
    a_hat: float
    b_hat: np.ndarray  # (k,), each >= 1/m
    eigen: EigenDecomp  # of bias_corrected


def ols_beta(dataset: Dataset) -> np.ndarray:
    """Ordinary least squares coefficients from the stacked design."""
    m, k, s = dataset.m, dataset.k, dataset.s
    xf = dataset.X.reshape(m * k, s)
    yf = dataset.y.reshape(m * k)
    beta, _, rank, _ = np.linalg.lstsq(xf, yf, rcond=1e-10)
    if rank < s:
        raise RankDeficientDesign(f"stacked covariate matrix has rank {rank} < s={s}")
    return beta


def _sinv(dataset: Dataset, psi: np.ndarray) -> np.ndarray:
    """Inverses of psi + D_i for all areas; fails if any is not PD."""
    s_all = psi[None, :, :] + dataset.D
    try:
        np.linalg.cholesky(s_all)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("psi + D_i is not positive definite for some area") from None
    sinv = np.linalg.inv(s_all)
    return 0.5 * (sinv + np.swapaxes(sinv, 1, 2))


def _gls_gram(X: np.ndarray, sinv: np.ndarray) -> np.ndarray:
    """Weighted gram matrix sum_i X_i' (psi + D_i)^-1 X_i."""
    return np.einsum("aki,akl,alj->ij", X, sinv, X)


def gls_beta(dataset: Dataset, psi) -> np.ndarray:
    """Generalized least squares coefficients at the given random-effect covariance."""
    psi = symmetrize(psi)
    sinv = _sinv(dataset, psi)
    gram = _gls_gram(dataset.X, sinv)
    rhs = np.einsum("aki,akl,al->i", dataset.X, sinv, dataset.y)
    return np.linalg.solve(gram, rhs)


def psi_pr_raw(dataset: Dataset) -> np.ndarray:
    """Residual moment estimator: mean of OLS residual outer products minus mean D_i."""
    beta = ols_beta(dataset)
    return _psi_pr_raw_from_beta(dataset.y, dataset.X, dataset.D, beta)


def _psi_pr_raw_from_beta(y, X, D, beta) -> np.ndarray:
    resid = y - X @ beta
    m = y.shape[0]
    raw = resid.T @ resid / m - D.mean(axis=0)
    return 0.5 * (raw + raw.T)


def psi_pr_bias(dataset: Dataset, psi) -> np.ndarray:
    """Exact bias of the raw moment estimator when the true covariance is psi."""
    psi = symmetrize(psi)
    gram_inv = np.linalg.inv(
        np.einsum("aki,akj->ij", dataset.X, dataset.X)
    )
    return _psi_pr_bias_core(dataset.X, psi[None, :, :] + dataset.D, gram_inv)


def _psi_pr_bias_core(X, s_all, gram_inv) -> np.ndarray:
    """Three-term bias expression given S_i = psi + D_i and (X'X)^-1."""
    m = X.shape[0]
    xg = X @ gram_inv  # (m, k, s)
    mid = np.einsum("aki,akl,alj->ij", X, s_all, X)  # sum X_i' S_i X_i
    term1 = np.einsum("aki,ij,alj->kl", xg, mid, xg) / m
    cross = np.einsum("akl,ali,ami->akm", s_all, X, xg).sum(axis=0) / m
    bias = term1 - cross - cross.T
    return 0.5 * (bias + bias.T)


def psi_pr(dataset: Dataset) -> np.ndarray:
    """Bias-corrected moment estimator (single substitution, no iteration)."""
    raw = psi_pr_raw(dataset)
    return symmetrize(raw - psi_pr_bias(dataset, raw))


def _adjust(bias_corrected: np.ndarray, raw: np.ndarray, m: int) -> CovarianceEstimate:
    """Eigenvalue adjustment making the estimate strictly positive definite.

    With eigenvalues l_i of the bias-corrected estimate, a = trace/(m k) and
    b_i = max(4 a (l_i - a), 1/m), the adjusted matrix has eigenvalues
    (l_i - a + sqrt((l_i - a)^2 + b_i)) / 2 > 0 in the same eigenbasis.
    """
    k = bias_corrected.shape[0]
    eigen = sym_eigen(bias_corrected)
    ell = eigen.eigenvalues
    a_hat = float(np.trace(bias_corrected)) / (m * k)
    b_hat = np.maximum(4.0 * a_hat * (ell - a_hat), 1.0 / m)
    l_adj = np.sqrt((ell - a_hat) ** 2 + b_hat)
    u = eigen.eigenvectors
    adjusted = 0.5 * (bias_corrected - a_hat * np.eye(k) + (u * l_adj) @ u.T)
    adjusted = 0.5 * (adjusted + adjusted.T)
    return CovarianceEstimate(raw, bias_corrected, adjusted, a_hat, b_hat, eigen)


def psi_adjusted(dataset: Dataset) -> CovarianceEstimate:
    """Full covariance-estimation chain: raw moments, bias correction, PD adjustment."""
    raw = psi_pr_raw(dataset)
    bias_corrected = symmetrize(raw - psi_pr_bias(dataset, raw))
    return _adjust(bias_corrected, raw, dataset.m)


def _psi_quad_moment(s_all: np.ndarray, a_mat: np.ndarray) -> np.ndarray:
    """Leading-order moment E[(psi_hat - psi) A (psi_hat - psi)] of the moment estimator.

    Equals (1/m^2) sum_i {S_i A S_i + tr(A S_i) S_i} with S_i = psi + D_i;
    shared by the prediction-risk term and all Bartlett correction terms.
    """
    m = s_all.shape[0]
    sas = np.einsum("aij,jk,akl->il", s_all, a_mat, s_all)
    weights = np.einsum("ij,aji->a", a_mat, s_all)
    return (sas + np.einsum("a,aij->ij", weights, s_all)) / (m * m)
