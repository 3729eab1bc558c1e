"""Bartlett-corrected confidence regions for one area mean and two-area differences.

The studentized distance of the shrinkage predictor is asymptotically
chi-squared; its O(1/m) coverage error is captured by three trace terms
(b1 <= 0, b2 <= 0, b3 >= 0) with closed-form expressions in the model
matrices.  Scaling the chi-squared cutoff by (1 + h*) with h* built from
those terms removes the second-order coverage error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCorrection, DimensionMismatch, InvalidInput, SameArea
from .estimators import CovarianceEstimate, _gls_gram, _psi_quad_moment, _sinv
from .model import Dataset
from .numkernel import chi2_quantile, spd_inverse, spd_solve, symmetrize
from .prediction import _check_area, _g1_core, _g2_core, _g3_core, _shrink, msem_estimate

__all__ = [
    "BTerms",
    "Region",
    "b_terms",
    "bartlett_h",
    "corrected_region",
    "naive_region",
    "contains",
    "diff_b_terms",
    "diff_region",
]

# Closed-boundary slack for the ellipsoid membership predicate.
_BOUNDARY_RTOL = 1e-9


@dataclass(frozen=True)
class BTerms:
    """Trace terms of the second-order coverage expansion, each O(1/m)."""

    b1: float
    b2: float
    b3: float


@dataclass(frozen=True)
class Region:
    """Ellipsoidal confidence region {t : (t - center)' shape^-1 (t - center) <= radius_sq}."""

    center: np.ndarray  # (k,)
    shape: np.ndarray  # (k, k), symmetric PD
    radius_sq: float
    h_star: float
    alpha: float
    bterms: BTerms | None = None


def bartlett_h(bterms: BTerms, k: int, x: float) -> float:
    """Bartlett factor h* = -2 {(b1 - b3 - b2)/k + b2 x / (k (k + 2))}."""
    return -2.0 * (
        (bterms.b1 - bterms.b3 - bterms.b2) / k + bterms.b2 * x / (k * (k + 2.0))
    )


def _radius_sq(k: int, alpha: float, h_star: float) -> float:
    quantile = chi2_quantile(k, 1.0 - alpha)
    scale = 1.0 + h_star
    if scale <= 0.0:
        raise DegenerateCorrection(
            f"1 + h* = {scale:.4g} <= 0; the second-order correction is invalid here"
        )
    return scale * quantile


def _b12_core(s_all: np.ndarray, t1: np.ndarray, t2: np.ndarray) -> tuple[float, float]:
    """b1 and b2 sums over areas, given T_r = S_a^-1 D_a H^-r D_a S_a^-1."""
    m = s_all.shape[0]
    t1s = np.einsum("ij,mjk->mik", t1, s_all)
    t2s = np.einsum("ij,mjk->mik", t2, s_all)
    tr_t1s = np.trace(t1s, axis1=1, axis2=2)
    tr_t2s = np.trace(t2s, axis1=1, axis2=2)
    prod_21 = np.einsum("mij,mji->m", t2s, t1s)
    prod_11 = np.einsum("mij,mji->m", t1s, t1s)
    b1 = -0.5 / (m * m) * float(np.sum(prod_21 + tr_t2s * tr_t1s))
    b2 = -0.25 / (m * m) * float(np.sum(2.0 * prod_11 + tr_t1s**2))
    return b1, b2


def _b_terms_core(s_all, d_sinv_a, hinv, g3_a) -> BTerms:
    t1 = d_sinv_a.T @ hinv @ d_sinv_a
    t2 = d_sinv_a.T @ hinv @ hinv @ d_sinv_a
    b1, b2 = _b12_core(s_all, t1, t2)
    b3 = float(np.trace(hinv @ g3_a))
    return BTerms(b1, b2, b3)


def b_terms(dataset: Dataset, psi, a: int) -> BTerms:
    """Closed-form correction terms for the single-area region at covariance psi."""
    a = _check_area(dataset, a)
    psi = symmetrize(psi)
    sinv = _sinv(dataset, psi)
    gram_inv = spd_inverse(_gls_gram(dataset.X, sinv))
    s_all = psi[None, :, :] + dataset.D
    d_a = dataset.D[a]
    d_sinv_a = d_a @ sinv[a]
    h_mat = _g1_core(psi, d_a, sinv[a]) + _g2_core(dataset.X[a], d_sinv_a, gram_inv)
    hinv = spd_inverse(h_mat)
    g3_a = _g3_core(s_all, sinv[a], d_a)
    return _b_terms_core(s_all, d_sinv_a, hinv, g3_a)


def corrected_region(dataset: Dataset, a: int, cov: CovarianceEstimate, alpha: float) -> Region:
    """Second-order correct region for one area mean at confidence level 1 - alpha."""
    a = _check_area(dataset, a)
    _check_alpha(alpha)
    pred = msem_estimate(dataset, a, cov)
    bt = b_terms(dataset, cov.adjusted, a)
    x = chi2_quantile(dataset.k, 1.0 - alpha)
    h_star = bartlett_h(bt, dataset.k, x)
    return Region(
        center=pred.theta_eb,
        shape=pred.h_mat,
        radius_sq=_radius_sq(dataset.k, alpha, h_star),
        h_star=h_star,
        alpha=alpha,
        bterms=bt,
    )


def naive_region(dataset: Dataset, a: int, cov: CovarianceEstimate, alpha: float) -> Region:
    """Uncorrected plug-in region: the same ellipsoid with the bare chi-squared cutoff."""
    a = _check_area(dataset, a)
    _check_alpha(alpha)
    pred = msem_estimate(dataset, a, cov)
    return Region(
        center=pred.theta_eb,
        shape=pred.h_mat,
        radius_sq=chi2_quantile(dataset.k, 1.0 - alpha),
        h_star=0.0,
        alpha=alpha,
    )


def contains(region: Region, theta) -> bool:
    """Closed-ellipsoid membership via one SPD solve with the shape matrix."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != region.center.shape:
        raise DimensionMismatch(
            f"theta has shape {theta.shape}, region is {region.center.shape[0]}-dimensional"
        )
    diff = theta - region.center
    dist_sq = float(diff @ spd_solve(region.shape, diff))
    return dist_sq <= region.radius_sq * (1.0 + _BOUNDARY_RTOL)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha!r}")


def _check_pair(dataset: Dataset, a: int, b: int) -> tuple[int, int]:
    a = _check_area(dataset, a)
    b = _check_area(dataset, b)
    if a == b:
        raise SameArea(f"difference region needs two distinct areas, got {a} twice")
    return a, b


def _g2ab_core(x_a, d_sinv_a, x_b, d_sinv_b, gram_inv) -> np.ndarray:
    ba = d_sinv_a @ x_a  # (k, s)
    bb = d_sinv_b @ x_b
    cross = ba @ gram_inv @ bb.T
    return cross + cross.T


def _diff_b_terms_core(s_all, d_sinv_a, d_sinv_b, gab_inv, g3_a, g3_b, g2ab) -> BTerms:
    m = s_all.shape[0]
    gab_inv2 = gab_inv @ gab_inv
    d_sinvs = (d_sinv_a, d_sinv_b)
    pairs = ((0, 0), (1, 1), (0, 1), (1, 0))

    tr_v1 = 0.0
    tr_v2 = 0.0
    for c, d in pairs:
        dc, dd = d_sinvs[c], d_sinvs[d]
        a1_cd = dc.T @ gab_inv @ dd
        a2_cd = dc.T @ gab_inv2 @ dd
        a1_dc = dd.T @ gab_inv @ dc
        tr_v1 += float(np.trace(_psi_quad_moment(s_all, a2_cd) @ a1_dc))
        tr_v2 += float(np.trace(_psi_quad_moment(s_all, a1_cd) @ a1_dc))

    m1_sum = d_sinv_a.T @ gab_inv @ d_sinv_a + d_sinv_b.T @ gab_inv @ d_sinv_b
    ms = np.einsum("ij,mjk->mik", m1_sum, s_all)
    sq_sum = float(np.sum(np.einsum("mij,mji->m", ms, ms)))

    b1 = -0.5 * tr_v1
    b2 = -0.25 / (m * m) * sq_sum - 0.25 * tr_v2
    b3 = float(np.trace(gab_inv @ (g3_a + g3_b - g2ab)))
    return BTerms(b1, b2, b3)


def _diff_parts(dataset: Dataset, psi, a: int, b: int):
    sinv = _sinv(dataset, psi)
    gram_inv = spd_inverse(_gls_gram(dataset.X, sinv))
    s_all = psi[None, :, :] + dataset.D
    d_sinv_a = dataset.D[a] @ sinv[a]
    d_sinv_b = dataset.D[b] @ sinv[b]
    h_a = _g1_core(psi, dataset.D[a], sinv[a]) + _g2_core(dataset.X[a], d_sinv_a, gram_inv)
    h_b = _g1_core(psi, dataset.D[b], sinv[b]) + _g2_core(dataset.X[b], d_sinv_b, gram_inv)
    g2ab = _g2ab_core(dataset.X[a], d_sinv_a, dataset.X[b], d_sinv_b, gram_inv)
    gab = symmetrize(h_a + h_b - g2ab)
    return sinv, gram_inv, s_all, d_sinv_a, d_sinv_b, g2ab, gab


def diff_b_terms(dataset: Dataset, psi, a: int, b: int) -> BTerms:
    """Correction terms for the difference-of-means region between areas a and b."""
    a, b = _check_pair(dataset, a, b)
    psi = symmetrize(psi)
    sinv, _gram_inv, s_all, d_sinv_a, d_sinv_b, g2ab, gab = _diff_parts(dataset, psi, a, b)
    gab_inv = spd_inverse(gab)
    g3_a = _g3_core(s_all, sinv[a], dataset.D[a])
    g3_b = _g3_core(s_all, sinv[b], dataset.D[b])
    return _diff_b_terms_core(s_all, d_sinv_a, d_sinv_b, gab_inv, g3_a, g3_b, g2ab)


def diff_region(dataset: Dataset, a: int, b: int, cov: CovarianceEstimate, alpha: float) -> Region:
    """Corrected confidence region for the difference of two area means."""
    a, b = _check_pair(dataset, a, b)
    _check_alpha(alpha)
    psi = cov.adjusted
    sinv, gram_inv, s_all, d_sinv_a, d_sinv_b, g2ab, gab = _diff_parts(dataset, psi, a, b)
    rhs = np.einsum("aki,akl,al->i", dataset.X, sinv, dataset.y)
    beta = gram_inv @ rhs
    center = _shrink(dataset.y[a], dataset.X[a], beta, d_sinv_a) - _shrink(
        dataset.y[b], dataset.X[b], beta, d_sinv_b
    )
    gab_inv = spd_inverse(gab)
    g3_a = _g3_core(s_all, sinv[a], dataset.D[a])
    g3_b = _g3_core(s_all, sinv[b], dataset.D[b])
    bt = _diff_b_terms_core(s_all, d_sinv_a, d_sinv_b, gab_inv, g3_a, g3_b, g2ab)
    x = chi2_quantile(dataset.k, 1.0 - alpha)
    h_star = bartlett_h(bt, dataset.k, x)
    return Region(
        center=center,
        shape=gab,
        radius_sq=_radius_sq(dataset.k, alpha, h_star),
        h_star=h_star,
        alpha=alpha,
        bterms=bt,
    )
