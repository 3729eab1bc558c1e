"""Dense symmetric linear algebra and chi-squared utilities.

Small-k kernels shared by every other module: symmetrized eigendecomposition,
Cholesky-based SPD inversion and solves, PSD square roots, and chi-squared
CDF/PDF/quantile evaluation. All functions are pure and hold no state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import gammainc, ndtri

from .errors import InvalidInput, NotPositiveDefinite, NotPSD

__all__ = [
    "EigenDecomp",
    "symmetrize",
    "sym_eigen",
    "spd_inverse",
    "spd_solve",
    "spd_sqrt",
    "chi2_quantile",
    "chi2_cdf_pdf",
]


def symmetrize(a) -> np.ndarray:
    """Return (A + A') / 2 as a float64 array, validating squareness and finiteness."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvalidInput(f"expected a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("matrix has non-finite entries")
    return 0.5 * (arr + arr.T)


@dataclass(frozen=True)
class EigenDecomp:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted in descending order; eigenvectors holds the matching
    orthonormal eigenvectors as columns, so U diag(l) U' reconstructs the input.
    """

    eigenvalues: np.ndarray  # (k,)
    eigenvectors: np.ndarray  # (k, k), columns

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return 0.5 * ((u * self.eigenvalues) @ u.T + ((u * self.eigenvalues) @ u.T).T)


def sym_eigen(a) -> EigenDecomp:
    """Eigendecompose a symmetric matrix, eigenvalues descending."""
    arr = symmetrize(a)
    vals, vecs = np.linalg.eigh(arr)
    order = np.argsort(vals)[::-1]
    return EigenDecomp(np.ascontiguousarray(vals[order]), np.ascontiguousarray(vecs[:, order]))


def _cholesky(a: np.ndarray):
    try:
        return scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc


def spd_inverse(a) -> np.ndarray:
    """Invert a symmetric positive definite matrix via Cholesky factorization."""
    arr = symmetrize(a)
    cf = _cholesky(arr)
    inv = scipy.linalg.cho_solve(cf, np.eye(arr.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


def spd_solve(a, b) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A via one Cholesky solve."""
    arr = symmetrize(a)
    cf = _cholesky(arr)
    return scipy.linalg.cho_solve(cf, np.asarray(b, dtype=np.float64), check_finite=False)


def spd_sqrt(a) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix.

    Eigenvalues below -1e-10 raise :class:`NotPSD`; eigenvalues in [-1e-10, 0]
    are clamped to zero before taking the root.
    """
    dec = sym_eigen(a)
    vals = dec.eigenvalues.copy()
    if np.any(vals < -1e-10):
        raise NotPSD(f"matrix has negative eigenvalue {vals.min():.3e}")
    vals[vals < 0.0] = 0.0
    u = dec.eigenvectors
    root = (u * np.sqrt(vals)) @ u.T
    return 0.5 * (root + root.T)


def _check_df(df: int) -> int:
    if int(df) != df or df < 1:
        raise InvalidInput(f"degrees of freedom must be a positive integer, got {df!r}")
    return int(df)


def _chi2_pdf(df: int, x: float) -> float:
    half = 0.5 * df
    if x < 0.0:
        return 0.0
    if x == 0.0:
        if df == 2:
            return 0.5
        return math.inf if df < 2 else 0.0
    return math.exp((half - 1.0) * math.log(x) - 0.5 * x - half * math.log(2.0) - math.lgamma(half))


def chi2_cdf_pdf(df: int, x: float) -> tuple[float, float]:
    """Chi-squared CDF and PDF at x for the given degrees of freedom."""
    df = _check_df(df)
    x = float(x)
    if not math.isfinite(x) or x < 0.0:
        raise InvalidInput(f"x must be a non-negative real, got {x!r}")
    cdf = float(gammainc(0.5 * df, 0.5 * x))
    return cdf, _chi2_pdf(df, x)


def chi2_quantile(df: int, p: float) -> float:
    """Lower-tail chi-squared quantile: the x with F_df(x) = p.

    Newton iterations on the regularized lower incomplete gamma, with a
    bisection fallback whenever a step leaves the current bracket; stops at
    1e-13 relative change.
    """
    df = _check_df(df)
    p = float(p)
    if not (0.0 < p < 1.0) or not math.isfinite(p):
        raise InvalidInput(f"p must lie strictly inside (0, 1), got {p!r}")

    half = 0.5 * df

    def cdf(x: float) -> float:
        return float(gammainc(half, 0.5 * x))

    # Wilson-Hilferty starting point, clipped away from zero.
    c = 2.0 / (9.0 * df)
    x = df * (1.0 - c + float(ndtri(p)) * math.sqrt(c)) ** 3
    if not math.isfinite(x) or x <= 0.0:
        x = df * p

    lo, hi = 0.0, max(2.0 * x, 1.0)
    while cdf(hi) < p:
        lo = hi
        hi *= 2.0
    x = min(max(x, 0.5 * (lo + hi) * 1e-12), hi)

    for _ in range(200):
        fx = cdf(x)
        if fx > p:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        dens = _chi2_pdf(df, x)
        if dens > 0.0 and math.isfinite(dens):
            step = (fx - p) / dens
            x_new = x - step
        else:
            x_new = 0.5 * (lo + hi)
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-13 * max(abs(x_new), 1e-300):
            return x_new
        x = x_new
    return x
