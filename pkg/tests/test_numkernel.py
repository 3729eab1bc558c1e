import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from mvfh import chi2_cdf_pdf, chi2_quantile, spd_inverse, spd_sqrt, sym_eigen
from mvfh.errors import InvalidInput, NotPositiveDefinite, NotPSD
from mvfh.numkernel import spd_solve, symmetrize


# --- sym_eigen -------------------------------------------------------------


def test_sym_eigen_identity():
    dec = sym_eigen(np.eye(2))
    np.testing.assert_allclose(dec.eigenvalues, [1.0, 1.0])
    np.testing.assert_allclose(dec.reconstruct(), np.eye(2), atol=1e-12)


def test_sym_eigen_diagonal():
    dec = sym_eigen(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(dec.eigenvalues, [3.0, 1.0])
    np.testing.assert_allclose(np.abs(dec.eigenvectors), np.eye(2), atol=1e-12)


def test_sym_eigen_hand_2x2():
    # characteristic polynomial of [[2,1],[1,2]]: (2-l)^2 - 1 -> l = 3, 1
    dec = sym_eigen([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(dec.eigenvalues, [3.0, 1.0], atol=1e-12)
    v = 1.0 / math.sqrt(2.0)
    for col, expect in zip(dec.eigenvectors.T, ([v, v], [v, -v])):
        assert min(np.abs(col - expect).max(), np.abs(col + expect).max()) < 1e-12


def test_sym_eigen_rejects_nonfinite():
    with pytest.raises(InvalidInput):
        sym_eigen([[np.nan, 0.0], [0.0, 1.0]])
    with pytest.raises(InvalidInput):
        sym_eigen(np.ones((2, 3)))


def test_sym_eigen_reconstruction_random(rng):
    for _ in range(50):
        k = rng.integers(1, 7)
        a = symmetrize(rng.normal(size=(k, k)))
        dec = sym_eigen(a)
        scale = max(1.0, np.abs(a).max())
        assert np.abs(dec.reconstruct() - a).max() < 1e-10 * scale
        assert np.abs(dec.eigenvectors.T @ dec.eigenvectors - np.eye(k)).max() < 1e-10
        assert (np.diff(dec.eigenvalues) <= 1e-12).all()


def test_sym_eigen_deterministic():
    a = [[2.0, 1.0], [1.0, 2.0]]
    d1, d2 = sym_eigen(a), sym_eigen(a)
    assert np.array_equal(d1.eigenvalues, d2.eigenvalues)
    assert np.array_equal(d1.eigenvectors, d2.eigenvectors)


# --- spd_inverse / spd_solve -------------------------------------------------


def test_spd_inverse_identity():
    np.testing.assert_allclose(spd_inverse(np.eye(3)), np.eye(3), atol=1e-14)


def test_spd_inverse_diagonal():
    np.testing.assert_allclose(spd_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_spd_inverse_hand_2x2():
    # 2x2 inverse formula: det = 3
    expect = np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0
    np.testing.assert_allclose(spd_inverse([[2.0, 1.0], [1.0, 2.0]]), expect, atol=1e-14)


def test_spd_inverse_not_pd():
    with pytest.raises(NotPositiveDefinite):
        spd_inverse([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        spd_inverse(np.zeros((2, 2)))


def test_spd_inverse_roundtrip_random(rng):
    for _ in range(100):
        k = rng.integers(1, 7)
        mat = rng.normal(size=(k, k))
        a = mat.T @ mat + 1e-3 * np.eye(k)
        inv = spd_inverse(a)
        assert np.abs(a @ inv - np.eye(k)).max() < 1e-8
        assert np.array_equal(inv, inv.T)
        assert np.abs(spd_inverse(inv) - a).max() < 1e-6 * max(1.0, np.abs(a).max())


def test_spd_solve_matches_inverse(rng):
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = rng.normal(size=2)
    np.testing.assert_allclose(spd_solve(a, b), spd_inverse(a) @ b, atol=1e-12)


# --- spd_sqrt ----------------------------------------------------------------


def test_spd_sqrt_identity():
    np.testing.assert_allclose(spd_sqrt(np.eye(2)), np.eye(2), atol=1e-14)


def test_spd_sqrt_diagonal():
    np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_spd_sqrt_hand_square():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    root = spd_sqrt(a)
    np.testing.assert_allclose(root @ root, a, atol=1e-12)
    assert np.array_equal(root, root.T)


def test_spd_sqrt_rejects_negative():
    with pytest.raises(NotPSD):
        spd_sqrt(np.diag([1.0, -1.0]))


def test_spd_sqrt_clamps_tiny_negative():
    root = spd_sqrt(np.diag([1.0, -5e-11]))
    np.testing.assert_allclose(root, np.diag([1.0, 0.0]), atol=1e-12)


def test_spd_sqrt_random_sweep(rng):
    for _ in range(1000):
        k = rng.integers(1, 7)
        mat = rng.normal(size=(k, k + 1))
        a = mat @ mat.T
        root = spd_sqrt(a)
        assert np.abs(root @ root - a).max() < 1e-8 * max(1.0, np.abs(a).max())
        assert np.linalg.eigvalsh(root).min() > -1e-10


# --- chi-squared -------------------------------------------------------------


def test_chi2_quantile_df2_closed_form():
    # F_2(x) = 1 - exp(-x/2), so the 0.95 quantile is -2 log(0.05)
    expect = -2.0 * math.log(0.05)
    assert abs(chi2_quantile(2, 0.95) - expect) < 1e-12
    assert abs(expect - 5.991465) < 1e-6


def test_chi2_quantile_df1_normal_square():
    # square of the standard normal 0.975 quantile, via an independent
    # Moro-series normal quantile refined by Newton on the erfc-based CDF
    z = _normal_quantile_series(0.975)
    for _ in range(3):
        f = 0.5 * math.erfc(-z / math.sqrt(2.0)) - 0.975
        z -= f / (math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))
    expect = z * z
    assert abs(chi2_quantile(1, 0.95) - expect) < 1e-10
    assert abs(expect - 3.841459) < 1e-6


def test_chi2_quantile_df3_quadrature():
    # independent oracle: integrate the df=3 density and root-find the quantile
    def dens(t):
        return math.sqrt(t) * math.exp(-t / 2.0) / (math.sqrt(2.0 * math.pi) * 2.0 * 0.5)

    def cdf(x):
        return quad(dens, 0.0, x, limit=200)[0]

    oracle = brentq(lambda x: cdf(x) - 0.95, 0.1, 30.0, xtol=1e-12)
    assert abs(chi2_quantile(3, 0.95) - oracle) < 1e-9
    assert abs(oracle - 7.814728) < 1e-6


def test_chi2_quantile_invalid():
    for p in (0.0, 1.0, -0.2, 1.3, float("nan")):
        with pytest.raises(InvalidInput):
            chi2_quantile(2, p)
    with pytest.raises(InvalidInput):
        chi2_quantile(0, 0.5)


def test_chi2_quantile_monotone():
    for df in (1, 2, 5):
        values = [chi2_quantile(df, p) for p in np.linspace(0.01, 0.99, 25)]
        assert all(a < b for a, b in zip(values, values[1:]))


def test_chi2_cdf_pdf_at_zero():
    assert chi2_cdf_pdf(2, 0.0) == (0.0, 0.5)
    assert chi2_cdf_pdf(4, 0.0) == (0.0, 0.0)
    assert chi2_cdf_pdf(1, 0.0)[1] == math.inf


def test_chi2_cdf_pdf_df2_closed_form():
    # at the 0.95 quantile: F = 0.95 and f = exp(-x/2)/2 = 0.05/2
    x = -2.0 * math.log(0.05)
    cdf, pdf = chi2_cdf_pdf(2, x)
    assert abs(cdf - 0.95) < 1e-12
    assert abs(pdf - 0.025) < 1e-12


def test_chi2_cdf_pdf_invalid():
    with pytest.raises(InvalidInput):
        chi2_cdf_pdf(2, -0.5)


def test_chi2_recurrence_identity():
    # F_k(x) - F_{k+2}(x) = 2 f_{k+2}(x)
    for df in range(1, 7):
        for x in np.linspace(0.05, 30.0, 40):
            f_low, _ = chi2_cdf_pdf(df, x)
            f_high, dens_high = chi2_cdf_pdf(df + 2, x)
            assert abs(f_low - f_high - 2.0 * dens_high) < 1e-10


def test_chi2_quantile_cdf_roundtrip():
    for df in range(1, 7):
        for x in np.linspace(0.1, 30.0, 30):
            p, _ = chi2_cdf_pdf(df, x)
            if 1e-12 < p < 1.0 - 1e-14:
                assert abs(chi2_quantile(df, p) - x) < 1e-8 * x


def _normal_quantile_series(p):
    # Beasley-Springer-Moro rational approximation (central region)
    a = [2.50662823884, -18.61500062529, 41.39119773534, -25.44106049637]
    b = [-8.47351093090, 23.08336743743, -21.06224101826, 3.13082909833]
    u = p - 0.5
    r = u * u
    return u * (((a[3] * r + a[2]) * r + a[1]) * r + a[0]) / (
        (((b[3] * r + b[2]) * r + b[1]) * r + b[0]) * r + 1.0
    )
