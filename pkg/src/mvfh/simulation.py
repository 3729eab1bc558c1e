"""Monte Carlo coverage-probability experiments on the five-group benchmark designs.

Reproduces the standard benchmark setup: k in {2, 3}, block-structured
covariates with U(-1, 1) draws fixed across replications, a rank-one-plus-
diagonal random-effect covariance indexed by a correlation rho, five groups of
areas sharing a sampling variance from pattern (a) or (b), and normal or
standardized chi-squared (df 2) error laws.  Replications use counter-based
RNG streams keyed by (seed, stream, rep) so results are bit-identical no
matter how the work is scheduled.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGroupSize, InvalidInput, UnsupportedK
from .estimators import _adjust, _psi_pr_bias_core, _psi_pr_raw_from_beta
from .model import Dataset
from .numkernel import chi2_quantile, spd_inverse, spd_sqrt
from .prediction import _g1_core, _g2_core, _g3_core, _shrink
from .regions import (
    _BOUNDARY_RTOL,
    _b_terms_core,
    _diff_b_terms_core,
    _g2ab_core,
    bartlett_h,
)

__all__ = [
    "SimDesign",
    "CoverageResult",
    "N_GROUPS",
    "D_PATTERNS",
    "make_design",
    "make_psi",
    "d_pattern",
    "paper_design",
    "draw_sample",
    "coverage_experiment",
    "write_coverage_csv",
    "coverage_to_json",
]

N_GROUPS = 5
D_PATTERNS = {
    "a": (0.7, 0.6, 0.5, 0.4, 0.3),
    "b": (2.0, 0.6, 0.5, 0.4, 0.2),
}
PSI_FACTORS = {
    2: np.sqrt([1.6, 0.8]),
    3: np.sqrt([1.6, 1.2, 0.8]),
}

# RNG stream ids; replication r draws from SeedSequence((seed, _STREAM_REP, r)).
_STREAM_DESIGN = 0
_STREAM_REP = 1

# Replications per engine chunk; fixed so results do not depend on thread count.
_CHUNK = 256


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    if seed < 0:
        raise InvalidInput(f"seed must be a non-negative integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, stream, index))))


def make_design(k: int, m: int, seed: int) -> np.ndarray:
    """Block design matrices (m, k, 2k): row j of X_i is (.., 1, x_ij, ..) in block j.

    The x_ij are U(-1, 1) draws taken once from the seed and fixed thereafter.
    """
    if k not in (2, 3):
        raise UnsupportedK(f"built-in design covers k in {{2, 3}}, got k={k}")
    rng = _rng(seed, _STREAM_DESIGN, 0)
    x_vals = rng.uniform(-1.0, 1.0, size=(m, k))
    design = np.zeros((m, k, 2 * k))
    for j in range(k):
        design[:, j, 2 * j] = 1.0
        design[:, j, 2 * j + 1] = x_vals[:, j]
    return design


def make_psi(k: int, rho: float) -> np.ndarray:
    """Random-effect covariance rho * f f' + (1 - rho) * diag(f f') for the benchmark f."""
    if k not in PSI_FACTORS:
        raise UnsupportedK(f"built-in covariance covers k in {{2, 3}}, got k={k}")
    if not -1.0 < rho < 1.0:
        raise InvalidInput(f"rho must lie in (-1, 1), got {rho}")
    f = PSI_FACTORS[k]
    outer = np.outer(f, f)
    return rho * outer + (1.0 - rho) * np.diag(np.diag(outer))


def d_pattern(pattern: str, k: int, m: int) -> np.ndarray:
    """Sampling covariances (m, k, k): five consecutive groups of m/5 areas, constant within."""
    if pattern not in D_PATTERNS:
        raise InvalidInput(f"pattern must be 'a' or 'b', got {pattern!r}")
    if m % N_GROUPS != 0 or m < N_GROUPS:
        raise InvalidGroupSize(f"m={m} is not divisible into {N_GROUPS} equal groups")
    per_group = m // N_GROUPS
    scales = np.repeat(D_PATTERNS[pattern], per_group)
    return scales[:, None, None] * np.eye(k)[None, :, :]


@dataclass(frozen=True)
class SimDesign:
    """Fixed ingredients of one coverage experiment."""

    k: int
    m: int
    X: np.ndarray  # (m, k, s)
    psi_true: np.ndarray  # (k, k)
    D: np.ndarray  # (m, k, k)
    dist: str  # "normal" or "chi2"
    alpha: float
    reps: int
    seed: int
    difference: bool = False
    pattern: str | None = None
    rho: float | None = None

    def __post_init__(self):
        if self.dist not in ("normal", "chi2"):
            raise InvalidInput(f"dist must be 'normal' or 'chi2', got {self.dist!r}")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.m % N_GROUPS != 0:
            raise InvalidGroupSize(f"m={self.m} is not divisible into {N_GROUPS} groups")

    @property
    def group_size(self) -> int:
        return self.m // N_GROUPS

    def group_areas(self) -> list[int]:
        """Representative area (the first) of each group."""
        return [g * self.group_size for g in range(N_GROUPS)]

    def group_pairs(self) -> list[tuple[int, int]]:
        """First two areas of each group, for difference-of-means experiments."""
        return [(g * self.group_size, g * self.group_size + 1) for g in range(N_GROUPS)]


def paper_design(
    k: int,
    m: int,
    rho: float,
    pattern: str,
    dist: str = "normal",
    alpha: float = 0.05,
    reps: int = 10_000,
    seed: int = 0,
    difference: bool = False,
) -> SimDesign:
    """Assemble the benchmark design for given dimension, correlation, and D-pattern."""
    return SimDesign(
        k=k,
        m=m,
        X=make_design(k, m, seed),
        psi_true=make_psi(k, rho),
        D=d_pattern(pattern, k, m),
        dist=dist,
        alpha=alpha,
        reps=reps,
        seed=seed,
        difference=difference,
        pattern=pattern,
        rho=rho,
    )


def _draw_std(rng: np.random.Generator, dist: str, shape) -> np.ndarray:
    """Zero-mean unit-variance draws: standard normal, or (chi2_2 - 2)/2."""
    if dist == "normal":
        return rng.standard_normal(shape)
    return 0.5 * (rng.chisquare(2.0, shape) - 2.0)


def _draw_arrays(design: SimDesign, psi_sqrt, d_sqrt, rep_index: int):
    rng = _rng(design.seed, _STREAM_REP, rep_index)
    z = _draw_std(rng, design.dist, (2, design.m, design.k))
    v = z[0] @ psi_sqrt
    eps = np.einsum("mij,mj->mi", d_sqrt, z[1])
    theta = v  # beta = 0: coverage is invariant to translations by X t
    return theta + eps, theta


def draw_sample(design: SimDesign, rep_index: int) -> tuple[Dataset, np.ndarray]:
    """One replication's dataset and the true area means, deterministic in (seed, rep_index)."""
    psi_sqrt = spd_sqrt(design.psi_true)
    d_sqrt = np.stack([spd_sqrt(design.D[i]) for i in range(design.m)])
    y, theta = _draw_arrays(design, psi_sqrt, d_sqrt, rep_index)
    return Dataset(y, design.X, design.D), theta


@dataclass(frozen=True)
class CoverageResult:
    """Per-group coverage of the corrected and naive regions plus run metadata."""

    corrected_cp: np.ndarray  # (N_GROUPS,)
    naive_cp: np.ndarray  # (N_GROUPS,)
    mean_h_star: np.ndarray  # (N_GROUPS,)
    degenerate: np.ndarray  # (N_GROUPS,) int, corrections with 1 + h* <= 0
    group_areas: tuple  # area index (or pair) representing each group
    reps: int
    seed: int
    elapsed: float
    k: int
    m: int
    alpha: float
    dist: str
    difference: bool
    pattern: str | None = None
    rho: float | None = None


class _DesignCache:
    """Per-design precomputation shared by every replication."""

    def __init__(self, design: SimDesign, use_true_psi: bool):
        m, k, s = design.m, design.k, design.X.shape[2]
        X = design.X
        self.design = design
        self.m, self.k, self.s = m, k, s
        self.psi_sqrt = spd_sqrt(design.psi_true)
        self.d_sqrt = np.stack([spd_sqrt(design.D[i]) for i in range(m)])
        self.d_bar = design.D.mean(axis=0)
        gram0_inv = np.linalg.inv(np.einsum("aki,akj->ij", X, X))
        self.xg = X @ gram0_inv  # (m, k, s): rows X_i (X'X)^-1
        self.a_fixed = np.einsum("aki,akl,alj->ij", X, design.D, X)
        self.sum_a = np.einsum("mki,mli->kl", X, self.xg)  # sum X_i G X_i'
        self.sum_da = np.einsum("mkl,mli,mji->kj", design.D, X, self.xg)
        self.quantile = chi2_quantile(k, 1.0 - design.alpha)
        self.targets = design.group_pairs() if design.difference else design.group_areas()
        self.use_true_psi = use_true_psi
        if use_true_psi:
            psi = design.psi_true
            self.sinv_true = np.linalg.inv(psi[None, :, :] + design.D)
            gram = np.einsum("aki,akl,alj->ij", X, self.sinv_true, X)
            self.gram_inv_true = spd_inverse(gram)
            # Shape matrices are constant when psi is known and h* is pinned at 0.
            self.true_d_sinv = {}
            self.true_shape_inv = {}
            for tgt in self.targets:
                if design.difference:
                    a, b = tgt
                    dsa = design.D[a] @ self.sinv_true[a]
                    dsb = design.D[b] @ self.sinv_true[b]
                    h_a = _g1_core(psi, design.D[a], self.sinv_true[a]) + _g2_core(
                        X[a], dsa, self.gram_inv_true
                    )
                    h_b = _g1_core(psi, design.D[b], self.sinv_true[b]) + _g2_core(
                        X[b], dsb, self.gram_inv_true
                    )
                    g2ab = _g2ab_core(X[a], dsa, X[b], dsb, self.gram_inv_true)
                    self.true_d_sinv[tgt] = (dsa, dsb)
                    self.true_shape_inv[tgt] = spd_inverse(h_a + h_b - g2ab)
                else:
                    dsa = design.D[tgt] @ self.sinv_true[tgt]
                    h_mat = _g1_core(psi, design.D[tgt], self.sinv_true[tgt]) + _g2_core(
                        X[tgt], dsa, self.gram_inv_true
                    )
                    self.true_d_sinv[tgt] = dsa
                    self.true_shape_inv[tgt] = spd_inverse(h_mat)

    def estimate_psi(self, y: np.ndarray) -> np.ndarray:
        """Adjusted PD covariance estimate from one replication's responses."""
        X, D = self.design.X, self.design.D
        beta0 = np.einsum("mks,mk->s", self.xg, y)
        raw = _psi_pr_raw_from_beta(y, X, D, beta0)
        mid = self.a_fixed + np.einsum("aki,kl,alj->ij", X, raw, X)
        term1 = np.einsum("mks,st,mlt->kl", self.xg, mid, self.xg) / self.m
        cross = (raw @ self.sum_a + self.sum_da) / self.m
        bias = term1 - cross - cross.T
        bc = raw - 0.5 * (bias + bias.T)
        bc = 0.5 * (bc + bc.T)
        return _adjust(bc, raw, self.m).adjusted


def _rep_single(cache: _DesignCache, y, theta, psi, sinv, gram_inv, beta):
    """Coverage indicators for the single-area regions of each group."""
    design = cache.design
    k, x_q = cache.k, cache.quantile
    s_all = psi[None, :, :] + design.D
    n = len(cache.targets)
    corr = np.zeros(n, dtype=bool)
    naive = np.zeros(n, dtype=bool)
    h_vals = np.zeros(n)
    degen = np.zeros(n, dtype=bool)
    for g, a in enumerate(cache.targets):
        d_a = design.D[a]
        d_sinv_a = d_a @ sinv[a]
        center = _shrink(y[a], design.X[a], beta, d_sinv_a)
        h_mat = _g1_core(psi, d_a, sinv[a]) + _g2_core(design.X[a], d_sinv_a, gram_inv)
        hinv = spd_inverse(h_mat)
        diff = theta[a] - center
        dist_sq = float(diff @ hinv @ diff)
        naive[g] = dist_sq <= x_q * (1.0 + _BOUNDARY_RTOL)
        g3 = _g3_core(s_all, sinv[a], d_a)
        h_star = bartlett_h(_b_terms_core(s_all, d_sinv_a, hinv, g3), k, x_q)
        h_vals[g] = h_star
        if 1.0 + h_star <= 0.0:
            degen[g] = True
        else:
            corr[g] = dist_sq <= (1.0 + h_star) * x_q * (1.0 + _BOUNDARY_RTOL)
    return corr, naive, h_vals, degen


def _rep_difference(cache: _DesignCache, y, theta, psi, sinv, gram_inv, beta):
    """Coverage indicators for the difference regions of each group's first two areas."""
    design = cache.design
    k, x_q = cache.k, cache.quantile
    s_all = psi[None, :, :] + design.D
    n = len(cache.targets)
    corr = np.zeros(n, dtype=bool)
    naive = np.zeros(n, dtype=bool)
    h_vals = np.zeros(n)
    degen = np.zeros(n, dtype=bool)
    for g, (a, b) in enumerate(cache.targets):
        d_sinv_a = design.D[a] @ sinv[a]
        d_sinv_b = design.D[b] @ sinv[b]
        h_a = _g1_core(psi, design.D[a], sinv[a]) + _g2_core(design.X[a], d_sinv_a, gram_inv)
        h_b = _g1_core(psi, design.D[b], sinv[b]) + _g2_core(design.X[b], d_sinv_b, gram_inv)
        g2ab = _g2ab_core(design.X[a], d_sinv_a, design.X[b], d_sinv_b, gram_inv)
        gab = h_a + h_b - g2ab
        gab = 0.5 * (gab + gab.T)
        gab_inv = spd_inverse(gab)
        center = _shrink(y[a], design.X[a], beta, d_sinv_a) - _shrink(
            y[b], design.X[b], beta, d_sinv_b
        )
        diff = (theta[a] - theta[b]) - center
        dist_sq = float(diff @ gab_inv @ diff)
        naive[g] = dist_sq <= x_q * (1.0 + _BOUNDARY_RTOL)
        g3_a = _g3_core(s_all, sinv[a], design.D[a])
        g3_b = _g3_core(s_all, sinv[b], design.D[b])
        bt = _diff_b_terms_core(s_all, d_sinv_a, d_sinv_b, gab_inv, g3_a, g3_b, g2ab)
        h_star = bartlett_h(bt, k, x_q)
        h_vals[g] = h_star
        if 1.0 + h_star <= 0.0:
            degen[g] = True
        else:
            corr[g] = dist_sq <= (1.0 + h_star) * x_q * (1.0 + _BOUNDARY_RTOL)
    return corr, naive, h_vals, degen


def _rep_true_psi(cache: _DesignCache, y, theta):
    """Exact-pivot mode: known covariance, zero correction, precomputed shape matrices."""
    design = cache.design
    x_q = cache.quantile * (1.0 + _BOUNDARY_RTOL)
    rhs = np.einsum("mki,mkl,ml->i", design.X, cache.sinv_true, y)
    beta = cache.gram_inv_true @ rhs
    n = len(cache.targets)
    covered = np.zeros(n, dtype=bool)
    for g, tgt in enumerate(cache.targets):
        shape_inv = cache.true_shape_inv[tgt]
        if design.difference:
            a, b = tgt
            dsa, dsb = cache.true_d_sinv[tgt]
            center = _shrink(y[a], design.X[a], beta, dsa) - _shrink(
                y[b], design.X[b], beta, dsb
            )
            diff = (theta[a] - theta[b]) - center
        else:
            center = _shrink(y[tgt], design.X[tgt], beta, cache.true_d_sinv[tgt])
            diff = theta[tgt] - center
        covered[g] = float(diff @ shape_inv @ diff) <= x_q
    return covered, covered.copy(), np.zeros(n), np.zeros(n, dtype=bool)


def _run_chunk(design: SimDesign, lo: int, hi: int, use_true_psi: bool):
    cache = _DesignCache(design, use_true_psi)
    n = hi - lo
    g = len(cache.targets)
    corr = np.zeros((n, g), dtype=bool)
    naive = np.zeros((n, g), dtype=bool)
    h_vals = np.zeros((n, g))
    degen = np.zeros((n, g), dtype=bool)
    X = design.X
    for idx, r in enumerate(range(lo, hi)):
        y, theta = _draw_arrays(design, cache.psi_sqrt, cache.d_sqrt, r)
        if use_true_psi:
            out = _rep_true_psi(cache, y, theta)
        else:
            psi = cache.estimate_psi(y)
            s_all = psi[None, :, :] + design.D
            sinv = np.linalg.inv(s_all)
            sinv = 0.5 * (sinv + np.swapaxes(sinv, 1, 2))
            gram = np.einsum("mki,mkl,mlj->ij", X, sinv, X)
            gram_inv = spd_inverse(gram)
            rhs = np.einsum("mki,mkl,ml->i", X, sinv, y)
            beta = gram_inv @ rhs
            if design.difference:
                out = _rep_difference(cache, y, theta, psi, sinv, gram_inv, beta)
            else:
                out = _rep_single(cache, y, theta, psi, sinv, gram_inv, beta)
        corr[idx], naive[idx], h_vals[idx], degen[idx] = out
    return corr, naive, h_vals, degen


def _run_chunk_args(args):
    return _run_chunk(*args)


def coverage_experiment(
    design: SimDesign, threads: int = 1, use_true_psi: bool = False
) -> CoverageResult:
    """Run the full coverage experiment; bit-identical output for any thread count.

    With use_true_psi the regions are built at the known covariance with zero
    correction, so the studentized distance is an exact chi-squared pivot.
    Replications whose correction degenerates (1 + h* <= 0) are counted in
    `degenerate` and scored as non-covering for the corrected region.
    """
    if design.reps < 1:
        raise InvalidInput("reps must be >= 1")
    start = time.perf_counter()
    bounds = [(lo, min(lo + _CHUNK, design.reps)) for lo in range(0, design.reps, _CHUNK)]
    args = [(design, lo, hi, use_true_psi) for lo, hi in bounds]
    if threads > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            pieces = list(pool.map(_run_chunk_args, args))
    else:
        pieces = [_run_chunk(*a) for a in args]
    corr = np.concatenate([p[0] for p in pieces])
    naive = np.concatenate([p[1] for p in pieces])
    h_vals = np.concatenate([p[2] for p in pieces])
    degen = np.concatenate([p[3] for p in pieces])
    elapsed = time.perf_counter() - start
    cache_targets = design.group_pairs() if design.difference else design.group_areas()
    return CoverageResult(
        corrected_cp=corr.sum(axis=0) / design.reps,
        naive_cp=naive.sum(axis=0) / design.reps,
        mean_h_star=h_vals.sum(axis=0) / design.reps,
        degenerate=degen.sum(axis=0),
        group_areas=tuple(cache_targets),
        reps=design.reps,
        seed=design.seed,
        elapsed=elapsed,
        k=design.k,
        m=design.m,
        alpha=design.alpha,
        dist=design.dist,
        difference=design.difference,
        pattern=design.pattern,
        rho=design.rho,
    )


# ---------------------------------------------------------------------------
# Result serialization
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("group", "rho", "dist", "corrected_cp", "naive_cp", "mean_h_star", "reps", "seed")


def write_coverage_csv(results, path, meta: dict | None = None) -> None:
    """Write one CSV row per (group, rho); '#' metadata lines precede the header."""
    lines = []
    if meta:
        for key in sorted(meta):
            lines.append(f"# {key}={meta[key]}")
    for res in results:
        total_degen = int(res.degenerate.sum())
        lines.append(
            f"# run rho={_fmt(res.rho)} dist={res.dist} k={res.k} m={res.m} "
            f"pattern={res.pattern} alpha={_fmt(res.alpha)} difference={res.difference} "
            f"degenerate={total_degen}"
        )
    lines.append(",".join(CSV_COLUMNS))
    for res in results:
        for g in range(N_GROUPS):
            lines.append(
                ",".join(
                    (
                        f"G{g + 1}",
                        _fmt(res.rho),
                        res.dist,
                        _fmt(res.corrected_cp[g]),
                        _fmt(res.naive_cp[g]),
                        _fmt(res.mean_h_star[g]),
                        str(res.reps),
                        str(res.seed),
                    )
                )
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def coverage_to_json(results, meta: dict | None = None) -> dict:
    """JSON-ready document mirroring the CSV rows plus per-run diagnostics."""
    return {
        "meta": dict(meta or {}),
        "runs": [
            {
                "rho": res.rho,
                "dist": res.dist,
                "k": res.k,
                "m": res.m,
                "pattern": res.pattern,
                "alpha": res.alpha,
                "difference": res.difference,
                "reps": res.reps,
                "seed": res.seed,
                "elapsed": res.elapsed,
                "group_areas": [[int(v) for v in np.atleast_1d(t)] for t in res.group_areas],
                "groups": [
                    {
                        "group": f"G{g + 1}",
                        "corrected_cp": float(res.corrected_cp[g]),
                        "naive_cp": float(res.naive_cp[g]),
                        "mean_h_star": float(res.mean_h_star[g]),
                        "degenerate": int(res.degenerate[g]),
                    }
                    for g in range(N_GROUPS)
                ],
            }
            for res in results
        ],
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))
