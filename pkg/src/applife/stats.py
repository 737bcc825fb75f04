"""Small statistical helpers: two-sample KS, bootstrap bands, error bars, entropy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# z for a two-sided 99.999% interval, as used for the retention error bars
BINOMIAL_Z = 4.4172

BAND_LEVELS = (0.68, 0.95, 0.997)


@dataclass(frozen=True)
class KsResult:
    D: float
    p_value: float


@dataclass(frozen=True)
class BootstrapBands:
    estimate: float
    bands: dict  # level -> (lo, hi)
    n_boot: int


def kolmogorov_q(lam: float, terms: int = 100) -> float:
    """Survival function of the Kolmogorov distribution, 2 sum (-1)^(j-1) exp(-2 j^2 lam^2)."""
    if lam < 1e-3:
        return 1.0
    j = np.arange(1, terms + 1)
    q = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j**2 * lam**2))
    return float(min(1.0, max(0.0, q)))


def ks_test(sample_a, sample_b) -> KsResult:
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("ks_test needs two non-empty samples")
    pts = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pts, side="right") / na
    cdf_b = np.searchsorted(b, pts, side="right") / nb
    D = float(np.max(np.abs(cdf_a - cdf_b)))
    ne = na * nb / (na + nb)
    sq = np.sqrt(ne)
    p = kolmogorov_q((sq + 0.12 + 0.11 / sq) * D)
    return KsResult(D, p)


def bootstrap_mean_ci(sample, n_boot: int = 1000, seed=0, levels=BAND_LEVELS) -> BootstrapBands:
    """Percentile bootstrap of the mean; the point estimate is the median bootstrap mean."""
    x = np.asarray(sample, dtype=float)
    if not len(x):
        raise ValueError("empty sample")
    if n_boot < 100:
        raise ValueError("n_boot must be >= 100")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(x), size=(n_boot, len(x)))
    means = x[idx].mean(axis=1)
    bands = {}
    for lv in sorted(levels):
        lo, hi = np.quantile(means, [(1 - lv) / 2, (1 + lv) / 2])
        bands[lv] = (float(lo), float(hi))
    return BootstrapBands(float(np.median(means)), bands, n_boot)


def binomial_band(p_hat: float, n: int) -> float:
    """Half-width of the 99.999% normal-approximation interval."""
    if not 0 <= p_hat <= 1:
        raise ValueError("p_hat outside [0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    return BINOMIAL_Z * np.sqrt(p_hat * (1 - p_hat) / n)


def entropy_bits(distribution) -> float:
    p = np.asarray(distribution, dtype=float)
    if np.any(p < 0):
        raise ValueError("negative probability")
    if abs(p.sum() - 1) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()}, not 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz))) + 0.0
