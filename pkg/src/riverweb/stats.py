"""Estimators, goodness-of-fit statistics and the experiment drivers.

Each driver runs one independent cluster per replica through the compiled
kernel and reduces the per-replica rows.  Drivers accept a precomputed
``ClusterSample`` so several statistics can share one simulation.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats as sps
from scipy.optimize import brentq

from .errors import DomainError, InsufficientSamples, SearchCapExceeded
from .field import FieldConfig
from .forward import CENSORED, SEARCH_FAILED, cluster_batch, replica_seeds
from .oracle import TailTable, hack_limit_integral, ref_rayleigh_cdf
from .scaling import gamma0

MIN_REGRESSION_POINTS = 10


def stream_id(name: str) -> int:
    """Stable per-experiment stream number mixed into replica seeds."""
    return zlib.crc32(name.encode())


# ---------------------------------------------------------------- result types

def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


@dataclass(frozen=True)
class TailEstimate:
    """Estimate of P(X > threshold).

    ``n_censored`` counts replicas whose status relative to the threshold is
    unknown because the simulation cap was hit first; they are neither
    exceedances nor non-exceedances and are excluded from ``p_hat``'s
    numerator but kept in its denominator (a conservative lower estimate).
    ``scale`` multiplies p_hat when comparing with a scaled limit such as
    sqrt(n) P(L > n).
    """

    threshold: float
    n_samples: int
    n_exceed: int
    n_censored: int
    p_hat: float
    stderr: float
    ci95: tuple[float, float]
    scale: float = 1.0
    target: float | None = None

    @property
    def n_below(self) -> int:
        return self.n_samples - self.n_exceed - self.n_censored

    @property
    def scaled(self) -> float:
        return self.scale * self.p_hat

    @property
    def scaled_stderr(self) -> float:
        return self.scale * self.stderr

    @property
    def scaled_ci(self) -> tuple[float, float]:
        return self.scale * self.ci95[0], self.scale * self.ci95[1]


def tail_estimate(exceed: np.ndarray, censored: np.ndarray | None = None, threshold: float = 0.0,
                  scale: float = 1.0, target: float | None = None) -> TailEstimate:
    exceed = np.asarray(exceed, bool)
    n = len(exceed)
    if censored is None:
        censored = np.zeros(n, bool)
    censored = np.asarray(censored, bool) & ~exceed
    k = int(exceed.sum())
    ph = k / n if n else 0.0
    se = math.sqrt(ph * (1 - ph) / n) if n else 0.0
    return TailEstimate(threshold, n, k, int(censored.sum()), ph, se, wilson_interval(k, n),
                        scale, target)


@dataclass(frozen=True)
class RegressionFit:
    """Power-law exponent from a log-log least-squares fit.

    ``slope`` is the exponent in the orientation the caller asked for;
    ``regressed_slope`` is the raw least-squares slope of log y on log x.
    """

    slope: float
    intercept: float
    slope_stderr: float
    r2: float
    n_points: int
    min_L: int
    regressed_slope: float


def loglog_fit(x, y, min_L: int = 0, invert: bool = False) -> RegressionFit:
    """Least squares of log y on log x.

    With ``invert`` the exponent of x as a function of y is reported,
    1 / slope, with the delta-method standard error.  Regressing in the
    direction of the conditional mean and inverting avoids the attenuation
    a noisy regressor would cause.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) != len(y):
        raise DomainError("x and y must have equal length")
    if len(x) < MIN_REGRESSION_POINTS:
        raise InsufficientSamples(f"need at least {MIN_REGRESSION_POINTS} points, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("log-log fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    res = sps.linregress(lx, ly)
    b, a, se = float(res.slope), float(res.intercept), float(res.stderr)
    r2 = float(res.rvalue ** 2)
    if invert:
        return RegressionFit(1 / b, -a / b, se / (b * b), r2, len(x), min_L, b)
    return RegressionFit(b, a, se, r2, len(x), min_L, b)


@dataclass(frozen=True)
class GofResult:
    statistic: float
    statistic_kind: str
    n: int
    p_value_or_bound: float
    dof: int | None = None


def ks_distance(samples, cdf: Callable) -> GofResult:
    samples = np.asarray(samples, float)
    if len(samples) == 0:
        raise InsufficientSamples("no samples")
    res = sps.kstest(samples, cdf)
    return GofResult(float(res.statistic), "KS", len(samples), float(res.pvalue))


def chi_square(counts, probs, min_expected: float = 5.0) -> GofResult:
    """Pearson chi-square; cells with expected count below ``min_expected`` are
    pooled with the unlisted remainder into a single cell."""
    counts = np.asarray(counts, float)
    probs = np.asarray(probs, float)
    n = counts.sum()
    if n == 0:
        raise InsufficientSamples("no counts")
    exp = probs * n
    keep = exp >= min_expected
    obs_k, exp_k = counts[keep], exp[keep]
    rest_o, rest_e = n - obs_k.sum(), n - exp_k.sum()
    if rest_e > 1e-9 * n:
        obs_k = np.append(obs_k, rest_o)
        exp_k = np.append(exp_k, rest_e)
    stat = float(np.sum((obs_k - exp_k) ** 2 / exp_k))
    dof = len(obs_k) - 1
    return GofResult(stat, "chi_square", int(n), float(sps.chi2.sf(stat, dof)), dof)


# ---------------------------------------------------------------- cluster samples

@dataclass(frozen=True)
class ClusterSample:
    """Per-replica cluster statistics at the origin of independent fields."""

    p: float
    seed: int
    stream: int
    cap_L: int
    probe: int
    L: np.ndarray
    censored: np.ndarray
    total: np.ndarray
    dmax: np.ndarray
    width_probe: np.ndarray
    count_probe: np.ndarray
    sup_dev: np.ndarray

    @property
    def replicas(self) -> int:
        return len(self.L)

    def seeds(self) -> np.ndarray:
        return replica_seeds(self.seed, self.stream, self.replicas)

    def head(self, k: int) -> ClusterSample:
        cut = {f: getattr(self, f)[:k] for f in
               ("L", "censored", "total", "dmax", "width_probe", "count_probe", "sup_dev")}
        return ClusterSample(self.p, self.seed, self.stream, self.cap_L, self.probe, **cut)


def sample_clusters(cfg: FieldConfig, replicas: int, cap_L: int, probe: int = 0,
                    stream: int | str = 0) -> ClusterSample:
    """Grow one cluster at (0, 0) per replica, stopping at generation ``cap_L``.

    A replica whose generation ``cap_L`` is non-empty is censored and
    reports ``L = cap_L + 1``, a lower bound.  ``probe`` selects the
    generation whose width and count are recorded; ``sup_dev`` is
    ``max_{k <= probe} |p D_k - #C_k|``.
    """
    if replicas < 1:
        raise DomainError("replicas must be positive")
    if cap_L < 0:
        raise DomainError("cap_L must be nonnegative")
    if isinstance(stream, str):
        stream = stream_id(stream)
    res = cluster_batch(np.uint64(cfg.seed), np.uint64(stream), cfg.p, cfg.search_cap,
                        replicas, cap_L, probe, cfg.p)
    status = res[:, 1].astype(np.int64)
    if np.any(status == SEARCH_FAILED):
        raise SearchCapExceeded(f"{int((status == SEARCH_FAILED).sum())} replicas hit the search cap")
    return ClusterSample(cfg.p, int(cfg.seed), int(stream), cap_L, probe,
                         res[:, 0].astype(np.int64), status == CENSORED,
                         res[:, 2].astype(np.int64), res[:, 3].astype(np.int64),
                         res[:, 4].astype(np.int64), res[:, 5].astype(np.int64), res[:, 6].copy())


def default_cap(n: int) -> int:
    return 64 * n


def _sample(cfg, sample, replicas, cap_L, probe, stream):
    if sample is not None:
        return sample
    return sample_clusters(cfg, replicas, cap_L, probe, stream)


# ---------------------------------------------------------------- drivers

def survival_target(p: float) -> float:
    return 1 / (gamma0(p) * math.sqrt(math.pi))


def estimate_survival(cfg: FieldConfig, n: int, replicas: int, cap_L: int | None = None,
                      sample: ClusterSample | None = None) -> TailEstimate:
    """P(L(0,0) > n), scaled by sqrt(n) for comparison with the limit."""
    if n < 1:
        raise DomainError("n must be positive")
    cap_L = default_cap(n) if cap_L is None else cap_L
    s = _sample(cfg, sample, replicas, cap_L, n, "survival")
    exceed = s.L > n
    # a censored replica with cap_L < n may still die before n
    undecided = s.censored & (s.L <= n)
    return tail_estimate(exceed, undecided, n, math.sqrt(n), survival_target(s.p))


def xi_estimate(xi: np.ndarray, n: int, p: float) -> tuple[float, float]:
    """sqrt(n) gamma0 P(L > n) recovered from landing counts, with its stderr."""
    w = math.sqrt(n) * gamma0(p)
    c = w / (math.floor(w) + 1)
    xi = np.asarray(xi, float)
    return c * float(xi.mean()), c * float(xi.std(ddof=1)) / math.sqrt(len(xi))


def survivors(s: ClusterSample, n: int) -> np.ndarray:
    if s.probe != n:
        raise DomainError(f"sample probes generation {s.probe}, need {n}")
    return s.L > n


def conditional_width_law(cfg: FieldConfig, n: int, replicas: int,
                          sample: ClusterSample | None = None) -> GofResult:
    """KS distance of D_n(1)/sqrt(2) among survivors against the Rayleigh law."""
    s = _sample(cfg, sample, replicas, n, n, "width-law")
    alive = survivors(s, n)
    x = s.width_probe[alive] / (gamma0(s.p) * math.sqrt(n) * math.sqrt(2))
    return ks_distance(x, ref_rayleigh_cdf)


@dataclass(frozen=True)
class CouplingSummary:
    n: int
    survivors: int
    median: float
    q90: float
    values: np.ndarray = field(repr=False)


def width_cluster_coupling(cfg: FieldConfig, n: int, replicas: int,
                           sample: ClusterSample | None = None) -> CouplingSummary:
    """sup_{s<=1} |p D_n(s) - K_n(s)| among survivors.

    Both processes are linear between the same breakpoints, so the supremum
    is attained at one of them.
    """
    s = _sample(cfg, sample, replicas, n, n, "coupling")
    alive = survivors(s, n)
    v = s.sup_dev[alive] / (gamma0(s.p) * math.sqrt(n))
    if len(v) == 0:
        return CouplingSummary(n, 0, 0.0, 0.0, v)
    return CouplingSummary(n, len(v), float(np.median(v)), float(np.quantile(v, 0.9)), v)


def generation_count_target(p: float, u: float) -> float:
    return survival_target(p) * math.exp(-u * u / (4 * p * p))


def generation_count_tail(cfg: FieldConfig, n: int, u: float, replicas: int,
                          sample: ClusterSample | None = None) -> TailEstimate:
    """P(#C_n > sqrt(n) gamma0 u), scaled by sqrt(n)."""
    s = _sample(cfg, sample, replicas, n, n, "gen-count-tail")
    if s.probe != n:
        raise DomainError(f"sample probes generation {s.probe}, need {n}")
    thr = math.sqrt(n) * gamma0(s.p) * u
    return tail_estimate(s.count_probe > thr, None, thr, math.sqrt(n),
                         generation_count_target(s.p, u))


def _finished(s: ClusterSample, min_L: int) -> np.ndarray:
    return (~s.censored) & (s.L >= min_L)


def hack_exponent(cfg: FieldConfig, replicas: int, min_L: int = 32, cap_L: int | None = None,
                  sample: ClusterSample | None = None) -> RegressionFit:
    """Exponent h in L ~ (#C)^h among finished clusters with L >= min_L.

    log #C is regressed on log L and the slope inverted; the selection acts
    on the regressor only, so censoring at the cap does not bias the fit.
    """
    cap_L = default_cap(256) if cap_L is None else cap_L
    s = _sample(cfg, sample, replicas, cap_L, 0, "hack")
    keep = _finished(s, min_L)
    return loglog_fit(s.L[keep], s.total[keep], min_L, invert=True)


def dmax_exponent(cfg: FieldConfig, replicas: int, min_L: int = 32, cap_L: int | None = None,
                  sample: ClusterSample | None = None) -> RegressionFit:
    """Exponent of D_max ~ L^e among finished clusters with L >= min_L.

    ``1 / slope`` is the exponent of L as a function of D_max.
    """
    cap_L = default_cap(256) if cap_L is None else cap_L
    s = _sample(cfg, sample, replicas, cap_L, 0, "dmax")
    keep = _finished(s, min_L) & (s.dmax > 0)
    return loglog_fit(s.L[keep], s.dmax[keep], min_L)


def area_tail_u(p: float, lam: float) -> float:
    """u with sqrt(2 n^3) gamma0 p u = (lam n)^{3/2}."""
    return lam ** 1.5 / (math.sqrt(2) * gamma0(p) * p)


def total_area_target(p: float, lam: float, table: TailTable) -> float:
    return hack_limit_integral(area_tail_u(p, lam), "area", p, table)


def total_area_tail(cfg: FieldConfig, n: int, lam: float, replicas: int,
                    table: TailTable | None = None, cap_L: int | None = None,
                    sample: ClusterSample | None = None) -> TailEstimate:
    """P(#C > (lam n)^{3/2}), scaled by sqrt(n)."""
    if lam <= 0:
        raise DomainError("lam must be positive")
    cap_L = default_cap(n) if cap_L is None else cap_L
    s = _sample(cfg, sample, replicas, cap_L, n, "area-tail")
    thr = (lam * n) ** 1.5
    exceed = s.total > thr
    target = total_area_target(s.p, lam, table) if table is not None else None
    return tail_estimate(exceed, s.censored, thr, math.sqrt(n), target)


def area_tail_lambda(p: float, target: float, table: TailTable) -> float:
    """The lam whose limiting value of sqrt(n) P(#C > (lam n)^{3/2}) is ``target``."""
    return float(brentq(lambda lam: total_area_target(p, lam, table) - target, 1e-3, 1e4,
                        xtol=1e-6))
