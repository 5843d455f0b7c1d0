"""Random-walk constructions of Brownian meander, excursion and W^{+,tau}.

These are the reference objects the lattice statistics are compared with.
Every sampler has an exact but slow rejection twin used only in tests.

Lattice statistics are dequantized before they meet a continuous law: the
excursion maximum lives on the integers and the meander endpoint on a lattice
of spacing 2, so a uniform jitter of one lattice spacing is added before
scaling.  Without it the discreteness alone shifts the excursion maximum CDF
at 1 by about 0.008 at m = 2000.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange
from scipy import integrate
from scipy.stats import gaussian_kde

from .errors import DomainError, InsufficientSamples, TableMissing, WalkTooShort
from .field import mix64
from .forward import replica_seed
from .scaling import gamma0

SQRT_PI_OVER_2 = math.sqrt(math.pi / 2)
SQRT_PI_OVER_8 = math.sqrt(math.pi / 8)
SQRT_2_OVER_PI = math.sqrt(2 / math.pi)

_INV53 = 1.0 / 9007199254740992.0
_S11 = np.uint64(11)
_ONE = np.uint64(1)


# ---------------------------------------------------------------- paths

@dataclass(frozen=True)
class PLFunction:
    """Piecewise-linear function through (t[i], y[i]); held constant past t[-1]."""

    t: np.ndarray
    y: np.ndarray

    def __call__(self, s):
        return np.interp(s, self.t, self.y)

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def area(self) -> float:
        return float(np.trapezoid(self.y, self.t))


@dataclass(frozen=True)
class WalkPath:
    steps: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.steps, dtype=np.int64)))

    def __len__(self) -> int:
        return len(self.steps)

    def scaled(self, n: int | None = None) -> PLFunction:
        """Y_n(t) = S_{nt} / sqrt(n), linearly interpolated; n defaults to the length."""
        n = len(self) if n is None else n
        k = np.arange(len(self) + 1)
        return PLFunction(k / n, self.positions / math.sqrt(n))


@dataclass(frozen=True)
class FunctionalSample:
    kind: str
    value: float


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


# ---------------------------------------------------------------- meander

@njit(cache=True)
def survival_table(m):
    """h[r, x] = P(a walk at height x >= 1 stays >= 1 for r more steps)."""
    h = np.zeros((m + 1, m + 3))
    h[0, 1:] = 1.0
    for r in range(1, m + 1):
        for x in range(1, m + 2):
            h[r, x] = 0.5 * (h[r - 1, x + 1] + h[r - 1, x - 1])
    return h


def sample_meander(m: int, rng=None, method: str = "transform") -> WalkPath:
    """SRW of length m conditioned on S_k > 0 for 1 <= k <= m.

    ``transform`` draws each step from its exact conditional law given the
    survival table; ``rejection`` is the slow reference.
    """
    if m < 1:
        raise DomainError("m must be positive")
    rng = _rng(rng)
    if method == "rejection":
        while True:
            steps = rng.choice(np.array([-1, 1], np.int8), size=m)
            if np.cumsum(steps).min() > 0:
                return WalkPath(steps)
    if method != "transform":
        raise DomainError(f"unknown method {method!r}")
    h = survival_table(m)
    u = rng.random(m)
    return WalkPath(_meander_steps(h, m, u))


@njit(cache=True)
def _meander_steps(h, m, u):
    steps = np.empty(m, np.int8)
    x = 0
    for k in range(m):
        r = m - k - 1
        if x == 0:
            up = True
        else:
            up = u[k] * h[r + 1, x] < 0.5 * h[r, x + 1]
        steps[k] = 1 if up else -1
        x += 1 if up else -1
    return steps


@njit(cache=True)
def _uniform(key, ctr):
    return float(mix64(np.uint64(key + np.uint64(ctr) * np.uint64(0x9E3779B97F4A7C15))) >> _S11) * _INV53


@njit(cache=True, parallel=True)
def meander_batch(master, stream, m, samples):
    """(endpoint, area) of ``samples`` meanders of length m.

    The endpoint is dequantized, ``(S_m + U(-1, 1)) / sqrt(m)``; the area is
    that of the scaled interpolated path on [0, 1].
    """
    h = survival_table(m)
    end = np.empty(samples)
    area = np.empty(samples)
    sm = math.sqrt(m)
    for i in prange(samples):
        key = replica_seed(master, stream, i)
        x = 0
        tot = 0.0
        for k in range(m):
            r = m - k - 1
            if x == 0 or _uniform(key, k) * h[r + 1, x] < 0.5 * h[r, x + 1]:
                nx = x + 1
            else:
                nx = x - 1
            tot += 0.5 * (x + nx)
            x = nx
        end[i] = (x + 2.0 * _uniform(key, m) - 1.0) / sm
        area[i] = tot / (m * sm)
    return end, area


# ---------------------------------------------------------------- excursion

def _check_excursion_length(m: int) -> None:
    if m < 2 or m % 2:
        raise DomainError("excursion length must be even and >= 2")


def sample_excursion(m: int, rng=None, method: str = "cycle") -> WalkPath:
    """SRW of length m, strictly positive on (0, m), ending at 0.

    ``cycle``: a uniform arrangement of n = m/2 - 1 up-steps and n + 1
    down-steps, rotated to start just after its first minimum, is a Dyck path
    followed by one down-step; prefix an up-step.  ``rejection`` conditions a
    free walk on first returning to 0 at time m (usable for small m only).
    """
    _check_excursion_length(m)
    rng = _rng(rng)
    if method == "rejection":
        while True:
            steps = rng.choice(np.array([-1, 1], np.int8), size=m)
            s = np.cumsum(steps)
            if s[-1] == 0 and (s[:-1] * s[0] > 0).all() and s[0] > 0:
                return WalkPath(steps)
    if method != "cycle":
        raise DomainError(f"unknown method {method!r}")
    n = m // 2 - 1
    seq = rng.permutation(np.concatenate((np.ones(n, np.int8), -np.ones(n + 1, np.int8))))
    ps = np.cumsum(seq)
    j = int(np.argmin(ps)) + 1
    return WalkPath(np.concatenate(([1], seq[j:], seq[:j])).astype(np.int8))


@njit(cache=True, parallel=True)
def excursion_batch(master, stream, m, samples):
    """(area, max) of ``samples`` excursions of length m.

    The maximum is dequantized, ``(max + U(0, 1)) / sqrt(m)``.
    """
    n = m // 2 - 1
    area = np.empty(samples)
    top = np.empty(samples)
    sm = math.sqrt(m)
    for i in prange(samples):
        key = replica_seed(master, stream, i)
        seq = np.empty(2 * n + 1, np.int8)
        ups = n
        for j in range(2 * n + 1):
            if _uniform(key, j) * (2 * n + 1 - j) < ups:
                seq[j] = 1
                ups -= 1
            else:
                seq[j] = -1
        s = 0
        best = 1
        jmin = 0
        for j in range(2 * n + 1):
            s += seq[j]
            if s < best:
                best = s
                jmin = j + 1
        # walk: +1, seq[jmin:], seq[:jmin]
        x = 1
        tot = 1
        mx = 1
        for j in range(2 * n + 1):
            x += seq[(jmin + j) % (2 * n + 1)]
            tot += x
            if x > mx:
                mx = x
        area[i] = tot / (m * sm)
        top[i] = (mx + _uniform(key, 2 * n + 1)) / sm
    return area, top


# ---------------------------------------------------------------- T^{tau+} and H

def t_tau_plus(f: PLFunction, tau: float) -> PLFunction:
    """Shift f to the first t with f(t + s) > f(t) for all 0 < s <= tau.

    For a piecewise-linear f that point is a breakpoint, so only breakpoints
    are tested.  f is returned unchanged when no admissible point exists
    within its domain.
    """
    if tau <= 0:
        raise DomainError("tau must be positive")
    t, y = f.t, f.y
    n = len(t)
    i = 0
    while i < n and t[i] + tau <= t[-1]:
        j = i + 1
        while j < n and t[j] < t[i] + tau and y[j] > y[i]:
            j += 1
        if j < n and t[j] < t[i] + tau:
            # every breakpoint before j sits above y[j] too, so j is the next candidate
            i = j
            continue
        if f(t[i] + tau) > y[i]:
            return PLFunction(t[i:] - t[i], y[i:] - y[i])
        i += 1
    return f


def kill_at_zero(f: PLFunction) -> PLFunction:
    """H(f): f up to its first zero at a strictly positive time, 0 afterwards."""
    t, y = f.t, f.y
    for i in range(len(t) - 1):
        y0, y1 = y[i], y[i + 1]
        if y1 == 0.0:
            tz = t[i + 1]
        elif (y0 > 0 > y1) or (y0 < 0 < y1):
            tz = t[i] + (t[i + 1] - t[i]) * y0 / (y0 - y1)
        else:
            continue
        later = t[t > tz]
        return PLFunction(np.concatenate((t[: i + 1], [tz], later)),
                          np.concatenate((y[: i + 1], [0.0], np.zeros(len(later)))))
    return f


def sample_w_plus_tau(tau: float, m: int, rng=None, length: int | None = None) -> PLFunction:
    """One path of H(T^{tau+}(Y_m)) from a free walk with m steps per unit time."""
    rng = _rng(rng)
    need = math.ceil(m * tau)
    length = 64 * need if length is None else length
    walk = WalkPath(rng.choice(np.array([-1, 1], np.int8), size=length))
    f = walk.scaled(m)
    g = t_tau_plus(f, tau)
    if g is f:
        raise WalkTooShort(f"no admissible shift point with {need} steps to spare in {length} steps")
    return kill_at_zero(g)


@njit(cache=True)
def _bits(key, word):
    return mix64(np.uint64(key + np.uint64(word) * np.uint64(0xD1B54A32D192ED03)))


@njit(cache=True, parallel=True)
def shifted_area_batch(master, stream, m, tau, lam, samples, max_steps):
    """Monte Carlo for H(T^{tau+}(Y_m)): returns (area_exceeds_lam, endpoint_at_tau, ok).

    The walk search restarts at every failure point, which is exactly the
    next candidate shift point.  The killed area stops accumulating once it
    exceeds ``lam``.
    """
    need = int(math.ceil(m * tau))
    exceed = np.zeros(samples, np.bool_)
    endpoint = np.zeros(samples)
    ok = np.ones(samples, np.bool_)
    scale = m * math.sqrt(m)
    target = lam * scale
    for i in prange(samples):
        key = replica_seed(master, stream, i)
        s = 0
        base = 0
        run = 0
        area = 0.0
        word = 0
        bits = _bits(key, 0)
        used = 0
        accepted = False
        done = False
        steps = 0
        while steps < max_steps:
            if used == 64:
                word += 1
                bits = _bits(key, word)
                used = 0
            d = 1 if (bits >> np.uint64(used)) & _ONE else -1
            used += 1
            steps += 1
            area += s + 0.5 * d - base
            s += d
            if not accepted:
                run += 1
                if s <= base:
                    base = s
                    run = 0
                    area = 0.0
                elif run == need:
                    accepted = True
                    endpoint[i] = (s - base + 2.0 * _uniform(key, 1 << 40) - 1.0) / math.sqrt(need)
                    if area > target:
                        exceed[i] = True
                        done = True
                        break
            else:
                if s == base:
                    done = True
                    break
                if area > target:
                    exceed[i] = True
                    done = True
                    break
        ok[i] = done
    return exceed, endpoint, ok


# ---------------------------------------------------------------- first return

@njit(cache=True, parallel=True)
def first_return_batch(master, stream, m, walks, lo, hi):
    """Counts of free walks with t0 > m and with lo <= t0 <= hi."""
    horizon = max(m, hi)
    gt = np.zeros(walks, np.bool_)
    win = np.zeros(walks, np.bool_)
    for i in prange(walks):
        key = replica_seed(master, stream, i)
        s = 0
        word = 0
        t0 = horizon + 1
        k = 0
        while k < horizon:
            bits = _bits(key, word)
            word += 1
            for b in range(64):
                s += 1 if (bits >> np.uint64(b)) & _ONE else -1
                k += 1
                if s == 0 or k == horizon:
                    break
            if s == 0:
                t0 = k
                break
        gt[i] = t0 > m
        win[i] = lo <= t0 <= hi
    return gt.sum(), win.sum()


@dataclass(frozen=True)
class FirstReturnEstimate:
    m: int
    walks: int
    tail: float          # sqrt(m) P(t0 > m)
    tail_stderr: float
    density: float       # m^{3/2} P(t0 = m), parity averaged over a window
    density_stderr: float


def first_return_constants(m: int, walks: int, seed: int = 0, window: float = 0.1,
                           stream: int = 0x4B41) -> FirstReturnEstimate:
    """Estimate sqrt(m) P(t0 > m) and m^{3/2} P(t0 = m).

    P(t0 = k) vanishes for odd k, so the point mass is read as a density:
    the fraction of walks returning in [(1 - window) m, (1 + window) m],
    divided by the window width, times m^{3/2}.
    """
    lo = int(math.ceil((1 - window) * m))
    hi = int(math.floor((1 + window) * m))
    n_gt, n_win = first_return_batch(np.uint64(seed), np.uint64(stream), m, walks, lo, hi)
    q = n_gt / walks
    r = n_win / walks
    width = hi - lo + 1
    c = m ** 1.5 / width
    return FirstReturnEstimate(m, walks, math.sqrt(m) * q,
                               math.sqrt(m) * math.sqrt(q * (1 - q) / walks),
                               c * r, c * math.sqrt(r * (1 - r) / walks))


# ---------------------------------------------------------------- reference laws

def ref_rayleigh_sf(x):
    return np.exp(-np.square(x) / 2)


def ref_rayleigh_cdf(x):
    return -np.expm1(-np.square(np.maximum(x, 0.0)) / 2)


def _max_series_terms(x: float, tol: float = 1e-12) -> int:
    k = 1
    while math.exp(-2 * (k * x) ** 2) * (1 + 4 * (k * x) ** 2) > tol * 1e-3:
        k += 1
    return k


def ref_excursion_max_cdf(x: float, terms: int | None = None) -> float:
    """P(M0+ <= x) from its theta series."""
    if x <= 0:
        raise DomainError("x must be positive")
    terms = _max_series_terms(x) if terms is None else terms
    k = np.arange(1, terms + 1)
    a = (2 * k * x) ** 2
    return float(1 + 2 * np.sum(np.exp(-a / 2) * (1 - a)))


def ref_excursion_max_sf(x: float) -> float:
    # the theta series converges slowly for small x where the tail is 1 to machine precision
    if x < 0.2:
        return 1.0
    return 1.0 - ref_excursion_max_cdf(x)


def ref_excursion_max_pdf(x: float, terms: int | None = None) -> float:
    """Term-wise derivative of the CDF series."""
    if x <= 0:
        raise DomainError("x must be positive")
    terms = _max_series_terms(x) if terms is None else terms
    k = np.arange(1, terms + 1)
    c = (2 * k) ** 2
    a = c * x * x
    return float(2 * np.sum(np.exp(-a / 2) * (-c * x) * (3 - a)))


def ref_excursion_area_tail_asym(x):
    return 6 * math.sqrt(6) / math.sqrt(math.pi) * x * np.exp(-6 * np.square(x))


def ref_xi_mean(t: float) -> float:
    if t <= 0:
        raise DomainError("t must be positive")
    return 1 / math.sqrt(math.pi * t)


# ---------------------------------------------------------------- tabulated laws

MIN_TABLE_SAMPLES = 100_000


@dataclass(frozen=True)
class TailTable:
    """Empirical tail of a nonnegative functional on a grid, plus a KDE density."""

    kind: str
    grid: np.ndarray
    tail: np.ndarray
    density: np.ndarray
    seed: int
    samples: int

    def sf(self, x):
        """Linear interpolation of the tail; 1 left of the grid, 0 right of it."""
        return np.interp(x, self.grid, self.tail, left=1.0, right=0.0)

    def pdf(self, x):
        return np.interp(x, self.grid, self.density, left=0.0, right=0.0)

    def mean(self) -> float:
        # E X = integral of the tail
        return float(np.trapezoid(self.tail, self.grid) + self.grid[0])

    def save(self, path) -> None:
        header = (f"kind={self.kind},grid={self.grid[0]!r}:{self.grid[-1]!r}:{len(self.grid)},"
                  f"seed={self.seed},samples={self.samples}\nx,tail,density")
        np.savetxt(path, np.column_stack((self.grid, self.tail, self.density)),
                   delimiter=",", header=header, fmt="%.17g")

    @classmethod
    def load(cls, path) -> TailTable:
        with open(path) as fh:
            meta = dict(kv.split("=", 1) for kv in fh.readline().lstrip("# ").strip().split(","))
        data = np.loadtxt(path, delimiter=",", comments="#")
        return cls(meta["kind"], data[:, 0], data[:, 1], data[:, 2],
                   int(meta["seed"]), int(meta["samples"]))


def tabulate_distribution(samples, grid, kind: str = "excursion_area", seed: int = 0) -> TailTable:
    samples = np.asarray(samples, dtype=float)
    if len(samples) < MIN_TABLE_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_TABLE_SAMPLES} samples, got {len(samples)}")
    grid = np.asarray(grid, dtype=float)
    srt = np.sort(samples)
    tail = 1.0 - np.searchsorted(srt, grid, side="right") / len(srt)
    kde = gaussian_kde(srt, bw_method="silverman")
    return TailTable(kind, grid, tail, kde(grid), seed, len(srt))


def tabulate_excursion_area_dist(samples, grid, seed: int = 0) -> TailTable:
    return tabulate_distribution(samples, grid, "excursion_area", seed)


DEFAULT_GRID = np.linspace(0.0, 3.0, 601)


def excursion_tables(m: int = 1000, samples: int = 1_000_000, seed: int = 0,
                     cache_dir=None, grid=DEFAULT_GRID) -> dict[str, TailTable]:
    """Area and maximum tables of the standard excursion, cached as CSV."""
    paths = {}
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        for kind in ("excursion_area", "excursion_max"):
            paths[kind] = cache_dir / f"{kind}_m{m}_n{samples}_s{seed}.csv"
        if all(p.exists() for p in paths.values()):
            return {k: TailTable.load(p) for k, p in paths.items()}
    area, top = excursion_batch(np.uint64(seed), np.uint64(0xE7C), m, samples)
    tables = {"excursion_area": tabulate_distribution(area, grid, "excursion_area", seed),
              "excursion_max": tabulate_distribution(top, grid, "excursion_max", seed)}
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        for k, t in tables.items():
            t.save(paths[k])
    return tables


# ---------------------------------------------------------------- limit integrals

def _quad(f, lo, hi) -> float:
    # the tabulated tails are piecewise linear, so quad reports roundoff at the kinks
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(f, lo, hi, epsrel=1e-5, limit=400)[0]


def _tail_function(kind: str, table: TailTable | None):
    if table is not None:
        return table.sf
    if kind == "max":
        return ref_excursion_max_sf
    raise TableMissing(f"no closed form for the {kind} tail; pass a tabulated law")


def hack_limit_integral(u: float, kind: str, p: float, table: TailTable | None = None) -> float:
    """(1 / (2 sqrt(pi) gamma0)) * int_0^inf t^{-3/2} Fbar(u t^{-a}) dt.

    ``a = 3/2`` for kind ``area`` (excursion area tail, tabulated) and
    ``a = 1/2`` for kind ``max`` (excursion maximum, series unless a table is
    given).
    """
    if u <= 0:
        raise DomainError("u must be positive")
    if kind not in ("area", "max"):
        raise DomainError(f"unknown kind {kind!r}")
    sf = _tail_function(kind, table)
    a = 1.5 if kind == "area" else 0.5

    def integrand(t):
        return t ** -1.5 * float(sf(u * t ** -a))

    # the tail switches from 0 to 1 near t = u^{1/a}
    knee = u ** (1 / a)
    pts = [0.0, knee / 4, knee, 4 * knee]
    pts.append(np.inf)
    val = sum(_quad(integrand, lo, hi) for lo, hi in zip(pts[:-1], pts[1:]))
    return val / (2 * math.sqrt(math.pi) * gamma0(p))


def shifted_area_rhs(tau: float, lam: float, table: TailTable) -> float:
    """sqrt(tau)/2 * int_tau^inf t^{-3/2} Fbar_I(lam t^{-3/2}) dt."""
    if table is None:
        raise TableMissing("the excursion area tail must be tabulated")

    def integrand(t):
        return t ** -1.5 * float(table.sf(lam * t ** -1.5))

    knee = max(tau, lam ** (2 / 3))
    val = _quad(integrand, tau, 4 * knee) + _quad(integrand, 4 * knee, np.inf)
    return math.sqrt(tau) / 2 * val


@dataclass(frozen=True)
class ShiftedAreaCheck:
    tau: float
    lam: float
    lhs: float
    lhs_stderr: float
    rhs: float
    samples: int
    endpoints: np.ndarray


def shifted_area_law_check(tau: float, lam: float, table: TailTable, m: int = 1000,
                           samples: int = 20_000, seed: int = 0,
                           stream: int = 0x5A7) -> ShiftedAreaCheck:
    """Both sides of the identity for P(int W^{+,tau} > lam)."""
    max_steps = 1 << 40
    exceed, endpoint, ok = shifted_area_batch(np.uint64(seed), np.uint64(stream), m, tau, lam,
                                              samples, max_steps)
    if not ok.all():
        raise WalkTooShort("a walk hit the step budget")
    q = float(exceed.mean())
    return ShiftedAreaCheck(tau, lam, q, math.sqrt(q * (1 - q) / samples),
                            shifted_area_rhs(tau, lam, table), samples, endpoint)
