"""Diffusive scaling: gamma0(p), piecewise-linear scaled processes and xi_n."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit, prange

from .errors import DomainError, LengthMismatch, SearchCapExceeded
from .field import NO_SITE, FieldConfig, field_key, h_image, open_at
from .forward import Cluster, h_of, replica_seed


def gamma0_sq(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie strictly inside (0, 1), got {p}")
    return (1 - p) * (2 - 2 * p + p * p) / (p * p * (2 - p) ** 2)


def gamma0(p: float) -> float:
    """Diffusion constant of a single forward path at openness p."""
    return math.sqrt(gamma0_sq(p))


@dataclass(frozen=True)
class ScaledProcess:
    """Linear interpolation of ``values[k]`` placed at times ``k / n``.

    Past the last breakpoint the process holds ``tail`` (0 for the cluster
    processes, which vanish once the cluster is exhausted).
    """

    n: int
    values: np.ndarray
    tail: float = 0.0

    def _at_index(self, k):
        v = self.values
        return np.where(k < len(v), v[np.minimum(k, len(v) - 1)], self.tail) if len(v) \
            else np.full(np.shape(k), self.tail)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("scaled processes live on [0, inf)")
        ns = self.n * s
        k = np.floor(ns).astype(np.int64)
        frac = ns - k
        out = self._at_index(k) + frac * (self._at_index(k + 1) - self._at_index(k))
        return out if out.ndim else float(out)

    def sup(self, s_max: float = 1.0) -> float:
        """sup over [0, s_max] of |process|, attained at a breakpoint or s_max."""
        kmax = int(math.floor(self.n * s_max))
        grid = np.abs(self._at_index(np.arange(kmax + 1)))
        return float(max(grid.max(), abs(self(s_max))))


def _scale(n: int, p: float) -> float:
    if n < 1:
        raise DomainError("n must be positive")
    return gamma0(p) * math.sqrt(n)


def width_process(cluster: Cluster, n: int, p: float) -> ScaledProcess:
    return ScaledProcess(n, cluster.widths.astype(float) / _scale(n, p))


def cluster_process(cluster: Cluster, n: int, p: float) -> ScaledProcess:
    return ScaledProcess(n, cluster.counts.astype(float) / _scale(n, p))


def dual_width_process(left: Sequence, right: Sequence, n: int, p: float) -> ScaledProcess:
    if len(left) != len(right):
        raise LengthMismatch("dual paths must have equal length")
    x2l = np.array([d.x2 for d in left], dtype=float)
    x2r = np.array([d.x2 for d in right], dtype=float)
    return ScaledProcess(n, (x2r - x2l) / (2.0 * _scale(n, p)))


# ---------------------------------------------------------------- xi_n

def xi_n(field, n: int, p: float | None = None, t0: int = 0) -> int:
    """Distinct landing points in [0, sqrt(n) gamma0] of h^n over open (x, t0).

    The start window is widened until the outermost paths land outside the
    interval on their own side; by non-crossing no site further out can land
    inside.
    """
    if n < 1:
        raise DomainError("n must be positive")
    p = field.p if p is None else p
    w = _scale(n, p)
    if isinstance(field, FieldConfig):
        return _xi_compiled(field, n, w, t0)
    span = int(math.ceil(4 * w))
    limit = 4 * field.search_cap
    while True:
        lo, hi = -span, int(math.floor(w)) + span
        xs = [x for x in range(lo, hi + 1) if field.is_open(x, t0)]
        land = xs
        for j in range(n):
            land = sorted(set(h_of(field, x, t0 + j) for x in land))
        if field.bounded or (land and land[0] < 0 and land[-1] > w) or span > limit:
            return sum(1 for x in land if 0 <= x <= w)
        span *= 2


def _xi_compiled(cfg: FieldConfig, n: int, w: float, t0: int) -> int:
    out = xi_kernel(cfg.key, cfg.threshold, cfg.search_cap, n, w, t0)
    if out < 0:
        raise SearchCapExceeded("row search failed while counting landing points")
    return int(out)


@njit(cache=True)
def _xi_window(key, thr, cap, n, w, t0, lo, hi):
    """(count, flanks_ok); count is -1 on search failure."""
    buf = np.empty(hi - lo + 1, np.int64)
    m = 0
    for x in range(lo, hi + 1):
        if open_at(key, thr, x, t0):
            buf[m] = x
            m += 1
    if m == 0:
        return 0, False
    for j in range(n):
        last = NO_SITE
        mm = 0
        for i in range(m):
            y = h_image(key, thr, cap, buf[i], t0 + j)
            if y == NO_SITE:
                return -1, True
            if y != last:
                buf[mm] = y
                mm += 1
                last = y
        m = mm
    count = 0
    for i in range(m):
        if 0 <= buf[i] and buf[i] <= w:
            count += 1
    return count, (buf[0] < 0 and buf[m - 1] > w)


@njit(cache=True)
def xi_kernel(key, thr, cap, n, w, t0):
    span = int(np.ceil(4.0 * w))
    while True:
        count, ok = _xi_window(key, thr, cap, n, w, t0, -span, int(np.floor(w)) + span)
        if count < 0:
            return -1
        if ok:
            return count
        if span > 4 * cap:
            return -1
        span *= 2


@njit(cache=True, parallel=True)
def xi_batch(master, stream, p, cap, replicas, n, w):
    thr = np.uint64(p * 9007199254740992.0)
    out = np.empty(replicas, np.int64)
    for i in prange(replicas):
        key = field_key(replica_seed(master, stream, i))
        out[i] = xi_kernel(key, thr, cap, n, w, 0)
    return out
