"""The dual graph: midpoints between consecutive open sites, flowing backward.

A dual site is stored with a doubled x-coordinate so half-integers stay exact.
From ``u`` on row ``t`` the dual path steps to the midpoint of ``a^l`` and
``a^r`` on row ``t - 1``: the rightmost open site whose h-image lies left of
``u`` and the leftmost one whose image lies right of it.  Since h is monotone
along a row these two are consecutive open sites, found by a short walk.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit, prange

from .errors import LengthMismatch, NotOpen, SearchCapExceeded
from .field import NO_SITE, FieldConfig, Site, field_key, h_image, open_at, open_in_row, row_key
from .forward import Cluster, h_of, replica_seed


class DualSite(NamedTuple):
    x2: int
    t: int

    @property
    def x(self) -> float:
        return self.x2 / 2


@dataclass(frozen=True)
class KernelQuery:
    state_is_integer: bool
    v2: int
    p: float


# ---------------------------------------------------------------- generic path

def _first_open(field, x: int, row: int, direction: int) -> int:
    """First open site strictly beyond x in ``direction`` (+1 or -1)."""
    for k in range(1, field.search_cap + 1):
        if field.is_open(x + direction * k, row):
            return x + direction * k
    raise SearchCapExceeded(f"no open site within {field.search_cap} of x={x} on row {row}")


def dual_neighbours(field, s: Site) -> tuple[DualSite, DualSite]:
    """(left, right) dual neighbours of the open site ``s``."""
    if not field.is_open(s.x, s.t):
        raise NotOpen(f"{s} is closed")
    left = _first_open(field, s.x, s.t, -1)
    right = _first_open(field, s.x, s.t, 1)
    return DualSite(s.x + left, s.t), DualSite(s.x + right, s.t)


def bracket(field, d: DualSite) -> tuple[int, int]:
    """(a^l, a^r): consecutive open sites of row d.t - 1 straddling d under h."""
    row = d.t - 1
    y = d.x2 // 2
    if not field.is_open(y, row):
        y = _first_open(field, y, row, -1)
    if 2 * h_of(field, y, row) < d.x2:
        while True:
            nxt = _first_open(field, y, row, 1)
            if 2 * h_of(field, nxt, row) > d.x2:
                return y, nxt
            y = nxt
    while True:
        prv = _first_open(field, y, row, -1)
        if 2 * h_of(field, prv, row) < d.x2:
            return prv, y
        y = prv


def dual_step(field, d: DualSite) -> DualSite:
    al, ar = bracket(field, d)
    return DualSite(al + ar, d.t - 1)


def dual_path(field, d: DualSite, steps: int) -> list[DualSite]:
    out = [d]
    for _ in range(steps):
        d = dual_step(field, d)
        out.append(d)
    return out


def segment_avoids(x2_from: int, x2_to: int, z: int, hz: int) -> bool:
    """True iff the dual segment (x2_from, t) -> (x2_to, t-1) misses the
    forward edge (z, t-1) -> (hz, t), closed segments, exact arithmetic."""
    return (x2_to - 2 * z) * (x2_from - 2 * hz) > 0


def encloses(cluster: Cluster, left_dual: Sequence[DualSite],
             right_dual: Sequence[DualSite]) -> bool:
    L = cluster.L
    if len(left_dual) < L or len(right_dual) < L:
        raise LengthMismatch(f"dual paths need at least {L} sites")
    for k in range(L):
        l_k, r_k, _ = cluster.rows[k]
        if not (left_dual[k].x2 < 2 * l_k and 2 * r_k < right_dual[k].x2):
            return False
    return True


# ---------------------------------------------------------------- kernel

def geometric_difference_pmf(m, p: float):
    """P(G1 - G2 = m) for independent G ~ Geometric(p) on {1, 2, ...}."""
    m = np.asarray(m)
    return p * (1.0 - p) ** np.abs(m) / (2.0 - p)


def geometric_difference_series(m: int, p: float, tol: float = 1e-16) -> float:
    """Same quantity by direct summation, truncated once terms drop below ``tol``."""
    q = 1.0 - p
    total = 0.0
    g = max(1, 1 - m)
    while True:
        term = p * q ** (g - 1) * p * q ** (g + m - 1)
        total += term
        if term < tol and g > 1 - m:
            return total
        g += 1


def _geometric_pmf(k, p: float):
    k = np.asarray(k)
    return np.where(k >= 1, p * (1.0 - p) ** np.maximum(k - 1, 0), 0.0)


def kernel(q: KernelQuery) -> float:
    """Probability that one dual step changes x by v2 / 2."""
    return float(kernel_array(q.state_is_integer, q.v2, q.p))


def kernel_array(state_is_integer: bool, v2, p: float):
    diff = geometric_difference_pmf(v2, p)
    if not state_is_integer:
        return diff
    v2 = np.asarray(v2)
    return (1.0 - p) * diff + 0.5 * p * (_geometric_pmf(v2, p) + _geometric_pmf(-v2, p))


# ---------------------------------------------------------------- compiled path

@njit(cache=True)
def _open_beyond(rk, thr, cap, x, direction):
    for k in range(1, cap + 1):
        if open_in_row(rk, thr, x + direction * k):
            return x + direction * k
    return NO_SITE


@njit(cache=True)
def dual_bracket_kernel(key, thr, cap, x2, t):
    """Compiled bracket; returns (a^l, a^r), or NO_SITE pairs on search failure."""
    row = t - 1
    rk = row_key(key, row)
    y = x2 // 2
    if not open_in_row(rk, thr, y):
        y = _open_beyond(rk, thr, cap, y, -1)
        if y == NO_SITE:
            return NO_SITE, NO_SITE
    hy = h_image(key, thr, cap, y, row)
    if hy == NO_SITE:
        return NO_SITE, NO_SITE
    if 2 * hy < x2:
        while True:
            nxt = _open_beyond(rk, thr, cap, y, 1)
            if nxt == NO_SITE:
                return NO_SITE, NO_SITE
            hn = h_image(key, thr, cap, nxt, row)
            if hn == NO_SITE:
                return NO_SITE, NO_SITE
            if 2 * hn > x2:
                return y, nxt
            y = nxt
    while True:
        prv = _open_beyond(rk, thr, cap, y, -1)
        if prv == NO_SITE:
            return NO_SITE, NO_SITE
        hp = h_image(key, thr, cap, prv, row)
        if hp == NO_SITE:
            return NO_SITE, NO_SITE
        if 2 * hp < x2:
            return prv, y
        y = prv


@njit(cache=True)
def dual_neighbours_kernel(key, thr, cap, x, t):
    rk = row_key(key, t)
    left = _open_beyond(rk, thr, cap, x, -1)
    right = _open_beyond(rk, thr, cap, x, 1)
    if left == NO_SITE or right == NO_SITE:
        return NO_SITE, NO_SITE
    return x + left, x + right


@njit(cache=True)
def dual_path_kernel(key, thr, cap, x2, t, steps, out):
    """Fill ``out[0..steps]`` with x2 along the dual path; False on search failure."""
    out[0] = x2
    for k in range(steps):
        al, ar = dual_bracket_kernel(key, thr, cap, x2, t - k)
        if al == NO_SITE:
            return False
        x2 = al + ar
        out[k + 1] = x2
    return True


@njit(cache=True, parallel=True)
def dual_increment_batch(master, stream, p, cap, walks, steps):
    """Increments of ``walks`` independent dual paths of ``steps`` steps each.

    Each walk starts from the right dual neighbour of the first open site at
    or right of the origin.  Returns (v2, integer_state, ok) arrays; entry
    ``[i, k]`` is the k-th doubled increment of walk i and whether the state
    it left was an integer.
    """
    thr = np.uint64(p * 9007199254740992.0)
    v2 = np.zeros((walks, steps), np.int64)
    integer = np.zeros((walks, steps), np.bool_)
    ok = np.ones(walks, np.bool_)
    for i in prange(walks):
        key = field_key(replica_seed(master, stream, i))
        x = 0
        while not open_at(key, thr, x, 0):
            x += 1
        _, right = dual_neighbours_kernel(key, thr, cap, x, 0)
        path = np.empty(steps + 1, np.int64)
        if right == NO_SITE or not dual_path_kernel(key, thr, cap, right, 0, steps, path):
            ok[i] = False
            continue
        for k in range(steps):
            v2[i, k] = path[k + 1] - path[k]
            integer[i, k] = path[k] % 2 == 0
    return v2, integer, ok


def dual_path_cfg(cfg: FieldConfig, d: DualSite, steps: int) -> list[DualSite]:
    """Compiled dual_path for a FieldConfig."""
    out = np.empty(steps + 1, np.int64)
    if not dual_path_kernel(cfg.key, cfg.threshold, cfg.search_cap, d.x2, d.t, steps, out):
        raise SearchCapExceeded(f"row search failed on the dual path from {d}")
    return [DualSite(int(x), d.t - k) for k, x in enumerate(out)]
