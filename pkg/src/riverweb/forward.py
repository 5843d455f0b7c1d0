"""The forward drainage graph: the map h, forward paths and ancestor clusters.

Every open site ``(x, t)`` drains into ``h(x, t)``, the nearest open site on row
``t + 1``.  The watershed of an apex is grown downward one generation at a
time.  Because h is non-decreasing along a row (forward paths never cross),
the preimage of a sorted set of sites can be read off with a single sweep: walk
left until an open site drains strictly left of the set, then sweep right until
one drains strictly right of it.  This gives the exact ancestor sets without
any window heuristics.

Two implementations live here.  The generic one works on any field object
(including hand-built fixtures) and is meant to be read; ``grow_cluster`` is
the compiled kernel used by every experiment, cross-checked against it.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit, prange

from .errors import CapExceeded, NotOpen, SearchCapExceeded
from .field import (
    NO_SITE,
    FieldConfig,
    Site,
    field_key,
    mix64,
    cell_hash,
    nearest_offset,
    open_in_row,
    row_key,
    scan_nearest,
    site_hash,
)

# kernel status codes
OK = 0
CENSORED = 1
SEARCH_FAILED = 2

_S11 = np.uint64(11)
_ONE = np.uint64(1)


@dataclass(frozen=True)
class PathTrace:
    origin: Site
    positions: list[int]


@dataclass
class Cluster:
    """Watershed C(apex): per-generation extremes and counts.

    ``rows[k] = (l_k, r_k, count_k)`` for ``k < L``.
    """

    apex: Site
    rows: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 3), np.int64))
    L: int = 0
    D_max: int = 0
    total: int = 0

    @property
    def left(self) -> np.ndarray:
        return self.rows[:, 0]

    @property
    def right(self) -> np.ndarray:
        return self.rows[:, 1]

    @property
    def counts(self) -> np.ndarray:
        return self.rows[:, 2]

    @property
    def widths(self) -> np.ndarray:
        return self.rows[:, 1] - self.rows[:, 0]

    @classmethod
    def from_rows(cls, apex: Site, rows) -> Cluster:
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
        L = len(rows)
        dmax = int((rows[:, 1] - rows[:, 0]).max()) if L else 0
        return cls(apex, rows, L, dmax, int(rows[:, 2].sum()))


# ---------------------------------------------------------------- generic path

def h_of(field, x: int, t: int) -> int:
    """x-coordinate of h(x, t); defined for closed sites too."""
    tie = field.tie(x, t)
    if isinstance(field, FieldConfig):
        k = int(nearest_offset(field.key, field.threshold, field.search_cap, x, t + 1, tie))
        if k == NO_SITE:
            raise SearchCapExceeded(f"no open site near x={x} on row {t + 1}")
        return x + k
    return x + scan_nearest(field, x, t + 1, tie)


def step(field, s: Site) -> Site:
    if not field.is_open(s.x, s.t):
        raise NotOpen(f"{s} is closed")
    return Site(h_of(field, s.x, s.t), s.t + 1)


def path(field, s: Site, steps: int) -> PathTrace:
    if not field.is_open(s.x, s.t):
        raise NotOpen(f"{s} is closed")
    xs = [s.x]
    x = s.x
    for j in range(steps):
        x = h_of(field, x, s.t + j)
        xs.append(x)
    return PathTrace(s, xs)


def _sweep_limit(field) -> int:
    return 4 * field.search_cap


def next_generation(field, members: list[int], row: int) -> list[int]:
    """Open sites of ``row`` whose h-image lies in ``members`` (row + 1)."""
    lo, hi = members[0], members[-1]
    member_set = set(members)
    limit = _sweep_limit(field)

    y = lo
    while True:
        if field.is_open(y, row) and h_of(field, y, row) < lo:
            break
        y -= 1
        if lo - y > limit:
            if field.bounded:
                break
            raise SearchCapExceeded(f"left sweep from x={lo} on row {row} did not close")

    out = []
    y += 1
    while True:
        if field.is_open(y, row):
            hy = h_of(field, y, row)
            if hy > hi:
                break
            if hy in member_set:
                out.append(y)
        y += 1
        if y - hi > limit:
            if field.bounded:
                break
            raise SearchCapExceeded(f"right sweep from x={hi} on row {row} did not close")
    return out


def ancestors(field, apex: Site, k: int) -> set[int]:
    """x-coordinates of C_k(apex), the k-th generation ancestors."""
    if not field.is_open(apex.x, apex.t):
        return set()
    members = [apex.x]
    for j in range(k):
        members = next_generation(field, members, apex.t - j - 1)
        if not members:
            break
    return set(members)


def cluster(field, apex: Site, cap_L: int = 1 << 20) -> Cluster:
    """Full watershed of ``apex``; raises CapExceeded if L > cap_L."""
    if isinstance(field, FieldConfig):
        return _cluster_compiled(field, apex, cap_L)
    if not field.is_open(apex.x, apex.t):
        return Cluster(apex)
    rows = []
    members = [apex.x]
    k = 0
    while members:
        rows.append((members[0], members[-1], len(members)))
        if k == cap_L:
            raise CapExceeded(cap_L, Cluster.from_rows(apex, rows))
        members = next_generation(field, members, apex.t - k - 1)
        k += 1
    return Cluster.from_rows(apex, rows)


def _cluster_compiled(cfg: FieldConfig, apex: Site, cap_L: int) -> Cluster:
    size = min(cap_L + 1, 4096)
    while True:
        rows = np.zeros((size, 3), np.int64)
        out = grow_cluster(cfg.key, cfg.threshold, cfg.search_cap,
                           apex.x, apex.t, cap_L, 0, 0.0, rows)
        L, status = int(out[0]), int(out[1])
        if status == SEARCH_FAILED:
            raise SearchCapExceeded(f"row search failed while growing the cluster of {apex}")
        needed = cap_L + 1 if status == CENSORED else L
        if needed <= size:
            break
        size = needed
    if status == CENSORED:
        raise CapExceeded(cap_L, Cluster.from_rows(apex, rows[: cap_L + 1]))
    return Cluster.from_rows(apex, rows[:L])


# ---------------------------------------------------------------- compiled path

_FAR = 1 << 62


@njit(cache=True)
def _window_generation(key, thr, cur, nc, row, nxt, pad):
    """Compiled twin of next_generation over a padded window.

    Both rows are hashed once; h is read off nearest-open tables of the row
    above and membership off a mask, so the inner loop has no data-dependent
    branches.  The window is complete once the row above has an open site
    inside the pad on each side: every site left of such a site drains left
    of it.  Returns (count, buffer, complete).
    """
    lo = cur[0]
    hi = cur[nc - 1]
    a = lo - pad
    b = hi + pad
    ua = a - pad
    m = b - a + 1
    mu = m + 2 * pad
    rk = row_key(key, row)
    rk_up = row_key(key, row + 1)

    up = np.empty(mu, np.bool_)
    for i in range(mu):
        up[i] = open_in_row(rk_up, thr, ua + i)
    before = np.empty(mu, np.int64)
    after = np.empty(mu, np.int64)
    last = -_FAR
    for i in range(mu):
        last = ua + i if up[i] else last
        before[i] = last
    last = _FAR
    for i in range(mu - 1, -1, -1):
        last = ua + i if up[i] else last
        after[i] = last
    if before[lo - 1 - ua] < a or after[hi + 1 - ua] > b:
        return 0, nxt, False

    mask = np.zeros(mu + 1, np.bool_)
    for j in range(nc):
        mask[cur[j] - ua] = True
    if nxt.shape[0] < m:
        nxt = np.empty(max(m, 2 * nxt.shape[0]), np.int64)
    nn = 0
    for i in range(m):
        y = a + i
        hh = cell_hash(rk, y)
        j = y - ua
        pl = before[j]
        pr = after[j]
        dl = y - pl
        dr = pr - y
        go_right = (dr < dl) | ((dr == dl) & ((hh & _ONE) == _ONE))
        idx = (pr if go_right else pl) - ua
        if idx < 0 or idx >= mu or (hh >> _S11) >= thr:
            idx = mu
        nxt[nn] = y
        nn += mask[idx]
    return nn, nxt, True


@njit(cache=True)
def _next_gen_kernel(key, thr, cap, cur, nc, row, nxt, pad):
    """Returns (count, buffer, ok), widening the window until it is complete."""
    while True:
        nn, nxt, complete = _window_generation(key, thr, cur, nc, row, nxt, pad)
        if complete:
            return nn, nxt, True
        if pad > cap:
            return 0, nxt, False
        pad *= 4


@njit(cache=True)
def grow_cluster(key, thr, cap, x0, t0, max_gen, probe, weight, rows):
    """Grow the cluster of (x0, t0) generation by generation.

    Returns a float64 vector
    ``[L, status, total, D_max, D_probe, count_probe, sup_dev]`` where
    ``sup_dev = max_{k <= probe} |weight * D_k - count_k|``.  When generation
    ``max_gen`` is still non-empty the run stops with status CENSORED and
    ``L = max_gen + 1`` is a lower bound.  ``rows`` (possibly empty) receives
    ``(l_k, r_k, count_k)`` for as many generations as it has room for.
    """
    out = np.zeros(7)
    # gaps longer than this are rare enough that widening on demand is cheaper
    pad = 4 + int(6.0 * 9007199254740992.0 / max(float(thr), 1.0))
    hh = site_hash(key, x0, t0)
    if not (hh >> _S11) < thr:
        return out
    cur = np.empty(64, np.int64)
    nxt = np.empty(64, np.int64)
    cur[0] = x0
    nc = 1
    total = 0
    dmax = 0
    sup = 0.0
    k = 0
    while True:
        l = cur[0]
        r = cur[nc - 1]
        d = r - l
        total += nc
        if d > dmax:
            dmax = d
        if k <= probe:
            dev = abs(weight * d - nc)
            if dev > sup:
                sup = dev
            if k == probe:
                out[4] = d
                out[5] = nc
        if k < rows.shape[0]:
            rows[k, 0] = l
            rows[k, 1] = r
            rows[k, 2] = nc
        if k == max_gen:
            out[0] = max_gen + 1
            out[1] = CENSORED
            break
        nn, nxt, ok = _next_gen_kernel(key, thr, cap, cur, nc, t0 - k - 1, nxt, pad)
        if not ok:
            out[0] = k + 1
            out[1] = SEARCH_FAILED
            break
        if nn == 0:
            out[0] = k + 1
            break
        cur, nxt = nxt, cur
        nc = nn
        k += 1
    out[2] = total
    out[3] = dmax
    out[6] = sup
    return out


@njit(cache=True)
def replica_seed(master, stream, i):
    """Seed of replica ``i``: a hash of (master seed, experiment stream, i)."""
    return mix64(mix64(np.uint64(master) ^ mix64(np.uint64(stream))) + np.uint64(i))


@njit(cache=True, parallel=True)
def cluster_batch(master, stream, p, cap, replicas, max_gen, probe, weight):
    """One independent cluster at (0, 0) per replica; rows of grow_cluster output."""
    thr = np.uint64(p * 9007199254740992.0)
    res = np.empty((replicas, 7))
    empty = np.zeros((0, 3), np.int64)
    for i in prange(replicas):
        key = field_key(replica_seed(master, stream, i))
        res[i] = grow_cluster(key, thr, cap, 0, 0, max_gen, probe, weight, empty)
    return res


def replica_seeds(master: int, stream: int, replicas: int) -> np.ndarray:
    return np.array([replica_seed(np.uint64(master), np.uint64(stream), i)
                     for i in range(replicas)], dtype=np.uint64)
