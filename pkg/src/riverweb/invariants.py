"""Exact combinatorial invariants of the forward and dual graphs.

Each replica draws an independent field and inspects a window of it:

* acyclicity: every forward edge lands on the nearest open site of the next
  row, so t strictly increases and no circuit can form;
* forward non-crossing: h is non-decreasing along every row;
* dual/forward non-crossing: every dual step from the midpoint of two
  consecutive open sites misses every forward edge of the strip, tested with
  an exact integer predicate;
* enclosure: the dual paths from the apex's dual neighbours strictly enclose
  every generation of its cluster.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .dual import dual_bracket_kernel, dual_path_kernel, dual_neighbours_kernel
from .field import NO_SITE, field_key, h_image, open_at
from .forward import grow_cluster, replica_seed

CHECKS = ("acyclicity", "forward_noncrossing", "dual_noncrossing", "enclosure")


@njit(cache=True)
def window_invariants(key, thr, cap, half, rows, cluster_cap):
    """Counts [checked, violations] per check for the window [-half, half] x [0, rows)."""
    out = np.zeros((4, 2), np.int64)
    xs = np.empty(2 * half + 1, np.int64)
    for t in range(rows):
        m = 0
        for x in range(-half, half + 1):
            if open_at(key, thr, x, t):
                xs[m] = x
                m += 1
        prev = NO_SITE
        for i in range(m):
            hx = h_image(key, thr, cap, xs[i], t)
            out[0, 0] += 1
            good = hx != NO_SITE and open_at(key, thr, hx, t + 1)
            if good:
                d = abs(hx - xs[i])
                for k in range(d):
                    if open_at(key, thr, xs[i] + k, t + 1) or open_at(key, thr, xs[i] - k, t + 1):
                        good = False
            if not good:
                out[0, 1] += 1
            if i > 0:
                out[1, 0] += 1
                if hx < prev:
                    out[1, 1] += 1
            prev = hx
        # dual steps from row t to t - 1
        for i in range(m - 1):
            x1 = xs[i] + xs[i + 1]
            al, ar = dual_bracket_kernel(key, thr, cap, x1, t)
            out[2, 0] += 1
            if al == NO_SITE:
                out[2, 1] += 1
                continue
            x0 = al + ar
            bad = False
            for z in range(al - 2 * half, ar + 2 * half + 1):
                if open_at(key, thr, z, t - 1):
                    hz = h_image(key, thr, cap, z, t - 1)
                    if (x0 - 2 * z) * (x1 - 2 * hz) <= 0:
                        bad = True
                    if al < z < ar:
                        bad = True
            if bad:
                out[2, 1] += 1
    # enclosure of the cluster at the top centre of the window
    if open_at(key, thr, 0, rows):
        buf = np.zeros((cluster_cap + 1, 3), np.int64)
        res = grow_cluster(key, thr, cap, 0, rows, cluster_cap, 0, 0.0, buf)
        L = int(res[0])
        left, right = dual_neighbours_kernel(key, thr, cap, 0, rows)
        lp = np.empty(L + 1, np.int64)
        rp = np.empty(L + 1, np.int64)
        out[3, 0] += 1
        if (left == NO_SITE or int(res[1]) == 2
                or not dual_path_kernel(key, thr, cap, 2 * left, rows, L, lp)
                or not dual_path_kernel(key, thr, cap, 2 * right, rows, L, rp)):
            out[3, 1] += 1
        else:
            for k in range(min(L, cluster_cap + 1)):
                if not (lp[k] < 2 * buf[k, 0] and 2 * buf[k, 1] < rp[k]):
                    out[3, 1] += 1
                    break
    return out


@njit(cache=True, parallel=True)
def invariants_batch(master, stream, p, cap, windows, half, rows, cluster_cap):
    thr = np.uint64(p * 9007199254740992.0)
    res = np.zeros((windows, 4, 2), np.int64)
    for i in prange(windows):
        key = field_key(replica_seed(master, stream, i))
        res[i] = window_invariants(key, thr, cap, half, rows, cluster_cap)
    return res


@dataclass(frozen=True)
class InvariantReport:
    p: float
    windows: int
    checked: dict[str, int]
    violations: dict[str, int]

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    def as_dict(self) -> dict:
        return {"p": self.p, "windows": self.windows,
                "checked": dict(self.checked), "violations": dict(self.violations)}


def run_invariants(p: float, windows: int, seed: int, stream: int = 0x1A7,
                   half: int = 10, rows: int = 21, cluster_cap: int = 1024,
                   search_cap: int = 1 << 16) -> InvariantReport:
    """All exact checks on ``windows`` independent (2 half + 1) x rows windows."""
    res = invariants_batch(np.uint64(seed), np.uint64(stream), p, search_cap, windows,
                           half, rows, cluster_cap)
    tot = res.sum(axis=0)
    return InvariantReport(p, windows,
                           {c: int(tot[i, 0]) for i, c in enumerate(CHECKS)},
                           {c: int(tot[i, 1]) for i, c in enumerate(CHECKS)})
