"""Lazily evaluated random environment on Z^2.

Every site ``(x, t)`` carries an openness bit ``B`` (Bernoulli(p)) and a fair
tie-break ``U`` in {+1, -1}.  Both are read from a single 64-bit counter-based
hash of ``(seed, x, t)``, so the infinite lattice never has to be stored and
any window can be re-read in any order, from any thread, with identical results.

The njit primitives in this module are shared by every compiled kernel in the
package; the Python-level API wraps them.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import DomainError, SearchCapExceeded

DEFAULT_SEARCH_CAP = 1 << 16

# returned by compiled kernels when a row search hits the cap
NO_SITE = -(1 << 62)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_CX = np.uint64(0xD6E8FEB86659FD93)
_CT = np.uint64(0xA0761D6478BD642F)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


@njit(cache=True, inline="always")
def mix64(z):
    """splitmix64 finalizer (bijective on uint64)."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def field_key(seed):
    return mix64(np.uint64(np.uint64(seed) + _GOLD))


@njit(cache=True, inline="always")
def row_key(key, t):
    return mix64(np.uint64(np.uint64(key) + np.uint64(t) * _CT))


@njit(cache=True, inline="always")
def cell_hash(rk, x):
    """Hash of site x on the row whose key is ``rk``."""
    return mix64(np.uint64(np.uint64(rk) ^ (np.uint64(x) * _CX)))


@njit(cache=True, inline="always")
def site_hash(key, x, t):
    return cell_hash(row_key(key, t), x)


@njit(cache=True, inline="always")
def open_at(key, thr, x, t):
    return (site_hash(key, x, t) >> _S11) < thr


@njit(cache=True, inline="always")
def open_in_row(rk, thr, x):
    return (cell_hash(rk, x) >> _S11) < thr


@njit(cache=True)
def nearest_in_row(rk, thr, cap, x, tie):
    """nearest_offset with the row key precomputed."""
    if open_in_row(rk, thr, x):
        return 0
    for k in range(1, cap + 1):
        right = open_in_row(rk, thr, x + k)
        left = open_in_row(rk, thr, x - k)
        if right and left:
            return tie * k
        if right:
            return k
        if left:
            return -k
    return NO_SITE


@njit(cache=True, inline="always")
def tie_at(key, x, t):
    if site_hash(key, x, t) & _ONE:
        return 1
    return -1


@njit(cache=True)
def nearest_offset(key, thr, cap, x, row, tie):
    """Signed offset of the open site on ``row`` nearest to ``x``.

    ``tie`` breaks the two-sided case.  Returns NO_SITE past ``cap``.
    """
    return nearest_in_row(row_key(key, row), thr, cap, x, tie)


@njit(cache=True)
def h_image(key, thr, cap, x, t):
    """x-coordinate of h(x, t) on row t + 1, or NO_SITE."""
    k = nearest_offset(key, thr, cap, x, t + 1, tie_at(key, x, t))
    if k == NO_SITE:
        return NO_SITE
    return x + k


def open_threshold(p: float) -> np.uint64:
    return np.uint64(int(p * 2.0**53))


class Site(NamedTuple):
    x: int
    t: int


class Cell(NamedTuple):
    open: bool
    tie: int


@dataclass(frozen=True)
class FieldConfig:
    """Parameters of the i.i.d. field: openness probability and master seed."""

    p: float
    seed: int = 0
    search_cap: int = DEFAULT_SEARCH_CAP

    bounded = False

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise DomainError(f"p must lie strictly inside (0, 1), got {self.p}")
        if not (0 <= int(self.seed) < 1 << 64):
            raise DomainError("seed must be an unsigned 64-bit integer")
        if self.search_cap < 1:
            raise DomainError("search_cap must be positive")

    @cached_property
    def key(self) -> np.uint64:
        return np.uint64(field_key(np.uint64(self.seed)))

    @cached_property
    def threshold(self) -> np.uint64:
        return open_threshold(self.p)

    def with_seed(self, seed: int) -> FieldConfig:
        return FieldConfig(self.p, int(seed), self.search_cap)

    def is_open(self, x: int, t: int) -> bool:
        return bool(open_at(self.key, self.threshold, x, t))

    def tie(self, x: int, t: int) -> int:
        return int(tie_at(self.key, x, t))


class ArrayField:
    """Hand-built field for fixtures.

    ``rows`` maps a row index ``t`` to a string over ``x = x0, x0+1, ...``
    where ``#`` is open and ``.`` closed.  Sites outside the strings are
    closed.  ``ties`` maps ``(x, t)`` to -1 for the sites whose tie-break is
    -1; every other site has tie +1.
    """

    # running off the window means there is nothing left to find
    bounded = True

    def __init__(self, rows: dict[int, str], x0: int = 0,
                 ties: dict[tuple[int, int], int] | None = None,
                 search_cap: int = 64):
        self.rows = dict(rows)
        self.x0 = x0
        self.ties = dict(ties or {})
        self.search_cap = search_cap

    def is_open(self, x: int, t: int) -> bool:
        row = self.rows.get(t)
        i = x - self.x0
        return row is not None and 0 <= i < len(row) and row[i] == "#"

    def tie(self, x: int, t: int) -> int:
        return self.ties.get((x, t), 1)


def sample_cell(cfg, s: Site) -> Cell:
    return Cell(cfg.is_open(s.x, s.t), cfg.tie(s.x, s.t))


def scan_nearest(field, x: int, row: int, tie: int) -> int:
    """Generic (uncompiled) nearest-open search used for fixture fields."""
    if field.is_open(x, row):
        return 0
    for k in range(1, field.search_cap + 1):
        right = field.is_open(x + k, row)
        left = field.is_open(x - k, row)
        if right and left:
            return tie * k
        if right:
            return k
        if left:
            return -k
    raise SearchCapExceeded(f"no open site within {field.search_cap} of x={x} on row {row}")


def nearest_open_offset(field, s: Site) -> int:
    """Offset of the open site on row ``s.t`` that h selects from ``(s.x, s.t - 1)``.

    The tie-break is the one attached to the querying site ``(s.x, s.t - 1)``.
    """
    tie = field.tie(s.x, s.t - 1)
    if isinstance(field, FieldConfig):
        k = int(nearest_offset(field.key, field.threshold, field.search_cap, s.x, s.t, tie))
        if k == NO_SITE:
            raise SearchCapExceeded(
                f"no open site within {field.search_cap} of x={s.x} on row {s.t}")
        return k
    return scan_nearest(field, s.x, s.t, tie)
