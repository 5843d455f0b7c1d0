import numpy as np
import pytest
from scipy import stats

from riverweb.errors import LengthMismatch, NotOpen
from riverweb.field import FieldConfig, Site
from riverweb.forward import cluster, h_of
from riverweb.dual import (
    DualSite,
    KernelQuery,
    bracket,
    dual_increment_batch,
    dual_neighbours,
    dual_path,
    dual_path_cfg,
    dual_step,
    encloses,
    geometric_difference_pmf,
    geometric_difference_series,
    kernel,
    kernel_array,
    segment_avoids,
)


class Plain:
    bounded = False

    def __init__(self, cfg):
        self.search_cap = cfg.search_cap
        self.is_open = cfg.is_open
        self.tie = cfg.tie


# --- hand-built window: row 1 open at {0,3,6}, row 0 at {1,3,5}, row -1 at {0,2,5,6}

def test_neighbour_fixture(window_field):
    assert dual_neighbours(window_field, Site(3, 0)) == (DualSite(4, 0), DualSite(8, 0))
    assert dual_neighbours(window_field, Site(3, 1)) == (DualSite(3, 1), DualSite(9, 1))
    assert DualSite(3, 1).x == 1.5
    with pytest.raises(NotOpen):
        dual_neighbours(window_field, Site(2, 0))


def test_bracket_fixture(window_field):
    # h on row 0: 1 -> 0, 3 -> 3, 5 -> 6
    assert bracket(window_field, DualSite(3, 1)) == (1, 3)
    assert bracket(window_field, DualSite(9, 1)) == (3, 5)
    # h on row -1: 0 -> 1, 2 -> 3, 5 -> 5, 6 -> 5
    assert bracket(window_field, DualSite(4, 0)) == (0, 2)
    assert bracket(window_field, DualSite(8, 0)) == (2, 5)
    assert dual_path(window_field, DualSite(9, 1), 2) == [DualSite(9, 1), DualSite(8, 0), DualSite(7, -1)]


def test_enclosure_fixture(window_field):
    c = cluster(window_field, Site(3, 1))
    assert c.rows.tolist() == [[3, 3, 1], [3, 3, 1], [2, 2, 1]]
    left = dual_path(window_field, DualSite(3, 1), 2)
    right = dual_path(window_field, DualSite(9, 1), 2)
    assert encloses(c, left, right)
    assert not encloses(c, right, left)
    with pytest.raises(LengthMismatch):
        encloses(c, left[:2], right)


def test_segment_predicate():
    # dual 1.5 -> 2 against forward 1 -> 2: the segments cross
    assert not segment_avoids(3, 4, 1, 2)
    # forward 3 -> 3 stays clear
    assert segment_avoids(3, 4, 3, 3)
    # touching an endpoint counts as meeting
    assert not segment_avoids(3, 4, 2, 5)


@pytest.mark.parametrize("p", [0.3, 0.5, 0.8])
def test_dual_steps_avoid_forward_edges(p):
    for seed in range(20):
        cfg = FieldConfig(p, seed)
        x = next(x for x in range(100) if cfg.is_open(x, 0))
        d = dual_neighbours(cfg, Site(x, 0))[1]
        for _ in range(15):
            nxt = dual_step(cfg, d)
            row = d.t - 1
            for z in range(nxt.x2 // 2 - 30, nxt.x2 // 2 + 30):
                if cfg.is_open(z, row):
                    assert segment_avoids(d.x2, nxt.x2, z, h_of(cfg, z, row))
            d = nxt


def test_compiled_dual_path_matches_generic():
    for seed in range(40):
        cfg = FieldConfig(0.5, seed)
        x = next(x for x in range(100) if cfg.is_open(x, 3))
        d = dual_neighbours(cfg, Site(x, 3))[0]
        assert dual_path(Plain(cfg), d, 50) == dual_path_cfg(cfg, d, 50)


@pytest.mark.parametrize("p", [0.3, 0.8])
def test_neighbour_gap_is_geometric(p):
    gaps = []
    for seed in range(20_000):
        cfg = FieldConfig(p, seed)
        x = next(x for x in range(1000) if cfg.is_open(x, 0))
        gaps.append((dual_neighbours(cfg, Site(x, 0))[1].x2 - 2 * x))
    gaps = np.array(gaps)
    kmax = 8
    counts = np.bincount(np.minimum(gaps, kmax), minlength=kmax + 1)[1:]
    probs = p * (1 - p) ** np.arange(kmax - 1)
    probs = np.append(probs, 1 - probs.sum())
    assert stats.chisquare(counts, probs * len(gaps)).pvalue > 1e-3


# --- kernel

def test_kernel_values_at_half():
    assert kernel(KernelQuery(False, 0, 0.5)) == pytest.approx(1 / 3)
    assert kernel(KernelQuery(False, 1, 0.5)) == pytest.approx(1 / 6)
    assert kernel(KernelQuery(True, 1, 0.5)) == pytest.approx(5 / 24)
    assert kernel(KernelQuery(True, 0, 0.5)) == pytest.approx(1 / 6)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.8, 0.95])
def test_difference_closed_form_matches_series(p):
    for m in range(-6, 7):
        assert geometric_difference_pmf(m, p) == pytest.approx(geometric_difference_series(m, p), rel=1e-12)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.8])
@pytest.mark.parametrize("integer", [True, False])
def test_kernel_normalised_and_symmetric(p, integer):
    v = np.arange(-2000, 2001)
    k = kernel_array(integer, v, p)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(k, k[::-1])
    assert abs((v * k).sum()) < 1e-12
    assert np.all(k >= 0)


def _kernel_chi_square(v2, integer, p, state):
    sel = v2[integer == state]
    vals, counts = np.unique(sel, return_counts=True)
    probs = kernel_array(state, vals, p)
    exp = probs * len(sel)
    keep = exp >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    ex = np.append(exp[keep], len(sel) - exp[keep].sum())
    return stats.chisquare(obs, ex).pvalue


@pytest.mark.parametrize("p", [0.3, 0.5, 0.8])
def test_increment_law(p):
    v2, integer, ok = dual_increment_batch(np.uint64(5), np.uint64(8), p, 1 << 16, 10_000, 10)
    assert ok.all()
    for state in (True, False):
        assert _kernel_chi_square(v2.ravel(), integer.ravel(), p, state) > 1e-3


def test_increment_law_is_homogeneous_in_time():
    v2, integer, _ = dual_increment_batch(np.uint64(9), np.uint64(8), 0.5, 1 << 16, 20_000, 10)
    for state in (True, False):
        cols = [np.clip(v2[:, k][integer[:, k] == state], -4, 4) for k in range(10)]
        table = np.array([np.bincount(c + 4, minlength=9) for c in cols])
        table = table[:, table.sum(axis=0) > 0]
        assert stats.chi2_contingency(table).pvalue > 1e-3
