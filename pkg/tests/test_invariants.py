import pytest

from riverweb.field import FieldConfig
from riverweb.invariants import CHECKS, run_invariants, window_invariants


@pytest.mark.parametrize("p", [0.3, 0.5, 0.8])
def test_no_violations_on_small_runs(p):
    rep = run_invariants(p, 300, seed=11)
    assert rep.total_violations == 0
    assert set(rep.checked) == set(CHECKS)
    assert all(rep.checked[c] > 0 for c in CHECKS)
    assert rep.as_dict()["violations"] == {c: 0 for c in CHECKS}


def test_window_counts_every_open_site():
    cfg = FieldConfig(0.5, 4)
    out = window_invariants(cfg.key, cfg.threshold, cfg.search_cap, 5, 7, 256)
    opened = sum(cfg.is_open(x, t) for x in range(-5, 6) for t in range(7))
    assert out[0, 0] == opened
    assert out[:, 1].sum() == 0


def test_too_small_search_cap_is_reported():
    # a cap of 1 cannot bridge typical gaps at p = 0.1, so checks must fail loudly
    rep = run_invariants(0.1, 50, seed=2, search_cap=1)
    assert rep.total_violations > 0


def test_runs_are_reproducible():
    a = run_invariants(0.5, 100, seed=3)
    b = run_invariants(0.5, 100, seed=3)
    assert a == b
