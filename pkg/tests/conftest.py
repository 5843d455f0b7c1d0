import os

import pytest

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from riverweb.field import ArrayField, FieldConfig  # noqa: E402

MASTER_SEED = 20240611

# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def area_table(tmp_path_factory):
    """Tabulated excursion-area law from 1e6 excursions of length 1000."""
    from riverweb.oracle import excursion_tables

    cache = os.environ.get("RIVERWEB_CACHE") or tmp_path_factory.mktemp("tables")
    return excursion_tables(1000, 1_000_000, seed=MASTER_SEED, cache_dir=cache)


def _survival_sample(p):
    from riverweb.stats import default_cap, sample_clusters

    return sample_clusters(FieldConfig(p, MASTER_SEED), 200_000, default_cap(256), 256, "survival")


@pytest.fixture(scope="session")
def sample_p05():
    """2e5 clusters at p = 0.5, capped at 64 * 256, probing generation 256."""
    return _survival_sample(0.5)


@pytest.fixture(scope="session")
def sample_p08():
    return _survival_sample(0.8)


@pytest.fixture
def window_field():
    """Small hand-built window used by the forward and dual fixtures.

    rows (x = 0..6):
      t=1  #..#..#
      t=0  .#.#.#.
      t=-1 #.#..##
    """
    return ArrayField({1: "#..#..#", 0: ".#.#.#.", -1: "#.#..##"}, x0=0)
