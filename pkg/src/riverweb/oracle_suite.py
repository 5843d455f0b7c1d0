"""The oracle's self-checks against closed-form laws, as one report."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracle import (
    SQRT_2_OVER_PI,
    SQRT_PI_OVER_2,
    TailTable,
    excursion_batch,
    first_return_constants,
    meander_batch,
    ref_excursion_area_tail_asym,
    ref_excursion_max_cdf,
    ref_rayleigh_cdf,
    shifted_area_law_check,
)
from .stats import ks_distance, stream_id

SHIFTED_PAIRS = ((1.0, 0.5), (1.0, 1.0), (2.0, 1.0))


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    target: float
    lo: float
    hi: float

    @property
    def passed(self) -> bool:
        return self.lo <= self.value <= self.hi


def _band(name, value, target, tol):
    return Check(name, float(value), target, target - tol, target + tol)


def oracle_suite(samples: int, seed: int, area_table: TailTable,
                 meander_m: int = 1000, excursion_m: int = 2000, first_return_m: int = 10_000,
                 walks_per_sample: int = 100, shifted_samples: int | None = None) -> list[Check]:
    """Run every oracle check with ``samples`` draws per sampler."""
    s = np.uint64(seed)
    out = []
    end, _ = meander_batch(s, np.uint64(stream_id("meander")), meander_m, samples)
    ks = ks_distance(end, ref_rayleigh_cdf).statistic
    out.append(Check("meander_endpoint_ks", ks, 0.0, 0.0, 0.02))
    out.append(_band("meander_endpoint_mean", end.mean(), SQRT_PI_OVER_2, 0.01))

    _, top = excursion_batch(s, np.uint64(stream_id("excursion")), excursion_m, samples)
    out.append(_band("excursion_max_mean", top.mean(), SQRT_PI_OVER_2, 0.01))
    for x in (0.6, 1.0, 1.5):
        out.append(_band(f"excursion_max_cdf_{x}", (top <= x).mean(), ref_excursion_max_cdf(x), 0.01))

    ratio = float(area_table.sf(1.0)) / ref_excursion_area_tail_asym(1.0)
    out.append(Check("excursion_area_tail_ratio", ratio, 1.0, 0.7, 1.3))

    fr = first_return_constants(first_return_m, walks_per_sample * samples, seed)
    out.append(Check("first_return_tail", fr.tail, SQRT_2_OVER_PI, 0.75, 0.85))
    out.append(Check("first_return_density", fr.density, 1 / math.sqrt(2 * math.pi), 0.36, 0.44))

    n_shift = samples // 5 if shifted_samples is None else shifted_samples
    for tau, lam in SHIFTED_PAIRS:
        c = shifted_area_law_check(tau, lam, area_table, samples=n_shift, seed=seed)
        out.append(Check(f"shifted_area_{tau:g}_{lam:g}", c.lhs - c.rhs, 0.0, -0.02, 0.02))
        if (tau, lam) == SHIFTED_PAIRS[0]:
            ks = ks_distance(c.endpoints, ref_rayleigh_cdf).statistic
            out.append(Check("shifted_endpoint_ks", ks, 0.0, 0.0, 0.02))
    return out
