"""Command-line driver: ``riverweb <experiment> [options]``.

Every experiment writes per-replica rows (``<experiment>.csv`` or, with
``--format json``, ``<experiment>.json``) and a summary
``<experiment>_summary.json`` into ``--out``.  The summary is also printed.
Files contain no timestamps, so equal (config, seed) give identical bytes;
wall time goes to stderr only.

Exit codes: 0 on success, 2 on a configuration error, 1 on a runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, RiverwebError

EXPERIMENTS = ("survival", "width-law", "coupling", "gen-count-tail", "hack", "dmax",
               "area-tail", "dual-kernel", "invariants", "oracle-suite", "xi-count")
SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    experiment: str
    p: float = 0.5
    n: int = 256
    replicas: int = 10_000
    seed: int = 0
    cap_L: int | None = None
    out_dir: str = "."
    format: str = "csv"
    u: float = 1.0
    lam: float | None = None
    min_L: int = 32
    table_samples: int = 1_000_000

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not (0.0 < self.p < 1.0):
            raise ConfigError("--p must lie strictly inside (0, 1)")
        if self.n < 1:
            raise ConfigError("--n must be positive")
        if self.replicas < 1:
            raise ConfigError("--replicas must be positive")
        if not (0 <= self.seed < 1 << 64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if self.cap_L is not None and self.cap_L < 1:
            raise ConfigError("--cap-l must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError("--format must be csv or json")
        if self.u <= 0 or (self.lam is not None and self.lam <= 0):
            raise ConfigError("--u and --lam must be positive")
        if self.min_L < 1:
            raise ConfigError("--min-l must be positive")

    @property
    def cap(self) -> int:
        return 64 * self.n if self.cap_L is None else self.cap_L

    def echo(self) -> dict:
        return {"experiment": self.experiment, "p": self.p, "n": self.n,
                "replicas": self.replicas, "seed": self.seed, "cap_L": self.cap}


@dataclass
class ResultRecord:
    experiment: str
    config: dict
    columns: list[str]
    rows: list[tuple] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


# ---------------------------------------------------------------- emission

def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _plain_tree(obj):
    if isinstance(obj, dict):
        return {k: _plain_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain_tree(v) for v in obj]
    return _plain(obj)


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    v = _plain(v)
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def record_document(rec: ResultRecord) -> dict:
    return _plain_tree({
        "schema_version": SCHEMA_VERSION,
        "riverweb_version": __version__,
        "experiment": rec.experiment,
        "config": rec.config,
        "columns": rec.columns,
        "rows": [list(r) for r in rec.rows],
        "summary": rec.summary,
    })


def emit(rec: ResultRecord, out_dir, fmt: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if fmt == "csv":
        path = out / f"{rec.experiment}.csv"
        path.write_text(rows_to_csv(rec.columns, rec.rows))
    else:
        path = out / f"{rec.experiment}.json"
        path.write_text(json.dumps(record_document(rec), indent=1, sort_keys=True) + "\n")
    paths.append(path)
    spath = out / f"{rec.experiment}_summary.json"
    spath.write_text(json.dumps(_plain_tree(rec.summary), indent=1, sort_keys=True) + "\n")
    paths.append(spath)
    return paths


# ---------------------------------------------------------------- experiments

def _tail_summary(cfg: ExperimentConfig, est) -> dict:
    return {"experiment": cfg.experiment, "p": cfg.p, "n": cfg.n, "replicas": cfg.replicas,
            "p_hat": est.p_hat, "stderr": est.stderr, "ci_lo": est.ci95[0], "ci_hi": est.ci95[1],
            "target": est.target, "sqrt_n_p_hat": est.scaled, "threshold": est.threshold,
            "n_exceed": est.n_exceed, "n_censored": est.n_censored, "cap_L": cfg.cap}


def _fit_summary(cfg: ExperimentConfig, fit) -> dict:
    return {"experiment": cfg.experiment, "p": cfg.p, "replicas": cfg.replicas,
            "slope": fit.slope, "slope_stderr": fit.slope_stderr, "intercept": fit.intercept,
            "r2": fit.r2, "n_points": fit.n_points, "min_L": fit.min_L,
            "regressed_slope": fit.regressed_slope, "cap_L": cfg.cap}


def _field(cfg: ExperimentConfig):
    from .field import FieldConfig
    return FieldConfig(cfg.p, cfg.seed)


def run_survival(cfg):
    from .stats import estimate_survival, sample_clusters
    s = sample_clusters(_field(cfg), cfg.replicas, cfg.cap, cfg.n, "survival")
    est = estimate_survival(_field(cfg), cfg.n, cfg.replicas, cfg.cap, sample=s)
    seeds = s.seeds()
    rows = [(i, int(seeds[i]), int(s.L[i]), bool(s.censored[i])) for i in range(s.replicas)]
    return ResultRecord("survival", cfg.echo(), ["replica", "seed", "L", "censored"], rows,
                        _tail_summary(cfg, est))


def run_width_law(cfg):
    from .scaling import gamma0
    from .stats import conditional_width_law, sample_clusters, survivors
    s = sample_clusters(_field(cfg), cfg.replicas, cfg.n, cfg.n, "width-law")
    gof = conditional_width_law(_field(cfg), cfg.n, cfg.replicas, sample=s)
    alive = np.flatnonzero(survivors(s, cfg.n))
    scale = gamma0(cfg.p) * math.sqrt(cfg.n) * math.sqrt(2)
    x = s.width_probe[alive] / scale
    order = np.argsort(x, kind="stable")
    ecdf = np.empty(len(x))
    ecdf[order] = np.arange(1, len(x) + 1) / len(x)
    ref = -np.expm1(-x * x / 2)
    rows = [(int(i), int(s.width_probe[i]), x[j], ecdf[j], ref[j]) for j, i in enumerate(alive)]
    return ResultRecord("width-law", cfg.echo() | {"cap_L": cfg.n},
                        ["replica", "width", "x", "empirical_cdf", "rayleigh_cdf"], rows,
                        {"experiment": "width-law", "p": cfg.p, "n": cfg.n,
                         "replicas": cfg.replicas, "survivors": len(alive),
                         "ks": gof.statistic, "ks_pvalue": gof.p_value_or_bound})


def run_coupling(cfg):
    from .stats import sample_clusters, survivors, width_cluster_coupling
    s = sample_clusters(_field(cfg), cfg.replicas, cfg.n, cfg.n, "coupling")
    summ = width_cluster_coupling(_field(cfg), cfg.n, cfg.replicas, sample=s)
    alive = np.flatnonzero(survivors(s, cfg.n))
    rows = [(int(i), summ.values[j]) for j, i in enumerate(alive)]
    return ResultRecord("coupling", cfg.echo() | {"cap_L": cfg.n}, ["replica", "sup_diff"], rows,
                        {"experiment": "coupling", "p": cfg.p, "n": cfg.n,
                         "replicas": cfg.replicas, "survivors": summ.survivors,
                         "median": summ.median, "q90": summ.q90})


def run_gen_count_tail(cfg):
    from .stats import generation_count_tail, sample_clusters
    s = sample_clusters(_field(cfg), cfg.replicas, cfg.n, cfg.n, "gen-count-tail")
    est = generation_count_tail(_field(cfg), cfg.n, cfg.u, cfg.replicas, sample=s)
    rows = [(i, int(min(s.L[i], cfg.n + 1)), int(s.count_probe[i])) for i in range(s.replicas)]
    summ = _tail_summary(cfg, est)
    summ.update(u=cfg.u, cap_L=cfg.n)
    return ResultRecord("gen-count-tail", cfg.echo() | {"cap_L": cfg.n},
                        ["replica", "L_capped", "count_n"], rows, summ)


def _cluster_rows(s):
    return [(i, int(s.L[i]), int(s.total[i]), int(s.dmax[i])) for i in range(s.replicas)]


def run_hack(cfg):
    from .stats import hack_exponent, sample_clusters
    s = sample_clusters(_field(cfg), cfg.replicas, cfg.cap, 0, "hack")
    fit = hack_exponent(_field(cfg), cfg.replicas, cfg.min_L, cfg.cap, sample=s)
    return ResultRecord("hack", cfg.echo(), ["replica", "L", "area", "dmax"], _cluster_rows(s),
                        _fit_summary(cfg, fit) | {"censored": int(s.censored.sum())})


def run_dmax(cfg):
    from .stats import dmax_exponent, sample_clusters
    s = sample_clusters(_field(cfg), cfg.replicas, cfg.cap, 0, "dmax")
    fit = dmax_exponent(_field(cfg), cfg.replicas, cfg.min_L, cfg.cap, sample=s)
    return ResultRecord("dmax", cfg.echo(), ["replica", "L", "area", "dmax"], _cluster_rows(s),
                        _fit_summary(cfg, fit) | {"censored": int(s.censored.sum())})


def _area_table(cfg):
    from .oracle import excursion_tables
    cache = os.environ.get("RIVERWEB_CACHE")
    return excursion_tables(samples=cfg.table_samples, seed=cfg.seed, cache_dir=cache)


def run_area_tail(cfg):
    from .stats import area_tail_lambda, sample_clusters, total_area_tail
    table = _area_table(cfg)["excursion_area"]
    lam = cfg.lam if cfg.lam is not None else area_tail_lambda(cfg.p, 0.1, table)
    s = sample_clusters(_field(cfg), cfg.replicas, cfg.cap, cfg.n, "area-tail")
    est = total_area_tail(_field(cfg), cfg.n, lam, cfg.replicas, table, cfg.cap, sample=s)
    rows = [(i, int(s.L[i]), int(s.total[i]), bool(s.censored[i])) for i in range(s.replicas)]
    summ = _tail_summary(cfg, est)
    summ.update(lam=lam, table_seed=table.seed, table_samples=table.samples)
    return ResultRecord("area-tail", cfg.echo(), ["replica", "L", "area", "censored"], rows, summ)


def run_dual_kernel(cfg):
    from .dual import dual_increment_batch, kernel_array
    from .stats import chi_square, stream_id
    steps = cfg.n
    walks = max(1, math.ceil(cfg.replicas / steps))
    v2, integer, ok = dual_increment_batch(np.uint64(cfg.seed), np.uint64(stream_id("dual-kernel")),
                                           cfg.p, 1 << 16, walks, steps)
    if not ok.all():
        raise RiverwebError("a dual path hit the search cap")
    rows, summ = [], {"experiment": "dual-kernel", "p": cfg.p, "walks": walks, "steps": steps}
    for name, flag in (("half_integer", False), ("integer", True)):
        v = v2[integer == flag]
        span = int(np.abs(v).max()) if len(v) else 0
        grid = np.arange(-span, span + 1)
        counts = np.bincount(v + span, minlength=2 * span + 1) if len(v) else np.zeros(1, int)
        probs = kernel_array(flag, grid, cfg.p)
        rows += [(name, int(g), int(c), float(q * len(v))) for g, c, q in zip(grid, counts, probs)]
        gof = chi_square(counts, probs) if len(v) else None
        summ[name] = {"increments": int(len(v)), "mean_v2": float(v.mean()) if len(v) else 0.0,
                      "chi_square": gof.statistic if gof else None,
                      "dof": gof.dof if gof else None,
                      "p_value": gof.p_value_or_bound if gof else None}
    return ResultRecord("dual-kernel", cfg.echo(), ["state_type", "v2", "observed", "expected"],
                        rows, summ)


def run_invariants(cfg):
    from .invariants import CHECKS, run_invariants as run
    rep = run(cfg.p, cfg.replicas, cfg.seed)
    rows = [(c, rep.checked[c], rep.checked[c] - rep.violations[c], rep.violations[c])
            for c in CHECKS]
    summ = {"experiment": "invariants", "p": cfg.p, "windows": cfg.replicas,
            "checks": {c: {"checked": rep.checked[c], "passed": rep.checked[c] - rep.violations[c],
                           "violations": rep.violations[c]} for c in CHECKS},
            "violations": rep.total_violations}
    return ResultRecord("invariants", cfg.echo(), ["check", "checked", "passed", "violations"],
                        rows, summ)


def run_oracle_suite(cfg):
    from .oracle_suite import oracle_suite
    checks = oracle_suite(cfg.replicas, cfg.seed, _area_table(cfg)["excursion_area"])
    rows = [(c.name, c.value, c.target, c.lo, c.hi, c.passed) for c in checks]
    summ = {"experiment": "oracle-suite", "samples": cfg.replicas,
            "passed": sum(c.passed for c in checks), "total": len(checks),
            "checks": {c.name: {"value": c.value, "target": c.target, "passed": c.passed}
                       for c in checks}}
    return ResultRecord("oracle-suite", cfg.echo(),
                        ["check", "value", "target", "lo", "hi", "passed"], rows, summ)


def run_xi_count(cfg):
    from .scaling import gamma0, xi_batch
    from .oracle import ref_xi_mean
    from .stats import stream_id, xi_estimate
    w = math.sqrt(cfg.n) * gamma0(cfg.p)
    xi = xi_batch(np.uint64(cfg.seed), np.uint64(stream_id("xi-count")), cfg.p, 1 << 16,
                  cfg.replicas, cfg.n, w)
    if np.any(xi < 0):
        raise RiverwebError("a forward path hit the search cap")
    est, se = xi_estimate(xi, cfg.n, cfg.p)
    return ResultRecord("xi-count", cfg.echo(), ["replica", "xi"],
                        [(i, int(v)) for i, v in enumerate(xi)],
                        {"experiment": "xi-count", "p": cfg.p, "n": cfg.n,
                         "replicas": cfg.replicas, "mean": float(xi.mean()),
                         "stderr": float(xi.std(ddof=1) / math.sqrt(len(xi))) if len(xi) > 1 else 0.0,
                         "target": ref_xi_mean(1.0),
                         "survival_estimate": est, "survival_estimate_stderr": se})


RUNNERS = {
    "survival": run_survival, "width-law": run_width_law, "coupling": run_coupling,
    "gen-count-tail": run_gen_count_tail, "hack": run_hack, "dmax": run_dmax,
    "area-tail": run_area_tail, "dual-kernel": run_dual_kernel, "invariants": run_invariants,
    "oracle-suite": run_oracle_suite, "xi-count": run_xi_count,
}


def run(cfg: ExperimentConfig) -> ResultRecord:
    cfg.validate()
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="riverweb", description="Drainage network Monte Carlo experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--p", type=float, default=0.5, help="openness probability")
    ap.add_argument("--n", type=int, default=256, help="scale parameter")
    ap.add_argument("--replicas", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    ap.add_argument("--cap-l", dest="cap_L", type=int, default=None,
                    help="censoring cap on L (default 64 n)")
    ap.add_argument("--out", dest="out_dir", default=".", help="output directory")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--u", type=float, default=1.0, help="gen-count-tail level")
    ap.add_argument("--lam", type=float, default=None,
                    help="area-tail level (default: limit value 0.1)")
    ap.add_argument("--min-l", dest="min_L", type=int, default=32,
                    help="smallest L used by the hack and dmax fits")
    ap.add_argument("--table-samples", type=int, default=1_000_000,
                    help="excursions behind the tabulated area law")
    return ap


def apply_threads() -> None:
    value = os.environ.get("RIVERWEB_THREADS")
    if not value:
        return
    import numba
    try:
        k = int(value)
    except ValueError:
        raise ConfigError("RIVERWEB_THREADS must be an integer") from None
    if k < 1:
        raise ConfigError("RIVERWEB_THREADS must be positive")
    numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = ExperimentConfig(**vars(args))
    try:
        cfg.validate()
        apply_threads()
    except (ConfigError, ValueError) as e:
        print(f"riverweb: config error: {e}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        rec = run(cfg)
        emit(rec, cfg.out_dir, cfg.format)
    except RiverwebError as e:
        print(f"riverweb: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"riverweb: IO error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(_plain_tree(rec.summary), sort_keys=True))
    print(f"wall time {time.perf_counter() - start:.1f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
