"""Nested-bootstrap simultaneous confidence bands for the coefficient curves.

Subjects are resampled with replacement (keeping their observation times).
The outer loop measures the spread of the curve estimates; an inner loop on
each outer sample gives the per-time standard deviations that studentize the
max-deviation statistic. Smoothing parameters and variances stay frozen at
the values of the original fit.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import ConfigError, ConvergenceError, TivacError
from .likelihood import build_design
from .model import coefficient_curves, default_grid, refit
from .splines import basis_matrix

OUTER_STREAM = 2
INNER_STREAM = 3
MAX_DROPPED_FRACTION = 0.2
SD_FLOOR = 1e-10


@dataclass(frozen=True)
class BandConfig:
    B: int = 200
    M: int = 50
    alpha: float = 0.05
    grid: tuple | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}", code="bad_alpha")
        if self.B < 50:
            raise ConfigError(f"B must be at least 50, got {self.B}", code="bad_bootstrap")
        if self.M < 10:
            raise ConfigError(f"M must be at least 10, got {self.M}", code="bad_bootstrap")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1", code="bad_threads")


@dataclass(frozen=True, eq=False)
class BandResult:
    k: int
    name: str
    grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    half_width: np.ndarray
    critical_value: float
    sd: np.ndarray
    t_stats: np.ndarray
    dropped_replicates: int
    degenerate_points: int
    B: int
    M: int
    alpha: float

    def sidecar(self):
        return {
            "covariate": self.k,
            "name": self.name,
            "T_crit": self.critical_value,
            "B": self.B,
            "M": self.M,
            "alpha": self.alpha,
            "surviving_replicates": int(self.t_stats.size),
            "dropped_replicates": self.dropped_replicates,
            "degenerate_points": self.degenerate_points,
            "significant_intervals": [list(iv) for iv in significant_intervals(self)],
        }


def critical_value(t_stats, alpha):
    """The ``ceil((1 - alpha)(B' + 1))``-th order statistic, capped at the maximum."""
    t = np.sort(np.asarray(t_stats, dtype=float))
    if t.size == 0:
        raise TivacError("no bootstrap statistics to take a quantile of")
    r = math.ceil((1.0 - alpha) * (t.size + 1))
    r = min(max(r, 1), t.size)
    return float(t[r - 1])


def _resample(rng, pool, size):
    return pool[rng.integers(0, pool.size, size=size)]


def _outer_replicate(b, model, design, subj_rows, Bgrid, cfg):
    n = len(subj_rows)
    q, p = model.spec.q, model.p
    all_idx = np.arange(n)
    idx = _resample(_rng.generator(cfg.seed, OUTER_STREAM, b), all_idx, n)
    sample = design.take(np.concatenate([subj_rows[i] for i in idx]))
    try:
        theta_b, rep = refit(model, sample)
    except ConvergenceError:
        return None
    if not rep.converged:
        return None
    curves_b = np.stack([Bgrid @ theta_b[k * q:(k + 1) * q] for k in range(p)])
    inner = []
    for m in range(cfg.M):
        idx_m = _resample(_rng.generator(cfg.seed, INNER_STREAM, b, m), idx, n)
        sample_m = design.take(np.concatenate([subj_rows[i] for i in idx_m]))
        try:
            theta_bm, rep_m = refit(model, sample_m, init=theta_b)
        except ConvergenceError:
            continue
        if rep_m.converged:
            inner.append(np.stack([Bgrid @ theta_bm[k * q:(k + 1) * q] for k in range(p)]))
    if len(inner) < 2:
        return None
    inner_sd = np.std(np.stack(inner), axis=0, ddof=1)
    return curves_b, inner_sd


def bootstrap_scb(data, model, band_config=None):
    """Simultaneous bands ``beta_k(t) +/- T_crit * s_t``, one per covariate."""
    cfg = band_config or BandConfig()
    grid = np.asarray(cfg.grid if cfg.grid is not None else default_grid(model), dtype=float)
    Bgrid = basis_matrix(model.spec, grid)
    design = build_design(data, model.spec)
    subj_rows = design.rows_of()
    estimate = coefficient_curves(model, grid)

    def run(b):
        return _outer_replicate(b, model, design, subj_rows, Bgrid, cfg)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, range(cfg.B)))
    else:
        results = [run(b) for b in range(cfg.B)]

    kept = [r for r in results if r is not None]
    dropped = cfg.B - len(kept)
    if dropped > MAX_DROPPED_FRACTION * cfg.B:
        raise ConvergenceError(
            f"{dropped} of {cfg.B} bootstrap replicates failed to converge", code="band_diverged"
        )
    outer = np.stack([r[0] for r in kept])        # (B', p, G)
    inner_sd = np.stack([r[1] for r in kept])     # (B', p, G)
    sd = np.std(outer, axis=0, ddof=1)            # (p, G)

    bands = []
    for k in range(model.p):
        dev = np.abs(outer[:, k, :] - estimate[k])
        ok = inner_sd[:, k, :] >= SD_FLOOR
        ratio = np.where(ok, dev / np.where(ok, inner_sd[:, k, :], 1.0), 0.0)
        t_stats = ratio.max(axis=1)
        t_crit = critical_value(t_stats, cfg.alpha)
        half = t_crit * sd[k]
        bands.append(
            BandResult(
                k=k,
                name=model.covariate_names[k],
                grid=grid,
                estimate=estimate[k],
                lower=estimate[k] - half,
                upper=estimate[k] + half,
                half_width=half,
                critical_value=t_crit,
                sd=sd[k],
                t_stats=t_stats,
                dropped_replicates=dropped,
                degenerate_points=int((~ok).sum()),
                B=cfg.B,
                M=cfg.M,
                alpha=cfg.alpha,
            )
        )
    return bands


def significant_intervals(band):
    """Maximal runs of grid points where the band excludes zero, as ``(t_start, t_end)``.

    Runs above zero and runs below zero are reported separately.
    """
    sign = np.where(band.lower > 0, 1, np.where(band.upper < 0, -1, 0))
    out = []
    start = None
    for i, s in enumerate(sign):
        if start is not None and s != sign[start]:
            out.append((float(band.grid[start]), float(band.grid[i - 1])))
            start = None
        if start is None and s != 0:
            start = i
    if start is not None:
        out.append((float(band.grid[start]), float(band.grid[-1])))
    return out


def write_band(band, csv_path, json_path, extra=None):
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "estimate", "lower", "upper"])
        for row in zip(band.grid, band.estimate, band.lower, band.upper):
            w.writerow([format(float(v), ".17g") for v in row])
    meta = band.sidecar()
    if extra:
        meta.update(extra)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
