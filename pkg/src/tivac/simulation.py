"""Simulation scenarios, the smoothed pointwise-Pearson baseline, and the RMSE benchmark."""

from __future__ import annotations

import csv
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .dataset import LongitudinalDataset, SubjectRecord
from .errors import ConfigError, TivacError
from .likelihood import rho_float
from .loess import DEFAULT_SPANS, loess, select_span
from .model import correlation_surface, fit

logger = logging.getLogger(__name__)

SIM_STREAM = 10
SHAPES = ("linear", "seasonal", "logistic", "zero")
COVARIATE_KINDS = ("binary", "continuous")
TIME_DESIGNS = {"T_Low": (3, 10), "T_Moderate": (3, 40), "T_High": (40, 40)}
COVARIATE_GRID_SIZE = 100
MIN_PAIRS = 3


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def coefficient_function(shape, role, u):
    """True coefficient ``beta0`` or ``beta1`` at normalized time ``u = t / t_max``."""
    u = np.asarray(u, dtype=float)
    if role not in ("beta0", "beta1"):
        raise ConfigError(f"unknown coefficient role {role!r}", code="bad_role")
    if shape == "linear":
        out = -0.5 + 1.5 * u if role == "beta0" else 1.0 - 0.8 * u
    elif shape == "seasonal":
        out = 0.6 * np.sin(2 * np.pi * u) if role == "beta0" else 0.8 * np.cos(2 * np.pi * u)
    elif shape == "logistic":
        if role == "beta0":
            out = -0.8 + 1.6 * _logistic(10.0 * (u - 0.5))
        else:
            out = 1.2 * _logistic(10.0 * (u - 0.4)) - 0.4
    elif shape == "zero":
        out = np.zeros_like(u)
    else:
        raise ConfigError(f"unknown shape {shape!r}; expected one of {SHAPES}", code="bad_shape")
    return out if out.ndim else float(out)


def _parse_time_design(value):
    if isinstance(value, (list, tuple)):
        if len(value) == 3 and str(value[0]).lower() == "custom":
            value = value[1:]
        lo, hi = (int(v) for v in value)
        return ("Custom", lo, hi)
    if isinstance(value, dict) and "custom" in value:
        lo, hi = (int(v) for v in value["custom"])
        return ("Custom", lo, hi)
    if isinstance(value, str):
        if value in TIME_DESIGNS:
            return value
        m = re.fullmatch(r"\s*Custom\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*", value, re.IGNORECASE)
        if m:
            return ("Custom", int(m.group(1)), int(m.group(2)))
    raise ConfigError(f"unknown time design {value!r}", code="bad_time_design")


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative configuration for one simulation cell.

    ``shape`` is a single trajectory name used for both coefficients, or a
    ``(beta0_shape, beta1_shape)`` pair.
    """

    covariate_kind: str = "binary"
    shape: object = "linear"
    time_design: object = "T_Moderate"
    n: int = 300
    t_max: int = 500
    sigma1_sq: float = 1.0
    sigma2_sq: float = 4.0
    noise_sd: float = 0.0
    replications: int = 50
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        shapes = (self.shape, self.shape) if isinstance(self.shape, str) else tuple(self.shape)
        if len(shapes) != 2:
            raise ConfigError("shape must be a name or a (beta0, beta1) pair", code="bad_shape")
        for s in shapes:
            if s not in SHAPES:
                raise ConfigError(f"unknown shape {s!r}; expected one of {SHAPES}", code="bad_shape")
        object.__setattr__(self, "shape", shapes[0] if shapes[0] == shapes[1] else shapes)
        if self.covariate_kind not in COVARIATE_KINDS:
            raise ConfigError(f"unknown covariate kind {self.covariate_kind!r}", code="bad_covariate_kind")
        object.__setattr__(self, "time_design", _parse_time_design(self.time_design))
        if self.n < 2:
            raise ConfigError("n must be at least 2", code="bad_scenario")
        if self.t_max < 2:
            raise ConfigError("t_max must be at least 2", code="bad_scenario")
        if not (self.noise_sd >= 0 and math.isfinite(self.noise_sd)):
            raise ConfigError("noise_sd must be finite and non-negative", code="bad_scenario")
        if self.sigma1_sq <= 0 or self.sigma2_sq <= 0:
            raise ConfigError("variances must be positive", code="bad_scenario")
        if self.replications < 0:
            raise ConfigError("replications must be non-negative", code="bad_scenario")
        lo, hi = self.m_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad observation-count range ({lo}, {hi})", code="bad_time_design")
        if hi > self.t_max:
            raise ConfigError(
                f"cannot draw {hi} distinct times from 1..{self.t_max}", code="bad_time_design"
            )

    @property
    def shapes(self):
        return (self.shape, self.shape) if isinstance(self.shape, str) else tuple(self.shape)

    @property
    def shape_label(self):
        b0, b1 = self.shapes
        return b0 if b0 == b1 else f"{b0}/{b1}"

    @property
    def m_range(self):
        if isinstance(self.time_design, str):
            return TIME_DESIGNS[self.time_design]
        return self.time_design[1], self.time_design[2]

    @property
    def design_label(self):
        if isinstance(self.time_design, str):
            return self.time_design
        return f"Custom({self.time_design[1]},{self.time_design[2]})"

    @property
    def label(self):
        return self.name or (
            f"{self.covariate_kind}-{self.shape_label}-{self.design_label}-noise{self.noise_sd:g}"
        )

    def beta(self, role, t):
        shape = self.shapes[0 if role == "beta0" else 1]
        return coefficient_function(shape, role, np.asarray(t, dtype=float) / self.t_max)

    def true_eta(self, t, x):
        """Fisher-scale predictor of the generating model.

        The trajectories are defined so that the true correlation is
        ``tanh(beta0 + beta1 x)``; on the ``log((1 + rho) / (1 - rho))`` scale
        used by the estimator that is twice the linear predictor.
        """
        return 2.0 * (self.beta("beta0", t) + self.beta("beta1", t) * x)

    def true_rho(self, t, x):
        return rho_float(self.true_eta(t, x))

    def to_dict(self):
        td = self.time_design if isinstance(self.time_design, str) else {"custom": list(self.m_range)}
        return {
            "name": self.name,
            "covariate_kind": self.covariate_kind,
            "shape": self.shape if isinstance(self.shape, str) else list(self.shape),
            "time_design": td,
            "n": self.n,
            "t_max": self.t_max,
            "sigma1_sq": self.sigma1_sq,
            "sigma2_sq": self.sigma2_sq,
            "noise_sd": self.noise_sd,
            "replications": self.replications,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}", code="bad_config")
        d = dict(d)
        if isinstance(d.get("shape"), list):
            d["shape"] = tuple(d["shape"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class GeneratedDataset:
    data: LongitudinalDataset
    scenario: ScenarioSpec
    replication: int
    x: np.ndarray = field(repr=False, default=None)

    def true_rho(self, t, x):
        return self.scenario.true_rho(t, x)


def draw_pairs(rng, rho, s1, s2):
    """One bivariate normal pair per entry of ``rho`` with SDs ``s1``, ``s2``."""
    rho = np.asarray(rho, dtype=float)
    z1 = rng.standard_normal(rho.shape)
    z2 = rng.standard_normal(rho.shape)
    return np.column_stack([s1 * z1, s2 * (rho * z1 + np.sqrt(1.0 - rho * rho) * z2)])


def generate(spec, replication_index=0):
    """Draw one dataset; deterministic in ``(spec.seed, replication_index)``.

    Covariates are stored as an intercept column and ``x``.
    """
    rng = _rng.generator(spec.seed, SIM_STREAM, replication_index)
    n = spec.n
    lo, hi = spec.m_range
    s1 = math.sqrt(spec.sigma1_sq)
    s2 = math.sqrt(spec.sigma2_sq)
    if spec.covariate_kind == "binary":
        x = np.zeros(n)
        x[rng.permutation(n)[: n // 2]] = 1.0
    else:
        x = rng.uniform(0.0, 1.0, size=n)
    width = len(str(n))
    subjects = []
    for i in range(n):
        m = int(rng.integers(lo, hi + 1))
        t = np.sort(rng.choice(np.arange(1, spec.t_max + 1), size=m, replace=False)).astype(float)
        eta = spec.true_eta(t, x[i])
        if spec.noise_sd > 0:
            # noise is on the same scale as the trajectories
            eta = eta + 2.0 * spec.noise_sd * rng.standard_normal(m)
        pairs = draw_pairs(rng, rho_float(eta), s1, s2)
        subjects.append(SubjectRecord(f"s{i:0{width}d}", t, pairs))
    X = np.column_stack([np.ones(n), x])
    data = LongitudinalDataset(tuple(subjects), X, ("intercept", "x"))
    return GeneratedDataset(data, spec, replication_index, x)


def evaluation_grid(data):
    """Integer study times covered by the observed time range."""
    t_min, t_max = data.time_range
    return np.arange(math.ceil(t_min), math.floor(t_max) + 1, dtype=float)


def pointwise_correlations(times, y1, y2, min_pairs=MIN_PAIRS):
    """Pearson correlation at each distinct time having at least ``min_pairs`` pairs."""
    times = np.asarray(times, dtype=float)
    uniq, inv, counts = np.unique(times, return_inverse=True, return_counts=True)
    t_out, r_out = [], []
    for j, t in enumerate(uniq):
        if counts[j] < min_pairs:
            continue
        sel = inv == j
        a = y1[sel] - y1[sel].mean()
        b = y2[sel] - y2[sel].mean()
        den = math.sqrt(float(a @ a) * float(b @ b))
        if den == 0:
            continue
        t_out.append(t)
        r_out.append(float(a @ b) / den)
    return np.array(t_out), np.array(r_out)


def empirical_baseline(data, group_by=None, grid=None, spans=DEFAULT_SPANS, folds=5, seed=0):
    """Smoothed pointwise Pearson correlations, per level of a binary covariate.

    Returns ``{level: curve on grid}``; the key is ``None`` when ``group_by`` is None.
    """
    if isinstance(data, GeneratedDataset):
        if group_by is None and data.scenario.covariate_kind == "binary":
            group_by = 1
        data = data.data
    grid = evaluation_grid(data) if grid is None else np.asarray(grid, dtype=float)
    idx, times, y1, y2 = data.pooled()
    if group_by is None:
        groups = {None: np.ones(times.size, dtype=bool)}
    else:
        col = data.covariates[:, group_by]
        levels = np.unique(col)
        if levels.size > 2:
            raise ConfigError(
                "the empirical baseline needs a binary grouping covariate", code="not_applicable"
            )
        groups = {float(lv): col[idx] == lv for lv in levels}
    out = {}
    for level, sel in groups.items():
        t, r = pointwise_correlations(times[sel], y1[sel], y2[sel])
        if t.size == 0:
            raise TivacError(f"group {level}: no time point has {MIN_PAIRS} or more pairs", code="empty_group")
        span = select_span(t, r, spans, folds, seed)
        out[level] = np.clip(loess(t, r, grid, span), -1.0, 1.0)
    return out


def rmse(estimated, truth):
    estimated = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimated.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimated.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((estimated - truth) ** 2)))


def covariate_grid():
    return np.linspace(0.0, 1.0, COVARIATE_GRID_SIZE)


def truth_by_group(gen, grid):
    """True correlations keyed like the method outputs: ``"0"``/``"1"`` for a
    binary covariate, ``"all"`` (covariate grid x time) for a continuous one."""
    sc = gen.scenario
    if sc.covariate_kind == "binary":
        return {"0": sc.true_rho(grid, 0.0), "1": sc.true_rho(grid, 1.0)}
    xs = covariate_grid()
    return {"all": np.stack([sc.true_rho(grid, x) for x in xs])}


def tivac_method(gen, grid, fit_config=None):
    model = fit(gen.data, fit_config)
    if gen.scenario.covariate_kind == "binary":
        return {
            "0": correlation_surface(model, [1.0, 0.0], grid),
            "1": correlation_surface(model, [1.0, 1.0], grid),
        }
    return {"all": np.stack([correlation_surface(model, [1.0, x], grid) for x in covariate_grid()])}


def empirical_method(gen, grid, fit_config=None):
    if gen.scenario.covariate_kind != "binary":
        raise TivacError("empirical baseline cannot handle a continuous covariate", code="not_applicable")
    seed = 0 if fit_config is None else fit_config.seed
    curves = empirical_baseline(gen.data, group_by=1, grid=grid, seed=seed)
    return {f"{int(k)}": v for k, v in curves.items()}


def _external_method(name):
    def method(gen, grid, fit_config=None):
        raise NotImplementedError(f"{name} is an external comparator; register an adapter with register_method")

    return method


METHODS = {
    "tivac": tivac_method,
    "empirical": empirical_method,
    "covreg": _external_method("covreg"),
    "cocoa_reml": _external_method("cocoa_reml"),
}


def register_method(name, fn):
    """Add a comparator ``fn(gen, grid, fit_config) -> {group: rho array}``."""
    METHODS[name] = fn


REPORT_COLUMNS = (
    "scenario", "shape", "covariate_kind", "time_design", "noise_sd",
    "method", "group", "replication", "rmse", "seconds",
)
AGGREGATE_COLUMNS = (
    "scenario", "shape", "covariate_kind", "time_design", "noise_sd",
    "method", "group", "n_ok", "n_missing", "mean_rmse", "sd_rmse",
)


@dataclass(frozen=True)
class BenchmarkRow:
    scenario: str
    shape: str
    covariate_kind: str
    time_design: str
    noise_sd: float
    method: str
    group: str
    replication: int
    rmse: float | None
    seconds: float | None = None


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass
class BenchmarkReport:
    rows: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([_cell(getattr(r, c)) for c in REPORT_COLUMNS])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
                raise TivacError(f"{path}: not a benchmark report", code="bad_report")
            rows = []
            for d in reader:
                rows.append(
                    BenchmarkRow(
                        scenario=d["scenario"],
                        shape=d["shape"],
                        covariate_kind=d["covariate_kind"],
                        time_design=d["time_design"],
                        noise_sd=float(d["noise_sd"]),
                        method=d["method"],
                        group=d["group"],
                        replication=int(d["replication"]),
                        rmse=float(d["rmse"]) if d["rmse"] else None,
                        seconds=float(d["seconds"]) if d["seconds"] else None,
                    )
                )
        return cls(rows)

    def aggregate(self):
        """Mean and SD (ddof=1) of RMSE per (scenario, method, group)."""
        cells = {}
        for r in self.rows:
            key = (r.scenario, r.shape, r.covariate_kind, r.time_design, r.noise_sd, r.method, r.group)
            cells.setdefault(key, []).append(r.rmse)
        out = []
        for key, vals in cells.items():
            ok = np.array([v for v in vals if v is not None], dtype=float)
            mean = float(ok.mean()) if ok.size else None
            sd = float(ok.std(ddof=1)) if ok.size > 1 else None
            out.append(dict(zip(AGGREGATE_COLUMNS, key + (int(ok.size), len(vals) - int(ok.size), mean, sd))))
        return out

    def write_aggregate(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGGREGATE_COLUMNS)
            for rec in self.aggregate():
                w.writerow([_cell(rec[c]) for c in AGGREGATE_COLUMNS])

    def select(self, **where):
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in where.items())]


def _groups_for(spec):
    return ("0", "1") if spec.covariate_kind == "binary" else ("all",)


def _run_cell(spec, rep, methods, fit_config, timing):
    gen = generate(spec, rep)
    grid = evaluation_grid(gen.data)
    truth = truth_by_group(gen, grid)
    rows = []
    for method in methods:
        start = time.perf_counter()
        try:
            est = METHODS[method](gen, grid, fit_config)
            scores = {g: rmse(est[g], truth[g]) for g in _groups_for(spec)}
        except (TivacError, NotImplementedError, np.linalg.LinAlgError) as exc:
            logger.warning("%s replication %d, %s failed: %s", spec.label, rep, method, exc)
            scores = {g: None for g in _groups_for(spec)}
        elapsed = time.perf_counter() - start if timing else None
        for g, value in scores.items():
            rows.append(
                BenchmarkRow(
                    spec.label, spec.shape_label, spec.covariate_kind, spec.design_label,
                    float(spec.noise_sd), method, g, rep, value, elapsed,
                )
            )
    return rows


def run_benchmark(specs, methods=("tivac", "empirical"), fit_config=None, threads=1, timing=False):
    """Generate, fit and score every (scenario, replication) cell.

    Wall-clock seconds are recorded only when ``timing`` is set, so that reports
    are reproducible byte for byte by default.
    """
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; available: {sorted(METHODS)}", code="bad_method")
    tasks = [(spec, rep) for spec in specs for rep in range(spec.replications)]

    def run(task):
        return _run_cell(task[0], task[1], methods, fit_config, timing)

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, tasks))
    else:
        chunks = [run(t) for t in tasks]
    return BenchmarkReport([r for chunk in chunks for r in chunk])


def study_specs(full_scale=False, seed=0):
    """Every benchmark cell: both covariate kinds and all shapes, crossed with
    each noise-free time design and with noise levels 0.1 to 0.5 under T_Moderate.

    The default small scale uses n=150, t_max=200 and 10 replications.
    """
    n, t_max, reps = (300, 500, 50) if full_scale else (150, 200, 10)
    specs = []
    for kind in COVARIATE_KINDS:
        for shape in ("linear", "seasonal", "logistic"):
            for design in TIME_DESIGNS:
                specs.append(ScenarioSpec(kind, shape, design, n, t_max, replications=reps, seed=seed))
            for noise in (0.1, 0.2, 0.3, 0.4, 0.5):
                specs.append(
                    ScenarioSpec(kind, shape, "T_Moderate", n, t_max, noise_sd=noise, replications=reps, seed=seed)
                )
    return specs
