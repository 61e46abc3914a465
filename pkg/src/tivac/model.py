"""Fit pipeline: cross-validated smoothing parameters, final fit, curve extraction."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import ConfigError, ConvergenceError, DataError
from .likelihood import (
    NewtonControls,
    NewtonReport,
    VarianceEstimates,
    build_design,
    estimate_variances,
    loglik,
    newton_raphson,
    rho_float,
)
from .splines import SplineSpec, basis_matrix, difference_penalty, make_spec

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(float(x) for x in np.logspace(-2, 6, 9))
DEFAULT_INTERIOR_KNOTS = 10
PAIRS_PER_KNOT_INTERVAL = 20
CV_STREAM = 1


@dataclass(frozen=True)
class FitConfig:
    """Options for :func:`fit`. ``interior_knots=None`` picks a data-driven count
    capped at 10."""

    interior_knots: int | None = None
    order: int = 4
    difference_order: int = 2
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    cv_folds: int = 10
    cv_cycles: int = 2
    newton: NewtonControls = field(default_factory=NewtonControls)
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(x) for x in self.lambda_grid)
        if not grid or any(not (math.isfinite(x) and x > 0) for x in grid):
            raise ConfigError("lambda grid must be nonempty and strictly positive", code="bad_lambda_grid")
        object.__setattr__(self, "lambda_grid", tuple(sorted(set(grid))))
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2", code="bad_folds")

    def to_dict(self):
        return {
            "interior_knots": self.interior_knots,
            "order": self.order,
            "difference_order": self.difference_order,
            "lambda_grid": list(self.lambda_grid),
            "cv_folds": self.cv_folds,
            "cv_cycles": self.cv_cycles,
            "newton": vars(self.newton).copy(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "newton" in d:
            d["newton"] = NewtonControls(**d["newton"])
        if "lambda_grid" in d:
            d["lambda_grid"] = tuple(d["lambda_grid"])
        return cls(**d)


def default_knot_count(n_obs, cap=DEFAULT_INTERIOR_KNOTS):
    """Largest count <= cap leaving about 20 observation pairs per knot interval."""
    return int(max(0, min(cap, n_obs // PAIRS_PER_KNOT_INTERVAL - 1)))


def spec_for(data, config):
    t_min, t_max = data.time_range
    k = config.interior_knots
    if k is None:
        k = default_knot_count(data.n_observations)
    return make_spec(t_min, t_max, k, config.order)


@dataclass(frozen=True)
class CVRecord:
    lambdas: tuple
    heldout_loglik: float
    fold_scores: tuple

    def to_dict(self):
        def enc(x):
            return None if not math.isfinite(x) else x

        return {
            "lambdas": list(self.lambdas),
            "heldout_loglik": enc(self.heldout_loglik),
            "fold_scores": [enc(x) for x in self.fold_scores],
        }

    @classmethod
    def from_dict(cls, d):
        def dec(x):
            return -math.inf if x is None else float(x)

        return cls(tuple(d["lambdas"]), dec(d["heldout_loglik"]), tuple(dec(x) for x in d["fold_scores"]))


@dataclass(frozen=True)
class CVResult:
    lambdas: tuple
    table: tuple


def fold_assignment(n, folds, seed):
    """Seeded random permutation of subjects cut into contiguous blocks."""
    perm = _rng.generator(seed, CV_STREAM).permutation(n)
    return [np.sort(block) for block in np.array_split(perm, folds)]


def cross_validate(data, config, spec=None, variances=None):
    """Choose per-covariate smoothing parameters by subject-level K-fold CV.

    Coordinate-wise search over ``config.lambda_grid`` starting from the grid
    median; each candidate is scored by the summed held-out (unpenalized)
    log-likelihood. Ties go to the larger value.
    """
    grid = config.lambda_grid
    p = data.p
    if len(grid) == 1:
        return CVResult((grid[0],) * p, ())
    if config.cv_folds > data.n:
        raise ConfigError(f"cv_folds={config.cv_folds} exceeds n={data.n}", code="bad_folds")
    spec = spec or spec_for(data, config)
    variances = variances or estimate_variances(data)
    penalty = difference_penalty(spec.q, config.difference_order)
    design = build_design(data, spec)
    subj_rows = design.rows_of()
    folds = fold_assignment(data.n, config.cv_folds, config.seed)
    splits = []
    for held in folds:
        mask = np.ones(data.n, dtype=bool)
        mask[held] = False
        train_rows = np.concatenate([subj_rows[i] for i in np.nonzero(mask)[0]])
        test_rows = np.concatenate([subj_rows[i] for i in held])
        splits.append((design.take(train_rows), design.take(test_rows)))

    cache = {}
    fold_ok = [False] * len(splits)

    def score(lams):
        if lams in cache:
            return cache[lams].heldout_loglik
        scores = []
        for f, (train, test) in enumerate(splits):
            init = np.zeros(spec.q * p)
            try:
                theta, rep = newton_raphson(init, lams, train, spec, variances, penalty, config.newton)
            except ConvergenceError:
                rep = None
            if rep is None or not rep.converged:
                scores.append(-math.inf)
                continue
            fold_ok[f] = True
            scores.append(loglik(theta, test, spec, variances))
        rec = CVRecord(lams, float(np.sum(scores)), tuple(scores))
        cache[lams] = rec
        logger.debug("cv lambdas=%s heldout=%.6g", lams, rec.heldout_loglik)
        return rec.heldout_loglik

    current = [grid[len(grid) // 2]] * p
    for _ in range(config.cv_cycles):
        changed = False
        for k in range(p):
            best_val, best_score = None, -math.inf
            for val in grid:
                cand = tuple(current[:k] + [val] + current[k + 1:])
                s = score(cand)
                if best_val is None or s >= best_score:
                    best_val, best_score = val, s
            if best_val != current[k]:
                current[k] = best_val
                changed = True
        if not changed:
            break
    for f, ok in enumerate(fold_ok):
        if not ok:
            raise ConvergenceError(f"training fit for CV fold {f} diverged for every smoothing parameter tried")
    return CVResult(tuple(current), tuple(cache.values()))


@dataclass(frozen=True, eq=False)
class FittedModel:
    theta_hat: np.ndarray
    lambdas_hat: tuple
    spec: SplineSpec
    variances: VarianceEstimates
    report: NewtonReport
    cv_table: tuple
    covariate_names: tuple
    config: FitConfig
    preprocessing: dict = field(default_factory=dict)

    @property
    def p(self):
        return len(self.covariate_names)

    def theta_block(self, k):
        q = self.spec.q
        return self.theta_hat[k * q:(k + 1) * q]

    def to_dict(self):
        return {
            "format": "tivac-model",
            "version": 1,
            "covariate_names": list(self.covariate_names),
            "spec": self.spec.to_dict(),
            "theta": [float(x) for x in self.theta_hat],
            "lambdas": list(self.lambdas_hat),
            "variances": {"sigma1_sq": self.variances.sigma1_sq, "sigma2_sq": self.variances.sigma2_sq},
            "report": self.report.to_dict(),
            "cv_table": [r.to_dict() for r in self.cv_table],
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "preprocessing": self.preprocessing,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "tivac-model":
            raise DataError("not a serialized model", code="bad_model")
        theta = np.array(d["theta"], dtype=float)
        theta.setflags(write=False)
        return cls(
            theta_hat=theta,
            lambdas_hat=tuple(float(x) for x in d["lambdas"]),
            spec=SplineSpec.from_dict(d["spec"]),
            variances=VarianceEstimates(**d["variances"]),
            report=NewtonReport(**d["report"]),
            cv_table=tuple(CVRecord.from_dict(r) for r in d["cv_table"]),
            covariate_names=tuple(d["covariate_names"]),
            config=FitConfig.from_dict(d["config"]),
            preprocessing=d.get("preprocessing", {}),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return FittedModel.from_json(fh.read())


def fit(data, config=None, preprocessing=None):
    """Estimate variances, select smoothing parameters by CV, then fit all data."""
    config = config or FitConfig()
    if config.cv_folds > data.n and len(config.lambda_grid) > 1:
        raise ConfigError(f"cv_folds={config.cv_folds} exceeds n={data.n}", code="bad_folds")
    spec = spec_for(data, config)
    variances = estimate_variances(data)
    cv = cross_validate(data, config, spec, variances)
    penalty = difference_penalty(spec.q, config.difference_order)
    design = build_design(data, spec)
    theta, report = newton_raphson(
        np.zeros(spec.q * data.p), cv.lambdas, design, spec, variances, penalty, config.newton
    )
    if not report.converged:
        raise ConvergenceError(
            f"final fit did not converge after {report.iterations} iterations "
            f"(gradient norm {report.final_gradient_norm:.3g})"
        )
    theta.setflags(write=False)
    return FittedModel(
        theta_hat=theta,
        lambdas_hat=cv.lambdas,
        spec=spec,
        variances=variances,
        report=report,
        cv_table=cv.table,
        covariate_names=data.covariate_names,
        config=config,
        preprocessing=dict(preprocessing or {}),
    )


def refit(model, design, init=None):
    """Refit theta on ``design`` with the model's frozen smoothing parameters and
    variances. Used by the bootstrap."""
    penalty = difference_penalty(model.spec.q, model.config.difference_order)
    init = model.theta_hat if init is None else init
    return newton_raphson(
        init, model.lambdas_hat, design, model.spec, model.variances, penalty, model.config.newton
    )


def default_grid(model_or_spec, points=200):
    spec = model_or_spec.spec if isinstance(model_or_spec, FittedModel) else model_or_spec
    return np.linspace(spec.t_min, spec.t_max, points)


def coefficient_curve(model, k, grid):
    return basis_matrix(model.spec, grid) @ model.theta_block(k)


def coefficient_curves(model, grid):
    """All ``p`` coefficient curves as a ``(p, len(grid))`` array."""
    B = basis_matrix(model.spec, grid)
    return np.stack([B @ model.theta_block(k) for k in range(model.p)])


def eta_curve(model, x, grid):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.p:
        raise ConfigError(f"covariate vector has length {x.size}, model has p={model.p}", code="bad_x")
    return x @ coefficient_curves(model, grid)


def correlation_surface(model, x, grid):
    return rho_float(eta_curve(model, x, grid))
