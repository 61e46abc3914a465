"""Bivariate Gaussian log-likelihood in the spline coefficients and its maximizer.

The correlation enters through ``eta = log((1 + rho) / (1 - rho))``, so that
``rho = tanh(eta / 2)``. Writing ``u = y1 / sigma1`` and ``v = y2 / sigma2``, the
per-observation log density is

    -log(2 pi) - log(sigma1 sigma2) + log cosh(eta/2)
        - (u^2 + v^2) (1 + cosh eta) / 4 + u v sinh(eta) / 2

which avoids forming ``1 - rho^2`` and keeps the derivatives in ``eta`` simple.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np
from scipy.linalg import cho_solve

from .dataset import LongitudinalDataset
from .errors import ConvergenceError, DataError
from .splines import basis_matrix

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class VarianceEstimates:
    sigma1_sq: float
    sigma2_sq: float

    def __post_init__(self):
        for name in ("sigma1_sq", "sigma2_sq"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DataError(f"{name} must be positive and finite, got {v}", code="zero_variance")


@dataclass(frozen=True, eq=False)
class DesignIndex:
    """Stacked Kronecker design rows ``A_ij = X_i (x) b(t_ij)`` and the outcomes.

    Column ``k * q + l`` holds ``X_ik * b_l(t_ij)`` so that ``A @ theta`` matches
    the stacking ``theta = (theta_1, ..., theta_p)``. ``rows_of[i]`` lists the
    rows belonging to subject ``i``.
    """

    A: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    q: int
    p: int
    subject: np.ndarray = None

    @property
    def n_obs(self):
        return self.A.shape[0]

    def rows_of(self):
        order = np.argsort(self.subject, kind="stable")
        counts = np.bincount(self.subject)
        return np.split(order, np.cumsum(counts)[:-1])

    def take(self, rows):
        """Design restricted to ``rows`` (rows may repeat, as in bootstrap samples)."""
        rows = np.asarray(rows, dtype=np.intp)
        subj = None if self.subject is None else self.subject[rows]
        return DesignIndex(self.A[rows], self.y1[rows], self.y2[rows], self.q, self.p, subj)

    @classmethod
    def empty(cls, q, p):
        z = np.zeros(0)
        return cls(np.zeros((0, q * p)), z, z, q, p, np.zeros(0, dtype=np.intp))


def design_rows(X, B):
    """Kronecker rows from per-observation covariates ``X`` (N x p) and bases ``B`` (N x q)."""
    X = np.asarray(X, dtype=float)
    B = np.asarray(B, dtype=float)
    N = B.shape[0]
    return (X[:, :, None] * B[:, None, :]).reshape(N, X.shape[1] * B.shape[1])


def build_design(data, spec):
    idx, times, y1, y2 = data.pooled()
    B = basis_matrix(spec, times)
    A = design_rows(data.covariates[idx], B)
    return DesignIndex(A, y1, y2, spec.q, data.p, idx)


def _as_design(data, spec):
    if isinstance(data, DesignIndex):
        return data
    if isinstance(data, LongitudinalDataset):
        return build_design(data, spec)
    raise TypeError(f"expected LongitudinalDataset or DesignIndex, got {type(data).__name__}")


def estimate_variances(data):
    """Pooled moment estimates (denominator N) of the two marginal variances."""
    if isinstance(data, DesignIndex):
        y1, y2 = data.y1, data.y2
    else:
        _, _, y1, y2 = data.pooled()
    if y1.size < 2:
        raise DataError("need at least two observations to estimate variances", code="zero_variance")
    s1 = float(np.var(y1))
    s2 = float(np.var(y2))
    if s1 <= 0 or s2 <= 0:
        raise DataError("an outcome coordinate has zero variance", code="zero_variance")
    return VarianceEstimates(s1, s2)


def rho_of_eta(eta):
    """``tanh(eta / 2)`` in extended precision.

    Near +/-1 a double cannot resolve ``1 - rho`` finely enough to invert back
    to ``eta`` (at ``eta = 20`` one ulp of rho is worth about 1e-8 in eta), so
    the result is a ``np.longdouble``. Cast to float when that does not matter.
    """
    rho = np.tanh(np.asarray(eta, dtype=np.longdouble) / 2)
    edge = np.nextafter(np.longdouble(1), np.longdouble(0))
    return np.clip(rho, -edge, edge)


def rho_float(eta):
    """``rho_of_eta`` as float64, still strictly inside (-1, 1)."""
    edge = np.nextafter(1.0, 0.0)
    return np.clip(rho_of_eta(eta).astype(float), -edge, edge)


def eta_of_rho(rho):
    rho = np.asarray(rho, dtype=np.longdouble)
    if np.any(~(np.abs(rho) < 1)):
        raise ValueError("correlation must lie strictly inside (-1, 1)")
    # 2 artanh(rho) == log((1 + rho) / (1 - rho))
    return (2 * np.arctanh(rho)).astype(float)


def eta(theta, row):
    return float(np.dot(row, theta))


def _standardized(design, variances):
    u = design.y1 / np.sqrt(variances.sigma1_sq)
    v = design.y2 / np.sqrt(variances.sigma2_sq)
    return u, v


def _obs_terms(eta_vals, u, v, order):
    """Per-observation log density and its first ``order`` eta-derivatives."""
    s = u * u + v * v
    uv = u * v
    with np.errstate(over="ignore", invalid="ignore"):
        ch = np.cosh(eta_vals)
        sh = np.sinh(eta_vals)
        half = eta_vals / 2.0
        logcosh = np.logaddexp(half, -half) - np.log(2.0)
        out = [logcosh - 0.25 * s * (1.0 + ch) + 0.5 * uv * sh]
        if order >= 1:
            out.append(0.5 * np.tanh(half) - 0.25 * s * sh + 0.5 * uv * ch)
        if order >= 2:
            sech2 = 1.0 - np.tanh(half) ** 2
            out.append(0.25 * sech2 - 0.25 * s * ch + 0.5 * uv * sh)
    return out


def loglik(theta, data, spec, variances):
    design = _as_design(data, spec)
    theta = np.asarray(theta, dtype=float)
    u, v = _standardized(design, variances)
    (terms,) = _obs_terms(design.A @ theta, u, v, 0)
    const = -LOG_2PI - 0.5 * np.log(variances.sigma1_sq * variances.sigma2_sq)
    total = float(np.sum(terms) + const * design.n_obs)
    return total if np.isfinite(total) else -np.inf


def block_penalty(lambdas, penalty):
    """Block-diagonal ``diag(lambda_k) (x) D'D`` acting on the stacked theta."""
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    return np.kron(np.diag(lambdas), penalty.matrix)


def penalized_loglik(theta, lambdas, data, spec, variances, penalty):
    theta = np.asarray(theta, dtype=float)
    S = block_penalty(lambdas, penalty)
    return loglik(theta, data, spec, variances) - 0.5 * float(theta @ S @ theta)


def gradient(theta, lambdas, data, spec, variances, penalty):
    design = _as_design(data, spec)
    theta = np.asarray(theta, dtype=float)
    u, v = _standardized(design, variances)
    _, d1 = _obs_terms(design.A @ theta, u, v, 1)
    return design.A.T @ d1 - block_penalty(lambdas, penalty) @ theta


def hessian(theta, lambdas, data, spec, variances, penalty):
    design = _as_design(data, spec)
    theta = np.asarray(theta, dtype=float)
    u, v = _standardized(design, variances)
    _, _, d2 = _obs_terms(design.A @ theta, u, v, 2)
    H = (design.A * d2[:, None]).T @ design.A
    H = 0.5 * (H + H.T)
    return H - block_penalty(lambdas, penalty)


@dataclass(frozen=True)
class NewtonControls:
    max_iter: int = 100
    grad_tol: float = 1e-6
    min_step: float = 1e-10
    ridge_start: float = 1e-8
    ridge_max: float = 1e12


@dataclass(frozen=True)
class NewtonReport:
    converged: bool
    iterations: int
    final_gradient_norm: float
    final_penalized_loglik: float
    step_halvings: int
    hessian_ridge_used: float

    def to_dict(self):
        return asdict(self)


def _ascent_direction(H, g, controls):
    """Solve ``(-H + tau I) d = g`` with the smallest ``tau`` (doubling) that makes
    ``-H + tau I`` positive definite. Returns the direction and ``tau``."""
    negH = -H
    tau = 0.0
    eye = np.eye(H.shape[0])
    while True:
        try:
            c = np.linalg.cholesky(negH + tau * eye)
        except np.linalg.LinAlgError:
            tau = controls.ridge_start if tau == 0.0 else 2.0 * tau
            if tau > controls.ridge_max:
                raise ConvergenceError(
                    "Hessian could not be regularized to an ascent direction"
                ) from None
            continue
        return cho_solve((c, True), g), tau


def newton_raphson(init, lambdas, data, spec, variances, penalty, controls=None):
    """Maximize the penalized log-likelihood by damped Newton-Raphson.

    Each step solves against the (ridged if needed) Hessian and halves the
    step length until the objective does not decrease. Returns the last
    iterate and a :class:`NewtonReport`; non-convergence is reported, not raised.
    """
    controls = controls or NewtonControls()
    design = _as_design(data, spec)
    theta = np.array(init, dtype=float)

    def objective(th):
        return penalized_loglik(th, lambdas, design, None, variances, penalty)

    f = objective(theta)
    if not np.isfinite(f):
        raise ConvergenceError("penalized log-likelihood is not finite at the start point")
    halvings = 0
    max_ridge = 0.0
    iterations = 0
    g = gradient(theta, lambdas, design, None, variances, penalty)
    while iterations < controls.max_iter and np.max(np.abs(g), initial=0.0) > controls.grad_tol:
        H = hessian(theta, lambdas, design, None, variances, penalty)
        direction, tau = _ascent_direction(H, g, controls)
        max_ridge = max(max_ridge, tau)
        step = 1.0
        accepted = False
        gnorm = np.max(np.abs(g))
        absS = np.abs(block_penalty(lambdas, penalty))
        scale = abs(f) + 0.5 * float(np.abs(theta) @ absS @ np.abs(theta))
        noise = 64.0 * np.finfo(float).eps * max(1.0, scale)
        while step >= controls.min_step:
            cand = theta + step * direction
            fc = objective(cand)
            if fc >= f:
                accepted = True
                break
            # within rounding of f the comparison is meaningless; require a
            # smaller gradient instead
            if fc >= f - noise:
                g_cand = gradient(cand, lambdas, design, None, variances, penalty)
                if np.max(np.abs(g_cand)) < gnorm:
                    accepted = True
                    break
            step *= 0.5
            halvings += 1
        iterations += 1
        if not accepted:
            logger.debug("line search stalled at iteration %d", iterations)
            break
        theta, f = cand, fc
        g = gradient(theta, lambdas, design, None, variances, penalty)
    gnorm = float(np.max(np.abs(g), initial=0.0))
    report = NewtonReport(
        converged=bool(gnorm <= controls.grad_tol),
        iterations=iterations,
        final_gradient_norm=gnorm,
        final_penalized_loglik=float(f),
        step_halvings=halvings,
        hessian_ridge_used=float(max_ridge),
    )
    return theta, report
