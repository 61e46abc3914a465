"""Clamped B-spline bases (Cox-de Boor) and difference penalties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SplineSpec:
    """Clamped knot vector on ``[t_min, t_max]`` with equally spaced interior knots.

    ``knots`` has ``interior_knot_count + 2 * order`` entries and the basis has
    ``q = interior_knot_count + order`` functions.
    """

    order: int
    interior_knot_count: int
    knots: tuple

    @property
    def q(self):
        return self.interior_knot_count + self.order

    @property
    def degree(self):
        return self.order - 1

    @property
    def t_min(self):
        return self.knots[0]

    @property
    def t_max(self):
        return self.knots[-1]

    @property
    def interior_knots(self):
        return self.knots[self.order:len(self.knots) - self.order]

    def to_dict(self):
        return {
            "order": self.order,
            "interior_knot_count": self.interior_knot_count,
            "knots": list(self.knots),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["order"]), int(d["interior_knot_count"]), tuple(float(k) for k in d["knots"]))


def make_spec(t_min, t_max, interior_knot_count=10, order=4):
    t_min = float(t_min)
    t_max = float(t_max)
    if not t_min < t_max:
        raise ConfigError(f"need t_min < t_max, got {t_min}, {t_max}", code="bad_knots")
    if interior_knot_count < 0 or order < 2:
        raise ConfigError("interior_knot_count must be >= 0 and order >= 2", code="bad_knots")
    q = interior_knot_count + order
    if q < 3:
        raise ConfigError(
            f"basis dimension q={q} < 3; a second-difference penalty needs at least 3",
            code="bad_knots",
        )
    interior = np.linspace(t_min, t_max, interior_knot_count + 2)[1:-1]
    knots = (t_min,) * order + tuple(float(k) for k in interior) + (t_max,) * order
    return SplineSpec(int(order), int(interior_knot_count), knots)


def basis_matrix(spec, times):
    """Evaluate all ``q`` basis functions at ``times``; returns ``(len(times), q)``.

    Intervals are half-open ``[k_i, k_{i+1})`` except the last non-empty one,
    which is closed so the rightmost function equals 1 at ``t_max``.
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1:
        raise ValueError("times must be one-dimensional")
    if t.size and (np.any(~np.isfinite(t)) or t.min() < spec.t_min or t.max() > spec.t_max):
        bad = t[~((t >= spec.t_min) & (t <= spec.t_max))]
        raise ConfigError(
            f"time {bad[0]!r} outside spline range [{spec.t_min}, {spec.t_max}]",
            code="out_of_range",
        )
    knots = np.asarray(spec.knots)
    n_int = knots.size - 1
    # order-1 (piecewise constant) functions
    B = ((knots[:-1] <= t[:, None]) & (t[:, None] < knots[1:])).astype(float)
    last = np.nonzero(knots[:-1] < knots[1:])[0][-1]
    B[t == spec.t_max, :] = 0.0
    B[t == spec.t_max, last] = 1.0
    for k in range(2, spec.order + 1):
        nb = n_int - k + 1
        left_den = knots[k - 1:k - 1 + nb] - knots[:nb]
        right_den = knots[k:k + nb] - knots[1:1 + nb]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (t[:, None] - knots[:nb]) / left_den, 0.0)
            right = np.where(right_den > 0, (knots[k:k + nb] - t[:, None]) / right_den, 0.0)
        B = left * B[:, :nb] + right * B[:, 1:nb + 1]
    return B


def eval_basis(spec, t):
    """Basis vector of length ``q`` at a single time ``t``."""
    return basis_matrix(spec, [t])[0]


@dataclass(frozen=True, eq=False)
class PenaltyMatrix:
    matrix: np.ndarray
    difference_order: int = 2

    @property
    def q(self):
        return self.matrix.shape[0]

    def quadratic_form(self, theta):
        """``theta' D'D theta`` computed as ``|D theta|^2``, which is exactly zero
        on constant sequences instead of merely within rounding."""
        d = np.diff(np.asarray(theta, dtype=float), n=self.difference_order)
        return float(d @ d)


def difference_matrix(q, difference_order=2):
    """``(q - d) x q`` banded difference operator."""
    return np.diff(np.eye(q), n=difference_order, axis=0)


def difference_penalty(q, difference_order=2):
    if difference_order not in (1, 2, 3):
        raise ConfigError("difference order must be 1, 2 or 3", code="bad_penalty")
    if q <= difference_order:
        raise ConfigError(
            f"q={q} must exceed the difference order {difference_order}",
            code="bad_penalty",
        )
    D = difference_matrix(q, difference_order)
    P = D.T @ D
    P.setflags(write=False)
    return PenaltyMatrix(P, difference_order)
