"""Local-linear tricube smoother with span selection by K-fold cross-validation."""

import math

import numpy as np

from . import rng as _rng

DEFAULT_SPANS = tuple(round(0.1 * i, 1) for i in range(1, 11))
MIN_NEIGHBOURS = 3


def _local_linear(x, y, x0, k):
    d = np.abs(x - x0)
    order = np.argsort(d, kind="stable")[:k]
    h = d[order[-1]]
    if h <= 0:
        return float(np.mean(y[d == 0]))
    r = d[order] / h
    w = (1.0 - r ** 3) ** 3
    dx = x[order] - x0
    yy = y[order]
    s0 = w.sum()
    s1 = (w * dx).sum()
    s2 = (w * dx * dx).sum()
    t0 = (w * yy).sum()
    t1 = (w * dx * yy).sum()
    det = s0 * s2 - s1 * s1
    if det <= 1e-12 * max(s0 * s2, 1e-300):
        return float(t0 / s0)
    return float((s2 * t0 - s1 * t1) / det)


def loess(x, y, x_eval, span):
    """Evaluate the smoother at ``x_eval`` using the nearest ``ceil(span * n)``
    points (at least 3) for each local fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x_eval = np.atleast_1d(np.asarray(x_eval, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("no points to smooth")
    k = min(n, max(MIN_NEIGHBOURS, math.ceil(span * n)))
    return np.array([_local_linear(x, y, x0, k) for x0 in x_eval])


def select_span(x, y, spans=DEFAULT_SPANS, folds=5, seed=0):
    """Span minimizing held-out squared error over ``folds`` random folds.
    Ties go to the larger span."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    folds = min(folds, n)
    if folds < 2:
        return max(spans)
    perm = _rng.generator(seed).permutation(n)
    blocks = np.array_split(perm, folds)
    # errors closer than this are rounding noise and count as ties
    tol = 1e-10 * float(y @ y)
    best, best_err = None, math.inf
    for span in sorted(spans):
        err = 0.0
        for held in blocks:
            mask = np.ones(n, dtype=bool)
            mask[held] = False
            pred = loess(x[mask], y[mask], x[held], span)
            err += float(np.sum((pred - y[held]) ** 2))
        if err <= best_err + tol:
            best, best_err = span, err
    return best
