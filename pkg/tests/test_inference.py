import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tivac.errors import ConfigError
from tivac.inference import (
    BandConfig,
    BandResult,
    bootstrap_scb,
    critical_value,
    significant_intervals,
    write_band,
)
from tivac.model import FitConfig, fit
from tivac.simulation import ScenarioSpec, generate

GRID = tuple(np.linspace(1.0, 60.0, 25))


@pytest.fixture(scope="module")
def small_fit():
    gen = generate(ScenarioSpec("binary", "linear", "T_Low", n=20, t_max=60, seed=8))
    model = fit(gen.data, FitConfig(interior_knots=3, lambda_grid=(1.0, 100.0), cv_folds=4))
    return gen.data, model


@pytest.fixture(scope="module")
def bands(small_fit):
    data, model = small_fit
    return bootstrap_scb(data, model, BandConfig(B=50, M=10, grid=GRID, seed=1))


def _band(lower, upper, grid=None):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    grid = np.arange(1.0, lower.size + 1) if grid is None else np.asarray(grid, dtype=float)
    est = (lower + upper) / 2
    z = np.zeros_like(lower)
    return BandResult(0, "x", grid, est, lower, upper, upper - est, 1.0, z, z, 0, 0, 50, 10, 0.05)


def test_config_validation():
    for kwargs in ({"alpha": 1.5}, {"alpha": 0.0}):
        with pytest.raises(ConfigError) as exc:
            BandConfig(**kwargs)
        assert exc.value.code == "bad_alpha"
    with pytest.raises(ConfigError):
        BandConfig(B=49)
    with pytest.raises(ConfigError):
        BandConfig(M=9)


def test_smoke_finite_and_symmetric(bands, small_fit):
    _, model = small_fit
    assert len(bands) == model.p
    for b in bands:
        assert np.all(np.isfinite(b.lower)) and np.all(np.isfinite(b.upper))
        assert np.all(b.lower <= b.estimate) and np.all(b.estimate <= b.upper)
        # symmetric up to the rounding of estimate +/- half_width
        ulp = 4 * np.spacing(np.abs(b.estimate) + b.half_width)
        assert np.all(np.abs((b.upper - b.estimate) - b.half_width) <= ulp)
        assert np.all(np.abs((b.estimate - b.lower) - b.half_width) <= ulp)
        assert np.array_equal(b.half_width, b.critical_value * b.sd)
        assert b.critical_value >= 0
        assert b.t_stats.size + b.dropped_replicates == 50


def test_alpha_monotone(small_fit, bands):
    data, model = small_fit
    wide = bands
    narrow = bootstrap_scb(data, model, BandConfig(B=50, M=10, alpha=0.5, grid=GRID, seed=1))
    for w, n in zip(wide, narrow):
        assert n.critical_value <= w.critical_value
        assert np.all(n.half_width <= w.half_width)


def test_reproducible_and_thread_independent(small_fit, bands):
    data, model = small_fit
    again = bootstrap_scb(data, model, BandConfig(B=50, M=10, grid=GRID, seed=1, threads=4))
    for a, b in zip(bands, again):
        assert a.lower.tobytes() == b.lower.tobytes()
        assert a.upper.tobytes() == b.upper.tobytes()
        assert a.t_stats.tobytes() == b.t_stats.tobytes()


def test_critical_value_order_statistic():
    t = np.arange(1.0, 100.0)  # B' = 99
    # ceil(0.95 * 100) = 95th smallest
    assert critical_value(t, 0.05) == 95.0
    assert critical_value(t, 0.5) == 50.0
    # the index never runs past the largest statistic
    assert critical_value(np.arange(1.0, 11.0), 0.01) == 10.0


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0, 100), min_size=1, max_size=60),
    st.floats(0.01, 0.98),
    st.floats(0.001, 0.5),
)
def test_critical_value_monotone_in_level(stats, a1, gap):
    a2 = min(a1 + gap, 0.99)
    assert critical_value(stats, a1) >= critical_value(stats, a2) >= 0


def test_intervals_whole_grid():
    assert significant_intervals(_band([0.1, 0.2, 0.3], [1, 1, 1])) == [(1.0, 3.0)]


def test_intervals_none():
    assert significant_intervals(_band([-1, -1, -1], [1, 1, 1])) == []


def test_intervals_middle_run():
    b = _band([-1, 0.1, 0.2, -1], [1, 1, 1, 1])
    assert significant_intervals(b) == [(2.0, 3.0)]


def test_intervals_sign_change_splits():
    b = _band([0.1, 0.1, -2, -2], [1, 1, -0.5, -0.5])
    assert significant_intervals(b) == [(1.0, 2.0), (3.0, 4.0)]


def test_write_band(tmp_path, bands):
    b = bands[1]
    write_band(b, tmp_path / "b.csv", tmp_path / "b.json", extra={"seed": 1})
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "t,estimate,lower,upper"
    assert len(lines) == len(GRID) + 1
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back[:, 2], b.lower)
    meta = json.loads((tmp_path / "b.json").read_text())
    assert meta["T_crit"] == b.critical_value and meta["B"] == 50 and meta["seed"] == 1
    assert "significant_intervals" in meta
