"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[C<n>] PASS|FAIL`` line with the measured values.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from tivac.cli import main
from tivac.dataset import LongitudinalDataset, SubjectRecord
from tivac.inference import BandConfig, bootstrap_scb, significant_intervals
from tivac.likelihood import (
    VarianceEstimates,
    build_design,
    estimate_variances,
    eta_of_rho,
    gradient,
    hessian,
    newton_raphson,
    penalized_loglik,
    rho_of_eta,
)
from tivac.model import fit
from tivac.simulation import ScenarioSpec, generate, run_benchmark
from tivac.splines import basis_matrix, difference_penalty, make_spec

THREADS = max(1, min(4, os.cpu_count() or 1))


def report(capsys, tag, ok, detail):
    with capsys.disabled():
        print(f"\n[{tag}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def _fd(f, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (f(x + e) - f(x - e)) / (2 * step)
    return out


def _instance(rng):
    n = int(rng.integers(3, 11))
    p = int(rng.choice([1, 2]))
    q = int(rng.integers(3, 7))
    order = min(4, q)
    spec = make_spec(0.0, 10.0, q - order, order)
    subjects = []
    for i in range(n):
        m = int(rng.integers(1, 6))
        t = np.sort(rng.choice(np.arange(0.0, 10.5, 0.5), size=m, replace=False))
        subjects.append(SubjectRecord(f"s{i}", t, rng.normal(size=(m, 2))))
    X = np.column_stack([np.ones(n)] + [rng.normal(size=n)] * (p - 1))
    data = LongitudinalDataset(subjects, X, tuple(f"x{k}" for k in range(p)))
    v = VarianceEstimates(float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2)))
    return data, spec, rng.uniform(-1, 1, q * p), rng.uniform(0, 2, p), v, difference_penalty(q, 2)


def test_c1_gradient_hessian(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_g = worst_h = 0.0
    for _ in range(20):
        data, spec, theta, lam, v, pen = _instance(rng)
        design = build_design(data, spec)
        g = gradient(theta, lam, design, spec, v, pen)
        fd = _fd(lambda th: penalized_loglik(th, lam, design, spec, v, pen), theta)
        worst_g = max(worst_g, float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)))))
        H = hessian(theta, lam, design, spec, v, pen)
        fdH = np.stack([_fd(lambda th: gradient(th, lam, design, spec, v, pen)[j], theta) for j in range(theta.size)])
        worst_h = max(worst_h, float(np.max(np.abs(H - fdH) / np.maximum(1.0, np.abs(fdH)))))
    elapsed = time.perf_counter() - start
    ok = worst_g < 1e-6 and worst_h < 1e-5 and elapsed < 10
    report(capsys, "C1", ok, f"gradient rel err {worst_g:.2e} (<1e-6), Hessian rel err {worst_h:.2e} (<1e-5), {elapsed:.1f}s")


def test_c2_grid_search_oracle(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    rho_star = 0.6
    L = np.linalg.cholesky([[1.0, rho_star], [rho_star, 1.0]])
    y = rng.normal(size=(60, 2)) @ L.T
    times = np.linspace(0.0, 20.0, 9)
    # every time point sees the same sample, so the best curve is flat at the
    # one-parameter maximizer
    subjects = [SubjectRecord(f"s{i}", times, np.repeat(y[i:i + 1], times.size, axis=0)) for i in range(len(y))]
    data = LongitudinalDataset(subjects, np.ones((len(y), 1)), ("one",))
    spec = make_spec(0.0, 20.0, 3, 4)
    v = estimate_variances(data)
    theta, rep = newton_raphson(np.zeros(spec.q), [0.0], data, spec, v, difference_penalty(spec.q, 2))
    eta_hat = basis_matrix(spec, np.linspace(0.0, 20.0, 101)) @ theta

    grid = np.arange(-5.0, 5.0 + 5e-5, 1e-4)
    u = y[:, 0] / math.sqrt(v.sigma1_sq)
    w = y[:, 1] / math.sqrt(v.sigma2_sq)
    r = np.tanh(grid / 2)[:, None]
    ll = np.sum(-0.5 * np.log(1 - r * r) - (u * u - 2 * r * u * w + w * w) / (2 * (1 - r * r)), axis=1)
    eta_grid = grid[np.argmax(ll)]
    err = float(np.max(np.abs(eta_hat - eta_grid)))
    elapsed = time.perf_counter() - start
    ok = rep.converged and err < 1e-3 and elapsed < 5
    report(capsys, "C2", ok, f"max |eta_newton - eta_grid| = {err:.2e} (<1e-3), eta_grid={eta_grid:.4f}, {elapsed:.2f}s")


def test_c3_spline_properties(capsys):
    spec = make_spec(0.0, 200.0, 10, 4)
    t = np.random.default_rng(3).uniform(0.0, 200.0, 1000)
    pou = float(np.max(np.abs(basis_matrix(spec, t).sum(axis=1) - 1.0)))
    pen = difference_penalty(spec.q, 2)
    const_q = pen.quadratic_form(np.full(spec.q, 0.7))
    lin_q = pen.quadratic_form(np.arange(1.0, spec.q + 1))
    ev = np.linalg.eigvalsh(pen.matrix)
    near_zero = int(np.sum(np.abs(ev) < 1e-10))
    ok = pou < 1e-12 and const_q == 0 and lin_q == 0 and ev.min() >= -1e-12 and near_zero == 2
    report(capsys, "C3", ok, f"unity err {pou:.1e}, const form {const_q}, linear form {lin_q}, "
                             f"min eig {ev.min():.1e}, near-zero eigs {near_zero}")


def _desk(kind, shape, noise=0.0):
    return ScenarioSpec(kind, shape, "T_Moderate", n=150, t_max=200, noise_sd=noise, replications=10, seed=0)


def _by_rep(report_, method, group):
    rows = sorted(report_.select(method=method, group=group), key=lambda r: r.replication)
    return np.array([r.rmse for r in rows], dtype=float)


@pytest.fixture(scope="module")
def scenario_one():
    start = time.perf_counter()
    rep = run_benchmark([_desk("binary", "linear")], ("tivac", "empirical"), threads=THREADS)
    return rep, time.perf_counter() - start


def test_c4_binary_linear(capsys, scenario_one):
    rep, elapsed = scenario_one
    tiv = np.stack([_by_rep(rep, "tivac", g) for g in ("0", "1")])
    emp = np.stack([_by_rep(rep, "empirical", g) for g in ("0", "1")])
    means_t, means_e = tiv.mean(axis=1), emp.mean(axis=1)
    wins = int(np.sum(tiv.mean(axis=0) < emp.mean(axis=0)))
    ok = bool(np.all(means_t <= 0.05) and np.all(means_t < means_e) and wins >= 9)
    report(capsys, "C4", ok, f"TiVAC mean RMSE {np.round(means_t, 4).tolist()} vs Empirical "
                             f"{np.round(means_e, 4).tolist()}, TiVAC ahead in {wins}/10 replications, {elapsed:.0f}s")


def test_c5_continuous_seasonal(capsys):
    start = time.perf_counter()
    rep = run_benchmark([_desk("continuous", "seasonal")], ("tivac",), threads=THREADS)
    vals = _by_rep(rep, "tivac", "all")
    elapsed = time.perf_counter() - start
    ok = bool(np.all(np.isfinite(vals)) and vals.mean() <= 0.08)
    report(capsys, "C5", ok, f"TiVAC mean RMSE {vals.mean():.4f} (<=0.08) over time x 100 covariate values, {elapsed:.0f}s")


def test_c6_noise(capsys):
    rep = run_benchmark([_desk("binary", "linear", noise=0.3)], ("tivac", "empirical"), threads=THREADS)
    tiv = np.mean([_by_rep(rep, "tivac", g).mean() for g in ("0", "1")])
    emp = np.mean([_by_rep(rep, "empirical", g).mean() for g in ("0", "1")])
    ok = bool(tiv < 0.15 and tiv < emp)
    report(capsys, "C6", ok, f"noise 0.3: TiVAC mean RMSE {tiv:.4f} (<0.15) vs Empirical {emp:.4f}")


@pytest.mark.slow
def test_c7_band_calibration(capsys):
    start = time.perf_counter()
    spec = ScenarioSpec("binary", ("linear", "zero"), "T_Moderate", n=100, t_max=200, seed=0, replications=20)
    covered = clean = 0
    for r in range(spec.replications):
        gen = generate(spec, r)
        model = fit(gen.data)
        band = bootstrap_scb(gen.data, model, BandConfig(B=100, M=20, seed=r, threads=THREADS))[1]
        if np.all((band.lower <= 0) & (band.upper >= 0)):
            covered += 1
            clean += not significant_intervals(band)
    elapsed = time.perf_counter() - start
    ok = covered >= 16 and clean == covered and elapsed < 3600
    report(capsys, "C7", ok, f"zero covered in {covered}/20 runs (>=16), no significant intervals in {clean} of those, {elapsed:.0f}s")


def _cli_outputs(tmp, threads, data_dir, scenario):
    out = tmp / f"run_t{threads}"
    fit_dir, band_dir, bench_dir = out / "fit", out / "band", out / "bench"
    y, x = str(data_dir / "outcomes_r0.csv"), str(data_dir / "covariates_r0.csv")
    common = ["--seed", "11", "--threads", str(threads)]
    assert main(["fit", y, x, "--out-dir", str(fit_dir), "--knots", "4", "--folds", "5"] + common) == 0
    assert main(["band", str(fit_dir / "model.json"), y, x, "--B", "50", "--M", "10",
                 "--grid-points", "40", "--out-dir", str(band_dir)] + common) == 0
    assert main(["benchmark", str(scenario), "--out-dir", str(bench_dir)] + common) == 0
    files = {}
    for d in (fit_dir, band_dir, bench_dir):
        for f in sorted(d.iterdir()):
            if not f.name.endswith("_run.json"):  # sidecars record wall time
                files[f"{d.name}/{f.name}"] = f.read_bytes()
    return files


def test_c8_determinism(capsys, tmp_path):
    (tmp_path / "sc.json").write_text(json.dumps({
        "covariate_kind": "binary", "shape": "seasonal", "time_design": "T_Low",
        "n": 40, "t_max": 60, "replications": 3, "seed": 2,
    }))
    assert main(["simulate", str(tmp_path / "sc.json"), "--out-dir", str(tmp_path / "data")]) == 0
    sc = tmp_path / "sc.json"
    a = _cli_outputs(tmp_path / "a", 1, tmp_path / "data", sc)
    b = _cli_outputs(tmp_path / "b", 1, tmp_path / "data", sc)
    c = _cli_outputs(tmp_path / "c", 4, tmp_path / "data", sc)
    same_runs = a == b
    same_threads = a == c
    ok = same_runs and same_threads and len(a) >= 7
    report(capsys, "C8", ok, f"{len(a)} output files; identical across runs: {same_runs}, threads 1 vs 4: {same_threads}")


def test_c9_fisher_round_trip(capsys):
    x = np.linspace(-20.0, 20.0, 10_000)
    rho = rho_of_eta(x)
    err = float(np.max(np.abs(eta_of_rho(rho) - x)))
    inside = bool(np.all(np.abs(rho) < 1))
    report(capsys, "C9", err < 1e-10 and inside, f"max round-trip error {err:.2e} (<1e-10), all |rho| < 1: {inside}")
