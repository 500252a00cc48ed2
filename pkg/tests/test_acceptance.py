"""End-to-end acceptance checks; a PASS/FAIL line per check is printed in the summary."""

import itertools
import math
import time

import mpmath as mp
import numpy as np
import pytest

from pgadmm.admm import AdmmConfig, admm_restore, mae, read_trace, write_trace
from pgadmm.image import CirculantOperator, make_derivative_operators
from pgadmm.inner import (
    Condition,
    InnerState,
    NewtonSchedule,
    TerminationInputs,
    min_certified_delta,
    mm_inner,
    newton_inner,
)
from pgadmm.likelihood import REFERENCE_DELTA, Bounds, NoiseModel, error_bound, grad1_delta, pixel_nll
from pgadmm.prox import make_context, shrink_hessian, solve_g
from pgadmm.sim import SimSpec, make_phantom, make_psf, simulate, simulate_with_rng

from oracles import mp_central_diff, mp_nll, numeric_hessian_prox, prox_grid_search
from test_prox import _dense_solve

GRID = list(itertools.product((0.5, 4.0, 12.0, 25.0), (0.0, 3.0, 8.0, 20.0), (1.0, 2.0, 4.0)))
PROX_GRID = list(itertools.product((2.0, 6.0, 12.0), (1.0, 2.0, 4.0), (0.5, 1.0, 2.0), (0.0, 4.0, 10.0)))
PROX_BOUNDS = Bounds(0.0, 20.0, 20.0)


def test_01_gradient_fidelity():
    t0 = time.perf_counter()
    worst = 0.0
    with mp.workdps(30):
        for m, m_prime, sigma in GRID:
            ref = float(mp_central_diff(lambda x: mp_nll(x, m_prime, 1.0, sigma, p=500), mp.mpf(m), mp.mpf("1e-10")))
            got = grad1_delta(m, m_prime, 12.0, NoiseModel(sigma=sigma))
            worst = max(worst, abs(got - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    print(f"worst relative error {worst:.3e}, {elapsed:.2f} s")
    assert worst < 1e-6
    assert elapsed < 10.0


def test_02_certified_error_bound():
    t0 = time.perf_counter()
    violations, checked = 0, 0
    for m, m_prime, sigma in GRID:
        model = NoiseModel(sigma=sigma)
        ref = grad1_delta(m, m_prime, REFERENCE_DELTA, model)
        # tightest box containing m, and a common box for the whole grid
        for bounds in (Bounds(0.0, m, m), Bounds(0.0, 25.0, 25.0)):
            for delta in (2.0, 4.0, 6.0, 8.0):
                err = abs(grad1_delta(m, m_prime, delta, model) - ref)
                violations += not err <= error_bound(m_prime, delta, bounds, model)
                checked += 1
    elapsed = time.perf_counter() - t0
    print(f"{violations} violations in {checked} checks, {elapsed:.2f} s")
    assert violations == 0
    assert elapsed < 10.0


@pytest.fixture(scope="module")
def scalar_prox_runs():
    sched = NewtonSchedule(C=2.0, C2=1e6, max_inner=5000)
    oracle = {p: prox_grid_search(p[0], p[1], p[2], p[3], hi=20.0) for p in PROX_GRID}
    out = {"newton": {}, "mm": {}}
    t0 = time.perf_counter()
    for m_prime, sigma, beta, m_bar in PROX_GRID:
        model = NoiseModel(sigma=sigma)
        theta = 9e-4 * beta
        mp_ = np.array([m_prime])
        floor = min_certified_delta(mp_, 0.5 * theta, PROX_BOUNDS, model)
        # rho is negligible so only the absolute condition can stop the solvers
        term = TerminationInputs(theta, 1e-300, 0.0, np.zeros(1), mp_, PROX_BOUNDS, model, floor)
        m0 = np.clip([m_bar], 0.0, 20.0)
        mb = np.array([m_bar])
        m, cert = newton_inner(m0, mp_, mb, beta, PROX_BOUNDS, model, sched, term, InnerState.zeros((1,)))
        out["newton"][(m_prime, sigma, beta, m_bar)] = (float(m[0]), cert, None)
        seq = [float(m0[0])]
        m, cert = mm_inner(m0, mp_, mb, beta, model, sched, term, InnerState.zeros((1,)), PROX_BOUNDS,
                           callback=lambda l, x: seq.append(float(x[0])))
        out["mm"][(m_prime, sigma, beta, m_bar)] = (float(m[0]), cert, seq)
    out["elapsed"] = time.perf_counter() - t0
    out["oracle"] = oracle
    return out


def test_03_scalar_prox_oracle(scalar_prox_runs):
    runs = scalar_prox_runs
    for solver in ("newton", "mm"):
        errs = [abs(runs[solver][p][0] - runs["oracle"][p]) for p in PROX_GRID]
        iters = [runs[solver][p][1].iterations for p in PROX_GRID]
        print(f"{solver}: worst error {max(errs):.2e}, max iterations {max(iters)}")
        assert all(runs[solver][p][1].condition_met is Condition.COND1 for p in PROX_GRID)
        assert max(errs) < 1e-3
    print(f"solver time {runs['elapsed']:.2f} s")
    assert runs["elapsed"] < 60.0


def test_04_mm_monotone_descent(scalar_prox_runs):
    violations, steps = 0, 0
    for m_prime, sigma, beta, m_bar in PROX_GRID:
        seq = scalar_prox_runs["mm"][(m_prime, sigma, beta, m_bar)][2]
        model = NoiseModel(sigma=sigma)
        x = np.array(seq)
        cost = pixel_nll(x, m_prime, REFERENCE_DELTA, model) + 0.5 * beta * (x - m_bar) ** 2
        violations += int(np.sum(np.diff(cost) > 1e-9))
        steps += len(seq) - 1
    print(f"{violations} increases over {steps} MM steps")
    assert steps > len(PROX_GRID)
    assert violations == 0


def test_05_prox_operator_exactness():
    rng = np.random.default_rng(5)
    h = w = 8
    ops = make_derivative_operators(w, h)
    for _ in range(5):
        k = rng.uniform(size=(3, 3))
        H = CirculantOperator.from_kernel(k / k.sum(), (h, w), center=(1, 1))
        args = [rng.normal(size=(h, w)), rng.normal(size=(h, w)), rng.normal(size=(3, h, w)),
                rng.normal(size=(3, h, w)), rng.normal(size=(h, w)), rng.normal(size=(h, w))]
        beta = float(rng.uniform(0.2, 5.0))
        g = solve_g(make_context(H, ops), *args, beta=beta)
        assert np.max(np.abs(g - _dense_solve(H, h, w, *args, beta))) < 1e-8
    for q in (1, 2):
        V = rng.normal(scale=2.0, size=(1000, 3))
        t = 0.8
        got = shrink_hessian(V.T.reshape(3, 1000, 1), t, q)[:, :, 0].T
        diff = np.max(np.abs(got - numeric_hessian_prox(V, t, q)))
        print(f"q={q}: max shrink deviation {diff:.2e}")
        assert diff < 1e-4


# the restoration instance shared by the remaining checks
LAM = 0.1


def _instance(alpha_prime=1.0):
    truth = make_phantom("filaments", 32, 32, 12.0, seed=1)
    spec = SimSpec(width=32, height=32, peak=12.0, psf_sigma=1.5, seed=1,
                   model=NoiseModel(alpha=1.0, sigma=3.0, alpha_prime=alpha_prime))
    measured, H = simulate(truth, spec)
    return truth, measured, H, spec.model


def _restore(q=2, solver="newton", alpha_prime=1.0):
    truth, measured, H, model = _instance(alpha_prime)
    cfg = AdmmConfig(lam=LAM, q=q, inner_solver=solver, model=model)
    t0 = time.perf_counter()
    g, records = admm_restore(measured, H, cfg, truth=truth)
    return dict(g=g, records=records, elapsed=time.perf_counter() - t0, cfg=cfg,
                mae=mae(g, truth), mae_measured=mae(measured, truth))


_RUNS = {}


def run(**kw):
    key = tuple(sorted(kw.items()))
    if key not in _RUNS:
        _RUNS[key] = _restore(**kw)
    return _RUNS[key]


def test_06_end_to_end_restoration():
    r2 = run(q=2)
    recs = r2["records"]
    last = recs[-1]
    limit = 1e-3 * math.sqrt(32 * 32)
    print(f"q=2: MAE {r2['mae']:.4f} vs measured {r2['mae_measured']:.4f}, {len(recs)} iterations, "
          f"{r2['elapsed']:.1f} s, residuals {last.residual_m:.2e} {last.residual_d:.2e} {last.residual_b:.2e}")
    assert r2["mae"] < 0.6 * r2["mae_measured"]
    assert max(last.residual_m, last.residual_d, last.residual_b) < limit
    assert r2["elapsed"] < 120.0
    # endpoint residuals below their early values
    for name in ("residual_m", "residual_d", "residual_b"):
        assert getattr(last, name) < getattr(recs[5], name) or getattr(recs[5], name) == 0.0
    r1 = run(q=1)
    print(f"q=1: MAE {r1['mae']:.4f}, {len(r1['records'])} iterations, {r1['elapsed']:.1f} s")
    assert r1["mae"] <= 1.05 * r2["mae"]


def test_07_solver_agreement():
    a, b = run(q=2), run(q=2, solver="mm")
    ca, cb = a["records"][-1].cost, b["records"][-1].cost
    print(f"newton cost {ca:.6f}, mm cost {cb:.6f}, mm time {b['elapsed']:.1f} s")
    assert math.isfinite(ca) and math.isfinite(cb)
    assert abs(ca - cb) <= 1e-3 * min(abs(ca), abs(cb))


def _replay_cond2(row):
    ee = row["eta_norm"] + row["approx_err"]
    a = 2 * row["cross_term"] + ee**2 + 2 * row["wm_norm"] * row["approx_err"] + row["err_accum"] * ee
    return a / row["denom"]


def test_08_certificate_ledger(tmp_path):
    r = run(q=2)
    path = tmp_path / "trace.csv"
    write_trace(path, r["records"])
    _, rows = read_trace(path)
    assert len(rows) == len(r["records"])
    cfg = r["cfg"]
    accum = 0.0
    for row in rows:
        k = row["k"]
        assert row["theta_k"] == pytest.approx(cfg.theta0 / (k + 1) ** 2, rel=1e-15)
        assert row["inner_condition"] in ("cond1", "cond2")
        assert row["cond1_lhs"] == pytest.approx(row["eta_norm"] + row["approx_err"], rel=1e-12, abs=1e-300)
        if row["inner_condition"] == "cond1":
            assert row["cond1_lhs"] < row["theta_k"]
        else:
            assert row["cond2_lhs"] == pytest.approx(_replay_cond2(row), rel=1e-12)
            assert _replay_cond2(row) < row["rho"]
        # the error accumulator grows by 2 beta e_k per accepted step
        assert row["err_accum"] == pytest.approx(accum, rel=1e-12, abs=1e-300)
        accum += 2 * cfg.beta * row["approx_err"]
    total = sum(row["theta_k"] for row in rows)
    print(f"{len(rows)} certified steps, sum theta_k = {total:.6f}")
    assert total < cfg.theta0 * math.pi**2 / 6


@pytest.mark.parametrize("alpha_prime", [0.75, 2.0])
def test_09_scale_robustness(alpha_prime):
    r = run(alpha_prime=alpha_prime)
    recs = r["records"]
    print(f"alpha'={alpha_prime}: MAE {r['mae']:.4f} vs measured {r['mae_measured']:.4f}, {len(recs)} iterations")
    assert all(rec.inner_condition in ("cond1", "cond2") for rec in recs)
    assert recs[-1].rel_change < r["cfg"].stop_tol
    assert r["mae"] < r["mae_measured"]


def test_10_simulation_moments():
    n = 10_000
    truth = make_phantom("filaments", 4, 4, 12.0, seed=3)
    H = make_psf(SimSpec(width=4, height=4, psf_sigma=0.8))
    model = NoiseModel(alpha=1.5, sigma=2.0, alpha_prime=2.0)
    rng = np.random.default_rng(10)
    draws = np.stack([simulate_with_rng(truth, H, model, rng) for _ in range(n)])
    hg = np.real(np.fft.ifft2(np.fft.fft2(truth) * H.freq))
    mean_ref = model.alpha * model.alpha_prime * hg
    var_ref = model.alpha**2 * model.alpha_prime * hg + model.sigma**2
    mean, var = draws.mean(axis=0), draws.var(axis=0, ddof=1)
    se_mean = np.sqrt(var_ref / n)
    mu4 = np.mean((draws - mean) ** 4, axis=0)
    se_var = np.sqrt((mu4 - var**2) / n)
    zm, zv = np.abs(mean - mean_ref) / se_mean, np.abs(var - var_ref) / se_var
    print(f"max |z| mean {zm.max():.2f}, variance {zv.max():.2f}")
    assert np.all(zm < 3.0)
    assert np.all(zv < 3.0)
