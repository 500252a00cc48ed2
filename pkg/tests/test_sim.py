import csv
import logging

import numpy as np
import pytest

from pgadmm.admm import AdmmConfig, admm_restore, mae
from pgadmm.image import apply, make_derivative_operators, apply_hessian
from pgadmm.inner import NewtonSchedule
from pgadmm.io import write_image
from pgadmm.likelihood import NoiseModel
from pgadmm.sim import (
    SimSpec,
    SweepSpec,
    make_phantom,
    make_psf,
    run_sweep,
    simulate,
    simulate_with_rng,
    write_sweep_csv,
)


@pytest.mark.parametrize("kind", ["filaments", "dots", "grid"])
def test_phantom_peak_and_sign(kind):
    img = make_phantom(kind, 24, 20, 12.0, seed=4)
    assert img.shape == (20, 24)
    assert img.max() == 12.0
    assert img.min() >= 0.0


def test_filaments_have_curvature():
    img = make_phantom("filaments", 32, 32, 12.0, seed=1)
    assert np.abs(apply_hessian(make_derivative_operators(32, 32), img)).max() > 1.0


def test_dots_are_isolated():
    img = make_phantom("dots", 32, 32, 5.0, seed=0)
    ys, xs = np.nonzero(img)
    assert len(ys) >= 2
    for y, x in zip(ys, xs):
        patch = img[max(0, y - 1):y + 2, max(0, x - 1):x + 2]
        assert np.count_nonzero(patch) == 1


def test_phantom_from_file(tmp_path):
    p = tmp_path / "ph.csv"
    write_image(p, np.array([[0.0, 1.0], [2.0, 4.0]]))
    img = make_phantom("file", 2, 2, 8.0, path=p)
    assert img.tolist() == [[0.0, 2.0], [4.0, 8.0]]


def test_phantom_errors(tmp_path):
    with pytest.raises(ValueError):
        make_phantom("filaments", 8, 8, 0.0)
    with pytest.raises(ValueError):
        make_phantom("stars", 8, 8, 1.0)
    p = tmp_path / "z.csv"
    write_image(p, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        make_phantom("file", 2, 2, 1.0, path=p)


def test_phantom_deterministic():
    assert np.array_equal(make_phantom("filaments", 16, 16, 3.0, seed=9), make_phantom("filaments", 16, 16, 3.0, seed=9))
    assert not np.array_equal(make_phantom("filaments", 16, 16, 3.0, seed=9), make_phantom("filaments", 16, 16, 3.0, seed=8))


def test_simulate_reproducible():
    truth = make_phantom("filaments", 16, 16, 12.0, seed=1)
    spec = SimSpec(width=16, height=16, seed=123, model=NoiseModel(sigma=3.0))
    a, Ha = simulate(truth, spec)
    b, _ = simulate(truth, spec)
    assert np.array_equal(a, b)
    c, _ = simulate(truth, SimSpec(width=16, height=16, seed=124, model=NoiseModel(sigma=3.0)))
    assert not np.array_equal(a, c)


def test_simulate_returns_scaled_operator():
    truth = np.ones((8, 8))
    spec = SimSpec(width=8, height=8, model=NoiseModel(alpha_prime=2.0))
    _, H = simulate(truth, spec)
    assert np.allclose(apply(H, truth), 2.0)


def test_poisson_mean_without_gaussian():
    mu = 5.0
    truth = np.full((64, 64), mu)
    m, _ = simulate(truth, SimSpec(width=64, height=64, model=NoiseModel(sigma=1e-12), seed=3))
    assert abs(m.mean() - mu) < 3 * np.sqrt(mu / m.size)
    assert np.allclose(m, np.rint(m))


def test_zero_truth_is_pure_gaussian():
    m, _ = simulate(np.zeros((64, 64)), SimSpec(width=64, height=64, model=NoiseModel(sigma=3.0), seed=4))
    assert abs(m.var() / 9.0 - 1.0) < 0.1


def test_alpha_prime_doubles_mean():
    truth = make_phantom("grid", 8, 8, 6.0, seed=0)
    H = make_psf(SimSpec(width=8, height=8))
    rng = np.random.default_rng(0)
    draws = np.stack([simulate_with_rng(truth, H, NoiseModel(sigma=1.0, alpha_prime=2.0), rng) for _ in range(2000)])
    hg = apply(H, truth)
    se = np.sqrt((2 * hg.sum() + 64 * 1.0) / draws.shape[0])
    assert abs(draws.mean(axis=0).sum() - 2 * hg.sum()) < 3 * se


def test_negative_blur_clamped(tmp_path, caplog):
    k = tmp_path / "k.csv"
    write_image(k, np.array([[-0.5, 2.0, -0.5]]))
    spec = SimSpec(width=8, height=8, psf_path=str(k), model=NoiseModel(sigma=1.0))
    truth = np.zeros((8, 8))
    truth[:, ::2] = 5.0
    with caplog.at_level(logging.INFO, logger="pgadmm.sim"):
        m, _ = simulate(truth, spec)
    assert np.all(np.isfinite(m))
    assert any("clamping" in r.message for r in caplog.records)


def test_simulate_rejects_negative_truth():
    with pytest.raises(ValueError):
        simulate(-np.ones((4, 4)), SimSpec(width=4, height=4))


@pytest.mark.parametrize("kw", [dict(phantom="x"), dict(peak=0), dict(width=1), dict(psf_sigma=0), dict(seed=-1),
                                dict(phantom="file")])
def test_simspec_validation(kw):
    with pytest.raises(ValueError):
        SimSpec(**kw)


@pytest.mark.parametrize("kw", [dict(sigmas=()), dict(q_values=(3,)), dict(solvers=("cg",)), dict(time_budget_s=0),
                                dict(checkpoints=(1.5,)), dict(lambdas=(-1.0,))])
def test_sweepspec_validation(kw):
    with pytest.raises(ValueError):
        SweepSpec(**kw)


SIM = SimSpec(width=16, height=16, peak=10.0, seed=11)
BASE = AdmmConfig(lam=0.1, stop_tol=1e-3)


def test_single_cell_matches_direct_run():
    rows = run_sweep(SweepSpec(sigmas=(2.0,), lambdas=(0.1,)), SIM, BASE)
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    # rebuild the measurement the cell used
    truth = make_phantom("filaments", 16, 16, 10.0, seed=11)
    model = NoiseModel(sigma=2.0)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([11, 0])))
    H0 = make_psf(SIM)
    meas = simulate_with_rng(truth, H0, model, rng)
    from dataclasses import replace
    g, rec = admm_restore(meas, H0, replace(BASE, model=model), truth=truth)
    assert rows[0]["mae_final"] == pytest.approx(mae(g, truth), rel=1e-12)
    assert rows[0]["outer_iters"] == len(rec)
    assert rows[0]["grad_evals"] == sum(r.grad_evals for r in rec)


def test_solvers_agree_in_sweep():
    rows = run_sweep(SweepSpec(sigmas=(2.0,), solvers=("newton", "mm")), SIM, AdmmConfig(lam=0.1, stop_tol=1e-4))
    a, b = (r["mae_final"] for r in rows)
    assert abs(a - b) <= 0.01 * max(a, b)
    assert rows[0]["mae_measured"] == rows[1]["mae_measured"]


def test_failed_cell_is_marked(tmp_path):
    bad = AdmmConfig(lam=0.1, theta0=1e-12, rho=1e-12, newton_sched=NewtonSchedule(max_inner=1))
    rows = run_sweep(SweepSpec(sigmas=(2.0,), lambdas=(0.1, 0.2)), SimSpec(width=8, height=8, seed=1), bad)
    assert [r["status"] for r in rows] == ["failed", "failed"]
    assert all(np.isnan(r["mae_final"]) for r in rows)
    p = tmp_path / "t.csv"
    write_sweep_csv(rows, p)
    assert "failed" in p.read_text()


def test_sweep_csv_format(tmp_path):
    rows = [{"cell": 0, "lam": 0.123456789, "solver": "mm", "mae_final": 1234567.0, "x": float("nan")}]
    p = tmp_path / "s.csv"
    write_sweep_csv(rows, p)
    out = list(csv.reader(p.open()))
    assert out[0] == ["cell", "lam", "solver", "mae_final", "x"]
    assert out[1] == ["0", "0.123457", "mm", "1.23457e+06", "nan"]
    with pytest.raises(ValueError):
        write_sweep_csv([], p)


def test_parallel_sweep_matches_serial():
    spec = SweepSpec(sigmas=(2.0,), lambdas=(0.1, 0.3))
    cfg = AdmmConfig(lam=0.1, stop_tol=1e-2)
    serial = run_sweep(spec, SimSpec(width=8, height=8, seed=2), cfg, jobs=1)
    par = run_sweep(spec, SimSpec(width=8, height=8, seed=2), cfg, jobs=2)
    assert [r["mae_final"] for r in serial] == [r["mae_final"] for r in par]
