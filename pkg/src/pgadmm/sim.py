"""Synthetic measurements, phantoms and the benchmark sweep harness.

Measurements follow ``m' = alpha * Poisson(alpha' * H g) + N(0, sigma^2)``.
Randomness comes from numpy's PCG64 generator. Poisson counts use numpy's
exact sampler.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .admm import AdmmConfig, ConvergenceError, admm_restore, mae
from .image import CirculantOperator, apply, make_gaussian_psf
from .io import read_image
from .likelihood import NoiseModel

__all__ = [
    "PHANTOMS",
    "SimSpec",
    "SweepSpec",
    "make_phantom",
    "make_psf",
    "simulate",
    "simulate_with_rng",
    "run_sweep",
    "write_sweep_csv",
    "SWEEP_COLUMNS",
    "mae",
]

log = logging.getLogger(__name__)

PHANTOMS = ("filaments", "dots", "grid", "file")


@dataclass(frozen=True)
class SimSpec:
    """Everything needed to produce one synthetic measurement.

    ``phantom`` is one of :data:`PHANTOMS`; ``"file"`` loads
    ``phantom_path`` and rescales it to ``peak``. The PSF is Gaussian with
    std ``psf_sigma`` unless ``psf_path`` names a centered kernel file.
    """

    phantom: str = "filaments"
    width: int = 32
    height: int = 32
    peak: float = 12.0
    model: NoiseModel = field(default_factory=NoiseModel)
    psf_sigma: float = 1.5
    psf_path: str | None = None
    phantom_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.phantom not in PHANTOMS:
            raise ValueError(f"phantom must be one of {PHANTOMS}, got {self.phantom!r}")
        if self.phantom == "file" and not self.phantom_path:
            raise ValueError("phantom 'file' needs phantom_path")
        if not self.peak > 0:
            raise ValueError("peak must be positive")
        if self.width < 2 or self.height < 2:
            raise ValueError("phantom must be at least 2x2")
        if self.psf_path is None and not self.psf_sigma > 0:
            raise ValueError("psf_sigma must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SweepSpec:
    sigmas: tuple = (3.0,)
    alpha_primes: tuple = (1.0,)
    q_values: tuple = (2,)
    lambdas: tuple = (1.0,)
    solvers: tuple = ("newton",)
    time_budget_s: float = 60.0
    checkpoints: tuple = (0.1, 0.25, 0.5, 1.0)

    def __post_init__(self):
        for name in ("sigmas", "alpha_primes", "q_values", "lambdas", "solvers", "checkpoints"):
            if not len(getattr(self, name)):
                raise ValueError(f"{name} must not be empty")
        if any(q not in (1, 2) for q in self.q_values):
            raise ValueError("q_values must be a subset of {1, 2}")
        if any(s not in ("newton", "mm") for s in self.solvers):
            raise ValueError("solvers must be a subset of {newton, mm}")
        if any(not s > 0 for s in self.sigmas) or any(not a > 0 for a in self.alpha_primes):
            raise ValueError("sigmas and alpha_primes must be positive")
        if any(not v > 0 for v in self.lambdas):
            raise ValueError("lambdas must be positive")
        if not self.time_budget_s > 0:
            raise ValueError("time_budget_s must be positive")
        if any(not 0 < c <= 1 for c in self.checkpoints):
            raise ValueError("checkpoints are fractions of the time budget in (0, 1]")


def _grid(width, height):
    yy, xx = np.mgrid[0:height, 0:width]
    return np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)


def _filaments(width, height, rng):
    # smooth random curves rendered with a sub-pixel Gaussian cross-section
    pix = _grid(width, height)
    img = np.zeros(width * height)
    n_curves = max(3, (width + height) // 16)
    span = math.hypot(width, height)
    for _ in range(n_curves):
        start = rng.uniform([0, 0], [width, height])
        theta = rng.uniform(0, 2 * np.pi)
        bend = rng.normal(0.0, 1.5 / span)
        steps = int(4 * span)
        ang = theta + bend * np.arange(steps) + np.cumsum(rng.normal(0, 0.02, steps))
        pts = start + 0.5 * np.cumsum(np.column_stack([np.cos(ang), np.sin(ang)]), axis=0)
        inside = (pts[:, 0] > -2) & (pts[:, 0] < width + 2) & (pts[:, 1] > -2) & (pts[:, 1] < height + 2)
        if not inside.any():
            continue
        dist, _ = cKDTree(pts[inside]).query(pix)
        img += rng.uniform(0.5, 1.0) * np.exp(-(dist**2) / (2 * 0.6**2))
    return img.reshape(height, width)


def _dots(width, height, rng):
    # impulses with no other impulse among their 8 neighbours
    img = np.zeros((height, width))
    target = max(2, width * height // 64)
    placed = 0
    for idx in rng.permutation(width * height):
        y, x = divmod(int(idx), width)
        if img[max(0, y - 1):y + 2, max(0, x - 1):x + 2].any():
            continue
        img[y, x] = rng.uniform(0.3, 1.0)
        placed += 1
        if placed == target:
            break
    return img


def _grid_lines(width, height, rng):
    img = np.zeros((height, width))
    step = max(4, min(width, height) // 6)
    off = int(rng.integers(0, step))
    img[off::step, :] = 1.0
    img[:, off::step] = 1.0
    return img


def make_phantom(kind: str, width: int, height: int, peak: float, seed: int = 0, path=None) -> np.ndarray:
    """Nonnegative test image whose maximum is exactly ``peak``.

    Parameters
    ----------
    kind : {'filaments', 'dots', 'grid', 'file'}
        Curved thin lines; isolated impulses on zero background; a
        rectilinear line grid; or an image loaded from ``path``.
    """
    if not peak > 0:
        raise ValueError("peak must be positive")
    rng = np.random.default_rng(seed)
    if kind == "filaments":
        img = _filaments(width, height, rng)
    elif kind == "dots":
        img = _dots(width, height, rng)
    elif kind == "grid":
        img = _grid_lines(width, height, rng)
    elif kind == "file":
        if path is None:
            raise ValueError("phantom 'file' needs a path")
        img = read_image(path)
        if np.any(img < 0):
            raise ValueError("phantom image must be nonnegative")
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    top = float(img.max())
    if top <= 0:
        raise ValueError("phantom is identically zero")
    img = img * (peak / top)
    img[np.unravel_index(np.argmax(img), img.shape)] = peak
    return img


def make_psf(spec: SimSpec, shape=None) -> CirculantOperator:
    """Blur operator described by ``spec``, normalized to unit DC gain."""
    h, w = shape if shape is not None else (spec.height, spec.width)
    if spec.psf_path is None:
        return make_gaussian_psf(w, h, spec.psf_sigma)
    kernel = read_image(spec.psf_path)
    total = kernel.sum()
    if not total > 0:
        raise ValueError("PSF kernel must have positive sum")
    kh, kw = kernel.shape
    return CirculantOperator.from_kernel(kernel / total, (h, w), center=(kh // 2, kw // 2))


def simulate_with_rng(truth, H: CirculantOperator, model: NoiseModel, rng: np.random.Generator):
    """Draw one measurement of ``truth`` through ``H`` (without the ``alpha'`` scale)."""
    truth = np.asarray(truth, dtype=np.float64)
    if np.any(truth < 0):
        raise ValueError("truth must be nonnegative")
    mean = model.alpha_prime * apply(H, truth)
    if np.any(mean < 0):
        log.info("clamping %d negative blurred values (min %.3g) to 0", int((mean < 0).sum()), mean.min())
        mean = np.maximum(mean, 0.0)
    counts = rng.poisson(mean)
    return model.alpha * counts + rng.normal(0.0, model.sigma, size=truth.shape)


def simulate(truth, spec: SimSpec):
    """Measure ``truth`` under ``spec``.

    Returns
    -------
    measured : ndarray
    H : CirculantOperator
        Restoration operator ``alpha' * H_psf`` so that restored images share
        the units of ``truth``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    H = make_psf(spec, truth.shape)
    rng = np.random.Generator(np.random.PCG64(int(spec.seed)))
    measured = simulate_with_rng(truth, H, spec.model, rng)
    return measured, H.scaled(spec.model.alpha_prime)


SWEEP_COLUMNS = ("cell", "sigma", "alpha_prime", "q", "lam", "solver", "status")


def _checkpoint_maes(records, times):
    out = []
    for t in times:
        done = [r.mae for r in records if r.elapsed <= t]
        out.append(done[-1] if done else math.nan)
    return out


def _run_cell(args):
    cell, sigma, alpha_prime, q, lam, solver, sim, base, budget, fractions, meas_index = args
    model = replace(sim.model, sigma=sigma, alpha_prime=alpha_prime)
    truth = make_phantom(sim.phantom, sim.width, sim.height, sim.peak, seed=sim.seed, path=sim.phantom_path)
    # one measurement per (sigma, alpha') so solvers and priors see the same data
    ss = np.random.SeedSequence([int(sim.seed), meas_index])
    H0 = make_psf(sim, truth.shape)
    measured = simulate_with_rng(truth, H0, model, np.random.Generator(np.random.PCG64(ss)))
    H = H0.scaled(alpha_prime)
    cfg = replace(base, lam=lam, q=q, inner_solver=solver, model=model)
    row = {"cell": cell, "sigma": sigma, "alpha_prime": alpha_prime, "q": q, "lam": lam, "solver": solver,
           "mae_measured": mae(measured, truth)}
    t0 = time.perf_counter()
    try:
        g, records = admm_restore(measured, H, cfg, truth=truth)
        status = "ok"
    except (ConvergenceError, FloatingPointError) as exc:
        log.warning("cell %d failed: %s", cell, exc)
        records = getattr(exc, "records", [])
        g, status = None, "failed"
    row["status"] = status
    for frac, val in zip(fractions, _checkpoint_maes(records, [f * budget for f in fractions])):
        row[f"mae_t{frac:g}"] = val
    row["mae_final"] = mae(g, truth) if g is not None else math.nan
    row["outer_iters"] = len(records)
    row["grad_evals"] = sum(r.grad_evals for r in records)
    row["cost_final"] = records[-1].cost if records and g is not None else math.nan
    row["wall_s"] = time.perf_counter() - t0
    return row


def run_sweep(spec: SweepSpec, sim: SimSpec, base: AdmmConfig | None = None, jobs: int = 1) -> list[dict]:
    """Run every (sigma, alpha', q, lam, solver) cell and collect one row per cell.

    A failing cell is marked ``status=failed`` and the sweep continues.
    Cells run in ``jobs`` worker processes when ``jobs > 1``.
    """
    base = base or AdmmConfig()
    meas = {key: i for i, key in enumerate(itertools.product(spec.sigmas, spec.alpha_primes))}
    tasks = []
    for cell, (sigma, ap, q, lam, solver) in enumerate(
            itertools.product(spec.sigmas, spec.alpha_primes, spec.q_values, spec.lambdas, spec.solvers)):
        tasks.append((cell, float(sigma), float(ap), int(q), float(lam), solver, sim, base,
                      spec.time_budget_s, tuple(spec.checkpoints), meas[(sigma, ap)]))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, tasks))
    return [_run_cell(t) for t in tasks]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.6g}"
    return str(v)


def write_sweep_csv(rows: list[dict], path):
    """Header row then one row per cell; reals at 6 significant digits."""
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0].keys())
    with open(path, "w", newline="", encoding="ascii") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for r in rows:
            wr.writerow([_fmt(r.get(c, "")) for c in cols])
