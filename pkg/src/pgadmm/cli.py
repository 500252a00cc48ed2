"""Command-line front end: ``pgadmm simulate | restore | bench``.

Exit codes: 0 success, 2 bad configuration, 3 I/O failure, 4 convergence
failure of the inner solver.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .admm import ConvergenceError, admm_restore, mae, write_trace
from .config import ConfigError, RunConfig, load_config, parse_config
from .io import ImageFormatError, read_image, write_image
from .sim import make_phantom, make_psf, run_sweep, simulate, write_sweep_csv

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CONVERGENCE = 0, 2, 3, 4


class _IOFailure(Exception):
    pass


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    return cfg.override(seed=getattr(args, "seed", None), solver=getattr(args, "solver", None))


def _read(path):
    try:
        return read_image(path)
    except (OSError, ImageFormatError) as exc:
        raise _IOFailure(f"cannot read {path}: {exc}") from exc


def _write(path, img):
    try:
        write_image(path, img)
    except (OSError, ImageFormatError) as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from exc


def cmd_simulate(cfg: RunConfig, out_measured, out_truth, out_psf, out=None) -> int:
    out = out or sys.stdout
    spec = cfg.sim_spec()
    try:
        truth = make_phantom(spec.phantom, spec.width, spec.height, spec.peak, seed=spec.seed,
                             path=spec.phantom_path)
        measured, H = simulate(truth, spec)
    except (OSError, ImageFormatError) as exc:
        raise _IOFailure(str(exc)) from exc
    _write(out_measured, measured)
    _write(out_truth, truth)
    # the unit-gain PSF; restoration re-applies alpha_prime from the config
    _write(out_psf, H.scaled(1.0 / spec.model.alpha_prime).centered_kernel())
    print(f"measured MAE vs truth: {mae(measured, truth):.6g}", file=out)
    return EXIT_OK


def cmd_restore(cfg: RunConfig, in_measured, in_psf, out_image, out_trace, in_truth=None,
                out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    measured = _read(in_measured)
    truth = _read(in_truth) if in_truth else None
    if truth is not None and truth.shape != measured.shape:
        raise _IOFailure(f"truth shape {truth.shape} differs from measurement {measured.shape}")
    spec = replace(cfg.sim_spec(), psf_path=in_psf)
    try:
        H = make_psf(spec, measured.shape).scaled(spec.model.alpha_prime)
    except (OSError, ImageFormatError) as exc:
        raise _IOFailure(f"cannot read PSF {in_psf}: {exc}") from exc
    except ValueError as exc:
        raise _IOFailure(f"bad PSF {in_psf}: {exc}") from exc
    acfg = cfg.admm_config()
    try:
        g, records = admm_restore(measured, H, acfg, truth=truth)
    except FloatingPointError as exc:
        print(f"convergence failure: {exc}", file=err)
        return EXIT_CONVERGENCE
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=err)
        if exc.certificate is not None:
            print(json.dumps(exc.certificate.as_dict(), indent=2), file=err)
        if exc.records:
            _trace(out_trace, exc.records, cfg)
        return EXIT_CONVERGENCE
    _write(out_image, g)
    _trace(out_trace, records, cfg)
    last = records[-1]
    print(f"iterations: {len(records)}", file=out)
    print(f"final cost: {last.cost:.10g}", file=out)
    if truth is not None:
        print(f"MAE: {last.mae:.6g} (measured: {mae(measured, truth):.6g})", file=out)
    return EXIT_OK


def _trace(path, records, cfg):
    try:
        write_trace(path, records, header=cfg.dump())
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from exc


def cmd_bench(cfg: RunConfig, out_csv, jobs=1, out=None) -> int:
    out = out or sys.stdout
    rows = run_sweep(cfg.sweep_spec(), cfg.sim_spec(), cfg.admm_config(), jobs=jobs)
    try:
        write_sweep_csv(rows, out_csv)
    except OSError as exc:
        raise _IOFailure(f"cannot write {out_csv}: {exc}") from exc
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells, {failed} failed", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgadmm", description="Poisson-Gaussian deblurring by inexact ADMM.")
    p.add_argument("--quiet", action="store_true", help="only print errors")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value configuration file")
        sp.add_argument("--seed", type=lambda s: int(s, 0), help="override the RNG seed")
        sp.add_argument("--solver", choices=("newton", "mm"), help="override the inner solver")

    s = sub.add_parser("simulate", help="generate a phantom and its blurred noisy measurement")
    common(s)
    s.add_argument("--out-measured", required=True)
    s.add_argument("--out-truth", required=True)
    s.add_argument("--out-psf", required=True)

    r = sub.add_parser("restore", help="deblur a measurement")
    common(r)
    r.add_argument("--measured", required=True)
    r.add_argument("--psf", required=True, help="centered PSF kernel file")
    r.add_argument("--out", required=True, help="restored image")
    r.add_argument("--trace", required=True, help="per-iteration CSV trace")
    r.add_argument("--truth", help="ground truth for MAE")

    b = sub.add_parser("bench", help="run a parameter sweep")
    common(b)
    b.add_argument("--out", required=True, help="benchmark CSV")
    b.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = open(os.devnull, "w") if args.quiet else sys.stdout
    try:
        try:
            cfg = _load(args)
        except OSError as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out_measured, args.out_truth, args.out_psf, out=out)
        if args.command == "restore":
            return cmd_restore(cfg, args.measured, args.psf, args.out, args.trace, args.truth, out=out)
        if args.jobs < 1:
            print("config error: --jobs must be positive", file=sys.stderr)
            return EXIT_CONFIG
        return cmd_bench(cfg, args.out, jobs=args.jobs, out=out)
    except _IOFailure as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if out is not sys.stdout:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
