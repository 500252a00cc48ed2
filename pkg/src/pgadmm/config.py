"""Flat ``key = value`` run configuration.

One setting per line; ``#`` starts a comment. Unknown keys, duplicates and
malformed values are rejected with the offending line number. Absent keys
take the defaults listed in :data:`DEFAULTS`, and :meth:`RunConfig.dump`
echoes the fully resolved document.
"""

from __future__ import annotations

from dataclasses import dataclass

from .admm import AdmmConfig
from .inner import NewtonSchedule
from .likelihood import REFERENCE_DELTA, NoiseModel
from .sim import PHANTOMS, SimSpec, SweepSpec

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "DEFAULTS"]


class ConfigError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _opt_str(s):
    s = s.strip()
    return None if s.lower() in ("", "none") else s


def _choice(*options):
    def parse(s):
        s = s.strip().lower()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _list(item):
    def parse(s):
        vals = tuple(item(v) for v in s.split(",") if v.strip())
        if not vals:
            raise ValueError("empty list")
        return vals
    return parse


def _seed(s):
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return v


# key: (parser, default)
SCHEMA = {
    # restoration
    "lam": (float, 0.1),
    "beta": (float, 1.0),
    "q": (int, 2),
    "rho": (float, 0.99),
    "theta0": (float, 1.0),
    "solver": (_choice("newton", "mm"), "newton"),
    "C": (float, 1.0),
    "C2": (float, 1.0),
    "C_delta": (float, 0.25),
    "max_inner": (int, 500),
    "error_share": (float, 0.5),
    "delta_cap": (float, REFERENCE_DELTA),
    "stop_tol": (float, 1e-4),
    "max_outer": (int, 300),
    "u_prime": (_opt_float, None),
    "max_time_s": (_opt_float, None),
    "abort_after": (int, 3),
    # noise model
    "alpha": (float, 1.0),
    "sigma": (float, 3.0),
    "alpha_prime": (float, 1.0),
    # simulation
    "phantom": (_choice(*PHANTOMS), "filaments"),
    "phantom_path": (_opt_str, None),
    "width": (int, 32),
    "height": (int, 32),
    "peak": (float, 12.0),
    "psf_sigma": (float, 1.5),
    "psf_path": (_opt_str, None),
    "seed": (_seed, 0),
    # sweep
    "sigmas": (_list(float), (3.0,)),
    "alpha_primes": (_list(float), (1.0,)),
    "q_values": (_list(int), (2,)),
    "lambdas": (_list(float), (0.1,)),
    "solvers": (_list(_choice("newton", "mm")), ("newton",)),
    "time_budget_s": (float, 60.0),
    "checkpoints": (_list(float), (0.1, 0.25, 0.5, 1.0)),
}
DEFAULTS = {k: v[1] for k, v in SCHEMA.items()}


def _render(v):
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def override(self, **kw) -> "RunConfig":
        unknown = set(kw) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
        vals = dict(self.values)
        vals.update({k: v for k, v in kw.items() if v is not None})
        out = RunConfig(vals)
        out.validate()
        return out

    def noise_model(self) -> NoiseModel:
        v = self.values
        return NoiseModel(alpha=v["alpha"], sigma=v["sigma"], alpha_prime=v["alpha_prime"])

    def admm_config(self) -> AdmmConfig:
        v = self.values
        sched = NewtonSchedule(C=v["C"], C2=v["C2"], C_delta=v["C_delta"], max_inner=v["max_inner"],
                               error_share=v["error_share"], delta_cap=v["delta_cap"])
        return AdmmConfig(lam=v["lam"], beta=v["beta"], q=v["q"], rho=v["rho"], theta0=v["theta0"],
                          inner_solver=v["solver"], newton_sched=sched, stop_tol=v["stop_tol"],
                          max_outer=v["max_outer"], model=self.noise_model(), u_prime=v["u_prime"],
                          max_time_s=v["max_time_s"], abort_after=v["abort_after"])

    def sim_spec(self) -> SimSpec:
        v = self.values
        return SimSpec(phantom=v["phantom"], width=v["width"], height=v["height"], peak=v["peak"],
                       model=self.noise_model(), psf_sigma=v["psf_sigma"], psf_path=v["psf_path"],
                       phantom_path=v["phantom_path"], seed=v["seed"])

    def sweep_spec(self) -> SweepSpec:
        v = self.values
        return SweepSpec(sigmas=v["sigmas"], alpha_primes=v["alpha_primes"], q_values=v["q_values"],
                         lambdas=v["lambdas"], solvers=v["solvers"], time_budget_s=v["time_budget_s"],
                         checkpoints=v["checkpoints"])

    def validate(self):
        """Build every derived spec once so range errors surface at load time."""
        try:
            self.admm_config()
            self.sim_spec()
            self.sweep_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def dump(self) -> str:
        return "\n".join(f"{k}={_render(self.values[k])}" for k in SCHEMA) + "\n"


def parse_config(text: str) -> RunConfig:
    vals = dict(DEFAULTS)
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw.strip()!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno)
        seen[key] = lineno
        try:
            vals[key] = SCHEMA[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from exc
    cfg = RunConfig(vals)
    try:
        cfg.validate()
    except ConfigError as exc:
        # point at the line of the first key the derived specs complain about
        msg = str(exc)
        where = next((ln for k, ln in seen.items() if k in msg), None)
        raise ConfigError(msg, where) from exc
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
