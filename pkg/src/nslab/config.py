"""Run configuration: an INI-style ``key = value`` file with sections.

    [run]        grid_n, scenario (required); dt, t_end, sample_stride, seed,
                 dealias, scheme, checks, output_dir
    [physics]    mu, nu
    [scenario]   band_min, band_max, gamma, amplitude, grad_fraction
    [estimates]  p, beta, T, c1..c4, c_generic, c_p, c0_embed, gamma_star,
                 initial-data norms, chain_form, lower_bound_norm,
                 mixed_norm, d2_form

Unknown sections and keys are rejected; every error names the key.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, replace

from .auditor import CHECKS
from .diagnostics import LedgerOptions
from .dynamics import SCHEMES, PhysicalParams, ScenarioSpec
from .errors import ConfigurationError
from .estimates import EstimateParams

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer, got {text!r}", key=key) from None


def _float(key, text):
    try:
        val = float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {text!r}", key=key) from None
    if math.isnan(val):
        raise ConfigurationError(f"{key}: NaN is not allowed", key=key)
    return val


def _opt_float(key, text):
    return None if text.strip().lower() in ("", "none") else _float(key, text)


def _bool(key, text):
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"{key}: expected true/false, got {text!r}", key=key) from None


def _str(key, text):
    return text.strip()


def _list(key, text):
    return tuple(item.strip() for item in text.split(",") if item.strip())


SCHEMA = {
    "run": {
        "grid_n": _int, "scenario": _str, "dt": _float, "t_end": _float, "sample_stride": _int,
        "seed": _int, "dealias": _bool, "scheme": _str, "checks": _list, "output_dir": _str,
    },
    "physics": {"mu": _float, "nu": _float},
    "scenario": {"band_min": _int, "band_max": _int, "gamma": _float, "amplitude": _float,
                 "grad_fraction": _float},
    "estimates": {
        "p": _float, "beta": _opt_float, "T": _float, "c1": _float, "c2": _float, "c3": _float,
        "c4": _float, "c_generic": _float, "c_p": _float, "c0_embed": _float,
        "gamma_star": _float, "v0_l2": _float, "v0_l6": _float, "vt0_l2": _float,
        "phi0_lp": _opt_float, "X0": _float, "B0": _float, "t_freeze": _opt_float,
        "chain_form": _str, "lower_bound_norm": _str, "mixed_norm": _str, "d2_form": _str,
    },
}
REQUIRED = (("run", "grid_n"), ("run", "scenario"))


@dataclass(frozen=True)
class Config:
    grid_n: int
    scenario: ScenarioSpec
    dt: float = 1e-3
    t_end: float = 1.0
    sample_stride: int = 10
    seed: int = 0
    dealias: bool = True
    scheme: str = "ifrk4"
    checks: tuple = ("energy", "decay", "residual", "final")
    output_dir: str = "out"
    physics: PhysicalParams = field(default_factory=PhysicalParams)
    estimates: EstimateParams = field(default_factory=EstimateParams)
    ledger_options: LedgerOptions = field(default_factory=LedgerOptions)

    def __post_init__(self):
        from .spectral import create_grid

        create_grid(self.grid_n)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError("dt must be positive", key="dt")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ConfigurationError("t_end must be positive", key="t_end")
        if self.t_end < self.dt:
            raise ConfigurationError("t_end must cover at least one step", key="t_end")
        if self.sample_stride < 1:
            raise ConfigurationError("sample_stride must be >= 1", key="sample_stride")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer", key="seed")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}", key="scheme")
        for c in self.checks:
            if c not in CHECKS:
                raise ConfigurationError(f"unknown check {c!r}; known: {', '.join(CHECKS)}", key="checks")

    @property
    def nsteps(self) -> int:
        return int(round(self.t_end / self.dt))

    def with_nu(self, nu: float) -> "Config":
        physics = PhysicalParams(self.physics.mu, nu)
        return replace(self, physics=physics, estimates=self.estimates.with_(nu=_est_nu(nu)))

    def echo(self) -> dict:
        """Plain-data view for manifests."""
        out = {}
        for key in ("grid_n", "dt", "t_end", "sample_stride", "seed", "dealias", "scheme", "output_dir"):
            out[key] = getattr(self, key)
        out["checks"] = list(self.checks)
        out["physics"] = asdict(self.physics)
        out["scenario"] = asdict(self.scenario)
        est = asdict(self.estimates)
        est.pop("c_overrides", None)
        out["estimates"] = est
        out["ledger_options"] = asdict(self.ledger_options)
        return out


def _est_nu(nu):
    # the constant chain needs ν > 0; a run with ν = 0 still carries estimate parameters
    return nu if nu > 0 else 1e-300


def parse_config(text: str) -> Config:
    """Parse and validate configuration text; defaults fill every optional key."""
    try:
        return _parse(text)
    except ConfigurationError as exc:
        if exc.key and exc.key not in str(exc):
            raise ConfigurationError(f"{exc.key}: {exc}", key=exc.key) from None
        raise


def _parse(text):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from None
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]", key=section)
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]", key=key)
            values[section][key] = SCHEMA[section][key](key, raw)
    for section, key in REQUIRED:
        if key not in values.get(section, {}):
            raise ConfigurationError(f"missing required key {key!r} in [{section}]", key=key)

    run = dict(values.get("run", {}))
    phys = values.get("physics", {})
    scen = values.get("scenario", {})
    est = dict(values.get("estimates", {}))

    physics = PhysicalParams(**phys)
    if "gamma" in scen and not scen["gamma"] > 0:
        raise ConfigurationError("gamma must be positive", key="gamma")
    scenario = ScenarioSpec(name=run.pop("scenario"), **scen)
    ledger_opts = LedgerOptions(
        mixed_variant=_check_choice("mixed_norm", est.pop("mixed_norm", "pm1"), ("pm1", "pm2")),
        d2_form=_check_choice("d2_form", est.pop("d2_form", "halved"), ("halved", "full")),
    )
    estimates = EstimateParams(mu=physics.mu, nu=_est_nu(physics.nu), gamma=scenario.gamma, **est)
    return Config(scenario=scenario, physics=physics, estimates=estimates, ledger_options=ledger_opts, **run)


def _check_choice(key, value, choices):
    if value not in choices:
        _bad(key, " or ".join(choices))
    return value


def _bad(key, expected):
    raise ConfigurationError(f"{key}: expected {expected}", key=key)


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc.strerror}", key="config") from None
