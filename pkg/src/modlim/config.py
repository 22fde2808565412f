"""Run configuration: schema, defaults, validation and the sweep plan.

A configuration is a YAML mapping.  Every key is checked; unknown keys,
out-of-range values and malformed entries are collected and reported
together rather than one at a time.

Schema
------
::

    experiment: rate-sweep        # required, one of EXPERIMENTS
    seed: 0                       # integer, feeds every random draw
    output_dir: modlim-out
    workers: null                 # sweep parallelism; null = available CPUs
    trials: 100                   # randomised trials per inequality suite
    samples: 10                   # sampling intervals of time series
    lemmas: [mollifier, ...]      # verify-lemmas only; default all suites
    grid: {dim: 2, n: 64, box: 6.283185307179586}
    params:                       # each entry a scalar or a sweep range
      n_particles: 1024
      hbar: {base: 2, exponents: [-7, -3]}
      beta: [0.2, 0.5, 0.8]
      kappa: 0.0
      eta: 0.3
      b0: 1.0
      profile_radius: 6.0
      softening: null
    times: {t_end: 1.0, dt: 0.002}
    tolerances: {mass_slope: 1.8, ...}

A sweep range is a list of values or ``{base, exponents: [lo, hi]}``, which
expands to ``base**lo, ..., base**hi`` in unit steps of the exponent.  The run
plan is the cartesian product of all ranges except the refinement axis of
``rate-sweep``, which is ``hbar`` and is consumed inside each point.
"""

from __future__ import annotations

import copy
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import yaml

from .fields import ConfigurationError

__all__ = [
    "EXPERIMENTS",
    "LEMMA_SUITES",
    "DEFAULT_TOLERANCES",
    "ConfigErrors",
    "RunConfig",
    "parse_config",
    "apply_overrides",
]

EXPERIMENTS = ("scattering", "euler", "nls", "nbody", "modenergy", "rate-sweep", "verify-lemmas")

LEMMA_SUITES = ("mollifier", "operator", "poincare", "cancellation", "reduced",
                "two-body-lower", "gaussian-machinery")

#: Tolerances and thresholds with their documented defaults.
DEFAULT_TOLERANCES: Dict[str, float] = {
    "solver": 1e-10,             # scattering residual tolerance
    "agreement_factor": 10.0,    # two-path agreement, in units of ``solver``
    "regime": 0.1,               # admissible coupling N^(beta-1) hbar^-2
    "uniform_factor": 2.0,       # max / min spread allowed for a uniform constant
    "frequency": 1e-2,           # relative error of acoustic frequencies
    "mass": 1e-8,                # relative mass drift
    "momentum": 1e-8,            # drift of total momentum
    "mass_slope": 1.8,           # rate-sweep slope of the squared density error
    "momentum_slope": 0.9,       # rate-sweep slope of the momentum error
    "blowup_factor": 1000.0,     # growth of max |grad u| that halts a fluid run
}

_SWEEPABLE = ("n_particles", "hbar", "beta", "kappa", "eta")

_PARAM_DEFAULTS = {
    "n_particles": 1024, "hbar": 1.0, "beta": 0.5, "kappa": 0.0, "eta": 0.3,
    "b0": 1.0, "profile_radius": 6.0, "softening": None,
}

_GRID_DEFAULTS = {
    "scattering": dict(dim=3, n=16, box=1.0),
    "euler": dict(dim=3, n=16, box=1.0),
    "nls": dict(dim=2, n=64, box=2 * math.pi),
    "nbody": dict(dim=1, n=128, box=16.0),
    "modenergy": dict(dim=2, n=64, box=2 * math.pi),
    "rate-sweep": dict(dim=2, n=64, box=2 * math.pi),
    "verify-lemmas": dict(dim=3, n=32, box=2 * math.pi),
}

_TIME_DEFAULTS = {
    "scattering": dict(t_end=0.0, dt=1.0),
    "euler": dict(t_end=0.85, dt=0.01),
    "nls": dict(t_end=0.5, dt=0.005),
    "nbody": dict(t_end=0.2, dt=0.005),
    "modenergy": dict(t_end=0.2, dt=0.002),
    "rate-sweep": dict(t_end=0.2, dt=0.002),
    "verify-lemmas": dict(t_end=0.0, dt=1.0),
}

_EXPERIMENT_PARAMS = {
    "nbody": dict(n_particles=2, hbar=1.0, profile_radius=4.0),
    "nls": dict(hbar=0.1),
    "modenergy": dict(hbar=0.1),
    "rate-sweep": dict(hbar={"base": 2, "exponents": [-5, -3]}),
    "euler": dict(n_particles=100),
}

_TOP_KEYS = {"experiment", "seed", "output_dir", "workers", "trials", "samples", "lemmas",
             "grid", "params", "times", "tolerances"}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-6`` (no decimal point) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                   |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _load(text: str):
    return yaml.load(text, Loader=_Loader)


class ConfigErrors(ConfigurationError):
    """All validation failures of one configuration."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


@dataclass
class RunConfig:
    """Validated configuration of one run.

    ``params`` maps every physical parameter to a list of values; scalars are
    stored as one-element lists.  ``plan`` is the ordered list of sweep points.
    """

    experiment: str
    seed: int = 0
    output_dir: str = "modlim-out"
    workers: Optional[int] = None
    trials: int = 100
    samples: int = 10
    lemmas: List[str] = field(default_factory=lambda: list(LEMMA_SUITES))
    grid: Dict[str, float] = field(default_factory=dict)
    params: Dict[str, list] = field(default_factory=dict)
    times: Dict[str, float] = field(default_factory=dict)
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    @property
    def sweep_axes(self) -> List[str]:
        axes = [k for k in _SWEEPABLE if k in self.params]
        if self.experiment == "rate-sweep":
            axes.remove("hbar")
        return axes

    @property
    def plan(self) -> List[dict]:
        """Sweep points in a fixed order (last axis varies fastest)."""
        if self.experiment == "verify-lemmas":
            return [{"lemma": name} for name in self.lemmas]
        axes = self.sweep_axes
        return [dict(zip(axes, combo)) for combo in itertools.product(*(self.params[a] for a in axes))]

    def to_dict(self) -> dict:
        return dict(experiment=self.experiment, seed=self.seed, output_dir=self.output_dir,
                    workers=self.workers, trials=self.trials, samples=self.samples,
                    lemmas=list(self.lemmas), grid=dict(self.grid),
                    params={k: list(v) for k, v in self.params.items()},
                    times=dict(self.times), tolerances=dict(self.tolerances))


def _expand_range(name, value, errors):
    if isinstance(value, dict):
        extra = set(value) - {"base", "exponents"}
        if extra or "base" not in value or "exponents" not in value:
            errors.append(f"params.{name}: a range needs exactly the keys 'base' and 'exponents'")
            return None
        exps = value["exponents"]
        if not (isinstance(exps, list) and len(exps) == 2 and all(isinstance(e, int) for e in exps)):
            errors.append(f"params.{name}.exponents must be two integers [lo, hi]")
            return None
        lo, hi = exps
        if lo > hi:
            errors.append(f"params.{name}: empty range, exponents {lo} > {hi}")
            return None
        base = value["base"]
        if not _check_number(errors, f"params.{name}.base", base):
            return None
        if isinstance(base, int) and lo >= 0:
            return [base ** e for e in range(lo, hi + 1)]
        return [float(base) ** e for e in range(lo, hi + 1)]
    if isinstance(value, list):
        if not value:
            errors.append(f"params.{name}: sweep range is empty")
            return None
        return list(value)
    return [value]


def _check_number(errors, where, value, integer=False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if not ok or isinstance(value, bool):
        errors.append(f"{where} must be {'an integer' if integer else 'a number'}, got {value!r}")
        return False
    return True


def _validate_params(raw, errors) -> Dict[str, list]:
    out = {}
    for key, value in raw.items():
        if key not in _PARAM_DEFAULTS:
            errors.append(f"unknown key params.{key}")
            continue
        if key not in _SWEEPABLE:
            if value is not None and not _check_number(errors, f"params.{key}", value):
                continue
            out[key] = [value]
            continue
        values = _expand_range(key, value, errors)
        if values is None:
            continue
        good = [v for v in values if _check_number(errors, f"params.{key}", v, integer=key == "n_particles")]
        if len(good) != len(values):
            continue
        out[key] = good
    for v in out.get("beta", []):
        if not 0.0 < v < 1.0:
            errors.append(f"params.beta = {v} is outside the admissible interval (0,1)")
    for v in out.get("eta", []):
        if not 0.0 < v < 1.0 / 3.0:
            errors.append(f"params.eta = {v} is outside the admissible interval (0,1/3)")
    for v in out.get("hbar", []):
        if not v > 0:
            errors.append(f"params.hbar = {v} must be positive")
    for v in out.get("n_particles", []):
        if v < 2:
            errors.append(f"params.n_particles = {v} must be at least 2")
    for v in out.get("kappa", []):
        if v < 0:
            errors.append(f"params.kappa = {v} must be nonnegative")
    for key in ("b0", "profile_radius", "softening"):
        v = out.get(key, [None])[0]
        if v is not None and not v > 0:
            errors.append(f"params.{key} = {v} must be positive")
    return out


def parse_config(text: str, overrides: Optional[List[str]] = None,
                 experiment: Optional[str] = None) -> RunConfig:
    """Parse YAML text into a validated :class:`RunConfig`.

    Parameters
    ----------
    text : str
        YAML mapping (may be empty when ``experiment`` is given).
    overrides : list of str, optional
        ``dotted.key=value`` assignments applied after parsing; values are
        read as YAML scalars or flow collections.
    experiment : str, optional
        Overrides (or supplies) the ``experiment`` key.

    Raises
    ------
    ConfigErrors
        Listing every problem found.
    """
    try:
        raw = _load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigErrors([f"malformed YAML: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigErrors(["the configuration must be a mapping"])
    errors: List[str] = []
    raw = apply_overrides(raw, overrides or [], errors)
    if experiment is not None:
        if raw.get("experiment", experiment) != experiment:
            errors.append(f"config file is for experiment {raw['experiment']!r}, "
                          f"command line asks for {experiment!r}")
        raw["experiment"] = experiment

    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"unknown key {key}")
    exp = raw.get("experiment")
    if exp is None:
        errors.append("missing required key experiment")
        raise ConfigErrors(errors)
    if exp not in EXPERIMENTS:
        errors.append(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
        raise ConfigErrors(errors)

    cfg = RunConfig(experiment=exp)
    for key in ("seed", "trials", "samples", "workers"):
        if key in raw and raw[key] is not None:
            if _check_number(errors, key, raw[key], integer=True):
                setattr(cfg, key, raw[key])
    if cfg.seed < 0:
        errors.append("seed must be nonnegative")
    if cfg.trials < 1 or cfg.samples < 1:
        errors.append("trials and samples must be positive")
    if cfg.workers is not None and cfg.workers < 1:
        errors.append("workers must be positive")
    if "output_dir" in raw:
        cfg.output_dir = str(raw["output_dir"])
    if "lemmas" in raw:
        lem = raw["lemmas"]
        if not isinstance(lem, list) or not lem:
            errors.append("lemmas must be a nonempty list")
        else:
            for name in lem:
                if name not in LEMMA_SUITES:
                    errors.append(f"unknown lemma suite {name!r}; known: {', '.join(LEMMA_SUITES)}")
            cfg.lemmas = list(lem)

    def section(name):
        value = raw.get(name, {})
        if not isinstance(value, dict):
            errors.append(f"{name} must be a mapping")
            return {}
        return value

    grid = dict(_GRID_DEFAULTS[exp])
    for key, value in section("grid").items():
        if key not in grid:
            errors.append(f"unknown key grid.{key}")
        elif _check_number(errors, f"grid.{key}", value, integer=key in ("dim", "n")):
            grid[key] = value
    if grid["dim"] not in (1, 2, 3):
        errors.append(f"grid.dim must be 1, 2 or 3, got {grid['dim']}")
    if grid["n"] < 2 or grid["n"] % 2:
        errors.append(f"grid.n must be an even integer >= 2, got {grid['n']}")
    if not grid["box"] > 0:
        errors.append("grid.box must be positive")
    cfg.grid = grid

    params_raw = dict(_PARAM_DEFAULTS)
    params_raw.update(_EXPERIMENT_PARAMS.get(exp, {}))
    params_raw.update(section("params"))
    cfg.params = _validate_params(params_raw, errors)

    times = dict(_TIME_DEFAULTS[exp])
    for key, value in section("times").items():
        if key not in times:
            errors.append(f"unknown key times.{key}")
        elif _check_number(errors, f"times.{key}", value):
            times[key] = float(value)
    if not times["dt"] > 0:
        errors.append(f"times.dt must be positive, got {times['dt']}")
    if times["t_end"] < 0:
        errors.append("times.t_end must be nonnegative")
    cfg.times = times

    for key, value in section("tolerances").items():
        if key not in DEFAULT_TOLERANCES:
            errors.append(f"unknown key tolerances.{key}")
        elif _check_number(errors, f"tolerances.{key}", value):
            if not value > 0:
                errors.append(f"tolerances.{key} must be positive")
            cfg.tolerances[key] = float(value)

    if exp == "rate-sweep" and len(cfg.params.get("hbar", [])) < 2:
        errors.append("rate-sweep needs at least two values of params.hbar")
    if errors:
        raise ConfigErrors(errors)
    return cfg


def apply_overrides(raw: dict, overrides: List[str], errors: List[str]) -> dict:
    """Apply ``a.b.c=value`` assignments to a nested mapping (copied)."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            errors.append(f"override {item!r} is not of the form key=value")
            continue
        key, text = item.split("=", 1)
        try:
            value = _load(text)
        except yaml.YAMLError:
            errors.append(f"override {item!r}: value is not valid YAML")
            continue
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                errors.append(f"override {item!r}: {part} is not a mapping")
                break
            node = nxt
        else:
            node[parts[-1]] = value
    return out
