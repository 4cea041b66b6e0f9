"""Experiment configuration files.

A configuration is an INI file with one section per experiment.  Keys
holding comma-separated lists span a Cartesian grid::

    [scaling]
    n = 10000
    lambda = 0.045, 0.09, 0.18
    alpha = 1
    variant = x
    replicas = 500
    seed = 1
    fit = vary_lambda_fixed_n
    min_dominance = 0
"""
from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field

from .core import DEFAULT_HORIZON, Engine
from .experiments import AUDITS, FIT_MODES, ExperimentSpec
from .model import ProcessParams, Variant

_KNOWN = {"n", "lambda", "alpha", "variant", "replicas", "seed", "engine", "horizon", "fit",
          "min_dominance", "audits", "floor_required", "gap_b", "gap_samples"}


class ConfigError(ValueError):
    """The configuration file is malformed."""


@dataclass
class ExperimentConfig:
    name: str
    spec: ExperimentSpec
    fit: str | None = None
    min_dominance: float = 10.0
    floor_required: float | None = None
    gap_b: tuple[int, ...] = (1, 5)
    gap_samples: int = 10_000
    raw: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """Every setting, with defaults filled in, for the manifest."""
        s = self.spec
        return {
            "name": self.name,
            "grid": [p.as_dict() for p in s.grid],
            "replicas": s.replicas,
            "master_seed": s.master_seed,
            "engine": s.engine.value,
            "horizon": s.horizon,
            "audits": sorted(s.audits),
            "fit": self.fit,
            "min_dominance": self.min_dominance,
            "floor_required": self.floor_required,
            "gap_b": list(self.gap_b),
            "gap_samples": self.gap_samples,
        }


def _values(text: str, conv) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError("empty value")
    return [conv(t) for t in items]


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ConfigError(f"expected an integer, got {text!r}")
    return int(v)


def parse_section(name: str, sec) -> ExperimentConfig:
    unknown = set(sec.keys()) - _KNOWN
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    try:
        ns = _values(sec.get("n", "0"), _int)
        lams = _values(sec.get("lambda", "1"), float)
        alphas = _values(sec.get("alpha", "1"), float)
        variants = _values(sec.get("variant", "x"), Variant.parse)
        grid = [ProcessParams(n, lam, a, v)
                for v, a, lam, n in itertools.product(variants, alphas, lams, ns)]
        audits = [a.strip() for a in sec.get("audits", "").split(",") if a.strip()]
        fit = sec.get("fit") or None
        if fit is not None and fit not in FIT_MODES:
            raise ConfigError(f"[{name}] fit must be one of {FIT_MODES}")
        spec = ExperimentSpec(
            grid, _int(sec.get("replicas", "1000")), _int(sec.get("seed", "0")),
            Engine(sec.get("engine", "lumped")), float(sec.get("horizon", str(DEFAULT_HORIZON))),
            frozenset(audits))
        floor = sec.get("floor_required")
        return ExperimentConfig(
            name, spec, fit, float(sec.get("min_dominance", "10")),
            float(floor) if floor else None,
            tuple(_values(sec.get("gap_b", "1, 5"), _int)),
            _int(sec.get("gap_samples", "10000")), dict(sec))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path) -> list[ExperimentConfig]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sections = parser.sections()
    if not sections:
        raise ConfigError("configuration has no sections")
    return [parse_section(s, parser[s]) for s in sections]


__all__ = ["AUDITS", "ConfigError", "ExperimentConfig", "load_config", "parse_section"]
