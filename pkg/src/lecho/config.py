"""Run configuration for batch sweeps.

A configuration is a JSON document::

    {
      "seed": 1,
      "system": {"generator": {"n_sites": 8, "box_nm": null,
                               "min_distance_nm": 0.3, "spacing_nm": 0.5}},
      "mode": "effective",
      "omega_e": 501398.19...,
      "schemes": [{"scheme": 1, "k": [0.05, 0.1, ...]},
                  {"scheme": 2, "k": [0.1, 0.2, ...]}],
      "time_grid": {"start": 0.0, "stop": 0.002, "step": 2.5e-05},
      "perturbation": {"model": "nonsecular_residual", "strengths": [0.3],
                       "placement": "variable"},
      "outputs": {"directory": "lecho_out", "formats": ["csv", "json"]},
      "workers": 1
    }

``system`` holds either ``generator`` (random cube geometry seeded by the
top-level ``seed``), ``positions_nm`` inline, or ``geometry_file`` naming a
JSON file with ``n_sites``, ``positions_nm``, ``field_direction``,
``coupling_prefactor`` and ``coupling_cutoff``.  The same ``seed`` also
draws the perturbation.  Times are seconds and frequencies rad/s.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .hamiltonians import PERTURBATION_MODELS, PerturbationSpec
from .protocols import DEFAULT_OMEGA_E, SCHEME_RANGES
from .spin import SpinSystem, random_geometry

ENV_PREFIX = "LECHO_"
MODES = ("effective", "microscopic")
PLACEMENTS = ("variable", "both")
FORMATS = ("csv", "json")

DEFAULT_K = {
    1: tuple(round(0.05 * i, 10) for i in range(1, 11)),
    2: tuple(round(0.1 * i, 10) for i in range(1, 10)),
}
_TAU_E = 2 * math.pi / DEFAULT_OMEGA_E


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _number(value, path: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), path,
             f"expected a number, got {value!r}")
    _require(math.isfinite(value), path, "must be finite")
    return float(value)


def _integer(value, path: str) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool), path,
             f"expected an integer, got {value!r}")
    return int(value)


def _check_keys(d: Mapping, allowed, path: str) -> None:
    _require(isinstance(d, Mapping), path, "expected an object")
    extra = sorted(set(d) - set(allowed))
    _require(not extra, path, f"unknown field(s) {', '.join(extra)}")


@dataclass(frozen=True)
class GeneratorSpec:
    n_sites: int = 8
    box_nm: Optional[float] = None
    min_distance_nm: float = 0.3
    spacing_nm: float = 0.5

    def to_dict(self) -> dict:
        return {"n_sites": self.n_sites, "box_nm": self.box_nm,
                "min_distance_nm": self.min_distance_nm, "spacing_nm": self.spacing_nm}


@dataclass(frozen=True)
class SystemSpec:
    """Either a generator, inline positions, or a geometry file."""

    generator: Optional[GeneratorSpec] = field(default_factory=GeneratorSpec)
    positions_nm: Optional[tuple] = None
    geometry_file: Optional[str] = None
    field_direction: tuple = (0.0, 0.0, 1.0)
    coupling_prefactor: float = 377.3
    coupling_cutoff: Optional[float] = None

    def build(self, seed: int) -> SpinSystem:
        if self.geometry_file is not None:
            path = Path(self.geometry_file)
            if not path.is_file():
                raise ConfigError(f"system.geometry_file: no such file {path}")
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"system.geometry_file: invalid JSON ({exc})") from None
            try:
                return SpinSystem.from_dict(data)
            except ValueError as exc:
                raise ConfigError(f"system.geometry_file: {exc}") from None
        if self.positions_nm is not None:
            pos = np.array(self.positions_nm, dtype=float)
        else:
            g = self.generator
            pos = random_geometry(g.n_sites, seed=seed, box_nm=g.box_nm,
                                  min_distance_nm=g.min_distance_nm, spacing_nm=g.spacing_nm)
        return SpinSystem(pos, field_direction=np.array(self.field_direction),
                          coupling_prefactor=self.coupling_prefactor,
                          coupling_cutoff=self.coupling_cutoff)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {}
        if self.geometry_file is not None:
            d["geometry_file"] = self.geometry_file
        elif self.positions_nm is not None:
            d["positions_nm"] = [list(p) for p in self.positions_nm]
        else:
            d["generator"] = self.generator.to_dict()
        d.update(field_direction=list(self.field_direction),
                 coupling_prefactor=self.coupling_prefactor,
                 coupling_cutoff=self.coupling_cutoff)
        return d


@dataclass(frozen=True)
class SchemeSpec:
    scheme: int
    k: tuple

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "k": list(self.k)}


@dataclass(frozen=True)
class TimeGrid:
    start: float = 0.0
    stop: float = 160 * _TAU_E
    step: float = 2 * _TAU_E

    def values(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step * (1 + 1e-12))) + 1
        return self.start + self.step * np.arange(n)

    def to_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop, "step": self.step}


@dataclass(frozen=True)
class PerturbationConfig:
    model: str = "nonsecular_residual"
    strengths: tuple = (0.3,)
    placement: str = "variable"

    def specs(self, seed: int) -> list[PerturbationSpec]:
        return [PerturbationSpec(self.model, s, seed) for s in self.strengths]

    def to_dict(self) -> dict:
        return {"model": self.model, "strengths": list(self.strengths),
                "placement": self.placement}


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "lecho_out"
    formats: tuple = FORMATS

    def to_dict(self) -> dict:
        return {"directory": self.directory, "formats": list(self.formats)}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    system: SystemSpec = field(default_factory=SystemSpec)
    mode: str = "effective"
    omega_e: float = DEFAULT_OMEGA_E
    schemes: tuple = (SchemeSpec(1, DEFAULT_K[1]), SchemeSpec(2, DEFAULT_K[2]))
    time_grid: TimeGrid = field(default_factory=TimeGrid)
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    workers: int = 1

    @property
    def tau_e(self) -> float:
        return 2 * math.pi / self.omega_e

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "system": self.system.to_dict(),
            "mode": self.mode,
            "omega_e": self.omega_e,
            "schemes": [s.to_dict() for s in self.schemes],
            "time_grid": self.time_grid.to_dict(),
            "perturbation": self.perturbation.to_dict(),
            "outputs": self.outputs.to_dict(),
            "workers": self.workers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_system(d: Mapping) -> SystemSpec:
    _check_keys(d, ("generator", "positions_nm", "geometry_file", "field_direction",
                    "coupling_prefactor", "coupling_cutoff"), "system")
    sources = [key for key in ("generator", "positions_nm", "geometry_file") if d.get(key) is not None]
    _require(len(sources) <= 1, "system", f"give only one of generator/positions_nm/geometry_file, got {sources}")
    kwargs: dict[str, Any] = {}
    if "field_direction" in d:
        fd = d["field_direction"]
        _require(isinstance(fd, (list, tuple)) and len(fd) == 3, "system.field_direction",
                 "expected 3 numbers")
        fd = tuple(_number(v, f"system.field_direction[{i}]") for i, v in enumerate(fd))
        _require(any(v != 0 for v in fd), "system.field_direction", "must be nonzero")
        kwargs["field_direction"] = fd
    if "coupling_prefactor" in d:
        kwargs["coupling_prefactor"] = _number(d["coupling_prefactor"], "system.coupling_prefactor")
    if d.get("coupling_cutoff") is not None:
        cut = _number(d["coupling_cutoff"], "system.coupling_cutoff")
        _require(cut > 0, "system.coupling_cutoff", "must be positive")
        kwargs["coupling_cutoff"] = cut
    if d.get("geometry_file") is not None:
        _require(isinstance(d["geometry_file"], str), "system.geometry_file", "expected a path")
        return SystemSpec(generator=None, geometry_file=d["geometry_file"], **kwargs)
    if d.get("positions_nm") is not None:
        pos = d["positions_nm"]
        _require(isinstance(pos, (list, tuple)) and len(pos) > 0, "system.positions_nm",
                 "expected a non-empty list of [x, y, z]")
        rows = []
        for i, p in enumerate(pos):
            _require(isinstance(p, (list, tuple)) and len(p) == 3, f"system.positions_nm[{i}]",
                     "expected [x, y, z]")
            rows.append(tuple(_number(v, f"system.positions_nm[{i}]") for v in p))
        return SystemSpec(generator=None, positions_nm=tuple(rows), **kwargs)
    g = d.get("generator", {})
    _check_keys(g, ("n_sites", "box_nm", "min_distance_nm", "spacing_nm"), "system.generator")
    gen = GeneratorSpec()
    if "n_sites" in g:
        n = _integer(g["n_sites"], "system.generator.n_sites")
        _require(1 <= n <= 16, "system.generator.n_sites", "must lie in [1, 16]")
        gen = replace(gen, n_sites=n)
    for name in ("box_nm", "min_distance_nm", "spacing_nm"):
        if g.get(name) is not None:
            v = _number(g[name], f"system.generator.{name}")
            _require(v > 0 or (name == "min_distance_nm" and v == 0), f"system.generator.{name}",
                     "must be positive")
            gen = replace(gen, **{name: v})
    return SystemSpec(generator=gen, **kwargs)


def _parse_schemes(items) -> tuple:
    _require(isinstance(items, (list, tuple)) and len(items) > 0, "schemes",
             "expected a non-empty list")
    out = []
    seen = set()
    for i, item in enumerate(items):
        path = f"schemes[{i}]"
        _check_keys(item, ("scheme", "k"), path)
        _require("scheme" in item, f"{path}.scheme", "missing")
        scheme = _integer(item["scheme"], f"{path}.scheme")
        _require(scheme in SCHEME_RANGES, f"{path}.scheme", "must be 1 or 2")
        _require(scheme not in seen, f"{path}.scheme", f"scheme {scheme} listed twice")
        seen.add(scheme)
        ks = item.get("k", list(DEFAULT_K[scheme]))
        _require(isinstance(ks, (list, tuple)), f"{path}.k", "expected a list")
        _require(len(ks) > 0, f"{path}.k", "k list is empty")
        lo, hi = SCHEME_RANGES[scheme]
        vals = []
        for j, k in enumerate(ks):
            k = _number(k, f"{path}.k[{j}]")
            legal = k == 0 or (lo < k <= hi if scheme == 1 else lo < k < hi)
            bracket = "(0, 0.5]" if scheme == 1 else "(0, 1)"
            _require(legal, f"{path}.k[{j}]", f"k={k} outside scheme {scheme} range {bracket} (or 0)")
            vals.append(k)
        _require(len(set(vals)) == len(vals), f"{path}.k", "duplicate k values")
        out.append(SchemeSpec(scheme, tuple(vals)))
    return tuple(out)


def _parse_grid(d: Mapping) -> TimeGrid:
    _check_keys(d, ("start", "stop", "step"), "time_grid")
    g = TimeGrid()
    vals = {name: _number(d.get(name, getattr(g, name)), f"time_grid.{name}")
            for name in ("start", "stop", "step")}
    _require(vals["start"] >= 0, "time_grid.start", "must be >= 0")
    _require(vals["step"] > 0, "time_grid.step", "must be positive (grid strictly increasing)")
    _require(vals["stop"] > vals["start"], "time_grid.stop", "must exceed start (grid strictly increasing)")
    _require((vals["stop"] - vals["start"]) / vals["step"] <= 1e6, "time_grid",
             "more than 1e6 points")
    return TimeGrid(**vals)


def _parse_perturbation(d: Mapping) -> PerturbationConfig:
    _check_keys(d, ("model", "strengths", "placement"), "perturbation")
    p = PerturbationConfig()
    model = d.get("model", p.model)
    _require(model in PERTURBATION_MODELS, "perturbation.model",
             f"unknown model {model!r}; expected one of {', '.join(PERTURBATION_MODELS)}")
    strengths = d.get("strengths", list(p.strengths))
    _require(isinstance(strengths, (list, tuple)) and len(strengths) > 0,
             "perturbation.strengths", "expected a non-empty list")
    vals = []
    for i, s in enumerate(strengths):
        s = _number(s, f"perturbation.strengths[{i}]")
        _require(s >= 0, f"perturbation.strengths[{i}]", "must be >= 0")
        vals.append(s)
    placement = d.get("placement", p.placement)
    _require(placement in PLACEMENTS, "perturbation.placement",
             f"expected one of {', '.join(PLACEMENTS)}")
    return PerturbationConfig(model=model, strengths=tuple(vals), placement=placement)


def _parse_outputs(d: Mapping) -> OutputConfig:
    _check_keys(d, ("directory", "formats"), "outputs")
    o = OutputConfig()
    directory = d.get("directory", o.directory)
    _require(isinstance(directory, str) and directory, "outputs.directory", "expected a path")
    formats = d.get("formats", list(o.formats))
    _require(isinstance(formats, (list, tuple)) and len(formats) > 0, "outputs.formats",
             "expected a non-empty list")
    for i, f in enumerate(formats):
        _require(f in FORMATS, f"outputs.formats[{i}]", f"expected one of {', '.join(FORMATS)}")
    return OutputConfig(directory=directory, formats=tuple(formats))


def parse_config(d: Mapping) -> RunConfig:
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    _check_keys(d, ("seed", "system", "mode", "omega_e", "schemes", "time_grid",
                    "perturbation", "outputs", "workers"), "config")
    base = RunConfig()
    seed = _integer(d.get("seed", base.seed), "seed")
    _require(seed >= 0, "seed", "must be >= 0")
    mode = d.get("mode", base.mode)
    _require(mode in MODES, "mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
    omega_e = _number(d.get("omega_e", base.omega_e), "omega_e")
    _require(omega_e > 0, "omega_e", "must be positive")
    workers = _integer(d.get("workers", base.workers), "workers")
    _require(workers >= 1, "workers", "must be >= 1")
    return RunConfig(
        seed=seed,
        system=_parse_system(d.get("system", {})),
        mode=mode,
        omega_e=omega_e,
        schemes=_parse_schemes(d["schemes"]) if "schemes" in d else base.schemes,
        time_grid=_parse_grid(d.get("time_grid", {})),
        perturbation=_parse_perturbation(d.get("perturbation", {})),
        outputs=_parse_outputs(d.get("outputs", {})),
        workers=workers,
    )


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return parse_config(data)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.exists() or path.is_dir():
        raise ConfigError(f"config: no such file {path}")
    return loads(path.read_text())


def apply_overrides(cfg: RunConfig, seed=None, mode=None, workers=None, out=None,
                    environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Layer environment variables, then explicit flags, over ``cfg``.

    Recognised variables: ``LECHO_SEED``, ``LECHO_MODE``, ``LECHO_WORKERS``
    and ``LECHO_OUT``.  Flags win over the environment.
    """
    env = os.environ if environ is None else environ
    d = cfg.to_dict()

    def pick(flag, name, conv):
        if flag is not None:
            return flag
        raw = env.get(ENV_PREFIX + name)
        if raw is None or raw == "":
            return None
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"{ENV_PREFIX}{name}: cannot parse {raw!r}") from None

    seed = pick(seed, "SEED", int)
    mode = pick(mode, "MODE", str)
    workers = pick(workers, "WORKERS", int)
    out = pick(out, "OUT", str)
    if seed is not None:
        d["seed"] = seed
    if mode is not None:
        d["mode"] = mode
    if workers is not None:
        d["workers"] = workers
    if out is not None:
        d["outputs"]["directory"] = out
    return parse_config(d)
