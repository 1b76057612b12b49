"""Experiment configuration: parsing, validation, overrides and round-trip."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import spectral
from .errors import BosonLabError, ConfigError
from .model import BECPhase, ModelParams, NormalPhase
from .profiles import PROFILES, TestFunction, make_profile
from .spectral import Grid


@dataclass
class GridConfig:
    d: int = 3
    L: float = 8.0
    N: int = 32


@dataclass
class ModelConfig:
    beta: float = 1.0
    phase: str = "bec"
    rho: Optional[float] = None
    rho_factor: Optional[float] = 2.0  # rho as a multiple of the infinite-volume critical density
    z: Optional[float] = None


@dataclass
class ProfileConfig:
    shape: str = "box"
    size: float = 1.0  # halfwidth (box) or radius (ball, bump)
    height: float = 1.0
    center: Optional[list] = None
    csv: Optional[str] = None  # per-cell values; overrides the parametric shape


@dataclass
class MCConfig:
    n_samples: int = 2000
    seed: int = 7


@dataclass
class SampleConfig:
    measure: str = "bec"  # bec | det | normal
    variant: str = "shifted_field"
    counts_sidecar: bool = False


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    kappas: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    audit_kappas: list = field(default_factory=lambda: [2.0, 4.0, 8.0, 16.0, 32.0])
    t_panel: list = field(default_factory=lambda: [-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 0.7])
    t_units: str = "pole"  # "pole": t_panel entries are multiples of the limit pole
    s_grid: list = field(default_factory=lambda: [round(0.1 * k, 10) for k in range(3, 21)])
    s_units: str = "mean"  # "mean": s_grid entries are multiples of the mean
    mc: MCConfig = field(default_factory=MCConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        data = self.to_dict()
        data["output"].pop("directory")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- derived objects -----------------------------------------------------

    def make_grid(self) -> Grid:
        return spectral.make_grid(self.grid.d, self.grid.L, self.grid.N)

    def make_params(self) -> ModelParams:
        grid = self.make_grid()
        m = self.model
        if m.phase == "normal":
            return ModelParams(grid, m.beta, NormalPhase(m.z))
        rho = m.rho if m.rho is not None else m.rho_factor * spectral.critical_density_continuum(m.beta, grid.d)
        return ModelParams(grid, m.beta, BECPhase(rho))

    def make_profile(self, grid: Optional[Grid] = None) -> TestFunction:
        grid = grid or self.make_grid()
        p = self.profile
        if p.csv:
            return load_profile_csv(grid, p.csv)
        return make_profile(grid, p.shape, p.size, p.height, p.center)


_SECTIONS = {
    "grid": GridConfig,
    "model": ModelConfig,
    "profile": ProfileConfig,
    "mc": MCConfig,
    "sample": SampleConfig,
    "output": OutputConfig,
}


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    kwargs = {}
    for key, value in data.items():
        sub = _SECTIONS.get(key) if cls is ExperimentConfig else None
        kwargs[key] = _build(sub, value, key) if sub else value
    return cls(**kwargs)


def from_dict(data: Optional[dict]) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {}, "")
    validate(cfg)
    return cfg


def load(path: Optional[str], overrides: Optional[list] = None, settings: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML file, apply ``key=value`` overrides, then typed ``settings``."""
    data: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", str(exc)) from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("--config", f"not valid YAML: {exc}") from None
    data = apply_overrides(data, overrides or [])
    for key, value in (settings or {}).items():
        set_path(data, key, value)
    return from_dict(data)


def set_path(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.strip().split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot override inside a scalar")
    node[parts[-1]] = value


def apply_overrides(data: dict, overrides: list) -> dict:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars."""
    out = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--override", f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(key, f"cannot parse value {raw!r}") from None
        set_path(out, key, value)
    return out


def _number(value, path, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if integer:
        ok = ok and float(value).is_integer()
    if not ok or not np.isfinite(value):
        raise ConfigError(path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    return int(value) if integer else float(value)


def validate(cfg: ExperimentConfig) -> None:
    """Check every precondition up front, naming the offending key."""
    g = cfg.grid
    g.d = _number(g.d, "grid.d", integer=True)
    g.N = _number(g.N, "grid.N", integer=True)
    g.L = _number(g.L, "grid.L")
    if g.d < 3:
        raise ConfigError("grid.d", f"d = {g.d}; at least 3 dimensions are required")
    if g.N < 4 or g.N % 2:
        raise ConfigError("grid.N", f"N = {g.N}; need an even number of cells >= 4")
    if g.L <= 0:
        raise ConfigError("grid.L", "box side must be positive")

    m = cfg.model
    m.beta = _number(m.beta, "model.beta")
    if m.beta <= 0:
        raise ConfigError("model.beta", "beta must be positive")
    if m.phase not in ("bec", "normal"):
        raise ConfigError("model.phase", f"expected 'bec' or 'normal', got {m.phase!r}")
    if m.phase == "normal":
        if m.z is None:
            raise ConfigError("model.z", "normal phase needs a fugacity z")
        m.z = _number(m.z, "model.z")
        if not 0 < m.z < 1:
            raise ConfigError("model.z", f"z = {m.z}; need 0 < z < 1")
    else:
        if m.rho is not None:
            m.rho = _number(m.rho, "model.rho")
        elif m.rho_factor is not None:
            m.rho_factor = _number(m.rho_factor, "model.rho_factor")
        else:
            raise ConfigError("model.rho", "bec phase needs rho or rho_factor")
    try:
        params = cfg.make_params()
    except BosonLabError as exc:
        key = "model.z" if m.phase == "normal" else ("model.rho" if m.rho is not None else "model.rho_factor")
        raise ConfigError(key, str(exc)) from None

    p = cfg.profile
    if p.csv is None:
        if p.shape not in PROFILES:
            raise ConfigError("profile.shape", f"expected one of {sorted(PROFILES)}, got {p.shape!r}")
        p.size = _number(p.size, "profile.size")
        p.height = _number(p.height, "profile.height")
        if p.size <= 0:
            raise ConfigError("profile.size", "must be positive")
        if p.height < 0:
            raise ConfigError("profile.height", "must be nonnegative")
        if p.center is not None:
            if not isinstance(p.center, list) or len(p.center) != g.d:
                raise ConfigError("profile.center", f"expected a list of {g.d} coordinates")
            p.center = [_number(c, f"profile.center[{i}]") for i, c in enumerate(p.center)]
    try:
        cfg.make_profile(params.grid)
    except ConfigError:
        raise
    except BosonLabError as exc:
        raise ConfigError("profile", str(exc)) from None

    for key in ("kappas", "audit_kappas"):
        values = getattr(cfg, key)
        if not isinstance(values, list) or not values:
            raise ConfigError(key, "expected a non-empty list")
        values = [_number(k, f"{key}[{i}]") for i, k in enumerate(values)]
        if any(k < 1 for k in values):
            raise ConfigError(key, "scales must be >= 1")
        setattr(cfg, key, values)
    try:
        params.check_resolution(max(cfg.kappas))
    except BosonLabError as exc:
        raise ConfigError("kappas", str(exc)) from None

    for key in ("t_panel", "s_grid"):
        values = getattr(cfg, key)
        if not isinstance(values, list) or not values:
            raise ConfigError(key, "expected a non-empty list")
        setattr(cfg, key, [_number(v, f"{key}[{i}]") for i, v in enumerate(values)])
    if cfg.t_units not in ("pole", "absolute"):
        raise ConfigError("t_units", "expected 'pole' or 'absolute'")
    if cfg.s_units not in ("mean", "absolute"):
        raise ConfigError("s_units", "expected 'mean' or 'absolute'")
    if np.any(np.diff(cfg.s_grid) <= 0):
        raise ConfigError("s_grid", "must be strictly ascending")

    mc = cfg.mc
    mc.n_samples = _number(mc.n_samples, "mc.n_samples", integer=True)
    if mc.n_samples < 2:
        raise ConfigError("mc.n_samples", "need at least 2 samples")
    mc.seed = _number(mc.seed, "mc.seed", integer=True)
    if not 0 <= mc.seed < 2**64:
        raise ConfigError("mc.seed", "seed must be an unsigned 64-bit integer")

    s = cfg.sample
    if s.measure not in ("bec", "det", "normal"):
        raise ConfigError("sample.measure", f"expected bec, det or normal, got {s.measure!r}")
    if s.variant not in ("shifted_field", "superposition"):
        raise ConfigError("sample.variant", f"unknown variant {s.variant!r}")
    if not isinstance(s.counts_sidecar, bool):
        raise ConfigError("sample.counts_sidecar", "expected true or false")
    if not isinstance(cfg.output.directory, str) or not cfg.output.directory:
        raise ConfigError("output.directory", "expected a path")
    formats = cfg.output.formats
    if not isinstance(formats, list) or not formats:
        raise ConfigError("output.formats", "expected a non-empty list drawn from csv, json")
    bad = [f for f in formats if f not in ("csv", "json")]
    if bad:
        raise ConfigError("output.formats", f"unknown formats {bad}")


def load_profile_csv(grid: Grid, path: str) -> TestFunction:
    """Read ``i_0, ..., i_{d-1}, value`` rows (with header); absent cells are 0."""
    values = np.zeros(grid.shape)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for lineno, row in enumerate(reader, start=2):
                if len(row) != grid.d + 1:
                    raise ConfigError("profile.csv", f"line {lineno}: expected {grid.d + 1} columns")
                idx = tuple(int(x) for x in row[:-1])
                if any(not 0 <= i < grid.N for i in idx):
                    raise ConfigError("profile.csv", f"line {lineno}: cell index out of range")
                values[idx] = float(row[-1])
    except OSError as exc:
        raise ConfigError("profile.csv", str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("profile.csv", str(exc)) from None
    return TestFunction(grid, values)
