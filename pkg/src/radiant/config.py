"""Strict TOML run configuration.

Every section is a dataclass; keys that no dataclass field claims are
rejected, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

EXPERIMENTS = ("rates", "angular", "bragg", "predict1d", "predict3d", "ensemble", "sweep", "validate")
GEOMETRIES = ("chain", "lattice3d", "ion_chain", "ensemble", "file", "cloud")
OBSERVABLES = ("gamma0", "p0", "escape", "purity", "fwhm", "chi", "eps")
SPINWAVES = ("uniform", "mode", "planewave")


@dataclass(frozen=True)
class GeometryConfig:
    kind: str = "chain"
    n: int = 1
    counts: tuple | None = None
    path: str | None = None
    kl_L: float | None = None
    chi_en: float | None = None
    axis: tuple = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class PhysicsConfig:
    lambda_over_d: float = 5.0
    k_dir: tuple = (0.0, 0.0, 1.0)
    gamma_bar_hz: float | None = None
    length_m: float | None = None
    omega_L: float | None = None


@dataclass(frozen=True)
class GridConfig:
    n_theta: int | None = None
    n_phi: int | None = None
    tol: float = 1e-6
    n_delta: int = 2001


@dataclass(frozen=True)
class SpinwaveConfig:
    kind: str = "uniform"
    n: int | tuple = 0


@dataclass(frozen=True)
class SweepConfig:
    parameter: str = ""
    values: tuple = ()
    parameter2: str | None = None
    values2: tuple = ()
    observables: tuple = ("gamma0",)


@dataclass(frozen=True)
class OutputConfig:
    figures: bool = True


@dataclass(frozen=True)
class ToleranceConfig:
    atol: float = 1e-12
    rtol: float = 1e-9


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int = 0
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    spinwave: SpinwaveConfig = field(default_factory=SpinwaveConfig)
    sweep: SweepConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)
    tolerance: ToleranceConfig = field(default_factory=ToleranceConfig)
    source_hash: str = ""
    base_dir: str = "."

    def with_value(self, dotted: str, value) -> "RunConfig":
        """Copy with ``section.key`` replaced (used by sweeps)."""
        section, _, key = dotted.partition(".")
        if section not in SWEEPABLE or key not in SWEEPABLE[section]:
            raise ConfigError(f"parameter {dotted!r} cannot be swept")
        sub = getattr(self, section)
        kind = _field_types(type(sub))[key]
        return dataclasses.replace(self, **{section: dataclasses.replace(sub, **{key: _coerce(value, kind, dotted)})})


SWEEPABLE = {
    "physics": {"lambda_over_d"},
    "geometry": {"n", "kl_L", "chi_en"},
    "spinwave": {"n"},
}

_SECTIONS = {
    "geometry": GeometryConfig,
    "physics": PhysicsConfig,
    "grid": GridConfig,
    "spinwave": SpinwaveConfig,
    "sweep": SweepConfig,
    "output": OutputConfig,
    "tolerance": ToleranceConfig,
}


def _field_types(cls) -> dict:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _coerce(value, kind: str, where: str):
    kind = str(kind)
    try:
        if kind.startswith("int |") or kind == "int | tuple":
            if isinstance(value, list):
                return tuple(int(v) for v in value)
            return int(value)
        if kind.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind.startswith("float"):
            if value is None:
                return None
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind.startswith("bool"):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind.startswith("tuple"):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(value)
        if kind.startswith("str"):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot interpret {value!r} as {kind}") from None
    return value


def _section(cls, data: dict, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    types = _field_types(cls)
    unknown = sorted(set(data) - set(types))
    if unknown:
        raise ConfigError(f"[{name}] unknown key(s): {', '.join(unknown)}")
    return cls(**{k: _coerce(v, types[k], f"{name}.{k}") for k, v in data.items()})


def parse_config(data: dict, source_hash: str = "", base_dir: str = ".") -> RunConfig:
    """Validate a decoded TOML document."""
    data = dict(data)
    allowed = {"experiment", "seed", *_SECTIONS}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    exp = data.pop("experiment", None)
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
    seed = _coerce(data.pop("seed", 0), "int", "seed")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    sections = {name: _section(cls, data[name], name) for name, cls in _SECTIONS.items() if name in data}
    cfg = RunConfig(exp, seed, source_hash=source_hash, base_dir=base_dir, **sections)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    g, p = cfg.geometry, cfg.physics
    if g.kind not in GEOMETRIES:
        raise ConfigError(f"geometry.kind must be one of {', '.join(GEOMETRIES)}")
    if g.n < 1:
        raise ConfigError("geometry.n must be positive")
    if g.kind == "file" and not g.path:
        raise ConfigError("geometry.path is required for kind = 'file'")
    if g.kind in ("ensemble", "cloud") and not (g.kl_L and g.kl_L > 0):
        raise ConfigError(f"geometry.kl_L > 0 is required for kind = {g.kind!r}")
    if not p.lambda_over_d > 0:
        raise ConfigError("physics.lambda_over_d must be positive")
    if len(p.k_dir) != 3 or not any(p.k_dir):
        raise ConfigError("physics.k_dir must be a nonzero 3-vector")
    if cfg.spinwave.kind not in SPINWAVES:
        raise ConfigError(f"spinwave.kind must be one of {', '.join(SPINWAVES)}")
    need_lattice = {"bragg": ("chain", "lattice3d"), "predict1d": ("chain",), "predict3d": ("lattice3d",),
                    "ensemble": ("ensemble",)}
    if cfg.experiment in need_lattice and g.kind not in need_lattice[cfg.experiment]:
        raise ConfigError(f"experiment {cfg.experiment!r} needs geometry.kind in "
                          f"{need_lattice[cfg.experiment]}")
    if cfg.experiment == "validate" and (p.gamma_bar_hz is None or p.length_m is None):
        raise ConfigError("validate needs physics.gamma_bar_hz and physics.length_m")
    if cfg.experiment == "sweep":
        s = cfg.sweep
        if s is None or not s.parameter:
            raise ConfigError("sweep needs a [sweep] table with a parameter")
        if len(s.values) == 0:
            raise ConfigError("sweep.values is empty")
        if s.parameter2 is not None and len(s.values2) == 0:
            raise ConfigError("sweep.values2 is empty")
        bad = [o for o in s.observables if o not in OBSERVABLES]
        if bad or not s.observables:
            raise ConfigError(f"unknown sweep observable(s): {bad}; choose from {OBSERVABLES}")
        for name in filter(None, (s.parameter, s.parameter2)):
            cfg.with_value(name, (s.values if name == s.parameter else s.values2)[0])


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, hashlib.sha256(raw).hexdigest(), str(path.parent))
