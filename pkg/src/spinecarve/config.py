"""Run configuration documents (JSON) shared by every command.

A document looks like::

    {
      "version": 1,
      "evolution": {"w_data": 1.0, "w_context": 1.0, "w_shape": 1.0, ...},
      "bandwidths": {"intensity": "auto", "spatial": 2.0, "shape": "auto", "location_stride": 1},
      "method": "full",
      "methods": ["full", "data+context", "data+shape", "data-only", "piecewise-constant"],
      "seed": 0,
      "threads": 0,
      "paths": {"images": null, "masks": null, "model": null, "out": null}
    }

Every key is optional; unknown keys anywhere are rejected.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .evolution import METHODS, EvolutionConfig
from .model import BandwidthConfig

CONFIG_VERSION = 1
PATH_KEYS = ("images", "masks", "model", "out")


def _default_paths():
    return {k: None for k in PATH_KEYS}


@dataclass(frozen=True)
class RunConfig:
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    bandwidths: BandwidthConfig = field(default_factory=BandwidthConfig)
    method: str = "full"
    methods: tuple = METHODS
    seed: int = 0
    threads: int = 0
    paths: dict = field(default_factory=_default_paths)
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        object.__setattr__(self, "methods", tuple(self.methods))
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        if int(self.threads) < 0:
            raise ConfigError("threads must be non-negative (0 = one per CPU)")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        _check_bandwidths(self.bandwidths)

    def to_dict(self):
        return {
            "version": self.version,
            "evolution": dataclasses.asdict(self.evolution),
            "bandwidths": dataclasses.asdict(self.bandwidths),
            "method": self.method,
            "methods": list(self.methods),
            "seed": int(self.seed),
            "threads": int(self.threads),
            "paths": dict(self.paths),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _check_bandwidths(bw):
    for name in ("intensity", "spatial", "shape"):
        value = getattr(bw, name)
        if isinstance(value, str):
            if value != "auto":
                raise ConfigError(f"bandwidths.{name} must be a positive number or \"auto\"")
        elif isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            raise ConfigError(f"bandwidths.{name} must be a positive number or \"auto\"")
    if isinstance(bw.location_stride, bool) or not isinstance(bw.location_stride, int) or bw.location_stride < 1:
        raise ConfigError("bandwidths.location_stride must be a positive integer")


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def from_dict(data):
    """Build a :class:`RunConfig`, rejecting unknown keys and bad values."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version!r} is not supported (expected {CONFIG_VERSION})")
    paths = data.get("paths") or {}
    if not isinstance(paths, dict):
        raise ConfigError("paths must be an object")
    bad = sorted(set(paths) - set(PATH_KEYS))
    if bad:
        raise ConfigError(f"unknown keys in paths: {', '.join(bad)}")
    kwargs = {
        "evolution": _section(EvolutionConfig, data.get("evolution"), "evolution"),
        "bandwidths": _section(BandwidthConfig, data.get("bandwidths"), "bandwidths"),
        "paths": {**_default_paths(), **paths},
    }
    for key in ("method", "methods", "seed", "threads"):
        if key in data:
            kwargs[key] = data[key]
    return RunConfig(**kwargs)


def parse(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return from_dict(data)


def load(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def save(cfg, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_json())


def with_overrides(cfg, evolution=None, bandwidths=None, **top):
    """Copy of ``cfg`` with the non-``None`` overrides applied."""
    evo = {k: v for k, v in (evolution or {}).items() if v is not None}
    bw = {k: v for k, v in (bandwidths or {}).items() if v is not None}
    changes = {k: v for k, v in top.items() if v is not None}
    if evo:
        changes["evolution"] = cfg.evolution.replace(**evo)
    if bw:
        changes["bandwidths"] = dataclasses.replace(cfg.bandwidths, **bw)
    return cfg.replace(**changes)
