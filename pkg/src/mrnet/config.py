"""Run configuration: a flat ``key = value`` file, overridable from the command line.

Lines starting with ``#`` are comments. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 0.01
    f_threshold: float = 10.0
    max_per_component: int = 5
    max_cond_size: int = 3
    max_ivs: int = 0  # 0 = n_samples // 10, clipped to the data
    min_explained_variance: float = 0.001
    iv_rotation: str = "varimax"
    exclusive_ivs: bool = True
    min_votes: int = 1
    orient_cond_size: int = 1  # extra neighbours conditioned on in the exclusion test
    bonferroni: bool = False
    hub_min_degree: int = 3
    hub_percentile: float = 90.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)"),
            (self.f_threshold >= 0.0, "f_threshold must be >= 0"),
            (self.max_per_component >= 1, "max_per_component must be >= 1"),
            (self.max_cond_size >= 0, "max_cond_size must be >= 0"),
            (self.max_ivs >= 0, "max_ivs must be >= 0 (0 selects the default)"),
            (0.0 <= self.min_explained_variance < 1.0, "min_explained_variance must lie in [0, 1)"),
            (self.iv_rotation in ("none", "varimax"), "iv_rotation must be 'none' or 'varimax'"),
            (self.min_votes >= 1, "min_votes must be >= 1"),
            (self.orient_cond_size >= 0, "orient_cond_size must be >= 0"),
            (self.hub_min_degree >= 1, "hub_min_degree must be >= 1"),
            (0.0 <= self.hub_percentile <= 100.0, "hub_percentile must lie in [0, 100]"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse(raw, types[key], key, lineno)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse(raw: str, typ: str, key: str, lineno: int):
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None
