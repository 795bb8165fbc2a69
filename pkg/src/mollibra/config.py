"""Run configuration: TOML files, named presets and a stable configuration hash."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evolve import EvolveConfig
from .fingerprint import ALL_KINDS, FingerprintKind, FingerprintParams
from .surrogate import GpConfig


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


RANKING_MODES = ("gp", "random", "none")
ENSEMBLE_MODES = ("selection", "poe")
GATING_MODES = ("corr", "llimbo", "off")
CRITIC_MODES = ("synthetic", "http", "null")
EDITOR_MODES = ("rules", "external")


@dataclass(frozen=True)
class FingerprintConfig:
    enabled: tuple[str, ...] = tuple(k.value for k in ALL_KINDS)
    ecfp_radius: int = 2
    path_max_len: int = 7

    def kinds(self) -> tuple[FingerprintKind, ...]:
        return tuple(FingerprintKind(k) for k in self.enabled)

    def params(self) -> FingerprintParams:
        return FingerprintParams(ecfp_radius=self.ecfp_radius, path_max_len=self.path_max_len)


@dataclass(frozen=True)
class GpSettings:
    noise_grid: tuple[float, ...] = tuple(float(v) for v in np.logspace(-4, -1, 7))
    outputscale_grid: tuple[float, ...] = tuple(
        float(v) for v in np.logspace(np.log10(0.25), np.log10(4.0), 7))
    jitter: float = 1e-8

    def to_gp_config(self) -> GpConfig:
        return GpConfig(noise_grid=self.noise_grid, outputscale_grid=self.outputscale_grid,
                        jitter=self.jitter)


@dataclass(frozen=True)
class EnsembleSettings:
    mode: str = "selection"
    weight_floor: float | None = None


@dataclass(frozen=True)
class GatingSettings:
    mode: str = "corr"


@dataclass(frozen=True)
class CriticSettings:
    mode: str = "synthetic"
    synthetic_rho: float = 0.8
    http_url: str = ""
    task_description: str | None = None
    timeout: float = 10.0


@dataclass(frozen=True)
class EditorSettings:
    mode: str = "rules"
    http_url: str = ""
    fallback_rules: bool = True
    max_inflight: int = 4
    timeout: float = 30.0


@dataclass(frozen=True)
class RunConfig:
    task: str = "albuterol_similarity"
    budget: int = 1000
    n_init: int = 10
    n_batch: int = 1
    n_cand: int = 300
    seed: int = 0
    ranking: str = "gp"
    evolve: EvolveConfig = field(default_factory=EvolveConfig)
    fingerprints: FingerprintConfig = field(default_factory=FingerprintConfig)
    gp: GpSettings = field(default_factory=GpSettings)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    gating: GatingSettings = field(default_factory=GatingSettings)
    critic: CriticSettings = field(default_factory=CriticSettings)
    editor: EditorSettings = field(default_factory=EditorSettings)

    def __post_init__(self) -> None:
        if not self.budget >= self.n_init >= 1:
            raise ConfigError("need budget >= n_init >= 1")
        if self.n_batch < 1 or self.n_cand < 0:
            raise ConfigError("need n_batch >= 1 and n_cand >= 0")
        for value, allowed, name in (
                (self.ranking, RANKING_MODES, "run.ranking"),
                (self.ensemble.mode, ENSEMBLE_MODES, "ensemble.mode"),
                (self.gating.mode, GATING_MODES, "gating.mode"),
                (self.critic.mode, CRITIC_MODES, "critic.mode"),
                (self.editor.mode, EDITOR_MODES, "editor.mode")):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if not self.fingerprints.enabled:
            raise ConfigError("fingerprints.enabled must not be empty")
        try:
            self.fingerprints.kinds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if len(set(self.fingerprints.enabled)) != len(self.fingerprints.enabled):
            raise ConfigError("fingerprints.enabled lists a kind twice")
        if not 0.0 <= self.critic.synthetic_rho <= 1.0:
            raise ConfigError("critic.synthetic_rho must lie in [0, 1]")
        if self.critic.mode == "http" and self.gating.mode != "off" and not self.critic.http_url:
            raise ConfigError("critic.mode = http needs critic.http_url")
        if self.editor.mode == "external" and not self.editor.http_url:
            raise ConfigError("editor.mode = external needs editor.http_url")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        """Digest of every setting except the seed."""
        data = self.to_dict()
        data.pop("seed")
        blob = json.dumps(data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


# flat override dictionaries, same shape as the TOML tables
PRESETS: dict[str, dict[str, Any]] = {
    "mollibra": {},
    "tripp_gp_bo": {
        "fingerprints": {"enabled": ["ecfp"]},
        "gating": {"mode": "off"},
        "critic": {"mode": "null"},
    },
    "molleo": {
        "run": {"n_batch": 10, "n_cand": 0, "ranking": "none"},
        "evolve": {"n_siblings": 1},
        "gating": {"mode": "off"},
        "critic": {"mode": "null"},
    },
}

_SECTIONS = {
    "evolve": EvolveConfig,
    "gp": GpSettings,
    "ensemble": EnsembleSettings,
    "gating": GatingSettings,
    "critic": CriticSettings,
    "editor": EditorSettings,
}
_RUN_KEYS = {"task", "budget", "n_init", "n_batch", "n_cand", "seed", "ranking"}


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build_section(cls, table: Mapping, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in table:
            value = table[f.name]
            if isinstance(value, list):
                value = tuple(value)
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _fingerprint_section(table: Mapping) -> FingerprintConfig:
    allowed = {"enabled", "ecfp", "path"}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [fingerprints]: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    if "enabled" in table:
        kwargs["enabled"] = tuple(str(k) for k in table["enabled"])
    if "radius" in table.get("ecfp", {}):
        kwargs["ecfp_radius"] = int(table["ecfp"]["radius"])
    if "max_len" in table.get("path", {}):
        kwargs["path_max_len"] = int(table["path"]["max_len"])
    return FingerprintConfig(**kwargs)


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    """Build a :class:`RunConfig` from TOML-shaped data.

    A top-level ``preset`` key applies that preset first; the remaining
    tables override it.
    """
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        data = _merge(PRESETS[preset], data)
    data.pop("bench", None)
    unknown = set(data) - set(_SECTIONS) - {"run", "fingerprints"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    run = data.get("run", {})
    bad = set(run) - _RUN_KEYS
    if bad:
        raise ConfigError(f"unknown keys in [run]: {sorted(bad)}")
    kwargs: dict[str, Any] = {k: run[k] for k in _RUN_KEYS if k in run}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, data.get(name, {}), name)
    kwargs["fingerprints"] = _fingerprint_section(data.get("fingerprints", {}))
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def preset(name: str, **run_overrides: Any) -> RunConfig:
    """Named preset with optional ``[run]`` overrides (budget, seed, task...)."""
    return config_from_dict({"preset": name, "run": run_overrides})


def read_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Load a TOML run configuration; the optional ``[bench]`` table is ignored here."""
    data = read_toml(path)
    if overrides:
        data = _merge(data, overrides)
    return config_from_dict(data)
