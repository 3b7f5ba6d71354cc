"""Sidecar configuration: defaults, config file, environment overrides.

Precedence, lowest to highest: built-in defaults, config file values,
MEMSCALE_SIDECAR_* environment variables, explicit keyword overrides
(the CLI passes its flags through as keywords).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

ENV_PREFIX = "MEMSCALE_SIDECAR_"
DEFAULT_BIND = "127.0.0.1:9410"
DEFAULT_TOP_K = 12
KNOWN_METHODS = ("index", "retrieve")


class ConfigError(ValueError):
    """Invalid or unparseable sidecar configuration."""


class BindError(OSError):
    """The configured bind address is unavailable."""


@dataclass(frozen=True)
class SidecarConfig:
    backend: str
    bind_address: str = DEFAULT_BIND
    top_k: int = DEFAULT_TOP_K
    counted_methods: tuple[str, ...] = ("retrieve",)

    def __post_init__(self):
        if not self.backend:
            raise ConfigError("backend must be set")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        host, _, port = self.bind_address.partition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"bind_address must be host:port, got {self.bind_address!r}")
        unknown = set(self.counted_methods) - set(KNOWN_METHODS)
        if unknown:
            raise ConfigError(f"unknown counted methods {sorted(unknown)}")

    @property
    def adapter_id(self) -> str:
        return f"sidecar-{self.backend}"

    @property
    def host(self) -> str:
        return self.bind_address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.bind_address.rsplit(":", 1)[1])


def _parse_methods(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    **overrides,
) -> SidecarConfig:
    env = os.environ if env is None else env
    values: dict = {}

    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        unknown = set(raw) - {"backend", "bind_address", "top_k", "counted_methods"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        values.update(raw)

    if f"{ENV_PREFIX}BACKEND" in env:
        values["backend"] = env[f"{ENV_PREFIX}BACKEND"]
    if f"{ENV_PREFIX}BIND" in env:
        values["bind_address"] = env[f"{ENV_PREFIX}BIND"]
    if f"{ENV_PREFIX}TOP_K" in env:
        try:
            values["top_k"] = int(env[f"{ENV_PREFIX}TOP_K"])
        except ValueError as exc:
            raise ConfigError(f"{ENV_PREFIX}TOP_K must be an integer") from exc
    if f"{ENV_PREFIX}COUNTED_METHODS" in env:
        values["counted_methods"] = _parse_methods(env[f"{ENV_PREFIX}COUNTED_METHODS"])

    values.update({k: v for k, v in overrides.items() if v is not None})
    if isinstance(values.get("counted_methods"), list):
        values["counted_methods"] = tuple(values["counted_methods"])
    if "backend" not in values:
        raise ConfigError("backend must be set (config file, env, or flag)")
    return SidecarConfig(**values)
