"""Layered service configuration.

The gateway and CLI read the same ServiceConfig: backend connection,
default session behavior, and service limits. Values resolve with
precedence env > config file > built-in defaults. The file is JSON
with optional "backend", "session", and "service" sections; unknown
keys anywhere are errors so typos fail loudly.

Environment overrides use TURNWISE_* names (see ENV_VARS) and are
parsed with the same validation as file values.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Any, Mapping

from .backend import BackendConfig
from .controller import SessionConfig

DEFAULT_BASE_URL = "http://127.0.0.1:8000"
DEFAULT_MODEL = "local-model"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    backend: BackendConfig
    session: SessionConfig
    capacity: int = 32
    replay_ttl_s: float = 3600.0
    host: str = "127.0.0.1"
    port: int = 8800
    transcript_log_dir: str | None = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("capacity must be at least 1")
        if self.replay_ttl_s <= 0:
            raise ConfigError("replay TTL must be positive")
        if not (0 < self.port < 65536):
            raise ConfigError("port out of range")


# env var -> (section, field, coercion)
ENV_VARS: dict[str, tuple[str, str, type]] = {
    "TURNWISE_BASE_URL": ("backend", "base_url", str),
    "TURNWISE_MODEL": ("backend", "model", str),
    "TURNWISE_MODE": ("backend", "mode", str),
    "TURNWISE_TIMEOUT_S": ("backend", "timeout_s", float),
    "TURNWISE_MAX_RETRIES": ("backend", "max_retries", int),
    "TURNWISE_BACKOFF_BASE_S": ("backend", "backoff_base_s", float),
    "TURNWISE_MAX_INFLIGHT": ("backend", "max_inflight", int),
    "TURNWISE_MAX_TURNS": ("session", "max_turns", int),
    "TURNWISE_HALT_POLICY": ("session", "halt_policy", str),
    "TURNWISE_CONSISTENCY_WINDOW": ("session", "consistency_window", int),
    "TURNWISE_THINK_BUDGET": ("session", "think_budget", int),
    "TURNWISE_ANSWER_BUDGET": ("session", "answer_budget", int),
    "TURNWISE_TEMPERATURE": ("session", "temperature", float),
    "TURNWISE_TOP_P": ("session", "top_p", float),
    "TURNWISE_DECISION_TIMEOUT_S": ("session", "decision_timeout_s", float),
    "TURNWISE_CAPACITY": ("service", "capacity", int),
    "TURNWISE_REPLAY_TTL_S": ("service", "replay_ttl_s", float),
    "TURNWISE_HOST": ("service", "host", str),
    "TURNWISE_PORT": ("service", "port", int),
    "TURNWISE_TRANSCRIPT_LOG_DIR": ("service", "transcript_log_dir", str),
}

_SECTION_FIELDS = {
    "backend": {f.name for f in dataclasses.fields(BackendConfig)},
    "session": {f.name for f in dataclasses.fields(SessionConfig)},
    "service": {"capacity", "replay_ttl_s", "host", "port", "transcript_log_dir"},
}


def _check_keys(section: str, values: Mapping[str, Any]) -> None:
    unknown = set(values) - _SECTION_FIELDS[section]
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")


def _coerce(name: str, raw: str, kind: type) -> Any:
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc


def load_config(
    path: str | None = None, env: Mapping[str, str] | None = None
) -> ServiceConfig:
    env = os.environ if env is None else env
    sections: dict[str, dict[str, Any]] = {"backend": {}, "session": {}, "service": {}}

    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for name, values in data.items():
            if not isinstance(values, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            _check_keys(name, values)
            sections[name].update(values)

    for var, (section, field, kind) in ENV_VARS.items():
        if var in env:
            sections[section][field] = _coerce(var, env[var], kind)

    backend_values = {"base_url": DEFAULT_BASE_URL, "model": DEFAULT_MODEL}
    backend_values.update(sections["backend"])
    try:
        backend = BackendConfig(**backend_values)
        session = SessionConfig(**sections["session"])
        return ServiceConfig(backend=backend, session=session, **sections["service"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
