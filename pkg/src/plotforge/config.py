"""Harness configuration with layered precedence: flags > env > file > defaults.

The config file is JSON with optional sections ``backend`` and ``limits`` plus
top-level ``rounds``, ``workers``, ``seed``, ``runner_cmd``,
``system_prompt_file``. Recognized environment: ``MODEL_BASE_URL`` (backend
endpoint) and ``MODEL_API_KEY`` (read by the gateway at request time).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import UsageError
from .gateway import BackendConfig
from .sandbox import ExecLimits

DEFAULT_ROUNDS = 3


@dataclass
class HarnessConfig:
    backend: BackendConfig | None = None
    limits: ExecLimits = field(default_factory=ExecLimits)
    rounds: int = DEFAULT_ROUNDS
    workers: int = 1
    seed: int = 0
    runner_cmd: list[str] | None = None
    system_prompt_file: str | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        if self.rounds < 0:
            raise UsageError("rounds must be >= 0")


def _merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(config_path=None, flag_layer: dict | None = None) -> HarnessConfig:
    """Assemble the effective configuration from all four layers."""
    layers = {"backend": {}, "limits": {}}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            file_layer = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        layers = _merge(layers, file_layer)
    env_layer: dict = {}
    if os.environ.get("MODEL_BASE_URL"):
        env_layer = {"backend": {"endpoint": os.environ["MODEL_BASE_URL"]}}
    layers = _merge(layers, env_layer)
    if flag_layer:
        layers = _merge(layers, flag_layer)

    backend_raw = layers.get("backend") or {}
    backend = None
    if backend_raw.get("kind"):
        backend = BackendConfig(
            kind=backend_raw["kind"],
            model_name=backend_raw.get("model_name", "default"),
            endpoint=backend_raw.get("endpoint"),
            temperature=float(backend_raw.get("temperature", 0.0)),
            max_tokens=int(backend_raw.get("max_tokens", 4096)),
            max_retries=int(backend_raw.get("max_retries", 2)),
            cache_dir=backend_raw.get("cache_dir"),
            script_path=backend_raw.get("script_path"),
            supports_images=bool(backend_raw.get("supports_images", False)),
        )
    limits_raw = layers.get("limits") or {}
    limits = ExecLimits(
        timeout_s=float(limits_raw.get("timeout_s", ExecLimits().timeout_s)),
        grace_s=float(limits_raw.get("grace_s", ExecLimits().grace_s)),
        max_output_bytes=int(limits_raw.get("max_output_bytes", ExecLimits().max_output_bytes)),
    )
    return HarnessConfig(
        backend=backend,
        limits=limits,
        rounds=int(layers.get("rounds", DEFAULT_ROUNDS)),
        workers=int(layers.get("workers", 1)),
        seed=int(layers.get("seed", 0)),
        runner_cmd=layers.get("runner_cmd"),
        system_prompt_file=layers.get("system_prompt_file"),
    )
