"""Flat key=value run configuration with presets and strict validation.

A config file holds one ``key = value`` per line ('#' starts a comment).
Unknown keys are rejected, and every offending key is reported at once.
CLI flags win over file values. The "desk" preset scales the full-size
defaults down so the whole pipeline finishes in minutes on a laptop.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

_PATH_KEYS = (
    "instances", "labels", "pairs", "test_instances", "test_pairs",
    "vocab", "checkpoint", "predictions", "out_dir",
)

_INT_KEYS = (
    "seed", "workers", "N", "M", "T_total", "K_0", "T_K", "T_update",
    "k_pseudo", "finetune_steps", "d", "d_e", "instance_max_len",
    "label_max_len", "min_frequency", "log_every", "kmeans_iters",
    "fewshot_seed", "predict_k",
)

_FLOAT_KEYS = (
    "base_lr", "warmup_ratio", "finetune_lr", "dropout", "temperature",
    "fewshot_ratio",
)

_STR_KEYS = ("fewshot_mode", "preset")

_BOOL_KEYS = ("stratified_batching",)

KNOWN_KEYS = frozenset(_PATH_KEYS + _INT_KEYS + _FLOAT_KEYS + _STR_KEYS + _BOOL_KEYS)


@dataclass
class RunConfig:
    # paths (None = not provided; commands validate what they need)
    instances: str | None = None
    labels: str | None = None
    pairs: str | None = None
    test_instances: str | None = None
    test_pairs: str | None = None
    vocab: str | None = None
    checkpoint: str | None = None
    predictions: str | None = None
    out_dir: str = "runs/default"
    # training
    seed: int = 0
    workers: int = 1
    N: int = 32
    M: int = 32
    T_total: int = 100_000
    K_0: int = 2048
    T_K: int = 10_000
    T_update: int = 5_000
    base_lr: float = 1e-5
    warmup_ratio: float = 0.1
    k_pseudo: int = 3
    finetune_lr: float = 5e-6
    finetune_steps: int = 2000
    d: int = 512
    d_e: int = 128
    dropout: float = 0.1
    temperature: float = 1.0
    instance_max_len: int = 288
    label_max_len: int = 64
    min_frequency: int = 2
    log_every: int = 100
    kmeans_iters: int = 50
    stratified_batching: bool = False
    # few-shot
    fewshot_mode: str = "label-coverage"
    fewshot_ratio: float = 0.01
    fewshot_seed: int = 0
    # prediction
    predict_k: int = 10
    preset: str | None = None


PRESETS: dict[str, dict] = {
    # desk-scale profile: finishes the full pipeline in minutes on CPU
    "desk": {
        "N": 16, "M": 16, "T_total": 2000, "K_0": 8, "T_K": 400,
        "T_update": 200, "d": 64, "d_e": 32,
        "base_lr": 3e-4, "finetune_lr": 2e-4, "finetune_steps": 500,
        "log_every": 1,
    },
}


def parse_config_file(path) -> dict[str, str]:
    """Read raw key=value pairs; duplicate keys keep the last occurrence."""
    raw: dict[str, str] = {}
    errors: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                errors.append(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
                continue
            key, _, value = stripped.partition("=")
            raw[key.strip()] = value.strip()
    if errors:
        raise ConfigError("; ".join(errors))
    return raw


def _coerce(key: str, value):
    if isinstance(value, str):
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
    return value


def build_config(file_values: dict | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Merge preset < file < overrides; reject unknown keys, naming all of them."""
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})
    problems: list[str] = []

    unknown = sorted((set(file_values) | set(overrides)) - KNOWN_KEYS)
    if unknown:
        problems.append("unknown key(s): " + ", ".join(unknown))

    merged: dict = {}
    preset_name = overrides.get("preset", file_values.get("preset"))
    if preset_name:
        if preset_name not in PRESETS:
            problems.append(
                f"unknown preset {preset_name!r} (available: {', '.join(sorted(PRESETS))})"
            )
        else:
            merged.update(PRESETS[preset_name])
    merged.update({k: v for k, v in file_values.items() if k in KNOWN_KEYS})
    merged.update({k: v for k, v in overrides.items() if k in KNOWN_KEYS})

    coerced: dict = {}
    for key, value in merged.items():
        try:
            coerced[key] = _coerce(key, value)
        except (TypeError, ValueError):
            problems.append(f"bad value for {key}: {value!r}")
    if problems:
        raise ConfigError("invalid configuration: " + "; ".join(problems))

    valid_fields = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in coerced.items() if k in valid_fields})


def require_paths(config: RunConfig, keys: list[str], command: str) -> None:
    missing = [k for k in keys if getattr(config, k) is None]
    if missing:
        raise ConfigError(
            f"command '{command}' requires config key(s): {', '.join(missing)}"
        )
