"""Pipeline configuration: one flat sectioned key-value file.

Every key has a default, so an empty (or missing) config file runs the whole
pipeline. Unknown sections or keys are rejected instead of silently ignored.
Seed keys default to -1, meaning "derive from [run] seed and the stage name",
so all randomness flows from the single root seed unless a stage seed is
pinned explicitly.
"""

from __future__ import annotations

import configparser
import copy
from pathlib import Path

from .network import derive_seed


class ConfigError(ValueError):
    """Bad configuration: unknown key, unparsable value, invalid setting."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (default, caster, help)
SCHEMA = {
    "run": {
        "workdir": ("runs/default", str, "directory receiving every stage output"),
        "seed": (0, int, "root seed; stage seeds derive from it"),
        "threads": (0, int, "worker threads for per-pair metrics; 0 = all cores"),
        "fine_tune": (False, _bool, "include the fine-tune stage in run-all"),
    },
    "synth": {
        "rows": (10, int, "grid rows of the synthetic city"),
        "cols": (10, int, "grid columns of the synthetic city"),
        "jitter": (0.2, float, "intersection jitter, fraction of spacing in [0, 0.5)"),
        "n_trips": (2000, int, "simulated trips per city"),
        "holdout_frac": (0.1, float, "fraction of trips held out for evaluation"),
        "source_seed": (-1, int, "source-city seed; -1 derives from run.seed"),
        "target_seed": (-1, int, "target-city seed; -1 derives from run.seed"),
    },
    "partition": {
        "k_clusters": (0, int, "cluster count; 0 = sqrt(n)/2 rule"),
        "seed": (-1, int, "partition seed; -1 derives from run.seed"),
    },
    "cost": {
        "lambda_r": (50.0, float, "rank-loss weight"),
        "lambda_d": (100.0, float, "domain-adversarial loss weight"),
        "lambda_g": (5.0, float, "latent-orthogonality loss weight"),
        "lr": (1e-5, float, "Adam learning rate"),
        "epochs": (600, int, "training epochs"),
        "k": (3, int, "clusters per training batch"),
        "latent_dim": (32, int, "semantic/domain latent width"),
        "hidden_dim": (64, int, "encoder hidden width"),
        "layers": (6, int, "encoder attention layers"),
        "seed": (-1, int, "cost-training seed; -1 derives from run.seed"),
    },
    "pref": {
        "lr": (0.01, float, "Adam learning rate"),
        "epochs": (100, int, "training epochs"),
        "seed": (-1, int, "preference-training seed; -1 derives from run.seed"),
    },
    "fine_tune": {
        "cost_epochs": (60, int, "cost-model epochs for the fine-tune re-run"),
        "pref_epochs": (100, int, "preference epochs for the fine-tune re-run"),
        "seed": (-1, int, "fine-tune seed; -1 derives from run.seed"),
    },
    "eval": {
        "edr_epsilon": (100.0, float, "EDR match radius in meters"),
        "bins": (50, int, "histogram bins for macro metrics"),
    },
}


def default_config() -> dict:
    return {section: {key: spec[0] for key, spec in keys.items()}
            for section, keys in SCHEMA.items()}


def _cast(section: str, key: str, raw: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key [{section}] {key}")
    caster = SCHEMA[section][key][1]
    try:
        return caster(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc


def load_config(path=None) -> dict:
    """Defaults overlaid with the file's settings; unknown keys rejected."""
    config = default_config()
    if path is None:
        return config
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for section in parser.sections():
        for key, raw in parser.items(section):
            config[section][key] = _cast(section, key, raw)
    return config


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` strings on top of a config, in order."""
    config = copy.deepcopy(config)
    for item in overrides:
        head, sep, raw = item.partition("=")
        if not sep or "." not in head:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, _, key = head.partition(".")
        section, key = section.strip(), key.strip()
        config[section][key] = _cast(section, key, raw)
    return config


def stage_seed(config: dict, section: str, key: str, *stage: str) -> int:
    """Explicit stage seed when set (>= 0), else derived from the root seed."""
    explicit = config[section][key]
    if explicit >= 0:
        return int(explicit)
    return derive_seed(config["run"]["seed"], *stage)


def config_help() -> str:
    lines = ["config keys (defaults in parentheses):"]
    for section, keys in SCHEMA.items():
        lines.append(f"  [{section}]")
        for key, (default, _, text) in keys.items():
            lines.append(f"    {key} ({default!r}): {text}")
    return "\n".join(lines)
