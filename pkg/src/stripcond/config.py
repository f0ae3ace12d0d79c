"""Experiment configuration: defaults, JSON ingestion, validation, hashing.

Unknown keys are rejected before any computation runs.
"""

from __future__ import annotations

import hashlib
import json
from typing import Optional

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out": ".",
    "format": "csv",
    "inversion": {
        "terms": 40,
        "damping": 28.0,
    },
    "thresholds": {
        "linalg_tol": 1e-8,
        "special_tol": 1e-12,
        "mc_sigma": 3.0,
        "p_min": 0.01,
    },
    "suite": {
        "n_scale": 1.0,
    },
}


class ConfigError(ValueError):
    pass


def _validate(doc, template, path="") -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in template:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(template[key], dict):
            _validate(value, template[key], where)
        else:
            if not isinstance(value, (int, float, str, bool)):
                raise ConfigError(f"config key {where} has unsupported type")


def merge(overrides: Optional[dict]) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if overrides:
        _validate(overrides, DEFAULTS)
        _deep_update(cfg, overrides)
    return cfg


def _deep_update(base, over):
    for k, v in over.items():
        if isinstance(v, dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def load(path: Optional[str]) -> dict:
    if path is None:
        return merge(None)
    with open(path) as fh:
        doc = json.load(fh)
    return merge(doc)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
