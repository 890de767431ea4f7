"""The run configuration: one JSON file drives generation, training, and
evaluation.  The committed defaults reproduce the reference experiment
(6x6 grid, 12 five-minute slices, 12292 items, 80/20 split); every field can
be overridden, and unknown fields are rejected with their path."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .simkit import SimConfig

DEFAULT_CONFIG: dict = {
    "network": {"rows": 6, "cols": 6, "link_length_m": 2000.0},
    "sim": {
        "n_items": 12292,
        "n_timeslices": 12,
        "slice_s": 300.0,
        "period_s": 3600.0,
        "trips_min": 20000,
        "trips_max": 30000,
        "route_cap": 20,
        "concentration": 1.0,
        "hotspot_fraction": 0.05,
        "hotspot_boost": 10.0,
        "speed_mean_mps": 12.0,
        "speed_sd_mps": 2.0,
        "speed_floor_mps": 1.0,
        "seed": 0,
    },
    "model": {
        "n_features": 256,
        "n_hidden": 512,
        "n_structures": 64,
        "structures_per_step": 8,
        "refresh_substeps": 4,
        "discount": 0.9,
        "update_interval": 50,
        "gate_mode": "mean",
        "literal_cosine": False,
        "leaky_slope": 0.01,
    },
    "train": {
        "lr": 0.001,
        "momentum": 0.9,
        "batch_size": 32,
        "max_iters": 5000,
        "loss": "mse",
        "seeds": [0, 1, 2],
    },
    "paths": {
        "data_dir": "data",
        "models_dir": "models",
        "reports_dir": "reports",
    },
}

TRAIN_FRACTION = 0.8  # fixed split; not configurable

_POSITIVE_INT = {"type": "integer", "minimum": 1}
_POSITIVE_NUM = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rows": {"type": "integer", "minimum": 2},
                "cols": {"type": "integer", "minimum": 2},
                "link_length_m": _POSITIVE_NUM,
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_items": _POSITIVE_INT,
                "n_timeslices": _POSITIVE_INT,
                "slice_s": _POSITIVE_NUM,
                "period_s": _POSITIVE_NUM,
                "trips_min": {"type": "integer", "minimum": 0},
                "trips_max": {"type": "integer", "minimum": 0},
                "route_cap": _POSITIVE_INT,
                "concentration": {
                    "anyOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]
                },
                "hotspot_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "hotspot_boost": _POSITIVE_NUM,
                "speed_mean_mps": _POSITIVE_NUM,
                "speed_sd_mps": {"type": "number", "minimum": 0},
                "speed_floor_mps": _POSITIVE_NUM,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_features": _POSITIVE_INT,
                "n_hidden": _POSITIVE_INT,
                "n_structures": {"type": "integer", "minimum": 2},
                "structures_per_step": _POSITIVE_INT,
                "refresh_substeps": _POSITIVE_INT,
                "discount": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "update_interval": _POSITIVE_INT,
                "gate_mode": {"enum": ["mean", "sum"]},
                "literal_cosine": {"type": "boolean"},
                "leaky_slope": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _POSITIVE_NUM,
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "batch_size": {"type": "integer", "minimum": 2},
                "max_iters": _POSITIVE_INT,
                "loss": {"enum": ["mse", "l1"]},
                "seeds": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 1,
                },
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data_dir": {"type": "string"},
                "models_dir": {"type": "string"},
                "reports_dir": {"type": "string"},
            },
        },
    },
}


def _merge_defaults(user: dict) -> dict:
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in user.items():
        if section in merged and isinstance(values, dict):
            merged[section].update(values)
        else:
            merged[section] = values
    return merged


def validate_config(raw: dict) -> dict:
    """Merge over defaults, validate, and apply cross-field checks.

    Schema violations raise ``ConfigError`` naming the offending field path,
    e.g. ``network.rows``.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    merged = _merge_defaults(raw)
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(merged), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {err.message}")

    sim = merged["sim"]
    if sim["trips_min"] > sim["trips_max"]:
        raise ConfigError("config field sim.trips_min: must not exceed sim.trips_max")
    model = merged["model"]
    if model["structures_per_step"] >= model["n_structures"]:
        raise ConfigError(
            "config field model.structures_per_step: must be smaller than model.n_structures"
        )
    return merged


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(raw)


def write_default_config(path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True) + "\n")
    return path


def sim_config_from(config: dict) -> SimConfig:
    net, sim = config["network"], config["sim"]
    return SimConfig(
        rows=net["rows"],
        cols=net["cols"],
        link_length_m=net["link_length_m"],
        n_items=sim["n_items"],
        n_timeslices=sim["n_timeslices"],
        slice_s=sim["slice_s"],
        period_s=sim["period_s"],
        trips_min=sim["trips_min"],
        trips_max=sim["trips_max"],
        route_cap=sim["route_cap"],
        concentration=sim["concentration"],
        hotspot_fraction=sim["hotspot_fraction"],
        hotspot_boost=sim["hotspot_boost"],
        speed_mean_mps=sim["speed_mean_mps"],
        speed_sd_mps=sim["speed_sd_mps"],
        speed_floor_mps=sim["speed_floor_mps"],
        train_fraction=TRAIN_FRACTION,
    )
