"""Experiment configuration: one JSON document validated against a schema."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from ratenorm.errors import ConfigError
from ratenorm.training import StageConfig

_STAGE = {
    "type": "object",
    "properties": {
        "epochs": {"type": "integer", "minimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "lam": {"type": "number", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "p_raw_init": {"type": "number"},
    },
    "additionalProperties": False,
}

_LAYER = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["affine", "conv2d", "avgpool2d", "flatten", "rate-norm", "relu"]},
        "in_features": {"type": "integer", "minimum": 1},
        "out_features": {"type": "integer", "minimum": 1},
        "in_channels": {"type": "integer", "minimum": 1},
        "out_channels": {"type": "integer", "minimum": 1},
        "kernel": {"type": "integer", "minimum": 1},
        "stride": {"type": "integer", "minimum": 1},
        "window": {"type": "integer", "minimum": 1},
        "momentum": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ratenorm experiment",
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "out_dir": {"type": "string"},
        "dataset": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {
                        "source": {"const": "synthetic"},
                        "n_train": {"type": "integer", "minimum": 1},
                        "n_test": {"type": "integer", "minimum": 1},
                        "classes": {"type": "integer", "minimum": 2},
                        "dim": {"type": "integer", "minimum": 1},
                    },
                    "required": ["source", "n_train", "n_test", "classes", "dim"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {
                        "source": {"const": "idx"},
                        "train_images": {"type": "string"},
                        "train_labels": {"type": "string"},
                        "test_images": {"type": "string"},
                        "test_labels": {"type": "string"},
                        "n_train": {"type": "integer", "minimum": 1},
                        "n_test": {"type": "integer", "minimum": 1},
                        "flatten": {"type": "boolean"},
                    },
                    "required": ["source", "train_images", "train_labels", "n_train", "n_test"],
                    "dependentRequired": {"test_images": ["test_labels"], "test_labels": ["test_images"]},
                    "additionalProperties": False,
                },
            ]
        },
        "architecture": {"type": "array", "items": _LAYER, "minItems": 1},
        "stage1": _STAGE,
        "stage2": {"oneOf": [_STAGE, {"type": "null"}]},
        "conversion": {
            "type": "object",
            "properties": {
                "scheme": {"enum": ["direct", "max_norm", "robust_norm"]},
                "percentile": {"type": "number", "exclusiveMinimum": 0, "maximum": 100},
                "baseline": {"enum": ["max_norm", "none"]},
                "threshold_scale": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {
                "T": {"type": "integer", "minimum": 1},
                "coding": {"enum": ["constant", "poisson"]},
                "readout": {"enum": ["potential", "spikes"]},
                "k_threshold": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "energy": {
            "type": "object",
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "target_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "latency": {
            "type": "object",
            "properties": {"target_drop": {"type": "number", "minimum": 0, "maximum": 1}},
            "additionalProperties": False,
        },
    },
    "required": ["dataset", "architecture"],
    "additionalProperties": False,
}

DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/experiment",
    "stage1": {},
    "stage2": {},
    "conversion": {"scheme": "direct", "percentile": 99.9, "baseline": "max_norm", "threshold_scale": 0.8},
    "simulation": {"T": 2000, "coding": "constant", "readout": "potential", "k_threshold": 0.1},
    "energy": {"alpha": 1e-9, "target_fraction": 0.9},
    "latency": {"target_drop": 0.02},
}

_PATH_KEYS = ("train_images", "train_labels", "test_images", "test_labels")


@dataclass
class ExperimentConfig:
    dataset: dict
    architecture: list[dict]
    stage1: StageConfig
    stage2: StageConfig | None
    conversion: dict
    simulation: dict
    energy: dict
    latency: dict
    seed: int = 0
    out_dir: Path = field(default_factory=lambda: Path("runs/experiment"))
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> ExperimentConfig:
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {e.message}") from None
        merged = copy.deepcopy(DEFAULTS)
        for key, value in doc.items():
            if isinstance(merged.get(key), dict) and isinstance(value, dict):
                merged[key].update(value)
            else:
                merged[key] = copy.deepcopy(value)
        base = Path(base_dir)
        dataset = dict(merged["dataset"])
        for key in _PATH_KEYS:
            if key in dataset:
                path = Path(dataset[key])
                dataset[key] = str(path if path.is_absolute() else base / path)
        stage2 = merged["stage2"]
        return cls(
            dataset=dataset,
            architecture=merged["architecture"],
            stage1=StageConfig(**merged["stage1"]),
            stage2=None if stage2 is None else StageConfig(**stage2),
            conversion=merged["conversion"],
            simulation=merged["simulation"],
            energy=merged["energy"],
            latency=merged["latency"],
            seed=int(merged["seed"]),
            out_dir=Path(merged["out_dir"]),
            raw=merged,
        )

    def check_paths(self) -> None:
        """Raise ``FileNotFoundError`` naming the first missing dataset file."""
        for key in _PATH_KEYS:
            if key in self.dataset and not Path(self.dataset[key]).is_file():
                raise FileNotFoundError(f"dataset file not found: {self.dataset[key]} (dataset.{key})")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    cfg = ExperimentConfig.from_dict(doc, base_dir=path.parent)
    cfg.check_paths()
    return cfg
