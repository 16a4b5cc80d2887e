"""Schemas for every file the harness writes, and a directory validator."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema

_NUM = {"type": "number"}
_OPT_NUM = {"type": ["number", "null"]}
_OPT_INT = {"type": ["integer", "null"]}

SUMMARY_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "T": {"type": "integer", "minimum": 1},
        "scheme": {"enum": ["direct", "max_norm", "robust_norm"]},
        "ann_accuracy": _NUM,
        "snn_accuracy": _NUM,
        "time_to_accuracy": _OPT_INT,
        "energy_to_accuracy": _OPT_NUM,
        "total_spikes": {"type": "integer", "minimum": 0},
        "k_settle_time": {"type": "array", "items": _OPT_INT},
        "layer_omega": {"type": ["array", "null"], "items": _OPT_NUM},
        "speedup": _OPT_NUM,
        "energy_ratio": _OPT_NUM,
    },
    "required": ["seed", "T", "scheme", "ann_accuracy", "snn_accuracy", "time_to_accuracy", "total_spikes"],
}

CHECKPOINT_SCHEMA = {
    "type": "object",
    "properties": {
        "format_version": {"type": "integer"},
        "layers": {"type": "array", "items": {"type": "object", "required": ["kind"]}},
        "params": {"type": "object"},
        "rate_norm_states": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["p_raw", "running_max", "momentum", "shared_group", "locked"],
            },
        },
    },
    "required": ["format_version", "layers", "params", "rate_norm_states"],
}

REPORT_SCHEMA = {
    "type": "object",
    "properties": {
        "scheme": {"type": "string"},
        "v_th": {"type": "array", "items": _NUM},
        "scale_factors": {"type": "array", "items": _NUM},
        "calibration_size": {"type": "integer", "minimum": 0},
        "extra": {"type": "object"},
    },
    "required": ["scheme", "v_th", "scale_factors"],
}

JSON_FILES = {
    "summary.json": SUMMARY_SCHEMA,
    "checkpoint.json": CHECKPOINT_SCHEMA,
    "conversion_report.json": REPORT_SCHEMA,
    "baseline_conversion_report.json": REPORT_SCHEMA,
}

CSV_HEADERS = {
    "k_curves.csv": ["t", "layer", "K"],
    "k_curves_baseline.csv": ["t", "layer", "K"],
    "energy.csv": ["t", "P", "E", "accuracy"],
    "energy_baseline.csv": ["t", "P", "E", "accuracy"],
    "trace.csv": ["t", "layer", "spikes", "cumulative_spikes", "mean_rate"],
}

TRAIN_LOG_PREFIX = ["epoch", "loss", "acc", "mean_omega", "p"]


def _check_csv(path: Path, header: list[str], prefix: bool = False) -> list[str]:
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        return [f"{path.name}: empty file"]
    found = rows[0][: len(header)] if prefix else rows[0]
    if found != header:
        return [f"{path.name}: header {rows[0]} does not match {header}"]
    errors = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            errors.append(f"{path.name}:{i}: {len(row)} fields, expected {len(rows[0])}")
            continue
        try:
            [float(v) for v in row]
        except ValueError:
            errors.append(f"{path.name}:{i}: non-numeric field")
    return errors


def validate_file(path: str | Path) -> list[str]:
    """Problems found in one output file; an empty list means it is valid."""
    path = Path(path)
    name = path.name
    if name in JSON_FILES:
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            return [f"{name}: invalid JSON ({e})"]
        try:
            jsonschema.validate(doc, JSON_FILES[name])
        except jsonschema.ValidationError as e:
            return [f"{name}: {e.message}"]
        return []
    if name in CSV_HEADERS:
        return _check_csv(path, CSV_HEADERS[name])
    if name.startswith("train_log_") and name.endswith(".csv"):
        return _check_csv(path, TRAIN_LOG_PREFIX, prefix=True)
    return []


def validate_dir(path: str | Path) -> list[str]:
    """Validate every known output file in ``path``; ``summary.json`` must exist."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"output directory not found: {path}")
    errors = [] if (path / "summary.json").is_file() else ["summary.json: missing"]
    for f in sorted(path.iterdir()):
        errors.extend(validate_file(f))
    return errors
