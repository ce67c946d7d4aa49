"""Published JSON schemas for configs and manifests.

Validation failures are rethrown as ConfigError/ManifestError naming the
offending key path.
"""

from __future__ import annotations

import jsonschema

from .errors import ConfigError, ManifestError

_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}

SCENE_SCHEMA = {
    "type": "object",
    "required": ["id", "seed", "bucket", "angle_diff_deg", "t60", "room", "samples", "files"],
    "properties": {
        "id": {"type": "string"},
        "seed": {"type": "integer"},
        "bucket": {"enum": ["0-15", "15-45", "45-90", "90-180"]},
        "angle_diff_deg": _NUM,
        "t60": {"type": "number", "exclusiveMinimum": 0},
        "room": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
        "array_center": {"type": "array", "items": _NUM},
        "array_orientation": _NUM,
        "source_positions": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "samples": _POS_INT,
        "files": {
            "type": "object",
            "required": ["mixture", "references"],
            "properties": {
                "mixture": {"type": "string"},
                "references": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            },
        },
    },
}

MANIFEST_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["version", "fs", "rules", "count", "master_seed", "scenes"],
    "properties": {
        "version": {"const": 1},
        "fs": _POS_INT,
        "rules": {"type": "string"},
        "count": {"type": "integer", "minimum": 0},
        "master_seed": {"type": "integer"},
        "scenes": {"type": "array", "items": SCENE_SCHEMA},
    },
}

RULES_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "room_min": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
        "room_max": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
        "t60_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "bucket_proportions": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
        "distance_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "n_sources": {"type": "integer", "minimum": 1, "maximum": 6},
        "first_source_azimuth": {
            "anyOf": [{"type": "null"}, {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]
        },
        "duration": {"type": "number", "minimum": 0.5},
        "f0_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "fs": _POS_INT,
        "rir_max_order": {"type": "integer", "minimum": 0},
        "rir_duration": {"type": "number", "exclusiveMinimum": 0},
    },
}

EXPERIMENT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["pipeline", "manifest"],
    "additionalProperties": False,
    "properties": {
        "pipeline": {"enum": ["magnitude", "complex", "waveform"]},
        "channels": {"type": "integer", "minimum": 1, "maximum": 6},
        "pairs": {
            "anyOf": [
                {"enum": ["wsj0", "ls", "none"]},
                {"type": "array", "items": {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2}},
            ]
        },
        "codec": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "domain": {"enum": ["spectrogram", "waveform"]},
                "L": _POS_INT,
                "hop": _POS_INT,
                "N": _POS_INT,
                "window": {"enum": ["fixed-hann", "trainable"]},
                "fs": _POS_INT,
            },
        },
        "tcn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "B": _POS_INT,
                "H": _POS_INT,
                "P": _POS_INT,
                "X": _POS_INT,
                "R": _POS_INT,
                "norm": {"enum": ["BN", "gLN", "cLN"]},
                "causality": {"enum": ["non_causal", "causal", "semi_causal"]},
                "S": {"type": "integer", "minimum": 1, "maximum": 6},
                "mask_activation": {"enum": ["relu", "sigmoid", "linear"]},
            },
        },
        "loss": {"enum": ["upit_mse", "upit_sisnr"]},
        "chunk_s": {"type": "number", "exclusiveMinimum": 0},
        "chunk_hop_s": {"type": "number", "exclusiveMinimum": 0},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "max_epochs": _POS_INT,
        "max_steps": _POS_INT,
        "seed": {"type": "integer"},
        "manifest": {"type": "string"},
        "val_manifest": {"type": "string"},
        "val_fraction": {"type": "number", "minimum": 0, "maximum": 0.9},
        "out_dir": {"type": "string"},
    },
}


def _validate(obj, schema, error_cls):
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise error_cls(f"key {path}: {exc.message}") from exc


def validate_manifest(obj):
    _validate(obj, MANIFEST_SCHEMA, ManifestError)


def validate_rules(obj):
    _validate(obj, RULES_SCHEMA, ConfigError)


def validate_experiment(obj):
    _validate(obj, EXPERIMENT_SCHEMA, ConfigError)
