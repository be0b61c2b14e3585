"""report.json layout and its JSON Schema."""

from __future__ import annotations

import json

REPORT_VERSION = "cinescale-report/1"

_FRAME = {
    "type": "object",
    "required": ["frame", "files"],
    "properties": {
        "frame": {"type": "integer", "minimum": 0},
        "files": {"type": "array", "items": {"type": "string"}},
        "hf_energy_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "repetition_score": {"type": "number", "minimum": 0, "maximum": 1},
        "spectrum": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
    "additionalProperties": False,
}

_STAGE = {
    "type": "object",
    "required": ["level", "latent_shape", "rgb_shape", "K", "steps", "temperature", "rope_lambdas", "frames"],
    "properties": {
        "level": {"type": "integer", "minimum": 1},
        "latent_shape": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "rgb_shape": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "K": {"type": ["integer", "null"], "minimum": 1},
        "steps": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "temperature": {"type": "number", "exclusiveMinimum": 0},
        "rope_lambdas": {"type": ["array", "null"], "items": {"type": "number", "minimum": 1}},
        "dilation_used": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "integer"}}},
        "frames": {"type": "array", "items": _FRAME},
    },
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "config_echo", "stages", "timing_ms"],
    "properties": {
        "version": {"const": REPORT_VERSION},
        "config_echo": {"type": "object"},
        "rgb_mapping": {
            "type": "object",
            "required": ["scale", "offset", "clip"],
            "properties": {
                "scale": {"type": "number"},
                "offset": {"type": "number"},
                "clip": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "rounding": {"type": "string"},
            },
        },
        "outputs": {
            "type": "object",
            "properties": {"latent_checkpoint": {"type": ["string", "null"]}},
        },
        "stages": {"type": "array", "minItems": 1, "items": _STAGE},
        "timing_ms": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["total", "stages"],
                    "properties": {
                        "total": {"type": "number", "minimum": 0},
                        "stages": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                },
            ]
        },
    },
    "additionalProperties": False,
}


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``report`` does not conform."""
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)
