"""Versioned JSON model files.

Floats go through :func:`json.dumps`, which writes the shortest repr that
reads back to the same double, so a reloaded model predicts bit for bit.
"""
from __future__ import annotations

import json

from ..baselines import KIVModel, TSLSModel
from ..errors import InvalidInputError
from ..kernel import RidgeModel
from ..sagd import SAGDModel

FORMAT = "sagdiv-model"
VERSION = 1
MODEL_TYPES = {
    "sagdiv-kernel": SAGDModel,
    "sagdiv-rawy": SAGDModel,
    "kiv": KIVModel,
    "2sls": TSLSModel,
    "naive": RidgeModel,
}


def model_to_dict(method: str, model, provenance: dict | None = None) -> dict:
    if method not in MODEL_TYPES:
        raise InvalidInputError(f"unknown method tag {method!r}")
    if not isinstance(model, MODEL_TYPES[method]):
        raise InvalidInputError(f"{method} expects a {MODEL_TYPES[method].__name__}, got {type(model).__name__}")
    return {
        "format": FORMAT,
        "version": VERSION,
        "method": method,
        "params": model.to_dict(),
        "provenance": dict(provenance or {}),
    }


def model_from_dict(doc: dict):
    """Return ``(method, model, provenance)``."""
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise InvalidInputError("not a sagdiv model document")
    if doc.get("version") != VERSION:
        raise InvalidInputError(f"unsupported model version {doc.get('version')!r}, expected {VERSION}")
    method = doc.get("method")
    if method not in MODEL_TYPES:
        raise InvalidInputError(f"unknown method tag {method!r}")
    return method, MODEL_TYPES[method].from_dict(doc["params"]), doc.get("provenance", {})


def save_model(path, method: str, model, provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(method, model, provenance), fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(doc)
