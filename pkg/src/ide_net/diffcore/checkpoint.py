"""Versioned JSON weight maps: ``{format, version, params: {name: {shape, values}}}``."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import numpy as np

FORMAT = "ide-net-weights"
VERSION = 1


def dump_weights(state: dict[str, np.ndarray], extra: Optional[dict[str, Any]] = None) -> dict:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "params": {
            name: {"shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for name, arr in state.items()
        },
    }
    if extra:
        doc.update(extra)
    return doc


def load_weights(doc: dict) -> dict[str, np.ndarray]:
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a weight file (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported weight file version {doc.get('version')!r}")
    return {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }


def save(path, state: dict[str, np.ndarray], extra: Optional[dict[str, Any]] = None):
    Path(path).write_text(json.dumps(dump_weights(state, extra)), encoding="utf-8")


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return load_weights(doc), doc
