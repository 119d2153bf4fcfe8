"""Result persistence: JSON documents with a provenance header, CSV tables."""

import csv
import json
import math
import time
from pathlib import Path

import numpy as np

TIMESTAMP_FIELD = "created"


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"real": to_jsonable(obj.real.tolist()), "imag": to_jsonable(obj.imag.tolist())}
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        # JSON has no inf/nan; keep them readable and round-trippable
        return val if math.isfinite(val) else str(val)
    if isinstance(obj, complex):
        return {"real": obj.real, "imag": obj.imag}
    return obj


def provenance(config_hash, model=None, grid=None, seed=None):
    head = {"config_hash": config_hash, "seed": seed, TIMESTAMP_FIELD: time.strftime("%Y-%m-%dT%H:%M:%S")}
    if model is not None:
        head["atom_hash"] = model.atom.content_hash()
    if grid is not None:
        head["grid_hash"] = grid.content_hash()
    return head


def write_json(path, header, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"header": to_jsonable(header), **to_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def strip_timestamp(doc):
    doc = dict(doc)
    if "header" in doc:
        doc["header"] = {k: v for k, v in doc["header"].items() if k != TIMESTAMP_FIELD}
    return doc


def write_triplets(path, operator, header):
    """SparseHermitian -> `<path>.csv` (row, col, re, im) plus `<path>.json` header."""
    path = Path(path)
    rows = zip(operator.rows, operator.cols, operator.values.real, operator.values.imag)
    write_csv(path.with_suffix(".csv"), ["row", "col", "re", "im"], [[int(r), int(c), a, b] for r, c, a, b in rows])
    write_json(path.with_suffix(".json"), header, {"dimension": operator.dimension, "entries": len(operator.values)})
    return path


def read_triplets(path):
    from .fock import SparseHermitian

    path = Path(path)
    doc = read_json(path.with_suffix(".json"))
    data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    return SparseHermitian(
        int(doc["dimension"]), data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2] + 1j * data[:, 3]
    )
