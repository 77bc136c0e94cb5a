"""Deterministic JSON and CSV output for protocols and reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import numpy as np

SIG_DIGITS = 12


def round_sig(x: float, digits: int = SIG_DIGITS) -> float | None:
    """Round to ``digits`` significant digits; non-finite values become ``None``."""
    x = float(x)
    if not math.isfinite(x):
        return None
    if x == 0:
        return 0.0
    return float(f"{x:.{digits}g}")


def jsonable(obj, digits: int = SIG_DIGITS):
    """Convert dataclasses, numpy scalars and arrays into plain, rounded JSON values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name), digits) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v, digits) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round_sig(obj, digits)
    if isinstance(obj, (complex, np.complexfloating)):
        return [round_sig(obj.real, digits), round_sig(obj.imag, digits)]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist(), digits)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def csv_line(row: dict) -> str:
    """Header plus one data row, columns in the given order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(row))
    w.writerow(["" if v is None else v for v in row.values()])
    return buf.getvalue()


def protocol_document(cp, state_dir: Path | None = None) -> dict:
    """Description of a compiled catalytic protocol.

    Catalyst branch bodies are written to ``state_dir`` as separate state
    files (full precision) and referenced by file name.
    """
    branches = []
    for b in cp.catalyst.branches:
        entry = {"label": b.label, "weight": b.weight, "dims": list(b.body.layout.dims),
                 "labels": list(b.body.layout.labels)}
        if state_dir is not None:
            name = f"catalyst_branch_{b.label}.json"
            write_json(Path(state_dir) / name, b.body.to_json())
            entry["state_file"] = name
        branches.append(entry)
    return jsonable({
        "variant": cp.variant,
        "plan": {
            "n": cp.plan.n, "m": cp.plan.m, "k": cp.plan.k, "g": cp.plan.g,
            "branches": [dataclasses.asdict(b) for b in cp.plan.branches],
        },
        "expected": {"eps": cp.expected_eps, "p": cp.expected_p},
        "steps": [{"kind": s.kind, "note": s.note, "front": {str(k): v for k, v in s.front.items()}}
                  for s in cp.steps],
        "catalyst": branches,
        "output_labels": cp.output_labels,
        "catalyst_labels": cp.catalyst_labels,
        "quantum_dim": cp.quantum_dim,
        "classical_dim": cp.classical_dim,
    })
