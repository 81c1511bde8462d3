"""Serialization of results: CSV tables, a JSON summary and a run manifest.

Output bytes are a pure function of the results: floats are written with
``repr`` (shortest round-trip form), JSON keys are sorted, line endings are
LF, and the manifest records only inputs that affect results (not the output
directory or worker count).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"


@dataclass
class Results:
    subcommand: str
    config: dict
    seed: int | None = None
    summary: dict = field(default_factory=dict)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return repr(f) if math.isfinite(f) else ""
    if v is None:
        return ""
    return str(v)


def format_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def render(results: Results) -> dict[str, bytes]:
    """File name -> exact bytes for everything except the manifest."""
    files = {SUMMARY_FILE: dumps_json(results.summary).encode("utf-8")}
    for name, (header, rows) in sorted(results.tables.items()):
        files[f"{name}.csv"] = format_csv(header, rows).encode("utf-8")
    return files


def manifest_for(results: Results, files: dict[str, bytes]) -> dict:
    return {
        "subcommand": results.subcommand,
        "config": results.config,
        "seed": results.seed,
        "artifact_version": __version__,
        "outputs": {name: sha256_bytes(data) for name, data in sorted(files.items())},
    }


def emit_report(results: Results, out_dir) -> list[Path]:
    """Write the rendered files plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = render(results)
    files[MANIFEST_FILE] = dumps_json(manifest_for(results, files)).encode("utf-8")
    written = []
    for name, data in files.items():
        p = out / name
        p.write_bytes(data)
        written.append(p)
    return written


def verify_manifest(out_dir) -> bool:
    """True when every digest in the manifest matches the file on disk."""
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST_FILE).read_text(encoding="utf-8"))
    return all(sha256_bytes((out / name).read_bytes()) == digest
               for name, digest in manifest["outputs"].items())


# ---- table builders -------------------------------------------------------

def histogram_rows(key, edges, counts) -> list[list]:
    return [[key, float(edges[j]), float(edges[j + 1]), int(counts[j])] for j in range(len(counts))]


def power_curve_table(curve) -> tuple[list[str], list[list]]:
    return ["z", "power"], [[z, p] for z, p in curve]
