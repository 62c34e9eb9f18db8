"""Report emission: JSON at full double precision, CSV tables, field dumps."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os

import numpy as np

from ..mesh import field_dump


def plain(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj, indent: int | None = 1) -> str:
    # float repr round-trips, so this is full double precision
    return json.dumps(plain(obj), sort_keys=True, indent=indent) + "\n"


def content_hash(config: dict) -> str:
    blob = json.dumps(plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def with_provenance(report: dict, config: dict) -> dict:
    out = dict(report)
    out["config"] = plain(config)
    out["config_hash"] = content_hash(config)
    return out


def _cell(v):
    v = plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


def to_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=",", lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(text: str) -> list:
    return list(csv.DictReader(io.StringIO(text)))


class Emitter:
    """Single writer for everything that lands in an output directory."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.written = []

    def _write(self, name: str, text: str) -> str:
        path = os.path.join(self.out_dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.written.append(path)
        return path

    def report(self, report: dict, name: str = "report.json") -> str:
        return self._write(name, dumps(report))

    def table(self, rows: list, columns: list, name: str = "table.csv") -> str:
        return self._write(name, to_csv(rows, columns))

    def mesh(self, mesh, name: str = "mesh.json") -> str:
        return self._write(name, dumps(mesh.to_dict(), indent=None))

    def field(self, mesh, values, name: str) -> str:
        return self._write(os.path.join("fields", name), dumps(field_dump(mesh, values), indent=None))


TOPOLOGY_COLUMNS = ["eps", "h_mesh", "n_nodes", "search_alpha", "search_count", "count",
                    "certified_multiplicity_sum", "target_poincare", "target_category", "passed",
                    "error"]
PERTURB_COLUMNS = ["n", "alpha", "h_c1norm", "count", "target", "all_within_R", "all_nondegenerate"]


def emit_topology(out_dir: str, report: dict, config: dict) -> Emitter:
    em = Emitter(out_dir)
    rows = sorted(report["rows"], key=lambda r: -r["eps"])
    em.report(with_provenance(report, config))
    em.table(rows, TOPOLOGY_COLUMNS)
    for r in rows:
        mesh = r.get("_mesh")
        if mesh is None:
            continue
        em.mesh(mesh, f"mesh_eps{r['eps']:g}.json")
        for k, u in r.get("_fields", {}).items():
            em.field(mesh, u, f"eps{r['eps']:g}_sol{k}.json")
    return em
