"""Canonical JSON for every artifact the pipeline emits.

One writer, one float convention, sorted keys, LF endings, no clocks or
hostnames. Repeated runs with equal inputs must produce byte-identical
files, so every document is built from deterministically ordered data and
dumped through the same code path. Each document kind validates against
the schema of the same name shipped in ``schemas/``.
"""

import json
from pathlib import Path

import jsonschema
import numpy as np

from .elements import AlgebraShape, BlockShape, Element
from .errors import ShapeError

SCHEMA_DIR = Path(__file__).resolve().parent / "schemas"

__all__ = [
    "SCHEMA_DIR",
    "canonical_dumps",
    "element_doc",
    "element_from_doc",
    "generator_doc",
    "load_document",
    "report_doc",
    "scaffold_doc",
    "schema_for",
    "shape_doc",
    "shape_from_doc",
    "snapshot_doc",
    "validate_document",
    "write_document",
]


def canonical_dumps(doc) -> str:
    """The one serialization convention: sorted keys, two-space indent,
    shortest round-trip float repr, refuses NaN and infinity."""
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False,
                      allow_nan=False) + "\n"


_schemas: dict = {}


def schema_for(kind: str) -> dict:
    if kind not in _schemas:
        path = SCHEMA_DIR / f"{kind}.schema.json"
        if not path.exists():
            raise ShapeError(f"no schema for document kind '{kind}'")
        _schemas[kind] = json.loads(path.read_text(encoding="utf-8"))
    return _schemas[kind]


def validate_document(doc: dict, kind: str) -> None:
    jsonschema.validate(doc, schema_for(kind))


def write_document(path, kind: str, doc: dict):
    """Validate and write one artifact; returns the path."""
    validate_document(doc, kind)
    text = canonical_dumps(doc)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def load_document(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# elements

def shape_doc(shape: AlgebraShape) -> dict:
    return {"blocks": [{"size": b.size, "samples": b.samples}
                       for b in shape.blocks]}


def shape_from_doc(doc: dict) -> AlgebraShape:
    return AlgebraShape([BlockShape(b["size"], b["samples"])
                         for b in doc["blocks"]])


def element_doc(e: Element) -> dict:
    """Shape descriptor plus row-major [re, im] pairs per block per sample."""
    blocks = []
    for stack in e.data:
        samples = []
        for s in range(stack.shape[0]):
            flat = stack[s].reshape(-1)
            samples.append([[float(z.real), float(z.imag)] for z in flat])
        blocks.append(samples)
    return {"shape": shape_doc(e.shape), "blocks": blocks}


def element_from_doc(doc: dict) -> Element:
    shape = shape_from_doc(doc["shape"])
    data = []
    for b, samples in zip(shape.blocks, doc["blocks"]):
        stack = np.empty((b.samples, b.size, b.size), dtype=np.complex128)
        for s, pairs in enumerate(samples):
            arr = np.asarray(pairs, dtype=float)
            stack[s] = (arr[:, 0] + 1j * arr[:, 1]).reshape(b.size, b.size)
        data.append(stack)
    return Element(shape, data)


# ---------------------------------------------------------------------------
# the pipeline artifacts

def _space_doc(sp) -> dict:
    doc = {"kind": sp.kind, "dim": sp.dim, "count": sp.count,
           "power": sp.power}
    if sp.kind == "base":
        doc["points"] = [[float(x) for x in p] for p in sp.points]
    return doc


def _map_doc(m) -> dict:
    return {"targets": [
        [{"source": int(sb), "points": [int(x) for x in pm]}
         for sb, pm in slots]
        for slots in m.entries]}


def _composed_multiplicities(skel) -> list:
    out = []
    for i in range(1, len(skel.sizes)):
        m = np.array(skel.incidence[i - 1], dtype=np.int64)
        for step in range(i, len(skel.sizes) - 1):
            m = m @ np.array(skel.incidence[step], dtype=np.int64)
        out.append([[int(x) for x in row] for row in m])
    return out


def snapshot_doc(snap) -> dict:
    skel = snap.af_skeleton
    return {
        "document": "snapshot",
        "kind": snap.kind,
        "depth": snap.depth,
        "tensor_dim": snap.tensor_dim,
        "shapes": [shape_doc(s) for s in snap.shapes],
        "spaces": [_space_doc(sp) for sp in snap.spaces],
        "steps": [_map_doc(m) for m in snap.steps],
        "skeleton": {
            "sizes": [list(row) for row in skel.sizes],
            "incidence": [[list(row) for row in mat]
                          for mat in skel.incidence],
        },
        "composed_multiplicities": _composed_multiplicities(skel),
        "d_labels": [d.label for d in snap.D_generators],
    }


def _lambda_doc(lambdas) -> list:
    # stored indices use 0-based group/block; display is 1-based throughout
    return [{"index": [i, jp + 1, j + 1, k], "value": float(v)}
            for (i, jp, j, k), v in lambdas.entries]


def scaffold_doc(qwu, lambdas=None) -> dict:
    """Index tables mapping every scaffold label to its matrix-unit
    coordinates, plus the coefficient ladder when one is supplied."""
    sel = qwu.selection
    q_rows, w_rows, u_rows = [], [], []
    for (i, jp, j, k) in qwu.q_indices():
        pos = int(qwu.q_position(i, jp, j, k))
        row = {"index": [i, jp + 1, j + 1, k], "stage": sel.stage(i),
               "block": j, "row": pos, "col": pos}
        q_rows.append(row)
        w_rows.append({**row, "row": int(qwu.range_rows[i - 1][j])})
    for i in range(1, qwu.depth + 1):
        for j in range(sel.K(i)):
            rr = int(qwu.range_rows[i - 1][j])
            for k, col in enumerate(qwu.u_columns(i, j), start=1):
                u_rows.append({"index": [i, j + 1, k],
                               "stage": sel.stage(i), "block": j,
                               "row": rr, "col": int(col)})
    return {
        "document": "scaffold",
        "selection": {"stages": list(sel.stages),
                      "K": [sel.K(i) for i in range(1, sel.count + 1)]},
        "q": q_rows,
        "w": w_rows,
        "u": u_rows,
        "lambda": _lambda_doc(lambdas) if lambdas is not None else [],
    }


def generator_doc(bundle) -> dict:
    return {
        "document": "generator",
        "depth": bundle.depth,
        "tail_bound": bundle.tail_bound,
        "generator": element_doc(bundle.generator),
        "stages": [{"stage": c.stage, "norm": float(c.norm),
                    "lambda_sum": float(c.lambda_sum),
                    "partial_bound": float(c.partial_bound),
                    "bound": float(c.bound), "passed": bool(c.passed)}
                   for c in bundle.certificates],
        "registry": [{"owner": [o if isinstance(o, str) else int(o)
                                for o in blk.owner],
                      "level": blk.level,
                      "intervals": [[float(lo), float(hi)]
                                    for lo, hi in blk.intervals]}
                     for blk in bundle.registry.blocks],
        "lambda": _lambda_doc(bundle.lambdas),
    }


def report_doc(report) -> dict:
    return {
        "document": "report",
        "checks": [{"check": r.check, "identity_tag": r.tag,
                    "status": r.status, "value": float(r.value),
                    "tolerance": float(r.tolerance)}
                   for r in report.rows],
    }
