"""Text serialization of trained models.

Layout: a ``icd-model v1 <family>`` header, one ``dims`` line, then named
``param <name> <rows> <cols>`` blocks of whitespace-separated values printed
with 17 significant digits, which round-trips IEEE doubles bit-exactly.
String vocabularies go to a ``<path>.ids`` sidecar so saved models can score
raw keys again.
"""

from __future__ import annotations

import os

import numpy as np

from .feature import FMParams, MFSIParams
from .mf import MFParams
from .tensor import ParafacParams, TuckerParams

MAGIC = "icd-model"
VERSION = "v1"
FAMILIES = ("mf", "mfsi", "fm", "parafac", "tucker")


def _blocks_for(kind, params):
    if kind == "mf":
        return [("W", params.W), ("H", params.H)]
    if kind == "mfsi":
        return [("W", params.W), ("H", params.H)]
    if kind == "fm":
        return [
            ("b", np.array([[params.b]])),
            ("w_tilde", params.w_tilde.reshape(1, -1)),
            ("h_tilde", params.h_tilde.reshape(1, -1)),
            ("W", params.W),
            ("H", params.H),
        ]
    if kind == "parafac":
        return [("U", params.U), ("V", params.V), ("W", params.W)]
    return [
        ("B", params.B.reshape(params.B.shape[0] * params.B.shape[1], -1)),
        ("U", params.U),
        ("V", params.V),
        ("W", params.W),
    ]


def _dims_for(kind, params):
    if kind == "mf":
        return [params.W.shape[0], params.H.shape[0], params.k]
    if kind in ("mfsi", "fm"):
        return [params.W.shape[0], params.k]
    if kind == "parafac":
        return [params.U.shape[0], params.V.shape[0], params.W.shape[0], params.k]
    k1, k2, k3 = params.dims
    return [params.U.shape[0], params.V.shape[0], params.W.shape[0], k1, k2, k3]


def save_model(path, kind, params, context_ids=None, item_ids=None):
    """Write the model file and, when vocabularies are given, the .ids sidecar."""
    if kind not in FAMILIES:
        raise ValueError(f"unknown model family {kind!r}")
    lines = [f"{MAGIC} {VERSION} {kind}"]
    lines.append("dims " + " ".join(str(d) for d in _dims_for(kind, params)))
    for name, block in _blocks_for(kind, params):
        block = np.atleast_2d(np.asarray(block, dtype=np.float64))
        lines.append(f"param {name} {block.shape[0]} {block.shape[1]}")
        for row in block:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if context_ids is not None or item_ids is not None:
        with open(path + ".ids", "w", encoding="utf-8") as fh:
            for key in context_ids or []:
                fh.write(f"context\t{key}\n")
            for key in item_ids or []:
                fh.write(f"item\t{key}\n")


def _parse_blocks(lines, path):
    blocks = {}
    pos = 0
    while pos < len(lines):
        head = lines[pos].split()
        if len(head) != 4 or head[0] != "param":
            raise ValueError(f"{path}: malformed block header {lines[pos]!r}")
        name, n_rows, n_cols = head[1], int(head[2]), int(head[3])
        rows = []
        for r in range(n_rows):
            pos += 1
            if pos >= len(lines):
                raise ValueError(f"{path}: truncated block {name!r}")
            vals = lines[pos].split()
            if len(vals) != n_cols:
                raise ValueError(
                    f"{path}: block {name!r} row {r} has {len(vals)} values, "
                    f"expected {n_cols}"
                )
            rows.append([float(v) for v in vals])
        if name in blocks:
            raise ValueError(f"{path}: duplicate block {name!r}")
        blocks[name] = np.array(rows, dtype=np.float64)
        pos += 1
    return blocks


def load_model(path, expected_kind=None):
    """Read a model file; returns (kind, params, ids) with ids possibly None."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty model file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != MAGIC or head[1] != VERSION:
        raise ValueError(f"{path}: not a {MAGIC} {VERSION} file")
    kind = head[2]
    if kind not in FAMILIES:
        raise ValueError(f"{path}: unknown model family {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise ValueError(
            f"{path}: model family is {kind!r}, expected {expected_kind!r}"
        )
    if len(lines) < 2 or not lines[1].startswith("dims "):
        raise ValueError(f"{path}: missing dims line")
    dims = [int(tok) for tok in lines[1].split()[1:]]
    blocks = _parse_blocks(lines[2:], path)

    def need(name, shape):
        if name not in blocks:
            raise ValueError(f"{path}: missing block {name!r}")
        if blocks[name].shape != shape:
            raise ValueError(
                f"{path}: block {name!r} has shape {blocks[name].shape}, "
                f"expected {shape}"
            )
        return blocks[name]

    if kind == "mf":
        n_ctx, n_itm, k = dims
        params = MFParams(need("W", (n_ctx, k)), need("H", (n_itm, k)))
    elif kind == "mfsi":
        p, k = dims
        params = MFSIParams(need("W", (p, k)), need("H", (p, k)))
    elif kind == "fm":
        p, k = dims
        params = FMParams(
            float(need("b", (1, 1))[0, 0]),
            need("w_tilde", (1, p))[0],
            need("h_tilde", (1, p))[0],
            need("W", (p, k)),
            need("H", (p, k)),
        )
    elif kind == "parafac":
        n1, n2, n_itm, k = dims
        params = ParafacParams(
            need("U", (n1, k)), need("V", (n2, k)), need("W", (n_itm, k)))
    else:
        n1, n2, n_itm, k1, k2, k3 = dims
        params = TuckerParams(
            need("B", (k1 * k2, k3)).reshape(k1, k2, k3),
            need("U", (n1, k1)), need("V", (n2, k2)), need("W", (n_itm, k3)))
    ids = None
    if os.path.exists(path + ".ids"):
        ids = {"context": [], "item": []}
        with open(path + ".ids", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or parts[0] not in ids:
                    raise ValueError(f"{path}.ids:{lineno}: malformed id line")
                ids[parts[0]].append(parts[1])
    return kind, params, ids
