"""Observations, vocabularies, sparse features and the confidence rescaling.

An implicit dataset stores only the observed positives ``S+`` together with
the uniform confidence ``alpha0`` of every unobserved cell, so the full
``|C| x |I|`` grid is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class Observation:
    """One (context, item, score, confidence) tuple."""

    context_id: int
    item_id: int
    y: float
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(
                f"observation ({self.context_id},{self.item_id}) has "
                f"non-positive confidence alpha={self.alpha}"
            )


@dataclass(frozen=True)
class ContextTuple:
    """Multi-variable context, one integer index per mode."""

    values: tuple

    def __post_init__(self):
        if len(self.values) < 1:
            raise ValueError("context tuple must have arity >= 1")

    @property
    def arity(self):
        return len(self.values)


@dataclass
class ImplicitDataset:
    """Positives plus an implicit zero for every other context-item cell.

    ``num_contexts`` counts context rows: plain contexts for MF-style models,
    distinct observed context tuples for tensor models (``context_tuples``
    then maps row index -> per-mode indices and ``mode_sizes`` gives the
    per-mode vocabulary sizes).
    """

    num_contexts: int
    num_items: int
    positives: list
    alpha0: float = 1.0
    context_tuples: list | None = None
    mode_sizes: tuple | None = None
    context_ids: list | None = None
    item_ids: list | None = None

    def __post_init__(self):
        if self.alpha0 < 0:
            raise ValueError(f"alpha0 must be >= 0, got {self.alpha0}")
        seen = set()
        for obs in self.positives:
            if not 0 <= obs.context_id < self.num_contexts:
                raise ValueError(f"context_id {obs.context_id} out of range")
            if not 0 <= obs.item_id < self.num_items:
                raise ValueError(f"item_id {obs.item_id} out of range")
            if obs.alpha <= self.alpha0:
                raise ValueError(
                    f"positive ({obs.context_id},{obs.item_id}) has "
                    f"alpha={obs.alpha} <= alpha0={self.alpha0}; rescaled "
                    "confidence would be <= 0"
                )
            key = (obs.context_id, obs.item_id)
            if key in seen:
                raise ValueError(f"duplicate (context, item) pair {key}")
            seen.add(key)
        if self.context_tuples is not None:
            if len(self.context_tuples) != self.num_contexts:
                raise ValueError("one context tuple required per context row")

    def arrays(self):
        """Positives as (ctx, item, y, alpha) numpy arrays, input order."""
        ctx = np.array([o.context_id for o in self.positives], dtype=np.int64)
        itm = np.array([o.item_id for o in self.positives], dtype=np.int64)
        y = np.array([o.y for o in self.positives], dtype=np.float64)
        a = np.array([o.alpha for o in self.positives], dtype=np.float64)
        return ctx, itm, y, a


def rescale_observations(positives, alpha0):
    """Map each (c, i, y, a) to (c, i, a/(a-a0)*y, a-a0).

    This turns the implicit objective over all cells into an explicit loss
    over the positives plus ``alpha0`` times the implicit regularizer,
    preserving the optimum.
    """
    if alpha0 < 0:
        raise ValueError(f"alpha0 must be >= 0, got {alpha0}")
    out = []
    for obs in positives:
        if obs.alpha <= alpha0:
            raise ValueError(
                f"cannot rescale ({obs.context_id},{obs.item_id}): "
                f"alpha={obs.alpha} <= alpha0={alpha0} gives rescaled "
                "confidence <= 0"
            )
        scale = obs.alpha / (obs.alpha - alpha0)
        out.append(
            Observation(obs.context_id, obs.item_id, scale * obs.y, obs.alpha - alpha0)
        )
    return out


def assemble_dataset(raw, alpha0=1.0, default_alpha=2.0):
    """Build an ImplicitDataset from raw (context, item, y[, alpha]) tuples.

    Context and item ids may be arbitrary strings; they are mapped to dense
    indices in first-seen order. A comma inside the context id denotes a
    multi-mode context tuple, e.g. ``"u3,q7"``.
    """
    if default_alpha <= alpha0:
        raise ValueError(
            f"default_alpha={default_alpha} must exceed alpha0={alpha0}"
        )
    ctx_index = {}
    item_index = {}
    positives = []
    arity = None
    mode_indexes = None
    tuples = []
    for rec in raw:
        if len(rec) == 3:
            c_key, i_key, y = rec
            alpha = default_alpha
        elif len(rec) == 4:
            c_key, i_key, y, alpha = rec
            if alpha is None:
                alpha = default_alpha
        else:
            raise ValueError(f"expected (context, item, y[, alpha]), got {rec!r}")
        c_key = str(c_key)
        parts = c_key.split(",")
        if arity is None:
            arity = len(parts)
            if arity > 1:
                mode_indexes = [{} for _ in range(arity)]
        elif len(parts) != arity:
            raise ValueError(
                f"context {c_key!r} has arity {len(parts)}, expected {arity}"
            )
        if c_key not in ctx_index:
            ctx_index[c_key] = len(ctx_index)
            if arity > 1:
                modes = []
                for m, part in enumerate(parts):
                    if part not in mode_indexes[m]:
                        mode_indexes[m][part] = len(mode_indexes[m])
                    modes.append(mode_indexes[m][part])
                tuples.append(ContextTuple(tuple(modes)))
        if i_key not in item_index:
            item_index[i_key] = len(item_index)
        positives.append(
            Observation(ctx_index[c_key], item_index[i_key], float(y), float(alpha))
        )
    return ImplicitDataset(
        num_contexts=len(ctx_index),
        num_items=len(item_index),
        positives=positives,
        alpha0=alpha0,
        context_tuples=tuples if arity is not None and arity > 1 else None,
        mode_sizes=(
            tuple(len(m) for m in mode_indexes) if mode_indexes is not None else None
        ),
        context_ids=list(ctx_index),
        item_ids=list(item_index),
    )


class FeatureMatrix:
    """Row-sparse design matrix with ascending feature indices per row."""

    def __init__(self, num_rows, num_features, rows):
        if len(rows) != num_rows:
            raise ValueError(f"expected {num_rows} rows, got {len(rows)}")
        self.num_rows = num_rows
        self.num_features = num_features
        norm_rows = []
        for r, entries in enumerate(rows):
            entries = sorted(entries, key=lambda e: e[0])
            seen = set()
            for idx, _ in entries:
                if idx < 0 or idx >= num_features:
                    raise ValueError(
                        f"row {r}: feature index {idx} out of range (p={num_features})"
                    )
                if idx in seen:
                    raise ValueError(f"row {r}: duplicate feature index {idx}")
                seen.add(idx)
            norm_rows.append([(int(i), float(v)) for i, v in entries])
        self.rows = norm_rows

    @classmethod
    def one_hot(cls, n, num_features=None):
        p = n if num_features is None else num_features
        return cls(n, p, [[(i, 1.0)] for i in range(n)])

    def to_csr(self):
        indptr = [0]
        indices = []
        values = []
        for entries in self.rows:
            for i, v in entries:
                indices.append(i)
                values.append(v)
            indptr.append(len(indices))
        return sparse.csr_matrix(
            (np.asarray(values, dtype=np.float64), indices, indptr),
            shape=(self.num_rows, self.num_features),
        )

    def to_dense(self):
        return self.to_csr().toarray()

    def columns(self):
        """Per-feature (row_indices, values) arrays for column iteration."""
        csc = self.to_csr().tocsc()
        cols = []
        for l in range(self.num_features):
            lo, hi = csc.indptr[l], csc.indptr[l + 1]
            cols.append((csc.indices[lo:hi].astype(np.int64), csc.data[lo:hi]))
        return cols

    @property
    def nnz(self):
        return sum(len(r) for r in self.rows)


def assemble_feature_matrix(raw_rows, num_features):
    """Normalize raw per-row (index, value) lists into a FeatureMatrix."""
    return FeatureMatrix(len(raw_rows), num_features, raw_rows)


def read_interactions(path):
    """Parse a TSV interaction file into raw event tuples, preserving order.

    Format per line: ``context<TAB>item<TAB>y[<TAB>alpha]``; lines starting
    with ``#`` are ignored. Returns (context, item, y, alpha_or_None) tuples.
    """
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ValueError(
                    f"{path}:{lineno}: expected 3 or 4 tab-separated fields, "
                    f"got {len(parts)}"
                )
            try:
                y = float(parts[2])
                alpha = float(parts[3]) if len(parts) == 4 else None
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            events.append((parts[0], parts[1], y, alpha))
    return events


def read_features(path):
    """Parse ``entity_id<TAB>idx:val idx:val ...`` lines into a dict."""
    feats = {}
    max_idx = -1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 'entity<TAB>idx:val ...'"
                )
            entity, spec_str = parts
            entries = []
            for tok in spec_str.split():
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: malformed feature token {tok!r}"
                    ) from None
                entries.append((idx, val))
                max_idx = max(max_idx, idx)
            if entity in feats:
                raise ValueError(f"{path}:{lineno}: duplicate entity {entity!r}")
            feats[entity] = entries
    return feats, max_idx + 1


def feature_matrix_for(entities, feats, num_features):
    """Assemble rows for ``entities`` (in order) from a parsed feature dict."""
    rows = []
    for ent in entities:
        if ent not in feats:
            raise ValueError(f"entity {ent!r} missing from feature file")
        rows.append(feats[ent])
    return FeatureMatrix(len(entities), num_features, rows)
