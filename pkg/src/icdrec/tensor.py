"""PARAFAC and Tucker decompositions over two context modes plus items.

The context of an observation is a pair (c1, c2); the regularizer either
runs over the observed pairs only (sparse context) or over the full
cartesian product C1 x C2 (dense context), in which case the context Gram
factorizes per mode and the product grid is never materialized.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    GradPair,
    SeparableState,
    compute_gram,
    newton_step,
    reg_value,
)
from .data import rescale_observations
from .mf import adjacency


@dataclass
class ParafacParams:
    """Mode factors U (|C1| x k), V (|C2| x k), W (|I| x k)."""

    U: np.ndarray
    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if not self.U.shape[1] == self.V.shape[1] == self.W.shape[1]:
            raise ValueError("U, V, W must share the embedding dimension")

    @property
    def k(self):
        return self.U.shape[1]

    def copy(self):
        return ParafacParams(self.U.copy(), self.V.copy(), self.W.copy())


@dataclass
class TuckerParams:
    """Core tensor B (k1 x k2 x k3) and factors U, V, W."""

    B: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.B = np.ascontiguousarray(self.B, dtype=np.float64)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if self.B.shape != (self.U.shape[1], self.V.shape[1], self.W.shape[1]):
            raise ValueError("core tensor shape must be (k1, k2, k3)")

    @property
    def dims(self):
        return self.B.shape

    def copy(self):
        return TuckerParams(self.B.copy(), self.U.copy(), self.V.copy(),
                            self.W.copy())


class ContextIndex:
    """Observed (c1, c2) tuples with per-mode row lookup.

    ``row_accesses`` counts how many context rows the lookups have handed
    out; sparse-context training must never request rows outside the
    observed set, which the counter makes checkable.
    """

    def __init__(self, context_tuples, mode_sizes):
        for t in context_tuples:
            if t.arity != 2:
                raise ValueError(
                    f"tensor models need arity-2 contexts, got arity {t.arity}"
                )
        self.c1 = np.array([t.values[0] for t in context_tuples], dtype=np.int64)
        self.c2 = np.array([t.values[1] for t in context_tuples], dtype=np.int64)
        self.n1, self.n2 = mode_sizes
        self.num_rows = len(context_tuples)
        self._rows1 = [
            np.flatnonzero(self.c1 == a).astype(np.int64) for a in range(self.n1)
        ]
        self._rows2 = [
            np.flatnonzero(self.c2 == b).astype(np.int64) for b in range(self.n2)
        ]
        self.row_accesses = 0

    def rows_for_c1(self, a):
        rows = self._rows1[a]
        self.row_accesses += len(rows)
        return rows

    def rows_for_c2(self, b):
        rows = self._rows2[b]
        self.row_accesses += len(rows)
        return rows


def parafac_representation(params, index):
    """Phi rows are elementwise U[c1] * V[c2] per observed tuple; Psi = W."""
    phi = params.U[index.c1] * params.V[index.c2]
    return SeparableState(phi, params.W.copy())


def tucker_representation(params, index):
    """Phi via the core-tensor double sum per observed tuple; Psi = W."""
    phi = np.einsum("ra,rb,abf->rf", params.U[index.c1], params.V[index.c2],
                    params.B)
    return SeparableState(phi, params.W.copy())


def dense_context_gram(mode_grams):
    """Context Gram of the full product grid: elementwise product per mode."""
    grams = [np.asarray(g, dtype=np.float64) for g in mode_grams]
    if not grams:
        raise ValueError("need at least one mode Gram")
    out = grams[0].copy()
    for g in grams[1:]:
        if g.shape != out.shape:
            raise ValueError(f"Gram shape mismatch: {g.shape} vs {out.shape}")
        out = out * g
    return out


def tucker_dense_context_gram(core, j_c1, j_c2):
    """Context Gram of Tucker over the full grid, via the per-mode Grams."""
    return np.einsum("abf,cdg,ac,bd->fg", core, core, j_c1, j_c2)


def parafac_reg_grads(mode, entity, f_star, params, j_gram, index,
                      dense=False, other_gram=None):
    """Regularizer derivatives for one PARAFAC coordinate.

    ``j_gram`` is the Gram of the opposite side (J_I for the context modes,
    J_C for the item mode). Sparse context sums over the co-occurring rows
    only; dense context substitutes the other mode's Gram (``other_gram``).
    """
    if mode == "u":
        vec = params.U[entity]
        if dense:
            s = other_gram[:, f_star]
        else:
            rows = index.rows_for_c1(entity)
            sub = params.V[index.c2[rows]]
            s = sub.T @ sub[:, f_star] if len(rows) else np.zeros(params.k)
    elif mode == "v":
        vec = params.V[entity]
        if dense:
            s = other_gram[:, f_star]
        else:
            rows = index.rows_for_c2(entity)
            sub = params.U[index.c1[rows]]
            s = sub.T @ sub[:, f_star] if len(rows) else np.zeros(params.k)
    elif mode == "w":
        r1 = 2.0 * float(j_gram[:, f_star] @ params.W[entity])
        return GradPair(r1, 2.0 * float(j_gram[f_star, f_star]))
    else:
        raise ValueError(f"unknown PARAFAC mode {mode!r}")
    r1 = 2.0 * float((j_gram[:, f_star] * vec) @ s)
    r2 = 2.0 * float(j_gram[f_star, f_star]) * float(s[f_star])
    return GradPair(r1, r2)


def _tucker_context_derivs(kind, indices, params, index, rows):
    """Per-row dphi/dtheta table D (len(rows) x k3) for u or v coordinates."""
    if kind == "u":
        _, f1_star = indices
        return params.V[index.c2[rows]] @ params.B[f1_star]
    _, f2_star = indices
    return params.U[index.c1[rows]] @ params.B[:, f2_star, :]


def tucker_reg_grads(kind, indices, params, j_gram, index, phi=None,
                     dense=False, mode_grams=None):
    """Regularizer derivatives for one Tucker coordinate.

    Context-side supports are dense over all k3 dimensions; the item side is
    sparse like MF. Every phi is multilinear per coordinate, so second
    derivatives of phi vanish throughout. Dense context replaces the row
    sums with the per-mode Grams (``mode_grams`` = (J_C1, J_C2)).
    """
    k1, k2, k3 = params.dims
    if kind == "w":
        i_star, f3_star = indices
        r1 = 2.0 * float(j_gram[:, f3_star] @ params.W[i_star])
        return GradPair(r1, 2.0 * float(j_gram[f3_star, f3_star]))
    if kind == "b":
        f1_star, f2_star, f3_star = indices
        if dense:
            j_c1, j_c2 = mode_grams
            t = np.einsum("abf,a,b->f", params.B, j_c1[:, f1_star],
                          j_c2[:, f2_star])
            r1 = 2.0 * float(j_gram[:, f3_star] @ t)
            r2 = 2.0 * float(j_gram[f3_star, f3_star]
                             * j_c1[f1_star, f1_star] * j_c2[f2_star, f2_star])
            return GradPair(r1, r2)
        d = params.U[index.c1, f1_star] * params.V[index.c2, f2_star]
        r1 = 2.0 * float(j_gram[:, f3_star] @ (phi.T @ d))
        r2 = 2.0 * float(j_gram[f3_star, f3_star]) * float(d @ d)
        return GradPair(r1, r2)
    if kind not in ("u", "v"):
        raise ValueError(f"unknown Tucker parameter kind {kind!r}")
    entity, _ = indices
    if dense:
        j_c1, j_c2 = mode_grams
        if kind == "u":
            f1_star = indices[1]
            a = np.tensordot(params.U[entity], params.B, axes=(0, 0))  # k2 x k3
            d = params.B[f1_star]
            m = a.T @ j_c2 @ d
            s = d.T @ j_c2 @ d
        else:
            f2_star = indices[1]
            a = np.einsum("abf,b->af", params.B, params.V[entity])  # k1 x k3
            d = params.B[:, f2_star, :]
            m = a.T @ j_c1 @ d
            s = d.T @ j_c1 @ d
        return GradPair(2.0 * float(np.sum(j_gram * m)),
                        2.0 * float(np.sum(j_gram * s)))
    rows = index.rows_for_c1(entity) if kind == "u" else index.rows_for_c2(entity)
    if len(rows) == 0:
        return GradPair(0.0, 0.0)
    d = _tucker_context_derivs(kind, indices, params, index, rows)
    r1 = 2.0 * float(np.sum(j_gram * (phi[rows].T @ d)))
    r2 = 2.0 * float(np.sum(j_gram * (d.T @ d)))
    return GradPair(r1, r2)


def init_parafac_params(mode_sizes, num_items, config):
    rng = np.random.default_rng(config.seed)
    n1, n2 = mode_sizes
    U = rng.normal(0.0, config.sigma, (n1, config.k))
    V = rng.normal(0.0, config.sigma, (n2, config.k))
    W = rng.normal(0.0, config.sigma, (num_items, config.k))
    return ParafacParams(U, V, W)


def init_tucker_params(mode_sizes, num_items, config):
    rng = np.random.default_rng(config.seed)
    n1, n2 = mode_sizes
    U = rng.normal(0.0, config.sigma, (n1, config.k1))
    V = rng.normal(0.0, config.sigma, (n2, config.k2))
    W = rng.normal(0.0, config.sigma, (num_items, config.k3))
    B = rng.normal(0.0, config.sigma, (config.k1, config.k2, config.k3))
    return TuckerParams(B, U, V, W)


def _tensor_objective(kind, params, index, s_ctx, s_itm, s_y, s_a, config):
    represent = parafac_representation if kind == "parafac" else tucker_representation
    state = represent(params, index)
    preds = np.einsum("ij,ij->i", state.phi[s_ctx], state.psi[s_itm])
    obj = float(np.sum(s_a * (preds - s_y) ** 2))
    sq = float(np.sum(params.U**2)) + float(np.sum(params.V**2)) + float(
        np.sum(params.W**2))
    if kind == "tucker":
        sq += float(np.sum(params.B**2))
    obj += config.lam * sq
    j_i = compute_gram(state.psi)
    if config.dense_context:
        if kind == "parafac":
            j_c = dense_context_gram([compute_gram(params.U),
                                      compute_gram(params.V)])
        else:
            j_c = tucker_dense_context_gram(params.B, compute_gram(params.U),
                                            compute_gram(params.V))
    else:
        j_c = compute_gram(state.phi)
    return obj + config.alpha0 * reg_value(j_c, j_i)


def train_tensor_model(kind, dataset, config, init=None, freeze=()):
    """Implicit CD for PARAFAC or Tucker (``kind`` in {"parafac", "tucker"}).

    Per epoch the sweeps run mode-major: U, V, (B for Tucker,
    lexicographic), then W, each dimension-major with entities inner.
    ``freeze`` may name modes ("V", "B") to keep fixed, which the reduction
    tests use. Returns (params, history).
    """
    if kind not in ("parafac", "tucker"):
        raise ValueError(f"unknown tensor model kind {kind!r}")
    if dataset.context_tuples is None or dataset.mode_sizes is None:
        raise ValueError("tensor training needs arity-2 context tuples")
    index = ContextIndex(dataset.context_tuples, dataset.mode_sizes)
    if init is not None:
        params = init.copy()
    elif kind == "parafac":
        params = init_parafac_params(dataset.mode_sizes, dataset.num_items, config)
    else:
        params = init_tucker_params(dataset.mode_sizes, dataset.num_items, config)

    rescaled = rescale_observations(dataset.positives, config.alpha0)
    n_pos = len(rescaled)
    s_ctx = np.array([o.context_id for o in rescaled], dtype=np.int64)
    s_itm = np.array([o.item_id for o in rescaled], dtype=np.int64)
    s_y = np.array([o.y for o in rescaled], dtype=np.float64)
    s_a = np.array([o.alpha for o in rescaled], dtype=np.float64)
    dense = config.dense_context

    # positives grouped by first mode, second mode and item
    pos_c1 = index.c1[s_ctx] if n_pos else np.zeros(0, dtype=np.int64)
    pos_c2 = index.c2[s_ctx] if n_pos else np.zeros(0, dtype=np.int64)

    def group(ids, n):
        ptr, order = adjacency(ids, n) if n_pos else (
            np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        return [order[ptr[e]:ptr[e + 1]] for e in range(n)]

    sel_c1 = group(pos_c1, index.n1)
    sel_c2 = group(pos_c2, index.n2)
    sel_itm = group(s_itm, dataset.num_items)

    # local position of each positive's context row within its mode group
    def local_pos(rows_fn, n, pos_ids, sels):
        out = []
        for ent in range(n):
            rows = rows_fn(ent)
            lookup = {int(r): j for j, r in enumerate(rows)}
            out.append(np.array([lookup[int(s_ctx[s])] for s in sels[ent]],
                                dtype=np.int64))
        return out

    rows1 = [index.rows_for_c1(a) for a in range(index.n1)]
    rows2 = [index.rows_for_c2(b) for b in range(index.n2)]
    rowpos_c1 = local_pos(lambda a: rows1[a], index.n1, pos_c1, sel_c1)
    rowpos_c2 = local_pos(lambda b: rows2[b], index.n2, pos_c2, sel_c2)

    represent = parafac_representation if kind == "parafac" else tucker_representation
    lam = config.lam
    history = []
    prev = None

    def update(theta, reg, sel, d1_s, e):
        l1 = 2.0 * lam * theta + 2.0 * float(np.sum(s_a[sel] * e[sel] * d1_s))
        l2 = 2.0 * lam + 2.0 * float(np.sum(s_a[sel] * d1_s * d1_s))
        return newton_step(theta, GradPair(l1, l2), reg, config.alpha0,
                           config.eta, config.epsilon_guard)

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        skipped = 0
        state = represent(params, index)
        phi, psi = state.phi, state.psi
        e = np.einsum("ij,ij->i", phi[s_ctx], psi[s_itm]) - s_y

        n_ctx_dims = params.k if kind == "parafac" else config.k1

        # U sweep
        for f_star in range(n_ctx_dims):
            j_i = compute_gram(params.W)
            g_v = compute_gram(params.V) if dense else None
            for c1 in range(index.n1):
                rows = rows1[c1]
                sel = sel_c1[c1]
                if kind == "parafac":
                    deriv = params.V[index.c2[rows], f_star]
                    d1_s = deriv[rowpos_c1[c1]] * params.W[s_itm[sel], f_star]
                    reg = parafac_reg_grads("u", c1, f_star, params, j_i,
                                            index, dense, g_v)
                else:
                    d_tab = _tucker_context_derivs("u", (c1, f_star), params,
                                                   index, rows)
                    d1_s = np.einsum("sf,sf->s", d_tab[rowpos_c1[c1]],
                                     params.W[s_itm[sel]])
                    reg = tucker_reg_grads("u", (c1, f_star), params, j_i,
                                           index, phi, dense,
                                           (None, g_v) if dense else None)
                theta, skip = update(params.U[c1, f_star], reg, sel, d1_s, e)
                if skip:
                    skipped += 1
                    continue
                delta = theta - params.U[c1, f_star]
                params.U[c1, f_star] = theta
                if kind == "parafac":
                    phi[rows, f_star] += delta * deriv
                else:
                    phi[rows] += delta * d_tab
                e[sel] += delta * d1_s

        # V sweep
        if "V" not in freeze:
            n_dims = params.k if kind == "parafac" else config.k2
            for f_star in range(n_dims):
                j_i = compute_gram(params.W)
                g_u = compute_gram(params.U) if dense else None
                for c2 in range(index.n2):
                    rows = rows2[c2]
                    sel = sel_c2[c2]
                    if kind == "parafac":
                        deriv = params.U[index.c1[rows], f_star]
                        d1_s = deriv[rowpos_c2[c2]] * params.W[s_itm[sel], f_star]
                        reg = parafac_reg_grads("v", c2, f_star, params, j_i,
                                                index, dense, g_u)
                    else:
                        d_tab = _tucker_context_derivs("v", (c2, f_star),
                                                       params, index, rows)
                        d1_s = np.einsum("sf,sf->s", d_tab[rowpos_c2[c2]],
                                         params.W[s_itm[sel]])
                        reg = tucker_reg_grads("v", (c2, f_star), params, j_i,
                                               index, phi, dense,
                                               (g_u, None) if dense else None)
                    theta, skip = update(params.V[c2, f_star], reg, sel, d1_s, e)
                    if skip:
                        skipped += 1
                        continue
                    delta = theta - params.V[c2, f_star]
                    params.V[c2, f_star] = theta
                    if kind == "parafac":
                        phi[rows, f_star] += delta * deriv
                    else:
                        phi[rows] += delta * d_tab
                    e[sel] += delta * d1_s

        # B sweep (Tucker), lexicographic over (f1, f2, f3)
        if kind == "tucker" and "B" not in freeze:
            j_i = compute_gram(params.W)
            g_u = compute_gram(params.U) if dense else None
            g_v = compute_gram(params.V) if dense else None
            all_s = np.arange(n_pos, dtype=np.int64)
            for f1 in range(config.k1):
                for f2 in range(config.k2):
                    d_all = params.U[index.c1, f1] * params.V[index.c2, f2]
                    for f3 in range(config.k3):
                        reg = tucker_reg_grads(
                            "b", (f1, f2, f3), params, j_i, index, phi, dense,
                            (g_u, g_v) if dense else None)
                        d1_s = d_all[s_ctx] * params.W[s_itm, f3]
                        theta, skip = update(params.B[f1, f2, f3], reg, all_s,
                                             d1_s, e)
                        if skip:
                            skipped += 1
                            continue
                        delta = theta - params.B[f1, f2, f3]
                        params.B[f1, f2, f3] = theta
                        phi[:, f3] += delta * d_all
                        e += delta * d1_s

        # W sweep (items), identical to MF given the context Gram
        n_item_dims = params.k if kind == "parafac" else config.k3
        for f_star in range(n_item_dims):
            if dense:
                if kind == "parafac":
                    j_c = dense_context_gram([compute_gram(params.U),
                                              compute_gram(params.V)])
                else:
                    j_c = tucker_dense_context_gram(
                        params.B, compute_gram(params.U), compute_gram(params.V))
            else:
                j_c = compute_gram(phi)
            for i in range(dataset.num_items):
                sel = sel_itm[i]
                d1_s = phi[s_ctx[sel], f_star]
                if kind == "parafac":
                    reg = parafac_reg_grads("w", i, f_star, params, j_c, index)
                else:
                    reg = tucker_reg_grads("w", (i, f_star), params, j_c, index)
                theta, skip = update(params.W[i, f_star], reg, sel, d1_s, e)
                if skip:
                    skipped += 1
                    continue
                delta = theta - params.W[i, f_star]
                params.W[i, f_star] = theta
                e[sel] += delta * d1_s

        obj = _tensor_objective(kind, params, index, s_ctx, s_itm, s_y, s_a,
                                config)
        history.append({
            "epoch": epoch,
            "objective": obj,
            "seconds": time.perf_counter() - t0,
            "skipped": skipped,
        })
        if prev is not None and abs(prev - obj) <= config.tol * max(1.0, abs(prev)):
            break
        prev = obj
    return params, history
