"""Feature-based factorization models: MF with side information and FMs.

Both models score a (context, item) pair from sparse feature vectors x_c and
z_i over a shared feature space of size p. MFSI is k-separable with
Phi = X W; the FM is (k+2)-separable, with one extra slot carrying the bias,
linear and within-context interactions, and another carrying the item-side
counterpart.

Column convention for the FM tables (0-based): slots 0..k-1 are the
factorized dimensions, slot k is the context bias slot (psi = 1 there) and
slot k+1 the item bias slot (phi = 1 there).
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
    reg_grads_generic,
    reg_value,
)
from .data import rescale_observations
from .mf import adjacency


@dataclass
class MFSIParams:
    """Per-feature embeddings: W (p x k) for contexts, H (p x k) for items."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.H = np.ascontiguousarray(self.H, dtype=np.float64)
        if self.W.shape != self.H.shape:
            raise ValueError("W and H must both be p x k")

    @property
    def k(self):
        return self.W.shape[1]

    def copy(self):
        return MFSIParams(self.W.copy(), self.H.copy())


@dataclass
class FMParams:
    """Factorization machine parameters on the concatenated feature space."""

    b: float
    w_tilde: np.ndarray
    h_tilde: np.ndarray
    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.b = float(self.b)
        self.w_tilde = np.ascontiguousarray(self.w_tilde, dtype=np.float64)
        self.h_tilde = np.ascontiguousarray(self.h_tilde, dtype=np.float64)
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.H = np.ascontiguousarray(self.H, dtype=np.float64)
        if self.W.shape != self.H.shape:
            raise ValueError("W and H must both be p x k")
        if self.w_tilde.shape[0] != self.W.shape[0]:
            raise ValueError("w_tilde length must match W rows")

    @property
    def k(self):
        return self.W.shape[1]

    def copy(self):
        return FMParams(self.b, self.w_tilde.copy(), self.h_tilde.copy(),
                        self.W.copy(), self.H.copy())


def init_mfsi_params(p, config):
    rng = np.random.default_rng(config.seed)
    W = rng.normal(0.0, config.sigma, (p, config.k))
    H = rng.normal(0.0, config.sigma, (p, config.k))
    return MFSIParams(W, H)


def init_fm_params(p, config):
    rng = np.random.default_rng(config.seed)
    b = rng.normal(0.0, config.sigma)
    w_tilde = rng.normal(0.0, config.sigma, p)
    h_tilde = rng.normal(0.0, config.sigma, p)
    W = rng.normal(0.0, config.sigma, (p, config.k))
    H = rng.normal(0.0, config.sigma, (p, config.k))
    return FMParams(b, w_tilde, h_tilde, W, H)


def _check_dims(params, x_feat, z_feat):
    if x_feat.num_features != params.W.shape[0]:
        raise ValueError(
            f"context feature dim {x_feat.num_features} != p={params.W.shape[0]}"
        )
    if z_feat.num_features != params.H.shape[0]:
        raise ValueError(
            f"item feature dim {z_feat.num_features} != p={params.H.shape[0]}"
        )


def mfsi_representation(params, x_feat, z_feat):
    """Phi = X W, Psi = Z H."""
    _check_dims(params, x_feat, z_feat)
    phi = np.asarray(x_feat.to_csr() @ params.W)
    psi = np.asarray(z_feat.to_csr() @ params.H)
    return SeparableState(phi, psi)


def _internal_pairs(csr, emb):
    """Within-group pairwise term via the standard square expansion."""
    lin = np.asarray(csr @ emb)
    sq = np.asarray(csr.multiply(csr) @ (emb**2))
    return 0.5 * (np.sum(lin**2, axis=1) - np.sum(sq, axis=1))


def fm_representation(params, x_feat, z_feat):
    """(k+2)-separable tables reproducing the full FM score."""
    _check_dims(params, x_feat, z_feat)
    xc = x_feat.to_csr()
    zc = z_feat.to_csr()
    k = params.k
    phi = np.empty((x_feat.num_rows, k + 2))
    phi[:, :k] = np.asarray(xc @ params.W)
    phi[:, k] = params.b + np.asarray(xc @ params.w_tilde) + _internal_pairs(xc, params.W)
    phi[:, k + 1] = 1.0
    psi = np.empty((z_feat.num_rows, k + 2))
    psi[:, :k] = np.asarray(zc @ params.H)
    psi[:, k] = 1.0
    psi[:, k + 1] = np.asarray(zc @ params.h_tilde) + _internal_pairs(zc, params.H)
    return SeparableState(phi, psi)


def mfsi_reg_grads(l_star, f_star, x_feat, phi, j_i, column=None):
    """Closed-form regularizer derivatives for one MFSI context entry.

    Only contexts with a nonzero value in feature column ``l_star`` are
    touched, so the cost is O(k * nnz(column)).
    """
    rows, vals = column if column is not None else x_feat.columns()[l_star]
    if len(rows) == 0:
        return GradPair(0.0, 0.0)
    r1 = 2.0 * float(j_i[:, f_star] @ (phi[rows].T @ vals))
    r2 = 2.0 * float(j_i[f_star, f_star]) * float(vals @ vals)
    return GradPair(r1, r2)


def phi_sync(phi, x_feat, l_star, f_star, w_old, w_new, column=None):
    """Incremental Phi update after one embedding change, in place."""
    rows, vals = column if column is not None else x_feat.columns()[l_star]
    if len(rows):
        phi[rows, f_star] += vals * (w_new - w_old)
    return phi


def _fm_supports(param_kind, indices, columns, table, emb, slot, n_rows):
    """Sparse support (rows, {f: dphi_f/dtheta}) of one FM coordinate.

    ``slot`` is the bias slot of the side being updated (k for contexts,
    k+1 for items); ``emb`` that side's embedding matrix.
    """
    if param_kind == "bias":
        rows = np.arange(n_rows, dtype=np.int64)
        return rows, {slot: np.ones(n_rows)}
    if param_kind == "linear":
        rows, vals = columns[indices]
        return rows, {slot: vals}
    if param_kind == "embedding":
        l_star, f_star = indices
        rows, vals = columns[l_star]
        g_slot = vals * (table[rows, f_star] - vals * emb[l_star, f_star])
        return rows, {f_star: vals, slot: g_slot}
    raise ValueError(f"unknown FM parameter kind {param_kind!r}")


def fm_reg_grads(param_kind, indices, x_feat, phi, j_i, params):
    """Regularizer derivatives for a context-side FM parameter.

    Supports are constant-size: the bias and linear terms live only in the
    context bias slot, an embedding entry additionally in its own dimension.
    """
    k = params.k
    columns = x_feat.columns()
    rows, d_first = _fm_supports(
        param_kind, indices, columns, phi, params.W, k, x_feat.num_rows
    )
    if len(rows) == 0:
        return GradPair(0.0, 0.0)
    return reg_grads_generic(rows, d_first, phi, j_i)


def fm_reg_grads_item(param_kind, indices, z_feat, psi, j_c, params):
    """Item-side counterpart of fm_reg_grads (bias slot k+1, no global bias)."""
    if param_kind == "bias":
        raise ValueError("the global bias is a context-side parameter")
    k = params.k
    columns = z_feat.columns()
    rows, d_first = _fm_supports(
        param_kind, indices, columns, psi, params.H, k + 1, z_feat.num_rows
    )
    if len(rows) == 0:
        return GradPair(0.0, 0.0)
    return reg_grads_generic(rows, d_first, psi, j_c)


class _SideCache:
    """Per-feature-column view of the positives for one side."""

    def __init__(self, feat, ent_of_s, n_entities, n_pos):
        self.columns = feat.columns()
        indptr, order = adjacency(ent_of_s, n_entities) if n_pos else (
            np.zeros(n_entities + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        pos_of_ent = [order[indptr[e]:indptr[e + 1]] for e in range(n_entities)]
        self.col_sel = []
        self.col_val_s = []
        self.col_rowpos_s = []
        for rows, vals in self.columns:
            sel_parts, val_parts, rp_parts = [], [], []
            for j, (r, v) in enumerate(zip(rows, vals)):
                ps = pos_of_ent[r]
                if len(ps):
                    sel_parts.append(ps)
                    val_parts.append(np.full(len(ps), v))
                    rp_parts.append(np.full(len(ps), j, dtype=np.int64))
            if sel_parts:
                self.col_sel.append(np.concatenate(sel_parts))
                self.col_val_s.append(np.concatenate(val_parts))
                self.col_rowpos_s.append(np.concatenate(rp_parts))
            else:
                self.col_sel.append(np.zeros(0, dtype=np.int64))
                self.col_val_s.append(np.zeros(0))
                self.col_rowpos_s.append(np.zeros(0, dtype=np.int64))


def _coordinate_update(theta, lam, rows, d_first, d1_s, sel, s_a, e, table,
                       j_other, config):
    """Newton update of one coordinate; returns (new_theta, delta, skipped)."""
    l1 = 2.0 * lam * theta + 2.0 * float(np.sum(s_a[sel] * e[sel] * d1_s))
    l2 = 2.0 * lam + 2.0 * float(np.sum(s_a[sel] * d1_s * d1_s))
    if len(rows):
        r = reg_grads_generic(rows, d_first, table, j_other)
    else:
        r = GradPair(0.0, 0.0)
    new_theta, skipped = newton_step(
        theta, GradPair(l1, l2), r, config.alpha0, config.eta,
        config.epsilon_guard,
    )
    return new_theta, new_theta - theta, skipped


def _apply_update(delta, rows, d_first, d1_s, sel, e, table):
    for f, vals in d_first.items():
        table[rows, f] += vals * delta
    e[sel] += delta * d1_s


def train_feature_model(kind, dataset, x_feat, z_feat, config, init=None,
                        freeze=()):
    """Implicit CD for MFSI or FM (``kind`` in {"mfsi", "fm"}).

    Sweeps are dimension-major over feature indices, contexts before items;
    the FM additionally sweeps the bias and linear weights first each epoch.
    ``freeze`` may contain "bias_linear" to pin b, w_tilde and h_tilde.

    Returns (params, history).
    """
    if kind not in ("mfsi", "fm"):
        raise ValueError(f"unknown feature model kind {kind!r}")
    if x_feat.num_rows != dataset.num_contexts:
        raise ValueError("context feature matrix rows must match |C|")
    if z_feat.num_rows != dataset.num_items:
        raise ValueError("item feature matrix rows must match |I|")
    if x_feat.num_features != z_feat.num_features:
        raise ValueError("context and item features must share one space p")
    p = x_feat.num_features
    if init is not None:
        params = init.copy()
    elif kind == "mfsi":
        params = init_mfsi_params(p, config)
    else:
        params = init_fm_params(p, config)

    rescaled = rescale_observations(dataset.positives, config.alpha0)
    n_pos = len(rescaled)
    s_ctx = np.array([o.context_id for o in rescaled], dtype=np.int64)
    s_itm = np.array([o.item_id for o in rescaled], dtype=np.int64)
    s_y = np.array([o.y for o in rescaled], dtype=np.float64)
    s_a = np.array([o.alpha for o in rescaled], dtype=np.float64)
    ctx_cache = _SideCache(x_feat, s_ctx, dataset.num_contexts, n_pos)
    itm_cache = _SideCache(z_feat, s_itm, dataset.num_items, n_pos)
    all_s = np.arange(n_pos, dtype=np.int64)

    k = config.k
    represent = mfsi_representation if kind == "mfsi" else fm_representation
    slot_ctx, slot_itm = k, k + 1  # FM bias slots
    lam = config.lam
    tune_bias_linear = kind == "fm" and "bias_linear" not in freeze

    def sweep_ctx_embedding(f_star, state, e, j_i):
        skipped = 0
        for l_star in range(p):
            rows, vals = ctx_cache.columns[l_star]
            sel = ctx_cache.col_sel[l_star]
            xv_s = ctx_cache.col_val_s[l_star]
            if kind == "mfsi":
                d_first = {f_star: vals}
                d1_s = xv_s * state.psi[s_itm[sel], f_star]
            else:
                g_slot = vals * (state.phi[rows, f_star]
                                 - vals * params.W[l_star, f_star])
                d_first = {f_star: vals, slot_ctx: g_slot}
                d1_s = (xv_s * state.psi[s_itm[sel], f_star]
                        + g_slot[ctx_cache.col_rowpos_s[l_star]])
            theta, delta, skip = _coordinate_update(
                params.W[l_star, f_star], lam, rows, d_first, d1_s, sel,
                s_a, e, state.phi, j_i, config)
            if skip:
                skipped += 1
            else:
                params.W[l_star, f_star] = theta
                _apply_update(delta, rows, d_first, d1_s, sel, e, state.phi)
        return skipped

    def sweep_itm_embedding(f_star, state, e, j_c):
        skipped = 0
        for l_star in range(p):
            rows, vals = itm_cache.columns[l_star]
            sel = itm_cache.col_sel[l_star]
            zv_s = itm_cache.col_val_s[l_star]
            if kind == "mfsi":
                d_first = {f_star: vals}
                d1_s = zv_s * state.phi[s_ctx[sel], f_star]
            else:
                g_slot = vals * (state.psi[rows, f_star]
                                 - vals * params.H[l_star, f_star])
                d_first = {f_star: vals, slot_itm: g_slot}
                d1_s = (zv_s * state.phi[s_ctx[sel], f_star]
                        + g_slot[itm_cache.col_rowpos_s[l_star]])
            theta, delta, skip = _coordinate_update(
                params.H[l_star, f_star], lam, rows, d_first, d1_s, sel,
                s_a, e, state.psi, j_c, config)
            if skip:
                skipped += 1
            else:
                params.H[l_star, f_star] = theta
                _apply_update(delta, rows, d_first, d1_s, sel, e, state.psi)
        return skipped

    history = []
    prev = None
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        skipped = 0
        state = represent(params, x_feat, z_feat)
        e = np.einsum("ij,ij->i", state.phi[s_ctx], state.psi[s_itm]) - s_y

        if tune_bias_linear:
            j_i = compute_gram(state.psi)
            # global bias: support is the bias slot over every context
            rows = np.arange(dataset.num_contexts, dtype=np.int64)
            d_first = {slot_ctx: np.ones(dataset.num_contexts)}
            d1_s = np.ones(n_pos)
            theta, delta, skip = _coordinate_update(
                params.b, lam, rows, d_first, d1_s, all_s, s_a, e,
                state.phi, j_i, config)
            if skip:
                skipped += 1
            else:
                params.b = theta
                _apply_update(delta, rows, d_first, d1_s, all_s, e, state.phi)
            for l_star in range(p):
                rows, vals = ctx_cache.columns[l_star]
                sel = ctx_cache.col_sel[l_star]
                d_first = {slot_ctx: vals}
                d1_s = ctx_cache.col_val_s[l_star]
                theta, delta, skip = _coordinate_update(
                    params.w_tilde[l_star], lam, rows, d_first, d1_s, sel,
                    s_a, e, state.phi, j_i, config)
                if skip:
                    skipped += 1
                else:
                    params.w_tilde[l_star] = theta
                    _apply_update(delta, rows, d_first, d1_s, sel, e, state.phi)
            j_c = compute_gram(state.phi)
            for l_star in range(p):
                rows, vals = itm_cache.columns[l_star]
                sel = itm_cache.col_sel[l_star]
                d_first = {slot_itm: vals}
                d1_s = itm_cache.col_val_s[l_star]
                theta, delta, skip = _coordinate_update(
                    params.h_tilde[l_star], lam, rows, d_first, d1_s, sel,
                    s_a, e, state.psi, j_c, config)
                if skip:
                    skipped += 1
                else:
                    params.h_tilde[l_star] = theta
                    _apply_update(delta, rows, d_first, d1_s, sel, e, state.psi)

        for f_star in range(k):
            j_i = compute_gram(state.psi)
            skipped += sweep_ctx_embedding(f_star, state, e, j_i)
            j_c = compute_gram(state.phi)
            skipped += sweep_itm_embedding(f_star, state, e, j_c)

        state = represent(params, x_feat, z_feat)
        preds = np.einsum("ij,ij->i", state.phi[s_ctx], state.psi[s_itm])
        obj = float(np.sum(s_a * (preds - s_y) ** 2))
        obj += lam * (float(np.sum(params.W**2)) + float(np.sum(params.H**2)))
        if kind == "fm":
            obj += lam * (params.b**2 + float(np.sum(params.w_tilde**2))
                          + float(np.sum(params.h_tilde**2)))
        obj += config.alpha0 * reg_value(compute_gram(state.phi),
                                         compute_gram(state.psi))
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
