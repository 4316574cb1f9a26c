"""Matrix factorization trained by implicit coordinate descent.

MF is trivially separable (Phi = W, Psi = H), so the regularizer derivatives
collapse to one Gram column per embedding dimension. The epoch sweep is a
compiled kernel: dimension-major, contexts before items, which is also the
reproducibility contract for this trainer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import SeparableState, compute_gram, reg_value, GradPair
from .data import rescale_observations


@dataclass
class MFParams:
    """Context embeddings W (|C| x k) and item embeddings H (|I| x k)."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.H = np.ascontiguousarray(self.H, dtype=np.float64)
        if self.W.ndim != 2 or self.H.ndim != 2 or self.W.shape[1] != self.H.shape[1]:
            raise ValueError("W and H must be 2-d with matching width")

    @property
    def k(self):
        return self.W.shape[1]

    def predict_matrix(self):
        return self.W @ self.H.T

    def score_context(self, c):
        return self.H @ self.W[c]

    def copy(self):
        return MFParams(self.W.copy(), self.H.copy())


def init_mf_params(dataset, config):
    """Seeded N(0, sigma) initialization, shared with the oracle tests."""
    rng = np.random.default_rng(config.seed)
    W = rng.normal(0.0, config.sigma, (dataset.num_contexts, config.k))
    H = rng.normal(0.0, config.sigma, (dataset.num_items, config.k))
    return MFParams(W, H)


def mf_representation(params):
    """MF separable tables: Phi = W, Psi = H."""
    return SeparableState(params.W.copy(), params.H.copy())


def mf_reg_grads(c_star, f_star, params, j_i):
    """Closed-form regularizer derivatives for one W entry, O(k)."""
    r1 = 2.0 * float(j_i[:, f_star] @ params.W[c_star])
    r2 = 2.0 * float(j_i[f_star, f_star])
    return GradPair(r1, r2)


@njit(cache=True)
def _mf_epoch(W, H, s_ctx, s_itm, s_y, s_a, alpha0, eta, lam,
              guard):  # pragma: no cover - compiled
    """One epoch, dimension-major with contexts before items.

    Within a dimension the row updates of one side are mutually independent:
    each positive touches exactly one row and the opposite-side Gram column
    is frozen during the sweep. Each sweep therefore runs as streaming
    passes over the positives (gather + accumulate, solve every row, sync
    residuals), which is bit-identical to a strictly sequential sweep
    because the per-row accumulation order is the file order either way.
    The active embedding column is copied out per sweep so the random
    per-positive lookups stay inside one small contiguous buffer.
    """
    n_ctx, k = W.shape
    n_itm = H.shape[0]
    n_pos = s_ctx.shape[0]
    n_max = max(n_ctx, n_itm)
    skipped = 0
    jcol = np.empty(k)
    col = np.empty(n_max)
    l1 = np.empty(n_max)
    l2 = np.empty(n_max)
    delta_c = np.empty(n_ctx)
    delta_i = np.empty(n_itm)
    gath_h = np.empty(n_pos)
    gath_w = np.empty(n_pos)
    e = np.empty(n_pos)
    # residual cache over the positives, rebuilt every epoch
    for s in range(n_pos):
        acc = 0.0
        for f in range(k):
            acc += W[s_ctx[s], f] * H[s_itm[s], f]
        e[s] = acc - s_y[s]
    for fs in range(k):
        # context sweep: J_I(., fs) from the items, frozen for this sweep
        for f in range(k):
            jcol[f] = 0.0
        for i in range(n_itm):
            hif = H[i, fs]
            for f in range(k):
                jcol[f] += H[i, f] * hif
        for i in range(n_itm):
            col[i] = H[i, fs]
        for c in range(n_ctx):
            l1[c] = 2.0 * lam * W[c, fs]
            l2[c] = 2.0 * lam
        if fs == 0:
            for s in range(n_pos):
                hv = col[s_itm[s]]
                gath_h[s] = hv
                l1[s_ctx[s]] += 2.0 * s_a[s] * e[s] * hv
                l2[s_ctx[s]] += 2.0 * s_a[s] * hv * hv
        else:
            # catch up the residual sync of the previous item sweep, whose
            # values this sweep is the first consumer of
            for s in range(n_pos):
                e[s] += delta_i[s_itm[s]] * gath_w[s]
                hv = col[s_itm[s]]
                gath_h[s] = hv
                l1[s_ctx[s]] += 2.0 * s_a[s] * e[s] * hv
                l2[s_ctx[s]] += 2.0 * s_a[s] * hv * hv
        r2 = 2.0 * jcol[fs]
        for c in range(n_ctx):
            denom = l2[c] + alpha0 * r2
            if abs(denom) < guard:
                skipped += 1
                delta_c[c] = 0.0
            else:
                r1 = 0.0
                for f in range(k):
                    r1 += jcol[f] * W[c, f]
                delta_c[c] = -eta * (l1[c] + alpha0 * 2.0 * r1) / denom
                W[c, fs] += delta_c[c]
        # item sweep: J_C(., fs) from the just-updated contexts
        for f in range(k):
            jcol[f] = 0.0
        for c in range(n_ctx):
            wcf = W[c, fs]
            for f in range(k):
                jcol[f] += W[c, f] * wcf
        for c in range(n_ctx):
            col[c] = W[c, fs]
        for i in range(n_itm):
            l1[i] = 2.0 * lam * H[i, fs]
            l2[i] = 2.0 * lam
        for s in range(n_pos):
            e[s] += delta_c[s_ctx[s]] * gath_h[s]
            wv = col[s_ctx[s]]
            gath_w[s] = wv
            l1[s_itm[s]] += 2.0 * s_a[s] * e[s] * wv
            l2[s_itm[s]] += 2.0 * s_a[s] * wv * wv
        r2 = 2.0 * jcol[fs]
        for i in range(n_itm):
            denom = l2[i] + alpha0 * r2
            if abs(denom) < guard:
                skipped += 1
                delta_i[i] = 0.0
            else:
                r1 = 0.0
                for f in range(k):
                    r1 += jcol[f] * H[i, f]
                delta_i[i] = -eta * (l1[i] + alpha0 * 2.0 * r1) / denom
                H[i, fs] += delta_i[i]
        # the final item-sweep residual sync has no consumer: the epoch ends
        # and the next one rebuilds the cache, so it is skipped
    return skipped


def adjacency(ids, n):
    """CSR-style (indptr, positions) grouping positive indices by entity id.

    Positions within a group keep the dataset order, so sweeps are
    deterministic.
    """
    order = np.argsort(ids, kind="stable").astype(np.int64)
    counts = np.bincount(ids, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, order


def mf_objective(params, s_ctx, s_itm, s_y, s_a, lam, alpha0):
    """Rescaled explicit loss + alpha0 * regularizer, via the Gram identity."""
    preds = np.einsum("ij,ij->i", params.W[s_ctx], params.H[s_itm])
    loss = float(np.sum(s_a * (preds - s_y) ** 2))
    loss += lam * (float(np.sum(params.W**2)) + float(np.sum(params.H**2)))
    reg = reg_value(compute_gram(params.W), compute_gram(params.H))
    return loss + alpha0 * reg


def train_mf(dataset, config, init=None):
    """Implicit CD for MF.

    Returns (params, history) where history has one record per epoch with
    the objective (explicit loss on the rescaled positives plus
    alpha0 * implicit regularizer), wall time and skipped-update count.
    """
    if config.k < 1:
        raise ValueError("k must be >= 1")
    params = init.copy() if init is not None else init_mf_params(dataset, config)
    rescaled = rescale_observations(dataset.positives, config.alpha0)
    s_ctx = np.array([o.context_id for o in rescaled], dtype=np.int64)
    s_itm = np.array([o.item_id for o in rescaled], dtype=np.int64)
    s_y = np.array([o.y for o in rescaled], dtype=np.float64)
    s_a = np.array([o.alpha for o in rescaled], dtype=np.float64)
    history = []
    prev = None
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        skipped = _mf_epoch(
            params.W, params.H, s_ctx, s_itm, s_y, s_a, config.alpha0,
            config.eta, config.lam, config.epsilon_guard,
        )
        obj = mf_objective(params, s_ctx, s_itm, s_y, s_a, config.lam, config.alpha0)
        history.append({
            "epoch": epoch,
            "objective": obj,
            "seconds": time.perf_counter() - t0,
            "skipped": int(skipped),
        })
        if prev is not None and abs(prev - obj) <= config.tol * max(1.0, abs(prev)):
            break
        prev = obj
    return params, history
