"""Brute-force reference implementations used by the test suite.

Everything here favors directness over speed: predictions come from the
model definitions (explicit pairwise sums for the FM, factor products for
the tensor models), the regularizer enumerates every context-item cell, and
the naive coordinate descent differentiates the prediction matrix by central
differences instead of reusing any closed-form gradient from the trainers.
Cell enumeration is capped at 10**6 cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContextIndex

CELL_CAP = 10**6

# Parameter kinds per model family, in trainer sweep order. Tests assert the
# oracle covers every kind, so a new family cannot silently skip coverage.
PARAM_KINDS = {
    "mf": ("w", "h"),
    "mfsi": ("w", "h"),
    "fm": ("b", "w_tilde", "h_tilde", "w", "h"),
    "parafac": ("u", "v", "w"),
    "tucker": ("u", "v", "b", "w"),
}


@dataclass
class ModelInstance:
    """A model family, its parameters and the data it scores."""

    kind: str
    params: object
    dataset: object
    x_feat: object = None
    z_feat: object = None
    dense_context: bool = False

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in ("mfsi", "fm") and (self.x_feat is None or self.z_feat is None):
            raise ValueError(f"{self.kind} needs context and item features")
        self._index = None
        if self.kind in ("parafac", "tucker"):
            self._index = ContextIndex(self.dataset.context_tuples,
                                       self.dataset.mode_sizes)

    @property
    def index(self):
        return self._index

    def num_context_rows(self):
        """Rows of the prediction matrix: grid rows when dense, else |C|."""
        if self.kind in ("parafac", "tucker") and self.dense_context:
            return self._index.n1 * self._index.n2
        return self.dataset.num_contexts

    def positive_rows(self):
        """Prediction-matrix row of each positive, dataset order."""
        ctx = np.array([o.context_id for o in self.dataset.positives],
                       dtype=np.int64)
        if self.kind in ("parafac", "tucker") and self.dense_context:
            return self._index.c1[ctx] * self._index.n2 + self._index.c2[ctx]
        return ctx


def _fm_score(params, x_row, z_row):
    """FM prediction by explicit enumeration of every pairwise interaction."""
    s = params.b
    for l, xv in x_row:
        s += xv * params.w_tilde[l]
    for m, zv in z_row:
        s += zv * params.h_tilde[m]
    for a in range(len(x_row)):
        la, xa = x_row[a]
        for b in range(a + 1, len(x_row)):
            lb, xb = x_row[b]
            s += xa * xb * float(params.W[la] @ params.W[lb])
    for a in range(len(z_row)):
        ma, za = z_row[a]
        for b in range(a + 1, len(z_row)):
            mb, zb = z_row[b]
            s += za * zb * float(params.H[ma] @ params.H[mb])
    for l, xv in x_row:
        for m, zv in z_row:
            s += xv * zv * float(params.W[l] @ params.H[m])
    return s


def _tensor_context_rows(instance):
    """(c1, c2) per prediction-matrix row; the full grid when dense."""
    idx = instance.index
    if instance.dense_context:
        grid = [(a, b) for a in range(idx.n1) for b in range(idx.n2)]
        c1 = np.array([g[0] for g in grid], dtype=np.int64)
        c2 = np.array([g[1] for g in grid], dtype=np.int64)
        return c1, c2
    return idx.c1, idx.c2


def predict_full(instance):
    """Dense prediction matrix over every context row and item."""
    p = instance.params
    kind = instance.kind
    if kind == "mf":
        return p.W @ p.H.T
    if kind == "mfsi":
        return np.asarray(instance.x_feat.to_csr() @ p.W) @ (
            np.asarray(instance.z_feat.to_csr() @ p.H)).T
    if kind == "fm":
        x_rows = instance.x_feat.rows
        z_rows = instance.z_feat.rows
        out = np.empty((len(x_rows), len(z_rows)))
        for c, x_row in enumerate(x_rows):
            for i, z_row in enumerate(z_rows):
                out[c, i] = _fm_score(p, x_row, z_row)
        return out
    c1, c2 = _tensor_context_rows(instance)
    if kind == "parafac":
        return np.einsum("rf,rf,if->ri", p.U[c1], p.V[c2], p.W)
    return np.einsum("ra,rb,abf,if->ri", p.U[c1], p.V[c2], p.B, p.W)


def _check_cap(instance):
    cells = instance.num_context_rows() * instance.dataset.num_items
    if cells > CELL_CAP:
        raise ValueError(
            f"brute-force enumeration of {cells} cells exceeds cap {CELL_CAP}"
        )


def naive_regularizer(instance):
    """Sum of squared predictions over every cell, by enumeration."""
    _check_cap(instance)
    pred = predict_full(instance)
    return float(np.sum(pred * pred))


def cell_matrices(instance):
    """Dense confidence and score matrices (A, Y) over every cell."""
    _check_cap(instance)
    n_rows = instance.num_context_rows()
    n_items = instance.dataset.num_items
    a = np.full((n_rows, n_items), instance.dataset.alpha0)
    y = np.zeros((n_rows, n_items))
    rows = instance.positive_rows()
    for obs, r in zip(instance.dataset.positives, rows):
        a[r, obs.item_id] = obs.alpha
        y[r, obs.item_id] = obs.y
    return a, y


def params_sq_norm(instance):
    p = instance.params
    if instance.kind == "mf" or instance.kind == "mfsi":
        return float(np.sum(p.W**2) + np.sum(p.H**2))
    if instance.kind == "fm":
        return float(p.b**2 + np.sum(p.w_tilde**2) + np.sum(p.h_tilde**2)
                     + np.sum(p.W**2) + np.sum(p.H**2))
    sq = float(np.sum(p.U**2) + np.sum(p.V**2) + np.sum(p.W**2))
    if instance.kind == "tucker":
        sq += float(np.sum(p.B**2))
    return sq


def naive_implicit_objective(instance, lam=0.0):
    """Weighted squared loss over every cell plus L2, by enumeration."""
    a, y = cell_matrices(instance)
    pred = predict_full(instance)
    return float(np.sum(a * (pred - y) ** 2)) + lam * params_sq_norm(instance)


def rescaled_objective(instance, alpha0, lam=0.0):
    """Explicit loss on the rescaled positives + L2 + alpha0 * regularizer.

    Differs from ``naive_implicit_objective`` only by a parameter-free
    constant, which the equivalence test checks through matching gradients.
    """
    pred = predict_full(instance)
    rows = instance.positive_rows()
    loss = 0.0
    for obs, r in zip(instance.dataset.positives, rows):
        a_r = obs.alpha - alpha0
        y_r = obs.alpha / a_r * obs.y
        loss += a_r * (pred[r, obs.item_id] - y_r) ** 2
    return (loss + lam * params_sq_norm(instance)
            + alpha0 * naive_regularizer(instance))


def get_param(instance, name, idx):
    p = instance.params
    if name == "b" and instance.kind == "fm":
        return p.b
    arr = getattr(p, {"w": "W", "h": "H", "u": "U", "v": "V",
                      "b": "B", "w_tilde": "w_tilde", "h_tilde": "h_tilde"}[name])
    return float(arr[idx])


def set_param(instance, name, idx, value):
    p = instance.params
    if name == "b" and instance.kind == "fm":
        p.b = float(value)
        return
    arr = getattr(p, {"w": "W", "h": "H", "u": "U", "v": "V",
                      "b": "B", "w_tilde": "w_tilde", "h_tilde": "h_tilde"}[name])
    arr[idx] = value


def coordinate_order(instance):
    """Coordinates in the exact order the matching trainer sweeps them."""
    kind = instance.kind
    p = instance.params
    if kind == "mf":
        n_ctx, k = p.W.shape
        n_itm = p.H.shape[0]
        for f in range(k):
            for c in range(n_ctx):
                yield "w", (c, f)
            for i in range(n_itm):
                yield "h", (i, f)
    elif kind == "mfsi":
        n_feat, k = p.W.shape
        for f in range(k):
            for l in range(n_feat):
                yield "w", (l, f)
            for l in range(n_feat):
                yield "h", (l, f)
    elif kind == "fm":
        n_feat, k = p.W.shape
        yield "b", ()
        for l in range(n_feat):
            yield "w_tilde", (l,)
        for l in range(n_feat):
            yield "h_tilde", (l,)
        for f in range(k):
            for l in range(n_feat):
                yield "w", (l, f)
            for l in range(n_feat):
                yield "h", (l, f)
    elif kind == "parafac":
        k = p.k
        for f in range(k):
            for a in range(p.U.shape[0]):
                yield "u", (a, f)
        for f in range(k):
            for b in range(p.V.shape[0]):
                yield "v", (b, f)
        for f in range(k):
            for i in range(p.W.shape[0]):
                yield "w", (i, f)
    else:
        k1, k2, k3 = p.dims
        for f1 in range(k1):
            for a in range(p.U.shape[0]):
                yield "u", (a, f1)
        for f2 in range(k2):
            for b in range(p.V.shape[0]):
                yield "v", (b, f2)
        for f1 in range(k1):
            for f2 in range(k2):
                for f3 in range(k3):
                    yield "b", (f1, f2, f3)
        for f3 in range(k3):
            for i in range(p.W.shape[0]):
                yield "w", (i, f3)


def prediction_derivs(instance, name, idx, h=0.25):
    """Central-difference (dP/dtheta, d2P/dtheta2) matrices.

    Every shipped model predicts multilinearly, so the central difference is
    exact for any step; h = 0.25 keeps cancellation error tiny. The second
    difference is carried anyway rather than assumed zero.
    """
    theta = get_param(instance, name, idx)
    set_param(instance, name, idx, theta + h)
    p_plus = predict_full(instance)
    set_param(instance, name, idx, theta - h)
    p_minus = predict_full(instance)
    set_param(instance, name, idx, theta)
    p_mid = predict_full(instance)
    g = (p_plus - p_minus) / (2.0 * h)
    g2 = (p_plus - 2.0 * p_mid + p_minus) / (h * h)
    return g, g2


def naive_cd_epoch(instance, config):
    """One coordinate-descent epoch on the original all-cells objective.

    Each coordinate gets a damped Newton step computed from dense cell
    matrices and finite-difference prediction derivatives, then the
    prediction matrix is recomputed from scratch. Matching trajectories with
    the trainers (which work on the rescaled form) exercises both the
    closed-form gradients and the objective equivalence at once.

    Returns the number of guard-skipped coordinates.
    """
    a, y = cell_matrices(instance)
    lam = config.lam
    skipped = 0
    for name, idx in coordinate_order(instance):
        pred = predict_full(instance)
        g, g2 = prediction_derivs(instance, name, idx)
        theta = get_param(instance, name, idx)
        err = pred - y
        l1 = 2.0 * float(np.sum(a * err * g)) + 2.0 * lam * theta
        l2 = 2.0 * float(np.sum(a * (err * g2 + g * g))) + 2.0 * lam
        if abs(l2) < config.epsilon_guard:
            skipped += 1
            continue
        set_param(instance, name, idx, theta - config.eta * l1 / l2)
    return skipped


def central_difference(fn, x, h=1e-5):
    """(f'(x), f''(x)) estimates by central differences."""
    f_plus = fn(x + h)
    f_minus = fn(x - h)
    f_mid = fn(x)
    return (f_plus - f_minus) / (2.0 * h), (f_plus - 2.0 * f_mid + f_minus) / (h * h)


def regularizer_field(instance, name, idx):
    """The naive regularizer as a scalar function of one coordinate."""
    theta0 = get_param(instance, name, idx)

    def fn(x):
        set_param(instance, name, idx, x)
        val = naive_regularizer(instance)
        set_param(instance, name, idx, theta0)
        return val

    return fn


def objective_field(instance, name, idx, objective):
    """Any instance objective as a scalar function of one coordinate."""
    theta0 = get_param(instance, name, idx)

    def fn(x):
        set_param(instance, name, idx, x)
        val = objective(instance)
        set_param(instance, name, idx, theta0)
        return val

    return fn
