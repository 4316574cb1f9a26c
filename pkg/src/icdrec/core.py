"""Framework kernel: separable representations, Gram matrices and updates.

A model is separable when its score is a dot product of a context-only value
table Phi and an item-only value table Psi. The kernel computes the implicit
regularizer (sum of squared predictions over every context-item cell) and its
coordinate derivatives from the two small Gram matrices of Phi and Psi,
without ever enumerating the cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass
class SeparableState:
    """Cached Phi (|C| x k_sep) and Psi (|I| x k_sep) value tables."""

    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.phi = np.ascontiguousarray(self.phi, dtype=np.float64)
        self.psi = np.ascontiguousarray(self.psi, dtype=np.float64)
        if self.phi.ndim != 2 or self.psi.ndim != 2:
            raise ValueError("phi and psi must be 2-d tables")
        if self.phi.shape[1] != self.psi.shape[1]:
            raise ValueError(
                f"phi/psi width mismatch: {self.phi.shape[1]} vs {self.psi.shape[1]}"
            )

    @property
    def k_sep(self):
        return self.phi.shape[1]

    def predict(self, c, i):
        return float(self.phi[c] @ self.psi[i])


class GradPair(NamedTuple):
    """First and second derivative of a loss term w.r.t. one coordinate."""

    first: float
    second: float


@dataclass
class SolverConfig:
    """Shared trainer configuration.

    ``lam`` is the L2 constant applied per parameter group; ``eta`` the
    Newton step size (1.0 is safe for the multilinear models shipped here);
    ``epsilon_guard`` the curvature floor below which an update is skipped.
    """

    k: int = 8
    k1: int | None = None
    k2: int | None = None
    k3: int | None = None
    alpha0: float = 1.0
    eta: float = 1.0
    lam: float = 0.0
    sigma: float = 0.1
    seed: int = 0
    max_epochs: int = 20
    tol: float = 1e-9
    epsilon_guard: float = 1e-12
    dense_context: bool = False

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.epsilon_guard <= 0:
            raise ValueError(f"epsilon_guard must be > 0, got {self.epsilon_guard}")
        if self.k1 is None:
            self.k1 = self.k
        if self.k2 is None:
            self.k2 = self.k
        if self.k3 is None:
            self.k3 = self.k


def compute_gram(rows):
    """Gram matrix J(f, f') = sum over rows of row[f] * row[f'].

    The upper triangle is computed and mirrored, so the result is exactly
    symmetric. An empty table yields the zero matrix.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected an n x k table")
    g = rows.T @ rows
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


def reg_value(j_c, j_i):
    """Implicit regularizer value sum_f sum_f' J_C(f,f') * J_I(f,f')."""
    j_c = np.asarray(j_c, dtype=np.float64)
    j_i = np.asarray(j_i, dtype=np.float64)
    if j_c.shape != j_i.shape:
        raise ValueError(f"Gram shape mismatch: {j_c.shape} vs {j_i.shape}")
    return float(np.sum(j_c * j_i))


def reg_grads_generic(ctx_idx, d_first, phi, j_other, d_second=None):
    """Regularizer derivatives for one coordinate of any separable model.

    Args:
        ctx_idx: indices of the contexts (rows of ``phi``) with nonzero
            derivative, i.e. the sparse support of the coordinate.
        d_first: mapping {f: dphi_f/dtheta values over ctx_idx} listing only
            the separable dimensions with nonzero first derivative.
        phi: current context value table (the item-side call passes psi).
        j_other: Gram matrix of the opposite side.
        d_second: same mapping for nonzero second derivatives (empty for
            every multilinear model).

    Returns:
        GradPair (R', R'').
    """
    ctx_idx = np.asarray(ctx_idx, dtype=np.int64)
    sub = phi[ctx_idx]
    r1 = 0.0
    for f, vals in d_first.items():
        r1 += float(j_other[:, f] @ (sub.T @ np.asarray(vals, dtype=np.float64)))
    r2 = 0.0
    items = [(f, np.asarray(v, dtype=np.float64)) for f, v in d_first.items()]
    for f, v in items:
        for fp, vp in items:
            r2 += float(j_other[f, fp]) * float(v @ vp)
    if d_second:
        for f, vals in d_second.items():
            r2 += float(j_other[:, f] @ (sub.T @ np.asarray(vals, dtype=np.float64)))
    return GradPair(2.0 * r1, 2.0 * r2)


def explicit_grads(theta_value, contributions, lam):
    """Weighted squared-loss derivatives over the positives touching theta.

    ``contributions`` iterates (y_hat, y, alpha, y_hat', y_hat'') for each
    rescaled positive whose prediction depends on the coordinate.
    """
    l1 = 0.0
    l2 = 0.0
    for y_hat, y, alpha, d1, d2 in contributions:
        err = y_hat - y
        l1 += alpha * err * d1
        l2 += alpha * (err * d2 + d1 * d1)
    return GradPair(2.0 * l1 + 2.0 * lam * theta_value, 2.0 * l2 + 2.0 * lam)


def newton_step(theta, l_pair, r_pair, alpha0, eta, epsilon_guard):
    """One damped Newton coordinate update; returns (new_theta, skipped).

    Degenerate curvature (|L'' + alpha0 R''| below the guard) leaves the
    coordinate unchanged and flags the skip instead of raising.
    """
    vals = (theta, l_pair.first, l_pair.second, r_pair.first, r_pair.second)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite Newton inputs: {vals}")
    if not 0 < eta <= 1:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    denom = l_pair.second + alpha0 * r_pair.second
    if abs(denom) < epsilon_guard:
        return theta, True
    numer = l_pair.first + alpha0 * r_pair.first
    return theta - eta * numer / denom, False
