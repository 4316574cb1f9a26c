"""Cost comparison: Gram-based CD versus cell-enumerating CD on MF.

Both arms run as compiled kernels over the same synthetic data, so the
timing difference reflects the per-epoch arithmetic (linear in the positives
for the Gram-based trainer, quadratic in the grid for the naive one) rather
than interpreter overhead. Flop counts come from closed-form counters that
mirror the kernel loops.
"""

from __future__ import annotations

import time

import numpy as np
from numba import njit

from .core import SolverConfig
from .data import ImplicitDataset, Observation, rescale_observations
from .mf import _mf_epoch, adjacency, init_mf_params
from .oracle import CELL_CAP

CSV_HEADER = "n,k,family,arm,epoch_seconds,flop_count"


def synthetic_dataset(n, positives_per_context=10, seed=0):
    """|C| = |I| = n with a fixed number of distinct positives per context.

    All scores are 1 with confidence 2 against an implicit alpha0 of 1, the
    regime where every cell contributes equally after rescaling.
    """
    if positives_per_context > n:
        raise ValueError("cannot draw more distinct items than exist")
    rng = np.random.default_rng(seed)
    positives = []
    for c in range(n):
        for i in rng.choice(n, size=positives_per_context, replace=False):
            positives.append(Observation(c, int(i), 1.0, 2.0))
    return ImplicitDataset(num_contexts=n, num_items=n, positives=positives,
                           alpha0=1.0)


@njit(cache=True)
def _naive_mf_epoch(W, H, A, E, eta, lam, guard):  # pragma: no cover - compiled
    """Conventional CD over every cell, with a cached residual matrix.

    Within one dimension the row updates of a side are mutually independent
    (a cell's residual is read only by its own row and column), so the item
    sweep accumulates over rows of E instead of striding down its columns —
    same arithmetic and results, cache-friendly access.
    """
    n_ctx, k = W.shape
    n_itm = H.shape[0]
    skipped = 0
    l1 = np.zeros(n_itm)
    l2 = np.zeros(n_itm)
    delta = np.zeros(n_itm)
    for f in range(k):
        for c in range(n_ctx):
            g1 = 2.0 * lam * W[c, f]
            g2 = 2.0 * lam
            for i in range(n_itm):
                g1 += 2.0 * A[c, i] * E[c, i] * H[i, f]
                g2 += 2.0 * A[c, i] * H[i, f] * H[i, f]
            if abs(g2) < guard:
                skipped += 1
            else:
                d = -eta * g1 / g2
                W[c, f] += d
                for i in range(n_itm):
                    E[c, i] += d * H[i, f]
        for i in range(n_itm):
            l1[i] = 2.0 * lam * H[i, f]
            l2[i] = 2.0 * lam
        for c in range(n_ctx):
            wv = W[c, f]
            for i in range(n_itm):
                l1[i] += 2.0 * A[c, i] * E[c, i] * wv
                l2[i] += 2.0 * A[c, i] * wv * wv
        for i in range(n_itm):
            if abs(l2[i]) < guard:
                skipped += 1
                delta[i] = 0.0
            else:
                delta[i] = -eta * l1[i] / l2[i]
                H[i, f] += delta[i]
        for c in range(n_ctx):
            for i in range(n_itm):
                E[c, i] += delta[i] * W[c, f]
    return skipped


def gram_cd_flops(n, k, nnz):
    """Arithmetic per Gram-based epoch, mirroring the kernel loops.

    Per dimension and side: Gram column 2nk, per-entity regularizer 3k + 4,
    per-positive loss terms and residual sync 8.
    """
    per_dim = 2 * (2 * n * k + n * (3 * k + 4) + 8 * nnz)
    return k * per_dim


def naive_cd_flops(n, k):
    """Arithmetic per cell-enumerating epoch: 2nk coordinates, 7n each."""
    return 2 * n * k * 7 * n


def _bench_arm(arm, dataset, config, repeats):
    """Median epoch wall time for one arm, after a compile warmup."""
    n = dataset.num_contexts
    rescaled = rescale_observations(dataset.positives, config.alpha0)
    s_ctx = np.array([o.context_id for o in rescaled], dtype=np.int64)
    s_itm = np.array([o.item_id for o in rescaled], dtype=np.int64)
    s_y = np.array([o.y for o in rescaled], dtype=np.float64)
    s_a = np.array([o.alpha for o in rescaled], dtype=np.float64)

    if arm == "gram_cd":

        def run_epoch(params):
            _mf_epoch(params.W, params.H, s_ctx, s_itm, s_y, s_a,
                      config.alpha0, config.eta, config.lam,
                      config.epsilon_guard)
    else:
        A = np.full((n, dataset.num_items), dataset.alpha0)
        Y = np.zeros((n, dataset.num_items))
        for o in dataset.positives:
            A[o.context_id, o.item_id] = o.alpha
            Y[o.context_id, o.item_id] = o.y

        def run_epoch(params):
            E = params.W @ params.H.T - Y
            _naive_mf_epoch(params.W, params.H, A, E, config.eta,
                            config.lam, config.epsilon_guard)

    params = init_mf_params(dataset, config)
    run_epoch(params)  # first run pays JIT compilation
    t0 = time.perf_counter()
    run_epoch(params)
    est = time.perf_counter() - t0
    # batch cheap epochs so each measurement is well above timer jitter,
    # and keep the fastest repetition: scheduler preemption and frequency
    # scaling only ever add time
    loops = max(1, int(np.ceil(0.02 / max(est, 1e-7))))
    times = []
    for _ in range(repeats):
        params = init_mf_params(dataset, config)
        t0 = time.perf_counter()
        for _ in range(loops):
            run_epoch(params)
        times.append((time.perf_counter() - t0) / loops)
    return float(min(times))


def run_benchmark(ns=(250, 500, 1000), k=8, positives_per_context=3,
                  repeats=3, seed=0, cell_cap=CELL_CAP):
    """Time both arms at each size; returns (rows, notices).

    Rows follow the CSV schema; the naive arm is skipped (with a notice)
    when its materialized grid would exceed ``cell_cap`` cells. The default
    density (3 positives per context, 0.3% of cells at n = 1000) keeps the
    synthetic data in the sparsity regime of real interaction logs while
    |S+| still grows linearly with n.
    """
    rows = []
    notices = []
    for n in ns:
        dataset = synthetic_dataset(n, positives_per_context, seed)
        config = SolverConfig(k=k, alpha0=dataset.alpha0, seed=seed)
        nnz = len(dataset.positives)
        arms = [("gram_cd", gram_cd_flops(n, k, nnz))]
        if n * n <= cell_cap:
            arms.append(("naive_cd", naive_cd_flops(n, k)))
        else:
            notices.append(
                f"naive arm skipped at n={n}: {n * n} cells exceed cap {cell_cap}"
            )
        for arm, flops in arms:
            rows.append({
                "n": n,
                "k": k,
                "family": "mf",
                "arm": arm,
                "epoch_seconds": _bench_arm(arm, dataset, config, repeats),
                "flop_count": flops,
            })
    return rows, notices


def rows_to_csv(rows):
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r['n']},{r['k']},{r['family']},{r['arm']},"
            f"{r['epoch_seconds']:.6g},{r['flop_count']}"
        )
    return "\n".join(lines) + "\n"


def fit_exponent(ns, seconds):
    """Least-squares slope of log(time) against log(n)."""
    ns = np.asarray(ns, dtype=np.float64)
    seconds = np.asarray(seconds, dtype=np.float64)
    if len(ns) < 2 or np.any(seconds <= 0):
        raise ValueError("need >= 2 sizes with positive times")
    slope, _ = np.polyfit(np.log(ns), np.log(seconds), 1)
    return float(slope)
