"""Acceptance gate: nine verifiable criteria, one test per criterion.

Each test prints a single PASS line on success; tolerances and time limits
are stated inline next to the assertion they bound.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from helpers import (
    FAMILIES,
    param_arrays,
    random_instance,
    redraw_params,
    representation_of,
    train_dispatch,
)

from icdrec.bench import fit_exponent, run_benchmark
from icdrec.core import SolverConfig, compute_gram, reg_grads_generic, reg_value
from icdrec.data import FeatureMatrix, assemble_dataset
from icdrec.evaluation import ndcg_at_k, rank_top_k, recall_at_k
from icdrec.feature import (
    FMParams,
    MFSIParams,
    fm_reg_grads,
    fm_reg_grads_item,
    mfsi_reg_grads,
    train_feature_model,
)
from icdrec.mf import MFParams, init_mf_params, mf_reg_grads, train_mf
from icdrec.oracle import (
    ModelInstance,
    central_difference,
    coordinate_order,
    naive_cd_epoch,
    naive_implicit_objective,
    naive_regularizer,
    objective_field,
    regularizer_field,
    rescaled_objective,
)
from icdrec.persist import save_model
from icdrec.tensor import (
    ParafacParams,
    TuckerParams,
    dense_context_gram,
    parafac_reg_grads,
    train_tensor_model,
    tucker_dense_context_gram,
    tucker_reg_grads,
)

# sparse and dense-context variants exercised by the gradient criteria
VARIANTS = [("mf", False), ("mfsi", False), ("fm", False),
            ("parafac", False), ("parafac", True),
            ("tucker", False), ("tucker", True)]


def close_rel(a, b, tol):
    """|a - b| within tol relative to b (absolute below magnitude 1)."""
    return abs(a - b) <= tol * max(1.0, abs(b))


def closed_form_reg_grads(instance, name, idx):
    """The production regularizer derivatives for one coordinate."""
    kind, p = instance.kind, instance.params
    state = representation_of(instance)
    j_c = compute_gram(state.phi)
    j_i = compute_gram(state.psi)
    if kind == "mf":
        if name == "w":
            return mf_reg_grads(idx[0], idx[1], p, j_i)
        return reg_grads_generic(np.array([idx[0]]),
                                 {idx[1]: np.array([1.0])}, state.psi, j_c)
    if kind == "mfsi":
        if name == "w":
            return mfsi_reg_grads(idx[0], idx[1], instance.x_feat, state.phi, j_i)
        return mfsi_reg_grads(idx[0], idx[1], instance.z_feat, state.psi, j_c)
    if kind == "fm":
        if name == "b":
            return fm_reg_grads("bias", None, instance.x_feat, state.phi, j_i, p)
        if name == "w_tilde":
            return fm_reg_grads("linear", idx[0], instance.x_feat, state.phi,
                                j_i, p)
        if name == "h_tilde":
            return fm_reg_grads_item("linear", idx[0], instance.z_feat,
                                     state.psi, j_c, p)
        if name == "w":
            return fm_reg_grads("embedding", idx, instance.x_feat, state.phi,
                                j_i, p)
        return fm_reg_grads_item("embedding", idx, instance.z_feat, state.psi,
                                 j_c, p)
    dense = instance.dense_context
    index = instance.index
    if kind == "parafac":
        if name == "w":
            jg = dense_context_gram([compute_gram(p.U), compute_gram(p.V)]) \
                if dense else j_c
            return parafac_reg_grads("w", idx[0], idx[1], p, jg, index)
        other = (compute_gram(p.V) if name == "u" else compute_gram(p.U)) \
            if dense else None
        return parafac_reg_grads(name, idx[0], idx[1], p, j_i, index, dense,
                                 other)
    g_u, g_v = compute_gram(p.U), compute_gram(p.V)
    if name == "w":
        jg = tucker_dense_context_gram(p.B, g_u, g_v) if dense else j_c
        return tucker_reg_grads("w", idx, p, jg, index)
    return tucker_reg_grads(name, idx, p, j_i, index, phi=state.phi,
                            dense=dense, mode_grams=(g_u, g_v) if dense else None)


def sampled_coordinates(instance, cap=25):
    coords = list(coordinate_order(instance))
    stride = max(1, len(coords) // cap)
    return coords[::stride]


def variant_instance(kind, dense, seed, **kw):
    return random_instance(kind, seed=seed, dense_context=dense, **kw)


def test_criterion_1_gram_identity():
    """Closed-form regularizer equals cell enumeration, 50 instances, < 10 s."""
    t0 = time.perf_counter()
    count = 0
    for seed in range(10):
        for kind in FAMILIES:
            inst, _ = random_instance(kind, seed=seed)
            state = representation_of(inst)
            closed = reg_value(compute_gram(state.phi), compute_gram(state.psi))
            naive = naive_regularizer(inst)
            assert close_rel(closed, naive, 1e-9), (kind, seed)
            count += 1
    elapsed = time.perf_counter() - t0
    assert count == 50
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    print(f"criterion 1 (Gram identity, 50 instances, {elapsed:.2f}s): PASS")


def test_criterion_2_regularizer_gradients():
    """Closed-form R', R'' match finite differences (h=1e-5) at 1e-4, < 60 s."""
    t0 = time.perf_counter()
    checked = 0
    for kind, dense in VARIANTS:
        inst, _ = variant_instance(kind, dense, seed=21, k=2)
        for name, idx in sampled_coordinates(inst):
            r = closed_form_reg_grads(inst, name, idx)
            theta = inst.params.b if (kind == "fm" and name == "b") else None
            if theta is None:
                attr = {"w": "W", "h": "H", "u": "U", "v": "V", "b": "B",
                        "w_tilde": "w_tilde", "h_tilde": "h_tilde"}[name]
                theta = float(getattr(inst.params, attr)[idx])
            fd1, fd2 = central_difference(regularizer_field(inst, name, idx),
                                          theta, h=1e-5)
            assert close_rel(r.first, fd1, 1e-4), (kind, dense, name, idx)
            assert close_rel(r.second, fd2, 1e-4), (kind, dense, name, idx)
            checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    print(f"criterion 2 (regularizer gradients, {checked} coordinates, "
          f"{elapsed:.2f}s): PASS")


def test_criterion_3_rescaling_equivalence():
    """All-cells and rescaled objectives differ by a parameter-free constant.

    The constant's spread across random parameter draws stays within 1e-9
    and the coordinate gradients of the two objectives match within 1e-8.
    """
    for kind, dense in VARIANTS:
        inst, cfg = variant_instance(kind, dense, seed=31, k=2)
        diffs = []
        for s in range(5):
            inst.params = redraw_params(inst, cfg, seed=300 + s)
            diffs.append(naive_implicit_objective(inst, cfg.lam)
                         - rescaled_objective(inst, cfg.alpha0, cfg.lam))
        spread = max(diffs) - min(diffs)
        assert spread <= 1e-9 * max(1.0, abs(diffs[0])), (kind, dense, spread)
        for name, idx in sampled_coordinates(inst, cap=6):
            theta = inst.params.b if (kind == "fm" and name == "b") else None
            if theta is None:
                attr = {"w": "W", "h": "H", "u": "U", "v": "V", "b": "B",
                        "w_tilde": "w_tilde", "h_tilde": "h_tilde"}[name]
                theta = float(getattr(inst.params, attr)[idx])
            g_naive, _ = central_difference(
                objective_field(inst, name, idx,
                                lambda i: naive_implicit_objective(i, cfg.lam)),
                theta, h=1e-3)
            g_resc, _ = central_difference(
                objective_field(inst, name, idx,
                                lambda i: rescaled_objective(i, cfg.alpha0,
                                                             cfg.lam)),
                theta, h=1e-3)
            assert close_rel(g_resc, g_naive, 1e-8), (kind, dense, name, idx)
    print("criterion 3 (rescaling equivalence, constant + gradients): PASS")


def test_criterion_4_trainers_match_naive_oracle():
    """3 trainer epochs equal 3 naive all-cells CD epochs within 1e-8."""
    sizes = {
        "mf": dict(n_ctx=6, n_itm=7, n_pos=15, k=3),
        "mfsi": dict(n_ctx=5, n_itm=6, n_pos=12, p=5, k=2),
        "fm": dict(n_ctx=5, n_itm=6, n_pos=12, p=5, k=2),
        "parafac": dict(n_itm=6, n_pos=10, modes=(3, 3), k=2),
        "tucker": dict(n_itm=6, n_pos=10, modes=(3, 3), k=2),
    }
    for kind in FAMILIES:
        inst_a, cfg = random_instance(kind, seed=41, **sizes[kind])
        inst_b, _ = random_instance(kind, seed=41, **sizes[kind])
        trained, _ = train_dispatch(inst_a, cfg, epochs=3)
        for _ in range(3):
            naive_cd_epoch(inst_b, cfg)
        a = param_arrays(kind, trained)
        b = param_arrays(kind, inst_b.params)
        for name in a:
            gap = float(np.max(np.abs(a[name] - b[name])))
            assert gap <= 1e-8, (kind, name, gap)
    print("criterion 4 (trainer vs naive CD oracle, 3 epochs, 5 families): PASS")


def test_criterion_5_monotone_descent():
    """Objective never increases by more than 1e-10 relative, 20 seeds/family."""
    runs = 0
    for kind in FAMILIES:
        for seed in range(20):
            inst, cfg = random_instance(kind, seed=seed, k=2)
            _, history = train_dispatch(inst, cfg, epochs=5)
            objs = [rec["objective"] for rec in history]
            for a, b in zip(objs, objs[1:]):
                assert b <= a + 1e-10 * max(1.0, abs(a)), (kind, seed)
            runs += 1
    assert runs == 100
    print("criterion 5 (monotone descent, 100 seeded runs): PASS")


def test_criterion_6_cost_benchmark():
    """Gram CD is >= 50x faster at n=1000 and scales near-linearly, < 5 min.

    Fitted log-log exponents over n in {250, 500, 1000} must fall in
    [0.8, 1.3] for the Gram arm and [1.7, 2.3] for the naive arm.
    """
    t0 = time.perf_counter()
    rows, notices = run_benchmark(ns=(250, 500, 1000), k=8, repeats=5)
    elapsed = time.perf_counter() - t0
    assert not notices
    times = {(r["n"], r["arm"]): r["epoch_seconds"] for r in rows}
    ratio = times[(1000, "naive_cd")] / times[(1000, "gram_cd")]
    assert ratio >= 50.0, f"speedup {ratio:.1f}x at n=1000"
    ns = (250, 500, 1000)
    exp_gram = fit_exponent(ns, [times[(n, "gram_cd")] for n in ns])
    exp_naive = fit_exponent(ns, [times[(n, "naive_cd")] for n in ns])
    assert 0.8 <= exp_gram <= 1.3, f"gram exponent {exp_gram:.2f}"
    assert 1.7 <= exp_naive <= 2.3, f"naive exponent {exp_naive:.2f}"
    assert elapsed < 300.0, f"took {elapsed:.1f}s"
    print(f"criterion 6 (benchmark: {ratio:.0f}x, exponents "
          f"{exp_gram:.2f}/{exp_naive:.2f}, {elapsed:.0f}s): PASS")


def test_criterion_7_model_reductions():
    """Specializations reproduce their simpler model's training trajectory."""
    epochs = 3
    base = SolverConfig(k=2, sigma=0.5, seed=0, max_epochs=epochs, tol=0.0)

    # (a) MFSI with one-hot features over p = max(|C|, |I|) equals MF
    inst, _ = random_instance("mf", seed=71, k=2)
    ds = inst.dataset
    p = max(ds.num_contexts, ds.num_items)
    mf_init = init_mf_params(ds, base)
    w_pad = np.zeros((p, 2))
    w_pad[:ds.num_contexts] = mf_init.W
    h_pad = np.zeros((p, 2))
    h_pad[:ds.num_items] = mf_init.H
    mf_params, _ = train_mf(ds, base, init=mf_init)
    x = FeatureMatrix.one_hot(ds.num_contexts, p)
    z = FeatureMatrix.one_hot(ds.num_items, p)
    mfsi_params, _ = train_feature_model(
        "mfsi", ds, x, z, base, init=MFSIParams(w_pad, h_pad))
    assert np.max(np.abs(mfsi_params.W[:ds.num_contexts] - mf_params.W)) <= 1e-12
    assert np.max(np.abs(mfsi_params.H[:ds.num_items] - mf_params.H)) <= 1e-12

    # (b) FM with frozen zero bias and linear terms equals MFSI
    fm_init = FMParams(0.0, np.zeros(p), np.zeros(p), w_pad.copy(),
                       h_pad.copy())
    fm_params, _ = train_feature_model("fm", ds, x, z, base, init=fm_init,
                                       freeze=("bias_linear",))
    assert np.max(np.abs(fm_params.W - mfsi_params.W)) <= 1e-12
    assert np.max(np.abs(fm_params.H - mfsi_params.H)) <= 1e-12

    # (c) PARAFAC at k=1 with the second mode frozen at 1 equals MF
    raw = [("c%d" % o.context_id, "i%d" % o.item_id, o.y, o.alpha)
           for o in ds.positives]
    raw_t = [("c%d,z" % o.context_id, "i%d" % o.item_id, o.y, o.alpha)
             for o in ds.positives]
    ds_mf = assemble_dataset(raw, alpha0=ds.alpha0)
    ds_t = assemble_dataset(raw_t, alpha0=ds.alpha0)
    cfg1 = SolverConfig(k=1, sigma=0.5, seed=0, max_epochs=epochs, tol=0.0)
    mf1_init = init_mf_params(ds_mf, cfg1)
    mf1_params, _ = train_mf(ds_mf, cfg1, init=mf1_init)
    pf_init = ParafacParams(mf1_init.W.copy(), np.ones((1, 1)),
                            mf1_init.H.copy())
    pf_params, _ = train_tensor_model("parafac", ds_t, cfg1, init=pf_init,
                                      freeze=("V",))
    assert np.max(np.abs(pf_params.U - mf1_params.W)) <= 1e-10
    assert np.max(np.abs(pf_params.W - mf1_params.H)) <= 1e-10

    # (d) Tucker with a frozen superdiagonal core equals PARAFAC
    inst_t, cfg_t = random_instance("parafac", seed=72, k=2)
    cfg_t = replace(cfg_t, max_epochs=epochs, tol=0.0)
    pf2_params, _ = train_tensor_model("parafac", inst_t.dataset, cfg_t,
                                       init=inst_t.params)
    core = np.zeros((2, 2, 2))
    core[0, 0, 0] = core[1, 1, 1] = 1.0
    tk_init = TuckerParams(core, inst_t.params.U.copy(),
                           inst_t.params.V.copy(), inst_t.params.W.copy())
    tk_params, _ = train_tensor_model("tucker", inst_t.dataset, cfg_t,
                                      init=tk_init, freeze=("B",))
    for name in ("U", "V", "W"):
        gap = np.max(np.abs(getattr(tk_params, name)
                            - getattr(pf2_params, name)))
        assert gap <= 1e-10, (name, gap)
    print("criterion 7 (four model reductions): PASS")


def test_criterion_8_metric_unit_suite():
    """Ranking metric values are exact on scripted fixtures."""
    items = ["i0", "i1", "i2", "i3"]
    # descending score, tie broken by ascending position, exclusions honored
    assert rank_top_k([0.2, 0.9, 0.9, 0.1], items, set(), 3) == ["i1", "i2", "i0"]
    assert rank_top_k([0.2, 0.9, 0.9, 0.1], items, {"i1"}, 2) == ["i2", "i0"]
    recommended = ["x", "r1", "y", "r2", "z"]
    relevant = {"r1", "r2", "r3"}
    assert recall_at_k(recommended, relevant) == 2 / 3
    dcg = 0.0 + 1.0 / math.log2(3) + 1.0 / math.log2(5)
    ideal = 1.0 / math.log2(2) + 1.0 / math.log2(3) + 1.0 / math.log2(4)
    assert ndcg_at_k(recommended, relevant, 5) == dcg / ideal
    assert ndcg_at_k(["r1"], {"r1"}, 1) == 1.0
    assert recall_at_k(["x", "y"], {"r1"}) == 0.0
    # invariance under strictly monotone score transforms
    scores = np.array([0.3, -1.2, 2.0, 0.7, 0.7])
    keys = [f"k{j}" for j in range(5)]
    base = rank_top_k(scores, keys, set(), 4)
    assert rank_top_k(10 * scores + 3, keys, set(), 4) == base
    assert rank_top_k(np.tanh(scores), keys, set(), 4) == base
    print("criterion 8 (exact metric unit suite): PASS")


def test_criterion_9_determinism_and_persistence(tmp_path):
    """Same seed + config twice gives byte-identical saved models."""
    for kind in FAMILIES:
        inst1, cfg = random_instance(kind, seed=91, k=2)
        inst2, _ = random_instance(kind, seed=91, k=2)
        p1, _ = train_dispatch(inst1, cfg, epochs=3)
        p2, _ = train_dispatch(inst2, cfg, epochs=3)
        f1 = str(tmp_path / f"{kind}_1.model")
        f2 = str(tmp_path / f"{kind}_2.model")
        save_model(f1, kind, p1, context_ids=["a"], item_ids=["b"])
        save_model(f2, kind, p2, context_ids=["a"], item_ids=["b"])
        assert open(f1, "rb").read() == open(f2, "rb").read(), kind
        assert open(f1 + ".ids", "rb").read() == open(f2 + ".ids", "rb").read()
    print("criterion 9 (determinism and persistence, 5 families): PASS")
