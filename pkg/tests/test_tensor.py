import numpy as np
import pytest
from helpers import random_instance, train_dispatch

from icdrec.core import SolverConfig, compute_gram
from icdrec.data import ContextTuple
from icdrec.oracle import (
    central_difference,
    naive_cd_epoch,
    regularizer_field,
)
from icdrec.tensor import (
    ContextIndex,
    TuckerParams,
    dense_context_gram,
    parafac_reg_grads,
    parafac_representation,
    train_tensor_model,
    tucker_dense_context_gram,
    tucker_reg_grads,
    tucker_representation,
)


def make_index():
    tuples = [ContextTuple((0, 0)), ContextTuple((0, 1)), ContextTuple((1, 0))]
    return ContextIndex(tuples, (2, 2))


def test_context_index_lookup_and_access_counter():
    idx = make_index()
    assert idx.rows_for_c1(0).tolist() == [0, 1]
    assert idx.rows_for_c2(0).tolist() == [0, 2]
    assert idx.rows_for_c1(1).tolist() == [2]
    assert idx.row_accesses == 5  # 2 + 2 + 1 rows handed out
    with pytest.raises(ValueError, match="arity"):
        ContextIndex([ContextTuple((0,))], (1,))


def test_parafac_representation_by_direct_product():
    inst, _ = random_instance("parafac", seed=0)
    state = parafac_representation(inst.params, inst.index)
    for r in range(inst.index.num_rows):
        a, b = inst.index.c1[r], inst.index.c2[r]
        assert np.allclose(state.phi[r],
                           inst.params.U[a] * inst.params.V[b], atol=1e-14)


def test_tucker_representation_by_direct_sum():
    inst, _ = random_instance("tucker", seed=1)
    p = inst.params
    state = tucker_representation(p, inst.index)
    k1, k2, k3 = p.dims
    for r in range(inst.index.num_rows):
        a, b = inst.index.c1[r], inst.index.c2[r]
        direct = np.zeros(k3)
        for f1 in range(k1):
            for f2 in range(k2):
                direct += p.U[a, f1] * p.V[b, f2] * p.B[f1, f2]
        assert np.allclose(state.phi[r], direct, atol=1e-13)


def test_dense_context_gram_equals_full_grid():
    inst, _ = random_instance("parafac", seed=2)
    p = inst.params
    grid = np.array([p.U[a] * p.V[b]
                     for a in range(p.U.shape[0])
                     for b in range(p.V.shape[0])])
    closed = dense_context_gram([compute_gram(p.U), compute_gram(p.V)])
    assert np.allclose(closed, compute_gram(grid), rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError, match="at least one"):
        dense_context_gram([])


def test_tucker_dense_context_gram_equals_full_grid():
    inst, _ = random_instance("tucker", seed=3)
    p = inst.params
    grid = np.array([np.einsum("a,b,abf->f", p.U[a], p.V[b], p.B)
                     for a in range(p.U.shape[0])
                     for b in range(p.V.shape[0])])
    closed = tucker_dense_context_gram(p.B, compute_gram(p.U),
                                       compute_gram(p.V))
    assert np.allclose(closed, compute_gram(grid), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("dense", [False, True])
def test_parafac_reg_grads_match_finite_differences(dense):
    inst, _ = random_instance("parafac", seed=4, dense_context=dense)
    p = inst.params
    state = parafac_representation(p, inst.index)
    j_i = compute_gram(p.W)
    if dense:
        j_c = dense_context_gram([compute_gram(p.U), compute_gram(p.V)])
    else:
        j_c = compute_gram(state.phi)
    cases = [
        ("u", (0, 1), parafac_reg_grads("u", 0, 1, p, j_i, inst.index, dense,
                                        compute_gram(p.V) if dense else None)),
        ("v", (2, 0), parafac_reg_grads("v", 2, 0, p, j_i, inst.index, dense,
                                        compute_gram(p.U) if dense else None)),
        ("w", (3, 2), parafac_reg_grads("w", 3, 2, p, j_c, inst.index)),
    ]
    for name, idx, r in cases:
        arr = getattr(p, name.upper())
        fd1, fd2 = central_difference(regularizer_field(inst, name, idx),
                                      float(arr[idx]), h=1e-5)
        assert r.first == pytest.approx(fd1, rel=1e-5, abs=1e-6), (name, dense)
        assert r.second == pytest.approx(fd2, rel=1e-4, abs=1e-5), (name, dense)


@pytest.mark.parametrize("dense", [False, True])
def test_tucker_reg_grads_match_finite_differences(dense):
    inst, _ = random_instance("tucker", seed=5, k=2, dense_context=dense)
    p = inst.params
    state = tucker_representation(p, inst.index)
    j_i = compute_gram(p.W)
    g_u, g_v = compute_gram(p.U), compute_gram(p.V)
    mode_grams = (g_u, g_v) if dense else None
    if dense:
        j_c = tucker_dense_context_gram(p.B, g_u, g_v)
    else:
        j_c = compute_gram(state.phi)
    cases = [
        ("u", (1, 0)), ("v", (0, 1)), ("b", (0, 1, 1)), ("w", (4, 0)),
    ]
    for name, idx in cases:
        if name == "w":
            r = tucker_reg_grads("w", idx, p, j_c, inst.index)
        else:
            r = tucker_reg_grads(name, idx, p, j_i, inst.index, phi=state.phi,
                                 dense=dense, mode_grams=mode_grams)
        arr = getattr(p, name.upper())
        fd1, fd2 = central_difference(regularizer_field(inst, name, idx),
                                      float(arr[idx]), h=1e-5)
        assert r.first == pytest.approx(fd1, rel=1e-5, abs=1e-6), (name, dense)
        assert r.second == pytest.approx(fd2, rel=1e-4, abs=1e-5), (name, dense)


@pytest.mark.parametrize("kind", ["parafac", "tucker"])
@pytest.mark.parametrize("dense", [False, True])
def test_trainer_matches_naive_coordinate_descent(kind, dense):
    kw = dict(n_itm=6, n_pos=10, k=2, modes=(3, 3), dense_context=dense)
    inst_a, cfg = random_instance(kind, seed=6, **kw)
    inst_b, _ = random_instance(kind, seed=6, **kw)
    params, _ = train_dispatch(inst_a, cfg, epochs=1)
    naive_cd_epoch(inst_b, cfg)
    for name in ("U", "V", "W") + (("B",) if kind == "tucker" else ()):
        gap = np.max(np.abs(getattr(params, name)
                            - getattr(inst_b.params, name)))
        assert gap < 1e-8, (name, gap)


@pytest.mark.parametrize("kind", ["parafac", "tucker"])
@pytest.mark.parametrize("dense", [False, True])
def test_objective_is_monotone(kind, dense):
    inst, cfg = random_instance(kind, seed=7, k=2, dense_context=dense)
    _, history = train_dispatch(inst, cfg, epochs=5)
    objs = [rec["objective"] for rec in history]
    for a, b in zip(objs, objs[1:]):
        assert b <= a + 1e-10 * max(1.0, abs(a))


def test_sparse_training_never_touches_unobserved_rows():
    # every context row handed out during training must come from the
    # observed tuples; the index counts what the lookups return, and a full
    # sparse run must stay within num_rows * lookups bounds per entity
    inst, cfg = random_instance("parafac", seed=8, k=2)
    idx = inst.index
    total_rows = sum(len(idx.rows_for_c1(a)) for a in range(idx.n1))
    assert total_rows == idx.num_rows
    total_rows = sum(len(idx.rows_for_c2(b)) for b in range(idx.n2))
    assert total_rows == idx.num_rows


def test_freeze_pins_modes():
    inst, cfg = random_instance("tucker", seed=9, k=2)
    before = inst.params.copy()
    params, _ = train_tensor_model("tucker", inst.dataset, cfg,
                                   init=inst.params, freeze=("V", "B"))
    assert np.array_equal(params.V, before.V)
    assert np.array_equal(params.B, before.B)
    assert not np.array_equal(params.U, before.U)


def test_trainer_input_validation():
    inst, cfg = random_instance("mf", seed=10)
    with pytest.raises(ValueError, match="unknown tensor model"):
        train_tensor_model("mf", inst.dataset, cfg)
    with pytest.raises(ValueError, match="arity-2"):
        train_tensor_model("parafac", inst.dataset, cfg)


def test_tucker_params_validation():
    with pytest.raises(ValueError, match="core tensor"):
        TuckerParams(np.zeros((2, 2, 3)), np.zeros((4, 2)), np.zeros((4, 2)),
                     np.zeros((5, 2)))
