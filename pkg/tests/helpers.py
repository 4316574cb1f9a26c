"""Shared builders for randomized test instances across all model families."""

from dataclasses import replace

import numpy as np

from icdrec import (
    FeatureMatrix,
    SolverConfig,
    assemble_dataset,
    fm_representation,
    init_fm_params,
    init_mf_params,
    init_mfsi_params,
    init_parafac_params,
    init_tucker_params,
    mf_representation,
    mfsi_representation,
    parafac_representation,
    train_feature_model,
    train_mf,
    train_tensor_model,
    tucker_representation,
)
from icdrec.oracle import ModelInstance
from icdrec.tensor import ContextIndex

FAMILIES = ("mf", "mfsi", "fm", "parafac", "tucker")


def random_dataset(rng, n_ctx, n_itm, n_pos, alpha0=1.0, modes=None):
    """Distinct random positives; ``modes=(n1, n2)`` makes tuple contexts."""
    raw = []
    seen = set()
    while len(raw) < n_pos:
        if modes is None:
            c_key = f"c{rng.integers(n_ctx)}"
        else:
            c_key = f"a{rng.integers(modes[0])},b{rng.integers(modes[1])}"
        i_key = f"i{rng.integers(n_itm)}"
        if (c_key, i_key) in seen:
            continue
        seen.add((c_key, i_key))
        raw.append((c_key, i_key, float(rng.integers(1, 4)),
                    alpha0 + float(rng.uniform(0.5, 2.0))))
    return assemble_dataset(raw, alpha0=alpha0)


def random_feature_matrix(rng, n, p, max_nnz=3):
    rows = []
    for _ in range(n):
        nnz = int(rng.integers(1, max_nnz + 1))
        idx = rng.choice(p, size=nnz, replace=False)
        rows.append([(int(l), float(rng.normal())) for l in sorted(idx)])
    return FeatureMatrix(n, p, rows)


def random_instance(kind, seed, n_ctx=8, n_itm=9, n_pos=20, k=3, sigma=0.5,
                    alpha0=1.0, p=6, modes=(4, 3), dense_context=False,
                    **config_kw):
    """(ModelInstance, SolverConfig) with fresh random data and parameters."""
    rng = np.random.default_rng(seed)
    config = SolverConfig(k=k, k1=k, k2=k, k3=k, alpha0=alpha0, sigma=sigma,
                          seed=seed, dense_context=dense_context, **config_kw)
    if kind in ("parafac", "tucker"):
        n_pos = min(n_pos, modes[0] * modes[1] * n_itm - 1)
        dataset = random_dataset(rng, n_ctx, n_itm, n_pos, alpha0, modes=modes)
        sizes = dataset.mode_sizes
        if kind == "parafac":
            params = init_parafac_params(sizes, dataset.num_items, config)
        else:
            params = init_tucker_params(sizes, dataset.num_items, config)
        return ModelInstance(kind, params, dataset,
                             dense_context=dense_context), config
    dataset = random_dataset(rng, n_ctx, n_itm, n_pos, alpha0)
    if kind == "mf":
        return ModelInstance("mf", init_mf_params(dataset, config),
                             dataset), config
    x = random_feature_matrix(rng, dataset.num_contexts, p)
    z = random_feature_matrix(rng, dataset.num_items, p)
    init = init_mfsi_params(p, config) if kind == "mfsi" else init_fm_params(p, config)
    return ModelInstance(kind, init, dataset, x_feat=x, z_feat=z), config


def representation_of(instance):
    """Separable (phi, psi) tables of any instance, via the family builder."""
    kind, params = instance.kind, instance.params
    if kind == "mf":
        return mf_representation(params)
    if kind == "mfsi":
        return mfsi_representation(params, instance.x_feat, instance.z_feat)
    if kind == "fm":
        return fm_representation(params, instance.x_feat, instance.z_feat)
    index = ContextIndex(instance.dataset.context_tuples,
                         instance.dataset.mode_sizes)
    if kind == "parafac":
        return parafac_representation(params, index)
    return tucker_representation(params, index)


def redraw_params(instance, config, seed):
    """Fresh seeded parameters with the shapes of ``instance``'s model."""
    cfg = replace(config, seed=seed)
    kind, ds = instance.kind, instance.dataset
    if kind == "mf":
        return init_mf_params(ds, cfg)
    if kind == "mfsi":
        return init_mfsi_params(instance.x_feat.num_features, cfg)
    if kind == "fm":
        return init_fm_params(instance.x_feat.num_features, cfg)
    if kind == "parafac":
        return init_parafac_params(ds.mode_sizes, ds.num_items, cfg)
    return init_tucker_params(ds.mode_sizes, ds.num_items, cfg)


def param_arrays(kind, params):
    """Every parameter array of a model, keyed by attribute name."""
    names = {
        "mf": ("W", "H"),
        "mfsi": ("W", "H"),
        "fm": ("b", "w_tilde", "h_tilde", "W", "H"),
        "parafac": ("U", "V", "W"),
        "tucker": ("B", "U", "V", "W"),
    }[kind]
    return {n: np.atleast_1d(np.asarray(getattr(params, n))) for n in names}


def train_dispatch(instance, config, epochs=None):
    """Run the matching trainer from the instance's current parameters."""
    if epochs is not None:
        config = replace(config, max_epochs=epochs, tol=0.0)
    kind = instance.kind
    if kind == "mf":
        return train_mf(instance.dataset, config, init=instance.params)
    if kind in ("mfsi", "fm"):
        return train_feature_model(kind, instance.dataset, instance.x_feat,
                                   instance.z_feat, config,
                                   init=instance.params)
    return train_tensor_model(kind, instance.dataset, config,
                              init=instance.params)
