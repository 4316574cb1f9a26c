"""Coordinate descent for implicit-feedback factorization models.

The implicit objective over every context-item cell is optimized at the
cost of the observed positives only, by rescaling the positives and folding
the unobserved cells into a Gram-matrix regularizer that every separable
model exposes in closed form.
"""

from .core import GradPair, SeparableState, SolverConfig, compute_gram, reg_value
from .data import (
    ContextTuple,
    FeatureMatrix,
    ImplicitDataset,
    Observation,
    assemble_dataset,
    assemble_feature_matrix,
    read_features,
    read_interactions,
    rescale_observations,
)
from .feature import (
    FMParams,
    MFSIParams,
    fm_representation,
    init_fm_params,
    init_mfsi_params,
    mfsi_representation,
    train_feature_model,
)
from .mf import MFParams, init_mf_params, mf_representation, train_mf
from .persist import load_model, save_model
from .tensor import (
    ParafacParams,
    TuckerParams,
    init_parafac_params,
    init_tucker_params,
    parafac_representation,
    train_tensor_model,
    tucker_representation,
)

__version__ = "0.1.0"

__all__ = [
    "ContextTuple",
    "FeatureMatrix",
    "FMParams",
    "GradPair",
    "ImplicitDataset",
    "MFParams",
    "MFSIParams",
    "Observation",
    "ParafacParams",
    "SeparableState",
    "SolverConfig",
    "TuckerParams",
    "assemble_dataset",
    "assemble_feature_matrix",
    "compute_gram",
    "fm_representation",
    "init_fm_params",
    "init_mf_params",
    "init_mfsi_params",
    "init_parafac_params",
    "init_tucker_params",
    "load_model",
    "mf_representation",
    "mfsi_representation",
    "parafac_representation",
    "read_features",
    "read_interactions",
    "reg_value",
    "rescale_observations",
    "save_model",
    "train_feature_model",
    "train_mf",
    "train_tensor_model",
    "tucker_representation",
]
