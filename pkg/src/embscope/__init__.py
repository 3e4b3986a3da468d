"""Sparse probes, sparse autoencoders and activation mining for embedding spaces."""
from ._kernels import BACKEND as KERNEL_BACKEND
from .data import (
    EmbeddingMatrix,
    SplitSpec,
    TargetTable,
    add_orientation_columns,
    encode_orientation,
    split_train_test,
    validate_embedding_matrix,
)
from .errors import ConfigError, DataError, DimensionMismatch, EmbscopeError, FormatError, NumericError
from .formats import ModelArtifact, load_model, read_embeddings, read_targets, save_model, write_embeddings
from .mining import ActivationReport, emit_report, percentile_extremes, top_k_activations
from .probe import (
    CDConfig,
    LinearProbe,
    ProbeReport,
    cross_domain_eval,
    fit_lasso,
    fit_ridge,
    pearson_r,
    predict,
    probe_experiment,
    soft_threshold,
    top_coefficients,
)
from .sae import SaeConfig, SaeModel, lambda_sweep, sae_forward, sae_grad, sae_init, sae_loss, sae_train

__version__ = "0.1.0"
