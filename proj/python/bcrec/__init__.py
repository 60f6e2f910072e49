"""Collaborative filtering with the bias-aware contrastive (BC) loss."""

from ._core import (
    ConfigError,
    DataError,
    DataSplit,
    Dataset,
    DivergenceError,
    Error,
    InvariantError,
    ParseError,
    PopularityEmbeddings,
    __version__,
    bc_loss,
    bias_correlation,
    bpr_loss,
    cli,
    evaluate,
    geometry_report,
    k_core_filter,
    kl_divergence_uniform,
    lightgcn_propagate,
    load_extractor,
    load_interactions,
    margin,
    read_split,
    save_extractor,
    save_interactions,
    softmax_loss,
    split_random,
    split_temporal,
    subgroup_angle_matrix,
    subgroup_partition,
    synthesize,
    train,
    write_split,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
