# SPDX-License-Identifier: Apache-2.0
from rebalance._core import (
    ConfigError,
    Model,
    ModelConfig,
    ParseError,
    ShapeError,
    StateError,
    Vocab,
    count_params,
    encode_pair,
    export_embeddings,
    nn_translation,
    per_layer_params,
    segment,
    smooth_distribution,
    spearman,
)

__all__ = [
    "ConfigError",
    "Model",
    "ModelConfig",
    "ParseError",
    "ShapeError",
    "StateError",
    "Vocab",
    "count_params",
    "encode_pair",
    "export_embeddings",
    "nn_translation",
    "per_layer_params",
    "segment",
    "smooth_distribution",
    "spearman",
]
