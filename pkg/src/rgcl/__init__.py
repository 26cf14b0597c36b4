"""Rationale-aware graph contrastive pre-training at desk scale.

The usual workflow touches four layers, re-exported here:

data        Graph / GraphDataset containers, TU-format and JSON loaders,
            and a planted-motif synthetic generator with ground-truth masks.
training    TrainConfig, the three-tower pre-training loop, and JSON
            checkpoints that restore runs bit-exactly.
evaluation  frozen-encoder embeddings, a linear probe, rationale precision
            against planted masks, and the ablation runner.
rationale   per-node attribution plus Gumbel-top-k view sampling, exposed
            for callers that want the views without the loop.
"""

from .autodiff import NumericError
from .datasets import PlantedMotifSpec, generate_planted_motif_dataset, load_tu_dataset
from .encoder import EncoderConfig, PassCounter, encode_graph, init_params
from .evaluation import (
    AblationResult,
    ProbeResult,
    RationaleScore,
    embed_graphs,
    linear_probe,
    precision_at_k,
    random_init_probe,
    rationale_precision,
    run_ablation,
    view_similarities,
)
from .graphs import (
    Graph,
    GraphDataset,
    GraphFormatError,
    batch_graphs,
    dataset_hash,
    induced_subgraph,
    load_dataset_json,
    save_dataset_json,
)
from .losses import BatchViews, LossReport, rgcl_loss
from .rationale import (
    attribute_nodes,
    export_rationales,
    gumbel_top_k,
    sample_complement,
    sample_rationale,
    view_size,
)
from .training import (
    CheckpointFormatError,
    TrainConfig,
    TrainState,
    init_train_state,
    load_checkpoint,
    normalize_variant,
    pretrain,
    sample_selections,
    save_checkpoint,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AblationResult",
    "BatchViews",
    "CheckpointFormatError",
    "EncoderConfig",
    "Graph",
    "GraphDataset",
    "GraphFormatError",
    "LossReport",
    "NumericError",
    "PassCounter",
    "PlantedMotifSpec",
    "ProbeResult",
    "RationaleScore",
    "TrainConfig",
    "TrainState",
    "attribute_nodes",
    "batch_graphs",
    "dataset_hash",
    "embed_graphs",
    "encode_graph",
    "export_rationales",
    "generate_planted_motif_dataset",
    "gumbel_top_k",
    "induced_subgraph",
    "init_params",
    "init_train_state",
    "linear_probe",
    "load_checkpoint",
    "load_dataset_json",
    "load_tu_dataset",
    "normalize_variant",
    "precision_at_k",
    "pretrain",
    "random_init_probe",
    "rationale_precision",
    "rgcl_loss",
    "run_ablation",
    "sample_complement",
    "sample_rationale",
    "sample_selections",
    "save_checkpoint",
    "save_dataset_json",
    "train_step",
    "view_similarities",
    "view_size",
]
