"""Cross-lingual multi-modal metric learning on precomputed embeddings.

Trains a text-side projection into a frozen image-embedding space and
runs zero-shot cross-lingual image retrieval and tagging on top of it.
"""

from .errors import XmodalError
from .losses import M3LHyperparams, PATRHyperparams, TripletBatch, m3l_loss, patr_loss, square_distance
from .mining import mine_hard_negatives
from .projection import (
    AdamState,
    ForwardTrace,
    ProjectionConfig,
    ProjectionParams,
    adam_step,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .retrieval import RankedList, RetrievalIndex, build_index, evaluate, rank, recall_at_k
from .store import (
    EmbeddingTable,
    PairManifest,
    PairRecord,
    PairedDataset,
    assemble_dataset,
    load_manifest,
    load_table,
    save_manifest,
    save_table,
)
from .tagging import TagAssignment, TagVocab, TaggingWeights, assign_tags, build_vocab, score_targets
from .training import TrainConfig, TrainHistory, resume, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "EmbeddingTable",
    "ForwardTrace",
    "M3LHyperparams",
    "PATRHyperparams",
    "PairManifest",
    "PairRecord",
    "PairedDataset",
    "ProjectionConfig",
    "ProjectionParams",
    "RankedList",
    "RetrievalIndex",
    "TagAssignment",
    "TagVocab",
    "TaggingWeights",
    "TrainConfig",
    "TrainHistory",
    "TripletBatch",
    "XmodalError",
    "adam_step",
    "assemble_dataset",
    "assign_tags",
    "backward",
    "build_index",
    "build_vocab",
    "evaluate",
    "forward",
    "init_params",
    "load_checkpoint",
    "load_manifest",
    "load_table",
    "m3l_loss",
    "mine_hard_negatives",
    "patr_loss",
    "rank",
    "recall_at_k",
    "resume",
    "save_checkpoint",
    "save_manifest",
    "save_table",
    "score_targets",
    "square_distance",
    "train",
]
