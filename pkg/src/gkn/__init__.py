"""Graph kernel network: learned graph kernels over patient event graphs.

Pipeline: stacked GCN node embeddings, attention pooling against trainable
global node clusters, an exp(-dist^2) graph kernel, joint contrastive /
kernel-alignment / primal-SVM training, and a dual kernel SVM classifier.
"""

from .errors import CheckpointError, DataError, GknError, NumericError
from .graphdata import (GraphBatch, PatientGraph, Vocabulary, load_graphs,
                        make_batch, normalized_adjacency, write_graphs)
from .kernels import GramMatrix, KernelConfig, gram_matrix, kernel_rows
from .syndata import CohortConfig, EventStream, generate_cohort, label_outcome, stream_to_graph
from .trainer import Checkpoint, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "Checkpoint", "CohortConfig", "DataError", "EventStream",
    "GknError", "GramMatrix", "GraphBatch", "KernelConfig", "NumericError",
    "PatientGraph", "TrainConfig", "Vocabulary", "evaluate", "generate_cohort",
    "gram_matrix", "kernel_rows", "label_outcome", "load_graphs", "make_batch",
    "normalized_adjacency", "stream_to_graph", "train", "write_graphs",
]
