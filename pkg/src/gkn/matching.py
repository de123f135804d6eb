"""Node-to-global-cluster attention: assignment, query, and pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoder import glorot
from .errors import NumericError

NORM_EPS = 1e-12


@dataclass
class ClusterParams:
    """Trainable global node cluster matrix, one d-dim row per cluster."""

    clusters: np.ndarray

    @property
    def num_clusters(self) -> int:
        return self.clusters.shape[0]


def init_clusters(num_clusters: int, dim: int, rng: np.random.Generator) -> ClusterParams:
    if num_clusters < 1:
        raise NumericError("need at least one cluster")
    return ClusterParams(clusters=glorot(rng, num_clusters, dim))


def assign(h_final, clusters) -> ad.Tensor:
    """Soft cluster membership per node: sparsemax(relu(h @ clusters^T))."""
    h = ad.as_tensor(h_final)
    m = ad.as_tensor(clusters)
    if h.shape[1] != m.shape[1]:
        raise NumericError(f"assign: feature dims differ, {h.shape} vs {m.shape}")
    return ad.sparsemax(ad.relu(ad.matmul(h, ad.transpose(m))))


def query(assignment, clusters) -> ad.Tensor:
    """Reconstruct each node from its memberships: tanh(assignment @ clusters)."""
    return ad.tanh(ad.matmul(ad.as_tensor(assignment), ad.as_tensor(clusters)))


def recon_loss(h_final, queried) -> ad.Tensor:
    """Frobenius norm (unsquared) of the reconstruction residual."""
    return ad.l2norm(ad.sub(ad.as_tensor(h_final), ad.as_tensor(queried)))


def _row_cosine(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    num = ad.rowsum(ad.mul(a, b))
    den = ad.mul(ad.add(ad.row_l2norm(a), NORM_EPS), ad.add(ad.row_l2norm(b), NORM_EPS))
    return ad.div(num, den)


def pool(h_final, queried, segments, num_graphs: int) -> tuple[ad.Tensor, ad.Tensor]:
    """Attention pooling: per-graph softmax over node/query cosine scores.

    Returns (alpha, graph_embeddings); alpha sums to 1 within each graph
    and the embedding is the alpha-weighted sum of node embeddings.
    """
    h = ad.as_tensor(h_final)
    q = ad.as_tensor(queried)
    if h.shape != q.shape:
        raise NumericError(f"pool: shape mismatch {h.shape} vs {q.shape}")
    alpha = ad.softmax(_row_cosine(h, q), segments=segments)
    g_emb = ad.segment_sum(ad.scale_rows(h, alpha), segments, num_graphs)
    return alpha, g_emb


def match_matrix(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Pairwise cluster-membership agreement between two graphs' nodes."""
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.ndim != 2 or s2.ndim != 2 or s1.shape[1] != s2.shape[1]:
        raise NumericError(f"match_matrix: cluster counts differ, {s1.shape} vs {s2.shape}")
    return s1 @ s2.T


def hard_clusters(assignment: np.ndarray) -> np.ndarray:
    """Hard membership per node: the largest dimension of its assignment row."""
    return np.argmax(np.asarray(assignment), axis=1)


def diagonal_match_rate(matrix: np.ndarray) -> float:
    """Fraction of rows whose unique best match is their own index.

    Rows that tie with an off-diagonal entry do not count: a node matches
    itself only when it beats every other candidate strictly.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape[0] != m.shape[1]:
        raise NumericError(f"diagonal_match_rate: matrix is not square, {m.shape}")
    n = m.shape[0]
    if n == 0:
        return 0.0
    off = m.copy()
    np.fill_diagonal(off, -np.inf)
    return float(np.mean(np.diag(m) > off.max(axis=1)))
