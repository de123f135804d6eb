"""Graph-embedding distances, the exp(-dist^2) kernel, and gram matrices."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError, NumericError

VARIANTS = ("cosine", "euclidean")

GRAM_MAGIC = b"GRAM"
GRAM_VERSION = 1


@dataclass(frozen=True)
class KernelConfig:
    variant: str = "cosine"
    eps: float = 1e-12

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"unknown kernel variant {self.variant!r}, expected one of {VARIANTS}")


def distance(e1, e2, cfg: KernelConfig) -> float:
    """Cosine distance in [0, 2] or euclidean distance, between two vectors."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if cfg.variant == "cosine":
        denom = (np.linalg.norm(e1) + cfg.eps) * (np.linalg.norm(e2) + cfg.eps)
        return float(1.0 - float(e1 @ e2) / denom)
    return float(np.linalg.norm(e1 - e2))


def kernel(e1, e2, cfg: KernelConfig) -> float:
    d = distance(e1, e2, cfg)
    return float(np.exp(-d * d))


def _offdiag_mask(m: int) -> np.ndarray:
    mask = np.ones((m, m))
    np.fill_diagonal(mask, 0.0)
    return mask


def batch_matrices(g_emb, cfg: KernelConfig) -> tuple[ad.Tensor, ad.Tensor]:
    """Pairwise distance and kernel matrices over a batch of embeddings.

    Differentiable with respect to the embeddings. The diagonal is masked
    to exactly zero distance / unit kernel, and the inner product matrix is
    symmetrized so both outputs are exactly symmetric.
    """
    e = ad.as_tensor(g_emb)
    if e.data.ndim != 2:
        raise NumericError(f"batch_matrices: need (m, d) embeddings, got {e.shape}")
    m = e.shape[0]
    inner = ad.matmul(e, ad.transpose(e))
    inner = ad.mul(ad.add(inner, ad.transpose(inner)), 0.5)
    mask = _offdiag_mask(m)
    if cfg.variant == "cosine":
        norms = ad.add(ad.row_l2norm(e), cfg.eps)
        inv = ad.div(ad.as_tensor(np.ones(m)), norms)
        cos = ad.scale_cols(ad.scale_rows(inner, inv), inv)
        dist = ad.mul(ad.sub(ad.as_tensor(np.ones((m, m))), cos), mask)
        kern = ad.exp(ad.mul(ad.square(dist), -1.0))
    else:
        sq = ad.rowsum(ad.square(e))
        d2 = ad.relu(ad.add_rowvec(ad.add_colvec(ad.mul(inner, -2.0), sq), sq))
        d2 = ad.mul(d2, mask)
        # exp(-dist^2) never needs the square root; keep it off the tape
        kern = ad.exp(ad.mul(d2, -1.0))
        dist = ad.sqrt0(d2)
    return dist, kern


def gram_matrix(embeddings: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Plain-array kernel gram matrix for a set of embeddings."""
    _, kern = batch_matrices(np.asarray(embeddings, dtype=np.float64), cfg)
    return kern.data


def kernel_rows(queries: np.ndarray, references: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Kernel values between each query and each reference embedding."""
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(references, dtype=np.float64)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise NumericError(f"kernel_rows: shape mismatch {q.shape} vs {r.shape}")
    inner = q @ r.T
    if cfg.variant == "cosine":
        qn = np.linalg.norm(q, axis=1) + cfg.eps
        rn = np.linalg.norm(r, axis=1) + cfg.eps
        dist2 = (1.0 - inner / np.outer(qn, rn)) ** 2
    else:
        dist2 = np.maximum(
            np.sum(q * q, axis=1)[:, None] + np.sum(r * r, axis=1)[None, :] - 2.0 * inner, 0.0)
    return np.exp(-dist2)


@dataclass
class GramMatrix:
    """Symmetric kernel matrix plus the ids of the embeddings behind it."""

    values: np.ndarray
    ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def validate(self, psd_tol: float = -1e-6) -> None:
        k = self.values
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise NumericError(f"gram matrix is not square: {k.shape}")
        if np.abs(k - k.T).max() > 1e-10:
            raise NumericError("gram matrix is not symmetric")
        if np.abs(np.diag(k) - 1.0).max() > 1e-10:
            raise NumericError("gram matrix diagonal is not 1")
        if np.linalg.eigvalsh(k).min() < psd_tol:
            raise NumericError("gram matrix has an eigenvalue below the tolerance")


def save_gram(path, values: np.ndarray, ids=None) -> None:
    """Binary gram file: magic, version, m, then row-major float64 values.

    A ``.csv`` path selects the CSV alternative (ids as header row).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    m = values.shape[0]
    if str(path).endswith(".csv"):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(ids if ids is not None else [f"g{i}" for i in range(m)])
            writer.writerows(values.tolist())
        return
    with open(path, "wb") as fh:
        fh.write(GRAM_MAGIC)
        fh.write(struct.pack("<IQ", GRAM_VERSION, m))
        fh.write(values.tobytes())


def load_gram(path) -> GramMatrix:
    if str(path).endswith(".csv"):
        with open(path, "r", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        ids = rows[0]
        values = np.asarray([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
        return GramMatrix(values=values, ids=ids)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GRAM_MAGIC:
        raise DataError(f"{path}: not a gram file (bad magic)")
    version, m = struct.unpack_from("<IQ", blob, 4)
    if version != GRAM_VERSION:
        raise DataError(f"{path}: unsupported gram version {version}")
    expected = 16 + 8 * m * m
    if len(blob) != expected:
        raise DataError(f"{path}: truncated gram file ({len(blob)} bytes, expected {expected})")
    values = np.frombuffer(blob, dtype="<f8", offset=16).reshape(m, m).copy()
    return GramMatrix(values=values, ids=[f"g{i}" for i in range(m)])
