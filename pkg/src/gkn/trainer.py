"""Mini-batch training loop: forward to the batch gram, fit-and-freeze the
per-batch SVM coefficients, backpropagate the combined loss, Adam-step; a
dual C-SVM on the full training gram becomes the final classifier."""

from __future__ import annotations

import copy
import csv
import hashlib
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderParams, encode, init_encoder
from .errors import DataError, NumericError
from .graphdata import GraphBatch, Vocabulary, make_batch, normalized_adjacency
from .kernels import KernelConfig, batch_matrices, gram_matrix, kernel_rows
from .losses import LossWeights, total_loss
from .matching import ClusterParams, assign, init_clusters, pool, query, recon_loss
from .metrics import classification_report
from .svm import SvmModel, decision_value, fit_dual, fit_primal, to_signs

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "batch", "contrastive", "alignment", "recon", "svm", "total", "val_loss")


@dataclass
class TrainConfig:
    num_layers: int = 6
    dim: int = 256
    num_clusters: int = 256
    margin: float = 1.0
    batch_size: int = 128
    learning_rate: float = 5e-4
    epochs: int = 10
    svm_c: float = 1.0
    kernel_variant: str = "cosine"
    seed: int = 0
    patience: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    edge_transform: str = "log1p"
    svm_max_iter: int = 100
    svm_tol: float = 1e-8
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        for name in ("num_layers", "dim", "num_clusters", "batch_size", "svm_max_iter"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be at least 1")
        if self.epochs < 0 or self.margin <= 0 or self.learning_rate <= 0 or self.svm_c <= 0:
            raise DataError("margin, learning rate, and C must be positive; epochs non-negative")
        KernelConfig(variant=self.kernel_variant)  # validates the variant

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(variant=self.kernel_variant)


@dataclass
class Checkpoint:
    config: TrainConfig
    encoder: EncoderParams
    clusters: ClusterParams
    vocab_codes: list[str]
    vocab_sha256: str
    svm: SvmModel
    train_embeddings: np.ndarray
    train_ids: list[str]
    train_labels: np.ndarray
    gram_sha256: str = ""
    gram_min_eig: float = 0.0
    best_epoch: int = 0


def init_params(vocab_size: int, cfg: TrainConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    enc = init_encoder(vocab_size, cfg.dim, cfg.num_layers, rng)
    clu = init_clusters(cfg.num_clusters, cfg.dim, rng)
    params = {f"layer{i}": w for i, w in enumerate(enc.layer_weights)}
    params["concat"] = enc.concat_weight
    params["clusters"] = clu.clusters
    return params


def _as_tensors(params: dict[str, np.ndarray], requires_grad: bool) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def forward_batch(batch: GraphBatch, tensors: dict[str, ad.Tensor], cfg: TrainConfig):
    """Embeddings and loss ingredients for one block-diagonal batch."""
    normadj = normalized_adjacency(batch)
    layer_ws = [tensors[f"layer{i}"] for i in range(cfg.num_layers)]
    h_final = encode(normadj, batch.x, layer_ws, tensors["concat"])
    assignment = assign(h_final, tensors["clusters"])
    queried = query(assignment, tensors["clusters"])
    recon = recon_loss(h_final, queried)
    alpha, g_emb = pool(h_final, queried, batch.segments, batch.num_graphs)
    dist, kern = batch_matrices(g_emb, cfg.kernel_config())
    return {"h_final": h_final, "assignment": assignment, "alpha": alpha,
            "g_emb": g_emb, "dist": dist, "kern": kern, "recon": recon}


def batch_loss(batch: GraphBatch, tensors: dict[str, ad.Tensor], cfg: TrainConfig):
    """Forward pass plus the combined objective with freshly frozen SVM weights."""
    fwd = forward_batch(batch, tensors, cfg)
    y_signs = to_signs(batch.labels)
    state = fit_primal(fwd["kern"].data, y_signs, C=cfg.svm_c,
                       max_iter=cfg.svm_max_iter, tol=cfg.svm_tol)
    total, report = total_loss(fwd["dist"], fwd["kern"], fwd["recon"], y_signs,
                               state.beta, margin=cfg.margin, svm_c=cfg.svm_c,
                               weights=cfg.weights)
    return total, report, state


def _batches(graphs, size: int, order=None):
    idx = np.arange(len(graphs)) if order is None else np.asarray(order)
    for start in range(0, len(idx), size):
        chunk = idx[start:start + size]
        yield [graphs[i] for i in chunk]


def _dataset_loss(graphs, params, vocab_size: int, cfg: TrainConfig) -> float:
    """Mean batch loss over a dataset in fixed order; single-class batches skipped."""
    tensors = _as_tensors(params, requires_grad=False)
    totals = []
    for chunk in _batches(graphs, cfg.batch_size):
        labels = {g.label for g in chunk}
        if len(labels) < 2:
            continue
        batch = make_batch(chunk, vocab_size, transform=cfg.edge_transform)
        total, _, _ = batch_loss(batch, tensors, cfg)
        totals.append(total.item())
    return float(np.mean(totals)) if totals else float("inf")


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        for name in sorted(params):
            g = grads.get(name)
            if g is None:
                continue
            self.m[name] = c.adam_beta1 * self.m[name] + (1 - c.adam_beta1) * g
            self.v[name] = c.adam_beta2 * self.v[name] + (1 - c.adam_beta2) * (g * g)
            m_hat = self.m[name] / (1 - c.adam_beta1 ** self.t)
            v_hat = self.v[name] / (1 - c.adam_beta2 ** self.t)
            params[name] = params[name] - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


def embed_graphs(graphs, vocab_size: int, params: dict[str, np.ndarray],
                 cfg: TrainConfig, chunk: int = 256) -> np.ndarray:
    """Graph-level embeddings under fixed parameters, computed in chunks."""
    tensors = _as_tensors(params, requires_grad=False)
    out = []
    for part in _batches(graphs, chunk):
        batch = make_batch(part, vocab_size, transform=cfg.edge_transform)
        out.append(forward_batch(batch, tensors, cfg)["g_emb"].data)
    return np.concatenate(out, axis=0)


def forward_graph(graph, vocab_size: int, params: dict[str, np.ndarray], cfg: TrainConfig):
    """Single-graph forward returning plain arrays (assignment, alpha, embedding)."""
    tensors = _as_tensors(params, requires_grad=False)
    batch = make_batch([graph], vocab_size, transform=cfg.edge_transform)
    fwd = forward_batch(batch, tensors, cfg)
    return {"assignment": fwd["assignment"].data, "alpha": fwd["alpha"].data,
            "embedding": fwd["g_emb"].data[0]}


def train(train_graphs, val_graphs, vocab: Vocabulary, cfg: TrainConfig):
    """Run the full procedure; returns (Checkpoint, training-log rows).

    Deterministic for a fixed seed: parameter init, batch shuffling, and
    every numeric step reuse one seeded generator. Early stopping keeps the
    parameters of the best validation epoch.
    """
    if not train_graphs or not val_graphs:
        raise DataError("train: both splits must be non-empty")
    if len({g.label for g in train_graphs}) < 2:
        raise DataError("train: training data needs both classes")

    vocab_size = len(vocab)
    params = init_params(vocab_size, cfg)
    rng = np.random.default_rng(cfg.seed + 1)  # batch shuffling stream
    adam = _Adam(params, cfg)
    rows: list[dict] = []

    best_val = float("inf")
    best_params = copy.deepcopy(params)
    best_epoch = 0
    bad_epochs = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_graphs))
        for bi, chunk in enumerate(_batches(train_graphs, cfg.batch_size, order)):
            if len({g.label for g in chunk}) < 2:
                log.warning("epoch %d batch %d: single-class batch skipped", epoch, bi)
                continue
            batch = make_batch(chunk, vocab_size, transform=cfg.edge_transform)
            tensors = _as_tensors(params, requires_grad=True)
            try:
                total, report, _ = batch_loss(batch, tensors, cfg)
                total.backward()
            except NumericError as err:
                raise NumericError(f"epoch {epoch} batch {bi}: {err}") from None
            grads = {k: t.grad for k, t in tensors.items() if t.grad is not None}
            adam.step(params, grads)
            rows.append({"epoch": epoch, "batch": bi, "contrastive": report.contrastive,
                         "alignment": report.alignment, "recon": report.recon,
                         "svm": report.svm, "total": report.total, "val_loss": ""})
        val = _dataset_loss(val_graphs, params, vocab_size, cfg)
        rows.append({"epoch": epoch, "batch": -1, "contrastive": "", "alignment": "",
                     "recon": "", "svm": "", "total": "", "val_loss": val})
        if val < best_val:
            best_val = val
            best_params = copy.deepcopy(params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                log.info("early stop after epoch %d (best epoch %d)", epoch, best_epoch)
                break

    ckpt = finalize_checkpoint(best_params, train_graphs, vocab, cfg, best_epoch)
    return ckpt, rows


def finalize_checkpoint(params: dict[str, np.ndarray], train_graphs, vocab: Vocabulary,
                        cfg: TrainConfig, best_epoch: int) -> Checkpoint:
    """Embed the training set, fit the final dual SVM, and pack everything."""
    vocab_size = len(vocab)
    embeddings = embed_graphs(train_graphs, vocab_size, params, cfg)
    gram = gram_matrix(embeddings, cfg.kernel_config())
    min_eig = float(np.linalg.eigvalsh(gram).min())
    fit_gram = gram
    if min_eig < -1e-6:
        # indefinite gram (cosine variant): clip the spectrum for the dual fit
        vals, vecs = np.linalg.eigh(gram)
        fit_gram = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        log.info("training gram min eigenvalue %.3e; spectrum clipped for the dual fit", min_eig)
    labels = np.asarray([g.label for g in train_graphs], dtype=np.intp)
    model = fit_dual(fit_gram, to_signs(labels), C=cfg.svm_c, tol=1e-3)
    model.gram_sha256 = hashlib.sha256(np.ascontiguousarray(gram).tobytes()).hexdigest()

    enc = EncoderParams(layer_weights=[params[f"layer{i}"] for i in range(cfg.num_layers)],
                        concat_weight=params["concat"])
    clu = ClusterParams(clusters=params["clusters"])
    return Checkpoint(config=cfg, encoder=enc, clusters=clu,
                      vocab_codes=list(vocab.codes), vocab_sha256=vocab.sha256(),
                      svm=model, train_embeddings=embeddings,
                      train_ids=[g.graph_id for g in train_graphs],
                      train_labels=labels, gram_sha256=model.gram_sha256,
                      gram_min_eig=min_eig, best_epoch=best_epoch)


def evaluate(ckpt: Checkpoint, graphs, vocab: Vocabulary) -> dict:
    """Metrics plus per-graph decisions for labeled graphs under a checkpoint."""
    if vocab.sha256() != ckpt.vocab_sha256:
        raise DataError("vocabulary hash does not match the checkpoint")
    if not graphs:
        raise DataError("evaluate: empty graph list")
    params = checkpoint_params(ckpt)
    embeddings = embed_graphs(graphs, len(vocab), params, ckpt.config)
    rows = kernel_rows(embeddings, ckpt.train_embeddings, ckpt.config.kernel_config())
    decisions = np.asarray([decision_value(ckpt.svm, row) for row in rows])
    predictions = (decisions >= 0).astype(int)
    labels = np.asarray([g.label for g in graphs])
    report = classification_report(labels, predictions, decisions)
    report["decisions"] = decisions.tolist()
    report["predictions"] = predictions.tolist()
    report["graph_ids"] = [g.graph_id for g in graphs]
    return report


def checkpoint_params(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    params = {f"layer{i}": w for i, w in enumerate(ckpt.encoder.layer_weights)}
    params["concat"] = ckpt.encoder.concat_weight
    params["clusters"] = ckpt.clusters.clusters
    return params


def save(ckpt: Checkpoint, path) -> None:
    arrays = {k: v for k, v in checkpoint_params(ckpt).items()}
    arrays["train_embeddings"] = ckpt.train_embeddings
    arrays["train_labels"] = ckpt.train_labels.astype(np.int64)
    arrays["svm_support"] = ckpt.svm.support.astype(np.int64)
    arrays["svm_dual_coef"] = ckpt.svm.dual_coef
    cfg = asdict(ckpt.config)
    meta = {
        "kind": "gkn-checkpoint",
        "dtype": "float64",
        "config": cfg,
        "vocab_codes": ckpt.vocab_codes,
        "vocab_sha256": ckpt.vocab_sha256,
        "svm_bias": ckpt.svm.bias,
        "svm_c": ckpt.svm.C,
        "train_ids": ckpt.train_ids,
        "gram_sha256": ckpt.gram_sha256,
        "gram_min_eig": ckpt.gram_min_eig,
        "best_epoch": ckpt.best_epoch,
    }
    save_checkpoint(path, arrays, meta)


def load(path, expect_dtype: str = "float64") -> Checkpoint:
    arrays, meta = load_checkpoint(path, expect_dtype=expect_dtype)
    if meta.get("kind") != "gkn-checkpoint":
        raise DataError(f"{path}: not a model checkpoint")
    cfg = TrainConfig(**meta["config"])
    enc = EncoderParams(layer_weights=[arrays[f"layer{i}"] for i in range(cfg.num_layers)],
                        concat_weight=arrays["concat"])
    clu = ClusterParams(clusters=arrays["clusters"])
    svm = SvmModel(dual_coef=arrays["svm_dual_coef"], support=arrays["svm_support"],
                   bias=float(meta["svm_bias"]), C=float(meta["svm_c"]),
                   n_train=len(meta["train_ids"]), gram_sha256=meta["gram_sha256"])
    return Checkpoint(config=cfg, encoder=enc, clusters=clu,
                      vocab_codes=list(meta["vocab_codes"]),
                      vocab_sha256=meta["vocab_sha256"], svm=svm,
                      train_embeddings=arrays["train_embeddings"],
                      train_ids=list(meta["train_ids"]),
                      train_labels=arrays["train_labels"].astype(np.intp),
                      gram_sha256=meta["gram_sha256"],
                      gram_min_eig=float(meta.get("gram_min_eig", 0.0)),
                      best_epoch=int(meta["best_epoch"]))


def write_training_log(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
