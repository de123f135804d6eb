"""Stacked GCN node embedding with hierarchical concatenation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NumericError


@dataclass
class EncoderParams:
    """Per-layer weights (vocab->d, then d->d) plus the concat projection ((t*d)->d)."""

    layer_weights: list[np.ndarray]
    concat_weight: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.layer_weights)

    @property
    def dim(self) -> int:
        return self.layer_weights[0].shape[1]

    @property
    def vocab_size(self) -> int:
        return self.layer_weights[0].shape[0]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(vocab_size: int, dim: int, num_layers: int,
                 rng: np.random.Generator) -> EncoderParams:
    if num_layers < 1:
        raise NumericError("encoder needs at least one layer")
    weights = [glorot(rng, vocab_size, dim)]
    weights += [glorot(rng, dim, dim) for _ in range(num_layers - 1)]
    return EncoderParams(layer_weights=weights,
                         concat_weight=glorot(rng, num_layers * dim, dim))


def gcn_layer(h, normadj, w) -> ad.Tensor:
    """One aggregation step: ReLU(normadj @ h @ w). No bias."""
    return ad.relu(ad.matmul(ad.spmm(normadj, ad.as_tensor(h)), w))


def encode(normadj, x, layer_weights, concat_weight) -> ad.Tensor:
    """Stack all layers on h0 = x, concatenate their outputs, and project.

    ``layer_weights``/``concat_weight`` may be Tensors (training) or plain
    arrays (inference).
    """
    if not layer_weights:
        raise NumericError("encode: need at least one layer weight")
    h = ad.as_tensor(x)
    per_layer = []
    for w in layer_weights:
        h = gcn_layer(h, normadj, ad.as_tensor(w))
        per_layer.append(h)
    stacked = per_layer[0] if len(per_layer) == 1 else ad.hstack(per_layer)
    return ad.relu(ad.matmul(stacked, ad.as_tensor(concat_weight)))
