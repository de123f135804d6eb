"""Batch objectives: contrastive, kernel alignment, and the combined loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DataError, NumericError
from .svm import svm_loss


@dataclass(frozen=True)
class LossWeights:
    contrastive: float = 1.0
    alignment: float = 1.0
    recon: float = 1.0
    svm: float = 1.0


@dataclass
class LossReport:
    contrastive: float
    alignment: float
    recon: float
    svm: float
    total: float


def label_agreement(labels) -> np.ndarray:
    """Binary matrix with 1 where the two graphs share a label."""
    y = np.asarray(labels).reshape(-1)
    return (y[:, None] == y[None, :]).astype(np.float64)


def contrastive(dist, agreement: np.ndarray, margin: float = 1.0) -> ad.Tensor:
    """Mean over ordered pairs: pull same-label distances to zero, push
    different-label distances beyond the margin (squared hinge)."""
    d = ad.as_tensor(dist)
    m = d.shape[0]
    if agreement.shape != (m, m):
        raise NumericError(f"contrastive: shapes {d.shape} vs {agreement.shape}")
    if margin <= 0:
        raise DataError(f"contrastive margin must be positive, got {margin}")
    push = ad.mul(ad.square(ad.relu(ad.sub(ad.as_tensor(np.full((m, m), float(margin))), d))),
                  1.0 - agreement)
    pull = ad.mul(d, agreement)
    return ad.mul(ad.add(ad.sum_all(push), ad.sum_all(pull)), 1.0 / m)


def alignment(kern, agreement: np.ndarray) -> ad.Tensor:
    """Frobenius-cosine disagreement between the gram matrix and the label
    agreement matrix, scaled by 1/batch."""
    k = ad.as_tensor(kern)
    m = k.shape[0]
    if agreement.shape != (m, m):
        raise NumericError(f"alignment: shapes {k.shape} vs {agreement.shape}")
    if not agreement.any():
        raise NumericError("alignment: label agreement matrix is all zero")
    if not np.abs(k.data).sum() > 0:
        raise NumericError("alignment: undefined for an all-zero kernel matrix")
    ky = ad.sum_all(ad.mul(k, agreement))
    kk = ad.sum_all(ad.square(k))
    yy = float((agreement * agreement).sum())
    ratio = ad.div(ky, ad.sqrt0(ad.mul(kk, yy)))
    radicand = ad.relu(ad.add(ad.mul(ratio, -2.0), 2.0))  # clamp rounding below 0
    return ad.mul(ad.sqrt0(radicand), 1.0 / m)


def total_loss(dist, kern, recon, labels_signed: np.ndarray, beta: np.ndarray,
               margin: float = 1.0, svm_c: float = 1.0,
               weights: LossWeights = LossWeights()) -> tuple[ad.Tensor, LossReport]:
    """Combine the four terms with the given weights (all default 1).

    ``beta`` must already be fitted on this batch's detached gram matrix
    and is treated as a constant: gradients reach the encoder only through
    the distance/kernel/reconstruction tensors.
    """
    agreement = label_agreement(labels_signed > 0)
    terms = {
        "contrastive": contrastive(dist, agreement, margin),
        "alignment": alignment(kern, agreement),
        "recon": ad.as_tensor(recon),
        "svm": svm_loss(kern, labels_signed, beta, svm_c),
    }
    for name, t in terms.items():
        if not np.isfinite(t.data):
            raise NumericError(f"loss term {name!r} is not finite")
    total = None
    for name, t in terms.items():
        weighted = ad.mul(t, float(getattr(weights, name)))
        total = weighted if total is None else ad.add(total, weighted)
    report = LossReport(
        contrastive=terms["contrastive"].item(),
        alignment=terms["alignment"].item(),
        recon=terms["recon"].item(),
        svm=terms["svm"].item(),
        total=total.item(),
    )
    return total, report
