"""Squared-hinge primal SVM (per-batch auxiliary objective) and a dual
C-SVM on a precomputed kernel (final classifier)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError, NumericError


def to_signs(labels) -> np.ndarray:
    """Map {1: success, 0: failure} labels to {+1, -1}."""
    y = np.asarray(labels).reshape(-1)
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    return np.where(y == 1, 1.0, -1.0)


def from_sign(sign: float) -> int:
    return 1 if sign >= 0 else 0


@dataclass
class PrimalState:
    beta: np.ndarray
    C: float
    converged: bool
    iterations: int
    objective: float
    shift: float = 0.0          # diagonal repair applied when the gram was indefinite
    objective_trace: list[float] = field(default_factory=list)


def primal_objective(kmat: np.ndarray, y: np.ndarray, beta: np.ndarray, C: float) -> float:
    kb = kmat @ beta
    hinge = np.maximum(0.0, 1.0 - y * kb)
    return float(beta @ kb / C + hinge @ hinge)


def fit_primal(kmat: np.ndarray, y: np.ndarray, C: float = 1.0,
               max_iter: int = 100, tol: float = 1e-8) -> PrimalState:
    """Newton iterations on the squared-hinge primal in coefficient space.

    The active set is {i : y_i (K beta)_i < 1}; the Hessian is
    2K/C + 2 K_A K_A^T. A backtracking line search keeps the objective
    non-increasing. If the gram matrix is indefinite beyond -1e-6 the
    objective is unbounded below, so the smallest necessary diagonal shift
    is added first and recorded on the returned state.
    """
    kmat = np.asarray(kmat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = y.size
    if kmat.shape != (m, m):
        raise NumericError(f"fit_primal: gram shape {kmat.shape} does not match {m} labels")
    if not np.isfinite(kmat).all():
        raise NumericError("fit_primal: gram matrix has non-finite entries")
    if np.abs(kmat - kmat.T).max() > 1e-8:
        raise NumericError("fit_primal: gram matrix is not symmetric")
    if C <= 0:
        raise DataError("fit_primal: C must be positive")

    shift = 0.0
    min_eig = float(np.linalg.eigvalsh(kmat).min())
    if min_eig < -1e-6:
        shift = -min_eig + 1e-8
        kmat = kmat + shift * np.eye(m)
    elif min_eig < 0:
        kmat = kmat + 1e-8 * np.eye(m)

    beta = np.zeros(m)
    obj = primal_objective(kmat, y, beta, C)
    trace = [obj]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        kb = kmat @ beta
        margins = y * kb
        active = margins < 1.0
        grad = 2.0 * kb / C - 2.0 * kmat[:, active] @ (y[active] * (1.0 - margins[active]))
        if np.linalg.norm(grad) <= tol:
            converged = True
            break
        k_active = kmat[:, active]
        hess = 2.0 * kmat / C + 2.0 * (k_active @ k_active.T)
        try:
            step = np.linalg.solve(hess + 1e-12 * np.eye(m), -grad)
        except np.linalg.LinAlgError:
            step = -grad  # singular system: fall back to a gradient step
        descent = grad @ step
        if descent >= 0:
            step = -grad
            descent = -(grad @ grad)
        t = 1.0
        while t > 2.0 ** -40:
            cand = beta + t * step
            cand_obj = primal_objective(kmat, y, cand, C)
            if cand_obj <= obj + 1e-4 * t * descent:
                break
            t *= 0.5
        else:
            converged = np.linalg.norm(grad) <= max(tol, 1e-10)
            break
        beta = beta + t * step
        new_obj = primal_objective(kmat, y, beta, C)
        if new_obj > obj + 1e-12:
            raise NumericError("fit_primal: objective increased during a Newton step")
        obj = new_obj
        trace.append(obj)
    return PrimalState(beta=beta, C=C, converged=converged, iterations=iterations,
                       objective=obj, shift=shift, objective_trace=trace)


def svm_loss(kern, y: np.ndarray, beta: np.ndarray, C: float = 1.0) -> ad.Tensor:
    """Squared-hinge primal objective with frozen coefficients.

    Gradients flow only into the kernel matrix entries; ``beta`` and the
    labels are constants for the tape.
    """
    k = ad.as_tensor(kern)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    m = y.size
    if k.shape != (m, m):
        raise NumericError(f"svm_loss: gram shape {k.shape} does not match {m} labels")
    kb = ad.matvec(k, beta)
    quad = ad.mul(ad.dot(kb, ad.as_tensor(beta)), 1.0 / C)
    hinge = ad.relu(ad.sub(ad.as_tensor(np.ones(m)), ad.mul(kb, y)))
    return ad.add(quad, ad.sum_all(ad.square(hinge)))


@dataclass
class SvmModel:
    """Dual C-SVM on a precomputed kernel: support coefficients and bias."""

    dual_coef: np.ndarray       # alpha_i * y_i for support vectors
    support: np.ndarray         # training indices of the support vectors
    bias: float
    C: float
    n_train: int
    gram_sha256: str = ""


def fit_dual(kmat: np.ndarray, y: np.ndarray, C: float = 1.0, tol: float = 1e-3,
             max_iter: int = 200_000) -> SvmModel:
    """SMO with maximal-violating-pair selection on a precomputed kernel.

    Deterministic (no random pivots). Stops when the duality-gap measure
    m(alpha) - M(alpha) drops to ``tol``; the bias is the midpoint, so each
    KKT violation is at most tol/2.
    """
    kmat = np.asarray(kmat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m = y.size
    if kmat.shape != (m, m):
        raise NumericError(f"fit_dual: gram shape {kmat.shape} does not match {m} labels")
    if not np.isfinite(kmat).all():
        raise NumericError("fit_dual: gram matrix has non-finite entries")
    if len(np.unique(y)) < 2:
        raise DataError("fit_dual: need both classes present")
    if C <= 0:
        raise DataError("fit_dual: C must be positive")

    alpha = np.zeros(m)
    f = np.zeros(m)  # sum_j alpha_j y_j K_ij, maintained incrementally
    eps_box = 1e-12 * max(C, 1.0)
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise NumericError(f"fit_dual: no convergence within {max_iter} iterations")
        viol = y - f  # -E_i
        up = ((y > 0) & (alpha < C - eps_box)) | ((y < 0) & (alpha > eps_box))
        low = ((y < 0) & (alpha < C - eps_box)) | ((y > 0) & (alpha > eps_box))
        if not up.any() or not low.any():
            m_up = m_low = 0.0
            break
        i = np.flatnonzero(up)[np.argmax(viol[up])]
        j = np.flatnonzero(low)[np.argmin(viol[low])]
        m_up = viol[i]
        m_low = viol[j]
        if m_up - m_low <= tol:
            break
        eta = max(kmat[i, i] + kmat[j, j] - 2.0 * kmat[i, j], 1e-12)
        if y[i] != y[j]:
            lo_b = max(0.0, alpha[j] - alpha[i])
            hi_b = min(C, C + alpha[j] - alpha[i])
        else:
            lo_b = max(0.0, alpha[i] + alpha[j] - C)
            hi_b = min(C, alpha[i] + alpha[j])
        e_i = f[i] - y[i]
        e_j = f[j] - y[j]
        aj_new = np.clip(alpha[j] + y[j] * (e_i - e_j) / eta, lo_b, hi_b)
        delta_j = aj_new - alpha[j]
        if abs(delta_j) < 1e-15:
            break  # numerically stalled; bias still uses the last gap bounds
        ai_new = alpha[i] + y[i] * y[j] * (alpha[j] - aj_new)
        delta_i = ai_new - alpha[i]
        alpha[i], alpha[j] = ai_new, aj_new
        f += y[i] * delta_i * kmat[i] + y[j] * delta_j * kmat[j]

    bias = float((m_up + m_low) / 2.0)
    support = np.flatnonzero(alpha > eps_box)
    return SvmModel(dual_coef=alpha[support] * y[support], support=support,
                    bias=bias, C=C, n_train=m)


def decision_value(model: SvmModel, k_row: np.ndarray) -> float:
    k_row = np.asarray(k_row, dtype=np.float64).reshape(-1)
    if k_row.size != model.n_train:
        raise DataError(f"kernel row has {k_row.size} entries, expected {model.n_train}")
    return float(model.dual_coef @ k_row[model.support] + model.bias)


def predict(model: SvmModel, k_row: np.ndarray) -> tuple[int, float]:
    """Label in {1, 0} plus the raw decision value."""
    value = decision_value(model, k_row)
    return from_sign(value), value


def kkt_violation(model: SvmModel, kmat: np.ndarray, y: np.ndarray) -> float:
    """Largest KKT residual of a fitted dual model on its training gram."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    alpha = np.zeros(model.n_train)
    alpha[model.support] = model.dual_coef * y[model.support]
    fx = kmat @ (alpha * y) + model.bias
    margins = y * fx
    worst = 0.0
    for i in range(model.n_train):
        if alpha[i] <= 1e-9:
            worst = max(worst, 1.0 - margins[i])
        elif alpha[i] >= model.C - 1e-9:
            worst = max(worst, margins[i] - 1.0)
        else:
            worst = max(worst, abs(margins[i] - 1.0))
    return float(worst)


def top_support_vectors(model: SvmModel, k: int):
    """Support indices with the k largest |dual coefficients|; ties keep index order."""
    if k < 1:
        raise DataError("k must be at least 1")
    order = np.lexsort((model.support, -np.abs(model.dual_coef)))
    order = order[:min(k, len(order))]
    return [(int(model.support[i]), float(model.dual_coef[i])) for i in order]
