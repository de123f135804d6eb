"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the dense ops this model needs: matrix products against
dense and fixed sparse operands, pointwise nonlinearities, row and segment
reductions, sparsemax, and segmented softmax. The tape is built
define-by-run; ops never mutate their inputs, and replaying the same
composition on the same data reproduces values bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse as sp

from .errors import NumericError

_checked = True


def set_checked(on: bool) -> bool:
    """Toggle NaN/Inf guards at op boundaries; returns the previous setting."""
    global _checked
    prev = _checked
    _checked = bool(on)
    return prev


class Tensor:
    """Array node on the tape. `grad` is populated by backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        if self.data.ndim != 0:
            raise NumericError(f"backward() needs a scalar root, got shape {self.data.shape}")
        # iterative post-order: loss chains can outgrow the recursion limit
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # light operator sugar; everything else is a module-level function
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op: str) -> Tensor:
    if _checked and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _acc(t: Tensor, g) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise NumericError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g, shape):
    # only scalar (0-d) broadcasting is supported
    return g if g.shape == shape else np.asarray(g.sum())


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    _check_same_shape(a, b, "add")

    def back(g):
        _acc(a, _reduce_to(g, a.data.shape))
        _acc(b, _reduce_to(g, b.data.shape))

    return _node(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    _check_same_shape(a, b, "sub")

    def back(g):
        _acc(a, _reduce_to(g, a.data.shape))
        _acc(b, _reduce_to(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        s = float(b)

        def back_s(g):
            _acc(a, g * s)

        return _node(a.data * s, (a,), back_s, "mul")
    b = as_tensor(b)
    _check_same_shape(a, b, "mul")

    def back(g):
        _acc(a, _reduce_to(g * b.data, a.data.shape))
        _acc(b, _reduce_to(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    _check_same_shape(a, b, "div")

    def back(g):
        _acc(a, _reduce_to(g / b.data, a.data.shape))
        _acc(b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(a.data / b.data, (a, b), back, "div")


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise NumericError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def back(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), back, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        _acc(a, g.T)

    return _node(a.data.T, (a,), back, "transpose")


def spmm(s, a) -> Tensor:
    """Fixed sparse matrix times dense tensor; no gradient w.r.t. the sparse side."""
    a = as_tensor(a)
    if not sp.issparse(s):
        raise NumericError("spmm: left operand must be a scipy sparse matrix")
    if s.shape[1] != a.shape[0]:
        raise NumericError(f"spmm: shape mismatch {s.shape} vs {a.shape}")
    st = s.T.tocsr()

    def back(g):
        _acc(a, st @ g)

    return _node(s @ a.data, (a,), back, "spmm")


def matvec(a, v) -> Tensor:
    """Matrix (tensor) times vector; the vector may be a tensor or a constant."""
    a = as_tensor(a)
    v = as_tensor(v)
    if a.data.ndim != 2 or v.data.ndim != 1 or a.shape[1] != v.shape[0]:
        raise NumericError(f"matvec: shape mismatch {a.shape} vs {v.shape}")

    def back(g):
        _acc(a, np.outer(g, v.data))
        _acc(v, a.data.T @ g)

    return _node(a.data @ v.data, (a, v), back, "matvec")


def dot(u, v) -> Tensor:
    u = as_tensor(u)
    v = as_tensor(v)
    if u.shape != v.shape or u.data.ndim != 1:
        raise NumericError(f"dot: shape mismatch {u.shape} vs {v.shape}")

    def back(g):
        _acc(u, g * v.data)
        _acc(v, g * u.data)

    return _node(np.asarray(u.data @ v.data), (u, v), back, "dot")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at the kink

    def back(g):
        _acc(a, g * mask)

    return _node(np.maximum(a.data, 0), (a,), back, "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def back(g):
        _acc(a, g * (1.0 - out * out))

    return _node(out, (a,), back, "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def back(g):
        _acc(a, g * out)

    return _node(out, (a,), back, "exp")


def square(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        _acc(a, g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), back, "square")


def sqrt0(a) -> Tensor:
    """Square root clamped at zero, with subgradient 0 at the origin."""
    a = as_tensor(a)
    if _checked and (a.data < -1e-9).any():
        raise NumericError("sqrt0: input has negative entries beyond rounding")
    out = np.sqrt(np.maximum(a.data, 0.0))

    def back(g):
        _acc(a, np.divide(g, 2.0 * out, out=np.zeros_like(out), where=out > 0))

    return _node(out, (a,), back, "sqrt0")


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        _acc(a, np.full_like(a.data, float(g)))

    return _node(np.asarray(a.data.sum()), (a,), back, "sum_all")


def rowsum(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise NumericError(f"rowsum: need a matrix, got shape {a.shape}")

    def back(g):
        _acc(a, np.repeat(g[:, None], a.shape[1], axis=1))

    return _node(a.data.sum(axis=1), (a,), back, "rowsum")


def hstack(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = [p.shape[1] for p in parts]

    def back(g):
        off = 0
        for p, w in zip(parts, widths):
            _acc(p, g[:, off:off + w])
            off += w

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), back, "hstack")


def scale_rows(a, v) -> Tensor:
    """Multiply row i of a matrix by v[i]."""
    a = as_tensor(a)
    v = as_tensor(v)
    if a.shape[0] != v.shape[0] or v.data.ndim != 1:
        raise NumericError(f"scale_rows: shape mismatch {a.shape} vs {v.shape}")

    def back(g):
        _acc(a, g * v.data[:, None])
        _acc(v, (g * a.data).sum(axis=1))

    return _node(a.data * v.data[:, None], (a, v), back, "scale_rows")


def scale_cols(a, v) -> Tensor:
    """Multiply column j of a matrix by v[j]."""
    a = as_tensor(a)
    v = as_tensor(v)
    if a.shape[1] != v.shape[0] or v.data.ndim != 1:
        raise NumericError(f"scale_cols: shape mismatch {a.shape} vs {v.shape}")

    def back(g):
        _acc(a, g * v.data[None, :])
        _acc(v, (g * a.data).sum(axis=0))

    return _node(a.data * v.data[None, :], (a, v), back, "scale_cols")


def add_rowvec(a, v) -> Tensor:
    """Add v to every row of a matrix."""
    a = as_tensor(a)
    v = as_tensor(v)
    if a.shape[1] != v.shape[0] or v.data.ndim != 1:
        raise NumericError(f"add_rowvec: shape mismatch {a.shape} vs {v.shape}")

    def back(g):
        _acc(a, g)
        _acc(v, g.sum(axis=0))

    return _node(a.data + v.data[None, :], (a, v), back, "add_rowvec")


def add_colvec(a, v) -> Tensor:
    """Add v[i] to every entry of row i."""
    a = as_tensor(a)
    v = as_tensor(v)
    if a.shape[0] != v.shape[0] or v.data.ndim != 1:
        raise NumericError(f"add_colvec: shape mismatch {a.shape} vs {v.shape}")

    def back(g):
        _acc(a, g)
        _acc(v, g.sum(axis=1))

    return _node(a.data + v.data[:, None], (a, v), back, "add_colvec")


def outer(u, v) -> Tensor:
    u = as_tensor(u)
    v = as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise NumericError(f"outer: need vectors, got {u.shape} and {v.shape}")

    def back(g):
        _acc(u, g @ v.data)
        _acc(v, g.T @ u.data)

    return _node(np.outer(u.data, v.data), (u, v), back, "outer")


def l2norm(a) -> Tensor:
    """Frobenius norm of a matrix or euclidean norm of a vector."""
    return sqrt0(sum_all(square(a)))


def row_l2norm(a) -> Tensor:
    return sqrt0(rowsum(square(a)))


def sparsemax(a) -> Tensor:
    """Row-wise euclidean projection onto the probability simplex.

    For each row z: sort descending, find the largest k with
    1 + k*z_(k) > sum of the top-k entries, set tau = (topk_sum - 1)/k and
    output max(z - tau, 0). Backward uses the generalized Jacobian, which
    is uniform over the support set.
    """
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise NumericError(f"sparsemax: need a matrix, got shape {a.shape}")
    n, s = a.shape
    if s == 0:
        raise NumericError("sparsemax: empty rows")
    z = a.data
    z_sorted = np.sort(z, axis=1)[:, ::-1]
    topk = np.cumsum(z_sorted, axis=1) - 1.0
    ks = np.arange(1, s + 1)
    support = z_sorted - topk / ks > 0  # prefix-true per row
    k = support.sum(axis=1)
    tau = topk[np.arange(n), k - 1] / k
    out = np.maximum(z - tau[:, None], 0.0)

    def back(g):
        mask = out > 0
        cnt = mask.sum(axis=1, keepdims=True)
        gsum = (g * mask).sum(axis=1, keepdims=True)
        _acc(a, np.where(mask, g - gsum / cnt, 0.0))

    return _node(out, (a,), back, "sparsemax")


def softmax(a, segments=None) -> Tensor:
    """Softmax over a vector, independently within each segment if given."""
    a = as_tensor(a)
    if a.data.ndim != 1:
        raise NumericError(f"softmax: need a vector, got shape {a.shape}")
    n = a.shape[0]
    if segments is None:
        seg = np.zeros(n, dtype=np.intp)
        num = 1
    else:
        seg = np.asarray(segments, dtype=np.intp)
        if seg.shape != (n,):
            raise NumericError(f"softmax: segment shape {seg.shape} does not match {a.shape}")
        num = int(seg.max()) + 1 if n else 0
    mx = np.full(num, -np.inf)
    np.maximum.at(mx, seg, a.data)
    e = np.exp(a.data - mx[seg])
    den = np.zeros(num)
    np.add.at(den, seg, e)
    out = e / den[seg]

    def back(g):
        dots = np.zeros(num)
        np.add.at(dots, seg, out * g)
        _acc(a, out * (g - dots[seg]))

    return _node(out, (a,), back, "softmax")


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum matrix rows within each segment."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.intp)
    if a.data.ndim != 2 or seg.shape != (a.shape[0],):
        raise NumericError(f"segment_sum: shape mismatch {a.shape} vs segments {seg.shape}")
    res = np.zeros((num_segments, a.shape[1]), dtype=a.data.dtype)
    np.add.at(res, seg, a.data)

    def back(g):
        _acc(a, g[seg])

    return _node(res, (a,), back, "segment_sum")


@dataclass
class GradCheckReport:
    rel_errors: dict[str, float]
    max_rel_error: float
    tolerance: float
    passed: bool


def gradcheck(build_loss, params, eps: float = 1e-5, tolerance: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of a scalar loss against central finite differences.

    `build_loss` maps {name: Tensor} to a scalar Tensor and must be
    deterministic; two forward passes are compared bit-for-bit to detect
    hidden state. The relative error per parameter block is
    ||g_tape - g_fd||_inf / (||g_tape||_inf + ||g_fd||_inf + 1e-12).
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}  # contiguous copies

    def forward(arrays):
        tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        out = build_loss(tensors)
        if out.data.ndim != 0:
            raise NumericError("gradcheck: loss must be scalar")
        return out, tensors

    out1, tensors = forward(base)
    out2, _ = forward(base)
    if out1.data.tobytes() != out2.data.tobytes():
        raise NumericError("gradcheck: loss function is not deterministic across forward passes")
    out1.backward()

    rel_errors = {}
    for name, arr in base.items():
        analytic = tensors[name].grad
        analytic = np.zeros_like(arr) if analytic is None else analytic
        fd = np.zeros_like(arr).ravel()
        flat = arr.ravel()
        for idx in range(arr.size):
            saved = flat[idx]
            flat[idx] = saved + eps
            hi = forward(base)[0].item()
            flat[idx] = saved - eps
            lo = forward(base)[0].item()
            flat[idx] = saved
            fd[idx] = (hi - lo) / (2.0 * eps)
        fd = fd.reshape(arr.shape)
        num = np.abs(analytic - fd).max() if arr.size else 0.0
        den = np.abs(analytic).max() + np.abs(fd).max() + 1e-12 if arr.size else 1.0
        rel_errors[name] = float(num / den)
    max_rel = max(rel_errors.values()) if rel_errors else 0.0
    return GradCheckReport(rel_errors, max_rel, tolerance, max_rel <= tolerance)
