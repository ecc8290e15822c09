"""
Reverse-mode automatic differentiation for ECGLens
Dense float64 tensors plus the layer primitives the residual network needs
"""
import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel
from scipy.special import expit

from .errors import ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]

_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class TapeNode:
    """One recorded operation: tag, input tensors and the backward rule."""
    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...],
                 backward_fn: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]):
        self.op = op
        self.inputs = inputs
        # Saved intermediates live in the closure.
        self.backward_fn = backward_fn


class Tensor:
    """
    n-dimensional float64 array with optional gradient accumulation.

    Leaves created with requires_grad=True collect d(loss)/d(leaf) in .grad
    when backward() is called on a scalar that depends on them.
    """
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 _node: Optional[TapeNode] = None, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node = _node
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- backprop ---------------------------------------------------------
    def backward(self):
        """
        Accumulate d(self)/d(leaf) into every requires_grad leaf.

        Raises:
            ShapeError: If self is not a scalar
            RuntimeError: If self does not depend on any requires_grad leaf
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar tensor, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad; nothing to differentiate")

        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._node is not None:
                for parent in node._node.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._node is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._node.inputs, node._node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(value: Union["Tensor", ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], op: str,
            backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    requires = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    node = TapeNode(op, inputs, backward_fn) if requires else None
    return Tensor(data, requires_grad=requires, _node=node)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ============================================================================
# Elementwise & Shape Operations
# ============================================================================

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _result(a.data + b.data, (a, b), "add", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _result(a.data * b.data, (a, b), "mul", backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)
    return _result(a.data ** exponent, (a,), "pow", backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _result(out, (a,), "sum", backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(a, (a.shape[0], -1))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _result(a.data[index], (a,), "getitem", backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """
    Concatenate along axis.

    Raises:
        ShapeError: If shapes disagree off the concatenation axis
    """
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat shape mismatch: {ref} vs {t.shape} on axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(part if t.requires_grad else None
                     for t, part in zip(tensors, np.split(g, splits, axis=axis)))
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", backward)


# ============================================================================
# Layer Primitives
# ============================================================================

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _result(s, (x,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def conv_output_length(length: int, kernel_size: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel_size) // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """
    1D cross-correlation (no kernel flip) plus bias.

    Args:
        x: Input [B, Cin, L]
        w: Kernel [Cout, Cin, K]
        b: Bias [Cout] or None
        stride: Step between windows (>= 1)
        padding: Zeros added on both ends (>= 0)

    Returns:
        Tensor [B, Cout, Lout] with Lout = floor((L + 2p - K) / stride) + 1

    Raises:
        ShapeError: On rank/channel mismatch or non-positive Lout
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x [B,C,L] and w [Cout,Cin,K], got {x.shape} and {w.shape}")
    batch, c_in, length = x.shape
    c_out, w_in, k = w.shape
    if w_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {c_in}, kernel expects {w_in}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv1d bias must have shape ({c_out},), got {b.shape}")
    if k < 1 or stride < 1 or padding < 0:
        raise ShapeError(f"invalid conv1d geometry K={k} stride={stride} padding={padding}")
    l_out = conv_output_length(length, k, stride, padding)
    if l_out < 1:
        raise ShapeError(f"conv1d output length {l_out} < 1 (L={length}, K={k}, stride={stride}, padding={padding})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :l_out]  # [B, Cin, Lout, K]
    out = np.tensordot(windows, w.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        dx = dw = db = None
        if x.requires_grad:
            gw = np.tensordot(g, w.data, axes=([1], [0]))  # [B, Lout, Cin, K]
            dxp = np.zeros((batch, c_in, xp.shape[2]))
            span = stride * (l_out - 1) + 1
            for j in range(k):
                dxp[:, :, j:j + span:stride] += gw[:, :, :, j].transpose(0, 2, 1)
            dx = dxp[:, :, padding:padding + length]
        if w.requires_grad:
            dw = np.tensordot(g, windows, axes=([0, 2], [0, 2]))
        if b is not None and b.requires_grad:
            db = g.sum(axis=(0, 2))
        return (dx, dw) if b is None else (dx, dw, db)

    return _result(out, inputs, "conv1d", backward)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """
    Per-channel batch normalization over (B, L).

    Train mode normalizes with the biased batch variance and updates the
    running statistics in place (the variance with the unbiased estimate).
    Eval mode normalizes with the running statistics.

    Raises:
        ShapeError: If B*L < 2 in train mode or shapes disagree
    """
    if x.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm1d shape mismatch: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    g_ = gamma.data[None, :, None]
    b_ = beta.data[None, :, None]

    if training:
        n = x.shape[0] * x.shape[2]
        if n < 2:
            raise ShapeError(f"batchnorm1d in train mode needs B*L >= 2 per channel, got {n}")
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean[None, :, None]) * inv_std[None, :, None]

        def backward(g):
            dx = None
            if x.requires_grad:
                dxhat = g * g_
                dx = (inv_std[None, :, None] / n) * (
                    n * dxhat
                    - dxhat.sum(axis=(0, 2), keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
                )
            return (dx,
                    (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None,
                    g.sum(axis=(0, 2)) if beta.requires_grad else None)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None]) * inv_std[None, :, None]

        def backward(g):
            return (g * g_ * inv_std[None, :, None] if x.requires_grad else None,
                    (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None,
                    g.sum(axis=(0, 2)) if beta.requires_grad else None)

    return _result(g_ * xhat + b_, (x, gamma, beta), "batchnorm1d", backward)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), "dropout", lambda g: (g * mask,))


def pool_output_length(length: int, kernel_size: int, stride: int, ceil_mode: bool = False) -> int:
    if ceil_mode:
        out = -(-(length - kernel_size) // stride) + 1
        # last window must start inside the input
        if (out - 1) * stride >= length:
            out -= 1
        return out
    return (length - kernel_size) // stride + 1


def maxpool1d(x: Tensor, kernel_size: int, stride: Optional[int] = None,
              ceil_mode: bool = False) -> Tensor:
    """
    Windowed maximum along the last axis.

    Backward routes each window's gradient to its first maximal element.
    With ceil_mode a final partial window is kept (padded with -inf).

    Raises:
        ShapeError: If the window exceeds the input or geometry is invalid
    """
    stride = kernel_size if stride is None else stride
    if kernel_size < 1 or stride < 1:
        raise ShapeError(f"invalid maxpool geometry K={kernel_size} stride={stride}")
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects [B,C,L], got {x.shape}")
    length = x.shape[2]
    if kernel_size > length and not ceil_mode:
        raise ShapeError(f"maxpool window {kernel_size} exceeds input length {length}")
    l_out = pool_output_length(length, kernel_size, stride, ceil_mode)
    if l_out < 1:
        raise ShapeError(f"maxpool output length {l_out} < 1 (L={length}, K={kernel_size})")

    needed = (l_out - 1) * stride + kernel_size
    xp = x.data
    if needed > length:
        xp = np.pad(x.data, ((0, 0), (0, 0), (0, needed - length)), constant_values=-np.inf)
    windows = sliding_window_view(xp, kernel_size, axis=2)[:, :, ::stride][:, :, :l_out]
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dxp = np.zeros(x.shape[:2] + (max(needed, length),))
        span = stride * (l_out - 1) + 1
        for j in range(kernel_size):
            dxp[:, :, j:j + span:stride] += g * (idx == j)
        return (dxp[:, :, :length],)

    return _result(np.ascontiguousarray(out), (x,), "maxpool1d", backward)


def adaptive_pool(x: Tensor, kind: str = "avg") -> Tensor:
    """Global average or max over the length axis; output [B, C, 1]."""
    if x.ndim != 3 or x.shape[2] < 1:
        raise ShapeError(f"adaptive_pool expects [B,C,L] with L >= 1, got {x.shape}")
    if kind == "avg":
        return tensor_mean(x, axis=2, keepdims=True)
    if kind != "max":
        raise ValueError(f"unknown pooling kind {kind!r}")
    idx = x.data.argmax(axis=2)[..., None]
    out = np.take_along_axis(x.data, idx, axis=2)

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx, g, axis=2)
        return (dx,)
    return _result(out, (x,), "adaptive_max", backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Affine map x @ w.T + b.

    Raises:
        ShapeError: If x is not [B, F] with F matching w's [O, F]
    """
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias must have shape ({w.shape[0]},), got {b.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        grads = (g @ w.data if x.requires_grad else None,
                 g.T @ x.data if w.requires_grad else None)
        if b is not None:
            grads += (g.sum(axis=0) if b.requires_grad else None,)
        return grads
    return _result(out, inputs, "linear", backward)


def binary_cross_entropy(probs: Tensor, targets: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Mean BCE over every element, probabilities clamped to [eps, 1 - eps]."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != probs.shape:
        raise ShapeError(f"bce shape mismatch: probs {probs.shape}, targets {y.shape}")
    p = np.clip(probs.data, eps, 1.0 - eps)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (probs.data >= eps) & (probs.data <= 1.0 - eps)

    def backward(g):
        return (g * inside * (-(y / p) + (1.0 - y) / (1.0 - p)) / n,)
    return _result(np.asarray(loss), (probs,), "bce", backward)


# ============================================================================
# Verification
# ============================================================================

class GradientCheckReport(BaseModel):
    """Finite-difference comparison for one input tensor."""
    max_abs_error: float
    max_rel_error: float
    worst_index: Tuple[int, ...]
    n_checked: int
    passed: bool


def gradient_check(f: Callable[[Tensor], Tensor], x: Union[Tensor, np.ndarray],
                   h: float = 1e-5, tol: float = 1e-5, floor: float = 1e-3) -> GradientCheckReport:
    """
    Compare autodiff gradients of a scalar function with central differences.

    Relative error per element is |a - n| / max(|a|, |n|, floor).

    Args:
        f: Scalar-valued tensor function
        x: Point to check at
        h: Finite-difference step
        tol: Pass threshold on the max relative error
        floor: Denominator floor for near-zero gradients

    Returns:
        GradientCheckReport
    """
    point = Tensor(np.array(as_tensor(x).data, dtype=np.float64), requires_grad=True)
    f(point).backward()
    analytic = np.zeros_like(point.data) if point.grad is None else point.grad.copy()

    numeric = np.zeros_like(point.data)
    with no_grad():
        for index in np.ndindex(point.shape):
            original = point.data[index]
            point.data[index] = original + h
            f_plus = f(point).item()
            point.data[index] = original - h
            f_minus = f(point).item()
            point.data[index] = original
            numeric[index] = (f_plus - f_minus) / (2.0 * h)

    abs_err = np.abs(analytic - numeric)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    worst = np.unravel_index(int(np.argmax(rel_err)), rel_err.shape) if rel_err.size else ()
    max_rel = float(rel_err.max()) if rel_err.size else 0.0
    report = GradientCheckReport(
        max_abs_error=float(abs_err.max()) if abs_err.size else 0.0,
        max_rel_error=max_rel,
        worst_index=tuple(int(i) for i in worst),
        n_checked=int(point.size),
        passed=max_rel < tol,
    )
    logger.debug(f"Gradient check: max rel error {report.max_rel_error:.3e} over {report.n_checked} entries")
    return report
