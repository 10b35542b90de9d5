"""Dense tensors with reverse-mode automatic differentiation.

Small tape-based engine on top of numpy float64 arrays. Tensors are
immutable after construction; each op records its parents and a backward
closure, so a scalar output can be differentiated with respect to any
designated leaf (image perturbation, embedding perturbation, or both).

Everything is double precision and row-major. Shape violations and
non-finite values raise instead of propagating silently.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Incompatible operand shapes for an op."""


class GraphError(RuntimeError):
    """Invalid use of the autodiff graph (non-scalar output, missing leaf)."""


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """Immutable float64 array that records the op graph producing it.

    ``requires_grad=True`` marks a leaf the backward pass returns a
    gradient for. Interior nodes inherit differentiability from their
    parents.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _grad_fn: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None,
    ):
        data = _as_array(values)
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor values must be finite")
        data.flags.writeable = False
        self.data = data
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._grad_fn = _grad_fn

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return smul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_broadcast(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a} and {b} are not broadcast-compatible") from exc


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / broadcast ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "add")
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "sub")
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.shape, b.shape, "mul")
    out = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def smul(a: Tensor, k: float) -> Tensor:
    k = float(k)
    out = a.data * k

    def grad_fn(g):
        return (g * k,)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def broadcast(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(n) for n in shape)
    if _check_broadcast(a.shape, shape, "broadcast") != shape:
        raise ShapeError(f"broadcast: cannot expand {a.shape} to {shape}")
    out = np.broadcast_to(a.data, shape)

    def grad_fn(g):
        return (_unbroadcast(g, a.shape),)

    return Tensor(np.ascontiguousarray(out), _parents=(a,), _grad_fn=grad_fn)


# ---------------------------------------------------------------------------
# matmul / conv


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul: operands must be 1-D or 2-D, got {a.shape} @ {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul: inner dimensions {a.shape} @ {b.shape} do not match")
    out = a.data @ b.data

    def grad_fn(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            # dot product: g is scalar
            return g * bd, g * ad
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return Tensor(out, _parents=(a, b), _grad_fn=grad_fn)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(H, W, C) -> (H*W, kh*kw*C) patch matrix under same zero padding."""
    h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
    padded[ph:ph + h, pw:pw + w, :] = x
    s0, s1, s2 = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded,
        shape=(h, w, kh, kw, c),
        strides=(s0, s1, s0, s1, s2),
        writeable=False,
    )
    return windows.reshape(h * w, kh * kw * c)


def _col2im(cols: np.ndarray, h: int, w: int, c: int, kh: int, kw: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch-space gradients back to the image."""
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((h + 2 * ph, w + 2 * pw, c), dtype=cols.dtype)
    cols = cols.reshape(h, w, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            padded[i:i + h, j:j + w, :] += cols[:, :, i, j, :]
    return padded[ph:ph + h, pw:pw + w, :]


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """2-D convolution, stride 1, same zero padding.

    ``x`` is (H, W, C_in); ``kernel`` is (kh, kw, C_in, C_out) with odd
    kh, kw. Output is (H, W, C_out).
    """
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d: image must be (H, W, C), got {x.shape}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (kh, kw, C_in, C_out), got {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got ({kh}, {kw})")
    h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: image has {c} channels, kernel expects {cin}")

    cols = _im2col(x.data, kh, kw)                       # (H*W, kh*kw*cin)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(h, w, cout)

    def grad_fn(g):
        gmat = g.reshape(h * w, cout)
        grad_k = (cols.T @ gmat).reshape(kh, kw, cin, cout)
        grad_cols = gmat @ kmat.T
        grad_x = _col2im(grad_cols, h, w, cin, kh, kw)
        return grad_x, grad_k

    return Tensor(out, _parents=(x, kernel), _grad_fn=grad_fn)


# ---------------------------------------------------------------------------
# activations / reductions


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)

    def grad_fn(g):
        return (g * expit(a.data),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def tsum(a: Tensor) -> Tensor:
    out = a.data.sum()

    def grad_fn(g):
        return (np.full(a.shape, float(g)),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = a.data.mean()

    def grad_fn(g):
        return (np.full(a.shape, float(g) / n),)

    return Tensor(out, _parents=(a,), _grad_fn=grad_fn)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(output: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited: set = set()
    stack: List[Tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(output: Tensor, leaves: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, Tensor]:
    """Reverse-mode gradients of a scalar output.

    Returns a map from each differentiable leaf reachable from ``output``
    to its gradient tensor (same shape as the leaf). If ``leaves`` is
    given, only those are returned and each must occur in the graph.
    """
    if output.data.size != 1:
        raise GraphError(f"backward requires a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise GraphError("output does not depend on any differentiable leaf")

    grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    order = _topo_order(output)
    found: Dict[int, Tensor] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            if node.requires_grad:
                found[id(node)] = node
                grads[id(node)] = g
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg.astype(np.float64, copy=True)
            else:
                acc += pg

    if leaves is None:
        return {found[k]: Tensor(grads[k]) for k in found}

    result: Dict[Tensor, Tensor] = {}
    for leaf in leaves:
        if id(leaf) not in found:
            raise GraphError("leaf not in graph")
        result[leaf] = Tensor(grads[id(leaf)])
    return result
