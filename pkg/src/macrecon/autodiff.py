"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the reconstruction network needs are provided: same-shape
addition, reshape, ReLU, 2-D convolution (cross-correlation, zero padding, no
bias), an affine map for the weight-prediction layers, an L2 loss, and a hook
for wrapping linear operators that supply their own adjoint.

Every op builds its output through :func:`_result`, which records the parents
and a closure mapping the upstream gradient to one gradient per parent.  A
graph is only recorded when at least one input requires a gradient, so
inference never retains im2col buffers.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "add",
    "affine",
    "apply_linear",
    "conv2d",
    "conv2d_backward",
    "l2_loss",
    "relu",
    "reshape",
]


class Tensor:
    """Dense real array with optional gradient tracking.

    The array is treated as immutable after construction; only ``grad`` is
    written, by :meth:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tracked tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # only leaves keep their gradient
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    keep = a.data > 0
    # subgradient at exactly zero is zero; np.maximum keeps the memory layout
    return _result(np.maximum(a.data, 0), (a,), lambda g: (g * keep,))


def affine(context: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ context + bias`` with no activation."""
    context, weight, bias = _as_tensor(context), _as_tensor(weight), _as_tensor(bias)
    if context.ndim != 1 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError("affine expects context (n,), weight (m, n), bias (m,)")
    if weight.shape[1] != context.shape[0]:
        raise ShapeError(f"affine: weight has {weight.shape[1]} columns, context has length {context.shape[0]}")
    if weight.shape[0] != bias.shape[0]:
        raise ShapeError(f"affine: weight has {weight.shape[0]} rows, bias has length {bias.shape[0]}")

    def backward(g):
        return weight.data.T @ g, np.outer(g, context.data), g

    return _result(weight.data @ context.data + bias.data, (context, weight, bias), backward)


def l2_loss(pred: Tensor, target) -> Tensor:
    """Sum of squared errors over pixels, averaged over the leading batch axis."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l2_loss: pred {pred.shape} vs target {target.shape}")
    batch = pred.shape[0] if pred.ndim else 1
    diff = pred.data - target.data
    value = np.asarray(np.sum(diff * diff) / batch, dtype=pred.dtype)

    def backward(g):
        scaled = (2.0 / batch) * g * diff
        return scaled, -scaled

    return _result(value, (pred, target), backward)


def apply_linear(x: Tensor, forward: Callable, adjoint: Callable, offset=None) -> Tensor:
    """Wrap ``forward(x) + offset`` where ``forward`` is linear with the given adjoint."""
    x = _as_tensor(x)
    out = forward(x.data)
    if offset is not None:
        out = out + offset
    return _result(out.astype(x.dtype, copy=False), (x,), lambda g: (adjoint(g),))


# --- convolution -----------------------------------------------------------
#
# Activations are NCHW at the API level.  Internally the im2col buffer is laid
# out (B, Ho, Wo, kh, kw, Cin) so that the matmul result is NHWC in memory and
# the NCHW output is a transposed view; the next layer's NHWC view of it is
# then free.


def _check_conv(x_shape, k_shape, pad):
    if len(x_shape) != 4 or len(k_shape) != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x_shape} and {k_shape}")
    if x_shape[1] != k_shape[1]:
        raise ShapeError(f"conv2d: input has {x_shape[1]} channels, kernel expects {k_shape[1]}")
    kh, kw = k_shape[2:]
    if pad is None:
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("conv2d default padding requires odd kernel extents")
        pad = (kh - 1) // 2
    if pad < 0:
        raise ShapeError("conv2d: negative padding")
    ho = x_shape[2] + 2 * pad - kh + 1
    wo = x_shape[3] + 2 * pad - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input")
    return pad, ho, wo


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int, ho: int, wo: int, dtype) -> np.ndarray:
    b, c, h, w = x.shape
    xh = x.transpose(0, 2, 3, 1)
    if pad:
        xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=dtype)
        xp[:, pad : pad + h, pad : pad + w, :] = xh
    else:
        xp = xh
    cols = np.empty((b, ho, wo, kh, kw, c), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + ho, j : j + wo, :]
    return cols.reshape(b * ho * wo, kh * kw * c)


def _kernel_matrix(k: np.ndarray) -> np.ndarray:
    cout, cin, kh, kw = k.shape
    return k.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)


def _conv_grads(g, cols, k, x_shape, pad, need_input=True):
    b, c, h, w = x_shape
    cout, cin, kh, kw = k.shape
    ho, wo = g.shape[2], g.shape[3]
    gh = g.transpose(0, 2, 3, 1).reshape(-1, cout)
    gk = (cols.T @ gh).reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
    if not need_input:
        return None, gk
    gcols = (gh @ _kernel_matrix(k).T).reshape(b, ho, wo, kh, kw, cin)
    gxp = np.zeros((b, h + 2 * pad, w + 2 * pad, cin), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i : i + ho, j : j + wo, :] += gcols[:, :, :, i, j, :]
    gx = gxp[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2)
    return gx, gk


def conv2d(x: Tensor, kernel: Tensor, pad: int | None = None) -> Tensor:
    """Zero-padded cross-correlation; ``pad`` defaults to ``(k - 1) // 2``."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    pad, ho, wo = _check_conv(x.shape, kernel.shape, pad)
    cout, _, kh, kw = kernel.shape
    dtype = np.result_type(x.dtype, kernel.dtype)
    cols = _im2col(x.data, kh, kw, pad, ho, wo, dtype)
    out = (cols @ _kernel_matrix(kernel.data)).reshape(x.shape[0], ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        return _conv_grads(g, cols, kernel.data, x.shape, pad, need_input=x.requires_grad)

    return _result(out, (x, kernel), backward)


def conv2d_backward(upstream, saved_input, kernel, pad: int | None = None) -> tuple[Tensor, Tensor]:
    """Adjoints of :func:`conv2d` w.r.t. its input and kernel."""
    upstream, saved_input, kernel = (_as_tensor(t) for t in (upstream, saved_input, kernel))
    pad, ho, wo = _check_conv(saved_input.shape, kernel.shape, pad)
    expected = (saved_input.shape[0], kernel.shape[0], ho, wo)
    if upstream.shape != expected:
        raise ShapeError(f"conv2d_backward: upstream {upstream.shape} != forward output {expected}")
    dtype = np.result_type(saved_input.dtype, kernel.dtype)
    cols = _im2col(saved_input.data, kernel.shape[2], kernel.shape[3], pad, ho, wo, dtype)
    gx, gk = _conv_grads(upstream.data.astype(dtype, copy=False), cols, kernel.data, saved_input.shape, pad)
    return Tensor(gx), Tensor(gk)
