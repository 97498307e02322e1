"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Covers exactly the operations the pose-transfer network needs: 2D
convolution, 2x2 max pooling, batch normalization, (batched) matrix
products, row softmax, channel concatenation, elementwise plumbing and an
MSE loss, plus an Adam optimizer over named parameters.

Conventions:
  - float32 everywhere by default; float64 tensors are supported for
    gradient checking (every op computes in the dtype of its inputs).
  - Convolution means cross-correlation (no kernel flip).
  - The autodiff graph is a single-use tape: `backward()` releases it, and
    a second call without a fresh forward pass raises `UsageError`.
  - No general broadcasting; shapes must conform exactly.
  - Operations never mutate their inputs' data buffers.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for tensor-engine errors."""


class DimensionError(TensorError):
    """Shapes do not conform or produce invalid output extents."""


class UsageError(TensorError):
    """The API was used outside its contract (e.g. double backward)."""


class NumericsError(TensorError):
    """A forward or backward pass produced NaN or Inf."""


_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf validation of op outputs; returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a single-pass sum is finite iff the array is (inf - inf folds to nan)
    if _FINITE_CHECKS and not np.isfinite(np.sum(arr)):
        raise NumericsError(f"non-finite values in {what}")


class Tensor:
    """A dense n-dimensional float array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Optional[Callable[[np.ndarray], None]] = None
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numel(self) -> int:
        return int(self.data.size)

    def detach(self) -> "Tensor":
        """A view of the same data outside the graph."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar loss and release the recorded graph."""
        if self.data.shape != ():
            raise UsageError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._released:
            raise UsageError("backward called twice on the same graph; re-run the forward pass")
        if not self.requires_grad:
            raise UsageError("loss does not depend on any requires_grad tensor")

        order = _topo_order(self)
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            fn = node._grad_fn
            if fn is not None and node.grad is not None:
                fn(node.grad)
            # clear the tape; leaves keep their accumulated gradients
            if fn is not None:
                node._grad_fn = None
                node._parents = ()
                node._released = True
        if _FINITE_CHECKS:
            for node in order:
                if node.grad is not None and not np.all(np.isfinite(node.grad)):
                    raise NumericsError("non-finite gradient produced in backward")

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def backward(loss: Tensor) -> None:
    """Functional alias for `Tensor.backward`."""
    loss.backward()


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _make_node(data: np.ndarray, parents: Sequence[Tensor],
               grad_fn: Callable[[np.ndarray], None], what: str) -> Tensor:
    _check_finite(data, what)
    tracked = [p for p in parents if p.requires_grad]
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._released = False
    if tracked:
        out.requires_grad = True
        out._parents = tuple(tracked)
        out._grad_fn = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._grad_fn = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and shape plumbing


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    data = a.data + b.data

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _make_node(data, (a, b), grad_fn, "add")


def mul_scalar(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    data = x.data * np.asarray(c, dtype=x.data.dtype)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(x, g * np.asarray(c, dtype=x.data.dtype))

    return _make_node(data, (x,), grad_fn, "mul_scalar")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (x.data > 0))

    return _make_node(data, (x,), grad_fn, "relu")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.numel():
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    data = x.data.reshape(shape)

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.shape))

    return _make_node(data, (x,), grad_fn, "reshape")


def transpose_last2(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim < 2:
        raise DimensionError("transpose_last2 needs rank >= 2")
    data = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))

    def grad_fn(g: np.ndarray) -> None:
        _accumulate(x, np.swapaxes(g, -1, -2))

    return _make_node(data, (x,), grad_fn, "transpose_last2")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise UsageError("concat_channels needs at least one tensor")
    base = ts[0].shape
    for t in ts[1:]:
        if t.data.ndim != len(base) or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise DimensionError(f"concat_channels: {t.shape} incompatible with {base}")
    data = np.concatenate([t.data for t in ts], axis=1)
    sizes = [t.shape[1] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g: np.ndarray) -> None:
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            _accumulate(t, g[:, lo:hi])

    return _make_node(data, ts, grad_fn, "concat_channels")


def time_slice(x: Tensor, t: int) -> Tensor:
    """Select step `t` along axis 1 of a [B, T, ...] tensor."""
    x = _as_tensor(x)
    if x.data.ndim < 2 or not (0 <= t < x.shape[1]):
        raise DimensionError(f"time_slice: index {t} invalid for shape {x.shape}")
    data = np.ascontiguousarray(x.data[:, t])

    def grad_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[:, t] += g

    return _make_node(data, (x,), grad_fn, "time_slice")


# ---------------------------------------------------------------------------
# losses and reductions


def mse(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements; returns a scalar tensor."""
    prediction, target = _as_tensor(prediction), _as_tensor(target)
    if prediction.shape != target.shape:
        raise DimensionError(f"mse: shapes {prediction.shape} and {target.shape} differ")
    diff = prediction.data - target.data
    n = diff.size
    data = np.asarray(np.mean(diff * diff), dtype=prediction.data.dtype)

    def grad_fn(g: np.ndarray) -> None:
        scale = g * np.asarray(2.0 / n, dtype=diff.dtype)
        _accumulate(prediction, scale * diff)
        _accumulate(target, -scale * diff)

    return _make_node(data, (prediction, target), grad_fn, "mse")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the trailing axis, computed with max subtraction.

    The denominator sums the exponentials in ascending value order, so the
    result is invariant to permutations within a row (bitwise), not just up
    to rounding.
    """
    x = _as_tensor(x)
    if x.data.ndim < 1:
        raise DimensionError("softmax_rows needs rank >= 1")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(np.sort(e, axis=-1), axis=-1, keepdims=True)

    def grad_fn(g: np.ndarray) -> None:
        # dL/dx_i = y_i * (g_i - sum_j g_j y_j)
        dot = np.sum(g * data, axis=-1, keepdims=True)
        _accumulate(x, data * (g - dot))

    return _make_node(data, (x,), grad_fn, "softmax_rows")


def pairwise_dot(x: Tensor) -> Tensor:
    """All pairwise dot products of the rows of [B, K, L]: output [B, K, K].

    out[b, i, j] = sum_l x[b, i, l] * x[b, j, l], accumulated over l in a
    fixed order independent of (i, j), so permuting rows permutes the output
    bitwise-exactly (a plain gemm does not guarantee that).
    """
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"pairwise_dot expects [B, K, L], got {x.shape}")
    data = np.sum(x.data[:, :, None, :] * x.data[:, None, :, :], axis=-1)

    def grad_fn(g: np.ndarray) -> None:
        dx = g @ x.data + np.swapaxes(g, -1, -2) @ x.data
        _accumulate(x, dx)

    return _make_node(data, (x,), grad_fn, "pairwise_dot")


# ---------------------------------------------------------------------------
# matrix products


_MATMUL_RANKS = {(2, 2), (3, 3), (2, 3), (3, 2)}


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 2D@2D, 3D@3D and mixed 2D/3D batches."""
    a, b = _as_tensor(a), _as_tensor(b)
    ra, rb = a.data.ndim, b.data.ndim
    if (ra, rb) not in _MATMUL_RANKS:
        raise DimensionError(f"matmul: unsupported ranks {ra} and {rb}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents {a.shape} @ {b.shape} differ")
    if ra == 3 and rb == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul: batch extents {a.shape[0]} and {b.shape[0]} differ")
    data = a.data @ b.data

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            if ra == 2 and rb == 3:
                ga = ga.sum(axis=0)
            _accumulate(a, ga)
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if ra == 3 and rb == 2:
                gb = gb.sum(axis=0)
            _accumulate(b, gb)

    return _make_node(data, (a, b), grad_fn, "matmul")


# ---------------------------------------------------------------------------
# convolution / pooling


def _conv_out_extent(extent: int, k: int, stride: int, padding: int, axis: str) -> int:
    span = extent + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise DimensionError(
            f"conv2d: kernel {k}, stride {stride}, padding {padding} do not tile "
            f"input {axis}-extent {extent}")
    out = span // stride + 1
    if out <= 0:
        raise DimensionError(f"conv2d: non-positive output {axis}-extent")
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(dcols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int,
            padding: int, oh: int, ow: int) -> np.ndarray:
    b, c, h, w = shape
    dxp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    dc = dcols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dc[:, :, i, j]
    if padding:
        return dxp[:, :, padding:padding + h, padding:padding + w]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate [B,Cin,H,W] with [Cout,Cin,kh,kw] filters."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects rank-4 input and weight")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    oh = _conv_out_extent(h, kh, stride, padding, "H")
    ow = _conv_out_extent(w, kw, stride, padding, "W")

    pointwise = kh == kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.reshape(b, cin, oh * ow)           # no patch copy needed
    else:
        if padding:
            xp = np.zeros((b, cin, h + 2 * padding, w + 2 * padding), dtype=x.data.dtype)
            xp[:, :, padding:padding + h, padding:padding + w] = x.data
        else:
            xp = x.data
        cols = _im2col(xp, kh, kw, stride, oh, ow)       # [B, Cin*kh*kw, OH*OW]
    w2 = weight.data.reshape(cout, -1)
    out = w2 @ cols                                      # [B, Cout, OH*OW]
    if bias is not None:
        out = out + bias.data[:, None]
    data = out.reshape(b, cout, oh, ow)

    def grad_fn(g: np.ndarray) -> None:
        g2 = g.reshape(b, cout, oh * ow)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=(0, 2)))
        if weight.requires_grad:
            dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(weight, dw.reshape(weight.shape))
        if x.requires_grad:
            dcols = np.swapaxes(w2, 0, 1) @ g2           # [B, Cin*kh*kw, OH*OW]
            if pointwise:
                _accumulate(x, dcols.reshape(b, cin, h, w))
            else:
                _accumulate(x, _col2im(dcols, (b, cin, h, w), kh, kw, stride, padding, oh, ow))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make_node(data, parents, grad_fn, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient routed to the first max per window.

    Ties are broken toward the first window element in row-major order:
    (0,0), (0,1), (1,0), (1,1).
    """
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError("maxpool2 expects rank-4 input")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2: extents ({h}, {w}) must be even")
    quads = (x.data[:, :, 0::2, 0::2], x.data[:, :, 0::2, 1::2],
             x.data[:, :, 1::2, 0::2], x.data[:, :, 1::2, 1::2])
    data = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))

    def grad_fn(g: np.ndarray) -> None:
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        taken = np.zeros(data.shape, dtype=bool)
        slots = ((0, 0), (0, 1), (1, 0), (1, 1))
        for quad, (i, j) in zip(quads, slots):
            hit = (quad == data) & ~taken
            dx[:, :, i::2, j::2] = g * hit
            taken |= hit
        _accumulate(x, dx)

    return _make_node(data, (x,), grad_fn, "maxpool2")


def depthwise_xcorr(target: Tensor, template: Tensor) -> Tensor:
    """Per-sample, per-channel cross-correlation preserving target extents.

    Channel c of each sample's template filters channel c of that sample's
    target; zero padding keeps the output at the target's spatial size.  For
    even template extents the extra padding goes on the bottom/right.
    """
    target, template = _as_tensor(target), _as_tensor(template)
    if target.data.ndim != 4 or template.data.ndim != 4:
        raise DimensionError("depthwise_xcorr expects rank-4 operands")
    b, c, h, w = target.shape
    bt, ct, th, tw = template.shape
    if (bt, ct) != (b, c):
        raise DimensionError(f"depthwise_xcorr: batch/channel mismatch {template.shape} vs {target.shape}")
    if th > h or tw > w:
        raise DimensionError(f"depthwise_xcorr: template {th}x{tw} larger than target {h}x{w}")
    pt, pl = (th - 1) // 2, (tw - 1) // 2
    pb, pr = th - 1 - pt, tw - 1 - pl
    xp = np.zeros((b, c, h + th - 1, w + tw - 1), dtype=target.data.dtype)
    xp[:, :, pt:pt + h, pl:pl + w] = target.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (th, tw), axis=(2, 3))
    # win: [B, C, H, W, th, tw]
    data = np.einsum("bcyxij,bcij->bcyx", win, template.data, optimize=True)

    def grad_fn(g: np.ndarray) -> None:
        if template.requires_grad:
            dt = np.einsum("bcyxij,bcyx->bcij", win, g, optimize=True)
            _accumulate(template, dt)
        if target.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(th):
                for j in range(tw):
                    dxp[:, :, i:i + h, j:j + w] += g * template.data[:, :, i:i + 1, j:j + 1]
            _accumulate(target, dxp[:, :, pt:pt + h, pl:pl + w])

    return _make_node(data, (target, template), grad_fn, "depthwise_xcorr")


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: Optional[np.ndarray] = None,
                running_var: Optional[np.ndarray] = None,
                training: bool = True, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    Train mode normalizes by batch statistics (biased variance) and, when
    running buffers are given, updates them in place with the configured
    momentum.  Eval mode requires and uses the running buffers.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 4:
        raise DimensionError("batchnorm2d expects rank-4 input")
    b, c, h, w = x.shape
    if b == 0 or b * h * w == 0:
        raise DimensionError("batchnorm2d: empty batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm2d: affine shapes {gamma.shape}/{beta.shape} != ({c},)")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None and running_var is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.astype(running_mean.dtype)
            running_var *= 1.0 - momentum
            running_var += momentum * var.astype(running_var.dtype)
    else:
        if running_mean is None or running_var is None:
            raise UsageError("batchnorm2d eval mode needs running statistics")
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = (x.data - mean[:, None, None]) * inv_std[:, None, None]
    data = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def grad_fn(g: np.ndarray) -> None:
        if gamma.requires_grad:
            _accumulate(gamma, np.sum(g * xhat, axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, np.sum(g, axis=(0, 2, 3)))
        if x.requires_grad:
            gs = g * gamma.data[:, None, None]
            if training:
                mean_gs = gs.mean(axis=(0, 2, 3))
                mean_gs_xhat = (gs * xhat).mean(axis=(0, 2, 3))
                dx = inv_std[:, None, None] * (
                    gs - mean_gs[:, None, None] - xhat * mean_gs_xhat[:, None, None])
            else:
                dx = gs * inv_std[:, None, None]
            _accumulate(x, dx)

    return _make_node(data, (x, gamma, beta), grad_fn, "batchnorm2d")


# ---------------------------------------------------------------------------
# parameters and optimizer


class Parameter:
    """A named trainable tensor with per-parameter Adam state."""

    __slots__ = ("tensor", "name", "m", "v", "step")

    def __init__(self, data: np.ndarray, name: str):
        self.tensor = Tensor(np.array(data, dtype=np.float32, copy=True), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"Parameter({self.name}, shape={self.tensor.shape})"


def adam_step(params: Sequence[Parameter], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, applied in place; gradients are zeroed."""
    for p in params:
        g = p.tensor.grad
        if g is None:
            raise UsageError(f"adam_step: parameter '{p.name}' has no gradient")
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.tensor.data.dtype)
        _check_finite(p.tensor.data, f"parameter '{p.name}' after adam_step")
        p.tensor.grad = None
