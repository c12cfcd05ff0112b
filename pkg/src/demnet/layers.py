"""Forward and backward passes for every layer in the network.

All functions are pure given their inputs (dropout draws from an explicit
RngState) and return an output plus a cache object. The matching backward
consumes the cache exactly once; a second call raises. Computation follows
the dtype of the input, so float64 inputs give float64 gradients for
finite-difference checking.

Shape rules:
    conv output extent = floor((I + 2*pad - k) / s) + 1
    pool output extent = floor((I - p) / s + 1)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import RngState, Tensor

# Conv caches keep the im2col matrix only below this element count; above it
# the backward pass rebuilds the columns from the padded input.
_COLS_CACHE_LIMIT = 32_000_000


def _check_geometry(extent: int, span: int, stride: int, pad: int = 0):
    if extent < 1 or span < 1 or stride < 1 or pad < 0:
        raise ValueError(
            f"bad geometry: extent={extent} span={span} stride={stride} pad={pad}")


def conv_output_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    """floor((I + 2*pad - k) / s) + 1; values < 1 mean the kernel does not fit."""
    _check_geometry(extent, kernel, stride, pad)
    return (extent + 2 * pad - kernel) // stride + 1


def pool_output_extent(extent: int, window: int, stride: int) -> int:
    """floor((I - p) / s + 1); values < 1 mean the window does not fit."""
    _check_geometry(extent, window, stride)
    return (extent - window) // stride + 1


@dataclass
class ConvSpec:
    """Convolution geometry: stride and symmetric zero padding per side.
    Kernel size is carried by the weight tensor [F, C, kh, kw]."""
    stride: int = 1
    pad: int = 0


@dataclass
class PoolSpec:
    """Max-pooling window and stride (square window)."""
    window: int
    stride: int


class StaleCacheError(RuntimeError):
    """Raised when a backward pass is fed a cache that was already consumed."""


@dataclass
class _Cache:
    consumed: bool = field(default=False, init=False)

    def _consume(self):
        if self.consumed:
            raise StaleCacheError(
                f"{type(self).__name__} already consumed by a backward pass")
        self.consumed = True


@dataclass
class Conv2dCache(_Cache):
    x_padded: Tensor
    weights: Tensor
    spec: ConvSpec
    in_shape: tuple
    out_shape: tuple
    cols: Tensor | None


@dataclass
class MaxPoolCache(_Cache):
    in_shape: tuple
    out_shape: tuple
    argmax: Tensor  # flat index into each window, row-major scan
    spec: PoolSpec


@dataclass
class ReluCache(_Cache):
    mask: Tensor


@dataclass
class BatchNormCache(_Cache):
    mode: str
    x_hat: Tensor
    inv_std: Tensor
    x_centered: Tensor
    gamma: Tensor
    reduce_axes: tuple
    m: int  # elements reduced per channel


@dataclass
class DenseCache(_Cache):
    x: Tensor
    weights: Tensor


@dataclass
class DropoutCache(_Cache):
    mode: str
    rate: float
    mask: Tensor | None  # None when the pass was an identity


@dataclass
class SoftmaxXentCache(_Cache):
    probs: Tensor
    labels: np.ndarray


def _check_upstream(cache_out_shape, grad: Tensor, name: str):
    if tuple(grad.shape) != tuple(cache_out_shape):
        raise ValueError(
            f"{name} upstream gradient shape {grad.shape} does not match "
            f"forward output shape {tuple(cache_out_shape)}")


# ---------------------------------------------------------------------------
# convolution

def _im2col(x_padded: Tensor, kh: int, kw: int, stride: int,
            out_h: int, out_w: int) -> Tensor:
    """[N, C, Hp, Wp] -> [N*out_h*out_w, C*kh*kw] column matrix."""
    n, c = x_padded.shape[:2]
    win = sliding_window_view(x_padded, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, out_h, out_w, kh, kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: Tensor, weights: Tensor, bias: Tensor,
                   spec: ConvSpec) -> tuple[Tensor, Conv2dCache]:
    """Cross-correlation of x [N,C,H,W] with weights [F,C,kh,kw] plus bias [F]."""
    if x.ndim != 4 or weights.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-D input and weights, got {x.shape} and {weights.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weights.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weights expect {cw}")
    if bias.shape != (f,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({f},)")
    out_h = conv_output_extent(h, kh, spec.stride, spec.pad)
    out_w = conv_output_extent(w, kw, spec.stride, spec.pad)
    if out_h < 1:
        raise ValueError(
            f"conv2d output height {out_h} < 1 (input {h}, kernel {kh}, "
            f"stride {spec.stride}, pad {spec.pad})")
    if out_w < 1:
        raise ValueError(
            f"conv2d output width {out_w} < 1 (input {w}, kernel {kw}, "
            f"stride {spec.stride}, pad {spec.pad})")

    if spec.pad:
        x_padded = np.pad(x, ((0, 0), (0, 0), (spec.pad, spec.pad),
                              (spec.pad, spec.pad)))
    else:
        x_padded = x
    cols = _im2col(x_padded, kh, kw, spec.stride, out_h, out_w)
    w_mat = weights.reshape(f, c * kh * kw)
    out = cols @ w_mat.T + bias
    out = out.reshape(n, out_h, out_w, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    cache = Conv2dCache(
        x_padded=x_padded, weights=weights, spec=spec,
        in_shape=x.shape, out_shape=out.shape,
        cols=cols if cols.size <= _COLS_CACHE_LIMIT else None)
    return out, cache


def conv2d_backward(cache: Conv2dCache, dout: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients (dx, dweights, dbias) for conv2d_forward."""
    _check_upstream(cache.out_shape, dout, "conv2d")
    cache._consume()
    n, f, out_h, out_w = cache.out_shape
    _, c, kh, kw = cache.weights.shape
    stride, pad = cache.spec.stride, cache.spec.pad

    cols = cache.cols
    if cols is None:
        cols = _im2col(cache.x_padded, kh, kw, stride, out_h, out_w)
    dout_mat = dout.transpose(0, 2, 3, 1).reshape(n * out_h * out_w, f)

    dw = (dout_mat.T @ cols).reshape(cache.weights.shape)
    db = dout_mat.sum(axis=0)

    dcols = dout_mat @ cache.weights.reshape(f, c * kh * kw)
    dcols = dcols.reshape(n, out_h, out_w, c, kh, kw)
    dx_padded = np.zeros_like(cache.x_padded)
    for i in range(kh):
        for j in range(kw):
            dx_padded[:, :, i:i + stride * out_h:stride,
                      j:j + stride * out_w:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dx = dx_padded[:, :, pad:-pad, pad:-pad]
    else:
        dx = dx_padded
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# max pooling

def maxpool_forward(x: Tensor, spec: PoolSpec) -> tuple[Tensor, MaxPoolCache]:
    """Max over p-by-p windows; argmax position (first in row-major scan) cached."""
    if x.ndim != 4:
        raise ValueError(f"maxpool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    p, s = spec.window, spec.stride
    if p > h or p > w:
        raise ValueError(
            f"pooling window {p} larger than input extent ({h}x{w})")
    out_h = pool_output_extent(h, p, s)
    out_w = pool_output_extent(w, p, s)
    if out_h < 1 or out_w < 1:
        raise ValueError(
            f"maxpool output extent < 1 for input {h}x{w}, window {p}, stride {s}")
    win = sliding_window_view(x, (p, p), axis=(2, 3))[:, :, ::s, ::s]
    flat = win.reshape(n, c, out_h, out_w, p * p)
    argmax = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out)
    cache = MaxPoolCache(in_shape=x.shape, out_shape=out.shape,
                         argmax=argmax, spec=spec)
    return out, cache


def maxpool_backward(cache: MaxPoolCache, dout: Tensor) -> Tensor:
    """Routes each upstream value to its window's cached argmax cell."""
    _check_upstream(cache.out_shape, dout, "maxpool")
    cache._consume()
    n, c, h, w = cache.in_shape
    _, _, out_h, out_w = cache.out_shape
    p, s = cache.spec.window, cache.spec.stride

    oy, ox = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    src_y = oy[None, None] * s + cache.argmax // p
    src_x = ox[None, None] * s + cache.argmax % p
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    flat_idx = ((ni * c + ci) * h + src_y) * w + src_x

    dx = np.zeros(n * c * h * w, dtype=dout.dtype)
    np.add.at(dx, flat_idx.ravel(), dout.ravel())
    return dx.reshape(cache.in_shape)


# ---------------------------------------------------------------------------
# relu

def relu_forward(x: Tensor) -> tuple[Tensor, ReluCache]:
    """Elementwise max(0, x)."""
    mask = x > 0
    return np.where(mask, x, x.dtype.type(0)), ReluCache(mask=mask)


def relu_backward(cache: ReluCache, dout: Tensor) -> Tensor:
    _check_upstream(cache.mask.shape, dout, "relu")
    cache._consume()
    return np.where(cache.mask, dout, dout.dtype.type(0))


# ---------------------------------------------------------------------------
# batch normalization

@dataclass
class BatchNormState:
    """Per-channel scale/shift plus running statistics for inference.

    Running stats update as r <- momentum * r + (1 - momentum) * batch_stat,
    using the biased batch variance (same variance that normalises the batch).
    """
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.9
    eps: float = 1e-5

    @staticmethod
    def create(channels: int, momentum: float = 0.9, eps: float = 1e-5,
               dtype=np.float32) -> "BatchNormState":
        if eps <= 0:
            raise ValueError(f"epsilon must be > 0, got {eps}")
        return BatchNormState(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum, eps=eps)


def _bn_axes(x: Tensor) -> tuple:
    if x.ndim == 2:
        return (0,)
    if x.ndim == 4:
        return (0, 2, 3)
    raise ValueError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")


def _bn_shape(x: Tensor, v: Tensor) -> Tensor:
    return v.reshape(1, -1) if x.ndim == 2 else v.reshape(1, -1, 1, 1)


def batchnorm_forward(x: Tensor, state: BatchNormState,
                      mode: str) -> tuple[Tensor, BatchNormCache]:
    """Normalise per channel; train mode uses batch statistics and updates the
    running ones, infer mode uses the running statistics only."""
    axes = _bn_axes(x)
    dt = x.dtype
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError(
                f"batchnorm train mode needs batch size >= 2, got {x.shape[0]}")
        mean = x.mean(axis=axes)
        x_centered = x - _bn_shape(x, mean)
        var = (x_centered * x_centered).mean(axis=axes)
        m = float(state.momentum)
        state.running_mean[...] = (m * state.running_mean
                                   + (1.0 - m) * mean).astype(state.running_mean.dtype)
        state.running_var[...] = (m * state.running_var
                                  + (1.0 - m) * var).astype(state.running_var.dtype)
    elif mode == "infer":
        mean = state.running_mean.astype(dt)
        var = state.running_var.astype(dt)
        x_centered = x - _bn_shape(x, mean)
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + dt.type(state.eps))
    x_hat = x_centered * _bn_shape(x, inv_std)
    out = x_hat * _bn_shape(x, state.gamma.astype(dt)) + _bn_shape(x, state.beta.astype(dt))
    m_count = int(np.prod([x.shape[a] for a in axes]))
    cache = BatchNormCache(mode=mode, x_hat=x_hat, inv_std=inv_std,
                           x_centered=x_centered, gamma=state.gamma.astype(dt),
                           reduce_axes=axes, m=m_count)
    return out, cache


def batchnorm_backward(cache: BatchNormCache,
                       dout: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Gradients (dx, dgamma, dbeta); train-mode caches only."""
    _check_upstream(cache.x_hat.shape, dout, "batchnorm")
    cache._consume()
    if cache.mode != "train":
        raise ValueError("batchnorm backward requires a train-mode cache")
    axes = cache.reduce_axes
    x = cache.x_hat
    dgamma = (dout * x).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * _bn_shape(dout, cache.gamma)
    m = dout.dtype.type(cache.m)
    inv_std = _bn_shape(dout, cache.inv_std)
    # dx = (1/m) * inv_std * (m*dxhat - sum(dxhat) - x_hat * sum(dxhat*x_hat))
    sum_dxhat = _bn_shape(dout, dxhat.sum(axis=axes))
    sum_dxhat_xhat = _bn_shape(dout, (dxhat * x).sum(axis=axes))
    dx = (inv_std / m) * (m * dxhat - sum_dxhat - x * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# dense

def dense_forward(x: Tensor, weights: Tensor,
                  bias: Tensor) -> tuple[Tensor, DenseCache]:
    """Affine map x [N,d_in] @ weights [d_in,d_out] + bias [d_out]."""
    if x.ndim != 2 or weights.ndim != 2:
        raise ValueError(
            f"dense expects 2-D input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ValueError(
            f"dense inner dimensions differ: input {x.shape} vs weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"dense bias shape {bias.shape} != ({weights.shape[1]},)")
    out = x @ weights + bias
    return out, DenseCache(x=x, weights=weights)


def dense_backward(cache: DenseCache, dout: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    _check_upstream((cache.x.shape[0], cache.weights.shape[1]), dout, "dense")
    cache._consume()
    dx = dout @ cache.weights.T
    dw = cache.x.T @ dout
    db = dout.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# dropout

def dropout_forward(x: Tensor, rate: float, rng: RngState | None,
                    mode: str) -> tuple[Tensor, DropoutCache]:
    """Inverted dropout: train mode zeroes with probability `rate` and scales
    survivors by 1/(1-rate); infer mode is the identity. rate == 0 draws
    nothing from the stream."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x, DropoutCache(mode=mode, rate=rate, mask=None)
    if rng is None:
        raise ValueError("train-mode dropout with rate > 0 needs an RngState")
    u = rng.uniform(x.size).reshape(x.shape)
    mask = u >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    out = np.where(mask, x * scale, x.dtype.type(0))
    return out, DropoutCache(mode=mode, rate=rate, mask=mask)


def dropout_backward(cache: DropoutCache, dout: Tensor) -> Tensor:
    cache._consume()
    if cache.mask is None:
        return dout
    scale = dout.dtype.type(1.0 / (1.0 - cache.rate))
    return np.where(cache.mask, dout * scale, dout.dtype.type(0))


# ---------------------------------------------------------------------------
# softmax + cross-entropy

def softmax_probs(logits: Tensor) -> Tensor:
    """Row softmax with max-subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent_forward(logits: Tensor, labels) -> tuple[Tensor, float, SoftmaxXentCache]:
    """Softmax probabilities and mean cross-entropy of the true class."""
    if logits.ndim != 2:
        raise ValueError(f"softmax expects 2-D logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],):
        raise ValueError(
            f"labels shape {labels.shape} != ({logits.shape[0]},)")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must be in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    probs = np.exp(log_probs)
    loss = float(-log_probs[np.arange(labels.size), labels].mean())
    return probs, loss, SoftmaxXentCache(probs=probs, labels=labels)


def softmax_xent_backward(cache: SoftmaxXentCache, upstream: float = 1.0) -> Tensor:
    """d(mean loss)/d(logits) = (probs - one_hot) / N, scaled by upstream."""
    cache._consume()
    n = cache.labels.size
    dlogits = cache.probs.copy()
    dlogits[np.arange(n), cache.labels] -= 1.0
    return dlogits * (cache.probs.dtype.type(upstream) / cache.probs.dtype.type(n))
