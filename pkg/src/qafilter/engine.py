"""Minimal deterministic CNN engine on numpy arrays.

Tensors are dense 4-D arrays in NCHW order (batch, channel, height, width).
Convolutions are cross-correlations with stride 1 and zero-padded "same"
output, the universal CNN convention.  Every forward operation has a matching
backward that returns exact analytic gradients; all reductions have a fixed
order so runs are reproducible bit for bit under a fixed seed.

Internally the convolution kernels work channel-last (NHWC): on a single
core, flattening the im2col buffer to one (n*h*w, kh*kw*c) GEMM is what makes
training runs fit their time budget.  The public functions below keep the
NCHW contract and convert at the boundary; the model executor in
:mod:`qafilter.models` calls the channel-last cores directly to avoid
per-layer transposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "leaky_relu", "identity")


def _nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def assert_finite(x, what="tensor"):
    """Raise if `x` contains NaN or Inf (engine outputs must stay finite)."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")


@dataclass
class ConvParams:
    """Weights and bias of one convolution layer.

    weights: (out_channels, in_channels, kh, kw); for a depthwise layer the
    shape is (channels, 1, kh, kw) and each kernel only sees its own channel.
    bias is a length-out_channels vector or None for a bias-free layer.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    depthwise: bool = False
    name: str = "conv"

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 4:
            raise ValueError(f"{self.name}: weights must be 4-D, got {w.ndim}-D")
        kh, kw = w.shape[2], w.shape[3]
        if kh % 2 == 0 or kw % 2 == 0 or kh > 5 or kw > 5:
            raise ValueError(f"{self.name}: kernel must be odd and at most 5x5, got {kh}x{kw}")
        if self.depthwise and w.shape[1] != 1:
            raise ValueError(f"{self.name}: depthwise weights must have singleton input axis")
        if self.bias is not None and self.bias.shape != (w.shape[0],):
            raise ValueError(f"{self.name}: bias length {self.bias.shape} != out channels {w.shape[0]}")
        self.weights = w

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[0] if self.depthwise else self.weights.shape[1]

    @property
    def param_count(self) -> int:
        n = self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n


# ---------------------------------------------------------------------------
# channel-last convolution cores


def _pad_same(x_nhwc, kh, kw):
    ph, pw = kh // 2, kw // 2
    if ph == 0 and pw == 0:
        return x_nhwc
    return np.pad(x_nhwc, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _im2col(xpad, kh, kw, h, w):
    # rows ordered (kh, kw, c) so the scatter in the backward pass walks
    # contiguous channel vectors
    n = xpad.shape[0]
    win = sliding_window_view(xpad, (kh, kw), axis=(1, 2))  # (n,h,w,c,kh,kw)
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, kh * kw * xpad.shape[3])


def conv_fwd_core(x_nhwc, weights, bias):
    """Channel-last convolution forward; returns (y, cache for backward)."""
    n, h, w, cin = x_nhwc.shape
    o, _, kh, kw = weights.shape
    if kh == 1 and kw == 1:
        col = x_nhwc.reshape(n * h * w, cin)
    else:
        col = _im2col(_pad_same(x_nhwc, kh, kw), kh, kw, h, w)
    wm = weights.transpose(0, 2, 3, 1).reshape(o, kh * kw * cin)
    out = col @ wm.T
    if bias is not None:
        out += bias
    return out.reshape(n, h, w, o), col


def conv_bwd_core(col, x_shape, weights, has_bias, gout_nhwc):
    """Gradients of a channel-last convolution given the forward cache."""
    n, h, w, cin = x_shape
    o, _, kh, kw = weights.shape
    g2 = gout_nhwc.reshape(n * h * w, o)
    gb = g2.sum(axis=0) if has_bias else None
    gw = (g2.T @ col).reshape(o, kh, kw, cin).transpose(0, 3, 1, 2)
    wm = weights.transpose(0, 2, 3, 1).reshape(o, kh * kw * cin)
    gcol = g2 @ wm
    if kh == 1 and kw == 1:
        gx = gcol.reshape(n, h, w, cin)
        return gx, np.ascontiguousarray(gw), gb
    ph, pw = kh // 2, kw // 2
    gc = gcol.reshape(n, h, w, kh, kw, cin)
    gxpad = np.zeros((n, h + 2 * ph, w + 2 * pw, cin), dtype=gcol.dtype)
    for i in range(kh):
        for j in range(kw):
            gxpad[:, i:i + h, j:j + w, :] += gc[:, :, :, i, j, :]
    gx = np.ascontiguousarray(gxpad[:, ph:ph + h, pw:pw + w, :])
    return gx, np.ascontiguousarray(gw), gb


def dwconv_fwd_core(x_nhwc, weights, bias):
    """Depthwise channel-last convolution forward."""
    n, h, w, c = x_nhwc.shape
    _, _, kh, kw = weights.shape
    xpad = _pad_same(x_nhwc, kh, kw)
    win = sliding_window_view(xpad, (kh, kw), axis=(1, 2))  # (n,h,w,c,kh,kw)
    out = np.einsum("nhwcij,cij->nhwc", win, weights[:, 0], optimize=True)
    if bias is not None:
        out += bias
    return out, xpad


def dwconv_bwd_core(xpad, x_shape, weights, has_bias, gout_nhwc):
    n, h, w, c = x_shape
    _, _, kh, kw = weights.shape
    win = sliding_window_view(xpad, (kh, kw), axis=(1, 2))
    gw = np.einsum("nhwcij,nhwc->cij", win, gout_nhwc, optimize=True)[:, None]
    gb = gout_nhwc.sum(axis=(0, 1, 2)) if has_bias else None
    ph, pw = kh // 2, kw // 2
    gxpad = np.zeros_like(xpad)
    for i in range(kh):
        for j in range(kw):
            gxpad[:, i:i + h, j:j + w, :] += gout_nhwc * weights[:, 0, i, j]
    gx = np.ascontiguousarray(gxpad[:, ph:ph + h, pw:pw + w, :])
    return gx, np.ascontiguousarray(gw), gb


# ---------------------------------------------------------------------------
# public NCHW operations


def _check_conv_input(x, params: ConvParams):
    if x.ndim != 4:
        raise ValueError(f"{params.name}: input must be NCHW 4-D, got {x.ndim}-D")
    if x.shape[1] != params.in_channels:
        raise ValueError(
            f"{params.name}: input has {x.shape[1]} channels, layer expects {params.in_channels}"
        )


def conv2d_forward(x, params: ConvParams):
    """Same-padded stride-1 convolution of an NCHW tensor."""
    _check_conv_input(x, params)
    fwd = dwconv_fwd_core if params.depthwise else conv_fwd_core
    y, _ = fwd(_nhwc(x), params.weights, params.bias)
    return _nchw(y)


def conv2d_backward(x, params: ConvParams, grad_out):
    """Gradients of a scalar loss wrt conv input, weights and bias.

    grad_out must have the forward output's shape; grad_bias is None for a
    bias-free layer.
    """
    _check_conv_input(x, params)
    n, _, h, w = x.shape
    if grad_out.shape != (n, params.out_channels, h, w):
        raise ValueError(
            f"{params.name}: grad_out shape {grad_out.shape} != "
            f"{(n, params.out_channels, h, w)}"
        )
    x_nhwc = _nhwc(x)
    g_nhwc = _nhwc(grad_out)
    if params.depthwise:
        _, cache = dwconv_fwd_core(x_nhwc, params.weights, None)
        gx, gw, gb = dwconv_bwd_core(cache, x_nhwc.shape, params.weights,
                                     params.bias is not None, g_nhwc)
    else:
        _, cache = conv_fwd_core(x_nhwc, params.weights, None)
        gx, gw, gb = conv_bwd_core(cache, x_nhwc.shape, params.weights,
                                   params.bias is not None, g_nhwc)
    return _nchw(gx), gw, gb


def activation_forward(kind: str, x, alpha: float = 0.01):
    """Elementwise relu / leaky_relu(alpha) / identity."""
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "leaky_relu":
        if not 0 < alpha < 1:
            raise ValueError(f"leaky_relu alpha must be in (0, 1), got {alpha}")
        return np.where(x > 0, x, x * np.asarray(alpha, dtype=x.dtype))
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, x, grad_out, alpha: float = 0.01):
    # subgradient at exactly 0 is the negative-side slope
    if kind == "relu":
        return np.where(x > 0, grad_out, 0)
    if kind == "leaky_relu":
        return np.where(x > 0, grad_out, grad_out * np.asarray(alpha, dtype=grad_out.dtype))
    if kind == "identity":
        return grad_out
    raise ValueError(f"unknown activation {kind!r}")


def concat_channels(a, b):
    """Concatenate along the channel axis, a's channels first."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(x, channels_a):
    """Backward of concat_channels: route the first channels_a channels to a."""
    if not 0 <= channels_a <= x.shape[1]:
        raise ValueError(f"split: cannot take {channels_a} of {x.shape[1]} channels")
    return x[:, :channels_a].copy(), x[:, channels_a:].copy()


def residual_add(a, b):
    """Elementwise skip-connection sum; backward routes the gradient to both."""
    if a.shape != b.shape:
        raise ValueError(f"residual_add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient wrt pred."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff, dtype=np.float64))
    grad = diff * np.asarray(2.0 / diff.size, dtype=diff.dtype)
    return loss, grad


@dataclass
class AdamState:
    """Adam moment estimates for an ordered list of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns the new parameter arrays.

    The moment buffers inside `state` are updated in place and `state.step`
    is incremented.  Deterministic: identical inputs give identical outputs.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: params/grads/state length mismatch")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out
