"""Restoration backbones and the graph executor that trains them.

Four single-channel image filters are provided, each buildable in three
modes:

* ``vanilla``      - plain convolutions.
* ``qp-adaptive``  - every convolution output is scaled by trainable
                     per-channel influence factors 1/(1 + theta * qsq_norm);
                     one theta per output channel, clamped nonnegative.
* ``qp-map``       - a constant plane of value qp/51 is concatenated to the
                     input, widening the first convolution by one channel
                     (the classical side-information baseline).

``dcad`` (10 serial 3x3 layers) and ``vrcnn`` (two parallel multi-kernel
stages) reproduce their published parameter counts exactly; VRCNN is built
bias-free because its published total counts weights only.  ``liu`` (depthwise
separable) and ``tucodec`` (residual blocks with leaky ReLU) are stand-ins
whose internals are not public, sized to land within 15% of the published
totals; their counts are flagged approximate.

All backbones keep "same" spatial size everywhere and add a global
input-to-output skip, so a model whose final convolution is zero is exactly
the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import engine
from .engine import ConvParams
from .modulation import QpContext, modulate_bwd_core, modulate_fwd_core

MODES = ("vanilla", "qp-adaptive", "qp-map")
MODEL_NAMES = ("dcad", "vrcnn", "liu", "tucodec")

QP_PLANE_SCALE = 51.0  # qp-map plane value is qp / 51


@dataclass(frozen=True)
class Conv:
    name: str
    in_channels: int
    out_channels: int
    kh: int
    kw: int
    bias: bool = True
    depthwise: bool = False


@dataclass(frozen=True)
class Act:
    kind: str
    alpha: float = 0.01


@dataclass(frozen=True)
class Parallel:
    """Branches evaluated on the same input; outputs concatenated channelwise."""

    branches: tuple


@dataclass(frozen=True)
class Residual:
    """Local skip: output = input + body(input)."""

    body: tuple


@dataclass(frozen=True)
class ModelSpec:
    name: str
    mode: str
    layers: tuple
    global_residual: bool = True
    approximate: bool = False
    builder_args: tuple = ()

    def builder_args_dict(self):
        return dict(self.builder_args)


def conv_layers(layers) -> list:
    """All Conv nodes in execution order."""
    out = []
    for layer in layers:
        if isinstance(layer, Conv):
            out.append(layer)
        elif isinstance(layer, Parallel):
            for branch in layer.branches:
                out.extend(conv_layers(branch))
        elif isinstance(layer, Residual):
            out.extend(conv_layers(layer.body))
    return out


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def _apply_mode(layers, mode):
    """qp-map widens the first convolution by the constant-plane channel."""
    if mode != "qp-map":
        return layers
    first = layers[0]
    if not isinstance(first, Conv) or first.depthwise:
        raise ValueError("qp-map mode needs a standard convolution as the first layer")
    return (replace(first, in_channels=first.in_channels + 1),) + layers[1:]


# ---------------------------------------------------------------------------
# builders


def build_dcad(mode="vanilla") -> ModelSpec:
    """10 serial 3x3 layers, 64 feature maps, ReLU between them."""
    _check_mode(mode)
    layers = [Conv("conv01", 1, 64, 3, 3), Act("relu")]
    for i in range(2, 10):
        layers += [Conv(f"conv{i:02d}", 64, 64, 3, 3), Act("relu")]
    layers.append(Conv("conv10", 64, 1, 3, 3))
    return ModelSpec(name="dcad", mode=mode, layers=_apply_mode(tuple(layers), mode))


def build_vrcnn(mode="vanilla") -> ModelSpec:
    """Two parallel variable-kernel stages between single convolutions.

    Bias-free: the published 54,512 total counts weights only.
    """
    _check_mode(mode)
    layers = (
        Conv("conv1", 1, 64, 5, 5, bias=False),
        Act("relu"),
        Parallel((
            (Conv("conv2a", 64, 16, 5, 5, bias=False),),
            (Conv("conv2b", 64, 32, 3, 3, bias=False),),
        )),
        Act("relu"),
        Parallel((
            (Conv("conv3a", 48, 16, 3, 3, bias=False),),
            (Conv("conv3b", 48, 32, 1, 1, bias=False),),
        )),
        Act("relu"),
        Conv("conv4", 48, 1, 3, 3, bias=False),
    )
    return ModelSpec(name="vrcnn", mode=mode, layers=_apply_mode(layers, mode))


def build_liu_dsc(width: int = 36, pairs: int = 7, mode="vanilla") -> ModelSpec:
    """Depthwise-separable stand-in; default width lands at 12,529 parameters."""
    _check_mode(mode)
    if width <= 0 or pairs <= 0:
        raise ValueError("width and pairs must be positive")
    layers = [Conv("head", 1, width, 3, 3), Act("relu")]
    for i in range(1, pairs + 1):
        layers += [
            Conv(f"dw{i}", width, width, 3, 3, depthwise=True),
            Act("relu"),
            Conv(f"pw{i}", width, width, 1, 1),
            Act("relu"),
        ]
    layers.append(Conv("tail", width, 1, 3, 3))
    return ModelSpec(
        name="liu", mode=mode, layers=_apply_mode(tuple(layers), mode),
        approximate=True, builder_args=(("width", width), ("pairs", pairs)),
    )


def build_tucodec_mini(blocks: int = 6, width: int = 64, mode="vanilla") -> ModelSpec:
    """Residual-block stand-in with leaky ReLU; default lands at 444,353 parameters."""
    _check_mode(mode)
    if blocks <= 0 or width <= 0:
        raise ValueError("blocks and width must be positive")
    layers = [Conv("head", 1, width, 3, 3), Act("leaky_relu")]
    for i in range(1, blocks + 1):
        layers.append(Residual((
            Conv(f"b{i}c1", width, width, 3, 3),
            Act("leaky_relu"),
            Conv(f"b{i}c2", width, width, 3, 3),
        )))
        layers.append(Act("leaky_relu"))
    layers.append(Conv("tail", width, 1, 3, 3))
    return ModelSpec(
        name="tucodec", mode=mode, layers=_apply_mode(tuple(layers), mode),
        approximate=True, builder_args=(("blocks", blocks), ("width", width)),
    )


_BUILDERS = {
    "dcad": build_dcad,
    "vrcnn": build_vrcnn,
    "liu": build_liu_dsc,
    "tucodec": build_tucodec_mini,
}


def build_model(name: str, mode="vanilla", **kwargs) -> ModelSpec:
    if name not in _BUILDERS:
        raise ValueError(f"unknown model {name!r}, expected one of {MODEL_NAMES}")
    return _BUILDERS[name](mode=mode, **kwargs)


# ---------------------------------------------------------------------------
# parameter handling


@dataclass
class LayerCount:
    name: str
    weights: int
    biases: int
    thetas: int

    @property
    def total(self):
        return self.weights + self.biases + self.thetas


@dataclass
class ParamCount:
    layers: list
    approximate: bool = False

    @property
    def weights(self):
        return sum(c.weights for c in self.layers)

    @property
    def biases(self):
        return sum(c.biases for c in self.layers)

    @property
    def thetas(self):
        return sum(c.thetas for c in self.layers)

    @property
    def total(self):
        return self.weights + self.biases + self.thetas


def count_params(spec: ModelSpec) -> ParamCount:
    """Exact trainable-parameter total, per layer and per family."""
    rows = []
    for c in conv_layers(spec.layers):
        w = c.out_channels * c.kh * c.kw if c.depthwise \
            else c.out_channels * c.in_channels * c.kh * c.kw
        rows.append(LayerCount(
            name=c.name,
            weights=w,
            biases=c.out_channels if c.bias else 0,
            thetas=c.out_channels if spec.mode == "qp-adaptive" else 0,
        ))
    return ParamCount(layers=rows, approximate=spec.approximate)


def init_params(spec: ModelSpec, seed: int, dtype=np.float64) -> dict:
    """He-normal weights, zero biases and thetas, zero final convolution.

    Zeroing the last convolution makes every backbone start out as the exact
    identity map through its global skip, which keeps short training runs well
    behaved.  Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    convs = conv_layers(spec.layers)
    params = {}
    for c in convs:
        wshape = (c.out_channels, 1, c.kh, c.kw) if c.depthwise \
            else (c.out_channels, c.in_channels, c.kh, c.kw)
        fan_in = c.kh * c.kw if c.depthwise else c.in_channels * c.kh * c.kw
        w = rng.standard_normal(wshape) * np.sqrt(2.0 / fan_in)
        entry = {"w": w.astype(dtype)}
        if c.bias:
            entry["b"] = np.zeros(c.out_channels, dtype=dtype)
        if spec.mode == "qp-adaptive":
            entry["theta"] = np.zeros(c.out_channels, dtype=dtype)
        params[c.name] = entry
    last = convs[-1].name
    params[last]["w"] = np.zeros_like(params[last]["w"])
    return params


def flatten_params(params: dict):
    """Stable (keys, arrays) view of a nested parameter dict."""
    keys, arrays = [], []
    for lname, entry in params.items():
        for pname, arr in entry.items():
            keys.append((lname, pname))
            arrays.append(arr)
    return keys, arrays


def unflatten_params(keys, arrays) -> dict:
    params = {}
    for (lname, pname), arr in zip(keys, arrays):
        params.setdefault(lname, {})[pname] = arr
    return params


def zero_theta(params: dict) -> None:
    """Reset every modulation parameter in place (used when upgrading modes)."""
    for entry in params.values():
        if "theta" in entry:
            entry["theta"][...] = 0.0


# ---------------------------------------------------------------------------
# executor (channel-last internally)


def _forward_seq(layers, params, h, ctx, mode, tape):
    for layer in layers:
        if isinstance(layer, Conv):
            entry = params[layer.name]
            w, b = entry["w"], entry.get("b")
            core = engine.dwconv_fwd_core if layer.depthwise else engine.conv_fwd_core
            x_shape = h.shape
            h_conv, cache = core(h, w, b)
            if mode == "qp-adaptive":
                theta = params[layer.name]["theta"]
                h = modulate_fwd_core(h_conv, theta, ctx)
                tape.append((layer, x_shape, cache, h_conv))
            else:
                h = h_conv
                tape.append((layer, x_shape, cache, None))
        elif isinstance(layer, Act):
            tape.append((layer, h))
            h = engine.activation_forward(layer.kind, h, layer.alpha)
        elif isinstance(layer, Parallel):
            outs, subtapes, widths = [], [], []
            for branch in layer.branches:
                sub = []
                out = _forward_seq(branch, params, h, ctx, mode, sub)
                outs.append(out)
                subtapes.append(sub)
                widths.append(out.shape[-1])
            h = np.concatenate(outs, axis=-1)
            tape.append((layer, subtapes, widths))
        elif isinstance(layer, Residual):
            sub = []
            body = _forward_seq(layer.body, params, h, ctx, mode, sub)
            h = h + body
            tape.append((layer, sub))
        else:
            raise TypeError(f"unknown layer {layer!r}")
    return h


def _backward_seq(layers, params, tape, g, ctx, mode, grads):
    for layer in reversed(layers):
        entry = tape.pop()
        if isinstance(layer, Conv):
            _, x_shape, cache, h_conv = entry
            lg = grads.setdefault(layer.name, {})
            if mode == "qp-adaptive":
                theta = params[layer.name]["theta"]
                g, gtheta = modulate_bwd_core(h_conv, theta, ctx, g)
                lg["theta"] = lg.get("theta", 0) + gtheta
            w = params[layer.name]["w"]
            core = engine.dwconv_bwd_core if layer.depthwise else engine.conv_bwd_core
            g, gw, gb = core(cache, x_shape, w, layer.bias, g)
            lg["w"] = lg.get("w", 0) + gw
            if gb is not None:
                lg["b"] = lg.get("b", 0) + gb
        elif isinstance(layer, Act):
            _, pre = entry
            g = engine.activation_backward(layer.kind, pre, g, layer.alpha)
        elif isinstance(layer, Parallel):
            _, subtapes, widths = entry
            gin = None
            start = 0
            for branch, sub, width in zip(layer.branches, subtapes, widths):
                gslice = np.ascontiguousarray(g[..., start:start + width])
                start += width
                gx = _backward_seq(branch, params, sub, gslice, ctx, mode, grads)
                gin = gx if gin is None else gin + gx
            g = gin
        elif isinstance(layer, Residual):
            _, sub = entry
            g = g + _backward_seq(layer.body, params, sub, g, ctx, mode, grads)
    return g


def _as_nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _check_forward_args(spec, x, ctx):
    if x.ndim != 4:
        raise ValueError(f"{spec.name}: input must be NCHW 4-D, got {x.ndim}-D")
    if spec.mode in ("qp-adaptive", "qp-map") and ctx is None:
        raise ValueError(f"{spec.name} in mode {spec.mode} needs a QpContext")


def run_forward(spec: ModelSpec, params: dict, x, ctx: QpContext = None, want_tape=False):
    """Filter an NCHW batch; returns the output, or (output, tape) for training.

    Vanilla mode ignores ctx entirely.  qp-map concatenates the constant
    qp/51 plane before the first layer; the global skip always adds the
    original image, never the plane.
    """
    _check_forward_args(spec, x, ctx)
    x_nhwc = _as_nhwc(x)
    h = x_nhwc
    if spec.mode == "qp-map":
        plane = np.full(x_nhwc.shape[:3] + (1,), ctx.qp / QP_PLANE_SCALE, dtype=x_nhwc.dtype)
        h = np.concatenate([h, plane], axis=-1)
    tape = []
    out = _forward_seq(spec.layers, params, h, ctx, spec.mode, tape)
    if spec.global_residual:
        out = out + x_nhwc
    y = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if want_tape:
        return y, tape
    return y


def run_backward(spec: ModelSpec, params: dict, tape, grad_y, ctx: QpContext = None):
    """Backprop through a taped forward pass.

    Returns (grads, grad_x): grads maps layer name to per-field gradient
    arrays, grad_x is the gradient wrt the NCHW input.
    """
    g = _as_nhwc(grad_y)
    grads = {}
    gin = _backward_seq(list(spec.layers), params, list(tape), g, ctx, spec.mode, grads)
    if spec.mode == "qp-map":
        gin = gin[..., :-1]  # the constant plane is not a trainable input
    gx = gin
    if spec.global_residual:
        gx = gx + g
    return grads, np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
