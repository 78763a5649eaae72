"""Per-channel quantization-noise influence factors for convolution outputs.

A convolution layer's feature maps are attenuated by 1 / (1 + theta_c * q),
where q is the squared quantization step (rescaled by a fixed constant so
high QPs do not starve the gradients) and theta_c is one trainable
nonnegative scalar per output channel.  With theta = 0 the factors are all 1
and the layer behaves exactly like its plain counterpart; as the step size
grows, positive thetas shrink the features and the filter suppresses more
of the quantization noise.

The QP-to-step laws follow HEVC/VVC: Qstep = 2^((QP-4)/6).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QP_MIN, QP_MAX = 0, 63

# squared-step rescale: 2^((qp-32)/3) = Qstep^2 / 2^(28/3).  Dividing by a
# shared constant changes nothing the trainable thetas cannot absorb, but it
# keeps the factor denominators near 1 over the working QP range.
_QSQ_REF_EXP = 28.0 / 3.0


def _check_qp(qp: int) -> int:
    qp = int(qp)
    if not QP_MIN <= qp <= QP_MAX:
        raise ValueError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {qp}")
    return qp


def qstep_from_qp(qp: int) -> float:
    """Uniform quantizer step size for a QP: 2^((qp-4)/6)."""
    return 2.0 ** ((_check_qp(qp) - 4) / 6.0)


def qsq_norm_from_qp(qp: int) -> float:
    """Rescaled squared step size 2^((qp-32)/3), equal to 1 at QP 32."""
    return 2.0 ** ((_check_qp(qp) - 32) / 3.0)


@dataclass(frozen=True)
class QpContext:
    """QP of the current batch plus its derived step quantities."""

    qp: int
    qstep: float
    qsq_norm: float

    @classmethod
    def from_qp(cls, qp: int) -> "QpContext":
        qp = _check_qp(qp)
        return cls(qp=qp, qstep=qstep_from_qp(qp), qsq_norm=qsq_norm_from_qp(qp))


def influence_factors(theta: np.ndarray, ctx: QpContext) -> np.ndarray:
    """Per-channel multipliers 1 / (1 + theta * qsq_norm); always in (0, 1]."""
    theta = np.asarray(theta)
    if np.any(theta < 0):
        raise ValueError("theta must be nonnegative")
    return 1.0 / (1.0 + theta * np.asarray(ctx.qsq_norm, dtype=theta.dtype))


def _check_channels(x, theta):
    if x.ndim != 4:
        raise ValueError(f"modulate: input must be 4-D, got {x.ndim}-D")
    if theta.shape != (x.shape[1],):
        raise ValueError(
            f"modulate: theta length {theta.shape} != input channels {x.shape[1]}"
        )


def modulate_forward(x: np.ndarray, theta: np.ndarray, ctx: QpContext) -> np.ndarray:
    """Scale each channel of an NCHW tensor by its influence factor."""
    theta = np.asarray(theta)
    _check_channels(x, theta)
    return x * influence_factors(theta, ctx)[None, :, None, None]


def modulate_backward(x, theta, ctx: QpContext, grad_out):
    """Gradients wrt the features and the thetas.

    d out / d x = f_c and d out / d theta_c = -x * q * f_c^2 with
    f_c = 1 / (1 + theta_c * q), summed over batch and space for theta.
    """
    theta = np.asarray(theta)
    _check_channels(x, theta)
    if grad_out.shape != x.shape:
        raise ValueError(f"modulate: grad_out shape {grad_out.shape} != {x.shape}")
    f = influence_factors(theta, ctx)[None, :, None, None]
    grad_x = grad_out * f
    q = np.asarray(ctx.qsq_norm, dtype=x.dtype)
    grad_theta = np.sum(grad_out * (-x * q * f * f), axis=(0, 2, 3), dtype=np.float64)
    return grad_x, grad_theta.astype(theta.dtype)


def clamp_theta(theta: np.ndarray) -> np.ndarray:
    """Project thetas back onto the nonnegative orthant (run after every step)."""
    return np.maximum(theta, 0)


# channel-last variants used by the model executor


def modulate_fwd_core(x_nhwc, theta, ctx: QpContext):
    f = influence_factors(theta, ctx)
    return x_nhwc * f


def modulate_bwd_core(x_nhwc, theta, ctx: QpContext, gout_nhwc):
    f = influence_factors(theta, ctx)
    grad_x = gout_nhwc * f
    q = np.asarray(ctx.qsq_norm, dtype=x_nhwc.dtype)
    grad_theta = np.sum(gout_nhwc * (-x_nhwc * q * f * f), axis=(0, 1, 2), dtype=np.float64)
    return grad_x, grad_theta.astype(np.asarray(theta).dtype)
