"""QP-adaptive CNN filtering toolkit.

A numpy training stack for quantization-noise removal filters whose
convolution outputs carry trainable per-channel influence factors
1/(1 + theta * Qstep^2), a blockwise DCT codec simulator to generate the
noisy data, a spectral oracle validating the adaptation math, and
rate-distortion metrics (PSNR, BD-rate) to measure the result.
"""

from .checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from .codec import (
    DatasetSpec,
    QuantizerConfig,
    dct2,
    encode_decode,
    idct2,
    load_dataset,
    noise_power_scan,
    prepare_dataset,
    quantize_coeff,
    quantize_levels,
    read_pgm,
    synthetic_image,
    write_pgm,
)
from .engine import AdamState, ConvParams, adam_step, conv2d_backward, conv2d_forward, mse_loss
from .metrics import RdPoint, bd_rate, psnr, read_sweep_csv, sweep_qp, write_sweep_csv
from .models import (
    ModelSpec,
    build_dcad,
    build_liu_dsc,
    build_model,
    build_tucodec_mini,
    build_vrcnn,
    count_params,
    init_params,
    run_backward,
    run_forward,
)
from .modulation import (
    QpContext,
    clamp_theta,
    influence_factors,
    modulate_backward,
    modulate_forward,
    qsq_norm_from_qp,
    qstep_from_qp,
)
from .training import RunConfig, TrainingDiverged, run_training, train_single
from .wiener import SpectralModel, adapt_filter, expected_mse, subband_consistency

__version__ = "0.1.0"
