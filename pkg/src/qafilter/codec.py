"""Blockwise DCT codec simulator and dataset preparation.

Stands in for a real video codec at desk scale: images are transformed in
square blocks by an orthonormal type-II DCT, coefficients are uniformly
quantized with the HEVC/VVC step law Qstep = 2^((QP-4)/6), and the rate is
proxied by the zeroth-order entropy of the quantized level alphabet.  No
prediction, no deblocking, no entropy coder: the property that matters for
filter training is that reconstruction noise power grows like Qstep^2, and
``noise_power_scan`` measures exactly that.

Dataset preparation tiles grayscale images (synthetic 1/f^2 fields or PGM
files) into patches, encodes every image at every requested QP, and persists
(original, reconstruction) patch pairs in a small binary store, split into
train/validation by image so no image leaks across the split.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .modulation import qstep_from_qp

STORE_MAGIC = "QSIM1"


# ---------------------------------------------------------------------------
# transform


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis matrix (rows are basis vectors)."""
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


def dct2(block: np.ndarray) -> np.ndarray:
    """2-D orthonormal DCT of one square block (or a stack of them)."""
    n = block.shape[-1]
    if block.shape[-2] != n:
        raise ValueError(f"dct2: block must be square, got {block.shape[-2:]}")
    c = dct_matrix(n)
    return c @ block @ c.T


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of dct2."""
    n = coeffs.shape[-1]
    if coeffs.shape[-2] != n:
        raise ValueError(f"idct2: block must be square, got {coeffs.shape[-2:]}")
    c = dct_matrix(n)
    return c.T @ coeffs @ c


# ---------------------------------------------------------------------------
# quantizer


@dataclass(frozen=True)
class QuantizerConfig:
    qp: int
    block_size: int = 8
    offset: float = 0.5  # rounding offset; 0.5 is round-half-up

    def __post_init__(self):
        if self.block_size < 2:
            raise ValueError(f"block_size must be >= 2, got {self.block_size}")
        if not 0 <= self.qp <= 63:
            raise ValueError(f"qp must be in [0, 63], got {self.qp}")
        if not 0.0 <= self.offset <= 0.5:
            raise ValueError(f"offset must be in [0, 0.5], got {self.offset}")

    @property
    def qstep(self) -> float:
        return qstep_from_qp(self.qp)


def quantize_levels(coeffs, qstep: float, offset: float = 0.5):
    """Integer quantization indices sign(c) * floor(|c|/qstep + offset)."""
    if qstep <= 0:
        raise ValueError(f"qstep must be positive, got {qstep}")
    c = np.asarray(coeffs)
    return (np.sign(c) * np.floor(np.abs(c) / qstep + offset)).astype(np.int64)


def quantize_coeff(coeffs, qstep: float, offset: float = 0.5):
    """Reconstructed coefficient values level * qstep."""
    return quantize_levels(coeffs, qstep, offset) * qstep


def level_entropy_bits(levels) -> float:
    """Empirical zeroth-order entropy of the level alphabet, bits per symbol."""
    _, counts = np.unique(np.asarray(levels).ravel(), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


# ---------------------------------------------------------------------------
# codec


def _pad_to_blocks(image, size):
    h, w = image.shape
    ph = (-h) % size
    pw = (-w) % size
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)), mode="edge")
    return image


def _blockify(image, size):
    h, w = image.shape
    return image.reshape(h // size, size, w // size, size).swapaxes(1, 2) \
                .reshape(-1, size, size)


def _unblockify(blocks, h, w, size):
    return blocks.reshape(h // size, w // size, size, size).swapaxes(1, 2) \
                 .reshape(h, w)


def encode_decode(image, cfg: QuantizerConfig):
    """Round-trip an 8-bit grayscale image through the simulator.

    Returns (reconstruction clipped to [0, 255] as float64, rate_bits), where
    rate_bits is the level-alphabet entropy times the coefficient count.
    The image is edge-replicated up to a block multiple internally.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"encode_decode: need a non-empty 2-D image, got shape {image.shape}")
    h, w = image.shape
    padded = _pad_to_blocks(image, cfg.block_size)
    blocks = _blockify(padded, cfg.block_size)
    coeffs = dct2(blocks)
    levels = quantize_levels(coeffs, cfg.qstep, cfg.offset)
    rate_bits = level_entropy_bits(levels) * levels.size
    recon_blocks = idct2(levels * cfg.qstep)
    recon = _unblockify(recon_blocks, *padded.shape, cfg.block_size)[:h, :w]
    return np.clip(recon, 0.0, 255.0), rate_bits


# ---------------------------------------------------------------------------
# noise power law


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=np.float64)),
                            np.log(np.asarray(y, dtype=np.float64)), 1)[0])


@dataclass
class NoiseScan:
    qps: tuple
    qsteps: np.ndarray
    variances: np.ndarray      # overall noise variance per QP
    slope: float               # d log(var) / d log(qstep); 2 for ideal noise
    band_slopes: np.ndarray    # one slope per frequency bin of the block


def noise_power_scan(qps, n_coeffs: int = 1 << 20, seed: int = 0,
                     block_size: int = 8, sigma: float = None) -> NoiseScan:
    """Measure how quantization noise power scales with the step size.

    The test signal is a seeded Gaussian coefficient field whose per-bin
    amplitudes all sit far above the largest step in the scan, so no bin
    saturates to the all-zero level and the uniform-noise model var = step^2/12
    applies at every frequency.  Returns the fitted overall slope and one
    slope per frequency bin.
    """
    qps = tuple(int(q) for q in qps)
    if len(qps) < 3:
        raise ValueError(f"noise_power_scan needs at least 3 QPs, got {len(qps)}")
    qsteps = np.array([qstep_from_qp(q) for q in qps])
    if sigma is None:
        sigma = 50.0 * qsteps.max()
    if sigma <= 0:
        raise ValueError("degenerate test signal: sigma must be positive")
    nblocks = max(n_coeffs // (block_size * block_size), 16)
    rng = np.random.default_rng(seed)
    # mild spectral tilt keeps the bins distinguishable while every bin stays
    # far above the largest step
    i = np.arange(block_size)
    tilt = 2.0 ** (-(i[:, None] + i[None, :]) / block_size)
    coeffs = rng.standard_normal((nblocks, block_size, block_size)) * (sigma * tilt)
    variances = np.empty(len(qps))
    band = np.empty((len(qps), block_size, block_size))
    for k, q in enumerate(qsteps):
        noise = quantize_coeff(coeffs, q) - coeffs
        variances[k] = np.mean(noise * noise)
        band[k] = np.mean(noise * noise, axis=0)
    slope = fit_loglog_slope(qsteps, variances)
    band_slopes = np.array([
        fit_loglog_slope(qsteps, band[:, r, c])
        for r in range(block_size) for c in range(block_size)
    ])
    return NoiseScan(qps=qps, qsteps=qsteps, variances=variances,
                     slope=slope, band_slopes=band_slopes)


# ---------------------------------------------------------------------------
# images


def synthetic_image(size: int, seed, index: int = 0) -> np.ndarray:
    """Seeded Gaussian random field with a 1/f^2 power spectrum, uint8."""
    rng = np.random.default_rng([int(seed), int(index)])
    white = rng.standard_normal((size, size))
    spectrum = np.fft.fft2(white)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    freq = np.hypot(fy, fx)
    freq[0, 0] = 1.0 / size  # keep a finite DC amplitude
    field = np.real(np.fft.ifft2(spectrum / freq))
    lo, hi = field.min(), field.max()
    img = (field - lo) / (hi - lo) * 255.0
    return np.round(img).astype(np.uint8)


def read_pgm(path) -> np.ndarray:
    """Binary (P5) 8-bit PGM reader."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if raster.size != width * height:
        raise ValueError(f"{path}: truncated raster")
    return raster.reshape(height, width).copy()


def write_pgm(path, image) -> None:
    image = np.asarray(image, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


# ---------------------------------------------------------------------------
# sample store


def write_sample_store(path, patch: int, qp: int, originals, recons) -> None:
    """One (image, qp) worth of patch pairs: header line, then interleaved
    (original, recon) bytes per pixel, patch-major."""
    originals = np.asarray(originals, dtype=np.uint8)
    recons = np.asarray(recons, dtype=np.uint8)
    if originals.shape != recons.shape or originals.ndim != 3:
        raise ValueError("store expects matching (count, patch, patch) stacks")
    pairs = np.stack([originals, recons], axis=-1)
    with open(path, "wb") as fh:
        fh.write(f"{STORE_MAGIC} {patch} {qp} {originals.shape[0]}\n".encode("ascii"))
        fh.write(pairs.tobytes())


def read_sample_store(path):
    """Returns (patch, qp, originals, recons) as uint8 stacks."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4 or header[0] != STORE_MAGIC:
            raise ValueError(f"{path}: bad store header {header}")
        patch, qp, count = int(header[1]), int(header[2]), int(header[3])
        body = np.frombuffer(fh.read(), dtype=np.uint8)
    if body.size != count * patch * patch * 2:
        raise ValueError(f"{path}: store body has {body.size} bytes, "
                         f"expected {count * patch * patch * 2}")
    pairs = body.reshape(count, patch, patch, 2)
    return patch, qp, pairs[..., 0].copy(), pairs[..., 1].copy()


# ---------------------------------------------------------------------------
# dataset


@dataclass
class DatasetSpec:
    qps: tuple
    patch: int = 64
    source_dir: str = None      # directory of .pgm files; synthetic when None
    count: int = 16             # number of synthetic images
    size: int = 128             # synthetic image edge length
    seed: int = 0
    block_size: int = 8
    offset: float = 0.5
    val_frac: float = 0.25


def extract_patches(image, patch: int):
    """Deterministic row-major tiling after edge-replication to a multiple."""
    h, w = image.shape
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} smaller than one {patch}x{patch} patch")
    padded = _pad_to_blocks(np.asarray(image), patch)
    return _blockify(padded, patch)


def _load_sources(spec: DatasetSpec):
    if spec.source_dir is None:
        return [(f"img{i:04d}", synthetic_image(spec.size, spec.seed, i))
                for i in range(spec.count)]
    names = sorted(f for f in os.listdir(spec.source_dir) if f.endswith(".pgm"))
    if not names:
        raise ValueError(f"no .pgm files in {spec.source_dir}")
    return [(os.path.splitext(n)[0], read_pgm(os.path.join(spec.source_dir, n)))
            for n in names]


def prepare_dataset(spec: DatasetSpec, out_dir) -> dict:
    """Encode every image at every QP and persist patch-pair stores.

    Validation images are the trailing ones in deterministic order, so the
    split is by image and no patch of a validation image can appear in
    training.  Returns per-QP sample counts: {qp: {"train": n, "val": n}}.
    """
    sources = _load_sources(spec)
    os.makedirs(out_dir, exist_ok=True)
    n_val = min(int(round(len(sources) * spec.val_frac)), len(sources) - 1)
    n_train = len(sources) - n_val
    counts = {qp: {"train": 0, "val": 0} for qp in spec.qps}
    for idx, (name, image) in enumerate(sources):
        split = "train" if idx < n_train else "val"
        orig_patches = extract_patches(image, spec.patch)
        for qp in spec.qps:
            cfg = QuantizerConfig(qp=qp, block_size=spec.block_size, offset=spec.offset)
            recon, _ = encode_decode(image, cfg)
            recon_patches = extract_patches(np.round(recon).astype(np.uint8), spec.patch)
            fname = f"{split}_{name}_qp{qp:02d}.qsim"
            write_sample_store(os.path.join(out_dir, fname), spec.patch, qp,
                               orig_patches, recon_patches)
            counts[qp][split] += orig_patches.shape[0]
    return counts


def load_dataset(data_dir, qps=None):
    """Load stores back into {"train"|"val": {qp: (orig, recon)}} uint8 stacks."""
    files = sorted(f for f in os.listdir(data_dir) if f.endswith(".qsim"))
    if not files:
        raise FileNotFoundError(f"no .qsim stores in {data_dir}")
    data = {"train": {}, "val": {}}
    patch_size = None
    for fname in files:
        split = fname.split("_", 1)[0]
        if split not in data:
            raise ValueError(f"{fname}: expected train_/val_ prefix")
        patch, qp, orig, recon = read_sample_store(os.path.join(data_dir, fname))
        if qps is not None and qp not in qps:
            continue
        if patch_size is None:
            patch_size = patch
        elif patch_size != patch:
            raise ValueError(f"{fname}: mixed patch sizes {patch} vs {patch_size}")
        data[split].setdefault(qp, []).append((orig, recon))
    for split in data:
        for qp, chunks in data[split].items():
            data[split][qp] = (np.concatenate([c[0] for c in chunks]),
                               np.concatenate([c[1] for c in chunks]))
    data["patch"] = patch_size
    return data
