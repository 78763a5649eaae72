"""Quality and rate-distortion metrics: PSNR, BD-rate, QP sweeps.

BD-rate follows the classical cubic-fit construction: fit log10(rate) as a
cubic in PSNR for both curves, average the difference of the fits over the
overlapping PSNR interval, and report 100 * (10^avg - 1) percent.  Negative
means the test curve needs less rate at equal quality.

Sweeps evaluate trained checkpoints against the unfiltered codec-simulator
reconstruction on the validation split, one row per (model, qp), and round
the trip through CSV exactly (floats are written with repr).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .codec import _blockify, dct2, level_entropy_bits, quantize_levels
from .models import run_forward
from .modulation import QpContext, qstep_from_qp


def psnr(reference, test, peak: float = 255.0) -> float:
    """10*log10(peak^2 / MSE) in dB; +inf sentinel for identical images."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"psnr: shape mismatch {reference.shape} vs {test.shape}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True)
class RdPoint:
    rate: float
    psnr: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")


def _as_curve(points):
    pts = [p if isinstance(p, RdPoint) else RdPoint(*p) for p in points]
    if len(pts) < 4:
        raise ValueError(f"BD-rate needs at least 4 rate-distortion points, got {len(pts)}")
    pts = sorted(pts, key=lambda p: p.psnr)
    rates = np.array([p.rate for p in pts])
    quality = np.array([p.psnr for p in pts])
    if np.any(np.diff(quality) <= 0):
        raise ValueError("curve has duplicate PSNR values")
    if np.any(np.diff(rates) <= 0):
        warnings.warn("rate-distortion curve is not monotone; proceeding on sorted data")
    return quality, np.log10(rates)


def bd_rate(anchor, test) -> float:
    """Average rate change of `test` against `anchor` at equal quality, percent."""
    qa, ra = _as_curve(anchor)
    qt, rt = _as_curve(test)
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if not hi > lo:
        raise ValueError("no overlapping PSNR interval between the curves")
    fit_a = np.polyfit(qa, ra, 3)
    fit_t = np.polyfit(qt, rt, 3)
    int_a = np.polyint(fit_a)
    int_t = np.polyint(fit_t)
    avg = ((np.polyval(int_t, hi) - np.polyval(int_t, lo))
           - (np.polyval(int_a, hi) - np.polyval(int_a, lo))) / (hi - lo)
    return float(100.0 * (10.0 ** avg - 1.0))


# ---------------------------------------------------------------------------
# QP sweeps


@dataclass
class SweepRow:
    model: str
    mode: str
    qp: int
    psnr_anchor: float
    psnr_filtered: float
    gain_db: float
    rate_bits: float


def rate_proxy(patches_uint8, qp: int, block_size: int = 8, offset: float = 0.5) -> float:
    """Entropy-proxy rate of the anchor stream for a stack of patches."""
    patches = np.asarray(patches_uint8, dtype=np.float64)
    blocks = np.concatenate([_blockify(p, block_size) for p in patches])
    levels = quantize_levels(dct2(blocks), qstep_from_qp(qp), offset)
    return level_entropy_bits(levels) * levels.size


def filtered_mse(spec, params, originals, recons, qp: int, batch: int = 32) -> tuple:
    """(anchor_mse, filtered_mse) over a stack of uint8 patch pairs."""
    dtype = next(iter(params.values()))["w"].dtype
    ctx = QpContext.from_qp(qp)
    sq_err = 0.0
    n_px = 0
    for start in range(0, originals.shape[0], batch):
        orig = originals[start:start + batch].astype(np.float64)
        recon = recons[start:start + batch].astype(dtype) / dtype.type(255.0)
        x = recon[:, None]
        y = run_forward(spec, params, x, ctx)
        filt = np.clip(y[:, 0].astype(np.float64), 0.0, 1.0) * 255.0
        sq_err += float(np.sum((filt - orig) ** 2))
        n_px += orig.size
    anchor_mse = float(np.mean((originals.astype(np.float64) - recons.astype(np.float64)) ** 2))
    return anchor_mse, sq_err / n_px


def sweep_qp(checkpoints: dict, dataset: dict, qps, split: str = "val",
             block_size: int = 8) -> list:
    """Evaluate each (spec, params) at every QP of the dataset split.

    checkpoints maps a label to (spec, params).  Returns SweepRow records:
    PSNR of the unfiltered reconstruction, PSNR after filtering, their gap,
    and the anchor rate proxy.
    """
    rows = []
    for label, (spec, params) in checkpoints.items():
        for qp in qps:
            if qp not in dataset[split]:
                raise KeyError(f"dataset has no qp {qp} in split {split!r}")
            originals, recons = dataset[split][qp]
            anchor_mse, filt_mse = filtered_mse(spec, params, originals, recons, qp)
            p_anchor = math.inf if anchor_mse == 0 else 10 * math.log10(255.0 ** 2 / anchor_mse)
            p_filt = math.inf if filt_mse == 0 else 10 * math.log10(255.0 ** 2 / filt_mse)
            rows.append(SweepRow(
                model=label, mode=spec.mode, qp=int(qp),
                psnr_anchor=p_anchor, psnr_filtered=p_filt,
                gain_db=p_filt - p_anchor,
                rate_bits=rate_proxy(originals, qp, block_size),
            ))
    return rows


CSV_FIELDS = ("model", "mode", "qp", "psnr_anchor", "psnr_filtered", "gain_db", "rate_bits")


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([r.model, r.mode, r.qp, repr(r.psnr_anchor),
                             repr(r.psnr_filtered), repr(r.gain_db), repr(r.rate_bits)])


def read_sweep_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        for rec in reader:
            rows.append(SweepRow(model=rec[0], mode=rec[1], qp=int(rec[2]),
                                 psnr_anchor=float(rec[3]), psnr_filtered=float(rec[4]),
                                 gain_db=float(rec[5]), rate_bits=float(rec[6])))
    return rows


def anchor_curve(rows) -> list:
    """Unfiltered rate-distortion points from any single model's sweep rows."""
    by_qp = {}
    for r in rows:
        by_qp[r.qp] = RdPoint(rate=r.rate_bits, psnr=r.psnr_anchor)
    return [by_qp[qp] for qp in sorted(by_qp)]


def filtered_curve(rows, label) -> list:
    pts = sorted((r for r in rows if r.model == label), key=lambda r: r.qp)
    return [RdPoint(rate=r.rate_bits, psnr=r.psnr_filtered) for r in pts]
