"""Command-line entry point.

Subcommands:
    gen-data   synthesize (or ingest) images, encode them at each QP, and
               write the patch-pair sample stores
    train      train one strategy (global / separate / proposed / qpmap)
    eval       per-QP PSNR gains of one checkpoint
    sweep      gains of several checkpoints at every QP, to CSV
    compare    strategy summary table: parameters, mean gain, BD-rate
    oracle     numerical verification of the spectral adaptation solution
               and of the codec noise power law

Exit codes: 0 success, 1 usage error, 2 invariant or oracle failure,
3 I/O error.  Every command is deterministic given its flags; gen-data and
train refuse to run without an explicit seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .codec import DatasetSpec, load_dataset, noise_power_scan, prepare_dataset
from .metrics import RdPoint, anchor_curve, bd_rate, sweep_qp, write_sweep_csv
from .models import count_params
from .training import RunConfig, TrainingDiverged, run_training
from .wiener import (
    SpectralModel,
    adapt_filter,
    check_optimality,
    expected_mse,
    oracle_report_rows,
    random_spectral_model,
    refinement_deviations,
    smooth_spectral_model,
)


class UsageError(Exception):
    pass


class OracleFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _qps_arg(text):
    try:
        return tuple(int(q) for q in text.split(","))
    except ValueError:
        raise UsageError(f"bad QP list {text!r}, expected e.g. 22,27,32,37")


def _build_parser():
    parser = _Parser(prog="qafilter",
                     description="QP-adaptive CNN filtering over a DCT codec simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an encode/decode patch dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--qps", type=_qps_arg, default=(22, 27, 32, 37))
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--val-frac", type=float, default=0.25)
    p.add_argument("--source", default=None, help="directory of PGM images; synthetic if omitted")

    p = sub.add_parser("train", help="train one multi-QP strategy")
    p.add_argument("--config", default=None, help="key=value file mirroring the run config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=("dcad", "vrcnn", "liu", "tucodec"))
    p.add_argument("--strategy", choices=("global", "separate", "proposed", "qpmap"))
    p.add_argument("--qps", type=_qps_arg)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--precision", choices=("float32", "float64"))
    p.add_argument("--log-every", type=int)
    p.add_argument("--width", type=int, help="liu stand-in width")
    p.add_argument("--pairs", type=int, help="liu stand-in depthwise/pointwise pairs")
    p.add_argument("--blocks", type=int, help="tucodec stand-in residual blocks")

    p = sub.add_parser("eval", help="per-QP gains of one checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--qps", type=_qps_arg, default=None)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--csv", default=None)

    p = sub.add_parser("sweep", help="gains of several checkpoints at every QP")
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--qps", type=_qps_arg, default=None)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--checkpoint", action="append", required=True,
                   metavar="LABEL=PATH", help="repeatable")

    p = sub.add_parser("compare", help="strategy summary: parameters, gain, BD-rate")
    p.add_argument("--data", required=True)
    p.add_argument("--qps", type=_qps_arg, default=None)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--global", dest="global_ckpt", default=None)
    p.add_argument("--proposed", default=None)
    p.add_argument("--qpmap", default=None)
    p.add_argument("--separate", nargs="+", default=None)
    p.add_argument("--csv", default=None)

    p = sub.add_parser("oracle", help="verify the adaptation math and the noise power law")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spectra", type=int, default=20)
    p.add_argument("--perturbations", type=int, default=100)
    p.add_argument("--scan-qps", type=_qps_arg, default=(22, 27, 32, 37))
    p.add_argument("--scan-coeffs", type=int, default=1 << 20)
    p.add_argument("--csv", default=None)
    return parser


# ---------------------------------------------------------------------------
# commands


def _cmd_gen_data(args) -> int:
    spec = DatasetSpec(qps=args.qps, patch=args.patch, source_dir=args.source,
                       count=args.count, size=args.size, seed=args.seed,
                       block_size=args.block_size, val_frac=args.val_frac)
    counts = prepare_dataset(spec, args.out)
    total = 0
    for qp in sorted(counts):
        c = counts[qp]
        print(f"qp {qp}: {c['train']} train / {c['val']} val samples")
        total += c["train"] + c["val"]
    print(f"total: {total} samples in {args.out}")
    return 0


_CONFIG_FIELDS = {
    "data_dir": str, "out_dir": str, "model": str, "strategy": str,
    "qps": _qps_arg, "iterations": int, "batch_size": int, "lr": float,
    "seed": int, "precision": str, "log_every": int,
    "width": int, "pairs": int, "blocks": int,
}


def _read_config(path) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in _CONFIG_FIELDS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _CONFIG_FIELDS[key](raw)
    return values


def _cmd_train(args) -> int:
    cfg_file = _read_config(args.config) if args.config else {}

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return cfg_file.get(key, default)

    model_args = {}
    for key in ("width", "pairs", "blocks"):
        value = pick(getattr(args, key), key, None)
        if value is not None:
            model_args[key] = value
    model = pick(args.model, "model", "dcad")
    if model != "liu":
        model_args.pop("width", None)
        model_args.pop("pairs", None)
    if model != "tucodec":
        model_args.pop("blocks", None)

    data_dir = pick(args.data, "data_dir", None)
    out_dir = pick(args.out, "out_dir", None)
    seed = pick(args.seed, "seed", None)
    if data_dir is None or out_dir is None:
        raise UsageError("train needs --data and --out (or data_dir/out_dir in --config)")
    if seed is None:
        raise UsageError("train needs an explicit --seed")

    cfg = RunConfig(
        data_dir=data_dir, out_dir=out_dir, model=model,
        strategy=pick(args.strategy, "strategy", "proposed"),
        qps=pick(args.qps, "qps", ()),
        iterations=pick(args.iters, "iterations", 2000),
        batch_size=pick(args.batch, "batch_size", 128),
        lr=pick(args.lr, "lr", 1e-3),
        seed=seed,
        precision=pick(args.precision, "precision", "float32"),
        log_every=pick(args.log_every, "log_every", 50),
        model_args=model_args,
    )
    results = run_training(cfg)
    for res in results:
        if res.losses:
            print(f"{res.checkpoint_path}: {cfg.iterations} iterations, "
                  f"final loss {res.losses[-1][1]:.6e}")
        else:
            print(f"{res.checkpoint_path}: initialization only (0 iterations)")
    return 0


def _load_labeled_checkpoints(specs) -> dict:
    out = {}
    for item in specs:
        if "=" in item:
            label, path = item.split("=", 1)
        else:
            label, path = os.path.splitext(os.path.basename(item))[0], item
        spec, params, _ = load_checkpoint(path)
        out[label] = (spec, params)
    return out


def _dataset_qps(dataset, qps, split):
    if qps:
        return qps
    return tuple(sorted(dataset[split]))


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    qps = _dataset_qps(dataset, args.qps, args.split)
    ckpts = _load_labeled_checkpoints([args.checkpoint])
    rows = sweep_qp(ckpts, dataset, qps, split=args.split)
    _print_rows(rows)
    if args.csv:
        write_sweep_csv(args.csv, rows)
        print(f"wrote {args.csv}")
    return 0


def _cmd_sweep(args) -> int:
    dataset = load_dataset(args.data)
    qps = _dataset_qps(dataset, args.qps, args.split)
    ckpts = _load_labeled_checkpoints(args.checkpoint)
    rows = sweep_qp(ckpts, dataset, qps, split=args.split)
    write_sweep_csv(args.csv, rows)
    _print_rows(rows)
    print(f"wrote {len(rows)} rows to {args.csv}")
    return 0


def _print_rows(rows) -> None:
    print(f"{'model':<24} {'mode':<12} {'qp':>3} {'anchor':>8} {'filtered':>8} {'gain':>8}")
    for r in rows:
        print(f"{r.model:<24} {r.mode:<12} {r.qp:>3} "
              f"{r.psnr_anchor:>8.3f} {r.psnr_filtered:>8.3f} {r.gain_db:>+8.4f}")


def _cmd_compare(args) -> int:
    dataset = load_dataset(args.data)
    qps = _dataset_qps(dataset, args.qps, args.split)

    strategies = []
    if args.global_ckpt:
        strategies.append(("global", [args.global_ckpt]))
    if args.separate:
        strategies.append(("separate", list(args.separate)))
    if args.proposed:
        strategies.append(("proposed", [args.proposed]))
    if args.qpmap:
        strategies.append(("qpmap", [args.qpmap]))
    if not strategies:
        raise UsageError("compare needs at least one of --global/--separate/--proposed/--qpmap")

    all_rows = []
    summary = []
    for name, paths in strategies:
        loaded = [(path,) + load_checkpoint(path) for path in paths]
        if name == "separate":
            # each per-QP model serves its own training QP
            by_qp = {}
            for path, spec, params, meta in loaded:
                if len(meta.qps) != 1:
                    raise UsageError(f"{path}: separate checkpoints must be single-QP")
                by_qp[meta.qps[0]] = (spec, params)
            missing = [qp for qp in qps if qp not in by_qp]
            if missing:
                raise UsageError(f"separate checkpoints missing QPs {missing}")
            rows = []
            for qp in qps:
                rows += sweep_qp({f"separate_qp{qp}": by_qp[qp]}, dataset,
                                 (qp,), split=args.split)
            n_params = count_params(loaded[0][1]).total * len(qps)
        else:
            _, spec, params, _ = loaded[0]
            rows = sweep_qp({name: (spec, params)}, dataset, qps, split=args.split)
            n_params = count_params(spec).total
        anchor = anchor_curve(rows)
        by_qp_rows = sorted(rows, key=lambda r: r.qp)
        test = [RdPoint(rate=pt.rate, psnr=row.psnr_filtered)
                for pt, row in zip(anchor, by_qp_rows)]
        bd = bd_rate(anchor, test)
        mean_gain = float(np.mean([r.gain_db for r in rows]))
        summary.append((name, n_params, mean_gain, bd))
        all_rows += rows

    print(f"{'strategy':<10} {'params':>10} {'mean gain dB':>13} {'BD-rate %':>10}")
    for name, n_params, mean_gain, bd in summary:
        print(f"{name:<10} {n_params:>10,} {mean_gain:>+13.4f} {bd:>+10.4f}")
    if args.csv:
        write_sweep_csv(args.csv, all_rows)
        print(f"wrote {args.csv}")
    return 0


def _cmd_oracle(args) -> int:
    failures = []

    # zero-noise identity: the adaptation must leave the filter untouched
    rng = np.random.default_rng(args.seed)
    w = rng.uniform(0.3, 1.2, size=args.bins)
    clean = SpectralModel(rng.uniform(0.5, 2.0, size=args.bins), np.zeros(args.bins), w)
    if not np.array_equal(adapt_filter(clean), w):
        failures.append("zero-noise identity violated")
    mse0 = expected_mse(clean, adapt_filter(clean))
    print(f"zero-noise identity: W' == W, residual mse {mse0:.3e}")
    if mse0 != 0.0:
        failures.append("zero-noise mse not exactly 0")

    worst_gap = 0.0
    violations = 0
    for k in range(args.spectra):
        m = random_spectral_model(args.bins, args.seed + k)
        chk = check_optimality(m, n_perturbations=args.perturbations, seed=args.seed + 1000 + k)
        worst_gap = max(worst_gap, chk.max_minimizer_gap)
        violations += chk.perturbation_violations
    print(f"optimality: {args.spectra} spectra x {args.perturbations} perturbations, "
          f"{violations} violations, worst minimizer gap {worst_gap:.3e}")
    if violations or worst_gap > 1e-8:
        failures.append("adaptation is not the spectral optimum")

    monotone = True
    for k in range(5):
        m = smooth_spectral_model(args.bins, args.seed + k)
        devs = refinement_deviations(m, (2, 4, 8, 16, 32, args.bins))
        monotone &= all(a > b for a, b in zip(devs, devs[1:]))
    print(f"sub-band refinement: deviation monotone decreasing on 5 smooth spectra: {monotone}")
    if not monotone:
        failures.append("sub-band refinement not monotone")

    scan = noise_power_scan(args.scan_qps, n_coeffs=args.scan_coeffs, seed=args.seed)
    band_lo, band_hi = scan.band_slopes.min(), scan.band_slopes.max()
    print(f"noise power law: slope {scan.slope:.4f} "
          f"(per-band {band_lo:.3f}..{band_hi:.3f}) over QPs {scan.qps}")
    if not 1.9 <= scan.slope <= 2.1:
        failures.append(f"noise power slope {scan.slope:.4f} outside [1.9, 2.1]")
    if band_lo < 1.8 or band_hi > 2.2:
        failures.append("per-band noise slopes outside [1.8, 2.2]")

    if args.csv:
        import csv as _csv

        m = random_spectral_model(args.bins, args.seed)
        with open(args.csv, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(("bin", "S", "N", "W", "Wprime", "factor"))
            for row in oracle_report_rows(m):
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])
        print(f"wrote {args.csv}")

    if failures:
        raise OracleFailure("; ".join(failures))
    print("oracle: all checks passed")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "oracle": _cmd_oracle,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OracleFailure, TrainingDiverged) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
