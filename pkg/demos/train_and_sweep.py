"""End-to-end miniature: data, training strategies, QP sweep.

Generates a small synthetic dataset, trains the depthwise-separable backbone
three ways (one model per QP, one global model, one QP-adaptive model), and
prints the per-QP PSNR gains over the unfiltered reconstruction.  Runs in a
couple of minutes on one core; outputs land in ./demo_out.
"""

import os

from qafilter import DatasetSpec, load_checkpoint, load_dataset, prepare_dataset, sweep_qp
from qafilter.training import RunConfig, run_training

OUT = "demo_out"
QPS = (22, 27, 32, 37)

data_dir = os.path.join(OUT, "data")
ckpt_dir = os.path.join(OUT, "ckpt")
counts = prepare_dataset(DatasetSpec(qps=QPS, patch=32, count=12, size=96, seed=33), data_dir)
n = sum(c["train"] + c["val"] for c in counts.values())
print(f"dataset: {n} patch pairs across QPs {QPS} in {data_dir}")

checkpoints = {}
for strategy in ("separate", "global", "proposed"):
    print(f"training {strategy} ...")
    results = run_training(RunConfig(
        data_dir=data_dir, out_dir=ckpt_dir, model="liu", strategy=strategy,
        iterations=600, batch_size=8, lr=1e-3, seed=33,
        model_args={"width": 16, "pairs": 3},
    ))
    for res in results:
        label = os.path.splitext(os.path.basename(res.checkpoint_path))[0]
        spec, params, _ = load_checkpoint(res.checkpoint_path)
        checkpoints[label.replace("liu_", "")] = (spec, params)

dataset = load_dataset(data_dir)
rows = sweep_qp(checkpoints, dataset, QPS)
print(f"\nPSNR gain over the unfiltered reconstruction (dB):")
labels = sorted({r.model for r in rows})
print(f"{'model':<16}" + "".join(f" qp{qp:>5}" for qp in QPS))
for label in labels:
    gains = {r.qp: r.gain_db for r in rows if r.model == label}
    print(f"{label:<16}" + "".join(f" {gains[qp]:>+7.3f}" for qp in QPS))
print("\nthe separate models specialize; the single adaptive model tracks them")
print("across the whole range at a fraction of the parameters.")
