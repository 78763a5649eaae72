"""Deterministic training of the backbones over codec-simulator datasets.

Four multi-QP strategies are supported:

* ``separate``  one vanilla model per QP, trained only on that QP's samples.
* ``global``    one vanilla model on all QPs.
* ``proposed``  one qp-adaptive model; thetas are clamped nonnegative after
                every optimizer step.
* ``qpmap``     one qp-map model (constant QP plane input).

Batches are always single-QP; multi-QP strategies interleave per-QP batches
round-robin, which composes the mixed-QP epoch without ever mixing QPs inside
a batch.  Everything is seeded: two runs with the same configuration produce
bit-identical checkpoints and loss logs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .codec import load_dataset
from .engine import AdamState, adam_step
from .models import build_model, flatten_params, init_params, run_backward, run_forward
from .modulation import QpContext, clamp_theta
from . import engine

STRATEGIES = ("global", "separate", "proposed", "qpmap")
STRATEGY_MODES = {
    "global": "vanilla",
    "separate": "vanilla",
    "proposed": "qp-adaptive",
    "qpmap": "qp-map",
}


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass
class RunConfig:
    data_dir: str
    out_dir: str
    model: str = "dcad"
    strategy: str = "proposed"
    qps: tuple = ()              # empty: every QP found in the dataset
    iterations: int = 2000
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    precision: str = "float32"   # float32 | float64
    log_every: int = 50
    model_args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected {STRATEGIES}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision}")
        if self.seed is None:
            raise ValueError("a seed is mandatory; wall-clock seeding is not supported")


@dataclass
class TrainResult:
    strategy: str
    qp: int        # the training QP for separate runs, -1 otherwise
    checkpoint_path: str
    log_path: str
    losses: list   # (iteration, loss) pairs as logged


class _BatchSampler:
    """Epoch-shuffled batches over one QP's patch pairs, wrapping as needed."""

    def __init__(self, originals, recons, batch_size, rng, dtype):
        self.x = recons.astype(dtype) / dtype(255.0)
        self.y = originals.astype(dtype) / dtype(255.0)
        self.batch = batch_size
        self.rng = rng
        self.queue = np.empty(0, dtype=np.int64)

    def next_batch(self):
        while self.queue.size < self.batch:
            self.queue = np.concatenate([self.queue, self.rng.permutation(self.x.shape[0])])
        idx, self.queue = self.queue[:self.batch], self.queue[self.batch:]
        return self.x[idx][:, None], self.y[idx][:, None]


def train_single(spec, train_data, qp_schedule, *, iterations, batch_size, lr,
                 seed, precision="float32", log_every=50):
    """Train one model; returns (params, losses).

    train_data maps qp -> (originals, recons) uint8 stacks; qp_schedule is the
    per-iteration QP rotation (a single-element schedule trains one QP only).
    """
    dtype = np.float32 if precision == "float32" else np.float64
    rng = np.random.default_rng([seed, 101])
    params = init_params(spec, seed=int(rng.integers(2 ** 31)), dtype=dtype)
    samplers = {qp: _BatchSampler(*train_data[qp], batch_size,
                                  np.random.default_rng([seed, 17, qp]), dtype)
                for qp in qp_schedule}
    keys, arrays = flatten_params(params)
    state = AdamState.for_params(arrays, lr=lr)
    losses = []
    for it in range(iterations):
        qp = qp_schedule[it % len(qp_schedule)]
        ctx = QpContext.from_qp(qp)
        x, target = samplers[qp].next_batch()
        pred, tape = run_forward(spec, params, x, ctx, want_tape=True)
        loss, grad = engine.mse_loss(pred, target)
        if not np.isfinite(loss):
            raise TrainingDiverged(it)
        grads, _ = run_backward(spec, params, tape, grad, ctx)
        flat_grads = [grads[lname][pname] for lname, pname in keys]
        arrays = adam_step(arrays, flat_grads, state)
        for k, (lname, pname) in enumerate(keys):
            if pname == "theta":
                arrays[k] = clamp_theta(arrays[k])
            params[lname][pname] = arrays[k]
        if it % log_every == 0 or it == iterations - 1:
            losses.append((it, loss))
    return params, losses


def write_loss_log(path, losses) -> None:
    with open(path, "w") as fh:
        for it, loss in losses:
            fh.write(f"{it}\t{loss!r}\n")


def run_training(cfg: RunConfig) -> list:
    """Execute a training strategy end to end; returns one TrainResult per model."""
    dataset = load_dataset(cfg.data_dir)
    qps = tuple(cfg.qps) if cfg.qps else tuple(sorted(dataset["train"]))
    missing = [qp for qp in qps if qp not in dataset["train"]]
    if missing:
        raise ValueError(f"dataset has no training samples for QPs {missing}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    mode = STRATEGY_MODES[cfg.strategy]

    jobs = []
    if cfg.strategy == "separate":
        for qp in qps:
            jobs.append((f"{cfg.model}_separate_qp{qp}", (qp,), qp))
    else:
        jobs.append((f"{cfg.model}_{cfg.strategy}", qps, -1))

    results = []
    for stem, schedule, tag_qp in jobs:
        spec = build_model(cfg.model, mode=mode, **cfg.model_args)
        params, losses = train_single(
            spec, {qp: dataset["train"][qp] for qp in schedule}, schedule,
            iterations=cfg.iterations, batch_size=cfg.batch_size, lr=cfg.lr,
            seed=cfg.seed, precision=cfg.precision, log_every=cfg.log_every,
        )
        ckpt = os.path.join(cfg.out_dir, stem + ".qfck")
        log = os.path.join(cfg.out_dir, stem + "_loss.txt")
        save_checkpoint(ckpt, spec, params, seed=cfg.seed,
                        iterations=cfg.iterations, qps=schedule)
        write_loss_log(log, losses)
        results.append(TrainResult(strategy=cfg.strategy, qp=tag_qp,
                                   checkpoint_path=ckpt, log_path=log, losses=losses))
    return results
