"""The training loop: epoch driver, metrics records, and run persistence.

A run is fully determined by its resolved config. Wall-clock timings are
collected alongside the metrics but written to a separate file, so the
metrics CSV of a (config, seed) pair is byte-stable across repeats.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from . import model_io
from .config import write_resolved
from .data import Batch, Dataset, epoch_batches, gen_blobs, gen_two_spirals, load_idx, shard_gradients
from .dreg import (DRegTrace, attach_dreg, compute_gradients, dreg_loss,
                   dual_loss_and_grads, path_accuracies, select_inference_path)
from .models import build_network, input_shape_for, reshape_for
from .nn import LossBreakdown, Network, cross_entropy
from .optim import MomentumState, TrainConfig, apply_update
from .tensor import Tensor

METRICS_COLUMNS = ("epoch", "train_loss_total", "l_r", "l_l", "dreg_raw",
                   "val_acc_r", "val_acc_l")

# offset mixed into the data seed so the train/val split draws from a
# different stream than the epoch shuffles
_SPLIT_STREAM = 104729


@dataclass
class EpochRecord:
    """One epoch of run metrics; branch fields are None for single-path runs."""

    epoch: int
    train_loss_total: float
    l_r: float
    l_l: float | None
    dreg_raw: float | None
    val_acc_r: float
    val_acc_l: float | None
    wall_time_ms: float


@dataclass
class RunResult:
    config: dict
    records: list[EpochRecord]
    net: Network
    selected: Network
    trace: DRegTrace | None
    train: Dataset
    val: Dataset


def load_dataset(cfg: dict) -> Dataset:
    source = cfg["data.source"]
    if source == "blobs":
        return gen_blobs(cfg["data.classes"], cfg["data.n_per_class"],
                         cfg["data.separation"], cfg["data.dim"], cfg["data.seed"])
    if source == "spirals":
        return gen_two_spirals(cfg["data.n_per_class"], cfg["data.noise_std"],
                               cfg["data.seed"])
    images = os.path.join(cfg["data.path"], "images.idx")
    labels = os.path.join(cfg["data.path"], "labels.idx")
    return load_idx(images, labels)


def split_dataset(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; both halves keep every class reachable."""
    m = len(ds)
    n_val = max(1, int(round(m * val_fraction)))
    if n_val >= m:
        raise ValueError("validation fraction leaves no training data")
    perm = np.random.default_rng([seed, _SPLIT_STREAM]).permutation(m)
    x = ds.inputs.data
    train_idx, val_idx = perm[n_val:], perm[:n_val]
    return (Dataset(Tensor(x[train_idx]), ds.labels[train_idx], ds.num_classes),
            Dataset(Tensor(x[val_idx]), ds.labels[val_idx], ds.num_classes))


def accuracy(net: Network, inputs: Tensor, labels) -> float:
    logits = net.forward(inputs, cache=False)
    return float(np.mean(logits.data.argmax(axis=1) == np.asarray(labels)))


def evaluate_losses(net: Network, batch: Batch, lam: float) -> LossBreakdown:
    """Loss breakdown of a batch without touching gradients."""
    out = net.forward(batch.inputs, cache=False)
    if net.has_dual:
        breakdown, _, _ = dual_loss_and_grads(out, batch.labels, net, lam)
        return breakdown
    return LossBreakdown.single(cross_entropy(out, batch.labels))


def train_step(net: Network, batch: Batch, tcfg: TrainConfig,
               state: MomentumState, trace: DRegTrace | None = None) -> LossBreakdown:
    """One gradient evaluation plus parameter update on one batch."""
    if tcfg.devices == 1:
        breakdown = compute_gradients(net, batch.inputs, batch.labels, tcfg.lam)
        grads = None
    else:
        grads = shard_gradients(net, batch, tcfg.devices, tcfg.lam)
        breakdown = evaluate_losses(net, batch, tcfg.lam)
    info = apply_update(net, grads, tcfg, state)
    if trace is not None and info is not None:
        trace.record(info.diff_before, info.diff_after, info.delta_r, info.delta_l)
    return breakdown


def build_run_network(cfg: dict, in_shape: tuple[int, ...], num_classes: int) -> Network:
    net = build_network(cfg["model.arch"], cfg["model.width"], cfg["model.depth"],
                        cfg["model.residual"], in_shape, num_classes,
                        cfg["run.seed"])
    if cfg["dreg.enabled"]:
        net = attach_dreg(net, cfg["dreg.position"], cfg["dreg.epsilon_init"],
                          cfg["run.seed"] + 1)
    return net


def run_experiment(cfg: dict) -> RunResult:
    """Train per the resolved config; returns metrics and final networks."""
    arch = cfg["model.arch"]
    ds = load_dataset(cfg)
    shaped = Dataset(Tensor(reshape_for(arch, ds.inputs.data)), ds.labels,
                     ds.num_classes)
    train, val = split_dataset(shaped, cfg["data.val_fraction"], cfg["data.seed"])
    in_shape = train.inputs.shape[1:]
    net = build_run_network(cfg, in_shape, ds.num_classes)

    lam = cfg["dreg.lambda"] if cfg["dreg.enabled"] else 0.0
    tcfg = TrainConfig(eta=cfg["optim.eta"], beta=cfg["optim.beta"], lam=lam,
                       batch_size=cfg["data.batch_size"], devices=cfg["data.devices"],
                       epochs=cfg["run.epochs"], seed=cfg["run.seed"])
    state = MomentumState(tcfg.beta)
    trace = DRegTrace(lam, tcfg.eta) if net.has_dual else None

    records: list[EpochRecord] = []
    val_x, val_y = val.inputs, val.labels
    for epoch in range(tcfg.epochs):
        started = time.perf_counter()
        totals, l_rs, l_ls = [], [], []
        for batch in epoch_batches(train, tcfg.batch_size, cfg["data.seed"], epoch):
            breakdown = train_step(net, batch, tcfg, state, trace)
            totals.append(breakdown.total)
            l_rs.append(breakdown.l_r)
            if breakdown.l_l is not None:
                l_ls.append(breakdown.l_l)
        if net.has_dual:
            layer = net.layers[net.dual_index]
            raw = dreg_loss(Tensor(layer.w_r), Tensor(layer.w_l))
            acc_r, acc_l = path_accuracies(net, val_x, val_y)
            record = EpochRecord(epoch, float(np.mean(totals)), float(np.mean(l_rs)),
                                 float(np.mean(l_ls)), raw, acc_r, acc_l,
                                 (time.perf_counter() - started) * 1e3)
        else:
            record = EpochRecord(epoch, float(np.mean(totals)), float(np.mean(l_rs)),
                                 None, None, accuracy(net, val_x, val_y), None,
                                 (time.perf_counter() - started) * 1e3)
        records.append(record)

    selected = select_inference_path(net, val_x, val_y) if net.has_dual else net.clone()
    return RunResult(cfg, records, net, selected, trace, train, val)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(records: list[EpochRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in records:
            writer.writerow([_fmt(v) for v in
                             (r.epoch, r.train_loss_total, r.l_r, r.l_l,
                              r.dreg_raw, r.val_acc_r, r.val_acc_l)])


def write_timing_csv(records: list[EpochRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", "wall_time_ms"))
        for r in records:
            writer.writerow((r.epoch, repr(r.wall_time_ms)))


def execute_run(cfg: dict, out_dir: str | None = None) -> tuple[RunResult, str]:
    """Run an experiment and persist metrics, timing, config, and the model."""
    out_dir = out_dir or cfg["run.out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    result = run_experiment(cfg)
    write_resolved(cfg, out_dir)
    write_metrics_csv(result.records, os.path.join(out_dir, "metrics.csv"))
    write_timing_csv(result.records, os.path.join(out_dir, "timing.csv"))
    meta = {"arch": cfg["model.arch"], "num_classes": result.train.num_classes,
            "dreg": bool(cfg["dreg.enabled"])}
    model_io.save_model(result.selected, os.path.join(out_dir, "model.bin"), meta)
    return result, out_dir
