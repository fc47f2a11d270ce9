"""Hyperparameter sweeps over lambda, position, momentum, or batch size.

Every point reruns the base config with one key changed and the same seed,
writes its own run directory, and lands in a ranked summary table.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .config import parse_axis_values, write_resolved
from .dreg import eligible_positions
from .models import build_network, input_shape_for
from .training import EpochRecord, execute_run, load_dataset

AXES = ("lambda", "position", "momentum", "batch-size")


@dataclass
class SweepPoint:
    label: str
    best_val_acc: float
    epochs_to_threshold: int
    out_dir: str


def _normalize_axis(axis: str) -> str:
    name = axis.strip().lower().replace("_", "-")
    if name not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    return name


def _default_positions(cfg: dict) -> list[str]:
    ds = load_dataset(cfg)
    arch = cfg["model.arch"]
    shape = input_shape_for(arch, int(np.prod(ds.inputs.shape[1:])))
    net = build_network(arch, cfg["model.width"], cfg["model.depth"],
                        cfg["model.residual"], shape, ds.num_classes,
                        cfg["run.seed"])
    return [f"Block-R{k}" for k in range(1, len(eligible_positions(net)) + 1)]


def _default_batch_sizes(cfg: dict) -> list[int]:
    m_train = len(load_dataset(cfg))
    m_train -= max(1, int(round(m_train * cfg["data.val_fraction"])))
    sizes = [s for s in (4, 16, 64) if s < m_train]
    return sizes + [m_train]


def axis_points(cfg: dict, axis: str) -> list[tuple[str, dict]]:
    """(label, config override) pairs for one sweep axis.

    lambda and position points force dreg.enabled on (a lambda of 0 still
    trains the dual-path network, just without the distinctiveness
    pressure); momentum and batch-size sweep whatever the base config runs.
    """
    axis = _normalize_axis(axis)
    if axis == "lambda":
        values = parse_axis_values(cfg["sweep.lambda"], "lambda")
        points = [(f"lambda_{v:g}", {"dreg.enabled": True, "dreg.lambda": v})
                  for v in values]
    elif axis == "momentum":
        values = parse_axis_values(cfg["sweep.momentum"], "momentum")
        points = [(f"momentum_{v:g}", {"optim.beta": v}) for v in values]
    elif axis == "position":
        names = (parse_axis_values(cfg["sweep.position"], "position")
                 or _default_positions(cfg))
        points = [(f"position_{name.lower()}",
                   {"dreg.enabled": True, "dreg.position": name})
                  for name in names]
    else:
        sizes = (parse_axis_values(cfg["sweep.batch_size"], "batch-size")
                 or _default_batch_sizes(cfg))
        points = [(f"batch_{s}", {"data.batch_size": s}) for s in sizes]
    if not points:
        raise ValueError(f"sweep axis {axis!r} has an empty value list")
    return points


def best_and_threshold(records: list[EpochRecord]) -> tuple[float, int]:
    """Best validation accuracy and the first epoch reaching 95% of it."""
    per_epoch = [max(r.val_acc_r, r.val_acc_l if r.val_acc_l is not None else 0.0)
                 for r in records]
    best = max(per_epoch)
    threshold = 0.95 * best
    first = next(i for i, acc in enumerate(per_epoch) if acc >= threshold)
    return best, first


def run_sweep(cfg: dict, axis: str, out_dir: str | None = None) -> tuple[list[SweepPoint], str]:
    axis = _normalize_axis(axis)
    out_dir = out_dir or os.path.join(cfg["run.out_dir"], f"sweep_{axis}")
    os.makedirs(out_dir, exist_ok=True)
    write_resolved(cfg, out_dir)
    points = []
    for label, overrides in axis_points(cfg, axis):
        sub_cfg = dict(cfg)
        sub_cfg.update(overrides)
        sub_dir = os.path.join(out_dir, label)
        sub_cfg["run.out_dir"] = sub_dir
        result, _ = execute_run(sub_cfg, sub_dir)
        best, first = best_and_threshold(result.records)
        points.append(SweepPoint(label, best, first, sub_dir))
    ranked = sorted(points, key=lambda p: (-p.best_val_acc, p.epochs_to_threshold))
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("rank", "point", "best_val_acc", "epochs_to_threshold"))
        for rank, p in enumerate(ranked, start=1):
            writer.writerow((rank, p.label, repr(p.best_val_acc),
                             p.epochs_to_threshold))
    return ranked, out_dir
