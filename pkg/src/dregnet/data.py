"""Synthetic datasets, an IDX image loader, batching, and gradient sharding.

Everything here is deterministic given its seeds: generators draw from a
seeded rng, epoch shuffles derive their stream from (run seed, epoch), and
sharded gradient evaluation is a pure function of the batch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dreg import compute_gradients
from .tensor import Tensor

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Immutable sample collection: inputs (M leading), int labels, class count."""

    inputs: Tensor
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if self.inputs.shape[0] != labels.shape[0] or labels.ndim != 1:
            raise ValueError("inputs and labels must agree on the sample count")
        if labels.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        labels.setflags(write=False)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class Batch:
    inputs: Tensor
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


SPIRAL_TURNS = 1.75
SPIRAL_THETA0 = 0.5 * np.pi


def gen_two_spirals(n_per_class: int, noise_std: float, seed: int) -> Dataset:
    """Two interleaved planar spirals, one per class.

    Points sit exactly on r = theta/(2*pi) at evenly spaced angles (class 1
    is the point-reflection of class 0), plus optional Gaussian jitter.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    theta = np.linspace(SPIRAL_THETA0, SPIRAL_THETA0 + 2.0 * np.pi * SPIRAL_TURNS,
                        n_per_class)
    r = theta / (2.0 * np.pi)
    base = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    points = np.concatenate([base, -base], axis=0)
    if noise_std:
        rng = np.random.default_rng(seed)
        points = points + noise_std * rng.standard_normal(points.shape)
    labels = np.repeat([0, 1], n_per_class)
    return Dataset(Tensor(points), labels, 2)


def blob_centers(classes: int, separation: float, dim: int) -> np.ndarray:
    """Deterministic cluster centers: a line for dim=1, a circle otherwise."""
    centers = np.zeros((classes, dim))
    if dim == 1:
        centers[:, 0] = separation * (np.arange(classes) - (classes - 1) / 2.0)
    else:
        angles = 2.0 * np.pi * np.arange(classes) / classes
        centers[:, 0] = separation * np.cos(angles)
        centers[:, 1] = separation * np.sin(angles)
    return centers


def gen_blobs(classes: int, n_per_class: int, separation: float, dim: int,
              seed: int) -> Dataset:
    """Isotropic unit-variance Gaussian clusters at fixed separated centers."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if n_per_class < 1 or dim < 1:
        raise ValueError("n_per_class and dim must be positive")
    centers = blob_centers(classes, separation, dim)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), n_per_class)
    points = centers[labels] + rng.standard_normal((labels.size, dim))
    return Dataset(Tensor(points), labels, classes)


def _read_idx_header(blob: bytes, path: str, magic: int, dims: int) -> tuple:
    header = struct.calcsize(">" + "I" * (1 + dims))
    if len(blob) < header:
        raise ValueError(f"{path}: truncated header")
    fields = struct.unpack_from(">" + "I" * (1 + dims), blob)
    if fields[0] != magic:
        raise ValueError(f"{path}: bad magic 0x{fields[0]:08x}, "
                         f"expected 0x{magic:08x}")
    return fields[1:], header


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair into floats scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lab_blob = fh.read()
    (n, rows, cols), offset = _read_idx_header(img_blob, images_path,
                                               IDX_IMAGE_MAGIC, 3)
    if len(img_blob) - offset != n * rows * cols:
        raise ValueError(f"{images_path}: expected {n * rows * cols} pixel "
                         f"bytes, found {len(img_blob) - offset}")
    (n_labels,), lab_offset = _read_idx_header(lab_blob, labels_path,
                                               IDX_LABEL_MAGIC, 1)
    if len(lab_blob) - lab_offset != n_labels:
        raise ValueError(f"{labels_path}: expected {n_labels} label bytes, "
                         f"found {len(lab_blob) - lab_offset}")
    if n != n_labels:
        raise ValueError(f"image count {n} does not match label count {n_labels}")
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=offset)
    images = pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_blob, dtype=np.uint8, offset=lab_offset).astype(np.int64)
    return Dataset(Tensor(images), labels, int(labels.max()) + 1)


def epoch_batches(dataset: Dataset, batch_size: int, seed: int,
                  epoch: int) -> list[Batch]:
    """Seeded shuffle of one epoch, split into full batches (remainder dropped).

    The shuffle stream is derived from (seed, epoch), so a run's batch
    sequence is reproducible without carrying rng state across epochs.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    m = len(dataset)
    batch_size = min(batch_size, m)
    perm = np.random.default_rng([seed, epoch]).permutation(m)
    x = dataset.inputs.data
    batches = []
    for start in range(0, m - batch_size + 1, batch_size):
        idx = perm[start:start + batch_size]
        batches.append(Batch(Tensor(x[idx]), dataset.labels[idx]))
    return batches


def shard_gradients(net, batch: Batch, devices: int, lam: float = 0.0) -> dict[str, Tensor]:
    """Mean gradient of a batch computed as an average of per-shard means.

    Each of the K simulated devices evaluates an equal contiguous slice on
    its own network clone; the results are averaged. With equal shard sizes
    this equals the full-batch mean gradient.
    """
    m = len(batch)
    if devices < 1 or m % devices:
        raise ValueError(f"batch of {m} does not split over {devices} devices")
    per = m // devices
    x = batch.inputs.data
    acc: dict[str, np.ndarray] = {}
    for k in range(devices):
        shard_net = net.clone()
        sl = slice(k * per, (k + 1) * per)
        compute_gradients(shard_net, Tensor(x[sl]), batch.labels[sl], lam)
        for key, g in shard_net.grad_items():
            if key in acc:
                acc[key] = acc[key] + g.data
            else:
                acc[key] = g.data
    return {key: Tensor(total / devices) for key, total in acc.items()}
