"""Synthetic generators, the IDX loader, batching, and gradient sharding."""

import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dregnet.data import (Batch, Dataset, SPIRAL_TURNS, blob_centers,
                          epoch_batches, gen_blobs, gen_two_spirals, load_idx,
                          shard_gradients)
from dregnet.dreg import attach_dreg, compute_gradients
from dregnet.nn import Dense, Network, ReLU
from dregnet.tensor import Tensor


class TestDataset:
    def test_basic_construction(self):
        ds = Dataset(Tensor(np.zeros((4, 2))), np.array([0, 1, 0, 1]), 2)
        assert ds.inputs.shape == (4, 2)
        assert ds.labels.dtype == np.int64

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Dataset(Tensor(np.zeros((4, 2))), np.array([0, 1]), 2)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            Dataset(Tensor(np.zeros((2, 2))), np.array([0, 5]), 2)

    def test_labels_read_only(self):
        ds = Dataset(Tensor(np.zeros((2, 2))), np.array([0, 1]), 2)
        with pytest.raises(ValueError):
            ds.labels[0] = 1


class TestTwoSpirals:
    def test_noiseless_points_lie_on_the_curve(self):
        ds = gen_two_spirals(50, noise_std=0.0, seed=0)
        pts = ds.inputs.data
        # reconstruct r and check r = theta/(2*pi) for the first arm;
        # the second arm is its point reflection so the same radii appear
        for arm in (pts[:50], -pts[50:]):
            r = np.sqrt((arm ** 2).sum(axis=1))
            theta = np.unwrap(np.arctan2(arm[:, 1], arm[:, 0]))
            assert_allclose(r, theta / (2.0 * np.pi), rtol=0, atol=1e-12)

    def test_second_arm_is_point_reflection(self):
        ds = gen_two_spirals(30, noise_std=0.0, seed=0)
        pts = ds.inputs.data
        assert_array_equal(pts[30:], -pts[:30])

    def test_counts_and_labels(self):
        ds = gen_two_spirals(25, noise_std=0.5, seed=1)
        assert ds.inputs.shape == (50, 2)
        assert ds.num_classes == 2
        assert_array_equal(np.bincount(ds.labels), [25, 25])

    def test_angular_span(self):
        ds = gen_two_spirals(200, noise_std=0.0, seed=0)
        r = np.sqrt((ds.inputs.data[:200] ** 2).sum(axis=1))
        # radius grows linearly with angle over SPIRAL_TURNS full turns
        assert_allclose(r[-1] - r[0], SPIRAL_TURNS, rtol=1e-12)

    def test_deterministic(self):
        a = gen_two_spirals(40, 0.3, seed=7)
        b = gen_two_spirals(40, 0.3, seed=7)
        assert_array_equal(a.inputs.data, b.inputs.data)

    def test_seed_changes_noise(self):
        a = gen_two_spirals(40, 0.3, seed=7)
        b = gen_two_spirals(40, 0.3, seed=8)
        assert np.abs(a.inputs.data - b.inputs.data).max() > 0.0

    def test_size_validation(self):
        with pytest.raises(ValueError):
            gen_two_spirals(0, 0.1, 0)


class TestBlobs:
    def test_nearest_centroid_is_perfect_when_far_apart(self):
        ds = gen_blobs(classes=5, n_per_class=40, separation=100.0, dim=6, seed=3)
        centers = blob_centers(5, 100.0, 6)
        d = ((ds.inputs.data[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assert_array_equal(np.argmin(d, axis=1), ds.labels)

    def test_dim_one_centers_are_a_symmetric_line(self):
        centers = blob_centers(4, 10.0, 1)
        assert_array_equal(centers[:, 0], [-15.0, -5.0, 5.0, 15.0])

    def test_circle_centers_have_equal_radius(self):
        centers = blob_centers(6, 8.0, 5)
        radii = np.sqrt((centers ** 2).sum(axis=1))
        assert_allclose(radii, np.full(6, 8.0), rtol=1e-12)
        assert_array_equal(centers[:, 2:], np.zeros((6, 3)))

    def test_unit_noise_scale(self):
        ds = gen_blobs(classes=2, n_per_class=4000, separation=0.0, dim=3, seed=0)
        assert abs(ds.inputs.data.std() - 1.0) < 0.05

    def test_deterministic(self):
        a = gen_blobs(3, 20, 5.0, 4, seed=9)
        b = gen_blobs(3, 20, 5.0, 4, seed=9)
        assert_array_equal(a.inputs.data, b.inputs.data)
        assert_array_equal(a.labels, b.labels)

    def test_validation(self):
        with pytest.raises(ValueError):
            gen_blobs(1, 10, 5.0, 2, 0)
        with pytest.raises(ValueError):
            gen_blobs(2, 0, 5.0, 2, 0)
        with pytest.raises(ValueError):
            gen_blobs(2, 10, 5.0, 0, 0)


def write_idx_pair(tmp_path, images, labels):
    n, rows, cols = images.shape
    img_path = tmp_path / "images.idx"
    lab_path = tmp_path / "labels.idx"
    img_path.write_bytes(struct.pack(">IIII", 0x00000803, n, rows, cols)
                         + images.astype(np.uint8).tobytes())
    lab_path.write_bytes(struct.pack(">II", 0x00000801, n)
                         + labels.astype(np.uint8).tobytes())
    return str(img_path), str(lab_path)


class TestLoadIdx:
    def test_roundtrip_and_scaling(self, tmp_path):
        images = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        images[1, 2, 2] = 255
        labels = np.array([4, 2], dtype=np.uint8)
        ds = load_idx(*write_idx_pair(tmp_path, images, labels))
        assert ds.inputs.shape == (2, 1, 3, 3)
        assert ds.inputs.data[0, 0, 0, 0] == 0.0
        assert ds.inputs.data[1, 0, 2, 2] == 1.0
        assert_allclose(ds.inputs.data[0, 0, 0, 1], 1.0 / 255.0, rtol=1e-15)
        assert_array_equal(ds.labels, [4, 2])
        assert ds.num_classes == 5

    def test_bad_image_magic(self, tmp_path):
        img, lab = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8),
                                  np.zeros(1, dtype=np.uint8))
        blob = bytearray(open(img, "rb").read())
        blob[3] = 0x99
        (tmp_path / "images.idx").write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            load_idx(img, lab)

    def test_bad_label_magic(self, tmp_path):
        img, lab = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8),
                                  np.zeros(1, dtype=np.uint8))
        blob = bytearray(open(lab, "rb").read())
        blob[3] = 0x42
        (tmp_path / "labels.idx").write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            load_idx(img, lab)

    def test_truncated_pixels(self, tmp_path):
        img, lab = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8),
                                  np.zeros(2, dtype=np.uint8))
        blob = open(img, "rb").read()
        (tmp_path / "images.idx").write_bytes(blob[:-3])
        with pytest.raises(ValueError, match="pixel"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, _ = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8),
                                np.zeros(2, dtype=np.uint8))
        lab_path = tmp_path / "labels.idx"
        lab_path.write_bytes(struct.pack(">II", 0x00000801, 3) + bytes(3))
        with pytest.raises(ValueError, match="count"):
            load_idx(img, str(lab_path))


class TestEpochBatches:
    def make(self, n=20):
        rng = np.random.default_rng(0)
        return Dataset(Tensor(rng.standard_normal((n, 3))),
                       np.arange(n) % 2, 2)

    def test_batches_partition_when_divisible(self):
        ds = self.make(20)
        batches = list(epoch_batches(ds, 5, seed=0, epoch=0))
        assert len(batches) == 4
        assert all(b.inputs.shape == (5, 3) for b in batches)

    def test_trailing_remainder_dropped(self):
        ds = self.make(22)
        batches = list(epoch_batches(ds, 5, seed=0, epoch=0))
        assert len(batches) == 4

    def test_order_depends_on_epoch(self):
        ds = self.make(20)
        a = np.concatenate([b.labels for b in epoch_batches(ds, 5, 3, epoch=0)])
        b = np.concatenate([b.labels for b in epoch_batches(ds, 5, 3, epoch=1)])
        assert not np.array_equal(a, b)

    def test_same_seed_same_epoch_identical(self):
        ds = self.make(20)
        a = [np.array(b.inputs.data) for b in epoch_batches(ds, 5, 3, epoch=2)]
        b = [np.array(b.inputs.data) for b in epoch_batches(ds, 5, 3, epoch=2)]
        for x, y in zip(a, b):
            assert_array_equal(x, y)

    def test_shuffle_is_a_permutation(self):
        ds = self.make(20)
        seen = np.concatenate([b.inputs.data[:, 0]
                               for b in epoch_batches(ds, 5, 1, epoch=0)])
        assert_array_equal(np.sort(seen), np.sort(ds.inputs.data[:, 0]))

    def test_oversized_batch_clamped_to_dataset(self):
        ds = self.make(6)
        batches = list(epoch_batches(ds, 100, seed=0, epoch=0))
        assert len(batches) == 1
        assert batches[0].inputs.shape[0] == 6


class TestShardGradients:
    def make_batch(self, n=16):
        rng = np.random.default_rng(21)
        x = Tensor(rng.standard_normal((n, 4)))
        labels = rng.integers(0, 3, size=n)
        return Batch(x, labels)

    def make_net(self, dual=False):
        rng = np.random.default_rng(22)
        net = Network([Dense(4, 6, bias=True, rng=rng), ReLU(),
                       Dense(6, 3, bias=True, rng=rng)])
        if dual:
            net = attach_dreg(net, "Block-R1", 1e-2, 0)
        return net

    def test_one_device_matches_direct_gradient(self):
        net = self.make_net()
        batch = self.make_batch()
        sharded = shard_gradients(net, batch, devices=1)
        compute_gradients(net, batch.inputs, batch.labels)
        for key, g in net.grad_items():
            assert_array_equal(sharded[key].data, g.data)

    def test_four_devices_average_within_tolerance(self):
        net = self.make_net()
        batch = self.make_batch(16)
        sharded = shard_gradients(net, batch, devices=4)
        compute_gradients(net, batch.inputs, batch.labels)
        for key, g in net.grad_items():
            assert np.abs(sharded[key].data - g.data).max() <= 1e-12

    def test_dual_network_shards(self):
        net = self.make_net(dual=True)
        batch = self.make_batch(16)
        sharded = shard_gradients(net, batch, devices=2, lam=0.1)
        compute_gradients(net, batch.inputs, batch.labels, lam=0.1)
        for key, g in net.grad_items():
            assert np.abs(sharded[key].data - g.data).max() <= 1e-12

    def test_indivisible_batch_rejected(self):
        net = self.make_net()
        with pytest.raises(ValueError):
            shard_gradients(net, self.make_batch(10), devices=4)

    def test_does_not_touch_the_network(self):
        net = self.make_net()
        before = {k: np.array(p.data) for k, p in net.param_items()}
        shard_gradients(net, self.make_batch(), devices=2)
        for key, p in net.param_items():
            assert_array_equal(p.data, before[key])
        for _, g in net.grad_items():
            assert_array_equal(g.data, np.zeros(g.shape))
