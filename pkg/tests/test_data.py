import struct

import numpy as np
import pytest

import layerlab as ll
from layerlab.data import dataset_to_csv, input_second_moment
from layerlab.errors import (
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    RankDeficiencyError,
)

from conftest import write_fake_idx


class TestMixture:
    def test_sample_count(self):
        spec = ll.MixtureSpec(components=3, samples_per_component=400, dim=10)
        x = ll.gen_gaussian_mixture(spec, seed=0)
        assert x.shape == (1200, 10)

    def test_deterministic(self):
        spec = ll.MixtureSpec(components=2, samples_per_component=50, dim=4)
        assert np.array_equal(
            ll.gen_gaussian_mixture(spec, seed=9),
            ll.gen_gaussian_mixture(spec, seed=9),
        )

    def test_component_means_recoverable(self):
        # per-component sample mean within 4 sigma / sqrt(n) of the truth;
        # component scales are at most 2, so sigma <= sqrt(2) per axis
        spec = ll.MixtureSpec(components=3, samples_per_component=400, dim=10)
        x = ll.gen_gaussian_mixture(spec, seed=12)
        rng = np.random.default_rng(12)
        for c in range(3):
            mean = rng.uniform(-3.0, 3.0, size=10)
            rng.standard_normal((10, 10))  # rotation draw
            rng.uniform(0.5, 2.0, size=10)  # scale draw
            rng.standard_normal((400, 10))  # sample draw
            block = x[c * 400:(c + 1) * 400]
            tol = 4 * np.sqrt(2.0) / np.sqrt(400)
            assert np.all(np.abs(block.mean(axis=0) - mean) <= tol)


class TestLinearTargets:
    def test_zero_teacher(self):
        inputs = np.ones((5, 4))
        targets, teacher = ll.gen_linear_targets(inputs, (2, 4), seed=0, scale=0.0)
        assert np.array_equal(targets, np.zeros((5, 2)))
        assert np.array_equal(teacher, np.zeros((2, 4)))

    def test_default_shapes(self):
        inputs = np.zeros((7, 10))
        targets, teacher = ll.gen_linear_targets(inputs, (3, 10), seed=1)
        assert teacher.shape == (3, 10)
        assert targets.shape == (7, 3)

    def test_whitened_covariance_equals_teacher(self, mixture_data):
        cov = ll.covariance(mixture_data)
        assert np.linalg.norm(cov.sigma_yx - mixture_data.teacher) <= 1e-6


class TestWhiten:
    def test_already_white_unchanged(self):
        rng = np.random.default_rng(0)
        data = ll.whiten(
            ll.Dataset(inputs=rng.standard_normal((500, 6)),
                       targets=rng.standard_normal((500, 2)))
        )
        again = ll.whiten(data)
        assert np.linalg.norm(again.inputs - data.inputs) <= 1e-8 * np.linalg.norm(
            data.inputs
        )

    def test_mixture_becomes_white(self):
        spec = ll.MixtureSpec(components=3, samples_per_component=400, dim=10)
        x = ll.gen_gaussian_mixture(spec, seed=3)
        data = ll.whiten(ll.Dataset(inputs=x, targets=np.zeros((1200, 1))))
        cov = input_second_moment(data.inputs)
        assert np.linalg.norm(cov - np.eye(10)) <= 1e-8
        assert data.whitened

    def test_singular_when_fewer_samples_than_dims(self):
        rng = np.random.default_rng(1)
        data = ll.Dataset(inputs=rng.standard_normal((3, 5)),
                          targets=np.zeros((3, 1)))
        with pytest.raises(RankDeficiencyError, match="eigenvalue"):
            ll.whiten(data)

    def test_notes_record_missing_teacher(self):
        rng = np.random.default_rng(2)
        data = ll.whiten(
            ll.Dataset(inputs=rng.standard_normal((50, 3)),
                       targets=rng.standard_normal((50, 2)))
        )
        assert any("teacher" in note for note in data.notes)


class TestIdx:
    def test_round_trip(self, tmp_path):
        images = np.arange(2 * 2 * 2, dtype=np.uint8).reshape(2, 2, 2)
        labels = np.array([3, 7], dtype=np.uint8)
        ll.write_idx(images, labels, tmp_path / "im", tmp_path / "lb")
        batch = ll.load_idx(tmp_path / "im", tmp_path / "lb")
        assert batch.inputs.shape == (2, 4)
        assert np.allclose(batch.inputs * 255.0, images.reshape(2, 4))
        assert np.array_equal(batch.labels, labels)
        assert np.allclose(batch.targets.sum(axis=1), 1.0)

    def test_handcrafted_bytes(self, tmp_path):
        pixels = bytes([0, 128, 255, 64, 10, 20, 30, 40])
        with open(tmp_path / "im", "wb") as fh:
            fh.write(struct.pack(">iiii", 2051, 2, 2, 2) + pixels)
        with open(tmp_path / "lb", "wb") as fh:
            fh.write(struct.pack(">ii", 2049, 2) + bytes([0, 9]))
        batch = ll.load_idx(tmp_path / "im", tmp_path / "lb")
        assert np.allclose(
            batch.inputs,
            np.array([[0, 128, 255, 64], [10, 20, 30, 40]]) / 255.0,
        )
        assert np.array_equal(batch.labels, [0, 9])

    def test_wrong_magic(self, tmp_path):
        with open(tmp_path / "im", "wb") as fh:
            fh.write(struct.pack(">iiii", 1234, 1, 1, 1) + b"\x00")
        with open(tmp_path / "lb", "wb") as fh:
            fh.write(struct.pack(">ii", 2049, 1) + b"\x00")
        with pytest.raises(IdxMagicError, match="magic"):
            ll.load_idx(tmp_path / "im", tmp_path / "lb")

    def test_truncated_payload(self, tmp_path):
        with open(tmp_path / "im", "wb") as fh:
            fh.write(struct.pack(">iiii", 2051, 2, 2, 2) + b"\x00" * 5)
        with open(tmp_path / "lb", "wb") as fh:
            fh.write(struct.pack(">ii", 2049, 2) + b"\x00\x01")
        with pytest.raises(IdxTruncatedError):
            ll.load_idx(tmp_path / "im", tmp_path / "lb")

    def test_count_mismatch(self, tmp_path):
        with open(tmp_path / "im", "wb") as fh:
            fh.write(struct.pack(">iiii", 2051, 1, 1, 1) + b"\x00")
        with open(tmp_path / "lb", "wb") as fh:
            fh.write(struct.pack(">ii", 2049, 2) + b"\x00\x01")
        with pytest.raises(IdxCountMismatchError):
            ll.load_idx(tmp_path / "im", tmp_path / "lb")

    def test_subset_limit(self, tmp_path):
        images_path, labels_path = write_fake_idx(tmp_path, 20, seed=1)
        batch = ll.load_idx(images_path, labels_path, limit=7)
        assert batch.n_samples == 7


class TestCsvExport:
    def test_header_and_rows(self, tmp_path):
        data = ll.Dataset(inputs=np.array([[1.0, 2.0]]),
                          targets=np.array([[3.0]]))
        path = tmp_path / "data.csv"
        dataset_to_csv(data, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "x0,x1,y0"
        assert lines[1] == "1,2,3"
