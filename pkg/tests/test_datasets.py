"""Datasets: synthetic generator determinism and CIFAR binary parsing."""

import numpy as np
import pytest

from autosculpt.datasets import (CIFAR_RECORD, DatasetBundle, Split,
                                 _read_cifar_file, load_cifar10,
                                 nearest_template_accuracy, synth_dataset)


class TestSynth:
    def test_same_seed_bit_identical(self):
        a = synth_dataset(seed=7)
        b = synth_dataset(seed=7)
        for sa, sb in ((a.train, b.train), (a.val, b.val), (a.test, b.test)):
            assert sa.images.tobytes() == sb.images.tobytes()
            assert sa.labels.tobytes() == sb.labels.tobytes()
        c = synth_dataset(seed=8)
        assert a.train.images.tobytes() != c.train.images.tobytes()

    def test_split_sizes_and_shapes(self):
        d = synth_dataset(seed=0, samples=2000, classes=4, image_size=16)
        assert len(d.train) == 1600 and len(d.val) == 200 and len(d.test) == 200
        assert d.train.images.shape == (1600, 1, 16, 16)
        assert d.train.labels.dtype == np.int64

    def test_labels_cycle_and_balance(self):
        d = synth_dataset(seed=0, samples=400, classes=4)
        assert list(d.train.labels[:8]) == [0, 1, 2, 3, 0, 1, 2, 3]
        for split in (d.train, d.val, d.test):
            counts = np.bincount(split.labels, minlength=4)
            assert counts.min() == counts.max()

    def test_sigma_zero_nearest_template_perfect(self):
        d = synth_dataset(seed=3, samples=400, classes=4, sigma=0.0)
        templates = np.random.default_rng(3).standard_normal((4, 1, 16, 16))
        for split in (d.train, d.val, d.test):
            assert nearest_template_accuracy(d, templates, split) == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_dataset(samples=3, classes=4)
        with pytest.raises(ValueError):
            synth_dataset(classes=1)


def write_batch(path, n, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    rec = np.zeros((n, CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = rng.integers(0, 10, n) if labels is None else labels
    rec[:, 1:] = rng.integers(0, 256, (n, 3072))
    path.write_bytes(rec.tobytes())
    return rec


class TestCifar:
    def test_record_arithmetic(self):
        assert CIFAR_RECORD == 1 + 3 * 32 * 32

    def test_parse_shapes_and_range(self, tmp_path):
        p = tmp_path / "batch.bin"
        write_batch(p, 5)
        images, labels = _read_cifar_file(str(p))
        assert images.shape == (5, 3, 32, 32)
        assert labels.shape == (5,)
        assert images.min() >= 0.0 and images.max() <= 1.0

    def test_first_record_round_trips(self, tmp_path):
        p = tmp_path / "batch.bin"
        rec = write_batch(p, 3, seed=1)
        images, labels = _read_cifar_file(str(p))
        rebuilt = np.empty(CIFAR_RECORD, dtype=np.uint8)
        rebuilt[0] = labels[0]
        rebuilt[1:] = np.round(images[0] * 255.0).astype(np.uint8).reshape(-1)
        assert rebuilt.tobytes() == rec[0].tobytes()

    def test_bad_size_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"\x00" * (CIFAR_RECORD + 1))
        with pytest.raises(ValueError, match="multiple"):
            _read_cifar_file(str(p))

    def test_bad_label_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        write_batch(p, 2, labels=np.array([3, 11], dtype=np.uint8))
        with pytest.raises(ValueError, match="label"):
            _read_cifar_file(str(p))

    def test_load_directory_layout(self, tmp_path):
        for i in range(1, 6):
            write_batch(tmp_path / f"data_batch_{i}.bin", 4, seed=i)
        write_batch(tmp_path / "test_batch.bin", 6, seed=9)
        d = load_cifar10(str(tmp_path))
        assert isinstance(d, DatasetBundle) and d.classes == 10
        assert len(d.train) == 20 and len(d.test) == 6 and len(d.val) == 3
        again = load_cifar10(str(tmp_path))
        assert d.val.labels.tobytes() == again.val.labels.tobytes()

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_cifar10(str(tmp_path))
