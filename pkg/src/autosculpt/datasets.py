"""Datasets: a synthetic template-plus-noise classifier task, and a
read-only loader for the CIFAR-10 binary batches."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixel bytes
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Split:
    images: np.ndarray  # [N, C, H, W] float64
    labels: np.ndarray  # [N] int64

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class DatasetBundle:
    train: Split
    val: Split
    test: Split
    classes: int


def synth_dataset(seed: int = 0, samples: int = 2000, classes: int = 4,
                  image_size: int = 16, sigma: float = 0.5,
                  channels: int = 1) -> DatasetBundle:
    """Per-class Gaussian templates plus pixel noise of scale sigma.

    Labels cycle 0..classes-1 so the 80/10/10 index split stays balanced.
    sigma=0 reproduces the templates exactly.
    """
    if samples < classes or classes < 2:
        raise ValueError(f"need samples >= classes >= 2, got {samples}/{classes}")
    rng = np.random.default_rng(seed)
    templates = rng.standard_normal((classes, channels, image_size, image_size))
    labels = np.arange(samples, dtype=np.int64) % classes
    noise = rng.standard_normal((samples, channels, image_size, image_size))
    images = templates[labels] + sigma * noise
    n_train = int(samples * 0.8)
    n_val = int(samples * 0.1)
    cut2 = n_train + n_val
    return DatasetBundle(
        train=Split(images[:n_train], labels[:n_train]),
        val=Split(images[n_train:cut2], labels[n_train:cut2]),
        test=Split(images[cut2:], labels[cut2:]),
        classes=classes,
    )


def nearest_template_accuracy(bundle: DatasetBundle, templates: np.ndarray,
                              split: Split) -> float:
    """Classify by smallest L2 distance to a template (diagnostic)."""
    flat = split.images.reshape(len(split), -1)
    tflat = templates.reshape(templates.shape[0], -1)
    d2 = ((flat[:, None, :] - tflat[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == split.labels).mean())


def _read_cifar_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) == 0 or len(blob) % CIFAR_RECORD != 0:
        raise ValueError(f"{path}: size {len(blob)} is not a multiple of "
                         f"{CIFAR_RECORD}-byte records")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise ValueError(f"{path}: label {labels.max()} outside 0..9")
    images = raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(directory: str, val_seed: int = 0) -> DatasetBundle:
    """Read the binary-version batch files. The validation split is a
    seeded 50% sample of the test batch; no downloading happens here."""
    paths = [os.path.join(directory, f) for f in CIFAR_TRAIN_FILES]
    test_path = os.path.join(directory, CIFAR_TEST_FILE)
    for p in paths + [test_path]:
        if not os.path.exists(p):
            raise FileNotFoundError(f"CIFAR-10 batch missing: {p}")
    xs, ys = zip(*(_read_cifar_file(p) for p in paths))
    train = Split(np.concatenate(xs), np.concatenate(ys))
    tx, ty = _read_cifar_file(test_path)
    idx = np.random.default_rng(val_seed).permutation(len(ty))[: len(ty) // 2]
    return DatasetBundle(train=train, val=Split(tx[idx], ty[idx]),
                         test=Split(tx, ty), classes=10)
