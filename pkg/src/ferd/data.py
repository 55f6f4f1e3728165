"""Dataset ingestion: CIFAR-style binary records and seeded synthetic data.

Binary record layout (one record per image): 1 label byte followed by
channels*H*W pixel bytes, row-major within each channel plane. A dataset
directory holds ``*.bin`` files; files whose name starts with ``test`` form
the test split, everything else the training split.

The synthetic generator renders seeded Gaussian class prototypes as images:
each class gets a low-frequency prototype (a coarse Gaussian grid upsampled
to full resolution), and samples are the prototype plus pixel noise, clipped
to [0, 1].
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, InputError


@dataclass
class LabeledData:
    """An in-memory labeled image set: float images in [0,1] plus int labels."""

    images: torch.Tensor  # (N, channels, H, W) float32
    labels: torch.Tensor  # (N,) int64
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise InputError("images must be (N, C, H, W) with one label per image")

    def __len__(self):
        return self.images.shape[0]

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])

    def batches(self, batch_size, shuffle=False, seed=0):
        """Yield (images, labels) batches; shuffling is seeded and reproducible."""
        n = len(self)
        if shuffle:
            order = torch.randperm(n, generator=torch.Generator().manual_seed(seed))
        else:
            order = torch.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield self.images[idx], self.labels[idx]


def write_binary_batch(path, images, labels):
    """Write images/labels as one CIFAR-style binary batch file."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 4:
        raise InputError("images must be (N, C, H, W)")
    pixels = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        for i in range(images.shape[0]):
            fh.write(bytes([int(labels[i])]))
            fh.write(pixels[i].tobytes())


def read_binary_batch(path, input_shape):
    """Read one binary batch file; input_shape is (channels, H, W)."""
    channels, height, width = input_shape
    record = 1 + channels * height * width
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % record != 0:
        raise InputError(
            f"{path}: file size {raw.size} is not a multiple of record size {record}"
        )
    raw = raw.reshape(-1, record)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(-1, channels, height, width).astype(np.float32) / 255.0
    return images, labels


def load_binary_dir(root, input_shape, num_classes):
    """Load a directory of binary batch files into (train, test) splits."""
    root = Path(root)
    files = sorted(root.glob("*.bin"))
    if not files:
        raise InputError(f"no .bin files under {root}")
    train_files = [f for f in files if not f.name.startswith("test")]
    test_files = [f for f in files if f.name.startswith("test")]

    def _stack(paths):
        if not paths:
            return None
        parts = [read_binary_batch(p, input_shape) for p in paths]
        images = torch.from_numpy(np.concatenate([im for im, _ in parts]))
        labels = torch.from_numpy(np.concatenate([lb for _, lb in parts]))
        if int(labels.max()) >= num_classes:
            raise InputError(
                f"label {int(labels.max())} out of range for num_classes={num_classes}"
            )
        return LabeledData(images, labels, num_classes)

    return _stack(train_files), _stack(test_files)


def _prototypes(num_classes, channels, size, rng, overlap):
    """Low-frequency class prototypes: coarse Gaussian grids upsampled to size."""
    coarse = max(2, size // 4)
    grids = rng.normal(0.0, 1.0, size=(num_classes, channels, coarse, coarse))
    if overlap > 0.0 and num_classes >= 2:
        # Pull the last class toward class 0 so one pair is deliberately hard.
        grids[-1] = (1.0 - overlap) * grids[-1] + overlap * grids[0]
    t = torch.from_numpy(grids).float()
    up = torch.nn.functional.interpolate(
        t, size=(size, size), mode="bilinear", align_corners=False
    )
    return 0.5 + 0.35 * torch.tanh(up)


def synthetic_dataset(num_classes=4, channels=3, size=16, train=2048, test=512,
                      noise=0.1, overlap=0.0, seed=0):
    """Seeded synthetic image classification data from Gaussian class prototypes."""
    if num_classes < 2:
        raise ConfigurationError("synthetic dataset needs num_classes >= 2")
    rng = np.random.default_rng(seed)
    protos = _prototypes(num_classes, channels, size, rng, overlap)

    def _split(n, split_seed):
        srng = np.random.default_rng(split_seed)
        labels = torch.from_numpy(srng.integers(0, num_classes, size=n))
        eps = torch.from_numpy(
            srng.normal(0.0, noise, size=(n, channels, size, size))
        ).float()
        images = (protos[labels] + eps).clamp(0.0, 1.0)
        return LabeledData(images, labels.long(), num_classes)

    return _split(train, seed * 1000 + 1), _split(test, seed * 1000 + 2)


_SYNTH_DEFAULTS = {
    "classes": 4, "channels": 3, "size": 16, "train": 2048, "test": 512,
    "noise": 0.1, "overlap": 0.0, "seed": 0,
}


def parse_synthetic_uri(uri):
    """Parse 'synthetic:key=val,...' into keyword arguments for synthetic_dataset."""
    spec = uri.split(":", 1)[1] if ":" in uri else ""
    kwargs = dict(_SYNTH_DEFAULTS)
    if spec:
        for item in spec.split(","):
            if "=" not in item:
                raise ConfigurationError(f"bad synthetic spec item: {item!r}")
            key, val = item.split("=", 1)
            key = key.strip()
            if key not in kwargs:
                raise ConfigurationError(f"unknown synthetic spec key: {key!r}")
            kwargs[key] = float(val) if key in ("noise", "overlap") else int(val)
    return kwargs


def load_dataset(source, input_shape=None, num_classes=None):
    """Resolve a data source (synthetic URI or directory path) to (train, test)."""
    if source.startswith("synthetic"):
        kw = parse_synthetic_uri(source)
        return synthetic_dataset(
            num_classes=kw["classes"], channels=kw["channels"], size=kw["size"],
            train=kw["train"], test=kw["test"], noise=kw["noise"],
            overlap=kw["overlap"], seed=kw["seed"],
        )
    if input_shape is None or num_classes is None:
        raise ConfigurationError(
            "directory data sources need input_shape and num_classes"
        )
    return load_binary_dir(source, input_shape, num_classes)
