"""Image datasets and seeded batch iteration.

CIFAR-10 is read from the python pickle release, either unpacked
(``cifar-10-batches-py/``) or as the original tarball, found in
``cache_dir`` or the directory named by ``HYBRID_JSCC_DATA``.  The last
5,000 images of a fixed permutation of the training set form the
validation split.  ``synthetic`` is a procedural stand-in for tests.
"""
from __future__ import annotations

import hashlib
import os
import pickle
import tarfile
import urllib.request
from pathlib import Path

import numpy as np
import torch

DATA_ENV = "HYBRID_JSCC_DATA"
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"
CIFAR_MD5 = "c58f30108f718f92721af3b95e74349a"
CIFAR_TAR = "cifar-10-python.tar.gz"
CIFAR_DIR = "cifar-10-batches-py"
VAL_SIZE = 5000
SPLIT_SEED = 20240


class DatasetUnavailable(RuntimeError):
    """The dataset is neither cached nor downloadable."""


def default_cache_dir() -> Path:
    env = os.environ.get(DATA_ENV)
    return Path(env) if env else Path.home() / ".cache" / "hybrid_jscc"


def _md5(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_batches(open_member, names) -> np.ndarray:
    arrays = []
    for name in names:
        with open_member(name) as f:
            d = pickle.load(f, encoding="bytes")
        arrays.append(np.asarray(d[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32))
    return np.concatenate(arrays)


def _load_cifar_raw(cache: Path, train: bool, download: bool) -> np.ndarray:
    names = [f"data_batch_{i}" for i in range(1, 6)] if train else ["test_batch"]
    unpacked = cache / CIFAR_DIR
    if unpacked.is_dir():
        return _read_batches(lambda n: open(unpacked / n, "rb"), names)
    tar = cache / CIFAR_TAR
    if not tar.exists():
        if not download:
            raise DatasetUnavailable(
                f"CIFAR-10 not found in {cache}; place {CIFAR_TAR} or {CIFAR_DIR}/ there"
                f" (or set {DATA_ENV}), or pass download=True")
        cache.mkdir(parents=True, exist_ok=True)
        try:
            urllib.request.urlretrieve(CIFAR_URL, tar)
        except OSError as e:
            tar.unlink(missing_ok=True)
            raise DatasetUnavailable(f"download of {CIFAR_URL} failed: {e}") from e
    if _md5(tar) != CIFAR_MD5:
        raise DatasetUnavailable(f"{tar} has the wrong checksum")
    with tarfile.open(tar, "r:gz") as tf:
        return _read_batches(lambda n: tf.extractfile(f"{CIFAR_DIR}/{n}"), names)


def synthetic_images(n: int, seed: int = 0, size: int = 32) -> torch.Tensor:
    """Smooth random colour images in [0, 1]: low-frequency waves plus soft blobs."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    out = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        img = np.zeros((3, size, size))
        for _ in range(3):
            f = rng.uniform(0.5, 3.0, 2)
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(2 * np.pi * (f[0] * xx + f[1] * yy) + phase)
            img += rng.uniform(0.1, 0.3, (3, 1, 1)) * wave
        for _ in range(2):
            c = rng.uniform(0, 1, 2)
            r = rng.uniform(0.1, 0.3)
            blob = np.exp(-((xx - c[0]) ** 2 + (yy - c[1]) ** 2) / (2 * r * r))
            img += rng.uniform(-0.5, 0.5, (3, 1, 1)) * blob
        out[i] = np.clip(img + rng.uniform(0.3, 0.7, (3, 1, 1)), 0, 1)
    return torch.from_numpy(out)


def load_dataset(name: str = "cifar10", split: str = "train", cache_dir=None,
                 download: bool = False, limit: int | None = None) -> torch.Tensor:
    """All images of ``split`` as a float tensor ``(N, 3, 32, 32)`` in [0, 1].

    ``split`` is ``train`` (45,000), ``val`` (5,000) or ``test`` (10,000)
    for CIFAR-10.  ``limit`` keeps the first ``limit`` images.
    """
    if split not in ("train", "val", "test"):
        raise ValueError(f"unknown split {split!r}")
    if name == "synthetic":
        sizes = {"train": 2048, "val": 256, "test": 256}
        n = sizes[split] if limit is None else limit
        return synthetic_images(n, seed={"train": 0, "val": 1, "test": 2}[split])
    if name != "cifar10":
        raise ValueError(f"unknown dataset {name!r}")
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    raw = _load_cifar_raw(cache, split != "test", download)
    if split != "test":
        perm = np.random.default_rng(SPLIT_SEED).permutation(raw.shape[0])
        raw = raw[perm[-VAL_SIZE:]] if split == "val" else raw[perm[:-VAL_SIZE]]
    if limit is not None:
        raw = raw[:limit]
    return torch.from_numpy(raw.astype(np.float32) / 255.0)


def batches(images: torch.Tensor, batch_size: int, seed: int = 0, epoch: int = 0,
            shuffle: bool = True, drop_last: bool = False):
    """Yield mini-batches in an order fixed by ``(seed, epoch)``."""
    n = images.shape[0]
    if shuffle:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch,)))
        order = torch.from_numpy(rng.permutation(n))
    else:
        order = torch.arange(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield images[order[start:start + batch_size]]
