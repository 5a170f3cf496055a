"""Patch datasets sampled from co-registered HSI / LiDAR / label rasters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Houston 2013 class list with (train, test) counts per class.
HOUSTON_CLASSES = (
    ("Healthy grass", 198, 1053),
    ("Stressed grass", 190, 1064),
    ("Synthetic grass", 192, 505),
    ("Trees", 188, 1056),
    ("Soil", 186, 1056),
    ("Water", 182, 143),
    ("Residential", 196, 1072),
    ("Commercial", 191, 1036),
    ("Road", 193, 1059),
    ("Highway", 191, 1036),
    ("Railway", 181, 1054),
    ("Parking lot 1", 192, 1041),
    ("Parking lot 2", 184, 285),
    ("Tennis court", 181, 247),
    ("Running track", 187, 473),
)
HOUSTON_SHAPE = {"width": 1905, "height": 349, "bands": 144}


class SamplingError(ValueError):
    pass


def reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror out-of-range indices without repeating the edge (``-1 -> 1``)."""
    idx = np.abs(idx)
    return np.where(idx >= n, 2 * (n - 1) - idx, idx)


@dataclass
class PatchDataset:
    """Samples are pixel coordinates into shared rasters; patches are cut on
    demand with reflect padding at the borders.

    ``labels`` are 1-based class ids; ``targets`` gives 0-based ones.
    """

    hsi: np.ndarray  # (bands, H, W)
    lidar: np.ndarray  # (1, H, W)
    coords: np.ndarray  # (N, 2) row, col
    labels: np.ndarray  # (N,)
    is_train: np.ndarray  # (N,) bool
    patch_size: int
    num_classes: int
    class_names: list[str] = field(default_factory=list)
    cache_limit_bytes: int = 256 * 2**20
    _cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.lidar.ndim == 2:
            self.lidar = self.lidar[None]
        if not self.class_names:
            self.class_names = [f"class {i + 1}" for i in range(self.num_classes)]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def bands(self) -> int:
        return self.hsi.shape[0]

    def split(self, which: str) -> np.ndarray:
        if which not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {which!r}")
        return np.flatnonzero(self.is_train if which == "train" else ~self.is_train)

    def targets(self, idx) -> np.ndarray:
        return self.labels[idx] - 1

    def _cut(self, idx) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx)
        r = self.patch_size // 2
        offsets = np.arange(-r, r + 1)
        _, h, w = self.hsi.shape
        rows = reflect_index(self.coords[idx, 0][:, None] + offsets, h)
        cols = reflect_index(self.coords[idx, 1][:, None] + offsets, w)
        ri, ci = rows[:, :, None], cols[:, None, :]
        hsi = np.asarray(self.hsi[:, ri, ci], dtype=np.float64).transpose(1, 0, 2, 3)
        lid = np.asarray(self.lidar[:, ri, ci], dtype=np.float64).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(hsi), np.ascontiguousarray(lid)

    def patches(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """``(n, bands, p, p)`` HSI and ``(n, 1, p, p)`` LiDAR patches as float64."""
        idx = np.asarray(idx)
        size = len(self) * (self.bands + 1) * self.patch_size**2 * 8
        if self._cache is None and size <= self.cache_limit_bytes:
            self._cache = self._cut(np.arange(len(self)))
        if self._cache is not None:
            return self._cache[0][idx], self._cache[1][idx]
        return self._cut(idx)

    def subset(self, idx) -> "PatchDataset":
        idx = np.asarray(idx)
        return PatchDataset(
            self.hsi,
            self.lidar,
            self.coords[idx],
            self.labels[idx],
            self.is_train[idx],
            self.patch_size,
            self.num_classes,
            list(self.class_names),
            self.cache_limit_bytes,
        )


def sample_patches(
    hsi: np.ndarray,
    lidar: np.ndarray,
    labels: np.ndarray,
    patch_size: int,
    per_class_counts: Sequence[tuple[int, int | None]],
    seed: int,
    class_names: Sequence[str] | None = None,
) -> PatchDataset:
    """Seeded per-class sampling without replacement.

    ``per_class_counts[c - 1] = (train, test)`` for class id ``c``; a test
    count of ``None`` takes every remaining labeled pixel. Label 0 marks
    unlabeled pixels and is never sampled.
    """
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[0]
    lidar = lidar if lidar.ndim == 3 else lidar[None]
    if hsi.shape[1:] != labels.shape or lidar.shape[1:] != labels.shape:
        raise SamplingError(
            f"raster sizes disagree: hsi {hsi.shape[1:]}, lidar {lidar.shape[1:]}, labels {labels.shape}"
        )
    if patch_size % 2 == 0 or patch_size // 2 >= min(labels.shape):
        raise SamplingError(f"patch size {patch_size} must be odd and smaller than the raster")
    num_classes = len(per_class_counts)
    names = list(class_names) if class_names else [f"class {i + 1}" for i in range(num_classes)]
    if len(names) != num_classes:
        raise SamplingError(f"{len(names)} class names for {num_classes} classes")
    top = int(labels.max())
    if top > num_classes:
        raise SamplingError(f"labels go up to {top} but counts were given for {num_classes} classes")

    rng = np.random.default_rng(seed)
    coords, ys, train = [], [], []
    for c, (n_train, n_test) in enumerate(per_class_counts, start=1):
        pixels = np.argwhere(labels == c)
        available = len(pixels)
        want = n_train + (0 if n_test is None else n_test)
        if n_train < 0 or (n_test is not None and n_test < 0):
            raise SamplingError(f"class {c} ({names[c - 1]}): negative sample count")
        if want > available:
            raise SamplingError(
                f"class {c} ({names[c - 1]}): requested {n_train} train + {n_test} test "
                f"but only {available} labeled pixels are available"
            )
        order = rng.permutation(available)
        n_test = available - n_train if n_test is None else n_test
        chosen = pixels[order[: n_train + n_test]]
        coords.append(chosen)
        ys.append(np.full(len(chosen), c))
        train.append(np.arange(len(chosen)) < n_train)
    return PatchDataset(
        hsi=hsi,
        lidar=lidar,
        coords=np.concatenate(coords).astype(np.int64),
        labels=np.concatenate(ys).astype(np.int64),
        is_train=np.concatenate(train),
        patch_size=patch_size,
        num_classes=num_classes,
        class_names=names,
    )
