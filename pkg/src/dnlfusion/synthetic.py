"""Synthetic HSI + LiDAR scenes where neither modality alone separates every class.

Classes 0/1 and 2/3 (0-based) share a spectrum and differ only in
elevation. Classes 0/2, 1/3, 4/5, 6/7, ... share an elevation and differ only
in spectrum. Spectra alone therefore top out at ``(C - 2) / C`` balanced
accuracy; for six classes elevation alone tops out at one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SceneSpec:
    classes: int = 6
    height: int = 64
    width: int = 64
    bands: int = 16
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("scene.classes must be >= 2")
        if self.bands < 4:
            raise ValueError("scene.bands must be >= 4")
        if self.height < 8 or self.width < 8:
            raise ValueError("scene must be at least 8x8")
        if self.noise_sigma < 0:
            raise ValueError("scene.noise_sigma must be >= 0")


@dataclass
class Scene:
    hsi: np.ndarray  # (bands, H, W)
    lidar: np.ndarray  # (1, H, W)
    labels: np.ndarray  # (H, W), 1-based class ids
    signatures: np.ndarray  # (classes, bands)
    elevations: np.ndarray  # (classes,)


def spectral_group(c: int) -> int:
    return c // 2 if c < 4 else c - 2


def elevation_group(c: int) -> int:
    return c % 2 if c < 4 else 2 + (c - 4) // 2


def _cuts(rng, length: int, pieces: int) -> np.ndarray:
    # random strip boundaries, each strip at least length // (2 * pieces) wide
    min_w = max(1, length // (2 * pieces))
    slack = length - min_w * pieces
    widths = min_w + rng.multinomial(slack, np.full(pieces, 1.0 / pieces))
    return np.concatenate([[0], np.cumsum(widths)])


def layout(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Tile the scene with random rectangles and spread the classes evenly over them."""
    per_side = max(2, int(np.ceil(np.sqrt(2 * spec.classes))))
    per_side = min(per_side, spec.height // 2, spec.width // 2)
    rows = _cuts(rng, spec.height, per_side)
    cols = _cuts(rng, spec.width, per_side)
    cells = np.resize(np.arange(spec.classes), per_side * per_side)
    rng.shuffle(cells)
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    for i in range(per_side):
        for j in range(per_side):
            labels[rows[i] : rows[i + 1], cols[j] : cols[j + 1]] = cells[i * per_side + j] + 1
    return labels


def _signature(rng, bands: int) -> np.ndarray:
    x = np.linspace(0.0, 1.0, bands)
    base = rng.uniform(0.2, 0.5)
    bumps = sum(
        rng.uniform(-0.35, 0.35) * np.exp(-0.5 * ((x - rng.uniform(0, 1)) / rng.uniform(0.08, 0.3)) ** 2)
        for _ in range(3)
    )
    return base + bumps


def synth_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    labels = layout(spec, rng)
    n_spec = max(spectral_group(c) for c in range(spec.classes)) + 1
    n_elev = max(elevation_group(c) for c in range(spec.classes)) + 1
    group_spectra = np.stack([_signature(rng, spec.bands) for _ in range(n_spec)])
    levels = rng.permutation(n_elev).astype(np.float64)
    signatures = np.stack([group_spectra[spectral_group(c)] for c in range(spec.classes)])
    elevations = np.array([levels[elevation_group(c)] for c in range(spec.classes)])

    idx = labels - 1
    hsi = signatures[idx].transpose(2, 0, 1)
    lidar = elevations[idx][None]
    if spec.noise_sigma > 0:
        hsi = hsi + rng.normal(0.0, spec.noise_sigma, size=hsi.shape)
        lidar = lidar + rng.normal(0.0, spec.noise_sigma, size=lidar.shape)
    return Scene(hsi=hsi, lidar=lidar, labels=labels, signatures=signatures, elevations=elevations)


def single_modality_ceiling(classes: int, modality: str) -> float:
    """Best achievable balanced accuracy using one modality's class means only."""
    group = spectral_group if modality == "hsi" else elevation_group
    return len({group(c) for c in range(classes)}) / classes
