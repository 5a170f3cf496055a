"""HSI, LiDAR and fused feature extractors.

All three emit ``(feature_channels, p, p)`` maps (batched as
``(N, feature_channels, p, p)``) so they can be wired into any attention
branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import BatchNorm2d, Conv2d, Module, MultiscaleDepthwise


@dataclass(frozen=True)
class ExtractorConfig:
    hsi_bands: int = 144
    patch_size: int = 11
    feature_channels: int = 64
    residual_blocks: int = 2
    lidar_layers: int = 3

    def __post_init__(self):
        for field in ("hsi_bands", "patch_size", "feature_channels", "lidar_layers"):
            if getattr(self, field) < 1:
                raise ValueError(f"extractor.{field} must be positive")
        if self.residual_blocks < 0:
            raise ValueError("extractor.residual_blocks must be >= 0")
        if self.feature_channels % 4:
            raise ValueError(
                f"extractor.feature_channels must be divisible by 4, got {self.feature_channels}"
            )
        if self.patch_size % 2 == 0:
            raise ValueError(f"extractor.patch_size must be odd, got {self.patch_size}")


class ResidualBlock(Module):
    """relu(f(X) + X) with f = batchnorm(conv1x1(multiscale depthwise(X)))."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.depthwise = MultiscaleDepthwise(channels, rng)
        self.pointwise = Conv2d(channels, channels, 1, rng)
        self.norm = BatchNorm2d(channels)

    def residual(self, x):
        return self.norm(self.pointwise(self.depthwise(x)))

    def forward(self, x):
        if x.shape[-3] != self.channels:
            raise ValueError(f"residual block expects {self.channels} channels, got {x.shape[-3]}")
        return ad.relu(self.residual(x) + x)


class HSIExtractor(Module):
    def __init__(self, cfg: ExtractorConfig, rng: np.random.Generator):
        super().__init__()
        self.bands = cfg.hsi_bands
        self.project = Conv2d(cfg.hsi_bands, cfg.feature_channels, 1, rng)
        self.blocks = [ResidualBlock(cfg.feature_channels, rng) for _ in range(cfg.residual_blocks)]

    def forward(self, patch):
        if patch.shape[-3] != self.bands:
            raise ValueError(
                f"HSI patch has {patch.shape[-3]} bands, expected {self.bands} (extractor.hsi_bands)"
            )
        x = self.project(patch)
        for block in self.blocks:
            x = block(x)
        return x


class LidarExtractor(Module):
    """Stacked conv3x3 -> batchnorm -> relu stages on a single-band elevation patch."""

    def __init__(self, cfg: ExtractorConfig, rng: np.random.Generator):
        super().__init__()
        c = cfg.feature_channels
        self.convs = [Conv2d(1 if i == 0 else c, c, 3, rng) for i in range(cfg.lidar_layers)]
        self.norms = [BatchNorm2d(c) for _ in range(cfg.lidar_layers)]

    def forward(self, patch):
        if patch.shape[-3] != 1:
            raise ValueError(f"LiDAR patch must have one channel, got {patch.shape[-3]}")
        x = patch
        for conv, norm in zip(self.convs, self.norms):
            x = ad.relu(norm(conv(x)))
        return x


class Fusion(Module):
    """F = conv3x3(relu(bn(conv3x3(upsample(avgpool(H + L))))))."""

    def __init__(self, channels: int, rng: np.random.Generator, pool: int = 2):
        super().__init__()
        self.pool = pool
        self.conv_in = Conv2d(channels, channels, 3, rng)
        self.norm = BatchNorm2d(channels)
        self.conv_out = Conv2d(channels, channels, 3, rng)

    def mix(self, s):
        size = s.shape[-2:]
        if min(size) >= self.pool:
            s = ad.upsample_nearest(ad.avgpool2d(s, self.pool, self.pool), size)
        return self.conv_out(ad.relu(self.norm(self.conv_in(s))))

    def forward(self, h, lidar):
        if h.shape != lidar.shape:
            raise ValueError(f"cannot fuse maps of shapes {h.shape} and {lidar.shape}")
        return self.mix(h + lidar)


def residual_block(x, block: ResidualBlock):
    return block(x)


def extract_hsi(patch, extractor: HSIExtractor):
    return extractor(ad.as_tensor(patch))


def extract_lidar(patch, extractor: LidarExtractor):
    return extractor(ad.as_tensor(patch))


def fuse(h, lidar, fusion: Fusion):
    return fusion(ad.as_tensor(h), ad.as_tensor(lidar))
