"""The full classifier: extractors, non-local attention, pooled linear head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import CANONICAL_WIRING, DisentangledNonLocal, NonLocal, WiringConfig
from .extractors import ExtractorConfig, Fusion, HSIExtractor, LidarExtractor
from .nn import Linear, Module

ATTENTION_TYPES = ("dnl", "nl")


@dataclass(frozen=True)
class ModelConfig:
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    wiring: WiringConfig = CANONICAL_WIRING
    attention: str = "dnl"
    embed_channels: int | None = None  # None -> feature_channels // 2

    def __post_init__(self):
        if self.attention not in ATTENTION_TYPES:
            raise ValueError(f"attention.type must be one of {ATTENTION_TYPES}, got {self.attention!r}")
        if self.embed_channels is not None and self.embed_channels < 1:
            raise ValueError("attention.embed_channels must be >= 1")

    @property
    def embed_dim(self) -> int:
        if self.embed_channels is not None:
            return self.embed_channels
        return max(1, self.extractor.feature_channels // 2)


class FusionNet(Module):
    """Maps an (HSI patch, LiDAR patch) batch to class logits.

    Only the feature maps the wiring actually reads are computed; a pure
    ``H H H H`` model never touches the LiDAR branch.
    """

    def __init__(self, cfg: ModelConfig, num_classes: int, seed: int = 0):
        super().__init__()
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.cfg = cfg
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        ext = cfg.extractor
        c = ext.feature_channels
        # init order is fixed so that nl/dnl twins share extractor and head weights
        self.hsi = HSIExtractor(ext, rng)
        self.lidar = LidarExtractor(ext, rng)
        self.fusion = Fusion(c, rng)
        self.head = Linear(c, num_classes, rng)
        attn = DisentangledNonLocal if cfg.attention == "dnl" else NonLocal
        self.attention = attn(c, cfg.embed_dim, cfg.wiring, rng)

    def features(self, hsi_patch, lidar_patch):
        need = set(self.cfg.wiring.sources())
        if self.cfg.attention == "nl":
            w = self.cfg.wiring
            need = {w.value, w.key, w.query}
        h = lid = f = None
        if need & {"H", "F"}:
            h = self.hsi(ad.as_tensor(hsi_patch))
        if need & {"L", "F"}:
            lid = self.lidar(ad.as_tensor(lidar_patch))
        if "F" in need:
            f = self.fusion(h, lid)
        return h, lid, f

    def forward(self, hsi_patch, lidar_patch):
        h, lid, f = self.features(hsi_patch, lidar_patch)
        y = self.attention(h, lid, f)
        return self.head(ad.global_avg_pool(y))

    def predict(self, hsi_patch, lidar_patch) -> np.ndarray:
        """0-based class indices; ties go to the lowest index."""
        return np.argmax(self.forward(hsi_patch, lidar_patch).data, axis=1)
