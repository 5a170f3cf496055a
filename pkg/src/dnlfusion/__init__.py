"""Hyperspectral + LiDAR joint classification with disentangled non-local attention."""

from .attention import CANONICAL_WIRING, WiringConfig, dnl_forward, nl_forward
from .autodiff import Tensor, backward
from .extractors import ExtractorConfig
from .metrics import MetricsReport
from .model import FusionNet, ModelConfig
from .patches import PatchDataset, sample_patches
from .synthetic import SceneSpec, synth_scene
from .training import TrainConfig, ablate, compare_nl_dnl, evaluate, train

__version__ = "0.1.0"
