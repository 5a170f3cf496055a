"""Experiment config files: flat ``key = value`` lines with dotted sections.

Example::

    # synthetic desk-scale run
    scene.classes = 6
    scene.bands = 16
    extractor.hsi_bands = 16
    extractor.patch_size = 7
    extractor.feature_channels = 16
    wiring = F H L H
    attention.type = dnl
    train.lr = 0.003
    train.epochs = 30

Exactly one data source is allowed: ``data.*`` raster paths or a
``scene.*`` synthetic spec. Relative ``data.*`` paths resolve against the
config file's directory. ``#`` starts a comment.
"""

from __future__ import annotations

import difflib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .attention import ABLATION_GRID, WiringConfig
from .extractors import ExtractorConfig
from .model import ModelConfig
from .synthetic import SceneSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataPaths:
    hsi: str
    lidar: str
    labels: str
    class_names: tuple[str, ...] = ()


@dataclass(frozen=True)
class SamplingConfig:
    # one entry per class, or a single entry applied to every class; None = all remaining
    train_counts: tuple[int, ...] = (30,)
    test_counts: tuple[int | None, ...] = (None,)
    seed: int = 0

    def counts(self, num_classes: int) -> list[tuple[int, int | None]]:
        def expand(values, name):
            if len(values) == 1:
                return list(values) * num_classes
            if len(values) != num_classes:
                raise ConfigError(f"sampling.{name} has {len(values)} entries for {num_classes} classes")
            return list(values)

        return list(zip(expand(self.train_counts, "train_counts"), expand(self.test_counts, "test_counts")))


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataPaths | None = None
    scene: SceneSpec | None = None
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    wiring: WiringConfig = WiringConfig("F", "H", "L", "H")
    attention: str = "dnl"
    embed_channels: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    ablate_wirings: tuple[WiringConfig, ...] = ABLATION_GRID
    out: str = "runs/default"
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if (self.data is None) == (self.scene is None):
            raise ConfigError("config needs exactly one data source: data.* raster paths or a scene.* spec")

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.extractor, self.wiring, self.attention, self.embed_channels)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


# ---------------------------------------------------------------------------
# key table: config key -> (group, attribute, parse, format)


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _counts(text):
    return tuple(None if t == "rest" else int(t) for t in text.replace(",", " ").split())


def _fmt_counts(values):
    return " ".join("rest" if v is None else str(v) for v in values)


def _opt_int(text):
    return None if text == "auto" else int(text)


def _wirings(text):
    return tuple(WiringConfig.parse(chunk) for chunk in text.split(";") if chunk.strip())


def _names(text):
    return tuple(n.strip() for n in text.split(";") if n.strip())


_str = (str, str)
_int = (int, str)
_float = (float, repr)

KEYS = {
    "data.hsi": ("data", "hsi", *_str),
    "data.lidar": ("data", "lidar", *_str),
    "data.labels": ("data", "labels", *_str),
    "data.class_names": ("data", "class_names", _names, "; ".join),
    "scene.classes": ("scene", "classes", *_int),
    "scene.height": ("scene", "height", *_int),
    "scene.width": ("scene", "width", *_int),
    "scene.bands": ("scene", "bands", *_int),
    "scene.noise_sigma": ("scene", "noise_sigma", *_float),
    "scene.seed": ("scene", "seed", *_int),
    "sampling.train_counts": ("sampling", "train_counts", _ints, _fmt_counts),
    "sampling.test_counts": ("sampling", "test_counts", _counts, _fmt_counts),
    "sampling.seed": ("sampling", "seed", *_int),
    "extractor.hsi_bands": ("extractor", "hsi_bands", *_int),
    "extractor.patch_size": ("extractor", "patch_size", *_int),
    "extractor.feature_channels": ("extractor", "feature_channels", *_int),
    "extractor.residual_blocks": ("extractor", "residual_blocks", *_int),
    "extractor.lidar_layers": ("extractor", "lidar_layers", *_int),
    "wiring": (None, "wiring", WiringConfig.parse, str),
    "attention.type": (None, "attention", str, str),
    "attention.embed_channels": (None, "embed_channels", _opt_int, lambda v: "auto" if v is None else str(v)),
    "train.lr": ("train", "learning_rate", *_float),
    "train.epochs": ("train", "epochs", *_int),
    "train.batch_size": ("train", "batch_size", *_int),
    "train.seed": ("train", "seed", *_int),
    "train.repetitions": ("train", "repetitions", *_int),
    "ablate.wirings": (None, "ablate_wirings", _wirings, lambda ws: "; ".join(str(w) for w in ws)),
    "out": (None, "out", *_str),
}

_GROUP_TYPES = {
    "data": DataPaths,
    "scene": SceneSpec,
    "sampling": SamplingConfig,
    "extractor": ExtractorConfig,
    "train": TrainConfig,
}


def _parse_lines(text: str, origin: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _check_key(key: str) -> None:
    if key not in KEYS:
        close = difflib.get_close_matches(key, KEYS, n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")


def build_config(values: dict[str, str], base_dir: str = ".") -> ExperimentConfig:
    groups: dict[str, dict] = {g: {} for g in _GROUP_TYPES}
    top: dict = {}
    for key, text in values.items():
        _check_key(key)
        group, attr, parse, _ = KEYS[key]
        try:
            value = parse(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
        (groups[group] if group else top)[attr] = value
    try:
        built = {}
        for group, kwargs in groups.items():
            if group in ("data", "scene"):
                built[group] = _GROUP_TYPES[group](**kwargs) if kwargs else None
            else:
                built[group] = _GROUP_TYPES[group](**kwargs)
        cfg = ExperimentConfig(base_dir=base_dir, **built, **top)
        cfg.model  # validates attention settings
    except TypeError as exc:
        raise ConfigError(f"incomplete config section: {exc}") from None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config(text: str, overrides=(), base_dir: str = ".", origin: str = "<config>") -> ExperimentConfig:
    values = _parse_lines(text, origin)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        _check_key(key)
        values[key] = value
    return build_config(values, base_dir)


def load_config(path: str | os.PathLike, overrides=()) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), overrides, base_dir=str(path.parent), origin=str(path))


def to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key, (group, attr, _, fmt) in KEYS.items():
        owner = getattr(cfg, group) if group else cfg
        if owner is None:
            continue
        lines.append(f"{key} = {fmt(getattr(owner, attr))}")
    return "\n".join(lines) + "\n"


def default_synthetic_config() -> str:
    """A small config that runs end to end in about a minute per repetition."""
    return (
        "scene.classes = 6\nscene.height = 64\nscene.width = 64\nscene.bands = 16\n"
        "scene.noise_sigma = 0.05\nscene.seed = 0\n"
        "sampling.train_counts = 30\nsampling.test_counts = 100\nsampling.seed = 0\n"
        "extractor.hsi_bands = 16\nextractor.patch_size = 7\nextractor.feature_channels = 16\n"
        "extractor.residual_blocks = 2\nextractor.lidar_layers = 3\n"
        "wiring = F H L H\nattention.type = dnl\nattention.embed_channels = 8\n"
        "train.lr = 0.003\ntrain.epochs = 30\ntrain.batch_size = 32\ntrain.seed = 0\ntrain.repetitions = 5\n"
    )

