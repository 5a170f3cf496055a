"""Training loop, evaluation and the repeated-run experiments built on them."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .attention import ABLATION_GRID, WiringConfig
from .metrics import MetricsReport, RunMetrics, confusion_matrix
from .model import FusionNet, ModelConfig
from .patches import PatchDataset

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    repetitions: int = 5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("train.lr must be >= 0")
        for name in ("epochs", "batch_size", "repetitions"):
            if getattr(self, name) < 1:
                raise ValueError(f"train.{name} must be >= 1")


class Adam:
    def __init__(self, params: dict[str, ad.Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = p.data - self.lr * update


@dataclass
class TrainResult:
    model: FusionNet
    loss_history: list[float]
    batch_digest: str  # sha256 of the visited minibatch index sequence


def minibatches(indices: np.ndarray, batch_size: int, rng: np.random.Generator):
    order = indices[rng.permutation(len(indices))]
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train(model: FusionNet, dataset: PatchDataset, cfg: TrainConfig, indices=None) -> TrainResult:
    """Adam on mean softmax cross-entropy over the training split.

    Shuffling draws from ``cfg.seed`` only, so two models trained with the
    same config see the same batches in the same order.
    """
    idx = dataset.split("train") if indices is None else np.asarray(indices)
    if len(idx) == 0:
        raise TrainingError("training split is empty")
    labels = dataset.labels[idx]
    if labels.min() < 1 or labels.max() > model.num_classes:
        raise TrainingError(f"labels must lie in [1, {model.num_classes}]")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params, lr=cfg.learning_rate)
    digest = hashlib.sha256()
    history = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        total, seen = 0.0, 0
        for batch in minibatches(idx, cfg.batch_size, rng):
            digest.update(batch.tobytes())
            hsi, lidar = dataset.patches(batch)
            loss = ad.cross_entropy(model(hsi, lidar), dataset.targets(batch))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            grads = ad.backward(loss, params)
            opt.step(grads)
            total += value * len(batch)
            seen += len(batch)
            step += 1
        history.append(total / seen)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    model.eval()
    return TrainResult(model, history, digest.hexdigest())


def predict(model: FusionNet, dataset: PatchDataset, indices, batch_size: int = 256) -> np.ndarray:
    """0-based class predictions in eval mode."""
    was_training = model.training
    model.eval()
    out = []
    indices = np.asarray(indices)
    for start in range(0, len(indices), batch_size):
        batch = indices[start : start + batch_size]
        hsi, lidar = dataset.patches(batch)
        out.append(model.predict(hsi, lidar))
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: FusionNet, dataset: PatchDataset, split: str = "test") -> RunMetrics:
    idx = dataset.split(split)
    if len(idx) == 0:
        raise ValueError(f"{split} split is empty")
    pred = predict(model, dataset, idx)
    return RunMetrics(confusion_matrix(dataset.targets(idx), pred, dataset.num_classes))


@dataclass
class ExperimentResult:
    report: MetricsReport
    trained: list[TrainResult] = field(default_factory=list)


def run_repetitions(dataset: PatchDataset, model_cfg: ModelConfig, train_cfg: TrainConfig) -> ExperimentResult:
    """Train ``repetitions`` models (seed, seed + 1, ...) and pool their test metrics."""
    runs, trained = [], []
    for rep in range(train_cfg.repetitions):
        seed = train_cfg.seed + rep
        model = FusionNet(model_cfg, dataset.num_classes, seed=seed)
        result = train(model, dataset, replace(train_cfg, seed=seed))
        trained.append(result)
        runs.append(evaluate(result.model, dataset))
        log.info("%s rep %d OA %.2f", model_cfg.wiring, rep, runs[-1].oa)
    return ExperimentResult(MetricsReport.from_runs(runs, dataset.class_names), trained)


@dataclass
class AblationRow:
    wiring: WiringConfig
    oa_mean: float
    oa_std: float
    error: str | None = None


def ablate(
    dataset: PatchDataset,
    wirings=ABLATION_GRID,
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> list[AblationRow]:
    """One row per wiring; a failing row records its error and the grid continues."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    rows = []
    for wiring in wirings:
        try:
            rep = run_repetitions(dataset, replace(model_cfg, wiring=wiring), train_cfg).report
            rows.append(AblationRow(wiring, *rep.oa))
        except Exception as exc:  # noqa: BLE001 - reported per row
            log.warning("wiring %s failed: %s", wiring, exc)
            rows.append(AblationRow(wiring, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"))
    return rows


def compare_nl_dnl(
    dataset: PatchDataset, model_cfg: ModelConfig, train_cfg: TrainConfig
) -> tuple[ExperimentResult, ExperimentResult]:
    """Paired runs that differ only in the attention block."""
    nl = run_repetitions(dataset, replace(model_cfg, attention="nl"), train_cfg)
    dnl = run_repetitions(dataset, replace(model_cfg, attention="dnl"), train_cfg)
    return nl, dnl
