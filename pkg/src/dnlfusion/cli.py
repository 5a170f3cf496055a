"""Command-line entry point.

    dnlfusion train|eval|ablate|compare|gradcheck|synth|render --config <path> [section.key=value ...] --out <dir>

``train`` writes ``model_rep<r>.ckpt`` per repetition plus ``loss_history.csv``;
``eval`` reads those checkpoints back and writes ``metrics.txt``,
``metrics.csv`` and ``confusion.csv``. ``gradcheck`` needs no config.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .attention import ABLATION_ROWS, TABLE1_REFERENCE
from .config import ConfigError, ExperimentConfig, load_config, to_text
from .gradcheck import run_suite
from .metrics import MetricsReport
from .model import FusionNet
from .patches import PatchDataset, SamplingError, sample_patches
from .raster import RasterError, load_raster, save_raster
from .render import default_palette, render_map
from .synthetic import synth_scene
from .training import TrainingError, ablate, compare_nl_dnl, evaluate, predict, run_repetitions

log = logging.getLogger("dnlfusion")

COMMANDS = ("train", "eval", "ablate", "compare", "gradcheck", "synth", "render")

# published Houston results: OA, AA, Kappa (mean, std), in percent
TABLE3_REFERENCE = {
    "nl": ((93.22, 0.68), (93.99, 0.64), (93.01, 0.72)),
    "dnl": ((93.74, 0.76), (94.78, 0.62), (93.41, 0.79)),
}


def load_rasters(cfg: ExperimentConfig):
    """``(hsi, lidar, labels)`` from the config's data source."""
    if cfg.scene is not None:
        scene = synth_scene(cfg.scene)
        return scene.hsi, scene.lidar, scene.labels
    hsi = load_raster(cfg.resolve(cfg.data.hsi), mmap=True)
    lidar = load_raster(cfg.resolve(cfg.data.lidar), mmap=True)
    labels = load_raster(cfg.resolve(cfg.data.labels))
    if labels.shape[0] != 1:
        raise RasterError(f"label raster must have one band, got {labels.shape[0]}")
    if lidar.shape[0] != 1:
        raise RasterError(f"LiDAR raster must have one band, got {lidar.shape[0]}")
    return hsi, lidar, labels[0]


def _num_classes(cfg: ExperimentConfig, labels) -> int:
    if cfg.scene is not None:
        return cfg.scene.classes
    n = max(len(cfg.sampling.train_counts), len(cfg.sampling.test_counts))
    return n if n > 1 else int(labels.max())


def build_dataset(cfg: ExperimentConfig) -> PatchDataset:
    hsi, lidar, labels = load_rasters(cfg)
    if hsi.shape[0] != cfg.extractor.hsi_bands:
        raise RasterError(
            f"HSI raster has {hsi.shape[0]} bands but extractor.hsi_bands = {cfg.extractor.hsi_bands}"
        )
    k = _num_classes(cfg, labels)
    names = list(cfg.data.class_names) if cfg.data is not None and cfg.data.class_names else None
    return sample_patches(
        hsi, lidar, labels, cfg.extractor.patch_size, cfg.sampling.counts(k), cfg.sampling.seed, names
    )


def _checkpoint_path(out: Path, rep: int) -> Path:
    return out / f"model_rep{rep}.ckpt"


def _load_models(cfg: ExperimentConfig, out: Path, num_classes: int) -> list[FusionNet]:
    models = []
    for rep in range(cfg.train.repetitions):
        path = _checkpoint_path(out, rep)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path} (run `train` first)")
        model = FusionNet(cfg.model, num_classes, seed=cfg.train.seed + rep)
        model.load_state_dict(checkpoint.load_checkpoint(path))
        model.eval()
        models.append(model)
    return models


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_train(cfg, out):
    dataset = build_dataset(cfg)
    result = run_repetitions(dataset, cfg.model, cfg.train)
    for rep, trained in enumerate(result.trained):
        checkpoint.save_checkpoint(_checkpoint_path(out, rep), trained.model.state_dict())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch"] + [f"rep{r}" for r in range(len(result.trained))])
    for epoch in range(cfg.train.epochs):
        writer.writerow([epoch + 1] + [repr(t.loss_history[epoch]) for t in result.trained])
    _write(out / "loss_history.csv", buf.getvalue())
    _write(out / "config.txt", to_text(cfg))
    print(result.report.to_text("test metrics after training"), end="")


def cmd_eval(cfg, out):
    dataset = build_dataset(cfg)
    runs = [evaluate(m, dataset) for m in _load_models(cfg, out, dataset.num_classes)]
    report = MetricsReport.from_runs(runs, dataset.class_names)
    _write(out / "metrics.txt", report.to_text(f"{cfg.attention.upper()} wiring {cfg.wiring}"))
    _write(out / "metrics.csv", report.to_csv())
    _write(out / "confusion.csv", report.confusion_csv())
    print(report.to_text(), end="")


def _table1_row(wiring) -> str:
    rows = [r for r in ABLATION_ROWS if TABLE1_REFERENCE[r][0] == wiring]
    return str(rows[-1]) if rows else "-"


def cmd_ablate(cfg, out):
    dataset = build_dataset(cfg)
    rows = ablate(dataset, cfg.ablate_wirings, cfg.model, cfg.train)
    header = ["table1_row", "W_v", "W_k", "W_q", "W_m", "oa_mean", "oa_std", "reference_oa", "error"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    lines = [f"{'row':>4}  W_v W_k W_q W_m  {'OA':>14}  {'Houston ref':>12}"]
    for row in rows:
        ref_row = _table1_row(row.wiring)
        ref = TABLE1_REFERENCE[int(ref_row)][1:] if ref_row != "-" else None
        w = row.wiring
        writer.writerow(
            [ref_row, w.value, w.key, w.query, w.unary, repr(row.oa_mean), repr(row.oa_std),
             "" if ref is None else ref[0], row.error or ""]
        )
        oa = "failed" if row.error else f"{row.oa_mean:6.2f} ± {row.oa_std:5.2f}"
        ref_text = "" if ref is None else f"{ref[0]:.2f} ± {ref[1]:.2f}"
        lines.append(f"{ref_row:>4}   {w.value}   {w.key}   {w.query}   {w.unary}   {oa:>14}  {ref_text:>12}")
    _write(out / "ablation.csv", buf.getvalue())
    _write(out / "ablation.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_compare(cfg, out):
    dataset = build_dataset(cfg)
    nl, dnl = compare_nl_dnl(dataset, cfg.model, cfg.train)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "oa_mean", "oa_std", "aa_mean", "aa_std", "kappa_mean", "kappa_std"])
    lines = [f"{'method':<6}  {'OA':>14}  {'AA':>14}  {'Kappa':>16}"]
    for name, res in (("NL", nl), ("DNL", dnl)):
        r = res.report
        writer.writerow([name] + [repr(v) for pair in (r.oa, r.aa, r.kappa) for v in pair])
        lines.append(
            f"{name:<6}  {r.oa[0]:6.2f} ± {r.oa[1]:5.2f}  {r.aa[0]:6.2f} ± {r.aa[1]:5.2f}  "
            f"{r.kappa[0]:7.4f} ± {r.kappa[1]:6.4f}"
        )
        _write(out / f"metrics_{name.lower()}.csv", r.to_csv())
    lines.append("Houston reference (OA / AA / Kappa x100):")
    for name, ref in TABLE3_REFERENCE.items():
        lines.append(f"  {name.upper():<4} " + "  ".join(f"{m:.2f} ± {s:.2f}" for m, s in ref))
    _write(out / "compare.csv", buf.getvalue())
    _write(out / "compare.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_gradcheck(cfg, out):
    results = run_suite(verbose=True)
    text = "\n".join(str(r) for r in results) + "\n"
    if out is not None:
        _write(out / "gradcheck.txt", text)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise TrainingError(f"gradient check failed for: {', '.join(failed)}")


def cmd_synth(cfg, out):
    if cfg.scene is None:
        raise ConfigError("synth needs a scene.* spec in the config")
    scene = synth_scene(cfg.scene)
    save_raster(out / "hsi.hdr", scene.hsi, "f32")
    save_raster(out / "lidar.hdr", scene.lidar, "f32")
    save_raster(out / "labels.hdr", scene.labels, "i16")
    lines = [line for line in to_text(cfg).splitlines() if not line.startswith(("scene.", "out ="))]
    data = ["data.hsi = hsi.hdr", "data.lidar = lidar.hdr", "data.labels = labels.hdr"]
    _write(out / "data.cfg", "\n".join(data + lines) + "\n")


def cmd_render(cfg, out):
    hsi, lidar, labels = load_rasters(cfg)
    k = _num_classes(cfg, labels)
    model = _load_models(cfg, out, k)[0]
    coords = np.argwhere(labels > 0)
    pixels = PatchDataset(
        hsi, lidar, coords, labels[coords[:, 0], coords[:, 1]].astype(np.int64),
        np.zeros(len(coords), dtype=bool), cfg.extractor.patch_size, k,
    )
    pred = predict(model, pixels, np.arange(len(coords)))
    prediction_map = np.zeros(labels.shape, dtype=np.int64)
    prediction_map[coords[:, 0], coords[:, 1]] = pred + 1
    palette = default_palette(k)
    render_map(prediction_map, palette, out / "map.ppm")
    render_map(np.asarray(labels, dtype=np.int64), palette, out / "ground_truth.ppm")
    log.info("wrote %s", out / "map.ppm")


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnlfusion", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="experiment config file (not needed for gradcheck)")
    parser.add_argument("--out", help="output directory (defaults to the config's `out` key)")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("overrides", nargs="*", metavar="section.key=value")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = None
        if args.config:
            cfg = load_config(args.config, args.overrides)
        elif args.command != "gradcheck":
            raise ConfigError(f"{args.command} needs --config")
        out = Path(args.out) if args.out else (Path(cfg.out) if cfg else None)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](cfg, out)
    except (ConfigError, RasterError, SamplingError, TrainingError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
