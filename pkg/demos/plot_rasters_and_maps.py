"""
Rasters in, class maps out
==========================

Write a scene to band-sequential rasters, read it back, train briefly and
render the predicted map as a PPM image.
"""

import tempfile
from pathlib import Path

import numpy as np

from dnlfusion.cli import main
from dnlfusion.raster import load_raster, read_header
from dnlfusion.render import default_palette, parse_ppm

work = Path(tempfile.mkdtemp())
config = work / "scene.cfg"
config.write_text(
    "scene.classes = 4\nscene.height = 32\nscene.width = 32\nscene.bands = 8\n"
    "extractor.hsi_bands = 8\nextractor.patch_size = 5\nextractor.feature_channels = 8\n"
    "sampling.train_counts = 20\nsampling.test_counts = rest\n"
    "train.lr = 0.003\ntrain.epochs = 10\ntrain.repetitions = 1\n"
)

# synth writes hsi/lidar/labels rasters plus a config pointing at them
main(["synth", "--config", str(config), "--out", str(work / "data")])
print(read_header(work / "data" / "hsi.hdr"))
hsi = load_raster(work / "data" / "hsi.hdr")
print("HSI cube:", hsi.shape, hsi.dtype)

data_cfg = work / "data" / "data.cfg"
main(["train", "--config", str(data_cfg), "--out", str(work / "run")])
main(["render", "--config", str(data_cfg), "--out", str(work / "run")])

img = parse_ppm((work / "run" / "map.ppm").read_bytes())
truth = parse_ppm((work / "run" / "ground_truth.ppm").read_bytes())
agree = np.all(img == truth, axis=-1).mean()
print("map", img.shape, "- pixels matching the ground-truth colors:", round(float(agree), 3))
print("palette:", default_palette(4).tolist())
print("outputs in", work / "run")
