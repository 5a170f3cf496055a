"""
Which feature sources help?
===========================

A six-class scene where spectra confuse two pairs of classes and elevation
confuses three others. Only a model that sees both modalities can separate
everything. Takes a couple of minutes.
"""

from dataclasses import replace

from dnlfusion.attention import WiringConfig
from dnlfusion.cli import build_dataset
from dnlfusion.config import default_synthetic_config, parse_config
from dnlfusion.synthetic import single_modality_ceiling
from dnlfusion.training import ablate

cfg = parse_config(default_synthetic_config(), ["train.repetitions=2"])
dataset = build_dataset(cfg)
print(f"{len(dataset.split('train'))} training patches, {len(dataset.split('test'))} test patches")

print("best balanced accuracy from spectra alone:  ", round(single_modality_ceiling(6, "hsi"), 3))
print("best balanced accuracy from elevation alone:", round(single_modality_ceiling(6, "lidar"), 3))

wirings = [WiringConfig.parse(t) for t in ("L L L L", "H H H H", "F H L H")]
for row in ablate(dataset, wirings, cfg.model, cfg.train):
    print(f"{row.wiring}   OA {row.oa_mean:6.2f} +- {row.oa_std:.2f}")
