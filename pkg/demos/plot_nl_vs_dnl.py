"""
Coupled vs disentangled non-local attention
===========================================

Both models start from the same extractor weights and see the same
minibatches; only the attention block differs.
"""

from dnlfusion.cli import build_dataset
from dnlfusion.config import default_synthetic_config, parse_config
from dnlfusion.training import compare_nl_dnl

cfg = parse_config(default_synthetic_config(), ["train.repetitions=3"])
dataset = build_dataset(cfg)
nl, dnl = compare_nl_dnl(dataset, cfg.model, cfg.train)

for name, result in (("NL", nl), ("DNL", dnl)):
    print(result.report.to_text(name))

# same seeds -> same batch order, so the comparison is paired
print("paired:", all(a.batch_digest == b.batch_digest for a, b in zip(nl.trained, dnl.trained)))
