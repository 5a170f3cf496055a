"""
Pairwise and unary attention
============================

Splitting ``q_m . k_n`` into a whitened pairwise part and a per-key part,
and what each softmax looks like.
"""

import numpy as np

from dnlfusion.attention import (
    CANONICAL_WIRING,
    coupled_logits,
    decomposed_logits,
    dnl_forward,
    init_attention_params,
    whitened_pairwise_logits,
)

rng = np.random.default_rng(1)
q = rng.normal(size=(9, 4)) + 2.0   # 3x3 map, 4-dim embeddings, nonzero mean
k = rng.normal(size=(9, 4)) - 1.0

coupled = coupled_logits(q, k).data
split = decomposed_logits(q, k)

# the two sets of logits differ by something that only depends on the query row ...
diff = coupled - split
print("row-constant difference:", np.ptp(diff, axis=1).max())

# ... so a row-wise softmax cannot tell them apart
def softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)

print("softmax gap:", np.abs(softmax(coupled) - softmax(split)).max())

# whitening removes the mean from both sides; rows and columns sum to zero
pair = whitened_pairwise_logits(q, k).data
print("row sums:", np.abs(pair.sum(axis=1)).max(), " column sums:", np.abs(pair.sum(axis=0)).max())

# the disentangled block normalizes the pairwise and unary terms separately
H, L, F = (rng.normal(size=(8, 3, 3)) for _ in range(3))
params = init_attention_params(8, 4, rng)
out, weights = dnl_forward(H, L, F, CANONICAL_WIRING, params, return_weights=True)
print("output shape:", out.shape)
print("pairwise rows sum to", weights.pairwise.sum(axis=1).round(12))
print("unary weights (one per key position):")
print(weights.unary.reshape(3, 3).round(3))
