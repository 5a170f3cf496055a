"""Disentangled non-local attention over H/L/F feature maps, and the coupled
non-local baseline.

Branch wiring picks which feature map feeds the value, key, query and
unary transforms. With ``(N, C, H, W)`` maps and ``M = H * W`` positions:

* pairwise logits ``(q_m - mean(q)) . (k_n - mean(k))``, softmax over ``n``
* unary logits ``W_m(source)_n``, softmax over ``n``
* ``out_m = sum_n pair[m, n] v_n + sum_n unary[n] v_n``, plus the value map

The coupled baseline uses a single softmax of ``q_m . k_n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module

SOURCES = ("H", "L", "F")


@dataclass(frozen=True)
class WiringConfig:
    """Feature source for each branch, in the order value, key, query, unary."""

    value: str
    key: str
    query: str
    unary: str

    def __post_init__(self):
        for field in ("value", "key", "query", "unary"):
            src = getattr(self, field)
            if src not in SOURCES:
                raise ValueError(f"wiring {field} source must be one of H, L, F; got {src!r}")

    @classmethod
    def parse(cls, text: str) -> "WiringConfig":
        tokens = text.replace(",", " ").split()
        if len(tokens) != 4:
            raise ValueError(f"wiring needs 4 tokens (value key query unary), got {text!r}")
        return cls(*(t.upper() for t in tokens))

    def __str__(self) -> str:
        return f"{self.value} {self.key} {self.query} {self.unary}"

    def sources(self) -> set[str]:
        return {self.value, self.key, self.query, self.unary}


CANONICAL_WIRING = WiringConfig("F", "H", "L", "H")

# published ablation grid: row -> (wiring, Houston OA mean, std).
# Rows 6 and 7 repeat row 10's wiring and are left out of the runnable grid.
TABLE1_REFERENCE = {
    1: (WiringConfig("F", "H", "H", "H"), 93.48, 0.21),
    2: (WiringConfig("F", "H", "L", "L"), 93.14, 0.45),
    3: (WiringConfig("F", "L", "L", "L"), 92.85, 0.52),
    4: (WiringConfig("H", "H", "L", "H"), 93.12, 0.63),
    5: (WiringConfig("L", "H", "L", "H"), 92.71, 0.46),
    6: (WiringConfig("F", "H", "L", "H"), 87.10, 0.64),
    7: (WiringConfig("F", "H", "L", "H"), 69.11, 0.72),
    8: (WiringConfig("L", "L", "L", "L"), 46.96, 0.25),
    9: (WiringConfig("H", "H", "H", "H"), 88.52, 0.34),
    10: (WiringConfig("F", "H", "L", "H"), 93.74, 0.76),
}
ABLATION_ROWS = (1, 2, 3, 4, 5, 8, 9, 10)
ABLATION_GRID = tuple(TABLE1_REFERENCE[r][0] for r in ABLATION_ROWS)


@dataclass
class AttentionWeights:
    pairwise: np.ndarray  # (M, M), rows sum to 1
    unary: np.ndarray  # (M,), sums to 1


def embed(source, weight, bias=None) -> Tensor:
    """1x1 convolution followed by flattening: ``(N, C, H, W) -> (N, M, d)``."""
    source = ad.as_tensor(source)
    single = source.ndim == 3
    if single:
        source = source.reshape((1,) + source.shape)
    out = ad.conv2d(source, weight, bias, stride=1, pad=0)
    n, d, h, w = out.shape
    out = out.reshape(n, d, h * w).transpose(0, 2, 1)
    return out.reshape(h * w, d) if single else out


def whitened_pairwise_logits(q, k) -> Tensor:
    """``logits[m, n] = (q_m - u_q) . (k_n - u_k)`` with ``u`` the mean over positions."""
    q, k = ad.as_tensor(q), ad.as_tensor(k)
    qc = q - q.mean(axis=-2, keepdims=True)
    kc = k - k.mean(axis=-2, keepdims=True)
    return qc @ kc.transpose(_swap_last(kc.ndim))


def coupled_logits(q, k) -> Tensor:
    q, k = ad.as_tensor(q), ad.as_tensor(k)
    return q @ k.transpose(_swap_last(k.ndim))


def decomposed_logits(q: np.ndarray, k: np.ndarray, restore_query_terms: bool = False) -> np.ndarray:
    """Unary plus whitened pairwise logits, ``u_q . k_n + (q_m - u_q) . (k_n - u_k)``.

    These differ from ``q_m . k_n`` only by ``u_q . u_k - q_m . u_k``, which
    depends on ``m`` alone. With ``restore_query_terms`` that difference is
    added back and the result equals the coupled logits.
    """
    u_q = q.mean(axis=-2, keepdims=True)
    u_k = k.mean(axis=-2, keepdims=True)
    logits = u_q @ np.swapaxes(k, -1, -2) + (q - u_q) @ np.swapaxes(k - u_k, -1, -2)
    if restore_query_terms:
        logits = logits + q @ np.swapaxes(u_k, -1, -2) - u_q @ np.swapaxes(u_k, -1, -2)
    return logits


def unary_logits(source, w_m) -> Tensor:
    """One logit per key position: ``W_m`` projects the source to a single channel."""
    e = embed(source, w_m)
    return e.reshape(e.shape[:-1])


def _swap_last(ndim: int) -> tuple[int, ...]:
    return tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)


def _as_batch(t):
    if t is None:
        return None, False
    t = ad.as_tensor(t)
    return (t.reshape((1,) + t.shape), True) if t.ndim == 3 else (t, False)


def _select(wiring: WiringConfig, maps: dict[str, Tensor | None], unary: bool = True):
    # maps a wiring does not use may be None
    shapes = {name: m.shape for name, m in maps.items() if m is not None}
    if len(set(shapes.values())) > 1:
        raise ValueError(f"H, L and F must share one shape, got {shapes}")
    used = wiring.sources() if unary else {wiring.value, wiring.key, wiring.query}
    missing = sorted(s for s in used if maps[s] is None)
    if missing:
        raise ValueError(f"wiring {wiring} needs feature map(s) {missing}")
    return (maps[wiring.value], maps[wiring.key], maps[wiring.query], maps.get(wiring.unary))


def _finish(out: Tensor, value_map: Tensor, single: bool) -> Tensor:
    n, c, h, w = value_map.shape
    y = out.transpose(0, 2, 1).reshape(n, c, h, w) + value_map
    return y.reshape(y.shape[1:]) if single else y


def init_attention_params(channels: int, embed_channels: int, rng: np.random.Generator, unary: bool = True):
    def w(out_c):
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(channels), size=(out_c, channels, 1, 1)), requires_grad=True)

    def b(out_c):
        return Tensor(np.zeros(out_c), requires_grad=True)

    params = {
        "w_v": w(channels),
        "b_v": b(channels),
        "w_k": w(embed_channels),
        "b_k": b(embed_channels),
        "w_q": w(embed_channels),
        "b_q": b(embed_channels),
    }
    if unary:
        params["w_m"] = w(1)
    return params


def dnl_forward(H, L, F, wiring: WiringConfig, params: dict[str, Tensor], return_weights: bool = False):
    """Disentangled non-local block; separate softmaxes for pairwise and unary terms."""
    (H, s_h), (L, s_l), (F, s_f) = _as_batch(H), _as_batch(L), _as_batch(F)
    single = s_h or s_l or s_f
    value_map, key_map, query_map, unary_map = _select(wiring, {"H": H, "L": L, "F": F})
    v = embed(value_map, params["w_v"], params["b_v"])
    k = embed(key_map, params["w_k"], params["b_k"])
    q = embed(query_map, params["w_q"], params["b_q"])
    pair = ad.softmax(whitened_pairwise_logits(q, k), axis=-1)
    unary = ad.softmax(unary_logits(unary_map, params["w_m"]), axis=-1)
    n, m = unary.shape
    context = unary.reshape(n, 1, m) @ v
    out = _finish(pair @ v + context, value_map, single)
    if return_weights:
        weights = [AttentionWeights(pair.data[i], unary.data[i]) for i in range(n)]
        return out, (weights[0] if single else weights)
    return out


def nl_forward(H, L, F, wiring: WiringConfig, params: dict[str, Tensor], return_weights: bool = False):
    """Coupled non-local block: one softmax over ``q_m . k_n``; the unary source is unused."""
    (H, s_h), (L, s_l), (F, s_f) = _as_batch(H), _as_batch(L), _as_batch(F)
    single = s_h or s_l or s_f
    value_map, key_map, query_map, _ = _select(wiring, {"H": H, "L": L, "F": F}, unary=False)
    v = embed(value_map, params["w_v"], params["b_v"])
    k = embed(key_map, params["w_k"], params["b_k"])
    q = embed(query_map, params["w_q"], params["b_q"])
    attn = ad.softmax(coupled_logits(q, k), axis=-1)
    out = _finish(attn @ v, value_map, single)
    if return_weights:
        return out, (attn.data[0] if single else attn.data)
    return out


class DisentangledNonLocal(Module):
    def __init__(self, channels: int, embed_channels: int, wiring: WiringConfig, rng: np.random.Generator):
        super().__init__()
        self.wiring = wiring
        for name, p in init_attention_params(channels, embed_channels, rng).items():
            setattr(self, name, p)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.parameters()

    def forward(self, H, L, F):
        return dnl_forward(H, L, F, self.wiring, self.params)


class NonLocal(Module):
    def __init__(self, channels: int, embed_channels: int, wiring: WiringConfig, rng: np.random.Generator):
        super().__init__()
        self.wiring = wiring
        for name, p in init_attention_params(channels, embed_channels, rng, unary=False).items():
            setattr(self, name, p)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.parameters()

    def forward(self, H, L, F):
        return nl_forward(H, L, F, self.wiring, self.params)
