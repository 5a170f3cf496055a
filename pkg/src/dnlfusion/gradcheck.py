"""Central finite-difference checks of every differentiable op and of the model.

The error measure for an entry is ``|a - n| / max(|a|, |n|, floor)`` with
``a`` the analytic and ``n`` the numeric derivative; a check reports the
maximum over all entries. The floor is ``1e-6 * max(1, G)`` where ``G`` is
the largest numeric derivative magnitude in the check. It keeps entries
whose true derivative is zero (a conv bias feeding batchnorm, a key bias
removed by whitening) from being judged on round-off alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import CANONICAL_WIRING, dnl_forward, embed, init_attention_params, nl_forward, unary_logits, whitened_pairwise_logits
from .autodiff import Tensor
from .extractors import ExtractorConfig, Fusion, HSIExtractor, LidarExtractor, ResidualBlock
from .model import FusionNet, ModelConfig

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    entries: int
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def __str__(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<32} max rel err {self.max_rel_error:.2e} over {self.entries} entries"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = STEP, entries=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x`` (perturbed in place, then restored)."""
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size) if entries is None else entries:
        old = flat_x[i]
        flat_x[i] = old + h
        up = f()
        flat_x[i] = old - h
        down = f()
        flat_x[i] = old
        flat_g[i] = (up - down) / (2 * h)
    return grad


def check_gradients(
    name: str,
    loss_fn: Callable[[], Tensor],
    inputs: dict[str, Tensor],
    h: float = STEP,
    tolerance: float = TOLERANCE,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradcheckResult:
    """Compare :func:`autodiff.backward` against central differences.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of each
    input and return a scalar tensor. With ``max_entries`` a seeded random
    subset of entries is checked per input.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    analytic = ad.backward(loss_fn(), inputs)

    def f():
        return float(loss_fn().data)

    pairs = []
    for key, t in inputs.items():
        entries = None
        if max_entries is not None and t.size > max_entries:
            entries = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        numeric = numerical_gradient(f, t.data, h, entries)
        a = analytic[key]
        if entries is not None:
            a, numeric = a.reshape(-1)[entries], numeric.reshape(-1)[entries]
        pairs.append((a, numeric))
    scale = max([1.0] + [float(np.max(np.abs(n))) for _, n in pairs if n.size])
    worst = max(relative_error(a, n, FLOOR * scale) for a, n in pairs)
    count = sum(n.size for _, n in pairs)
    return GradcheckResult(name, worst, count, time.perf_counter() - start, tolerance)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _param(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def _projected(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    weights = rng.normal(size=out.shape)
    return lambda y: (y * weights).sum()


def _case(name, forward, inputs, rng, **kwargs) -> GradcheckResult:
    proj = _projected(forward(), rng)
    return check_gradients(name, lambda: proj(forward()), inputs, **kwargs)


def op_cases(seed: int = 0) -> list[Callable[[], GradcheckResult]]:
    rng = np.random.default_rng(seed)
    cases = []

    def add_case(name, forward, inputs, **kwargs):
        cases.append(lambda: _case(name, forward, inputs, rng, **kwargs))

    a, b = _param(rng.normal(size=(3, 4))), _param(rng.normal(size=(1, 4)))
    add_case("add (broadcast)", lambda: a + b, {"a": a, "b": b})
    add_case("sub (broadcast)", lambda: a - b, {"a": a, "b": b})
    add_case("mul (broadcast)", lambda: a * b, {"a": a, "b": b})
    d = _param(rng.uniform(0.5, 2.0, size=(3, 1)))
    add_case("div (broadcast)", lambda: a / d, {"a": a, "d": d})
    m1, m2 = _param(rng.normal(size=(2, 3, 4))), _param(rng.normal(size=(4, 5)))
    add_case("matmul (batched)", lambda: m1 @ m2, {"a": m1, "b": m2})
    add_case("sum / mean", lambda: m1.sum(axis=1, keepdims=True) * m1.mean(axis=(0, 2), keepdims=True), {"x": m1})
    add_case("sum (all) / mean (axis)", lambda: m1.mean(axis=2) * m1.sum(), {"x": m1})
    add_case("reshape / transpose", lambda: m1.reshape(6, 4).transpose(1, 0), {"x": m1})
    add_case("slice / concat", lambda: ad.concat([m1[:, 1:], m1[:, :1] * 2.0], axis=1), {"x": m1})
    r = _param(_away_from_zero(rng, (4, 5)))
    add_case("relu", lambda: ad.relu(r), {"x": r})
    s = _param(rng.normal(size=(5, 7)))
    add_case("softmax", lambda: ad.softmax(s, axis=-1), {"x": s})
    targets = rng.integers(0, 7, size=5)
    cases.append(lambda: check_gradients("cross_entropy", lambda: ad.cross_entropy(s, targets), {"logits": s}))

    x = _param(rng.normal(size=(2, 3, 6, 6)))
    w3, bias = _param(rng.normal(size=(4, 3, 3, 3))), _param(rng.normal(size=4))
    add_case("conv2d 3x3 pad1", lambda: ad.conv2d(x, w3, bias, stride=1, pad=1), {"x": x, "w": w3, "b": bias})
    add_case("conv2d 3x3 stride2", lambda: ad.conv2d(x, w3, bias, stride=2, pad=0), {"x": x, "w": w3, "b": bias})
    x8 = _param(rng.normal(size=(2, 8, 5, 5)))
    dw = _param(rng.normal(size=(8, 3, 3)))
    add_case("depthwise_conv2d", lambda: ad.depthwise_conv2d(x8, dw), {"x": x8, "w": dw})
    kernels = [_param(rng.normal(size=(2, k, k))) for k in ad.MULTISCALE_KERNELS]
    kin = {"x": x8, **{f"k{k}": t for k, t in zip(ad.MULTISCALE_KERNELS, kernels)}}
    add_case("depthwise_multiscale_conv", lambda: ad.depthwise_multiscale_conv(x8, kernels), kin)
    add_case("avgpool2d", lambda: ad.avgpool2d(x, 2, 2), {"x": x})
    add_case("upsample_nearest", lambda: ad.upsample_nearest(ad.avgpool2d(x, 2, 2), (7, 7)), {"x": x})
    gamma, beta = _param(rng.uniform(0.5, 1.5, 3)), _param(rng.normal(size=3))
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, 3)

    def bn(training):
        return lambda: ad.batchnorm(x, gamma, beta, rm.copy(), rv.copy(), training=training)

    add_case("batchnorm (train)", bn(True), {"x": x, "gamma": gamma, "beta": beta})
    add_case("batchnorm (eval)", bn(False), {"x": x, "gamma": gamma, "beta": beta})
    return cases


def _module_inputs(module, **extra):
    return {**extra, **module.parameters()}


def model_cases(seed: int = 0) -> list[Callable[[], GradcheckResult]]:
    rng = np.random.default_rng(seed + 1)
    cfg = ExtractorConfig(hsi_bands=6, patch_size=7, feature_channels=8, residual_blocks=1, lidar_layers=2)
    cases = []

    def add_case(name, forward, inputs, **kwargs):
        cases.append(lambda: _case(name, forward, inputs, rng, **kwargs))

    block = ResidualBlock(8, rng)
    xb = _param(rng.normal(size=(2, 8, 5, 5)))
    add_case("residual_block", lambda: block(xb), _module_inputs(block, x=xb))
    hsi = HSIExtractor(cfg, rng)
    xh = _param(rng.normal(size=(2, 6, 7, 7)))
    add_case("extract_hsi", lambda: hsi(xh), _module_inputs(hsi, x=xh))
    lid = LidarExtractor(cfg, rng)
    xl = _param(rng.normal(size=(2, 1, 7, 7)))
    add_case("extract_lidar", lambda: lid(xl), _module_inputs(lid, x=xl))
    fus = Fusion(8, rng)
    fh, fl = _param(rng.normal(size=(2, 8, 7, 7))), _param(rng.normal(size=(2, 8, 7, 7)))
    add_case("fuse", lambda: fus(fh, fl), _module_inputs(fus, h=fh, l=fl))

    q, k = _param(rng.normal(size=(9, 4))), _param(rng.normal(size=(9, 4)))
    add_case("whitened_pairwise_logits", lambda: whitened_pairwise_logits(q, k), {"q": q, "k": k})
    src = _param(rng.normal(size=(8, 3, 3)))
    we = _param(rng.normal(size=(4, 8, 1, 1)))
    add_case("embed", lambda: embed(src, we), {"x": src, "w": we})
    wm = _param(rng.normal(size=(1, 8, 1, 1)))
    add_case("unary_logits", lambda: unary_logits(src, wm), {"x": src, "w_m": wm})
    H, L, F = (_param(rng.normal(size=(2, 8, 3, 3))) for _ in range(3))
    ap = init_attention_params(8, 4, rng)
    maps = {"H": H, "L": L, "F": F}
    add_case("dnl_forward", lambda: dnl_forward(H, L, F, CANONICAL_WIRING, ap), {**maps, **ap})
    nlp = init_attention_params(8, 4, rng, unary=False)
    add_case("nl_forward", lambda: nl_forward(H, L, F, CANONICAL_WIRING, nlp), {**maps, **nlp})

    for attention in ("dnl", "nl"):
        net = FusionNet(ModelConfig(cfg, CANONICAL_WIRING, attention, 4), num_classes=3, seed=seed)
        xs = rng.normal(size=(3, 6, 7, 7))
        ls = rng.normal(size=(3, 1, 7, 7))
        ys = np.array([0, 1, 2])
        cases.append(
            lambda net=net, xs=xs, ls=ls, ys=ys, attention=attention: check_gradients(
                f"full model ({attention})",
                lambda: ad.cross_entropy(net(xs, ls), ys),
                net.parameters(),
            )
        )
    return cases


def run_suite(seed: int = 0, verbose: bool = False) -> list[GradcheckResult]:
    results = []
    for case in op_cases(seed) + model_cases(seed):
        res = case()
        if verbose:
            print(res, flush=True)
        results.append(res)
    return results
