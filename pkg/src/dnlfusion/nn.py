"""Parameter containers and the small set of layers the network is built from."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Named parameters, named buffers and a train/eval flag.

    Parameters are :class:`Tensor` attributes with ``requires_grad``; buffers
    are numpy arrays registered with :meth:`register_buffer`. Submodules may
    be attributes or lists of modules. Names are dotted paths in attribute
    insertion order, so they are stable across runs.
    """

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        seen: set[int] = set()
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                params[name] = value
        for prefix, child in self._children():
            for name, p in child.parameters().items():
                params[f"{prefix}.{name}"] = p
        for name, p in params.items():
            if id(p) in seen:
                raise ValueError(f"parameter {name!r} is registered twice")
            seen.add(id(p))
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        bufs = dict(self._buffers)
        for prefix, child in self._children():
            for name, b in child.buffers().items():
                bufs[f"{prefix}.{name}"] = b
        return bufs

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.parameters().items()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params, bufs = self.parameters(), self.buffers()
        expected = set(params) | set(bufs)
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, b in bufs.items():
            b[...] = state[name]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, pad=None, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = kernel_size // 2 if pad is None else pad
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return ad.batchnorm(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class MultiscaleDepthwise(Module):
    """Depthwise kernels of size 1, 3, 5, 7 over four equal channel groups."""

    def __init__(self, channels, rng):
        super().__init__()
        if channels % 4:
            raise ValueError(f"feature channels must be divisible by 4, got {channels}")
        q = channels // 4
        for size in ad.MULTISCALE_KERNELS:
            setattr(self, f"k{size}", he_normal(rng, (q, size, size), size * size))

    @property
    def kernels(self):
        return [getattr(self, f"k{size}") for size in ad.MULTISCALE_KERNELS]

    def set_identity(self) -> None:
        for k in self.kernels:
            k.data = np.zeros_like(k.data)
            c = k.shape[1] // 2
            k.data[:, c, c] = 1.0

    def forward(self, x):
        return ad.depthwise_multiscale_conv(x, self.kernels)


class Linear(Module):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        bound = np.sqrt(6.0 / (in_features + out_features))
        self.weight = Tensor(rng.uniform(-bound, bound, size=(out_features, in_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x):
        return ad.linear(x, self.weight, self.bias)
