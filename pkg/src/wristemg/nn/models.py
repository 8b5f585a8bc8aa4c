"""Gesture decoders: the two-block CNN and the single-block TCN."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeError
from . import functional as F
from .tensor import Parameter, Tensor, as_tensor

N_CLASSES = 6


class Module:
    """Parameter container; parameters are listed in attribute declaration order."""

    training = True
    rng: np.random.Generator | None = None

    def __call__(self, x, record=None) -> Tensor:
        return self.forward(as_tensor(x), record)

    def forward(self, x: Tensor, record=None) -> Tensor:
        raise NotImplementedError

    def children(self):
        return [v for v in vars(self).values() if isinstance(v, Module)]

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, value in vars(self).items():
            if name.startswith("running_") and isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: np.random.Generator | None) -> None:
        self.rng = rng
        for child in self.children():
            child.set_rng(rng)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dilation=1):
        fan_in = c_in * kernel
        self.weight = Parameter(_uniform(rng, (c_out, c_in, kernel), fan_in))
        self.bias = Parameter(_uniform(rng, (c_out,), fan_in))
        self.stride, self.padding, self.dilation = stride, padding, dilation

    def forward(self, x, record=None):
        return F.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class WeightNormConv1d(Conv1d):
    """Conv1d whose weight is g * v / ||v||; g starts at ||v|| so w = v at init."""

    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dilation=1):
        fan_in = c_in * kernel
        v = _uniform(rng, (c_out, c_in, kernel), fan_in)
        self.weight_v = Parameter(v)
        self.weight_g = Parameter(np.sqrt((v**2).sum(axis=(1, 2))))
        self.bias = Parameter(_uniform(rng, (c_out,), fan_in))
        self.stride, self.padding, self.dilation = stride, padding, dilation

    def forward(self, x, record=None):
        w = F.weight_norm(self.weight_v, self.weight_g)
        return F.conv1d(x, w, self.bias, self.stride, self.padding, self.dilation)


class BatchNorm1d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps

    def forward(self, x, record=None):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Dense(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = Parameter(_uniform(rng, (n_out, n_in), n_in))
        self.bias = Parameter(_uniform(rng, (n_out,), n_in))

    def forward(self, x, record=None):
        return F.dense(x, self.weight, self.bias)


@dataclass
class CnnConfig:
    in_channels: int
    n_samples: int = 250
    filters: tuple[int, int] = (32, 64)
    kernel: int = 3
    stride: int = 1
    leaky_slope: float = 0.2
    pool: tuple[int, int] = (3, 3)
    dropout: float = 0.2
    dense: tuple[int, int] = (256, N_CLASSES)

    def pooled_length(self) -> int:
        k, s = self.pool
        t = self.n_samples
        for _ in self.filters:
            t = (t - k) // s + 1
        return t


@dataclass
class TcnConfig:
    in_channels: int
    n_samples: int = 250
    blocks: int = 1
    out_channels: int = 32
    kernel: int = 3
    dropout: float = 0.2
    dilations: list[int] | None = None  # default 1, 2, 4, ...
    pool: tuple[int, int] = (3, 3)
    n_classes: int = N_CLASSES

    def dilation_schedule(self) -> list[int]:
        if self.dilations is not None:
            if len(self.dilations) != self.blocks:
                raise ShapeError(f"{self.blocks} blocks but {len(self.dilations)} dilations")
            return list(self.dilations)
        return [2**i for i in range(self.blocks)]


def _record(record, name, t):
    if record is not None:
        record.append((name, t.data.copy()))
    return t


class CNN(Module):
    arch = "cnn"

    def __init__(self, cfg: CnnConfig, seed: int = 0):
        if cfg.pooled_length() < 1:
            raise ShapeError(f"CNN needs at least 9 time samples, got {cfg.n_samples}")
        rng = np.random.default_rng(seed)
        self.cfg, self.seed = cfg, seed
        f1, f2 = cfg.filters
        pad = (cfg.kernel - 1) // 2
        self.conv1 = Conv1d(cfg.in_channels, f1, cfg.kernel, rng, cfg.stride, pad)
        self.bn1 = BatchNorm1d(f1)
        self.conv2 = Conv1d(f1, f2, cfg.kernel, rng, cfg.stride, pad)
        self.bn2 = BatchNorm1d(f2)
        self.fc1 = Dense(f2 * cfg.pooled_length(), cfg.dense[0], rng)
        self.fc2 = Dense(cfg.dense[0], cfg.dense[1], rng)

    def forward(self, x, record=None):
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.n_samples:
            raise ShapeError(
                f"CNN expects (B, {cfg.in_channels}, {cfg.n_samples}) input, got {x.shape}"
            )
        h = x
        for i, (conv, bn) in enumerate(((self.conv1, self.bn1), (self.conv2, self.bn2)), start=1):
            h = _record(record, f"conv{i}", conv(h))
            h = F.leaky_relu(bn(h), cfg.leaky_slope)
            h = _record(record, f"pool{i}", F.maxpool1d(h, *cfg.pool))
            h = F.dropout(h, cfg.dropout, self.training, self.rng)
        h = _record(record, "flatten", F.flatten(h))
        h = _record(record, "fc1", F.leaky_relu(self.fc1(h), cfg.leaky_slope))
        return _record(record, "logits", self.fc2(h))


class TemporalBlock(Module):
    def __init__(self, c_in, c_out, kernel, dilation, dropout, rng):
        self.pad = (kernel - 1) * dilation
        self.conv1 = WeightNormConv1d(c_in, c_out, kernel, rng, padding=self.pad, dilation=dilation)
        self.conv2 = WeightNormConv1d(c_out, c_out, kernel, rng, padding=self.pad, dilation=dilation)
        self.downsample = Conv1d(c_in, c_out, 1, rng) if c_in != c_out else None
        self.dropout = dropout

    def forward(self, x, record=None):
        h = x
        for i, conv in enumerate((self.conv1, self.conv2), start=1):
            h = _record(record, f"prechomp{i}", conv(h))
            h = F.relu(F.chomp(h, self.pad))
            h = F.dropout(h, self.dropout, self.training, self.rng)
        res = x if self.downsample is None else self.downsample(x)
        return F.relu(h + res)


class TCN(Module):
    arch = "tcn"

    def __init__(self, cfg: TcnConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg, self.seed = cfg, seed
        c_in = cfg.in_channels
        self.blocks = []
        for i, d in enumerate(cfg.dilation_schedule()):
            block = TemporalBlock(c_in, cfg.out_channels, cfg.kernel, d, cfg.dropout, rng)
            setattr(self, f"block{i}", block)
            self.blocks.append(block)
            c_in = cfg.out_channels
        self.fc = Dense(cfg.out_channels, cfg.n_classes, rng)

    def forward(self, x, record=None):
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"TCN expects (B, {cfg.in_channels}, T) input, got {x.shape}")
        if x.shape[2] < cfg.pool[0]:
            raise ShapeError(f"TCN needs at least {cfg.pool[0]} time samples, got {x.shape[2]}")
        h = x
        for block in self.blocks:
            h = _record(record, "block", block(h, record))
        h = _record(record, "pool", F.maxpool1d(h, *cfg.pool))
        h = _record(record, "gap", F.global_avg_pool(h))
        return _record(record, "logits", self.fc(h))


def build_model(arch: str, in_channels: int, n_samples: int, seed: int = 0, **overrides) -> Module:
    if arch == "cnn":
        return CNN(CnnConfig(in_channels, n_samples, **overrides), seed)
    if arch == "tcn":
        return TCN(TcnConfig(in_channels, n_samples, **overrides), seed)
    raise ValueError(f"unknown architecture {arch!r}")


def model_config(model: Module) -> dict:
    return asdict(model.cfg)


def predict_logits(model: Module, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for a stack of windows, without building a graph."""
    from .tensor import no_grad

    was_training = model.training
    model.eval()
    try:
        with no_grad():
            return np.concatenate(
                [model(windows[i : i + batch_size]).data for i in range(0, len(windows), batch_size)]
            )
    finally:
        model.train(was_training)
