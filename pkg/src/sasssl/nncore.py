"""ResNet-style two-channel encoder, MLP heads and gradient verification.

A ``ParamSet`` is an ordered ``{name: tensor}`` mapping (a module's
``state_dict``): trainable weights plus normalization statistics.  Its
iteration order is the flattening order used for momentum/EMA algebra.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from .errors import ConfigurationError, InputError, NumericalError

ParamSet = "OrderedDict[str, torch.Tensor]"


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = 2
    stage_widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2, 2)
    feature_dim: int = 128
    input_size: int = 64
    # Stem: 3x3 conv with this stride followed by 2x2 max-pool when stem_pool.
    stem_stride: int = 2
    stem_pool: bool = True

    def validate(self) -> None:
        if self.input_channels != 2:
            raise ConfigurationError("encoder expects exactly 2 input channels")
        if not self.stage_widths or len(self.stage_widths) != len(self.blocks_per_stage):
            raise ConfigurationError("stage_widths and blocks_per_stage must be nonempty and equal length")
        if self.feature_dim < 8:
            raise ConfigurationError("feature_dim must be >= 8")


TOY_ENCODER = EncoderConfig(stage_widths=(8, 16, 32, 64), blocks_per_stage=(1, 1, 1, 1), feature_dim=64)


@dataclass(frozen=True)
class HeadConfig:
    hidden_dim: int = 256
    output_dim: int = 64
    predictor_hidden_dim: int = 256
    # BatchNorm on the hidden layer (used by BYOL's projector/predictor).
    hidden_norm: bool = False

    def validate(self) -> None:
        if min(self.hidden_dim, self.output_dim, self.predictor_hidden_dim) < 1:
            raise ConfigurationError("head dimensions must be >= 1")


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch, momentum=0.1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch, momentum=0.1)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch))

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.shortcut(x))


class Encoder(nn.Module):
    """log1p intensity -> stem -> residual stages -> global average pool.

    The log transform turns multiplicative speckle into an additive offset.
    """

    def __init__(self, config: EncoderConfig = EncoderConfig()):
        super().__init__()
        config.validate()
        self.config = config
        w0 = config.stage_widths[0]
        stem = [nn.Conv2d(2, w0, 3, config.stem_stride, 1, bias=False), nn.BatchNorm2d(w0), nn.ReLU()]
        if config.stem_pool:
            stem.append(nn.MaxPool2d(2))
        self.stem = nn.Sequential(*stem)
        blocks = []
        in_ch = w0
        for i, (width, count) in enumerate(zip(config.stage_widths, config.blocks_per_stage)):
            for j in range(count):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(BasicBlock(in_ch, width, stride))
                in_ch = width
        self.stages = nn.Sequential(*blocks)
        self.neck = nn.Identity() if in_ch == config.feature_dim else nn.Linear(in_ch, config.feature_dim)

    def forward(self, x):
        s = self.config.input_size
        if x.ndim != 4 or tuple(x.shape[1:]) != (2, s, s):
            raise InputError(f"expected batch of shape (B, 2, {s}, {s}), got {tuple(x.shape)}")
        h = self.stages(self.stem(torch.log1p(x)))
        return self.neck(h.mean(dim=(2, 3)))


class MLPHead(nn.Module):
    """Linear -> [BatchNorm] -> ReLU -> Linear."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, hidden_norm: bool = False):
        super().__init__()
        self.in_dim = in_dim
        layers = [nn.Linear(in_dim, hidden_dim)]
        if hidden_norm:
            layers.append(nn.BatchNorm1d(hidden_dim))
        layers += [nn.ReLU(), nn.Linear(hidden_dim, out_dim)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InputError(f"expected (B, {self.in_dim}) input, got {tuple(x.shape)}")
        return self.net(x)


class LinearHead(nn.Module):
    def __init__(self, in_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.fc = nn.Linear(in_dim, 1)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InputError(f"expected (B, {self.in_dim}) features, got {tuple(x.shape)}")
        return self.fc(x)


def he_init_(module: nn.Module, seed: int) -> nn.Module:
    """Fan-in He-normal weights, zero biases, unit/zero normalization affine."""
    gen = torch.Generator().manual_seed(int(seed) % (2**63))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen, dtype=m.weight.dtype) * np.sqrt(2.0 / fan_in))
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.reset_running_stats()
    return module


def build_encoder(config: EncoderConfig, seed: int) -> Encoder:
    return he_init_(Encoder(config), seed)


def init_params(config: EncoderConfig, seed: int) -> ParamSet:
    return build_encoder(config, seed).state_dict()


def encoder_forward(encoder: Encoder, batch: torch.Tensor, params: ParamSet | None = None) -> torch.Tensor:
    """Features of ``batch``; uses ``params`` in place of the module's own tensors if given."""
    if params is None:
        return encoder(batch)
    return functional_call(encoder, dict(params), (batch,))


def projector_forward(head: MLPHead, features: torch.Tensor) -> torch.Tensor:
    return head(features)


predictor_forward = projector_forward


def linear_head_forward(head: LinearHead, features: torch.Tensor) -> torch.Tensor:
    return head(features)


# --- ParamSet algebra -------------------------------------------------------


def float_items(params: ParamSet):
    return [(k, v) for k, v in params.items() if v.is_floating_point()]


def flatten(params: ParamSet) -> torch.Tensor:
    return torch.cat([v.reshape(-1) for _, v in float_items(params)])


def unflatten(vector: torch.Tensor, like: ParamSet) -> ParamSet:
    need = sum(v.numel() for _, v in float_items(like))
    if need != vector.numel():
        raise InputError(f"vector has {vector.numel()} entries, ParamSet needs {need}")
    out = OrderedDict()
    pos = 0
    for k, v in like.items():
        if v.is_floating_point():
            n = v.numel()
            out[k] = vector[pos : pos + n].reshape(v.shape).to(v.dtype).clone()
            pos += n
        else:
            out[k] = v.clone()
    return out


def clone_params(params: ParamSet) -> ParamSet:
    return OrderedDict((k, v.detach().clone()) for k, v in params.items())


def params_equal(a: ParamSet, b: ParamSet) -> bool:
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


# --- gradient verification -------------------------------------------------


def grad_check(
    loss_fn: Callable[[dict], torch.Tensor],
    params: dict[str, torch.Tensor],
    epsilon: float = 1e-6,
    n_coords: int = 200,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error between autograd and central differences.

    ``loss_fn`` maps a ``{name: tensor}`` dict to a scalar.  Coordinates are
    sampled uniformly without replacement over all entries (all of them when
    fewer than ``n_coords`` exist).  Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    base = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = loss_fn(base)
    if not torch.isfinite(loss):
        raise NumericalError("loss is not finite at the check point")
    grads = torch.autograd.grad(loss, list(base.values()), allow_unused=True)
    grads = {k: (torch.zeros_like(v) if g is None else g) for (k, v), g in zip(base.items(), grads)}

    names = list(base)
    sizes = np.array([base[k].numel() for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            t = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, idx = names[t], int(flat - offsets[t])
            probe = {k: v.detach().clone() for k, v in base.items()}
            view = probe[name].view(-1)
            orig = view[idx].item()
            view[idx] = orig + epsilon
            plus = loss_fn(probe).item()
            view[idx] = orig - epsilon
            minus = loss_fn(probe).item()
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericalError(f"non-finite loss perturbing {name}[{idx}]")
            numeric = (plus - minus) / (2 * epsilon)
            analytic = grads[name].view(-1)[idx].item()
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# --- checkpoints ------------------------------------------------------------


def params_to_numpy(params: ParamSet, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().astype(np.float32) for k, v in params.items()}


def params_from_numpy(arrays: dict[str, np.ndarray], like: ParamSet, prefix: str = "") -> ParamSet:
    out = OrderedDict()
    for k, v in like.items():
        key = prefix + k
        if key not in arrays:
            raise InputError(f"checkpoint lacks tensor {key!r}")
        value = torch.from_numpy(np.array(arrays[key]))
        if tuple(value.shape) != tuple(v.shape):
            raise InputError(f"tensor {key!r} has shape {tuple(value.shape)}, expected {tuple(v.shape)}")
        out[k] = value.to(v.dtype)
    return out
