"""MoCo v2 and BYOL pretraining with an AdamW / cosine-annealing loop."""

from __future__ import annotations

import copy
import math
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import augment
from .augment import AugmentPolicy
from .data import ShardSpec, SnippetDataset, shard_indices
from .errors import ConfigurationError, NumericalError
from .nncore import EncoderConfig, HeadConfig, MLPHead, build_encoder, he_init_
from .synthgen import derive_seed


# --- losses -----------------------------------------------------------------


def ntxent_loss(q: torch.Tensor, k_pos: torch.Tensor, queue: torch.Tensor, temperature: float) -> torch.Tensor:
    """InfoNCE over one positive key and K queued negatives per query.

    Inputs are L2-normalized here; keys and queue are treated as constants.
    """
    if temperature <= 0:
        raise ConfigurationError("temperature must be > 0")
    q = F.normalize(q, dim=1)
    k_pos = F.normalize(k_pos.detach(), dim=1)
    pos = (q * k_pos).sum(dim=1, keepdim=True)
    if queue.shape[0]:
        neg = q @ F.normalize(queue.detach(), dim=1).T
        logits = torch.cat([pos, neg], dim=1) / temperature
    else:
        logits = pos / temperature
    return F.cross_entropy(logits, torch.zeros(len(q), dtype=torch.long, device=q.device))


def _cosine(p: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    pn = p.norm(dim=1)
    zn = z.norm(dim=1)
    if torch.any(pn == 0) or torch.any(zn == 0):
        raise NumericalError("zero-norm vector in cosine similarity")
    return (p * z).sum(dim=1) / (pn * zn)


def byol_loss(p1, p2, z1_target, z2_target) -> torch.Tensor:
    """Symmetric 2 - 2 cos loss; view-1 predictions match view-2 targets and vice versa."""
    if not (p1.shape == p2.shape == z1_target.shape == z2_target.shape):
        raise ConfigurationError("prediction and target shapes differ")
    one = (2 - 2 * _cosine(p1, z2_target.detach())).mean()
    two = (2 - 2 * _cosine(p2, z1_target.detach())).mean()
    return one + two


# --- parameter updates ------------------------------------------------------


def _check_coefficient(m: float) -> None:
    if not 0 <= m <= 1:
        raise ConfigurationError(f"momentum coefficient {m} outside [0, 1]")


def momentum_update(key, query, m: float):
    """Return m * key + (1 - m) * query for every floating-point entry."""
    _check_coefficient(m)
    if key.keys() != query.keys():
        raise ConfigurationError("ParamSets are not shape compatible")
    out = OrderedDict()
    for name, k in key.items():
        qv = query[name]
        if k.shape != qv.shape:
            raise ConfigurationError(f"shape mismatch for {name}")
        out[name] = k * m + qv * (1.0 - m) if k.is_floating_point() else k.clone()
    return out


def ema_update(target, online, tau: float):
    return momentum_update(target, online, tau)


@torch.no_grad()
def momentum_update_(key_module: nn.Module, query_module: nn.Module, m: float) -> None:
    """In-place momentum update over parameters and normalization statistics."""
    _check_coefficient(m)
    for k, q in zip(key_module.state_dict().values(), query_module.state_dict().values()):
        if k.is_floating_point():
            k.mul_(m).add_(q * (1.0 - m))


def enqueue(queue: torch.Tensor, ptr: int, new_keys: torch.Tensor) -> tuple[torch.Tensor, int]:
    """FIFO ring-buffer write of ``new_keys`` at ``ptr``; B must divide K."""
    size, batch = queue.shape[0], new_keys.shape[0]
    if batch == 0 or size % batch:
        raise ConfigurationError(f"batch {batch} must divide queue size {size}")
    out = queue.clone()
    out[ptr : ptr + batch] = new_keys.detach()
    return out, (ptr + batch) % size


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    if total_steps <= 0 or step >= total_steps:
        return min_lr if step >= total_steps else base_lr
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimState:
    """AdamW moments for a fixed list of named parameters."""

    base_lr: float = 0.003
    weight_decay: float = 0.001
    total_steps: int = 1
    min_lr: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        return cosine_lr(self.step, self.total_steps, self.base_lr, self.min_lr)


@torch.no_grad()
def adamw_step(named_params, optim: OptimState, lr: float | None = None) -> float:
    """One decoupled-weight-decay Adam update; gradients read from ``.grad``.

    Parameters without a gradient are treated as having zero gradient.
    """
    lr = optim.current_lr() if lr is None else lr
    optim.step += 1
    b1, b2 = optim.betas
    bc1 = 1 - b1**optim.step
    bc2 = 1 - b2**optim.step
    for name, p in named_params:
        grad = p.grad if p.grad is not None else torch.zeros_like(p)
        m = optim.exp_avg.setdefault(name, torch.zeros_like(p))
        v = optim.exp_avg_sq.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(grad, alpha=1 - b1)
        v.mul_(b2).addcmul_(grad, grad, value=1 - b2)
        p.mul_(1 - lr * optim.weight_decay)
        p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + optim.eps))
    return lr


@contextmanager
def frozen_statistics(module: nn.Module):
    """Run train-mode forwards without keeping normalization-statistic updates."""
    saved = {k: v.clone() for k, v in module.named_buffers()}
    try:
        yield module
    finally:
        with torch.no_grad():
            for k, v in module.named_buffers():
                v.copy_(saved[k])


# --- model states -----------------------------------------------------------


@dataclass(frozen=True)
class SSLConfig:
    lr: float = 0.003
    weight_decay: float = 0.001
    epochs: int = 100
    moco_batch_size: int = 768
    byol_batch_size: int = 512
    queue_size: int = 1024
    temperature: float = 0.2
    momentum: float = 0.999
    ema_rate: float = 0.99
    min_lr: float = 0.0

    def batch_size(self, kind: str) -> int:
        return self.moco_batch_size if kind == "moco" else self.byol_batch_size


class EncoderWithHead(nn.Module):
    def __init__(self, encoder: nn.Module, head: nn.Module):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, x):
        return self.head(self.encoder(x))


@dataclass
class MoCoState:
    query: EncoderWithHead
    key: EncoderWithHead
    queue: torch.Tensor  # (K, p) unit rows
    queue_ptr: int = 0
    temperature: float = 0.2
    momentum: float = 0.999

    @property
    def encoder(self) -> nn.Module:
        return self.query.encoder


@dataclass
class ByolState:
    online: EncoderWithHead
    predictor: MLPHead
    target: EncoderWithHead
    ema_rate: float = 0.99

    @property
    def encoder(self) -> nn.Module:
        return self.online.encoder


def _make_net(enc_cfg: EncoderConfig, head_cfg: HeadConfig, seed: int, hidden_norm: bool) -> EncoderWithHead:
    encoder = build_encoder(enc_cfg, derive_seed(seed, 0))
    head = he_init_(MLPHead(enc_cfg.feature_dim, head_cfg.hidden_dim, head_cfg.output_dim, hidden_norm), derive_seed(seed, 1))
    return EncoderWithHead(encoder, head)


def init_moco(enc_cfg: EncoderConfig, head_cfg: HeadConfig, hyper: SSLConfig, seed: int) -> MoCoState:
    query = _make_net(enc_cfg, head_cfg, seed, head_cfg.hidden_norm)
    key = copy.deepcopy(query)
    for p in key.parameters():
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(derive_seed(seed, 2))
    queue = F.normalize(torch.randn(hyper.queue_size, head_cfg.output_dim, generator=gen), dim=1)
    return MoCoState(query, key, queue, 0, hyper.temperature, hyper.momentum)


def init_byol(enc_cfg: EncoderConfig, head_cfg: HeadConfig, hyper: SSLConfig, seed: int) -> ByolState:
    online = _make_net(enc_cfg, head_cfg, seed, True)
    predictor = he_init_(
        MLPHead(head_cfg.output_dim, head_cfg.predictor_hidden_dim, head_cfg.output_dim, True), derive_seed(seed, 3)
    )
    target = copy.deepcopy(online)
    for p in target.parameters():
        p.requires_grad_(False)
    return ByolState(online, predictor, target, hyper.ema_rate)


def trainable(state) -> list[tuple[str, torch.Tensor]]:
    if isinstance(state, MoCoState):
        return [("query." + n, p) for n, p in state.query.named_parameters()]
    return [("online." + n, p) for n, p in state.online.named_parameters()] + [
        ("predictor." + n, p) for n, p in state.predictor.named_parameters()
    ]


def _modules(state) -> list[nn.Module]:
    if isinstance(state, MoCoState):
        return [state.query, state.key]
    return [state.online, state.predictor, state.target]


def make_views(images: np.ndarray, policy: AugmentPolicy, seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Two augmented views per image; item i uses a seed derived from (seed, i)."""
    first, second = [], []
    for i, img in enumerate(images):
        a, b = augment.two_views(img, policy, derive_seed(seed, i))
        first.append(a)
        second.append(b)
    return torch.from_numpy(np.stack(first).astype(np.float32)), torch.from_numpy(np.stack(second).astype(np.float32))


def _zero_grads(params) -> None:
    for _, p in params:
        p.grad = None


def _moco_loss(state: MoCoState, v1, v2, train: bool):
    with torch.no_grad(), frozen_statistics(state.key):
        state.key.train(train)
        keys = F.normalize(state.key(v2), dim=1)
    state.query.train(train)
    q = state.query(v1)
    return ntxent_loss(q, keys, state.queue, state.temperature), keys


def moco_train_step(state: MoCoState, optim: OptimState, batch: np.ndarray, seed: int, policy: AugmentPolicy = AugmentPolicy()) -> float:
    """One MoCo step: query/key views, InfoNCE vs queue, AdamW, momentum, enqueue.

    Returns the pre-update loss.  On a non-finite loss the state is left
    untouched and NumericalError is raised.
    """
    v1, v2 = make_views(batch, policy, seed)
    snapshot = {k: v.clone() for k, v in state.query.named_buffers()}
    loss, keys = _moco_loss(state, v1, v2, train=True)
    if not torch.isfinite(loss):
        with torch.no_grad():
            for k, v in state.query.named_buffers():
                v.copy_(snapshot[k])
        raise NumericalError(f"non-finite MoCo loss {loss.item()}")
    params = trainable(state)
    _zero_grads(params)
    loss.backward()
    adamw_step(params, optim)
    momentum_update_(state.key, state.query, state.momentum)
    state.queue, state.queue_ptr = enqueue(state.queue, state.queue_ptr, keys)
    return float(loss.item())


def _byol_loss(state: ByolState, v1, v2, train: bool):
    both = torch.cat([v1, v2])
    with torch.no_grad(), frozen_statistics(state.target):
        state.target.train(train)
        z1t, z2t = state.target(both).chunk(2)
    state.online.train(train)
    state.predictor.train(train)
    p1, p2 = state.predictor(state.online(both)).chunk(2)
    return byol_loss(p1, p2, z1t, z2t)


def byol_train_step(state: ByolState, optim: OptimState, batch: np.ndarray, seed: int, policy: AugmentPolicy = AugmentPolicy()) -> float:
    v1, v2 = make_views(batch, policy, seed)
    online_mods = [state.online, state.predictor]
    snapshot = [{k: v.clone() for k, v in m.named_buffers()} for m in online_mods]
    loss = _byol_loss(state, v1, v2, train=True)
    if not torch.isfinite(loss):
        with torch.no_grad():
            for m, snap in zip(online_mods, snapshot):
                for k, v in m.named_buffers():
                    v.copy_(snap[k])
        raise NumericalError(f"non-finite BYOL loss {loss.item()}")
    params = trainable(state)
    _zero_grads(params)
    loss.backward()
    adamw_step(params, optim)
    momentum_update_(state.target, state.online, state.ema_rate)
    return float(loss.item())


def _moco_validation_loss(state: MoCoState, v1, v2):
    """InfoNCE with the other validation keys of the batch as negatives.

    The live queue drifts from random vectors to real keys during training,
    which makes queue-based losses incomparable across epochs.
    """
    state.query.eval()
    state.key.eval()
    q = F.normalize(state.query(v1), dim=1)
    k = F.normalize(state.key(v2), dim=1)
    logits = q @ k.T / state.temperature
    return F.cross_entropy(logits, torch.arange(len(q)))


@torch.no_grad()
def validation_loss(state, dataset: SnippetDataset, batch_size: int, seed: int, policy: AugmentPolicy = AugmentPolicy()) -> float:
    """Mean SSL loss over ``dataset`` in evaluation mode; mutates nothing."""
    losses, weights = [], []
    for start in range(0, len(dataset), batch_size):
        images = dataset.images[start : start + batch_size]
        if len(images) < 2:
            continue
        v1, v2 = make_views(images, policy, derive_seed(seed, start))
        if isinstance(state, MoCoState):
            loss = _moco_validation_loss(state, v1, v2)
        else:
            loss = _byol_loss(state, v1, v2, train=False)
        losses.append(loss.item())
        weights.append(len(images))
    for m in _modules(state):
        m.train(True)
    return float(np.average(losses, weights=weights)) if losses else float("nan")


# --- full pretraining loop --------------------------------------------------


@dataclass
class PretrainResult:
    kind: str
    state: object
    optim: OptimState
    log: list[dict]
    epoch: int
    initial_val_loss: float = float("nan")


def new_state(kind: str, enc_cfg: EncoderConfig, head_cfg: HeadConfig, hyper: SSLConfig, seed: int):
    if kind == "moco":
        return init_moco(enc_cfg, head_cfg, hyper, seed)
    if kind == "byol":
        return init_byol(enc_cfg, head_cfg, hyper, seed)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def state_snapshot(state) -> list:
    snap = [copy.deepcopy(m.state_dict()) for m in _modules(state)]
    if isinstance(state, MoCoState):
        snap.append((state.queue.clone(), state.queue_ptr))
    return snap


def restore_snapshot(state, snap) -> None:
    for m, sd in zip(_modules(state), snap):
        m.load_state_dict(sd)
    if isinstance(state, MoCoState):
        state.queue, state.queue_ptr = snap[-1][0].clone(), snap[-1][1]


def pretrain(
    kind: str,
    pretrain_set: SnippetDataset,
    validation_set: SnippetDataset,
    hyper: SSLConfig = SSLConfig(),
    epochs: int | None = None,
    seed: int = 0,
    enc_cfg: EncoderConfig = EncoderConfig(),
    head_cfg: HeadConfig = HeadConfig(),
    policy: AugmentPolicy = AugmentPolicy(),
    resume: PretrainResult | None = None,
    on_epoch=None,
) -> PretrainResult:
    """Train ``kind`` in {"moco", "byol"} for ``epochs`` more epochs.

    Each epoch reshuffles the pretrain set (single shard), drops the last
    partial batch, then scores the validation set without updating anything.
    ``on_epoch(result)`` runs after every epoch (e.g. to write a checkpoint).
    """
    epochs = hyper.epochs if epochs is None else epochs
    batch_size = min(hyper.batch_size(kind), len(pretrain_set))
    steps_per_epoch = len(pretrain_set) // batch_size if batch_size else 0
    if resume is None:
        torch.manual_seed(derive_seed(seed, 99))
        state = new_state(kind, enc_cfg, head_cfg, hyper, seed)
        optim = OptimState(hyper.lr, hyper.weight_decay, max(steps_per_epoch * epochs, 1), hyper.min_lr)
        result = PretrainResult(kind, state, optim, [], 0)
    else:
        result = resume
    step_fn = moco_train_step if kind == "moco" else byol_train_step
    val_batch = max(batch_size, 2)
    val_seed = derive_seed(seed, 7)
    if resume is None:
        result.initial_val_loss = validation_loss(result.state, validation_set, val_batch, val_seed, policy)

    for _ in range(epochs):
        epoch = result.epoch + 1
        good = state_snapshot(result.state)
        good_optim = copy.deepcopy(result.optim)
        order = shard_indices(len(pretrain_set), ShardSpec(1, 0, derive_seed(seed, 1000 + epoch)))
        losses = []
        lr = result.optim.current_lr()
        try:
            for s in range(steps_per_epoch):
                idx = np.sort(order[s * batch_size : (s + 1) * batch_size])
                step_seed = derive_seed(seed, epoch * 100_003 + s)
                losses.append(step_fn(result.state, result.optim, pretrain_set.images[idx], step_seed, policy))
        except NumericalError:
            restore_snapshot(result.state, good)
            result.optim = good_optim
            raise
        val = validation_loss(result.state, validation_set, val_batch, val_seed, policy)
        result.log.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"), "val_loss": val, "lr": lr}
        )
        result.epoch = epoch
        if on_epoch is not None:
            on_epoch(result)
    return result
