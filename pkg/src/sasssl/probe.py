"""Linear probing of frozen encoders and the end-to-end supervised baseline."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .augment import probe_flip
from .data import SnippetDataset
from .errors import ConfigurationError, InputError
from .metrics import MetricsReport, evaluate_scores
from .nncore import Encoder, EncoderConfig, LinearHead, build_encoder, he_init_
from .ssl import OptimState, adamw_step
from .synthgen import derive_seed

BCE_EPS = 1e-7


@dataclass(frozen=True)
class ProbeConfig:
    label_fraction: float = 1.0
    decision_threshold: float = 0.5
    patience: int = 10
    max_epochs: int = 200
    lr: float = 0.003
    weight_decay: float = 0.001
    batch_size: int = 64
    seed: int = 0
    # Standardize frozen features with training-split statistics (labels unused).
    standardize: bool = True

    def __post_init__(self):
        if not 0 < self.decision_threshold < 1:
            raise ConfigurationError("decision_threshold must lie in (0, 1)")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if not 0 < self.label_fraction <= 1:
            raise ConfigurationError("label_fraction must lie in (0, 1]")


def bce_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    p = torch.clamp(probabilities, BCE_EPS, 1 - BCE_EPS)
    y = labels.to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


class EarlyStopping:
    """Stop once the monitored loss has not strictly decreased for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.epoch = 0
        self.stale = 0

    def update(self, loss: float) -> bool:
        """Record one epoch's loss; returns True when training should stop."""
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


class Classifier(nn.Module):
    """encoder -> fixed standardization -> linear head -> logit."""

    def __init__(self, encoder: nn.Module, head: LinearHead, mean=None, std=None):
        super().__init__()
        self.encoder = encoder
        self.head = head
        dim = head.in_dim
        self.register_buffer("feat_mean", torch.zeros(dim) if mean is None else torch.as_tensor(mean, dtype=torch.float32))
        self.register_buffer("feat_std", torch.ones(dim) if std is None else torch.as_tensor(std, dtype=torch.float32))

    def features(self, x):
        return (self.encoder(x) - self.feat_mean) / self.feat_std

    def forward(self, x):
        return self.head(self.features(x)).squeeze(1)


@torch.no_grad()
def extract_features(encoder: nn.Module, images: np.ndarray, batch_size: int = 256, flip: bool = False) -> torch.Tensor:
    encoder.eval()
    out = []
    for start in range(0, len(images), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(images[start : start + batch_size], dtype=np.float32))
        if flip:
            x = torch.flip(x, dims=[-1])
        out.append(encoder(x))
    encoder.train()
    if not out:
        return torch.zeros(0, encoder.config.feature_dim)
    return torch.cat(out)


def parameter_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, value in module.state_dict().items():
        h.update(name.encode())
        h.update(value.detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class ProbeResult:
    model: Classifier
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def _flip_mask(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.array([probe_flip(derive_seed(seed, epoch * 1_000_003 + i)) for i in range(n)])


def train_probe(encoder: Encoder, train_set: SnippetDataset, validation_set: SnippetDataset, config: ProbeConfig = ProbeConfig()) -> ProbeResult:
    """Train a logistic linear head on frozen encoder features.

    Features for the original and horizontally flipped training images are
    computed once; each epoch picks one per example via the probe flip.
    Returns the head from the epoch with the lowest validation loss.
    """
    if len(train_set) == 0:
        raise InputError("empty training set")
    encoder = encoder.eval()
    train_plain = extract_features(encoder, train_set.images)
    train_flip = extract_features(encoder, train_set.images, flip=True)
    val_feats = extract_features(encoder, validation_set.images)
    y_train = torch.as_tensor(train_set.labels, dtype=torch.float32)
    y_val = torch.as_tensor(validation_set.labels, dtype=torch.float32)

    dim = train_plain.shape[1]
    if config.standardize:
        mean = train_plain.mean(0)
        std = train_plain.std(0, unbiased=False).clamp_min(1e-6)
    else:
        mean, std = torch.zeros(dim), torch.ones(dim)
    head = he_init_(LinearHead(dim), derive_seed(config.seed, 11))
    optim = OptimState(config.lr, config.weight_decay, total_steps=1)
    stopper = EarlyStopping(config.patience)
    rng = np.random.default_rng(derive_seed(config.seed, 12))
    best = copy.deepcopy(head.state_dict())
    log = []
    params = list(head.named_parameters())
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        flips = torch.from_numpy(_flip_mask(n, config.seed, epoch))
        feats = torch.where(flips[:, None], train_flip, train_plain)
        feats = (feats - mean) / std
        order = rng.permutation(n)
        train_losses = []
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            for _, p in params:
                p.grad = None
            loss = bce_loss(torch.sigmoid(head(feats[idx]).squeeze(1)), y_train[idx])
            loss.backward()
            adamw_step(params, optim, lr=config.lr)
            train_losses.append(loss.item())
        with torch.no_grad():
            val_loss = bce_loss(torch.sigmoid(head((val_feats - mean) / std).squeeze(1)), y_val).item() if len(y_val) else 0.0
        log.append({"epoch": epoch, "train_loss": float(np.mean(train_losses)), "val_loss": val_loss})
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best = copy.deepcopy(head.state_dict())
        if stop:
            break
    head.load_state_dict(best)
    return ProbeResult(Classifier(encoder, head, mean, std).eval(), log, stopper.best_epoch)


def train_supervised_baseline(
    train_set: SnippetDataset,
    validation_set: SnippetDataset,
    config: ProbeConfig = ProbeConfig(),
    enc_cfg: EncoderConfig = EncoderConfig(),
) -> ProbeResult:
    """Same encoder topology and head trained end to end with BCE and early stopping."""
    if len(train_set) == 0:
        raise InputError("empty training set")
    torch.manual_seed(derive_seed(config.seed, 21))
    encoder = build_encoder(enc_cfg, derive_seed(config.seed, 22))
    head = he_init_(LinearHead(enc_cfg.feature_dim), derive_seed(config.seed, 23))
    model = Classifier(encoder, head)
    params = [(n, p) for n, p in model.named_parameters()]
    optim = OptimState(config.lr, config.weight_decay, total_steps=1)
    stopper = EarlyStopping(config.patience)
    rng = np.random.default_rng(derive_seed(config.seed, 24))
    y_train = torch.as_tensor(train_set.labels, dtype=torch.float32)
    images = torch.from_numpy(np.ascontiguousarray(train_set.images, dtype=np.float32))
    best = copy.deepcopy(model.state_dict())
    log = []
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        flips = torch.from_numpy(_flip_mask(n, config.seed, epoch))
        order = rng.permutation(n)
        train_losses = []
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            x = images[idx]
            x = torch.where(flips[idx][:, None, None, None], torch.flip(x, dims=[-1]), x)
            if len(idx) < 2:
                # Batch statistics need at least two samples.
                continue
            for _, p in params:
                p.grad = None
            loss = bce_loss(torch.sigmoid(model(x)), y_train[idx])
            loss.backward()
            adamw_step(params, optim, lr=config.lr)
            train_losses.append(loss.item())
        val_loss = _dataset_loss(model, validation_set)
        log.append({"epoch": epoch, "train_loss": float(np.mean(train_losses)) if train_losses else float("nan"), "val_loss": val_loss})
        stop = stopper.update(val_loss)
        if stopper.best_epoch == epoch:
            best = copy.deepcopy(model.state_dict())
        if stop:
            break
    model.load_state_dict(best)
    return ProbeResult(model.eval(), log, stopper.best_epoch)


@torch.no_grad()
def _dataset_loss(model: Classifier, dataset: SnippetDataset) -> float:
    if len(dataset) == 0:
        return 0.0
    probs = predict(model, dataset.images)
    return bce_loss(torch.from_numpy(probs), torch.as_tensor(dataset.labels)).item()


@torch.no_grad()
def predict(model: Classifier, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Positive-class probabilities (logistic of the logit), evaluation mode."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    was_training = model.training
    model.eval()
    out = [torch.sigmoid(model(torch.from_numpy(images[s : s + batch_size]))) for s in range(0, len(images), batch_size)]
    model.train(was_training)
    return torch.cat(out).double().numpy() if out else np.zeros(0)


def dataset_id(dataset: SnippetDataset) -> str:
    h = hashlib.sha256(np.ascontiguousarray(dataset.images).tobytes())
    h.update(np.asarray(dataset.labels, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def evaluate_model(model: Classifier, test_set: SnippetDataset, model_id: str = "", label_fraction: float = 1.0, threshold: float = 0.5) -> MetricsReport:
    scores = predict(model, test_set.images)
    return evaluate_scores(scores, test_set.labels, model_id, label_fraction, threshold, dataset_id(test_set))
