"""Checkpoints for pretraining runs and trained classifiers.

Both are SSBN1 tensor files.  Every tensor (parameters, normalization
statistics, queue, optimizer moments) is stored as raw 32-bit floats;
configs, counters and the training log travel in the JSON metadata.
"""

from __future__ import annotations

from dataclasses import asdict, fields

import numpy as np
import torch

from .data import read_tensors, write_tensors
from .errors import FormatError
from .nncore import EncoderConfig, HeadConfig, LinearHead, build_encoder
from .probe import Classifier, ProbeResult
from .ssl import MoCoState, OptimState, PretrainResult, SSLConfig, _modules, new_state


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(cls, raw: dict):
    known = {f.name for f in fields(cls)}
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items() if k in known}
    return cls(**kwargs)


def _module_names(kind: str) -> list[str]:
    return ["query", "key"] if kind == "moco" else ["online", "predictor", "target"]


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype(np.float32)


def save_pretrain(path, result: PretrainResult, enc_cfg: EncoderConfig, head_cfg: HeadConfig, hyper: SSLConfig, seed: int) -> None:
    tensors = {}
    for name, module in zip(_module_names(result.kind), _modules(result.state)):
        for key, value in module.state_dict().items():
            tensors[f"{name}.{key}"] = _to_numpy(value)
    if isinstance(result.state, MoCoState):
        tensors["queue"] = _to_numpy(result.state.queue)
    opt = result.optim
    for key, value in opt.exp_avg.items():
        tensors[f"optim.exp_avg.{key}"] = _to_numpy(value)
    for key, value in opt.exp_avg_sq.items():
        tensors[f"optim.exp_avg_sq.{key}"] = _to_numpy(value)
    meta = {
        "format": "pretrain",
        "kind": result.kind,
        "epoch": result.epoch,
        "seed": seed,
        "log": result.log,
        "initial_val_loss": result.initial_val_loss,
        "queue_ptr": result.state.queue_ptr if isinstance(result.state, MoCoState) else None,
        "encoder": config_to_dict(enc_cfg),
        "head": config_to_dict(head_cfg),
        "hyper": config_to_dict(hyper),
        "optim": {k: getattr(opt, k) for k in ("base_lr", "weight_decay", "total_steps", "min_lr", "betas", "eps", "step")},
    }
    write_tensors(path, tensors, meta)


def load_pretrain(path) -> tuple[PretrainResult, EncoderConfig, HeadConfig, SSLConfig, int]:
    """Rebuild the training state saved by ``save_pretrain``."""
    tensors, meta = read_tensors(path)
    if meta.get("format") != "pretrain":
        raise FormatError(f"{path}: not a pretraining checkpoint")
    enc_cfg = config_from_dict(EncoderConfig, meta["encoder"])
    head_cfg = config_from_dict(HeadConfig, meta["head"])
    hyper = config_from_dict(SSLConfig, meta["hyper"])
    kind = meta["kind"]
    state = new_state(kind, enc_cfg, head_cfg, hyper, meta["seed"])
    for name, module in zip(_module_names(kind), _modules(state)):
        sd = module.state_dict()
        restored = {}
        for key, ref in sd.items():
            full = f"{name}.{key}"
            if full not in tensors:
                raise FormatError(f"{path}: missing tensor {full}")
            restored[key] = torch.from_numpy(tensors[full].copy()).to(ref.dtype).reshape(ref.shape)
        module.load_state_dict(restored)
    if isinstance(state, MoCoState):
        state.queue = torch.from_numpy(tensors["queue"].copy())
        state.queue_ptr = int(meta["queue_ptr"])
    o = meta["optim"]
    optim = OptimState(o["base_lr"], o["weight_decay"], o["total_steps"], o["min_lr"], tuple(o["betas"]), o["eps"], o["step"])
    for key, value in tensors.items():
        if key.startswith("optim.exp_avg."):
            optim.exp_avg[key[len("optim.exp_avg.") :]] = torch.from_numpy(value.copy())
        elif key.startswith("optim.exp_avg_sq."):
            optim.exp_avg_sq[key[len("optim.exp_avg_sq.") :]] = torch.from_numpy(value.copy())
    result = PretrainResult(kind, state, optim, list(meta["log"]), int(meta["epoch"]), float(meta["initial_val_loss"]))
    return result, enc_cfg, head_cfg, hyper, int(meta["seed"])


def save_classifier(path, result: ProbeResult, enc_cfg: EncoderConfig, info: dict) -> None:
    tensors = {k: _to_numpy(v) for k, v in result.model.state_dict().items()}
    meta = {"format": "classifier", "encoder": config_to_dict(enc_cfg), "log": result.log, "best_epoch": result.best_epoch, **info}
    write_tensors(path, tensors, meta)


def load_classifier(path) -> tuple[Classifier, dict]:
    tensors, meta = read_tensors(path)
    if meta.get("format") != "classifier":
        raise FormatError(f"{path}: not a classifier checkpoint")
    enc_cfg = config_from_dict(EncoderConfig, meta["encoder"])
    model = Classifier(build_encoder(enc_cfg, 0), LinearHead(enc_cfg.feature_dim))
    sd = model.state_dict()
    model.load_state_dict({k: torch.from_numpy(tensors[k].copy()).to(v.dtype).reshape(v.shape) for k, v in sd.items()})
    return model.eval(), meta
