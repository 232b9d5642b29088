"""End-to-end experiment steps shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .data import SnippetDataset, build_splits, subsample_labels
from .nncore import TOY_ENCODER, EncoderConfig, build_encoder
from .probe import evaluate_model, train_probe, train_supervised_baseline
from .rxdetect import RxConfig, Snippet, chip_scene
from .ssl import pretrain
from .synthgen import Scene, derive_seed, scene_corpus


@dataclass(frozen=True)
class Splits:
    pretrain: SnippetDataset
    train: SnippetDataset
    validation: SnippetDataset
    test: SnippetDataset


def chip_corpus(scenes: list[Scene], rx: RxConfig, snippet_size: int, n_labeled_scenes: int, match_radius: float, source_extent=None):
    """Labeled chips from the first ``n_labeled_scenes`` scenes, unlabeled chips from the rest."""
    labeled: list[tuple[Snippet, int]] = []
    unlabeled: list[Snippet] = []
    for i, scene in enumerate(scenes):
        if i < n_labeled_scenes:
            for s in chip_scene(scene, rx, snippet_size, source_extent, match_radius):
                labeled.append((s, s.label))
        else:
            unlabeled.extend(chip_scene(scene, rx, snippet_size, source_extent))
    return labeled, unlabeled


def cap_labeled(labeled, per_class: int | None):
    """Keep at most ``per_class`` chips of each class (first come first kept)."""
    if per_class is None:
        return labeled
    counts = {0: 0, 1: 0}
    out = []
    for s, lab in labeled:
        if counts[lab] < per_class:
            counts[lab] += 1
            out.append((s, lab))
    return out


def set_determinism() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def random_encoder(enc_cfg: EncoderConfig, seed: int):
    return build_encoder(enc_cfg, derive_seed(seed, 31)).eval()


def desk_config(seed: int = 0):
    """The desk-scale run used for the trend experiment.

    Toy encoder, batch 64 for both methods, 30 pretraining epochs and enough
    scenes for about 2000 unlabeled chips next to a 500/500 labeled pool.
    """
    from .config import RunConfig

    base = RunConfig()
    return replace(
        base,
        seed=seed,
        encoder=TOY_ENCODER,
        data=replace(base.data, n_scenes=220),
        ssl=replace(base.ssl, epochs=30, moco_batch_size=64, byol_batch_size=64),
    )


def make_splits(cfg) -> Splits:
    """In-memory equivalent of the synth + build-data subcommands."""
    d = cfg.data
    scenes = scene_corpus(cfg.synth, d.n_scenes, cfg.seed)
    labeled, unlabeled = chip_corpus(scenes, cfg.rx, cfg.synth.snippet_size, d.n_labeled_scenes, d.match_radius, d.source_extent)
    return Splits(*build_splits(cap_labeled(labeled, d.per_class_cap), unlabeled, d.split_ratios, cfg.seed))


def pretrain_model(cfg, splits: Splits, kind: str):
    return pretrain(kind, splits.pretrain, splits.validation, cfg.ssl, cfg.ssl.epochs, cfg.seed, cfg.encoder, cfg.head, cfg.augment)


def probe_cell(cfg, splits: Splits, encoder, fraction: float, model_id: str):
    """Linear probe on ``encoder`` with ``fraction`` of the train labels; returns (result, report)."""
    probe_cfg = replace(cfg.probe, label_fraction=fraction, seed=cfg.seed)
    result = train_probe(encoder, subsample_labels(splits.train, fraction, cfg.seed), splits.validation, probe_cfg)
    return result, evaluate_model(result.model, splits.test, model_id, fraction, probe_cfg.decision_threshold)


def supervised_cell(cfg, splits: Splits, fraction: float):
    probe_cfg = replace(cfg.probe, label_fraction=fraction, seed=cfg.seed)
    result = train_supervised_baseline(subsample_labels(splits.train, fraction, cfg.seed), splits.validation, probe_cfg, cfg.encoder)
    return result, evaluate_model(result.model, splits.test, "supervised", fraction, probe_cfg.decision_threshold)
