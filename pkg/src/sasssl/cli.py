"""Command-line driver: synth -> build-data -> pretrain -> probe/supervised -> report/embed.

All outputs live under one run directory::

    manifest.txt                 relative path + seed of every data file
    scenes/scene_NNNNN.ssbn      synthetic scenes with ground truth
    data/{pretrain,train,validation,test}.ssbn
    models/<kind>/checkpoint.ssbn, models/<kind>/log.csv
    cells/<model>_<fraction>/report.csv, log.csv, classifier.ssbn
    report/summary.csv + pr_curves.svg, roc_curves.svg, relative_accuracy.svg
    embed/embeddings.csv + tsne_<model>.svg
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_pretrain, save_classifier, save_pretrain
from .config import MODEL_KINDS, RunConfig, dump_config, load_config
from .data import SPLITS, build_splits, load_dataset, load_scene, save_dataset, save_scene, subsample_labels
from .errors import ConfigurationError, InputError
from .metrics import read_report_csv
from .pipeline import cap_labeled, chip_corpus, set_determinism
from .plots import line_chart, scatter_chart
from .probe import evaluate_model, extract_features, train_probe, train_supervised_baseline
from .ssl import pretrain
from .synthgen import scene_corpus
from .tsne import tsne_embed

MANIFEST = "manifest.txt"
SUPERVISED = "supervised"


# --- file helpers -----------------------------------------------------------


def _atomic(path: Path, write) -> None:
    """Write via a temporary sibling so a failure never leaves a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    _atomic(path, lambda p: Path(p).write_text(text))


def _csv_text(header, rows, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_manifest(out: Path) -> dict[str, int]:
    path = out / MANIFEST
    if not path.exists():
        return {}
    entries = {}
    for line in path.read_text().splitlines():
        if line.strip():
            rel, seed = line.rsplit(" ", 1)
            entries[rel] = int(seed)
    return entries


def _update_manifest(out: Path, prefix: str, entries: dict[str, int]) -> None:
    merged = {k: v for k, v in read_manifest(out).items() if not k.startswith(prefix)}
    merged.update(entries)
    _write_text(out / MANIFEST, "".join(f"{k} {v}\n" for k, v in sorted(merged.items())))


def fraction_tag(fraction: float) -> str:
    return f"{fraction:g}"


def cell_dir(out: Path, model: str, fraction: float) -> Path:
    return out / "cells" / f"{model}_{fraction_tag(fraction)}"


def _require(paths, hint: str) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise InputError(f"missing {', '.join(missing)} ({hint})")


def _load_splits(out: Path, names=SPLITS):
    paths = [out / "data" / f"{n}.ssbn" for n in names]
    _require(paths, "run build-data first")
    return [load_dataset(p) for p in paths]


# --- subcommands ------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out: Path) -> list[Path]:
    scenes = scene_corpus(cfg.synth, cfg.data.n_scenes, cfg.seed)
    written = {}
    old = [p for p in (out / "scenes").glob("scene_*.ssbn")] if (out / "scenes").exists() else []
    for p in old:
        p.unlink()
    for scene in scenes:
        rel = f"scenes/scene_{scene.scene_id:05d}.ssbn"
        _atomic(out / rel, lambda p, s=scene: save_scene(s, p))
        written[rel] = cfg.seed
    _update_manifest(out, "scenes/", written)
    return [out / rel for rel in written]


def cmd_build_data(cfg: RunConfig, out: Path) -> list[Path]:
    scene_files = sorted(k for k in read_manifest(out) if k.startswith("scenes/"))
    if not scene_files:
        raise InputError(f"no scenes listed in {out / MANIFEST} (run synth first)")
    _require([out / f for f in scene_files], "run synth first")
    scenes = [load_scene(out / f) for f in scene_files]
    d = cfg.data
    labeled, unlabeled = chip_corpus(scenes, cfg.rx, cfg.synth.snippet_size, d.n_labeled_scenes, d.match_radius, d.source_extent)
    labeled = cap_labeled(labeled, d.per_class_cap)
    splits = build_splits(labeled, unlabeled, d.split_ratios, cfg.seed)
    written = {}
    for name, ds in zip(SPLITS, splits):
        rel = f"data/{name}.ssbn"
        _atomic(out / rel, lambda p, ds=ds: save_dataset(ds, p))
        written[rel] = cfg.seed
    _update_manifest(out, "data/", written)
    return [out / rel for rel in written]


def _log_header(cfg: RunConfig, kind: str) -> list[str]:
    h = cfg.ssl
    return [
        f"model={kind} optimizer=adamw scheduler=cosine lr={h.lr!r} weight_decay={h.weight_decay!r} "
        f"epochs={h.epochs} batch_size={h.batch_size(kind)} seed={cfg.seed}"
    ]


def _write_pretrain_outputs(cfg: RunConfig, out: Path, result) -> None:
    model_dir = out / "models" / result.kind
    _atomic(model_dir / "checkpoint.ssbn", lambda p: save_pretrain(p, result, cfg.encoder, cfg.head, cfg.ssl, cfg.seed))
    rows = [(r["epoch"], r["train_loss"], r["val_loss"], r["lr"]) for r in result.log]
    comments = _log_header(cfg, result.kind) + [f"initial_val_loss={result.initial_val_loss!r}"]
    _write_text(model_dir / "log.csv", _csv_text(["epoch", "train_loss", "val_loss", "lr"], rows, comments))


def cmd_pretrain(cfg: RunConfig, out: Path, kind: str, resume: bool = False):
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    pre, val = _load_splits(out, ("pretrain", "validation"))
    previous = None
    ckpt = out / "models" / kind / "checkpoint.ssbn"
    if resume:
        _require([ckpt], "nothing to resume")
        previous, enc_cfg, head_cfg, hyper, seed = load_pretrain(ckpt)
        if (enc_cfg, head_cfg, seed) != (cfg.encoder, cfg.head, cfg.seed):
            raise ConfigurationError(f"{ckpt} was trained with a different encoder/head/seed")
    epochs = cfg.ssl.epochs - (previous.epoch if previous else 0)
    if epochs < 0:
        raise ConfigurationError(f"checkpoint already has {previous.epoch} epochs > ssl.epochs={cfg.ssl.epochs}")
    result = pretrain(
        kind, pre, val, cfg.ssl, epochs, cfg.seed, cfg.encoder, cfg.head, cfg.augment, resume=previous,
        on_epoch=lambda r: _write_pretrain_outputs(cfg, out, r),
    )
    _write_pretrain_outputs(cfg, out, result)
    return result


def _write_cell(cfg, out: Path, model: str, fraction: float, result, test) -> Path:
    directory = cell_dir(out, model, fraction)
    report = evaluate_model(result.model, test, model, fraction, cfg.probe.decision_threshold)
    _atomic(directory / "report.csv", report.write_csv)
    rows = [(r["epoch"], r["train_loss"], r["val_loss"]) for r in result.log]
    _write_text(directory / "log.csv", _csv_text(["epoch", "train_loss", "val_loss"], rows, [f"best_epoch={result.best_epoch}"]))
    info = {"model": model, "label_fraction": fraction, "seed": cfg.seed}
    _atomic(directory / "classifier.ssbn", lambda p: save_classifier(p, result, cfg.encoder, info))
    return directory / "report.csv"


def cmd_probe(cfg: RunConfig, out: Path, kind: str, fraction: float) -> Path:
    ckpt = out / "models" / kind / "checkpoint.ssbn"
    _require([ckpt], f"run pretrain --model {kind} first")
    train, val, test = _load_splits(out, ("train", "validation", "test"))
    subset = subsample_labels(train, fraction, cfg.seed)
    result, *_ = load_pretrain(ckpt)
    probe_cfg = replace(cfg.probe, label_fraction=fraction, seed=cfg.seed)
    trained = train_probe(result.state.encoder, subset, val, probe_cfg)
    return _write_cell(cfg, out, kind, fraction, trained, test)


def cmd_supervised(cfg: RunConfig, out: Path, fraction: float) -> Path:
    train, val, test = _load_splits(out, ("train", "validation", "test"))
    subset = subsample_labels(train, fraction, cfg.seed)
    probe_cfg = replace(cfg.probe, label_fraction=fraction, seed=cfg.seed)
    trained = train_supervised_baseline(subset, val, probe_cfg, cfg.encoder)
    return _write_cell(cfg, out, SUPERVISED, fraction, trained, test)


SUMMARY_FIELDS = ["model", "label_fraction", "precision", "recall", "accuracy", "auc", "tp", "fp", "tn", "fn"]


def cmd_report(cfg: RunConfig, out: Path) -> Path:
    models = list(cfg.matrix.models) + [SUPERVISED]
    fractions = sorted(cfg.matrix.fractions)
    cells = {(m, f): cell_dir(out, m, f) / "report.csv" for m in models for f in fractions}
    missing = [f"{m}@{fraction_tag(f)}" for (m, f), p in cells.items() if not p.exists()]
    if missing:
        raise InputError(f"missing evaluated cells: {', '.join(missing)}")
    reports = {key: read_report_csv(path) for key, path in cells.items()}
    baseline_key = (SUPERVISED, fractions[0])
    base_acc = float(reports[baseline_key]["summary"]["accuracy"])
    rows = []
    for m in models:
        for f in fractions:
            s = reports[(m, f)]["summary"]
            rel = 100.0 * (float(s["accuracy"]) - base_acc)
            rows.append([s[k] for k in SUMMARY_FIELDS] + [repr(rel)])
    report_dir = out / "report"
    comment = f"relative_accuracy_pts = 100 * (accuracy - accuracy of {SUPERVISED} at fraction {fraction_tag(fractions[0])})"
    _write_text(report_dir / "summary.csv", _csv_text(SUMMARY_FIELDS + ["relative_accuracy_pts"], rows, [comment]))

    for curve, fname, xl, yl, diag in (
        ("pr", "pr_curves.svg", "Recall", "Precision", False),
        ("roc", "roc_curves.svg", "False positive rate", "True positive rate", True),
    ):
        series = []
        for (m, f), rep in reports.items():
            pts = np.array(rep[curve]) if rep[curve] else np.zeros((0, 2))
            series.append((f"{m} {fraction_tag(100 * f)}%", pts[:, 0], pts[:, 1]))
        title = "Precision-recall" if curve == "pr" else "ROC"
        _write_text(report_dir / fname, line_chart(series, title, xl, yl, (0, 1), (0, 1), diagonal=diag))

    rel_series = []
    for m in models:
        ys = [100.0 * (float(reports[(m, f)]["summary"]["accuracy"]) - base_acc) for f in fractions]
        rel_series.append((m, [100 * f for f in fractions], ys))
    chart = line_chart(
        rel_series, f"Accuracy relative to {SUPERVISED} at {fraction_tag(100 * fractions[0])}% labels",
        "Labels used (%)", "Accuracy difference (points)", markers=True,
    )
    _write_text(report_dir / "relative_accuracy.svg", chart)
    return report_dir / "summary.csv"


def cmd_embed(cfg: RunConfig, out: Path, include_pixels: bool = True) -> Path:
    (test,) = _load_splits(out, ("test",))
    ckpts = {m: out / "models" / m / "checkpoint.ssbn" for m in cfg.matrix.models}
    _require(ckpts.values(), "run pretrain first")
    features = {}
    if include_pixels:
        features["pixels"] = test.images.reshape(len(test), -1).astype(np.float64)
    for m, path in ckpts.items():
        result, *_ = load_pretrain(path)
        features[m] = extract_features(result.state.encoder, test.images).double().numpy()
    rows = []
    embed_dir = out / "embed"
    for name, feats in features.items():
        emb = tsne_embed(feats, test.labels, cfg.tsne, cfg.seed, name)
        rows.extend((float(x), float(y), int(lab), name) for (x, y), lab in zip(emb.coords, emb.labels))
        _write_text(embed_dir / f"tsne_{name}.svg", scatter_chart(emb.coords, emb.labels, f"t-SNE of {name} test features"))
    _write_text(embed_dir / "embeddings.csv", _csv_text(["x", "y", "label", "model"], rows))
    return embed_dir / "embeddings.csv"


def run_all(cfg: RunConfig, out: Path) -> None:
    """Every stage in order, as the subcommands would run them."""
    cmd_synth(cfg, out)
    cmd_build_data(cfg, out)
    for kind in cfg.matrix.models:
        cmd_pretrain(cfg, out, kind)
    for f in cfg.matrix.fractions:
        for kind in cfg.matrix.models:
            cmd_probe(cfg, out, kind, f)
        cmd_supervised(cfg, out, f)
    cmd_report(cfg, out)
    cmd_embed(cfg, out)


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sasssl", description="Self-supervised pretraining experiments on synthetic two-band sonar snippets.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, model=False, fraction=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key=value config file (see `defaults`)")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", type=Path, help="run directory (default: out_dir from the config)")
        if model:
            p.add_argument("--model", choices=MODEL_KINDS, help="model kind (default: all in matrix.models)")
        if fraction:
            p.add_argument("--fraction", type=float, help="label fraction (default: all in matrix.fractions)")
        return p

    add("synth", "generate the synthetic scene corpus")
    add("build-data", "detect, chip and split snippets")
    add("pretrain", "self-supervised pretraining", model=True).add_argument(
        "--resume", action="store_true", help="continue from the saved checkpoint"
    )
    add("probe", "linear probe on a frozen pretrained encoder", model=True, fraction=True)
    add("supervised", "end-to-end supervised baseline", fraction=True)
    add("report", "summary table and SVG curves")
    add("embed", "t-SNE of test features")
    add("defaults", "print every configuration key with its default")
    return parser


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = args.out if args.out is not None else Path(cfg.out_dir)
    cfg = replace(cfg, out_dir=str(out))
    cfg.validate()
    fraction = getattr(args, "fraction", None)
    if fraction is not None and not 0 < fraction <= 1:
        raise ConfigurationError(f"--fraction {fraction} outside (0, 1]")
    return cfg, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "defaults":
            text = dump_config(RunConfig())
            if args.out is not None:
                _write_text(args.out, text)
            else:
                sys.stdout.write(text)
            return 0
        cfg, out = _resolve(args)
        set_determinism()
        models = [args.model] if getattr(args, "model", None) else list(cfg.matrix.models)
        fractions = [args.fraction] if getattr(args, "fraction", None) is not None else list(cfg.matrix.fractions)
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "build-data":
            cmd_build_data(cfg, out)
        elif args.command == "pretrain":
            for kind in models:
                cmd_pretrain(cfg, out, kind, args.resume)
        elif args.command == "probe":
            for kind in models:
                for f in fractions:
                    cmd_probe(cfg, out, kind, f)
        elif args.command == "supervised":
            for f in fractions:
                cmd_supervised(cfg, out, f)
        elif args.command == "report":
            cmd_report(cfg, out)
        elif args.command == "embed":
            cmd_embed(cfg, out)
    except (ValueError, FloatingPointError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"sasssl {args.command}: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
