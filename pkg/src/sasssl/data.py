"""Snippet datasets: balanced splits, label subsampling, sharding and SSBN1 files.

SSBN1 layout (all integers little-endian)::

    b"SSBN1"  u8 version  u8 kind
    kind 0 (array block):  u32 n, u32 bands, u32 height, u32 width, u8 dtype(1=f32)
                           n*bands*height*width float32, row-major
                           n label bytes (255 = unlabeled)
    kind 1 (tensor table): u32 count, then per tensor:
                           u16 name length, name (utf-8), u8 ndim, ndim*u32 dims,
                           prod(dims) float32
    both:                  u32 metadata length, metadata (utf-8 JSON)
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BalanceError, ConfigurationError, FormatError, InsufficientLabelsError
from .rxdetect import Snippet
from .synthgen import GroundTruthObject, MultibandImage, Scene

MAGIC = b"SSBN1"
VERSION = 1
KIND_ARRAYS = 0
KIND_TENSORS = 1
UNLABELED = 255
SPLITS = ("pretrain", "train", "validation", "test")


@dataclass(frozen=True)
class SnippetDataset:
    images: np.ndarray  # (n, 2, S, S) float32
    labels: np.ndarray  # (n,) int64, -1 = unlabeled
    split_tag: str = "pretrain"
    seed: int = 0
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 2 or self.images.shape[2] != self.images.shape[3]:
            raise FormatError(f"images must be (n, 2, S, S), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise FormatError("labels and images differ in length")
        if self.split_tag not in SPLITS:
            raise ConfigurationError(f"unknown split tag {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> Snippet:
        label = int(self.labels[i])
        prov = tuple(self.provenance[i]) if self.provenance else None
        return Snippet(self.images[i], None if label < 0 else label, prov)

    @property
    def snippet_size(self) -> int:
        return self.images.shape[-1]

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def is_balanced(self) -> bool:
        neg, pos = self.class_counts()
        return neg == pos and neg + pos == len(self)

    def take(self, indices) -> "SnippetDataset":
        indices = np.asarray(indices, dtype=np.int64)
        prov = [self.provenance[i] for i in indices] if self.provenance else []
        return SnippetDataset(self.images[indices], self.labels[indices], self.split_tag, self.seed, prov)


def from_snippets(snippets: list[Snippet], split_tag: str, seed: int = 0, size: int | None = None) -> SnippetDataset:
    if snippets:
        images = np.stack([s.bands for s in snippets]).astype(np.float32)
    else:
        images = np.zeros((0, 2, size or 8, size or 8), dtype=np.float32)
    labels = np.array([-1 if s.label is None else s.label for s in snippets], dtype=np.int64)
    prov = [list(s.provenance) if s.provenance else [] for s in snippets]
    return SnippetDataset(images, labels, split_tag, seed, prov)


def _split_counts(n: int, ratios) -> list[int]:
    bounds = [0] + [round(n * c) for c in np.cumsum(ratios)[:-1]] + [n]
    return [b - a for a, b in zip(bounds[:-1], bounds[1:])]


def build_splits(labeled: list[tuple[Snippet, int]], unlabeled: list[Snippet], ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Return (pretrain, train, validation, test) datasets.

    Each class is shuffled and divided by ``ratios``; every labeled split is
    then truncated to its minority-class count so it is exactly 50/50.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigurationError(f"split ratios must be three nonnegative values summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    size = unlabeled[0].bands.shape[-1] if unlabeled else (labeled[0][0].bands.shape[-1] if labeled else None)
    pretrain = from_snippets([Snippet(s.bands, None, s.provenance) for s in unlabeled], "pretrain", seed, size)

    by_class = {c: [s for s, lab in labeled if lab == c] for c in (0, 1)}
    for c, members in by_class.items():
        if not members:
            raise BalanceError(f"class {c} absent from the labeled pool")
    parts = {tag: {} for tag in SPLITS[1:]}
    for c, members in by_class.items():
        order = rng.permutation(len(members))
        start = 0
        for tag, count in zip(SPLITS[1:], _split_counts(len(members), ratios)):
            parts[tag][c] = [members[i] for i in order[start : start + count]]
            start += count

    out = [pretrain]
    for tag in SPLITS[1:]:
        k = min(len(parts[tag][0]), len(parts[tag][1]))
        chosen = [Snippet(s.bands, c, s.provenance) for c in (0, 1) for s in parts[tag][c][:k]]
        chosen = [chosen[i] for i in rng.permutation(len(chosen))]
        out.append(from_snippets(chosen, tag, seed, size))
    return tuple(out)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subsample_labels(dataset: SnippetDataset, fraction: float, seed: int = 0) -> SnippetDataset:
    """Draw round-half-up(fraction * n / 2) examples per class, kept in original order."""
    if not 0 < fraction <= 1:
        raise ConfigurationError("fraction must lie in (0, 1]")
    if np.any(dataset.labels < 0):
        raise ConfigurationError("subsample_labels needs a labeled split")
    if fraction == 1.0:
        return dataset
    per_class = _round_half_up(fraction * len(dataset) / 2)
    if per_class == 0:
        raise InsufficientLabelsError(f"fraction {fraction} of {len(dataset)} leaves no examples per class")
    rng = np.random.default_rng(seed)
    keep = []
    for c in (0, 1):
        idx = np.flatnonzero(dataset.labels == c)
        if len(idx) < per_class:
            raise InsufficientLabelsError(f"class {c} has {len(idx)} examples, need {per_class}")
        keep.append(rng.choice(idx, size=per_class, replace=False))
    return dataset.take(np.sort(np.concatenate(keep)))


@dataclass(frozen=True)
class ShardSpec:
    num_shards: int = 1
    shard_id: int = 0
    epoch_seed: int = 0

    def __post_init__(self):
        if self.num_shards < 1 or not 0 <= self.shard_id < self.num_shards:
            raise ConfigurationError(f"invalid shard {self.shard_id} of {self.num_shards}")


def shard_indices(n: int, spec: ShardSpec) -> np.ndarray:
    perm = np.random.default_rng(spec.epoch_seed).permutation(n)
    return perm[spec.shard_id :: spec.num_shards]


def shard(dataset: SnippetDataset, spec: ShardSpec) -> SnippetDataset:
    """Seeded permutation followed by strided assignment to ``spec.shard_id``."""
    return dataset.take(shard_indices(len(dataset), spec))


# --- SSBN1 container -------------------------------------------------------


def _write_metadata(buf: io.BytesIO, metadata: dict) -> None:
    text = json.dumps(metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def read(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))

    def header(self, kind: int) -> None:
        if self.read(len(MAGIC), "magic") != MAGIC:
            raise FormatError(f"{self.path}: bad magic, not an SSBN1 file")
        version, found = self.unpack("<BB", "version")
        if version != VERSION:
            raise FormatError(f"{self.path}: unsupported version {version}")
        if found != kind:
            raise FormatError(f"{self.path}: kind {found}, expected {kind}")

    def metadata(self) -> dict:
        (length,) = self.unpack("<I", "metadata length")
        try:
            meta = json.loads(self.read(length, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{self.path}: corrupt metadata block ({exc})") from None
        if self.pos != len(self.raw):
            raise FormatError(f"{self.path}: {len(self.raw) - self.pos} trailing bytes")
        return meta


def write_arrays(path, arrays: np.ndarray, labels: np.ndarray, metadata: dict) -> None:
    arrays = np.ascontiguousarray(arrays, dtype="<f4")
    n, bands, height, width = arrays.shape
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BB", VERSION, KIND_ARRAYS))
    buf.write(struct.pack("<IIIIB", n, bands, height, width, 1))
    buf.write(arrays.tobytes())
    lab = np.where(np.asarray(labels) < 0, UNLABELED, labels).astype(np.uint8)
    buf.write(lab.tobytes())
    _write_metadata(buf, metadata)
    Path(path).write_bytes(buf.getvalue())


def read_arrays(path) -> tuple[np.ndarray, np.ndarray, dict]:
    r = _Reader(Path(path).read_bytes(), path)
    r.header(KIND_ARRAYS)
    n, bands, height, width, dtype = r.unpack("<IIIIB", "array header")
    if dtype != 1:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    count = n * bands * height * width
    arrays = np.frombuffer(r.read(4 * count, "array data"), dtype="<f4").reshape(n, bands, height, width)
    raw_labels = np.frombuffer(r.read(n, "labels"), dtype=np.uint8)
    labels = raw_labels.astype(np.int64)
    labels[raw_labels == UNLABELED] = -1
    return arrays.astype(np.float32), labels, r.metadata()


def save_dataset(dataset: SnippetDataset, path) -> None:
    meta = {
        "split_tag": dataset.split_tag,
        "seed": dataset.seed,
        "snippet_size": dataset.snippet_size,
        "band_count": 2,
        "provenance": [list(p) for p in dataset.provenance],
    }
    write_arrays(path, dataset.images, dataset.labels, meta)


def load_dataset(path) -> SnippetDataset:
    images, labels, meta = read_arrays(path)
    for key in ("split_tag", "seed", "snippet_size", "band_count"):
        if key not in meta:
            raise FormatError(f"{path}: metadata lacks {key!r}")
    if meta["band_count"] != images.shape[1]:
        raise FormatError(f"{path}: band_count {meta['band_count']} != stored bands {images.shape[1]}")
    if len(images) and meta["snippet_size"] != images.shape[-1]:
        raise FormatError(f"{path}: snippet_size {meta['snippet_size']} != stored {images.shape[-1]}")
    return SnippetDataset(images, labels, meta["split_tag"], meta["seed"], meta.get("provenance", []))


def save_scene(scene: Scene, path) -> None:
    truth = [{"center": list(t.center), "kind": t.kind, "extent": t.extent} for t in scene.truth]
    write_arrays(path, scene.image.stack()[None], np.array([-1]), {"scene_id": scene.scene_id, "truth": truth})


def load_scene(path) -> Scene:
    arrays, _, meta = read_arrays(path)
    if arrays.shape[:2] != (1, 2):
        raise FormatError(f"{path}: expected one two-band scene, got {arrays.shape[:2]}")
    truth = [GroundTruthObject(tuple(t["center"]), t["kind"], t["extent"]) for t in meta["truth"]]
    image = MultibandImage(arrays[0, 0].astype(np.float64), arrays[0, 1].astype(np.float64))
    return Scene(image, truth, meta["scene_id"])


def write_tensors(path, tensors: dict[str, np.ndarray], metadata: dict) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BB", VERSION, KIND_TENSORS))
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        value = np.array(value, dtype="<f4", order="C")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(value.tobytes())
    _write_metadata(buf, metadata)
    Path(path).write_bytes(buf.getvalue())


def read_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(Path(path).read_bytes(), path)
    r.header(KIND_TENSORS)
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (length,) = r.unpack("<H", "name length")
        name = r.read(length, "tensor name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"ndim of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.read(4 * size, f"data of {name}"), dtype="<f4").reshape(shape).astype(np.float32)
    return tensors, r.metadata()
