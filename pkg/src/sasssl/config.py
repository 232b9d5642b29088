"""Run configuration as flat ``section.key = value`` text.

Every setting has a default; ``dump_config(RunConfig())`` writes them all
and ``parse_config`` reads any subset back.  Lines starting with ``#`` and
blank lines are ignored.  Tuples are comma separated; ``none`` clears an
optional value.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .augment import AugmentPolicy
from .errors import ConfigurationError
from .nncore import EncoderConfig, HeadConfig
from .probe import ProbeConfig
from .rxdetect import RxConfig
from .ssl import SSLConfig
from .synthgen import SceneConfig
from .tsne import TsneConfig

MODEL_KINDS = ("moco", "byol")


@dataclass(frozen=True)
class DataConfig:
    n_scenes: int = 200
    n_labeled_scenes: int = 70
    match_radius: float = 16.0
    # Labeled chips kept per class before splitting; None keeps all.
    per_class_cap: int | None = 500
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    # Side of the scene window resampled to each snippet; None = snippet size.
    source_extent: int | None = None


@dataclass(frozen=True)
class MatrixConfig:
    models: tuple[str, ...] = MODEL_KINDS
    fractions: tuple[float, ...] = (0.01, 0.05, 1.0)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "run"
    synth: SceneConfig = SceneConfig(n_objects=8, n_clutter=8)
    rx: RxConfig = RxConfig()
    data: DataConfig = DataConfig()
    augment: AugmentPolicy = AugmentPolicy()
    encoder: EncoderConfig = EncoderConfig()
    head: HeadConfig = HeadConfig()
    ssl: SSLConfig = SSLConfig()
    probe: ProbeConfig = ProbeConfig()
    tsne: TsneConfig = TsneConfig()
    matrix: MatrixConfig = MatrixConfig()

    def validate(self) -> None:
        self.synth.validate()
        self.rx.validate()
        self.encoder.validate()
        self.head.validate()
        if self.encoder.input_size != self.synth.snippet_size:
            raise ConfigurationError(
                f"encoder.input_size {self.encoder.input_size} != synth.snippet_size {self.synth.snippet_size}"
            )
        if not self.matrix.models or not self.matrix.fractions:
            raise ConfigurationError("experiment matrix is empty")
        for m in self.matrix.models:
            if m not in MODEL_KINDS:
                raise ConfigurationError(f"unknown model kind {m!r}")
        for f in self.matrix.fractions:
            if not 0 < f <= 1:
                raise ConfigurationError(f"label fraction {f} outside (0, 1]")
        d = self.data
        if not 0 <= d.n_labeled_scenes <= d.n_scenes:
            raise ConfigurationError("data.n_labeled_scenes must lie in [0, data.n_scenes]")
        if len(d.split_ratios) != 3 or abs(sum(d.split_ratios) - 1) > 1e-9 or min(d.split_ratios) < 0:
            raise ConfigurationError("data.split_ratios must be three nonnegative values summing to 1")


# Sections map to RunConfig attributes.  SSL keys specific to one method live
# under ssl.moco.* / ssl.byol.*; the run seed is global, so per-module seed
# fields are not exposed.
_SSL_ALIASES = {
    "moco.batch_size": "moco_batch_size",
    "moco.queue_size": "queue_size",
    "moco.temperature": "temperature",
    "moco.momentum": "momentum",
    "byol.batch_size": "byol_batch_size",
    "byol.ema_rate": "ema_rate",
}
_HIDDEN = {("synth", "seed"), ("probe", "seed"), ("probe", "label_fraction")}


def _section_keys(section: str, obj) -> dict[str, str]:
    """External key -> dataclass field name for one section."""
    names = [f.name for f in fields(obj) if (section, f.name) not in _HIDDEN]
    if section == "ssl":
        inverse = {v: k for k, v in _SSL_ALIASES.items()}
        return {inverse.get(n, n): n for n in names}
    return {n: n for n in names}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _scalar(text: str, kind: str, key: str):
    text = text.strip()
    try:
        if kind == "bool":
            if text.lower() not in ("true", "false"):
                raise ValueError
            return text.lower() == "true"
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {text!r} as {kind}") from None


def _parse_value(text: str, annotation: str, key: str):
    text = text.strip()
    if text.lower() == "none":
        if "None" not in annotation:
            raise ConfigurationError(f"{key} cannot be none")
        return None
    if annotation.startswith("tuple"):
        inner = "float" if "float" in annotation else "int" if "int" in annotation else "str"
        return tuple(_scalar(part, inner, key) for part in text.split(",") if part.strip())
    for kind in ("bool", "int", "float"):
        if annotation.startswith(kind):
            return _scalar(text, kind, key)
    return text


def dump_config(config: RunConfig) -> str:
    lines = [f"seed = {config.seed}", f"out_dir = {config.out_dir}"]
    for f in fields(config):
        if f.name in ("seed", "out_dir"):
            continue
        section = getattr(config, f.name)
        for key, name in _section_keys(f.name, section).items():
            lines.append(f"{f.name}.{key} = {_format(getattr(section, name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    config = base or RunConfig()
    sections = {f.name: getattr(config, f.name) for f in fields(config) if f.name not in ("seed", "out_dir")}
    updates: dict[str, dict] = {name: {} for name in sections}
    top: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "seed":
            top["seed"] = _scalar(value, "int", key)
            continue
        if key == "out_dir":
            top["out_dir"] = value
            continue
        section, _, rest = key.partition(".")
        if section not in sections:
            raise ConfigurationError(f"line {lineno}: unknown section in {key!r}")
        mapping = _section_keys(section, sections[section])
        if rest not in mapping:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        name = mapping[rest]
        annotation = {f.name: str(f.type) for f in fields(sections[section])}[name]
        updates[section][name] = _parse_value(value, annotation, key)
    try:
        new_sections = {name: replace(sections[name], **changes) for name, changes in updates.items() if changes}
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
    return replace(config, **top, **new_sections)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
