"""Synthetic two-band seafloor scenes with speckle, bright objects and clutter.

Background intensity follows the fully developed speckle model: the complex
reflection is circular Gaussian, so intensity is exponential with the local
mean reflectivity.  The HF band reuses the LF complex field mixed with an
independent one, which keeps exponential marginals while lowering the
inter-band intensity correlation to ``1 - band_decorrelation``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class SceneConfig:
    width: int = 512
    height: int = 512
    background_level: float = 1.0
    n_objects: int = 6
    n_clutter: int = 6
    object_contrast: float = 6.0
    shadow_depth: float = 0.1
    band_decorrelation: float = 0.5
    seed: int = 0
    snippet_size: int = 64
    # Semi-major axis ranges in pixels.
    object_extent: tuple[float, float] = (6.0, 10.0)
    clutter_extent: tuple[float, float] = (3.0, 6.0)
    # Clutter highlight contrast is drawn from this fraction of object_contrast.
    clutter_contrast: tuple[float, float] = (0.4, 0.9)
    # Shadow length as a multiple of the object's semi-major axis.
    shadow_length: float = 2.0

    def validate(self) -> None:
        if self.width < 4 * self.snippet_size or self.height < 4 * self.snippet_size:
            raise ConfigurationError(
                f"scene {self.width}x{self.height} smaller than 4x snippet size {self.snippet_size}"
            )
        if self.background_level <= 0:
            raise ConfigurationError("background_level must be > 0")
        if self.n_objects < 0 or self.n_clutter < 0:
            raise ConfigurationError("object counts must be >= 0")
        if not self.object_contrast > 1:
            raise ConfigurationError("object_contrast must be > 1")
        if not 0 <= self.shadow_depth < 1:
            raise ConfigurationError("shadow_depth must lie in [0, 1)")
        if not 0 <= self.band_decorrelation <= 1:
            raise ConfigurationError("band_decorrelation must lie in [0, 1]")
        for name in ("object_extent", "clutter_extent", "clutter_contrast"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigurationError(f"{name} must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class MultibandImage:
    lf: np.ndarray
    hf: np.ndarray

    def __post_init__(self):
        if self.lf.ndim != 2 or self.lf.shape != self.hf.shape:
            raise ConfigurationError(f"band shapes differ: {self.lf.shape} vs {self.hf.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.lf.shape

    def stack(self) -> np.ndarray:
        return np.stack([self.lf, self.hf])


@dataclass(frozen=True)
class GroundTruthObject:
    center: tuple[int, int]  # (row, col)
    kind: str  # "object" or "clutter"
    extent: float


@dataclass(frozen=True)
class Scene:
    image: MultibandImage
    truth: list[GroundTruthObject] = field(default_factory=list)
    scene_id: int = 0


def _speckle_pair(rng: np.random.Generator, shape, decorrelation: float):
    def complex_field():
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    z_lf = complex_field()
    z_new = complex_field()
    z_hf = np.sqrt(1.0 - decorrelation) * z_lf + np.sqrt(decorrelation) * z_new
    return np.abs(z_lf) ** 2, np.abs(z_hf) ** 2


def _place_centers(rng, config: SceneConfig, count: int) -> list[tuple[int, int]]:
    margin = config.snippet_size // 2
    min_sep = config.snippet_size / 2
    centers: list[tuple[int, int]] = []
    attempts = 0
    while len(centers) < count:
        attempts += 1
        r = int(rng.integers(margin, config.height - margin))
        c = int(rng.integers(margin, config.width - margin))
        if attempts < 10_000 and any(np.hypot(r - r0, c - c0) < min_sep for r0, c0 in centers):
            continue
        centers.append((r, c))
    return centers


def _ellipse_mask(rows, cols, center, a, b, theta):
    dr = rows - center[0]
    dc = cols - center[1]
    u = dc * np.cos(theta) + dr * np.sin(theta)
    v = -dc * np.sin(theta) + dr * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_scene(config: SceneConfig, scene_id: int = 0) -> Scene:
    """Render one speckled two-band scene and its ground truth.

    Identical configs (seed included) produce bit-identical scenes.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    shape = (config.height, config.width)
    rows, cols = np.mgrid[0 : config.height, 0 : config.width]
    reflectivity = np.ones(shape)

    centers = _place_centers(rng, config, config.n_objects + config.n_clutter)
    truth = []
    for i, center in enumerate(centers):
        is_object = i < config.n_objects
        lo, hi = config.object_extent if is_object else config.clutter_extent
        a = rng.uniform(lo, hi)
        b = a * rng.uniform(0.5, 1.0)
        theta = rng.uniform(0.0, np.pi)
        if is_object:
            contrast = config.object_contrast
        else:
            contrast = config.object_contrast * rng.uniform(*config.clutter_contrast)
        # Bounding box keeps mask evaluation local.
        r0, r1 = max(center[0] - int(a) - 2, 0), min(center[0] + int(a) + 3, config.height)
        c0 = max(center[1] - int(a) - 2, 0)
        c1 = min(center[1] + int(a * (1 + config.shadow_length)) + 3, config.width)
        sub_r, sub_c = rows[r0:r1, c0:c1], cols[r0:r1, c0:c1]
        highlight = _ellipse_mask(sub_r, sub_c, center, a, b, theta)
        window = reflectivity[r0:r1, c0:c1]
        if is_object:
            # Shadow: rectangle trailing the object in +column (down-range) direction.
            half_h = max(abs(a * np.sin(theta)), abs(b * np.cos(theta)))
            shadow = (
                (np.abs(sub_r - center[0]) <= half_h)
                & (sub_c > center[1])
                & (sub_c <= center[1] + a * config.shadow_length + half_h)
                & ~highlight
            )
            window[shadow] = config.shadow_depth
        window[highlight] = contrast
        truth.append(GroundTruthObject(center=center, kind="object" if is_object else "clutter", extent=float(a)))

    speckle_lf, speckle_hf = _speckle_pair(rng, shape, config.band_decorrelation)
    base = config.background_level * reflectivity
    image = MultibandImage(lf=base * speckle_lf, hf=base * speckle_hf)
    return Scene(image=image, truth=truth, scene_id=scene_id)


def derive_seed(seed: int, index: int) -> int:
    """Deterministic 63-bit child seed for item ``index`` of a seeded collection."""
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index]).generate_state(1, np.uint64)[0] >> 1)


def scene_corpus(config: SceneConfig, n_scenes: int, seed: int, first_id: int = 0) -> list[Scene]:
    if n_scenes < 0:
        raise ConfigurationError("n_scenes must be >= 0")
    scenes = []
    for i in range(n_scenes):
        cfg = replace(config, seed=derive_seed(seed, i))
        scenes.append(generate_scene(cfg, scene_id=first_id + i))
    return scenes

