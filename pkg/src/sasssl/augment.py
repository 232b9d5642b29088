"""Seeded augmentations on 2 x S x S snippets.

Every function is a pure function of (input, policy, seed).  Functions
accept either a :class:`Snippet` or a bare ``(2, S, S)`` array and return
the same kind.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .rxdetect import Snippet, resize_bilinear


@dataclass(frozen=True)
class AugmentPolicy:
    speckle_factor_range: tuple[float, float] = (0.7, 1.3)
    flip_probability: float = 0.5
    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    enable_crop: bool = True

    def __post_init__(self):
        lo, hi = self.speckle_factor_range
        if not 0 < lo <= hi:
            raise ConfigurationError("speckle_factor_range must satisfy 0 < lo <= hi")
        if not 0 <= self.flip_probability <= 1:
            raise ConfigurationError("flip_probability must lie in [0, 1]")
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ConfigurationError("crop_scale_range must satisfy 0 < lo <= hi <= 1")


IDENTITY_POLICY = AugmentPolicy((1.0, 1.0), 0.0, (1.0, 1.0), False)


def _bands(x):
    return x.bands if isinstance(x, Snippet) else np.asarray(x)


def _wrap(like, bands):
    return replace(like, bands=bands) if isinstance(like, Snippet) else bands


def speckle_noise(snippet, policy: AugmentPolicy, seed: int):
    """Multiply every pixel of both bands by one factor drawn uniformly from the range."""
    lo, hi = policy.speckle_factor_range
    factor = np.random.default_rng(seed).uniform(lo, hi) if hi > lo else lo
    return _wrap(snippet, _bands(snippet) * factor)


def hflip(snippet):
    return _wrap(snippet, _bands(snippet)[..., ::-1].copy())


def _crop_side(size: int, lo: float, hi: float, u: float) -> int:
    sides = np.arange(1, size + 1)
    area = (sides / size) ** 2
    valid = sides[(area >= lo - 1e-12) & (area <= hi + 1e-12)]
    target = lo + u * (hi - lo)
    if len(valid) == 0:
        return int(sides[np.argmin(np.abs(area - target))])
    return int(valid[np.argmin(np.abs((valid / size) ** 2 - target))])


def random_resized_crop(snippet, policy: AugmentPolicy, seed: int):
    """Square crop with area fraction in ``crop_scale_range``, resized back to S x S."""
    bands = _bands(snippet)
    size = bands.shape[-1]
    rng = np.random.default_rng(seed)
    side = _crop_side(size, *policy.crop_scale_range, rng.random())
    r0 = int(rng.integers(0, size - side + 1))
    c0 = int(rng.integers(0, size - side + 1))
    return _wrap(snippet, resize_bilinear(bands[:, r0 : r0 + side, c0 : c0 + side], size))


def augment_view(snippet, policy: AugmentPolicy, seed: int):
    """crop (if enabled) -> flip with flip_probability -> speckle."""
    crop_seed, flip_seed, speckle_seed = np.random.SeedSequence(seed).generate_state(3)
    out = snippet
    if policy.enable_crop:
        out = random_resized_crop(out, policy, int(crop_seed))
    if np.random.default_rng(int(flip_seed)).random() < policy.flip_probability:
        out = hflip(out)
    return speckle_noise(out, policy, int(speckle_seed))


def two_views(snippet, policy: AugmentPolicy, seed: int):
    first, second = np.random.SeedSequence(seed).spawn(2)
    return (
        augment_view(snippet, policy, int(first.generate_state(1)[0])),
        augment_view(snippet, policy, int(second.generate_state(1)[0])),
    )


def probe_flip(seed: int) -> bool:
    return bool(np.random.default_rng(seed).random() < 0.5)


def probe_augment(snippet, seed: int):
    """Horizontal flip with probability 0.5; nothing else."""
    return hflip(snippet) if probe_flip(seed) else snippet
