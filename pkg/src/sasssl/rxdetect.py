"""Reed-Xiaoli anomaly detection on two-band images and snippet chipping.

The RX statistic of a pixel is the squared Mahalanobis distance of its
(LF, HF) intensity vector from background mean/covariance estimates, taken
either over the whole image or over a square annulus around the pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, InputError, NumericalError
from .synthgen import GroundTruthObject, MultibandImage, Scene


@dataclass(frozen=True)
class RxConfig:
    background_mode: str = "local"  # "local" annulus or "global"
    guard_radius: int = 10
    background_radius: int = 24
    # None selects 1e-6 * tr(cov) / 2 per estimate.
    regularization_epsilon: float | None = None
    score_threshold: float = 60.0
    nms_radius: float = 32.0
    # Box-filter half width applied to each band before scoring (multi-look
    # averaging); 0 scores raw pixels.
    smoothing_radius: int = 2

    def validate(self, n_bands: int = 2) -> None:
        if self.background_mode not in ("local", "global"):
            raise ConfigurationError(f"unknown background_mode {self.background_mode!r}")
        if self.regularization_epsilon is not None and self.regularization_epsilon < 0:
            raise ConfigurationError("regularization_epsilon must be >= 0")
        if self.score_threshold <= 0:
            raise ConfigurationError("score_threshold must be > 0")
        if self.smoothing_radius < 0 or self.nms_radius < 0:
            raise ConfigurationError("radii must be >= 0")
        if self.background_mode == "local":
            if not self.background_radius > self.guard_radius >= 0:
                raise ConfigurationError("need background_radius > guard_radius >= 0")
            annulus = (2 * self.background_radius + 1) ** 2 - (2 * self.guard_radius + 1) ** 2
            if annulus < 3 * n_bands:
                raise ConfigurationError(f"annulus holds {annulus} pixels, need >= {3 * n_bands}")


@dataclass(frozen=True)
class Detection:
    center: tuple[int, int]
    score: float


@dataclass(frozen=True)
class Snippet:
    """A 2 x S x S stacked chip (band 0 = LF, band 1 = HF)."""

    bands: np.ndarray
    label: int | None = None
    provenance: tuple[int, int, int] | None = None  # (scene id, row, col)

    def __post_init__(self):
        b = self.bands
        if b.ndim != 3 or b.shape[0] != 2 or b.shape[1] != b.shape[2]:
            raise InputError(f"snippet must be 2xSxS, got {b.shape}")


def _box_sums(arr: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Window sums and pixel counts over clamped (2r+1)^2 windows."""
    h, w = arr.shape
    ii = np.zeros((h + 1, w + 1))
    ii[1:, 1:] = arr.cumsum(0).cumsum(1)
    r = np.arange(h)
    c = np.arange(w)
    r0 = np.clip(r - radius, 0, h)[:, None]
    r1 = np.clip(r + radius + 1, 0, h)[:, None]
    c0 = np.clip(c - radius, 0, w)[None, :]
    c1 = np.clip(c + radius + 1, 0, w)[None, :]
    sums = ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]
    counts = (r1 - r0) * (c1 - c0)
    return sums, counts.astype(float)


def _smooth(band: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return band
    sums, counts = _box_sums(band, radius)
    return sums / counts


def _quadratic_form(d0, d1, c00, c01, c11, epsilon):
    a = c00 + epsilon
    d = c11 + epsilon
    det = a * d - c01 * c01
    if np.any(~np.isfinite(det)) or np.any(det <= 0):
        raise NumericalError("background covariance is singular; raise regularization_epsilon")
    return (d0 * d0 * d - 2.0 * d0 * d1 * c01 + d1 * d1 * a) / det


def rx_score_map(image: MultibandImage, config: RxConfig = RxConfig()) -> np.ndarray:
    config.validate()
    x0 = _smooth(np.asarray(image.lf, dtype=np.float64), config.smoothing_radius)
    x1 = _smooth(np.asarray(image.hf, dtype=np.float64), config.smoothing_radius)
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(x1))):
        raise InputError("image contains non-finite values")

    if config.background_mode == "global":
        mu0, mu1 = x0.mean(), x1.mean()
        c00 = np.mean((x0 - mu0) ** 2)
        c11 = np.mean((x1 - mu1) ** 2)
        c01 = np.mean((x0 - mu0) * (x1 - mu1))
    else:
        # Annulus moments = outer window moments minus guard window moments.
        def moments(radius):
            s0, n = _box_sums(x0, radius)
            s1, _ = _box_sums(x1, radius)
            s00, _ = _box_sums(x0 * x0, radius)
            s11, _ = _box_sums(x1 * x1, radius)
            s01, _ = _box_sums(x0 * x1, radius)
            return np.stack([n, s0, s1, s00, s11, s01])

        n, s0, s1, s00, s11, s01 = moments(config.background_radius) - moments(config.guard_radius)
        mu0, mu1 = s0 / n, s1 / n
        c00 = s00 / n - mu0 * mu0
        c11 = s11 / n - mu1 * mu1
        c01 = s01 / n - mu0 * mu1
        # Cancellation can leave tiny negative variances on flat regions.
        c00 = np.maximum(c00, 0.0)
        c11 = np.maximum(c11, 0.0)

    if config.regularization_epsilon is None:
        epsilon = 1e-6 * (c00 + c11) / 2.0
    else:
        epsilon = config.regularization_epsilon
    score = _quadratic_form(x0 - mu0, x1 - mu1, c00, c01, c11, epsilon)
    return np.maximum(score, 0.0)


def detect(score_map: np.ndarray, config: RxConfig = RxConfig()) -> list[Detection]:
    """Greedy non-max suppression over 3x3 local maxima above threshold.

    Candidates are visited by descending score, ties by (row, col); a
    candidate survives if every accepted detection is at least
    ``nms_radius`` away.
    """
    score_map = np.asarray(score_map, dtype=np.float64)
    if not np.all(np.isfinite(score_map)):
        raise InputError("score map contains non-finite values")
    peaks = (score_map >= ndimage.maximum_filter(score_map, size=3, mode="nearest")) & (
        score_map > config.score_threshold
    )
    rr, cc = np.nonzero(peaks)
    scores = score_map[rr, cc]
    order = np.lexsort((cc, rr, -scores))
    kept: list[Detection] = []
    kept_xy = np.empty((0, 2))
    for i in order:
        p = np.array([rr[i], cc[i]], dtype=float)
        if len(kept) and np.min(np.hypot(*(kept_xy - p).T)) < config.nms_radius:
            continue
        kept.append(Detection(center=(int(rr[i]), int(cc[i])), score=float(scores[i])))
        kept_xy = np.vstack([kept_xy, p])
    return kept


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Bilinear weights mapping n_in samples to n_out (pixel-center aligned)."""
    if n_out == n_in:
        return np.eye(n_out)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_bilinear(arr: np.ndarray, size: int) -> np.ndarray:
    """Resize the last two axes of ``arr`` to ``size x size``."""
    wy = _interp_matrix(size, arr.shape[-2])
    wx = _interp_matrix(size, arr.shape[-1])
    return wy @ arr @ wx.T


def _crop_bounds(center: int, extent: int, length: int) -> tuple[int, int]:
    start = center - extent // 2
    if extent <= length:
        start = min(max(start, 0), length - extent)
    return start, start + extent


def extract_snippet(
    image: MultibandImage,
    center: tuple[int, int],
    snippet_size: int,
    source_extent: int | None = None,
    label: int | None = None,
    scene_id: int = 0,
) -> Snippet:
    """Crop a window around ``center``, resize each band to S x S and stack.

    Windows are shifted to stay inside the image; zero padding is used only
    when the window is larger than the image itself.
    """
    if snippet_size < 8 or snippet_size % 2:
        raise ConfigurationError("snippet_size must be even and >= 8")
    extent = snippet_size if source_extent is None else int(source_extent)
    h, w = image.shape
    r, c = center
    if not (0 <= r < h and 0 <= c < w):
        raise InputError(f"center {center} outside image of shape {(h, w)}")
    stack = image.stack().astype(np.float64)
    r0, r1 = _crop_bounds(r, extent, h)
    c0, c1 = _crop_bounds(c, extent, w)
    window = np.zeros((2, extent, extent))
    sr0, sr1 = max(r0, 0), min(r1, h)
    sc0, sc1 = max(c0, 0), min(c1, w)
    window[:, sr0 - r0 : sr1 - r0, sc0 - c0 : sc1 - c0] = stack[:, sr0:sr1, sc0:sc1]
    bands = resize_bilinear(window, snippet_size)
    return Snippet(bands=bands, label=label, provenance=(scene_id, int(r), int(c)))


def label_detections(
    detections: list[Detection], truth: list[GroundTruthObject], match_radius: float
) -> list[tuple[Detection, int]]:
    """Nearest-first one-to-one matching of detections to true objects."""
    if match_radius <= 0:
        raise ConfigurationError("match_radius must be > 0")
    objects = [t for t in truth if t.kind == "object"]
    pairs = []
    for i, det in enumerate(detections):
        for j, obj in enumerate(objects):
            dist = float(np.hypot(det.center[0] - obj.center[0], det.center[1] - obj.center[1]))
            if dist <= match_radius:
                pairs.append((dist, i, j))
    pairs.sort()
    labels = [0] * len(detections)
    used: set[int] = set()
    for _, i, j in pairs:
        if labels[i] or j in used:
            continue
        labels[i] = 1
        used.add(j)
    return list(zip(detections, labels))


def chip_scene(
    scene: Scene,
    config: RxConfig,
    snippet_size: int,
    source_extent: int | None = None,
    match_radius: float | None = None,
) -> list[Snippet]:
    """Run detection on a scene and return one snippet per detection.

    When ``match_radius`` is given each snippet carries its truth label,
    otherwise snippets are unlabeled.
    """
    detections = detect(rx_score_map(scene.image, config), config)
    if match_radius is None:
        labeled = [(d, None) for d in detections]
    else:
        labeled = label_detections(detections, scene.truth, match_radius)
    return [
        extract_snippet(scene.image, d.center, snippet_size, source_extent, label=lab, scene_id=scene.scene_id)
        for d, lab in labeled
    ]
