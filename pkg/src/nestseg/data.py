"""Synthetic nested-class scenes, augmentation and fold assignment.

Level-1 blobs ("cells") sit on background; each contains level-2 blobs
("nuclei") and so on down to level ``m``.  Every child blob is kept at least
``margin`` pixels (Chebyshev) inside its parent and every top-level blob at
least ``border`` pixels from the image edge, so no two 4-adjacent pixels
ever differ by more than one level.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError


@dataclass(frozen=True)
class SceneSpec:
    """Scene parameters.

    ``radius_ranges[0]`` is a fraction of the image size; deeper entries are
    fractions of the parent blob's radius.
    """

    image_size: tuple = (64, 64)
    m: int = 2
    blobs_per_image: tuple = (2, 4)
    children_per_blob: tuple = (1, 2)
    radius_ranges: tuple = ((0.15, 0.25), (0.25, 0.45))
    intensity_means: tuple = (0.85, 0.55, 0.30)
    noise_sigma: float = 0.08
    jitter: float = 2.0
    margin: int = 2
    border: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"m = {self.m}: requires m >= 1")
        if len(self.radius_ranges) != self.m:
            raise ConfigError(f"radius_ranges needs one (lo, hi) pair per level ({self.m}), got {len(self.radius_ranges)}")
        if len(self.intensity_means) != self.m + 1:
            raise ConfigError(f"intensity_means needs m + 1 = {self.m + 1} values")
        for level, (lo, hi) in enumerate(self.radius_ranges, start=1):
            if not 0 < lo <= hi:
                raise ConfigError(f"radius range for level {level} must satisfy 0 < lo <= hi")
            cap = 0.5 if level == 1 else 1.0
            if hi >= cap:
                raise ConfigError(f"radius range for level {level} must stay below {cap} so radii decrease with depth")
        means = sorted(self.intensity_means)
        gap = min(b - a for a, b in zip(means, means[1:]))
        if gap < 2 * self.noise_sigma:
            raise ConfigError(f"intensity means must differ by >= 2 * noise_sigma = {2 * self.noise_sigma:g}")
        if self.blobs_per_image[0] < 1 or self.blobs_per_image[1] < self.blobs_per_image[0]:
            raise ConfigError("blobs_per_image must be a range (lo, hi) with 1 <= lo <= hi")
        if self.children_per_blob[0] < 1 or self.children_per_blob[1] < self.children_per_blob[0]:
            raise ConfigError("children_per_blob must be a range (lo, hi) with 1 <= lo <= hi")

    def to_dict(self):
        return asdict(self)


class Sample(NamedTuple):
    image: np.ndarray  # [1, H, W] float64 in [0, 1]
    label: np.ndarray  # [H, W] uint8 in 0..m


class InfeasibleSpecError(ValueError):
    pass


def blob_mask(shape, center, radius, rng=None, jitter=0.0, ecc=0.0, angle=0.0):
    """Rasterise a perturbed ellipse.

    The boundary radius at polar angle ``phi`` is the ellipse radius plus a
    random low-order harmonic wiggle of amplitude at most ``jitter`` pixels.
    """
    yy, xx = np.mgrid[: shape[0], : shape[1]].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    phi = np.arctan2(dy, dx)
    dist = np.hypot(dy, dx)
    a, b = radius * (1 + ecc), radius * (1 - ecc)
    rel = phi - angle
    r = a * b / np.sqrt((b * np.cos(rel)) ** 2 + (a * np.sin(rel)) ** 2)
    if jitter > 0 and rng is not None:
        amps = rng.uniform(-1, 1, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        wiggle = sum(amps[k] * np.cos((k + 2) * phi + phases[k]) for k in range(3))
        r = r + jitter * wiggle / max(np.abs(amps).sum(), 1e-12)
    return dist <= r


def _square(margin):
    return np.ones((2 * margin + 1, 2 * margin + 1), dtype=bool)


def _place_children(rng, spec, parent_mask, parent_radius, level, masks):
    lo, hi = spec.radius_ranges[level - 1]
    n = int(rng.integers(spec.children_per_blob[0], spec.children_per_blob[1] + 1))
    # a child must sit at least `margin` pixels inside the parent
    safe = ndimage.binary_erosion(parent_mask, structure=_square(spec.margin))
    occupied = np.zeros_like(parent_mask)
    ys, xs = np.nonzero(safe)
    if len(ys) == 0:
        return False
    for _ in range(n):
        placed = False
        for _attempt in range(100):
            r = parent_radius * rng.uniform(lo, hi)
            k = int(rng.integers(len(ys)))
            center = (ys[k] + rng.uniform(-0.5, 0.5), xs[k] + rng.uniform(-0.5, 0.5))
            jitter = min(spec.jitter, 0.25 * r)
            mask = blob_mask(parent_mask.shape, center, r, rng, jitter, rng.uniform(0, 0.2), rng.uniform(0, np.pi))
            if not mask.any() or not np.all(safe[mask]):
                continue
            if (ndimage.binary_dilation(mask) & occupied).any():
                continue
            # grandchildren go to scratch masks so a rejected candidate leaves no orphans
            inner = {k: np.zeros_like(parent_mask) for k in range(level + 1, spec.m + 1)}
            if level < spec.m and not _place_children(rng, spec, mask, r, level + 1, inner):
                continue
            occupied |= mask
            masks[level] |= mask
            for k, cm in inner.items():
                masks[k] |= cm
            placed = True
            break
        if not placed:
            return False
    return True


def _layout(rng, spec):
    H, W = spec.image_size
    size = min(H, W)
    lo, hi = spec.radius_ranges[0]
    n = int(rng.integers(spec.blobs_per_image[0], spec.blobs_per_image[1] + 1))
    masks = {k: np.zeros((H, W), dtype=bool) for k in range(1, spec.m + 1)}
    inner = np.zeros((H, W), dtype=bool)
    b = spec.border
    inner[b:H - b, b:W - b] = True
    for _ in range(n):
        placed = False
        for _attempt in range(100):
            r = size * rng.uniform(lo, hi)
            center = (rng.uniform(r, H - 1 - r), rng.uniform(r, W - 1 - r))
            mask = blob_mask((H, W), center, r, rng, spec.jitter, rng.uniform(0, 0.2), rng.uniform(0, np.pi))
            if not mask.any() or not np.all(inner[mask]):
                continue
            if (ndimage.binary_dilation(mask) & masks[1]).any():
                continue
            child_masks = {k: np.zeros((H, W), dtype=bool) for k in range(2, spec.m + 1)}
            if spec.m >= 2 and not _place_children(rng, spec, mask, r, 2, child_masks):
                continue
            masks[1] |= mask
            for k, cm in child_masks.items():
                masks[k] |= cm
            placed = True
            break
        if not placed:
            return None
    return masks


def generate_scene(spec, seed):
    """Deterministic sample for ``(spec, seed)``."""
    rng = np.random.default_rng([spec.seed, seed])
    for _ in range(20):
        masks = _layout(rng, spec)
        if masks is not None:
            break
    else:
        raise InfeasibleSpecError(
            f"could not place {spec.blobs_per_image} blobs with radii {spec.radius_ranges} in {spec.image_size} after 20 layouts"
        )
    label = np.zeros(spec.image_size, dtype=np.uint8)
    for k in range(1, spec.m + 1):
        label[masks[k]] = k
    means = np.asarray(spec.intensity_means, dtype=np.float64)
    image = means[label] + rng.normal(0.0, spec.noise_sigma, size=label.shape)
    return Sample(np.clip(image, 0.0, 1.0)[None], label)


def generate_dataset(spec, n, base_seed=0):
    return [generate_scene(spec, derive_seed(base_seed, i)) for i in range(n)]


def derive_seed(*parts):
    """Stable 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def validate_nesting(label):
    """Number of 4-adjacent pixel pairs whose classes differ by more than one."""
    lab = np.asarray(label).astype(np.int64)
    if lab.ndim == 3:
        return sum(validate_nesting(x) for x in lab)
    v = np.abs(np.diff(lab, axis=0)) > 1
    h = np.abs(np.diff(lab, axis=1)) > 1
    return int(v.sum() + h.sum())


# -- augmentation ------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rotate: bool = True
    max_shift: float = 0.1
    scale_range: tuple = (0.9, 1.1)
    enabled: bool = True


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    rot90: int = 0
    shift: tuple = (0, 0)
    scale: float = 1.0


def draw_augment(seed, cfg, shape):
    rng = np.random.default_rng(seed)
    H, W = shape
    hflip = bool(rng.random() < cfg.flip_prob)
    vflip = bool(rng.random() < cfg.flip_prob)
    k = int(rng.integers(4)) if cfg.rotate else 0
    if H != W:
        k = 2 * (k // 2)
    sy = int(round(cfg.max_shift * H))
    sx = int(round(cfg.max_shift * W))
    shift = (int(rng.integers(-sy, sy + 1)), int(rng.integers(-sx, sx + 1)))
    scale = float(rng.uniform(*cfg.scale_range))
    return AugmentParams(hflip, vflip, k, shift, scale)


def apply_augment(sample, p):
    """Apply flips, a quarter-turn rotation, then rescale about the centre
    and shift.  Pixels mapped from outside the frame become 0 (image) and
    class 0 (label)."""
    img = sample.image[0]
    lab = sample.label
    if p.hflip:
        img, lab = img[:, ::-1], lab[:, ::-1]
    if p.vflip:
        img, lab = img[::-1], lab[::-1]
    if p.rot90 % 4:
        img, lab = np.rot90(img, p.rot90), np.rot90(lab, p.rot90)
    img = np.ascontiguousarray(img)
    lab = np.ascontiguousarray(lab)
    if p.scale != 1.0 or p.shift != (0, 0):
        H, W = lab.shape
        cy, cx = (H - 1) / 2, (W - 1) / 2
        ry = (np.arange(H) - cy - p.shift[0]) / p.scale + cy
        rx = (np.arange(W) - cx - p.shift[1]) / p.scale + cx
        coords = np.meshgrid(ry, rx, indexing="ij")
        img = ndimage.map_coordinates(img, coords, order=1, mode="constant", cval=0.0)
        iy = np.floor(ry + 0.5).astype(np.int64)
        ix = np.floor(rx + 0.5).astype(np.int64)
        valid = ((iy >= 0) & (iy < H))[:, None] & ((ix >= 0) & (ix < W))[None, :]
        sampled = lab[np.clip(iy, 0, H - 1)][:, np.clip(ix, 0, W - 1)]
        lab = np.where(valid, sampled, 0).astype(lab.dtype)
    return Sample(img[None].copy(), lab.copy())


def augment(sample, seed, cfg=AugmentConfig()):
    if not cfg.enabled:
        return sample
    return apply_augment(sample, draw_augment(seed, cfg, sample.label.shape))


# -- folds -------------------------------------------------------------------


class Triple(NamedTuple):
    fold: int
    train: tuple
    val: tuple
    test: int


def make_folds(n_images, k, seed=0):
    """k-fold split with a rotating test image inside each validation fold.

    Yields ``n_images`` triples; every image is the test image exactly once.
    """
    if k < 1 or n_images % k:
        raise ValueError(f"k = {k} must divide n_images = {n_images}")
    per_fold = n_images // k
    if per_fold < 2:
        raise ValueError(f"{n_images} images in {k} folds leaves an empty validation set")
    order = np.random.default_rng(seed).permutation(n_images)
    folds = [sorted(int(i) for i in order[f * per_fold:(f + 1) * per_fold]) for f in range(k)]
    triples = []
    for f, members in enumerate(folds):
        train = tuple(sorted(i for g, other in enumerate(folds) if g != f for i in other))
        for test in members:
            val = tuple(i for i in members if i != test)
            triples.append(Triple(f, train, val, test))
    return triples
