"""Label-preserving perturbations of height-normalized text lines, the fixed
width squeeze, and 105x105 patch sampling.

Images are 2-D float arrays in [0, 1] with 1 as white background. Gray-level
magnitudes in the configuration are on the 0-255 scale.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PATCH = 105
BACKGROUND = 1.0
ALL_STEPS = frozenset({1, 2, 3, 4, 5, 6})
# application order of the pipeline; step 5 acts at render time
PIPELINE_ORDER = (6, 3, 2, 4, 1)


@dataclass(frozen=True)
class AugmentConfig:
    noise_std: float = 3.0
    blur_sigma_range: tuple = (2.5, 3.5)
    affine_max_rotation: float = 4.0
    affine_max_shear: float = 0.1
    shading_max_delta: float = 30.0
    spacing_mean: float = 10.0
    spacing_std: float = 40.0
    spacing_bounds: tuple = (0, 50)
    aspect_ratio_range: tuple = (5 / 6, 7 / 6)
    enabled_steps: frozenset = field(default=ALL_STEPS)

    def __post_init__(self):
        object.__setattr__(self, "enabled_steps", frozenset(self.enabled_steps))
        for name in ("blur_sigma_range", "spacing_bounds", "aspect_ratio_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
        if not self.enabled_steps <= ALL_STEPS:
            raise ValueError(f"unknown augmentation steps {sorted(self.enabled_steps - ALL_STEPS)}")

    def with_steps(self, steps):
        return AugmentConfig(**{**self.__dict__, "enabled_steps": frozenset(steps)})


# Data recipes of the five autoencoder training sets, by augmentation steps.
VARIANT_STEPS = {
    "N": frozenset(),
    "S": frozenset({1, 2, 3, 4}),
    "F": ALL_STEPS,
}


@dataclass
class Patch:
    pixels: np.ndarray
    source_id: object
    offset: tuple
    squeeze_ratio: float


def round_half_even(x):
    return int(round(x))


def _clip(img):
    return np.clip(img, 0.0, 1.0)


def add_noise(img, rng, std=3.0):
    """Zero-mean Gaussian noise, std given in gray levels."""
    if std == 0:
        return img.copy()
    noisy = img * 255.0 + rng.normal(0.0, std, size=img.shape)
    return _clip(noisy / 255.0)


def gaussian_kernel(sigma):
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian blur, radius ceil(3 sigma), edges clamped."""
    if sigma <= 0:
        return img.copy()
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return _clip(out)


def affine_matrix(rotation_deg, shear):
    """Output->input linear map for a rotation followed by a horizontal shear."""
    th = math.radians(rotation_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    sh = np.array([[1.0, 0.0], [shear, 1.0]])  # (row, col): col += shear * row
    return sh @ rot


def affine_warp(img, rotation_deg=0.0, shear=0.0, inverse=False):
    """Rotate/shear about the image centre with bilinear resampling.

    Pixels mapped from outside the source are filled with background.
    """
    fwd = affine_matrix(rotation_deg, shear)
    mat = np.linalg.inv(fwd) if inverse else fwd
    # affine_transform maps output coords to input coords: in = mat @ out + offset
    centre = (np.array(img.shape, dtype=np.float64) - 1) / 2
    offset = centre - mat @ centre
    out = ndimage.affine_transform(img, mat, offset=offset, order=1,
                                   mode="constant", cval=BACKGROUND)
    return _clip(out)


def perspective_affine(img, rng, config):
    rotation = rng.uniform(-config.affine_max_rotation, config.affine_max_rotation)
    shear = rng.uniform(-config.affine_max_shear, config.affine_max_shear)
    return affine_warp(img, rotation, shear)


def shading_ramp(shape, angle, amplitude):
    """Linear ramp in [0, amplitude] along direction `angle` (radians)."""
    h, w = shape
    rows, cols = np.mgrid[0:h, 0:w]
    proj = np.cos(angle) * cols + np.sin(angle) * rows
    span = proj.max() - proj.min()
    if span == 0:
        return np.zeros(shape)
    return amplitude * (proj - proj.min()) / span


def shading(img, rng, max_delta=30.0):
    """Darken by an illumination gradient of random direction.

    Peak-to-peak amplitude is drawn uniformly in [0, max_delta] gray levels.
    """
    if max_delta == 0:
        return img.copy()
    angle = rng.uniform(0.0, 2 * np.pi)
    amplitude = rng.uniform(0.0, max_delta)
    return _clip(img - shading_ramp(img.shape, angle, amplitude) / 255.0)


def sample_spacing(rng, mean=10.0, std=40.0, bounds=(0, 50), size=None):
    """Character spacing in pixels: Gaussian, clamped to bounds, rounded.

    Returns an int, or an int array when `size` is given.
    """
    value = np.rint(np.clip(rng.normal(mean, std, size=size), bounds[0], bounds[1]))
    return int(value) if size is None else value.astype(np.int64)


def sample_aspect_ratio(rng, ratio_range=(5 / 6, 7 / 6), size=None):
    return rng.uniform(*ratio_range, size=size)


def resize_width(img, new_width):
    """Bilinear horizontal resampling with pixel-centre alignment."""
    h, w = img.shape
    new_width = max(1, int(new_width))
    if new_width == w:
        return img.copy()
    src = (np.arange(new_width) + 0.5) * (w / new_width) - 0.5
    src = np.clip(src, 0, w - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, w - 1)
    frac = src - lo
    return img[:, lo] * (1 - frac) + img[:, hi] * frac


def squeeze_aspect(img, rng, ratio_range=(5 / 6, 7 / 6)):
    """Step 6: width divided by a ratio drawn uniformly from ratio_range."""
    r = sample_aspect_ratio(rng, ratio_range)
    return resize_width(img, round_half_even(img.shape[1] / r))


def squeeze_to_ratio(img, target_ratio=2.5):
    """Rescale the width to round(target_ratio * height), height unchanged."""
    h = img.shape[0]
    return resize_width(img, round_half_even(target_ratio * h))


def sample_patch(img, rng, source_id=None, squeeze_ratio=None):
    """Uniformly placed 105x105 window of a 105-pixel-high line.

    Lines narrower than the window are padded on the right with background.
    """
    h, w = img.shape
    if h != PATCH:
        raise ValueError(f"patch source must be {PATCH} pixels high, got {h}")
    if w < PATCH:
        img = np.pad(img, ((0, 0), (0, PATCH - w)), constant_values=BACKGROUND)
        w = PATCH
    x = int(rng.integers(0, w - PATCH + 1))
    if squeeze_ratio is None:
        squeeze_ratio = w / h
    return Patch(pixels=img[:, x:x + PATCH].copy(), source_id=source_id,
                 offset=(x, 0), squeeze_ratio=squeeze_ratio)


def augment_pipeline(img, config, rng):
    """Apply the enabled steps in the order 6, 3, 2, 4, 1."""
    steps = config.enabled_steps
    out = img.copy()
    for step in PIPELINE_ORDER:
        if step not in steps:
            continue
        if step == 6:
            out = squeeze_aspect(out, rng, config.aspect_ratio_range)
        elif step == 3:
            out = perspective_affine(out, rng, config)
        elif step == 2:
            out = gaussian_blur(out, rng.uniform(*config.blur_sigma_range))
        elif step == 4:
            out = shading(out, rng, config.shading_max_delta)
        elif step == 1:
            out = add_noise(out, rng, config.noise_std)
    return out
