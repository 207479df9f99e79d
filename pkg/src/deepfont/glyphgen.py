"""Procedural skeleton fonts and text-line rendering.

Each lowercase letter is a set of polylines in font units (x-height = 1,
baseline at y = 0). A FontClass turns the skeleton into a typeface by stroke
width, slant, horizontal scale, serif caps, corner rounding and a per-letter
baseline wobble. Rendering is fully deterministic.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from deepfont import augment
from deepfont.augment import AugmentConfig, PATCH

LINE_HEIGHT = PATCH
X_HEIGHT_PX = 34.0
BASELINE_ROW = 76.0
ASCENDER = 1.8
DESCENDER = -0.7
SERIF_HALF = 0.14
ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def _arc(cx, cy, rx, ry, a0, a1, n=10):
    t = np.radians(np.linspace(a0, a1, n))
    return [(cx + rx * math.cos(a), cy + ry * math.sin(a)) for a in t]


def _bowl(cx, rx=0.3):
    return _arc(cx, 0.5, rx, 0.5, 0, 360, 17)


SKELETONS = {
    "a": [_bowl(0.3), [(0.6, 1.0), (0.6, 0.0)]],
    "b": [[(0.0, ASCENDER), (0.0, 0.0)], _bowl(0.3)],
    "c": [_arc(0.32, 0.5, 0.32, 0.5, 40, 320, 12)],
    "d": [_bowl(0.3), [(0.6, ASCENDER), (0.6, 0.0)]],
    "e": [[(0.02, 0.5), (0.6, 0.5)] + _arc(0.31, 0.5, 0.29, 0.5, 0, 320, 12)[1:]],
    "f": [[(0.2, 0.0), (0.2, 1.45)] + _arc(0.45, 1.45, 0.25, 0.3, 180, 60, 6)[1:],
          [(0.0, 1.0), (0.45, 1.0)]],
    "g": [_bowl(0.3), [(0.6, 1.0), (0.6, -0.35)] + _arc(0.32, -0.35, 0.28, 0.3, 0, -160, 6)[1:]],
    "h": [[(0.0, ASCENDER), (0.0, 0.0)], [(0.0, 0.65)] + _arc(0.28, 0.65, 0.28, 0.35, 180, 0, 7)[1:]
          + [(0.56, 0.0)]],
    "i": [[(0.0, 1.0), (0.0, 0.0)], [(0.0, 1.4), (0.0, 1.5)]],
    "j": [[(0.3, 1.0), (0.3, -0.35)] + _arc(0.05, -0.35, 0.25, 0.3, 0, -160, 6)[1:],
          [(0.3, 1.4), (0.3, 1.5)]],
    "k": [[(0.0, ASCENDER), (0.0, 0.0)], [(0.52, 1.0), (0.0, 0.4)], [(0.18, 0.58), (0.55, 0.0)]],
    "l": [[(0.0, ASCENDER), (0.0, 0.0)]],
    "m": [[(0.0, 1.0), (0.0, 0.0)], [(0.0, 0.7)] + _arc(0.22, 0.7, 0.22, 0.3, 180, 0, 6)[1:]
          + [(0.44, 0.0)], [(0.44, 0.7)] + _arc(0.66, 0.7, 0.22, 0.3, 180, 0, 6)[1:] + [(0.88, 0.0)]],
    "n": [[(0.0, 1.0), (0.0, 0.0)], [(0.0, 0.65)] + _arc(0.28, 0.65, 0.28, 0.35, 180, 0, 7)[1:]
          + [(0.56, 0.0)]],
    "o": [_arc(0.32, 0.5, 0.32, 0.5, 0, 360, 17)],
    "p": [[(0.0, 1.0), (0.0, DESCENDER)], _bowl(0.3)],
    "q": [_bowl(0.3), [(0.6, 1.0), (0.6, DESCENDER)]],
    "r": [[(0.0, 1.0), (0.0, 0.0)], [(0.0, 0.6)] + _arc(0.3, 0.6, 0.3, 0.4, 180, 60, 5)[1:]],
    "s": [[(0.55, 0.85), (0.4, 1.0), (0.12, 1.0), (0.0, 0.85), (0.05, 0.62), (0.5, 0.4),
           (0.56, 0.15), (0.44, 0.0), (0.12, 0.0), (0.0, 0.15)]],
    "t": [[(0.2, 1.45), (0.2, 0.12), (0.32, 0.0), (0.48, 0.02)], [(0.0, 1.0), (0.45, 1.0)]],
    "u": [[(0.0, 1.0), (0.0, 0.35)] + _arc(0.28, 0.35, 0.28, 0.35, 180, 360, 7)[1:],
          [(0.56, 1.0), (0.56, 0.0)]],
    "v": [[(0.0, 1.0), (0.3, 0.0), (0.6, 1.0)]],
    "w": [[(0.0, 1.0), (0.2, 0.0), (0.4, 0.8), (0.6, 0.0), (0.8, 1.0)]],
    "x": [[(0.0, 1.0), (0.56, 0.0)], [(0.56, 1.0), (0.0, 0.0)]],
    "y": [[(0.0, 1.0), (0.3, 0.0)], [(0.6, 1.0), (0.2, -0.5), (0.02, -0.62)]],
    "z": [[(0.0, 1.0), (0.56, 1.0), (0.0, 0.0), (0.56, 0.0)]],
}
SERIF_LEVELS = (0.0, 1.0, ASCENDER, DESCENDER)


@dataclass(frozen=True)
class FontClass:
    id: int
    stroke_width: int
    slant: float
    width_scale: float
    serif: bool
    corner_radius: int
    baseline_wobble: float

    def __post_init__(self):
        checks = [
            (1 <= self.stroke_width <= 7, "stroke_width"),
            (-0.4 <= self.slant <= 0.4, "slant"),
            (0.6 <= self.width_scale <= 1.4, "width_scale"),
            (0 <= self.corner_radius <= 3, "corner_radius"),
            (0 <= self.baseline_wobble <= 2, "baseline_wobble"),
        ]
        for ok, name in checks:
            if not ok:
                raise ValueError(f"FontClass.{name} out of range")

    @property
    def dominant(self):
        """(thick strokes, slant leans right, has serifs)."""
        return (self.stroke_width >= 4, self.slant > 0, self.serif)


def make_font_classes(n, seed=0):
    """n font classes with distinct parameters.

    Classes cycle through the eight (stroke bucket, slant sign, serif) combinations;
    the remaining parameters are drawn per class from a seeded generator.
    """
    classes = []
    seen = set()
    for cid in range(n):
        rng = np.random.default_rng([seed, cid])
        combo = cid % 8
        thick, right, serif = bool(combo & 1), bool(combo & 2), bool(combo & 4)
        while True:
            stroke = int(rng.integers(5, 8) if thick else rng.integers(1, 4))
            slant = round(float(rng.uniform(0.12, 0.4)) * (1 if right else -1), 3)
            width_scale = round(float(rng.uniform(0.6, 1.4)), 3)
            fc = FontClass(cid, stroke, slant, width_scale, serif,
                           int(rng.integers(0, 4)), round(float(rng.uniform(0, 2)), 3))
            key = (fc.stroke_width, fc.slant, fc.width_scale, fc.serif,
                   fc.corner_radius, fc.baseline_wobble)
            if key not in seen:
                seen.add(key)
                classes.append(fc)
                break
    return classes


@dataclass(frozen=True)
class RenderRequest:
    text: str
    font: FontClass
    spacing_px: int = 10
    height: int = LINE_HEIGHT

    def __post_init__(self):
        if not self.text:
            raise ValueError("text must be non-empty")
        if not 0 <= self.spacing_px <= 50:
            raise ValueError("spacing_px must lie in [0, 50]")
        if self.height != LINE_HEIGHT:
            raise ValueError(f"rendered lines are {LINE_HEIGHT} pixels high")


def _chaikin(points, iterations):
    pts = np.asarray(points, dtype=np.float64)
    for _ in range(iterations):
        if len(pts) < 3:
            break
        q = 0.75 * pts[:-1] + 0.25 * pts[1:]
        r = 0.25 * pts[:-1] + 0.75 * pts[1:]
        mid = np.empty((2 * len(q), 2))
        mid[0::2] = q
        mid[1::2] = r
        pts = np.vstack([pts[:1], mid[1:-1], pts[-1:]])
    return pts


def _glyph_strokes(letter, font):
    """Polylines of one glyph in font units, with corner rounding and serifs."""
    strokes = [_chaikin(line, font.corner_radius) for line in SKELETONS[letter]]
    if font.serif:
        caps = []
        for line in strokes:
            for x, y in (line[0], line[-1]):
                if any(abs(y - lvl) < 0.05 for lvl in SERIF_LEVELS):
                    caps.append(np.array([[x - SERIF_HALF, y], [x + SERIF_HALF, y]]))
        strokes += caps
    return strokes


def _glyph_extent(letter):
    xs = [x for line in SKELETONS[letter] for x, _ in line]
    return min(xs), max(xs)


def glyph_advance(letter, font):
    """Integer advance width of a glyph in pixels (independent of spacing)."""
    lo, hi = _glyph_extent(letter)
    return max(1, int(round((hi - lo) * X_HEIGHT_PX * font.width_scale)) + font.stroke_width)


def line_margin(font):
    reach = abs(font.slant) * ASCENDER * X_HEIGHT_PX
    return int(math.ceil(font.stroke_width / 2 + reach + SERIF_HALF * X_HEIGHT_PX)) + 2


def line_width(text, font, spacing_px):
    return (2 * line_margin(font) + sum(glyph_advance(ch, font) for ch in text)
            + spacing_px * (len(text) - 1))


def _draw_segment(ink, p0, p1, radius):
    h, w = ink.shape
    x0 = int(max(0, math.floor(min(p0[0], p1[0]) - radius - 1)))
    x1 = int(min(w, math.ceil(max(p0[0], p1[0]) + radius + 2)))
    y0 = int(max(0, math.floor(min(p0[1], p1[1]) - radius - 1)))
    y1 = int(min(h, math.ceil(max(p0[1], p1[1]) + radius + 2)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px = xs + 0.5
    py = ys + 0.5
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - p0[0]) * dx + (py - p0[1]) * dy) / seg2, 0.0, 1.0)
    dist = np.hypot(px - (p0[0] + t * dx), py - (p0[1] + t * dy))
    cover = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    np.maximum(ink[y0:y1, x0:x1], cover, out=ink[y0:y1, x0:x1])


def render_line(req):
    """Render a text line as a 105-pixel-high gray image (0 ink, 1 background)."""
    font = req.font
    bad = sorted(set(req.text) - set(ALPHABET))
    if bad:
        raise ValueError(f"unsupported characters: {''.join(bad)!r}")
    width = line_width(req.text, font, req.spacing_px)
    ink = np.zeros((LINE_HEIGHT, width))
    radius = font.stroke_width / 2
    scale_x = X_HEIGHT_PX * font.width_scale
    pen = float(line_margin(font))
    for i, ch in enumerate(req.text):
        lo, _ = _glyph_extent(ch)
        left = pen + font.stroke_width / 2
        wobble = font.baseline_wobble * math.sin(1.7 * i + font.id)
        for line in _glyph_strokes(ch, font):
            ux = (line[:, 0] - lo) * scale_x
            uy = line[:, 1] * X_HEIGHT_PX
            xs = left + ux + font.slant * uy
            ys = BASELINE_ROW + wobble - uy
            pts = np.column_stack([xs, ys])
            for a, b in zip(pts[:-1], pts[1:]):
                _draw_segment(ink, a, b, radius)
        pen += glyph_advance(ch, font) + req.spacing_px
    return 1.0 - ink


@lru_cache(maxsize=1)
def corpus_words():
    text = resources.files("deepfont.data").joinpath("words.txt").read_text()
    return tuple(w for w in text.split() if w)


def sample_corpus_word(rng, min_len=4, max_len=8):
    pool = [w for w in corpus_words() if min_len <= len(w) <= max_len]
    if not pool:
        raise ValueError(f"no corpus words with length in [{min_len}, {max_len}]")
    return pool[int(rng.integers(len(pool)))]


@dataclass(frozen=True)
class PseudoRealConfig:
    """Held-out perturbations standing in for real photographs of text."""
    spacing_mean: float = 25.0
    spacing_std: float = 40.0
    occlusions: tuple = (1, 3)
    occlusion_max_area: float = 0.10
    occlusion_grain: tuple = (1, 1)
    gamma_range: tuple = (0.6, 1.5)
    blur_sigma_range: tuple = (2.5, 4.5)
    aspect_ratio_range: tuple = (5 / 6, 7 / 6)
    affine_max_rotation: float = 4.0
    affine_max_shear: float = 0.1
    shading_max_delta: float = 30.0
    noise_std: float = 3.0


def occlude(img, rng, count_range=(1, 3), max_area=0.10, grain=(1, 1)):
    """Salt-and-pepper filled rectangles covering at most max_area of the image.

    Each rectangle is filled with random black/white cells of an integer size
    drawn from `grain`, so the clutter survives a later blur as texture.
    """
    out = img.copy()
    h, w = out.shape
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    budget = max_area * h * w / count
    for _ in range(count):
        area = rng.uniform(0.3, 1.0) * budget
        aspect = rng.uniform(0.5, 2.0)
        rh = int(min(h, max(1, math.sqrt(area / aspect))))
        rw = int(min(w, max(1, area / rh)))
        y = int(rng.integers(0, h - rh + 1))
        x = int(rng.integers(0, w - rw + 1))
        g = int(rng.integers(grain[0], grain[1] + 1)) if grain[1] > 1 else 1
        cells = rng.integers(0, 2, size=(-(-rh // g), -(-rw // g))).astype(np.float64)
        out[y:y + rh, x:x + rw] = np.repeat(np.repeat(cells, g, axis=0), g, axis=1)[:rh, :rw]
    return out


def pseudo_real_perturb(img, rng, cfg=PseudoRealConfig()):
    """Imitates a photograph: clutter in the scene, then camera geometry, optics,
    illumination and sensor noise, in that order."""
    out = augment.squeeze_aspect(img, rng, cfg.aspect_ratio_range)
    out = occlude(out, rng, cfg.occlusions, cfg.occlusion_max_area, cfg.occlusion_grain)
    out = augment.affine_warp(out, rng.uniform(-cfg.affine_max_rotation, cfg.affine_max_rotation),
                              rng.uniform(-cfg.affine_max_shear, cfg.affine_max_shear))
    out = augment.gaussian_blur(out, rng.uniform(*cfg.blur_sigma_range))
    out = augment.shading(out, rng, cfg.shading_max_delta)
    out = np.clip(out, 0.0, 1.0) ** rng.uniform(*cfg.gamma_range)
    return augment.add_noise(out, rng, cfg.noise_std)


SYN = "syn"
PSEUDO_REAL = "pseudo-real"
DOMAINS = (SYN, PSEUDO_REAL)


@dataclass(frozen=True)
class DomainConfig:
    classes: tuple
    augment: AugmentConfig = AugmentConfig()
    pseudo_real: PseudoRealConfig = PseudoRealConfig()
    min_len: int = 4
    max_len: int = 8
    squeeze_ratio: float = 2.5

    @classmethod
    def for_classes(cls, n_classes, class_seed=0, **kw):
        return cls(classes=tuple(make_font_classes(n_classes, class_seed)), **kw)


def render_sample(config, domain, class_id, seed):
    """One stored training/test image: render, width-normalize, perturb.

    The squeeze to the fixed width ratio comes first so that the aspect-ratio
    step still perturbs the normalized width.
    """
    rng = np.random.default_rng(seed)
    font = config.classes[class_id]
    word = sample_corpus_word(rng, config.min_len, config.max_len)
    if domain == SYN:
        aug = config.augment
        if 5 in aug.enabled_steps:
            spacing = augment.sample_spacing(rng, aug.spacing_mean, aug.spacing_std,
                                             aug.spacing_bounds)
        else:
            spacing = int(round(aug.spacing_mean))
        img = render_line(RenderRequest(word, font, spacing))
        img = augment.squeeze_to_ratio(img, config.squeeze_ratio)
        return augment.augment_pipeline(img, aug, rng)
    if domain == PSEUDO_REAL:
        pr = config.pseudo_real
        spacing = augment.sample_spacing(rng, pr.spacing_mean, pr.spacing_std, (0, 50))
        img = render_line(RenderRequest(word, font, spacing))
        img = augment.squeeze_to_ratio(img, config.squeeze_ratio)
        return pseudo_real_perturb(img, rng, pr)
    raise ValueError(f"unknown domain {domain!r}")


def make_domain(config, domain, n_per_class, rng, labeled=True):
    """Render n_per_class images for every class of the config.

    Returns an in-memory DatasetManifest; call its ``save`` to write PGM files.
    """
    from deepfont.formats import DatasetManifest, ManifestEntry

    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    entries, images, truth = [], [], []
    for cid in range(len(config.classes)):
        for j in range(n_per_class):
            seed = int(rng.integers(2**62))
            images.append(render_sample(config, domain, cid, seed))
            entries.append(ManifestEntry(f"{domain}_{cid:04d}_{j:05d}.pgm",
                                         cid if labeled else -1, seed))
            truth.append(cid)
    steps = tuple(sorted(config.augment.enabled_steps)) if domain == SYN else None
    return DatasetManifest(domain=domain, n_classes=len(config.classes), entries=entries,
                           augment_steps=steps, images=images, true_labels=np.array(truth))
