import numpy as np
import pytest

from deepfont import glyphgen
from deepfont.glyphgen import (DomainConfig, FontClass, RenderRequest, make_font_classes,
                               render_line)


def test_font_class_validation():
    with pytest.raises(ValueError):
        FontClass(0, 9, 0.0, 1.0, False, 0, 0.0)
    with pytest.raises(ValueError):
        FontClass(0, 3, 0.6, 1.0, False, 0, 0.0)


def test_classes_distinct_and_cover_dominant_combos():
    classes = make_font_classes(16)
    keys = {(c.stroke_width, c.slant, c.width_scale, c.serif, c.corner_radius, c.baseline_wobble)
            for c in classes}
    assert len(keys) == 16
    assert len({c.dominant for c in classes[:8]}) == 8
    assert make_font_classes(16) == classes


def test_render_shape_and_range():
    font = make_font_classes(1)[0]
    img = render_line(RenderRequest("font", font))
    assert img.shape[0] == 105 and img.min() >= 0 and img.max() <= 1
    assert img.min() < 0.1  # there is ink
    assert np.all(img[:, :2] == 1.0)


def test_render_determinism():
    font = make_font_classes(3)[2]
    req = RenderRequest("quizzed", font, 7)
    assert np.array_equal(render_line(req), render_line(req))


def test_width_linear_in_spacing():
    font = make_font_classes(2)[1]
    widths = [render_line(RenderRequest("spacing", font, s)).shape[1] for s in (0, 10, 20)]
    assert widths[1] - widths[0] == widths[2] - widths[1] == 10 * (len("spacing") - 1)


def test_render_rejects_unsupported_text():
    font = make_font_classes(1)[0]
    with pytest.raises(ValueError):
        render_line(RenderRequest("Hello", font))
    with pytest.raises(ValueError):
        RenderRequest("", font)
    with pytest.raises(ValueError):
        RenderRequest("ab", font, spacing_px=60)


def test_thicker_strokes_more_ink():
    thin = FontClass(0, 1, 0.0, 1.0, False, 0, 0.0)
    thick = FontClass(1, 7, 0.0, 1.0, False, 0, 0.0)
    ink = [np.sum(1 - render_line(RenderRequest("minimum", f))) for f in (thin, thick)]
    assert ink[1] > 3 * ink[0]


def test_corpus_words():
    words = glyphgen.corpus_words()
    assert len(words) >= 500 and all(w.isalpha() and w.islower() for w in words)
    w = glyphgen.sample_corpus_word(np.random.default_rng(0), 4, 8)
    assert 4 <= len(w) <= 8


def test_occlusion_area_bound():
    rng = np.random.default_rng(1)
    img = np.full((105, 262), 0.5)
    for _ in range(30):
        changed = np.mean(glyphgen.occlude(img, rng) != 0.5)
        assert changed <= 0.10


def test_occlusion_grain_makes_cells():
    img = np.full((8, 8), 0.5)
    out = glyphgen.occlude(img, np.random.default_rng(2), (1, 1), 1.0, grain=(4, 4))
    ys, xs = np.nonzero(out != 0.5)
    block = out[ys.min():ys.min() + 4, xs.min():xs.min() + 4]
    assert block.shape == (4, 4) and np.unique(block).size == 1


def test_make_domain_manifest():
    cfg = DomainConfig.for_classes(3)
    m = glyphgen.make_domain(cfg, glyphgen.SYN, 2, np.random.default_rng(2))
    assert len(m) == 6 and m.labels.tolist() == [0, 0, 1, 1, 2, 2]
    assert m.augment_steps == (1, 2, 3, 4, 5, 6)
    # squeezed to 262 = 2.5 * 105, then stretched by the aspect-ratio step
    assert all(img.shape[0] == 105 and 224 <= img.shape[1] <= 315 for img in m.images)
    again = glyphgen.make_domain(cfg, glyphgen.SYN, 2, np.random.default_rng(2))
    assert all(np.array_equal(a, b) for a, b in zip(m.images, again.images))
    real = glyphgen.make_domain(cfg, glyphgen.PSEUDO_REAL, 1, np.random.default_rng(3), labeled=False)
    assert real.labels.tolist() == [-1, -1, -1] and real.true_labels.tolist() == [0, 1, 2]
    with pytest.raises(ValueError):
        glyphgen.make_domain(cfg, "photo", 1, np.random.default_rng(0))


def test_render_sample_uses_seed_only():
    cfg = DomainConfig.for_classes(2)
    a = glyphgen.render_sample(cfg, glyphgen.PSEUDO_REAL, 1, 1234)
    b = glyphgen.render_sample(cfg, glyphgen.PSEUDO_REAL, 1, 1234)
    assert np.array_equal(a, b)
