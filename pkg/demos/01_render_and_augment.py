"""Render a word in a few procedural fonts and push it through the augmentation steps.

Writes PGM files to ./demo_out so they can be opened with any image viewer.
"""
from pathlib import Path

import numpy as np

from deepfont import augment, glyphgen
from deepfont.formats import write_pgm

out = Path("demo_out")
out.mkdir(exist_ok=True)

classes = glyphgen.make_font_classes(8)
for font in classes[:4]:
    print(font.id, "stroke", font.stroke_width, "slant", font.slant, "serif", font.serif)

# A rendered line is 105 px high with ink at 0 and background at 1. Its width
# grows by exactly (len(text) - 1) pixels per pixel of extra spacing.
font = classes[5]
for spacing in (0, 10, 30):
    img = glyphgen.render_line(glyphgen.RenderRequest("typeface", font, spacing))
    print("spacing", spacing, "->", img.shape)
    write_pgm(out / f"spacing_{spacing:02d}.pgm", img)

# Squeeze to the fixed 2.5 width ratio, then apply each step on its own.
img = augment.squeeze_to_ratio(glyphgen.render_line(glyphgen.RenderRequest("typeface", font)))
rng = np.random.default_rng(0)
cfg = augment.AugmentConfig()
write_pgm(out / "step_1_noise.pgm", augment.add_noise(img, rng, 20.0))  # exaggerated
write_pgm(out / "step_2_blur.pgm", augment.gaussian_blur(img, 3.0))
write_pgm(out / "step_3_affine.pgm", augment.affine_warp(img, 4.0, 0.1))
write_pgm(out / "step_4_shading.pgm", augment.shading(img, rng, 30.0))
write_pgm(out / "step_6_aspect.pgm", augment.squeeze_aspect(img, rng))
write_pgm(out / "all_steps.pgm", augment.augment_pipeline(img, cfg, rng))

# The pseudo-real domain adds perturbations the classifier never trains on:
# wider spacing, gamma changes, heavier blur and occluding clutter.
cfg_d = glyphgen.DomainConfig(tuple(classes))
for i in range(3):
    write_pgm(out / f"pseudo_real_{i}.pgm", glyphgen.render_sample(cfg_d, glyphgen.PSEUDO_REAL, 5, i))

# Spacing is N(10, 40) clamped to [0, 50]; about 40% of lines are set solid.
s = np.array([augment.sample_spacing(rng) for _ in range(100000)])
print("spacing: min", s.min(), "max", s.max(), "P(0) =", np.mean(s == 0).round(3))
