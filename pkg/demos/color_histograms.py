"""Walk through the two color descriptors on one synthetic image.

Run: python3 demos/color_histograms.py
"""

import numpy as np

from csci.color import ColorHistConfig, color_vector, pixel_bin_histogram, rgbuv_histogram
from csci.data import gen_synthetic

data = gen_synthetic(n_ids=4, colors_per_id=2, imgs_per_combo=1, seed=0)
img, spec = data.images[0], data.specs[0]
print(f"image {img.shape}, fg={spec.fg_color}, bg={spec.bg_color}")

# The pixel-bin histogram is a plain count, so it sums to the pixel count.
pb = pixel_bin_histogram(img, 8)
print(f"pixel-bin: {pb.values.size} bins, total {pb.values.sum():.0f} = {img.shape[0] * img.shape[1]} pixels")
top = np.argsort(pb.values)[::-1][:2]
print("  two fullest bins hold", [int(pb.values[i]) for i in top], "pixels (background and glyph)")

# The RGB-uv histogram is smooth, intensity weighted and sums to one.
cfg = ColorHistConfig(bins=32, tau=0.02)
h = rgbuv_histogram(img, cfg)
print(f"RGB-uv: {h.values.size} values, sum {h.values.sum():.12f}")
planes = h.values.reshape(3, cfg.bins, cfg.bins)
for c, name in enumerate("RGB"):
    u, v = np.unravel_index(planes[c].argmax(), planes[c].shape)
    print(f"  {name}-anchored peak at bin ({u}, {v})")

# Same colors, different glyph: the descriptors barely move.
same = [i for i, s in enumerate(data.specs)
        if (s.fg_color, s.bg_color) == (spec.fg_color, spec.bg_color) and i != 0]
other = next(i for i, s in enumerate(data.specs) if s.fg_color != spec.fg_color)
v0 = color_vector(img, cfg)
if same:
    print(f"L2 distance to a same-color image:      {np.linalg.norm(v0 - color_vector(data.images[same[0]], cfg)):.3f}")
print(f"L2 distance to a different-color image: {np.linalg.norm(v0 - color_vector(data.images[other], cfg)):.3f}")
