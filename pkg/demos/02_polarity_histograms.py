"""Turn an event window into the two-channel histogram the encoder eats.

Raw events are a ragged list; the learning code wants a fixed-size array.
A polarity histogram counts events per pixel over a window, one channel
per polarity. Most pixels never fire, so the result is stored sparsely:
only active sites carry features, and the convolution later on will keep
it that way.
"""

from pathlib import Path

import numpy as np

from evcl.events import random_window
from evcl.histograms import (
    build_histogram,
    densify,
    normalize_histogram,
    save_pgm,
    to_sparse_grid,
)
from evcl.synth import EsimConfig, SaccadePath, SceneSpec, synth_stream

out_dir = Path("demo_out")
out_dir.mkdir(exist_ok=True)

rng = np.random.default_rng(1)
scene = SceneSpec(class_id=7, glyph=7, scale=1.0, rotation=-0.1, contrast=0.9)
stream = synth_stream(
    scene, SaccadePath.triangle(9.0), 32, 32, EsimConfig(noise_rate=2.0), rng
)
print(f"stream: {len(stream)} events on a 32x32 sensor")

# A window is a consecutive run of events, re-based to t=0. Small windows
# see only a partial sketch of the glyph — two windows of the same stream
# are two different drawings of the same thing.
window = random_window(stream, 1500, rng)
hist = build_histogram(window)
print(f"window of {len(window)} events -> histogram totals: "
      f"+{hist.counts[0].sum()} / -{hist.counts[1].sum()}")

active = (hist.counts.sum(axis=0) > 0).sum()
print(f"active pixels: {active} of {32 * 32} ({100 * active / 1024:.0f}%)")

# Counts are clipped and scaled to [0, 1] before learning; a pixel that
# fired 8+ times saturates at 1.
img = normalize_histogram(hist, clip=8)
print(f"normalized range: [{img.min():.2f}, {img.max():.2f}]")

# The sparse grid stores exactly the nonzero pixels. densify() rebuilds
# the dense image, so nothing is lost.
grid = to_sparse_grid(img)
print(f"sparse grid: {grid.n_sites} sites x {grid.channels} channels")
print(f"densify round trip exact: {np.array_equal(densify(grid), img)}")

# PGM dumps are plain text and open anywhere; one file per polarity.
paths = save_pgm(hist, out_dir / "window")
print(f"wrote {paths[0].name} and {paths[1].name} under {out_dir}/")

# The same stream, three windows: same glyph, different sketches. This
# variation is what the contrastive pretraining learns to see through.
for k in range(3):
    w = random_window(stream, 1500, rng)
    h = build_histogram(w)
    on = (h.counts.sum(axis=0) > 0).sum()
    print(f"window {k}: {on} active pixels, +{h.counts[0].sum()} / -{h.counts[1].sum()}")
