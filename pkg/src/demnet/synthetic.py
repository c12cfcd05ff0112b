"""Synthetic 4-class image generator for pipeline demos and scaled tests.

Each class is a sinusoidal grating with a class-specific orientation and
spatial frequency, plus a per-image random phase and additive noise. The
classes are linearly well separated, so a small model trained briefly
should classify them almost perfectly; failures point at the pipeline, not
the data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataio import CLASS_NAMES, LabeledDataset
from .tensor import RngState

# (orientation radians, cycles per image) per class
_PATTERNS = ((0.0, 3.0), (np.pi / 2, 5.0), (np.pi / 4, 7.0), (3 * np.pi / 4, 9.0))


def make_gratings(counts=(400, 200, 100, 50), hw=(64, 64), seed: int = 7,
                  noise: float = 0.08) -> LabeledDataset:
    """Imbalanced grating dataset: counts[c] images of class c, [N,1,H,W]
    float32 in [0,1], deterministic for a given seed."""
    if len(counts) != len(_PATTERNS):
        raise ValueError(f"need {len(_PATTERNS)} class counts, got {len(counts)}")
    h, w = hw
    rng = RngState(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    samples = []
    labels = []
    for c, n in enumerate(counts):
        theta, freq = _PATTERNS[c]
        proj = (xs * np.cos(theta) + ys * np.sin(theta)) / max(h, w)
        phases = rng.uniform(n) * 2 * np.pi
        grid = np.sin(2 * np.pi * freq * proj[None] + phases[:, None, None])
        jitter = rng.uniform_array((n, h, w), -noise, noise, dtype=np.float64)
        img = 0.5 + 0.4 * grid + jitter
        samples.append(np.clip(img, 0.0, 1.0)[:, None].astype(np.float32))
        labels.extend([c] * n)
    return LabeledDataset(np.concatenate(samples),
                          np.asarray(labels, dtype=np.int64), CLASS_NAMES)


def write_image_tree(ds: LabeledDataset, root) -> Path:
    """Save a dataset as 8-bit grayscale PNGs under <root>/<ClassName>/,
    the directory layout the loader and CLI expect."""
    from PIL import Image

    root = Path(root)
    counters = [0] * len(ds.class_names)
    for sample, label in zip(ds.samples, ds.labels):
        cdir = root / ds.class_names[label]
        cdir.mkdir(parents=True, exist_ok=True)
        img = np.clip(sample[0] * 255.0, 0, 255).round().astype(np.uint8)
        Image.fromarray(img, mode="L").save(cdir / f"img_{counters[label]:05d}.png")
        counters[label] += 1
    return root
