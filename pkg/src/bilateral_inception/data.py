"""Synthetic segmentation data: colored elliptical blobs on a patchy
background.

Class 0 is background; classes 1..K-1 each have a base color. The background
is a mosaic of small Voronoi patches, some of which borrow a class color, so
a single superpixel's color is ambiguous and context (region extent) is what
separates a blob from a blob-colored background patch.
"""

from __future__ import annotations

import glob
import os

import numpy as np

from . import fileio
from .errors import FileFormatError, InvalidArgumentError
from .superpixel import LabelMap, check_image

CLASS_COLORS = np.array([
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.30, 0.85],
    [0.85, 0.80, 0.20],
])


def blob_image(rng, size=128, num_classes=4, patch_size=9.0, lure_prob=0.3,
               noise=0.05, blobs=(2, 4), radius=(14.0, 28.0)):
    """One ``(image, LabelMap)`` pair.

    ``lure_prob`` is the chance that a background patch takes a class color
    rather than a neutral gray/brown one.
    """
    if not 2 <= num_classes <= len(CLASS_COLORS) + 1:
        raise InvalidArgumentError(f"num_classes must lie in [2, {len(CLASS_COLORS) + 1}]")
    height = width = int(size)
    palette = CLASS_COLORS[: num_classes - 1]
    rows, cols = np.indices((height, width)).astype(np.float64)

    n_patches = max(1, int(round(height * width / patch_size ** 2)))
    seeds = rng.uniform(0, [height, width], size=(n_patches, 2))
    nearest = np.zeros((height, width), dtype=np.int64)
    best = np.full((height, width), np.inf)
    for k, (sy, sx) in enumerate(seeds):
        d = (rows - sy) ** 2 + (cols - sx) ** 2
        closer = d < best
        best[closer] = d[closer]
        nearest[closer] = k
    lure = rng.random(n_patches) < lure_prob
    patch_colors = np.empty((n_patches, 3))
    gray = rng.uniform(0.35, 0.65, size=n_patches)
    tint = rng.uniform(-0.08, 0.08, size=(n_patches, 3))
    patch_colors[:] = gray[:, None] + tint
    picks = rng.integers(0, len(palette), size=n_patches)
    patch_colors[lure] = palette[picks[lure]] + rng.normal(0, 0.04, size=(int(lure.sum()), 3))
    image = patch_colors[nearest]

    labels = np.zeros((height, width), dtype=np.int64)
    for _ in range(int(rng.integers(blobs[0], blobs[1] + 1))):
        cls = int(rng.integers(1, num_classes))
        cy, cx = rng.uniform(0.2, 0.8, size=2) * [height, width]
        ry, rx = rng.uniform(*radius, size=2)
        angle = rng.uniform(0, np.pi)
        dy, dx = rows - cy, cols - cx
        u = dx * np.cos(angle) + dy * np.sin(angle)
        v = -dx * np.sin(angle) + dy * np.cos(angle)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        color = palette[cls - 1] + rng.normal(0, 0.04, size=3)
        image[inside] = color
        labels[inside] = cls

    image = image + rng.normal(0.0, noise, size=image.shape)
    # snap to 8-bit levels so a PPM round trip is lossless
    image = np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
    return image, LabelMap(labels, num_classes)


def blob_dataset(n, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    return [blob_image(rng, **kwargs) for _ in range(n)]


def save_dataset(directory, pairs, prefix="img") -> list:
    """Write ``<prefix>_NNN.ppm`` / ``<prefix>_NNN.pgm`` pairs."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, (image, gt) in enumerate(pairs):
        stem = os.path.join(directory, f"{prefix}_{i:03d}")
        fileio.write_ppm(stem + ".ppm", image)
        fileio.write_pgm(stem + ".pgm", gt.labels)
        paths.append(stem)
    return paths


def load_pair(image_path, gt_path, num_classes=None):
    image = check_image(fileio.read_ppm(image_path))
    labels = fileio.read_pgm(gt_path)
    if labels.shape != image.shape[:2]:
        raise InvalidArgumentError(
            f"{gt_path} is {labels.shape[1]}x{labels.shape[0]} but {image_path} is "
            f"{image.shape[1]}x{image.shape[0]}")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return image, LabelMap(labels, num_classes)


def load_dataset(directory, num_classes=None):
    """Every ``*.ppm`` in ``directory`` with a same-stem ``*.pgm`` beside it,
    in sorted order."""
    images = sorted(glob.glob(os.path.join(directory, "*.ppm")))
    if not images:
        raise FileFormatError(f"{directory}: no .ppm images found")
    pairs = []
    for path in images:
        gt = path[:-4] + ".pgm"
        if not os.path.exists(gt):
            raise FileFormatError(f"{gt}: missing ground truth for {path}")
        pairs.append(load_pair(path, gt, num_classes))
    if num_classes is None:
        k = max(gt.num_classes for _, gt in pairs)
        pairs = [(img, LabelMap(gt.labels, k)) for img, gt in pairs]
    return pairs
