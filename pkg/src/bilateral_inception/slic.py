"""SLIC superpixels on the CPU.

k-means over ``(r, g, b, x, y)`` restricted to a local window: every pixel is
compared only against the centers seeded in the 3x3 block of grid cells around
its own cell. Colors are scaled to [0, 100] so the usual compactness range
(around 10) balances color against position the way it does in CIELAB.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidArgumentError
from .superpixel import Partition, check_image

COLOR_SCALE = 100.0


def grid_shape(height: int, width: int, target_count: int) -> tuple[int, int]:
    """Rows and columns of the seed grid for roughly square cells."""
    ny = max(1, min(height, int(round(np.sqrt(target_count * height / width)))))
    nx = max(1, min(width, int(round(target_count / ny))))
    return ny, nx


def seed_centers(image: np.ndarray, ny: int, nx: int) -> np.ndarray:
    height, width = image.shape[:2]
    ys = np.floor((np.arange(ny) + 0.5) * height / ny).astype(np.int64)
    xs = np.floor((np.arange(nx) + 0.5) * width / nx).astype(np.int64)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    gy, gx = gy.ravel(), gx.ravel()
    colors = image[gy, gx] * COLOR_SCALE
    return np.column_stack([colors, gx, gy]).astype(np.float64)


def slic(image, target_count: int, compactness: float = 10.0, iterations: int = 10) -> Partition:
    """Partition ``image`` into roughly ``target_count`` compact segments.

    Deterministic: no randomness, fixed candidate order, ties resolved to the
    first candidate. Every returned segment is 4-connected.
    """
    image = check_image(image)
    height, width = image.shape[:2]
    n = height * width
    if int(target_count) != target_count or not 1 <= target_count <= n:
        raise InvalidArgumentError(f"target count must lie in [1, {n}], got {target_count}")
    if not compactness > 0:
        raise InvalidArgumentError(f"compactness must be positive, got {compactness}")
    if int(iterations) != iterations or iterations < 1:
        raise InvalidArgumentError(f"iterations must be a positive integer, got {iterations}")
    target_count = int(target_count)

    ny, nx = grid_shape(height, width, target_count)
    centers = seed_centers(image, ny, nx)
    step = np.sqrt(n / (ny * nx))
    spatial_weight = (compactness / step) ** 2

    pixels = np.empty((n, 5))
    pixels[:, :3] = image.reshape(-1, 3) * COLOR_SCALE
    rows, cols = np.divmod(np.arange(n), width)
    pixels[:, 3] = cols
    pixels[:, 4] = rows

    grid = _CandidateGrid(height, width, ny, nx, spatial_weight)
    assign = None
    for _ in range(int(iterations)):
        assign = grid.assign(pixels, centers)
        centers = _update_centers(pixels, assign, centers)
    labels = enforce_connectivity(assign.reshape(height, width))
    return Partition(labels)


class _CandidateGrid:
    """Nearest-center search over the 3x3 block of seed cells around each
    pixel's home cell.

    Center attributes live on the small ``(ny, nx)`` cell grid and are
    expanded to pixel resolution with ``np.repeat`` (cells are contiguous
    runs of rows and columns), which is much cheaper than fancy indexing.
    Off-grid neighbours are padded with a far-away sentinel center. Distances
    are evaluated in float32.
    """

    _FAR = np.float32(1e6)

    def __init__(self, height, width, ny, nx, spatial_weight):
        self.shape = (height, width)
        self.ny, self.nx = ny, nx
        cell_y = np.minimum(np.arange(height) * ny // height, ny - 1)
        cell_x = np.minimum(np.arange(width) * nx // width, nx - 1)
        self.rows_per_cell = np.bincount(cell_y, minlength=ny)
        self.cols_per_cell = np.bincount(cell_x, minlength=nx)
        scale = np.ones(5)
        scale[3:] = np.sqrt(spatial_weight)
        self.scale = scale
        ids = np.full((ny + 2, nx + 2), -1, dtype=np.int64)
        ids[1:-1, 1:-1] = np.arange(ny * nx).reshape(ny, nx)
        self.ids = ids
        self._pixels_key = None

    def _expand(self, grid):
        out = np.repeat(grid, self.rows_per_cell, axis=0)
        return np.repeat(out, self.cols_per_cell, axis=1)

    def assign(self, pixels, centers):
        height, width = self.shape
        ny, nx = self.ny, self.nx
        if self._pixels_key is not pixels:
            self._scaled = (pixels * self.scale).astype(np.float32).reshape(height, width, 5)
            self._pixels_key = pixels
        scaled = self._scaled
        padded = np.full((ny + 2, nx + 2, 5), self._FAR, dtype=np.float32)
        padded[1:-1, 1:-1] = (centers * self.scale).astype(np.float32).reshape(ny, nx, 5)
        best = np.full((height, width), np.inf, dtype=np.float32)
        best_slot = np.zeros((height, width), dtype=np.int8)
        slot = 0
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                diff = scaled - self._expand(padded[dy:dy + ny, dx:dx + nx])
                d = np.einsum("ijk,ijk->ij", diff, diff)
                better = d < best
                np.copyto(best, d, where=better)
                best_slot[better] = slot
                slot += 1
        # map slot (dy, dx) back to a center id through the home cell
        home_y = np.repeat(np.arange(ny), self.rows_per_cell)
        home_x = np.repeat(np.arange(nx), self.cols_per_cell)
        sy, sx = np.divmod(best_slot.astype(np.int64), 3)
        return self.ids[home_y[:, None] + sy, home_x[None, :] + sx].ravel()


def _update_centers(pixels, assign, centers):
    m = len(centers)
    counts = np.bincount(assign, minlength=m)
    out = centers.copy()
    nonempty = counts > 0
    for k in range(pixels.shape[1]):
        sums = np.bincount(assign, weights=pixels[:, k], minlength=m)
        out[nonempty, k] = sums[nonempty] / counts[nonempty]
    return out


def _pixel_edges(labels: np.ndarray):
    height, width = labels.shape
    idx = np.arange(height * width).reshape(height, width)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return a, b


def enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Make every segment 4-connected.

    Each segment keeps its largest connected piece (ties: the piece found
    first in raster order). Every other piece is absorbed into the largest
    segment adjacent to it, repeating until no orphan pieces remain. Returns
    compacted ids.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    flat = labels.ravel()
    a, b = _pixel_edges(labels)
    same = flat[a] == flat[b]
    graph = coo_matrix((np.ones(int(same.sum()), dtype=np.int8), (a[same], b[same])), shape=(n, n))
    ncomp, comp = connected_components(graph, directed=False)
    comp = _renumber_by_first_pixel(comp, ncomp)

    comp_size = np.bincount(comp, minlength=ncomp)
    comp_label = np.zeros(ncomp, dtype=np.int64)
    comp_label[comp] = flat

    # main piece per segment: largest size, then smallest component id
    order = np.lexsort((np.arange(ncomp), -comp_size, comp_label))
    first = np.ones(ncomp, dtype=bool)
    first[1:] = comp_label[order[1:]] != comp_label[order[:-1]]
    orphan = np.ones(ncomp, dtype=bool)
    orphan[order[first]] = False

    if orphan.any():
        cross = comp[a] != comp[b]
        ca = np.concatenate([comp[a][cross], comp[b][cross]])
        cb = np.concatenate([comp[b][cross], comp[a][cross]])
        keys = np.unique(ca * ncomp + cb)
        pairs = np.column_stack(np.divmod(keys, ncomp))
        while orphan.any():
            seg_size = np.bincount(comp_label, weights=comp_size * ~orphan)
            use = orphan[pairs[:, 0]] & ~orphan[pairs[:, 1]]
            src = pairs[use, 0]
            dst_label = comp_label[pairs[use, 1]]
            # largest neighbouring segment, then smallest segment id
            pick = np.lexsort((dst_label, -seg_size[dst_label], src))
            src, dst_label = src[pick], dst_label[pick]
            head = np.ones(src.size, dtype=bool)
            head[1:] = src[1:] != src[:-1]
            comp_label[src[head]] = dst_label[head]
            orphan[src[head]] = False

    out = comp_label[comp]
    _, compact = np.unique(out, return_inverse=True)
    return compact.reshape(labels.shape)


def _renumber_by_first_pixel(comp: np.ndarray, ncomp: int) -> np.ndarray:
    first = np.full(ncomp, comp.size, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(comp.size))
    rank = np.empty(ncomp, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(ncomp)
    return rank[comp]


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels whose right or lower neighbour lies in a different segment."""
    labels = np.asarray(labels)
    mask = np.zeros(labels.shape, dtype=bool)
    mask[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    mask[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return mask


def overlay_boundaries(image, labels, color=(1.0, 1.0, 0.0)) -> np.ndarray:
    out = np.array(image, dtype=np.float64, copy=True)
    out[boundary_mask(labels)] = color
    return out
