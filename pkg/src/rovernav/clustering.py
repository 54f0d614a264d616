"""Partition of the global region into regions of similar appearance.

Pixels are quantized by luminance into equal-width bins over [0, 1]; each
4-connected run of equal bins is a region. Regions below ``min_region_px``
are absorbed into their largest neighbor, then labels are carried to the
costmap grid by majority vote.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .features import TopDownImage, luminance

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class ClusterMap:
    labels: np.ndarray  # (H, W) ints in [0, n_clusters)
    cell_m: float = 1.0

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def save(self, path: str | Path) -> None:
        """Indexed PNG with a fixed pseudo-random palette."""
        from PIL import Image

        rng = np.random.default_rng(7)
        palette = rng.integers(0, 256, size=(256, 3), dtype=np.uint8)
        img = Image.fromarray((self.labels % 256).astype(np.uint8), mode="P")
        img.putpalette(palette.ravel().tolist())
        img.save(path)


def quantize(lum: np.ndarray, n_levels: int) -> np.ndarray:
    return np.clip(np.floor(lum * n_levels), 0, n_levels - 1).astype(np.intp)


def label_components(bins: np.ndarray) -> np.ndarray:
    """4-connected components of equal values, ids in raster order of first pixel."""
    out = np.zeros(bins.shape, dtype=np.intp)
    offset = 0
    for b in np.unique(bins):
        lab, n = ndimage.label(bins == b, structure=FOUR_CONNECTED)
        out[lab > 0] = lab[lab > 0] + offset
        offset += n
    return relabel_sequential(out - 1)


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Renumber ids 0..K-1 by raster order of first occurrence."""
    _, first = np.unique(labels, return_index=True)
    uniq = labels.ravel()[np.sort(first)]
    lut = np.empty(labels.max() + 1, dtype=np.intp)
    lut[uniq] = np.arange(len(uniq))
    return lut[labels]


def merge_small_regions(labels: np.ndarray, min_region_px: int) -> np.ndarray:
    labels = labels.copy()
    h, w = labels.shape
    sizes = dict(enumerate(np.bincount(labels.ravel()).tolist()))
    boxes = {}
    for k, sl in enumerate(ndimage.find_objects(labels + 1)):
        if sl is not None:
            boxes[k] = (sl[0].start, sl[0].stop, sl[1].start, sl[1].stop)
    heap = [(s, k) for k, s in sizes.items() if s < min_region_px]
    heapq.heapify(heap)
    while heap and len(sizes) > 1:
        s, k = heapq.heappop(heap)
        if k not in sizes or sizes[k] != s:
            continue
        r0, r1, c0, c1 = boxes[k]
        r0, c0 = max(r0 - 1, 0), max(c0 - 1, 0)
        r1, c1 = min(r1 + 1, h), min(c1 + 1, w)
        win = labels[r0:r1, c0:c1]
        mask = win == k
        ring = ndimage.binary_dilation(mask, structure=FOUR_CONNECTED) & ~mask
        neigh = np.unique(win[ring])
        if neigh.size == 0:
            continue
        target = max(neigh.tolist(), key=lambda n: (sizes[n], -n))
        win[mask] = target
        sizes[target] += sizes.pop(k)
        tb = boxes[target]
        kb = boxes.pop(k)
        boxes[target] = (min(tb[0], kb[0]), max(tb[1], kb[1]), min(tb[2], kb[2]), max(tb[3], kb[3]))
        if sizes[target] < min_region_px:
            heapq.heappush(heap, (sizes[target], target))
    return relabel_sequential(labels)


def majority_resample(labels: np.ndarray, m_per_px: float, cell_m: float,
                      out_shape: tuple[int, int]) -> np.ndarray:
    """Carry pixel labels onto a coarser (or equal) grid by majority vote.

    Ties go to the lowest label; cells containing no pixel center take the
    label of the pixel under the cell center.
    """
    ph, pw = labels.shape
    h, w = out_shape
    k = int(labels.max()) + 1
    ci = np.floor((np.arange(ph) + 0.5) * m_per_px / cell_m).astype(np.intp)
    cj = np.floor((np.arange(pw) + 0.5) * m_per_px / cell_m).astype(np.intp)
    cell = ci[:, None] * w + cj[None, :]
    ok = (ci[:, None] < h) & (cj[None, :] < w)
    counts = np.bincount((cell * k + labels)[ok], minlength=h * w * k).reshape(h * w, k)
    out = counts.argmax(axis=1)
    empty = counts.sum(axis=1) == 0
    if np.any(empty):
        idx = np.nonzero(empty)[0]
        pi = np.minimum(((idx // w + 0.5) * cell_m / m_per_px).astype(np.intp), ph - 1)
        pj = np.minimum(((idx % w + 0.5) * cell_m / m_per_px).astype(np.intp), pw - 1)
        out[idx] = labels[pi, pj]
    return out.reshape(h, w)


def cluster_regions(img: TopDownImage, n_levels: int = 6, min_region_px: int = 25,
                    cell_m: float = 1.0, out_shape: tuple[int, int] | None = None) -> ClusterMap:
    if n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    if img.rgb.size == 0:
        raise ValueError("empty image")
    bins = quantize(luminance(img.rgb), n_levels)
    labels = merge_small_regions(label_components(bins), min_region_px)
    if out_shape is None:
        ph, pw = labels.shape
        out_shape = (int(np.floor(ph * img.m_per_px / cell_m + 1e-9)),
                     int(np.floor(pw * img.m_per_px / cell_m + 1e-9)))
    cells = majority_resample(labels, img.m_per_px, cell_m, out_shape)
    # voting can split a region; keep every id a single connected component
    return ClusterMap(label_components(cells), cell_m)
