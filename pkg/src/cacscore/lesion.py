"""Calcium thresholding, 3D connected components and per-lesion features."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from .volume_io import LabelMask, Volume, require_same_geometry

CALCIUM_THRESHOLD_HU = 130.0
DEFAULT_MIN_VOXELS = 3

Connectivity = Literal["face6", "full26"]


@dataclass(frozen=True, eq=False)
class SliceStat:
    k: int
    area_mm2: float
    peak_hu: float
    n_voxels: int


@dataclass(frozen=True, eq=False)
class Lesion:
    id: int
    voxels: np.ndarray  # (N, 3) int indices, sorted in scan order
    volume_mm3: float
    per_slice: tuple[SliceStat, ...]
    peak_hu: float
    centroid: tuple[float, float, float]

    @property
    def size(self) -> int:
        return len(self.voxels)


def threshold_mask(v: Volume, threshold_hu: float = CALCIUM_THRESHOLD_HU, inclusive: bool = True) -> LabelMask:
    data = v.data
    hit = data >= threshold_hu if inclusive else data > threshold_hu
    return LabelMask.like(v, hit.astype(np.uint8))


def _structure(connectivity: Connectivity) -> np.ndarray:
    if connectivity == "face6":
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == "full26":
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"unknown connectivity {connectivity!r}")


def relabel_scan_order(labels: np.ndarray) -> np.ndarray:
    """Renumber nonzero labels 1..C by first voxel in scan order (k, j, i)."""
    flat = labels.ravel(order="F")  # i fastest, k slowest
    values, first = np.unique(flat, return_index=True)
    keep = values != 0
    values, first = values[keep], first[keep]
    lut = np.zeros(int(labels.max()) + 1 if labels.size else 1, dtype=np.int32)
    lut[values[np.argsort(first)]] = np.arange(1, len(values) + 1, dtype=np.int32)
    return lut[labels]


def connected_components(m: LabelMask, connectivity: Connectivity = "full26") -> LabelMask:
    """Label maximal connected sets of nonzero voxels.

    Labels are 1..C ordered by each component's first voxel in scan order,
    k slowest and i fastest.
    """
    labels, _ = ndimage.label(m.data != 0, structure=_structure(connectivity))
    return LabelMask.like(m, relabel_scan_order(labels))


def extract_lesions(v: Volume, labels: LabelMask) -> list[Lesion]:
    """One :class:`Lesion` per distinct nonzero label, in ascending label order."""
    require_same_geometry(v, labels)
    idx = np.argwhere(labels.data != 0)  # C-order: sorted by i, j, k
    if len(idx) == 0:
        return []
    lab = labels.data[tuple(idx.T)]
    hu = v.data[tuple(idx.T)].astype(np.float64)
    # group by label, scan order (k, j, i) within each group
    order = np.lexsort((idx[:, 0], idx[:, 1], idx[:, 2], lab))
    idx, lab, hu = idx[order], lab[order], hu[order]
    bounds = np.r_[0, np.flatnonzero(np.diff(lab)) + 1, len(lab)]

    area = labels.pixel_area
    out = []
    for s, e in zip(bounds[:-1], bounds[1:]):
        vox = idx[s:e]
        vhu = hu[s:e]
        ks = vox[:, 2]
        # voxels are sorted by k within the group
        kb = np.r_[0, np.flatnonzero(np.diff(ks)) + 1, len(ks)]
        per_slice = tuple(
            SliceStat(int(ks[a]), (b - a) * area, float(vhu[a:b].max()), int(b - a))
            for a, b in zip(kb[:-1], kb[1:])
        )
        out.append(
            Lesion(
                id=int(lab[s]),
                voxels=vox,
                volume_mm3=len(vox) * labels.voxel_volume,
                per_slice=per_slice,
                peak_hu=float(vhu.max()),
                centroid=tuple(float(c) for c in vox.mean(axis=0)),
            )
        )
    return out


def filter_min_size(lesions: list[Lesion], min_voxels: int = DEFAULT_MIN_VOXELS) -> list[Lesion]:
    return [l for l in lesions if l.size >= min_voxels]
