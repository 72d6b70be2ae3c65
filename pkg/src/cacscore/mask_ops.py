"""Binary mask algebra and cardiac region-of-interest composition."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from .volume_io import LabelMask, OrganMasks, require_same_geometry

DEFAULT_DILATION_RADIUS = 3


@dataclass(frozen=True)
class StructuringElement:
    """Dilation kernel in voxel units.

    ``face6`` and ``full26`` are the unit 3D neighbourhoods (7 and 27 offsets
    including the centre). ``ball`` is the ``radius``-fold iterate of the
    unit kernel named by ``connectivity``: an L1 diamond for face6, a cube
    for full26. ``ball(0)`` is the centre voxel alone.
    """

    kind: Literal["face6", "full26", "ball"] = "face6"
    radius: int = 1
    connectivity: Literal["face6", "full26"] = "face6"

    def __post_init__(self) -> None:
        if self.kind not in ("face6", "full26", "ball"):
            raise ValueError(f"unknown structuring element {self.kind!r}")
        if self.connectivity not in ("face6", "full26"):
            raise ValueError(f"unknown connectivity {self.connectivity!r}")
        if self.radius < 0 or int(self.radius) != self.radius:
            raise ValueError("radius must be a non-negative integer")

    @classmethod
    def ball(cls, radius: int, connectivity: Literal["face6", "full26"] = "face6") -> "StructuringElement":
        return cls("ball", int(radius), connectivity)

    def kernel(self) -> np.ndarray:
        """Boolean kernel array of odd side length, centred."""
        if self.kind == "face6":
            return ndimage.generate_binary_structure(3, 1)
        if self.kind == "full26":
            return ndimage.generate_binary_structure(3, 3)
        r = self.radius
        d = np.abs(np.indices((2 * r + 1,) * 3) - r)
        if self.connectivity == "face6":
            return d.sum(axis=0) <= r
        return d.max(axis=0) <= r

    def offsets(self) -> np.ndarray:
        k = self.kernel()
        c = k.shape[0] // 2
        return np.argwhere(k) - c


def _binary(m: LabelMask) -> np.ndarray:
    return m.data != 0


def _as_mask(ref: LabelMask, data: np.ndarray) -> LabelMask:
    return LabelMask.like(ref, data.astype(np.uint8))


def union(a: LabelMask, b: LabelMask) -> LabelMask:
    require_same_geometry(a, b)
    return _as_mask(a, _binary(a) | _binary(b))


def intersect(a: LabelMask, b: LabelMask) -> LabelMask:
    require_same_geometry(a, b)
    return _as_mask(a, _binary(a) & _binary(b))


def negate(m: LabelMask) -> LabelMask:
    return _as_mask(m, ~_binary(m))


def dilate(m: LabelMask, se: StructuringElement) -> LabelMask:
    """Binary dilation; the grid outside the volume counts as background."""
    src = _binary(m)
    if se.kind == "ball" and se.radius == 0:
        return _as_mask(m, src)
    out = ndimage.binary_dilation(src, structure=se.kernel(), border_value=0)
    return _as_mask(m, out)


# ---------------------------------------------------------------- convex hull


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> int:
    return int((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def _hull_2d(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices (Andrew's monotone chain), no collinear points."""
    pts = points[np.lexsort((points[:, 1], points[:, 0]))]
    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def _fill_slice(sl: np.ndarray) -> np.ndarray:
    ij = np.argwhere(sl).astype(np.int64)
    if len(ij) < 3:
        return sl
    # Only the extreme voxels of each row can be hull vertices.
    rows = ij[:, 0]
    order = np.argsort(rows, kind="stable")
    ij = ij[order]
    starts = np.r_[0, np.flatnonzero(np.diff(ij[:, 0])) + 1]
    ends = np.r_[starts[1:], len(ij)] - 1
    cand = np.unique(np.vstack([ij[starts], ij[ends]]), axis=0)
    hull = _hull_2d(cand)
    if len(hull) < 3:
        return sl  # collinear: degenerate hull

    lo = hull.min(axis=0)
    hi = hull.max(axis=0)
    gi, gj = np.meshgrid(
        np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij"
    )
    inside = np.ones(gi.shape, dtype=bool)
    nxt = np.roll(hull, -1, axis=0)
    for (ai, aj), (bi, bj) in zip(hull, nxt):
        # boundary-inclusive: cross >= 0 for a CCW polygon
        inside &= (bi - ai) * (gj - aj) - (bj - aj) * (gi - ai) >= 0
    out = sl.copy()
    out[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1] |= inside
    return out


def convex_hull_slicewise(m: LabelMask) -> LabelMask:
    """Fill each axial slice with the lattice points of its 2D convex hull.

    A voxel centre on the hull boundary counts as inside. Slices whose set
    voxels are fewer than three or all collinear are returned as-is.
    """
    src = _binary(m)
    out = np.empty_like(src)
    for k in range(src.shape[2]):
        out[:, :, k] = _fill_slice(src[:, :, k])
    return _as_mask(m, out)


def build_cardiac_roi(organs: OrganMasks, dilation_radius: int = DEFAULT_DILATION_RADIUS) -> LabelMask:
    """Heart and aorta, dilated, hulled per slice, with lung voxels removed."""
    cardiac = union(organs.heart, organs.aorta)
    grown = dilate(cardiac, StructuringElement.ball(dilation_radius, "face6"))
    hulled = convex_hull_slicewise(grown)
    return intersect(hulled, negate(organs.lungs))
