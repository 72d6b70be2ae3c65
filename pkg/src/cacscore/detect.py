"""Plaque detection: a classical threshold baseline and external-mask ingestion.

Both paths end in the same full26 component labelling and minimum-size
filter, so lesion identity means the same thing whichever detector ran.
"""
from __future__ import annotations

import numpy as np

from .lesion import (
    CALCIUM_THRESHOLD_HU,
    DEFAULT_MIN_VOXELS,
    connected_components,
    relabel_scan_order,
)
from .volume_io import LabelMask, Volume, require_same_geometry


def _drop_small(labels: LabelMask, min_voxels: int) -> LabelMask:
    counts = np.bincount(labels.data.ravel())
    small = counts < min_voxels
    small[0] = False
    data = labels.data.copy()
    data[small[data]] = 0
    return LabelMask.like(labels, relabel_scan_order(data))


def detect_classical(
    v: Volume,
    roi: LabelMask,
    threshold_hu: float = CALCIUM_THRESHOLD_HU,
    min_voxels: int = DEFAULT_MIN_VOXELS,
) -> LabelMask:
    require_same_geometry(v, roi)
    candidate = (v.data >= threshold_hu) & (roi.data != 0)
    labels = connected_components(LabelMask.like(roi, candidate.astype(np.uint8)), "full26")
    return _drop_small(labels, min_voxels)


def ingest_predictions(
    mask: LabelMask, min_voxels: int = DEFAULT_MIN_VOXELS, reference: Volume | None = None
) -> LabelMask:
    """Binarize an external prediction and re-derive its lesion components."""
    if reference is not None:
        require_same_geometry(reference, mask)
    binary = LabelMask.like(mask, (mask.data != 0).astype(np.uint8))
    return _drop_small(connected_components(binary, "full26"), min_voxels)
