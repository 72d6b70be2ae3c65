"""Agatston calcium scoring.

Each axial cross-section of a lesion contributes its calcified area (mm^2)
times a density weight taken from that slice's peak attenuation. Scores
are normalised to 3 mm slices by ``thickness / 3``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lesion import CALCIUM_THRESHOLD_HU, Lesion, extract_lesions
from .volume_io import LabelMask, Volume, require_same_geometry

REFERENCE_THICKNESS_MM = 3.0

# (lower bound HU, weight); weight 0 below the first bound
_WEIGHT_BINS = ((130.0, 1), (200.0, 2), (300.0, 3), (400.0, 4))

# (upper bound inclusive, name); anything above the last bound is "severe"
_CATEGORY_BINS = ((0.0, "zero"), (10.0, "minimal"), (100.0, "mild"), (400.0, "moderate"))


def density_weight(peak_hu: float) -> int:
    w = 0
    for lower, weight in _WEIGHT_BINS:
        if peak_hu >= lower:
            w = weight
    return w


def risk_category(total: float) -> str:
    if total < 0:
        raise ValueError("Agatston total must be non-negative")
    for upper, name in _CATEGORY_BINS:
        if total <= upper:
            return name
    return "severe"


def lesion_score(lesion: Lesion, slice_thickness_mm: float) -> float:
    s = sum(sl.area_mm2 * density_weight(sl.peak_hu) for sl in lesion.per_slice)
    return (slice_thickness_mm / REFERENCE_THICKNESS_MM) * s


@dataclass
class AgatstonReport:
    total: float
    per_lesion: list[tuple[int, float]]
    category: str
    slice_thickness_mm: float
    threshold_hu: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready dict with scores rounded to 2 decimals."""
        d = {
            "total": round(self.total, 2),
            "category": self.category,
            "slice_thickness_mm": self.slice_thickness_mm,
            "threshold_hu": self.threshold_hu,
            "per_lesion": [{"id": i, "score": round(s, 2)} for i, s in self.per_lesion],
        }
        d.update(self.extra)
        return d


def report_from_lesions(
    lesions: list[Lesion], slice_thickness_mm: float, threshold_hu: float = CALCIUM_THRESHOLD_HU
) -> AgatstonReport:
    per = [(l.id, lesion_score(l, slice_thickness_mm)) for l in sorted(lesions, key=lambda l: l.id)]
    total = 0.0
    for _, s in per:  # fixed ascending-id order keeps totals bit-stable
        total += s
    return AgatstonReport(total, per, risk_category(total), slice_thickness_mm, threshold_hu)


def total_score(
    v: Volume,
    labels: LabelMask,
    threshold_hu: float = CALCIUM_THRESHOLD_HU,
    slice_thickness_mm: float | None = None,
) -> AgatstonReport:
    """Score every labelled lesion of ``labels`` over ``v``.

    Only voxels at or above ``threshold_hu`` count towards a lesion's area;
    lesions with no such voxel are dropped. The slice thickness defaults to
    the volume's z spacing.
    """
    require_same_geometry(v, labels)
    if slice_thickness_mm is None:
        slice_thickness_mm = v.spacing[2]
    calcified = np.where(v.data >= threshold_hu, labels.data, 0)
    lesions = extract_lesions(v, LabelMask.like(labels, calcified))
    return report_from_lesions(lesions, slice_thickness_mm, threshold_hu)
