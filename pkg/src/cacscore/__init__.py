"""Coronary artery calcium detection, Agatston scoring and score calibration."""

from .agatston import AgatstonReport, density_weight, lesion_score, risk_category, total_score
from .calibration import DEFAULT_MODEL, BlandAltman, CalibrationModel, apply_correction, bland_altman, fit_linear
from .detect import detect_classical, ingest_predictions
from .errors import CacScoreError, DegenerateInput, GeometryMismatch, InputError
from .evaluation import DetectionReport, aggregate_counts, match_lesions, summarize_dice
from .lesion import Lesion, connected_components, extract_lesions, filter_min_size, threshold_mask
from .mask_ops import StructuringElement, build_cardiac_roi, convex_hull_slicewise, dilate, negate, union
from .volume_io import LabelMask, OrganMasks, Volume, parse_nifti, read_nifti, resample_axial, write_nifti

__version__ = "0.1.0"

__all__ = [
    "AgatstonReport", "BlandAltman", "CacScoreError", "CalibrationModel", "DEFAULT_MODEL",
    "DegenerateInput", "DetectionReport", "GeometryMismatch", "InputError", "LabelMask", "Lesion",
    "OrganMasks", "StructuringElement", "Volume", "aggregate_counts", "apply_correction",
    "bland_altman", "build_cardiac_roi", "connected_components", "convex_hull_slicewise",
    "density_weight", "detect_classical", "dilate", "extract_lesions", "filter_min_size",
    "fit_linear", "ingest_predictions", "lesion_score", "match_lesions", "negate", "parse_nifti",
    "read_nifti", "resample_axial", "risk_category", "summarize_dice", "threshold_mask",
    "total_score", "union", "write_nifti",
]
