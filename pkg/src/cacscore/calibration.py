"""Linear calibration of automated against manual Agatston scores."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .errors import DegenerateInput, InputError

LOA_Z = 1.96

Direction = Literal["automated_on_manual", "manual_on_automated"]


class ZeroSlope(DegenerateInput):
    pass


@dataclass(frozen=True)
class CalibrationModel:
    """``automated = slope * manual + intercept`` (or the reverse when swapped)."""

    slope: float
    intercept: float
    r2: float | None = None
    n: int | None = None
    direction: Direction = "automated_on_manual"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        try:
            slope = float(d["slope"])
            intercept = float(d["intercept"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"calibration model needs numeric slope and intercept: {exc!r}") from exc
        r2 = d.get("r2")
        n = d.get("n")
        direction = d.get("direction", "automated_on_manual")
        if direction not in ("automated_on_manual", "manual_on_automated"):
            raise InputError(f"unknown regression direction {direction!r}")
        return cls(slope, intercept, None if r2 is None else float(r2), None if n is None else int(n), direction)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationModel":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise InputError(f"{path}: model must be a JSON object")
        try:
            return cls.from_dict(d)
        except InputError as exc:
            raise InputError(f"{path}: {exc}") from exc


# Published nnU-Net-versus-manual regression, used as the default correction.
DEFAULT_MODEL = CalibrationModel(slope=0.841, intercept=16.0, r2=0.97)


def _pairs_array(pairs: Iterable[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def fit_linear(
    pairs: Iterable[tuple[float, float]], direction: Direction = "automated_on_manual"
) -> CalibrationModel:
    """Ordinary least squares over ``(manual, automated)`` pairs.

    By default automated is the response and manual the predictor; the
    other direction swaps the roles.
    """
    manual, automated = _pairs_array(pairs)
    x, y = (manual, automated) if direction == "automated_on_manual" else (automated, manual)
    n = len(x)
    if n < 2:
        raise DegenerateInput(f"need at least 2 pairs, got {n}")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateInput("predictor values are all identical")
    slope = float(dx @ dy) / sxx
    intercept = float(my - slope * mx)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(dy @ dy)
    # constant response is fitted exactly by a flat line
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return CalibrationModel(slope, intercept, min(max(r2, 0.0), 1.0), n, direction)


def apply_correction(model: CalibrationModel, automated: float) -> float:
    """Map an automated score to its manual-equivalent, clamped at 0."""
    if model.direction == "manual_on_automated":
        corrected = model.slope * automated + model.intercept
    else:
        if model.slope == 0:
            raise ZeroSlope("cannot invert a calibration with zero slope")
        corrected = (automated - model.intercept) / model.slope
    return max(corrected, 0.0)


@dataclass
class BlandAltman:
    mean_diff: float
    sd_diff: float
    loa_low: float
    loa_high: float
    points: list[tuple[float, float]]


def bland_altman(pairs: Iterable[tuple[float, float]]) -> BlandAltman:
    """Agreement statistics of automated minus manual."""
    manual, automated = _pairs_array(pairs)
    if len(manual) < 2:
        raise DegenerateInput(f"need at least 2 pairs, got {len(manual)}")
    diff = automated - manual
    mean = (automated + manual) / 2.0
    md = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if not math.isfinite(sd):
        raise DegenerateInput("non-finite difference spread")
    points = list(zip(mean.tolist(), diff.tolist()))
    return BlandAltman(md, sd, md - LOA_Z * sd, md + LOA_Z * sd, points)
