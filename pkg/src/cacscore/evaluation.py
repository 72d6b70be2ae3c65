"""Lesion-level detection metrics: overlap matching, precision, recall, Dice."""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput
from .volume_io import LabelMask, require_same_geometry


class EmptyInput(DegenerateInput):
    pass


@dataclass
class DetectionReport:
    tp: int
    fp: int
    fn: int
    precision: float | None  # None when tp + fp == 0
    recall: float | None  # None when tp + fn == 0
    dice_values: list[float] = field(default_factory=list)
    pairs: list[tuple[int, int]] = field(default_factory=list)

    @property
    def dice_mean(self) -> float | None:
        return summarize_dice(self.dice_values)[0] if self.dice_values else None

    @property
    def dice_sd(self) -> float | None:
        return summarize_dice(self.dice_values)[1] if self.dice_values else None

    def to_dict(self) -> dict:
        mean, sd = self.dice_mean, self.dice_sd
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "dice_values": self.dice_values,
            "dice_mean": mean,
            "dice_sd": sd,
            "dice": None if mean is None else f"{mean:.2f}±{sd:.2f}",
            "pairs": [list(p) for p in self.pairs],
        }


def aggregate_counts(tp: int, fp: int, fn: int) -> tuple[float | None, float | None]:
    """Precision and recall; a metric with a zero denominator is ``None``."""
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


def summarize_dice(values: list[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1); sd is 0 for a single value."""
    if len(values) == 0:
        raise EmptyInput("no Dice values to summarize")
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


def match_lesions(pred: LabelMask, gt: LabelMask) -> DetectionReport:
    """Count detections by any-voxel overlap and pair each TP for Dice.

    Every distinct nonzero label is one lesion. A predicted lesion touching
    any ground-truth lesion is a TP, paired with the ground-truth lesion it
    overlaps most (smaller id on ties). Several predictions may pair with
    the same ground-truth lesion.
    """
    require_same_geometry(pred, gt)
    p = pred.data.ravel().astype(np.int64)
    g = gt.data.ravel().astype(np.int64)
    p_ids, p_sizes = np.unique(p[p != 0], return_counts=True)
    g_ids, g_sizes = np.unique(g[g != 0], return_counts=True)
    p_size = dict(zip(p_ids.tolist(), p_sizes.tolist()))
    g_size = dict(zip(g_ids.tolist(), g_sizes.tolist()))

    both = (p != 0) & (g != 0)
    pairs_arr, inter = np.unique(np.stack([p[both], g[both]]), axis=1, return_counts=True)
    best: dict[int, tuple[int, int]] = {}  # pred id -> (gt id, intersection)
    for pid, gid, n in zip(pairs_arr[0].tolist(), pairs_arr[1].tolist(), inter.tolist()):
        cur = best.get(pid)
        if cur is None or n > cur[1] or (n == cur[1] and gid < cur[0]):
            best[pid] = (gid, n)

    tp = len(best)
    fp = len(p_size) - tp
    hit_gt = set(pairs_arr[1].tolist())
    fn = len(g_size) - len(hit_gt)

    pairs, dice = [], []
    for pid in sorted(best):
        gid, n = best[pid]
        pairs.append((pid, gid))
        dice.append(2.0 * n / (p_size[pid] + g_size[gid]))
    precision, recall = aggregate_counts(tp, fp, fn)
    return DetectionReport(tp, fp, fn, precision, recall, dice, pairs)


def combine_reports(reports: list[DetectionReport]) -> DetectionReport:
    """Pool per-volume reports into one by summing counts."""
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    precision, recall = aggregate_counts(tp, fp, fn)
    dice = [d for r in reports for d in r.dice_values]
    return DetectionReport(tp, fp, fn, precision, recall, dice, [])
