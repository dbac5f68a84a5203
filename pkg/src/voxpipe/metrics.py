"""Segmentation losses and overlap metrics.

Masks and predictions are numpy arrays; binary masks are anything that
compares against zero.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimsMismatch, EmptySequence, NoPositiveImages

EPS = 1e-7  # probability clamp before logs


@dataclass(frozen=True)
class BalanceWeights:
    """Normalized class-balance fractions, w_plus + w_minus == 1."""

    w_plus: float
    w_minus: float


@dataclass(frozen=True)
class SegmentationScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def bce(y, y_hat):
    """Per-pixel binary cross entropy, -y*log(p) - (1-y)*log(1-p).

    Predictions are clamped to [EPS, 1-EPS] so exact 0/1 inputs stay finite.
    Accepts scalars or arrays (elementwise).
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), EPS, 1.0 - EPS)
    out = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(out) if out.ndim == 0 else out


def weighted_bce(y, y_hat, w: float):
    """Class-balanced BCE: the positive term scaled by (1-w), negative by w."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"w must be in [0,1], got {w}")
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), EPS, 1.0 - EPS)
    out = -((1.0 - w) * y * np.log(p) + w * (1.0 - y) * np.log(1.0 - p))
    return float(out) if out.ndim == 0 else out


def balancing_weights(masks: Sequence[np.ndarray]) -> BalanceWeights:
    """Global balance factors from a stack of truth masks.

    The positive fraction counts positives against the voxels of only those
    images that contain at least one positive; the negative fraction counts
    negatives against all voxels.  The pair is then normalized to sum to 1.

    Raises NoPositiveImages when no mask has a positive voxel; callers fall
    back to the unweighted loss.
    """
    if len(masks) == 0:
        raise EmptySequence("need at least one mask")
    first = np.asarray(masks[0])
    total_pos = 0
    total_vox = 0
    vox_in_positive_images = 0
    for m in masks:
        m = np.asarray(m)
        if m.shape != first.shape:
            raise DimsMismatch(f"mask shape {m.shape} != {first.shape}")
        pos = int(np.count_nonzero(m))
        total_pos += pos
        total_vox += m.size
        if pos > 0:
            vox_in_positive_images += m.size
    if vox_in_positive_images == 0:
        raise NoPositiveImages("no mask contains a positive voxel")
    w_plus_raw = total_pos / vox_in_positive_images
    w_minus_raw = (total_vox - total_pos) / total_vox
    norm = w_plus_raw + w_minus_raw
    return BalanceWeights(w_plus=w_plus_raw / norm, w_minus=w_minus_raw / norm)


def score_masks(pred: np.ndarray, truth: np.ndarray) -> SegmentationScore:
    """Voxelwise precision/recall/F1 between two binary masks.

    Empty-mask convention: both empty scores 1.0 (nothing to find, nothing
    claimed), exactly one empty scores 0.0.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimsMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    p = pred != 0
    t = truth != 0
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))

    if tp + fp + fn == 0:
        return SegmentationScore(1.0, 1.0, 1.0, tp, fp, fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SegmentationScore(precision, recall, f1, tp, fp, fn)


def dice_per_case(scores: Sequence[float]) -> float:
    """Mean of per-volume dice scores (one score per patient)."""
    if len(scores) == 0:
        raise EmptySequence("no per-case scores")
    vals = [float(s) for s in scores]
    if any(not 0.0 <= v <= 1.0 for v in vals):
        raise ValueError("dice scores must lie in [0,1]")
    return float(np.mean(vals))
