"""Post-segmentation stages: slice-profile Gaussian fit, ROI cropping,
liver masking, detector-box placement and the segmentation/detector
agreement filter.

Masks are numpy arrays shaped (nz, ny, nx) for volumes and (ny, nx) for
single slices; anything nonzero counts as positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimsMismatch, EmptyMask, SliceTooSmall

INNER_EDGE = 50  # detector window edge in pixels
CONTEXT_MARGIN = 15  # extra context on each side
STRIDE = 25  # 50% window overlap
MIN_LIVER_PIXELS = INNER_EDGE * INNER_EDGE // 4  # 25% of the window area
MIN_LESION_PIXELS = 50


@dataclass(frozen=True)
class SliceGaussianFit:
    """Moments of the per-slice positive-count profile."""

    mean: float
    variance: float
    total_positive: int


@dataclass(frozen=True)
class RoiBox:
    """Inclusive voxel-index bounding box."""

    min_corner: tuple[int, int, int]  # (x, y, z)
    max_corner: tuple[int, int, int]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.min_corner, self.max_corner)):
            raise ValueError(f"min {self.min_corner} > max {self.max_corner}")

    @property
    def shape_zyx(self) -> tuple[int, int, int]:
        (x0, y0, z0), (x1, y1, z1) = self.min_corner, self.max_corner
        return (z1 - z0 + 1, y1 - y0 + 1, x1 - x0 + 1)

    def slices(self) -> tuple[slice, slice, slice]:
        (x0, y0, z0), (x1, y1, z1) = self.min_corner, self.max_corner
        return (slice(z0, z1 + 1), slice(y0, y1 + 1), slice(x0, x1 + 1))

    def embed(self, cropped: np.ndarray, full_shape_zyx, fill=0) -> np.ndarray:
        """Place a cropped array back into full-volume coordinates."""
        if cropped.shape != self.shape_zyx:
            raise DimsMismatch(f"cropped {cropped.shape} != box {self.shape_zyx}")
        out = np.full(full_shape_zyx, fill, dtype=cropped.dtype)
        out[self.slices()] = cropped
        return out


@dataclass
class DetectorBox:
    """One sliding-window placement: 50x50 inner window plus clamped context."""

    slice_index: int
    x: int  # inner window origin (column)
    y: int  # inner window origin (row)
    context: tuple[int, int, int, int]  # (x0, y0, x1, y1) inclusive
    verdict: str = "unset"  # unset | positive | negative

    @property
    def inner(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.x + INNER_EDGE - 1, self.y + INNER_EDGE - 1)

    def contains(self, x: int, y: int) -> bool:
        x0, y0, x1, y1 = self.inner
        return x0 <= x <= x1 and y0 <= y <= y1


def fit_slice_gaussian(mask: np.ndarray) -> SliceGaussianFit:
    """Weighted moments of positive counts over the slice axis."""
    mask = np.asarray(mask)
    counts = np.count_nonzero(mask.reshape(mask.shape[0], -1) != 0, axis=1).astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EmptyMask("no positive voxels to fit")
    z = np.arange(mask.shape[0], dtype=np.float64)
    mean = float((z * counts).sum() / total)
    variance = float((((z - mean) ** 2) * counts).sum() / total)
    return SliceGaussianFit(mean=mean, variance=variance, total_positive=int(total))


def select_slice_range(fit: SliceGaussianFit, nz: int, k_sigma: float = 2.0) -> tuple[int, int]:
    """Inclusive slice interval mean +- k_sigma*sigma, endpoints rounded inward.

    Slices outside the interval are unlikely to contain lesions and are
    dropped.  If inward rounding crosses over (possible for tiny sigma and a
    fractional mean), the interval collapses to the slice nearest the mean.
    """
    if k_sigma <= 0:
        raise ValueError(f"k_sigma must be > 0, got {k_sigma}")
    sigma = math.sqrt(fit.variance)
    lo = math.ceil(fit.mean - k_sigma * sigma)
    hi = math.floor(fit.mean + k_sigma * sigma)
    if lo > hi:
        lo = hi = int(math.floor(fit.mean + 0.5))
    return (max(lo, 0), min(hi, nz - 1))


def crop_roi(
    values: np.ndarray, liver_mask: np.ndarray, margin_voxels: int = 10
) -> tuple[np.ndarray, RoiBox]:
    """Crop to the mask's bounding box grown by a margin and clamped to dims."""
    values = np.asarray(values)
    liver_mask = np.asarray(liver_mask)
    if values.shape != liver_mask.shape:
        raise DimsMismatch(f"values {values.shape} vs mask {liver_mask.shape}")
    zz, yy, xx = np.nonzero(liver_mask)
    if len(zz) == 0:
        raise EmptyMask("liver mask has no positive voxels")
    nz, ny, nx = liver_mask.shape
    m = margin_voxels
    box = RoiBox(
        min_corner=(max(int(xx.min()) - m, 0), max(int(yy.min()) - m, 0), max(int(zz.min()) - m, 0)),
        max_corner=(
            min(int(xx.max()) + m, nx - 1),
            min(int(yy.max()) + m, ny - 1),
            min(int(zz.max()) + m, nz - 1),
        ),
    )
    return values[box.slices()].copy(), box


def mask_restrict(lesion_prob: np.ndarray, liver_mask: np.ndarray) -> np.ndarray:
    """Zero the probability everywhere outside the liver mask."""
    lesion_prob = np.asarray(lesion_prob)
    liver_mask = np.asarray(liver_mask)
    if lesion_prob.shape != liver_mask.shape:
        raise DimsMismatch(f"prob {lesion_prob.shape} vs mask {liver_mask.shape}")
    return np.where(liver_mask != 0, lesion_prob, 0)


def _context_for(x: int, y: int, width: int, height: int) -> tuple[int, int, int, int]:
    # the margin shrinks at image borders; the inner window never does
    return (
        max(x - CONTEXT_MARGIN, 0),
        max(y - CONTEXT_MARGIN, 0),
        min(x + INNER_EDGE - 1 + CONTEXT_MARGIN, width - 1),
        min(y + INNER_EDGE - 1 + CONTEXT_MARGIN, height - 1),
    )


def place_detector_boxes(liver_mask_slice: np.ndarray, slice_index: int = 0) -> list[DetectorBox]:
    """Slide 50x50 windows at stride 25; keep those >= 25% covered by liver.

    Boxes are returned row-major by window origin.
    """
    mask = np.asarray(liver_mask_slice) != 0
    if mask.ndim != 2:
        raise ValueError(f"expected a 2D slice, got shape {mask.shape}")
    height, width = mask.shape
    if height < INNER_EDGE or width < INNER_EDGE:
        raise SliceTooSmall(f"slice {width}x{height} smaller than {INNER_EDGE}x{INNER_EDGE}")

    # summed-area table makes each window count O(1)
    integral = np.zeros((height + 1, width + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)

    boxes = []
    for y in range(0, height - INNER_EDGE + 1, STRIDE):
        for x in range(0, width - INNER_EDGE + 1, STRIDE):
            y1, x1 = y + INNER_EDGE, x + INNER_EDGE
            covered = int(
                integral[y1, x1] - integral[y, x1] - integral[y1, x] + integral[y, x]
            )
            if covered >= MIN_LIVER_PIXELS:
                boxes.append(
                    DetectorBox(
                        slice_index=slice_index,
                        x=x,
                        y=y,
                        context=_context_for(x, y, width, height),
                    )
                )
    return boxes


def classify_box(box: DetectorBox, lesion_slice: np.ndarray, predicate=None) -> DetectorBox:
    """Attach a verdict to a placed box.

    The classifier is pluggable: `predicate` receives the context-window
    crop of `lesion_slice` and the box, and returns truthy for a lesion.
    The built-in stand-in marks positive when at least 50 lesion pixels fall
    inside the inner window.
    """
    lesion = np.asarray(lesion_slice)
    if predicate is None:
        x0, y0, x1, y1 = box.inner
        positive = int(np.count_nonzero(lesion[y0 : y1 + 1, x0 : x1 + 1])) >= MIN_LESION_PIXELS
    else:
        cx0, cy0, cx1, cy1 = box.context
        positive = bool(predicate(lesion[cy0 : cy1 + 1, cx0 : cx1 + 1], box))
    box.verdict = "positive" if positive else "negative"
    return box


def agreement_filter(lesion_mask: np.ndarray, boxes: list[DetectorBox]) -> np.ndarray:
    """Keep a lesion voxel only where a positive box's inner window covers it."""
    lesion_mask = np.asarray(lesion_mask)
    vol = lesion_mask.ndim == 3
    keep = np.zeros(lesion_mask.shape, dtype=bool)
    for box in boxes:
        if box.verdict != "positive":
            continue
        x0, y0, x1, y1 = box.inner
        if vol:
            if 0 <= box.slice_index < lesion_mask.shape[0]:
                keep[box.slice_index, y0 : y1 + 1, x0 : x1 + 1] = True
        else:
            keep[y0 : y1 + 1, x0 : x1 + 1] = True
    return np.where(keep, lesion_mask, 0)
