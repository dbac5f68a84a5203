"""Volume container, HU preprocessing, windowing and slice-triplet extraction.

Voxels are kept in a numpy array shaped ``(nz, ny, nx)`` (C order), which is
the x-fastest memory layout used by the on-disk formats.  Volumes are frozen
after construction; every operation returns a new value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRange, IndexOutOfRange

# Liver window from CT practice: intensities outside this band carry no
# liver/lesion signal.
DEFAULT_CLIP_LO = -150.0
DEFAULT_CLIP_HI = 250.0


class IntensityKind(enum.Enum):
    HU = "HU"
    NORMALIZED01 = "Normalized01"
    UINT8 = "Uint8"


@dataclass(frozen=True)
class Volume3D:
    """A 3D voxel grid with physical spacing.

    Attributes:
        voxels: array shaped (nz, ny, nx); voxel (x, y, z) is voxels[z, y, x]
        spacing: (sx, sy, sz) millimeters per voxel
        intensity_kind: semantic of the stored scalars
    """

    voxels: np.ndarray
    spacing: tuple[float, float, float]
    intensity_kind: IntensityKind

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3:
            raise ValueError(f"voxels must be 3D, got shape {vox.shape}")
        if min(vox.shape) < 1:
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        if self.intensity_kind is IntensityKind.NORMALIZED01 and vox.size:
            lo, hi = float(vox.min()), float(vox.max())
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"Normalized01 voxels outside [0,1]: [{lo}, {hi}]")
        vox = np.ascontiguousarray(vox)
        vox.setflags(write=False)
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz) voxel counts."""
        nz, ny, nx = self.voxels.shape
        return (nx, ny, nz)

    @property
    def nx(self) -> int:
        return self.voxels.shape[2]

    @property
    def ny(self) -> int:
        return self.voxels.shape[1]

    @property
    def nz(self) -> int:
        return self.voxels.shape[0]

    def with_voxels(self, voxels: np.ndarray, kind: IntensityKind | None = None) -> "Volume3D":
        """New volume sharing spacing, with replaced voxel data."""
        return Volume3D(voxels, self.spacing, kind or self.intensity_kind)

    def slice_at(self, i: int) -> np.ndarray:
        """Axial slice i as a read-only (ny, nx) view."""
        if not 0 <= i < self.nz:
            raise IndexOutOfRange(f"slice {i} outside [0, {self.nz})")
        return self.voxels[i]


@dataclass(frozen=True)
class WindowLevel:
    """Display window: level is the mid-gray intensity, width the visible range."""

    level: float
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"window width must be > 0, got {self.width}")

    @property
    def lo(self) -> float:
        return self.level - self.width / 2.0

    @property
    def hi(self) -> float:
        return self.level + self.width / 2.0


@dataclass(frozen=True)
class SliceTriplet:
    """Three consecutive axial slices; the center one is the slice of interest."""

    below: np.ndarray
    center: np.ndarray
    above: np.ndarray
    center_index: int

    def __post_init__(self):
        if not (self.below.shape == self.center.shape == self.above.shape):
            raise ValueError("triplet slices must share dims")

    def stacked(self) -> np.ndarray:
        """(3, ny, nx) channel stack, below first."""
        return np.stack([self.below, self.center, self.above])


def clip_and_normalize(
    vol: Volume3D,
    lo: float = DEFAULT_CLIP_LO,
    hi: float = DEFAULT_CLIP_HI,
) -> Volume3D:
    """Clamp intensities to [lo, hi] and map affinely onto [0, 1].

    Air background (e.g. -1024 HU) lands exactly at 0, the top of the
    clip range at 1.
    """
    if lo >= hi:
        raise DegenerateRange(f"need lo < hi, got [{lo}, {hi}]")
    v = vol.voxels.astype(np.float32)
    clipped = np.clip(v, lo, hi)
    out = (clipped - np.float32(lo)) / (np.float32(hi) - np.float32(lo))
    return Volume3D(out, vol.spacing, IntensityKind.NORMALIZED01)


def window_scalar(values: np.ndarray | float, wl: WindowLevel) -> np.ndarray:
    """Map intensities through a window/level ramp to u8.

    At or below the window bottom -> 0, at or above the top -> 255, linear
    in between with round-half-up.
    """
    v = np.asarray(values, dtype=np.float64)
    t = np.clip((v - wl.lo) / wl.width, 0.0, 1.0)
    return np.floor(255.0 * t + 0.5).astype(np.uint8)


def apply_window_level(image: np.ndarray, wl: WindowLevel) -> np.ndarray:
    """Window/level a 2D intensity image into a u8 display image."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    return window_scalar(img, wl)


def slice_triplet(vol: Volume3D, i: int) -> SliceTriplet:
    """Slices (i-1, i, i+1) with edge slices duplicated at the boundaries."""
    if not 0 <= i < vol.nz:
        raise IndexOutOfRange(f"slice {i} outside [0, {vol.nz})")
    below = vol.voxels[max(i - 1, 0)]
    above = vol.voxels[min(i + 1, vol.nz - 1)]
    return SliceTriplet(below=below, center=vol.voxels[i], above=above, center_index=i)
