"""Camera, scene transform and transfer function for the raycaster."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..volume import Volume3D, WindowLevel, window_scalar

QUAT_IDENTITY = (0.0, 0.0, 0.0, 1.0)  # (x, y, z, w)


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    ax, ay, az, aw = np.asarray(a, dtype=np.float64)
    bx, by, bz, bw = np.asarray(b, dtype=np.float64)
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=np.float64)
    return np.array([-x, -y, -z, w])


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = angle_rad / 2.0
    return np.array([*(axis * math.sin(half)), math.cos(half)])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion q; v may be (3,) or (N, 3)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[:3]
    w = q[3]
    single = v.ndim == 1
    vv = v[None, :] if single else v
    t = 2.0 * np.cross(u, vv)
    out = vv + w * t + np.cross(u, t)
    return out[0] if single else out


class Projection(enum.Enum):
    ORTHOGRAPHIC = "orthographic"
    PERSPECTIVE = "perspective"


@dataclass(frozen=True)
class Camera:
    """Viewer pose.  Looks along -Z of its own frame; +Y is up, +X right.

    fov_deg is the vertical field of view for perspective projection;
    view_extent_mm is the horizontal width of the orthographic view volume.
    """

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = QUAT_IDENTITY
    projection: Projection = Projection.ORTHOGRAPHIC
    fov_deg: float = 60.0
    view_extent_mm: float = 100.0

    def __post_init__(self):
        n = float(np.linalg.norm(self.rotation))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"camera quaternion norm {n} != 1")
        if self.projection is Projection.PERSPECTIVE and not 0 < self.fov_deg < 180:
            raise ValueError(f"fov_deg {self.fov_deg} outside (0, 180)")
        if self.projection is Projection.ORTHOGRAPHIC and self.view_extent_mm <= 0:
            raise ValueError("view_extent_mm must be > 0")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, up, forward) unit vectors in world space."""
        right = quat_rotate(self.rotation, (1.0, 0.0, 0.0))
        up = quat_rotate(self.rotation, (0.0, 1.0, 0.0))
        forward = quat_rotate(self.rotation, (0.0, 0.0, -1.0))
        return right, up, forward


@dataclass(frozen=True)
class ClipPlane:
    """Axis-aligned clip in the volume's local frame.

    Samples with coordinate below offset_fraction of the volume extent along
    the axis are discarded.
    """

    axis: int  # 0 = x, 1 = y, 2 = z
    offset_fraction: float

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError(f"axis {self.axis}")
        if not 0.0 <= self.offset_fraction <= 1.0:
            raise ValueError(f"offset_fraction {self.offset_fraction} outside [0,1]")


@dataclass(frozen=True)
class TransferFunction:
    """Intensity-to-RGBA lookup.

    The window/level maps a native intensity onto a 0..255 display index;
    the 256-entry table then assigns straight (non-premultiplied) color and
    opacity.  Brightness is already baked into the table.
    """

    window: WindowLevel
    table: np.ndarray  # (256, 4) in [0, 1]
    brightness: float

    def __post_init__(self):
        if self.table.shape != (256, 4):
            raise ValueError(f"table shape {self.table.shape}")
        if not np.all(np.isfinite(self.table)):
            raise ValueError("table entries must be finite")
        t = np.ascontiguousarray(self.table)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def lookup(self, intensity) -> np.ndarray:
        """RGBA for native intensity value(s); shape (..., 4)."""
        idx = window_scalar(intensity, self.window)
        return self.table[idx]

    def alpha_zero_over(self, lo: float, hi: float) -> bool:
        """True when every intensity in [lo, hi] maps to zero opacity."""
        j0 = int(window_scalar(lo, self.window))
        j1 = int(window_scalar(hi, self.window))
        return bool(np.all(self.table[j0 : j1 + 1, 3] == 0.0))


def build_transfer_function(
    wl: WindowLevel, palette: str = "grayscale", brightness: float = 1.0
) -> TransferFunction:
    """Grayscale ramp: windowed intensity j maps to gray j/255 with alpha
    equal to the gray value, scaled by brightness and clamped to [0, 1]."""
    if brightness < 0:
        raise ValueError(f"brightness must be >= 0, got {brightness}")
    if palette != "grayscale":
        raise ValueError(f"unknown palette {palette!r}")
    gray = np.arange(256, dtype=np.float64) / 255.0
    chan = np.clip(gray * brightness, 0.0, 1.0)
    table = np.stack([chan, chan, chan, chan], axis=1)
    return TransferFunction(window=wl, table=table, brightness=brightness)


def default_transfer(kind_hint: str = "normalized") -> TransferFunction:
    """Sensible defaults per intensity domain: [0,1], u8 or HU soft tissue."""
    if kind_hint == "normalized":
        wl = WindowLevel(level=0.5, width=1.0)
    elif kind_hint == "u8":
        wl = WindowLevel(level=127.5, width=255.0)
    else:
        wl = WindowLevel(level=50.0, width=400.0)
    return build_transfer_function(wl)


@dataclass
class SceneState:
    """One viewer's scene: the volume, its transform, clip plane and transfer.

    The transform maps local volume coordinates to world:
    world = rotation * (scale * local) + translation.
    """

    volume: Volume3D | None = None
    transfer: TransferFunction = field(default_factory=default_transfer)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = QUAT_IDENTITY
    scale: float = 1.0
    clip_plane: ClipPlane | None = None

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    def world_to_local(self, points: np.ndarray) -> np.ndarray:
        """Inverse transform for positions."""
        inv_rot = quat_conjugate(quat_normalize(self.rotation))
        return quat_rotate(inv_rot, np.asarray(points, dtype=np.float64) - np.asarray(self.translation)) / self.scale

    def world_dir_to_local(self, dirs: np.ndarray) -> np.ndarray:
        """Inverse transform for directions (no translation; scale cancels on normalize)."""
        inv_rot = quat_conjugate(quat_normalize(self.rotation))
        return quat_rotate(inv_rot, np.asarray(dirs, dtype=np.float64))
