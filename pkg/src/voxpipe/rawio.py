"""Raw voxel file + JSON sidecar I/O.

The sidecar is a small human-readable JSON document describing the raw
file's layout; unknown fields are ignored so the format can grow.  A
write-then-read round trip is bit-exact on voxels, dims and spacing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SidecarMismatch, UnsupportedScalarType
from .volume import IntensityKind, Volume3D

_SCALAR_DTYPES = {
    "i16": np.dtype(np.int16),
    "u8": np.dtype(np.uint8),
    "f32": np.dtype(np.float32),
}

_SCALAR_FOR_KIND = {np.dtype(np.int16): "i16", np.dtype(np.uint8): "u8", np.dtype(np.float32): "f32"}


@dataclass(frozen=True)
class VolumeSidecar:
    """Layout metadata for a companion .raw voxel file."""

    dims: tuple[int, int, int]  # (nx, ny, nz)
    spacing: tuple[float, float, float]
    scalar_type: str  # i16 | u8 | f32
    endianness: str  # little | big
    intensity_kind: IntensityKind

    def __post_init__(self):
        if self.scalar_type not in _SCALAR_DTYPES:
            raise UnsupportedScalarType(f"scalar_type {self.scalar_type!r}")
        if self.endianness not in ("little", "big"):
            raise ValueError(f"endianness {self.endianness!r}")

    @property
    def dtype(self) -> np.dtype:
        base = _SCALAR_DTYPES[self.scalar_type]
        return base.newbyteorder("<" if self.endianness == "little" else ">")

    @property
    def expected_bytes(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz * self.dtype.itemsize

    def to_json(self) -> str:
        return json.dumps(
            {
                "dims": list(self.dims),
                "spacing": list(self.spacing),
                "scalar_type": self.scalar_type,
                "endianness": self.endianness,
                "intensity_kind": self.intensity_kind.value,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "VolumeSidecar":
        doc = json.loads(text)
        # Unknown fields tolerated by picking only the ones we model.
        return cls(
            dims=tuple(int(d) for d in doc["dims"]),
            spacing=tuple(float(s) for s in doc["spacing"]),
            scalar_type=doc["scalar_type"],
            endianness=doc["endianness"],
            intensity_kind=IntensityKind(doc["intensity_kind"]),
        )


def _scalar_type_for(vol: Volume3D) -> str:
    dt = vol.voxels.dtype.newbyteorder("=")
    if dt not in _SCALAR_FOR_KIND:
        raise UnsupportedScalarType(f"volume dtype {vol.voxels.dtype} not representable, use i16/u8/f32")
    return _SCALAR_FOR_KIND[dt]


def write_raw_sidecar(vol: Volume3D, raw_path, sidecar_path, endianness: str = "little") -> VolumeSidecar:
    """Write voxels (x-fastest) to raw_path and metadata JSON to sidecar_path."""
    sidecar = VolumeSidecar(
        dims=vol.dims,
        spacing=vol.spacing,
        scalar_type=_scalar_type_for(vol),
        endianness=endianness,
        intensity_kind=vol.intensity_kind,
    )
    data = np.ascontiguousarray(vol.voxels).astype(sidecar.dtype, copy=False)
    Path(raw_path).write_bytes(data.tobytes())
    Path(sidecar_path).write_text(sidecar.to_json())
    return sidecar


def read_raw_sidecar(raw_path, sidecar_path) -> Volume3D:
    """Load a raw voxel file described by its JSON sidecar."""
    sidecar = VolumeSidecar.from_json(Path(sidecar_path).read_text())
    raw = Path(raw_path).read_bytes()
    if len(raw) != sidecar.expected_bytes:
        raise SidecarMismatch(
            f"raw file has {len(raw)} bytes, sidecar implies {sidecar.expected_bytes}"
        )
    nx, ny, nz = sidecar.dims
    voxels = np.frombuffer(raw, dtype=sidecar.dtype).reshape(nz, ny, nx)
    voxels = voxels.astype(sidecar.dtype.newbyteorder("="))
    return Volume3D(voxels, sidecar.spacing, sidecar.intensity_kind)


def sidecar_path_for(raw_path) -> Path:
    """Conventional sidecar location: same stem, .json suffix."""
    p = Path(raw_path)
    return p.with_suffix(".json")
