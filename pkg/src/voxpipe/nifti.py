"""Minimal NIfTI-1 reader: single-file .nii, scalar types i16/u8/f32.

Only the header fields the pipeline needs are decoded (dim, pixdim,
datatype, vox_offset); orientation matrices and the rest of the header are
ignored.  Byte order is inferred from dim[0]: a value outside 1..7 under the
assumed order means the header was written swapped.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagic, InvalidDims, TruncatedData, UnsupportedScalarType
from .volume import IntensityKind, Volume3D

HEADER_SIZE = 348
MIN_FILE_SIZE = 352  # header + the 4 bytes before the standard vox_offset
MAGIC_SINGLE = b"n+1\x00"

# NIfTI-1 datatype codes for the supported scalar types.
_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
}

_KIND_FOR_DTYPE = {
    2: IntensityKind.UINT8,
    4: IntensityKind.HU,
    16: IntensityKind.HU,
}


def _read_dim0(data: bytes, order: str) -> int:
    return struct.unpack_from(order + "h", data, 40)[0]


def parse_nifti(data: bytes) -> Volume3D:
    """Decode a .nii byte string into a Volume3D.

    Raises:
        TruncatedData: fewer bytes than the header or the voxel grid needs
        BadMagic: wrong magic string or sizeof_hdr
        InvalidDims: dim[] fields unusable (including multi-frame files)
        UnsupportedScalarType: datatype other than u8/i16/f32
    """
    if len(data) < MIN_FILE_SIZE:
        raise TruncatedData(f"need at least {MIN_FILE_SIZE} bytes, got {len(data)}")

    order = "<"
    if not 1 <= _read_dim0(data, order) <= 7:
        order = ">"
        if not 1 <= _read_dim0(data, order) <= 7:
            raise InvalidDims("dim[0] outside 1..7 in either byte order")

    sizeof_hdr = struct.unpack_from(order + "i", data, 0)[0]
    if sizeof_hdr != HEADER_SIZE:
        raise BadMagic(f"sizeof_hdr {sizeof_hdr} != {HEADER_SIZE}")
    magic = data[344:348]
    if magic != MAGIC_SINGLE:
        raise BadMagic(f"magic {magic!r} != {MAGIC_SINGLE!r}")

    dim = struct.unpack_from(order + "8h", data, 40)
    datatype = struct.unpack_from(order + "h", data, 70)[0]
    pixdim = struct.unpack_from(order + "8f", data, 76)
    vox_offset = struct.unpack_from(order + "f", data, 108)[0]

    ndim = dim[0]
    if ndim >= 4 and any(d > 1 for d in dim[4 : ndim + 1]):
        raise InvalidDims(f"multi-frame volumes unsupported, dim={dim}")
    shape_xyz = [dim[i] if i <= ndim else 1 for i in (1, 2, 3)]
    if any(d < 1 for d in shape_xyz):
        raise InvalidDims(f"non-positive extent in dim={dim}")
    nx, ny, nz = shape_xyz

    if datatype not in _DTYPES:
        raise UnsupportedScalarType(f"datatype code {datatype}")
    dtype = _DTYPES[datatype].newbyteorder(order)

    # Non-positive pixdim entries occur in the wild; fall back to unit spacing.
    spacing = tuple(float(p) if p > 0 else 1.0 for p in pixdim[1:4])

    offset = int(round(vox_offset))
    if offset < MIN_FILE_SIZE:
        offset = MIN_FILE_SIZE
    needed = nx * ny * nz * dtype.itemsize
    if len(data) - offset < needed:
        raise TruncatedData(
            f"{needed} voxel bytes needed at offset {offset}, file has {len(data) - offset}"
        )

    flat = np.frombuffer(data, dtype=dtype, count=nx * ny * nz, offset=offset)
    voxels = flat.reshape(nz, ny, nx).astype(dtype.newbyteorder("="))
    return Volume3D(voxels, spacing, _KIND_FOR_DTYPE[datatype])


def parse_nifti_file(path) -> Volume3D:
    with open(path, "rb") as f:
        return parse_nifti(f.read())
