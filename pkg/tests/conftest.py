"""Shared test fixtures: crafted NIfTI bytes and synthetic phantoms.

The NIfTI builder packs header fields straight from the C struct layout so
it stays independent of the parser under test.
"""

import struct

import numpy as np
import pytest

from voxpipe.volume import IntensityKind, Volume3D


def make_nifti_bytes(
    dims=(4, 3, 2),
    datatype=4,
    pixdim=(1.0, 1.0, 1.0),
    data: bytes | None = None,
    magic=b"n+1\x00",
    byteorder="<",
    vox_offset=352.0,
    sizeof_hdr=348,
    ndim=3,
):
    """Assemble a single-file .nii byte string field by field."""
    header = bytearray(352)
    struct.pack_into(byteorder + "i", header, 0, sizeof_hdr)
    dim = [ndim, *dims] + [1] * (7 - len(dims))
    struct.pack_into(byteorder + "8h", header, 40, *dim[:8])
    struct.pack_into(byteorder + "h", header, 70, datatype)
    bitpix = {2: 8, 4: 16, 16: 32}.get(datatype, 0)
    struct.pack_into(byteorder + "h", header, 72, bitpix)
    pd = [1.0, *pixdim] + [0.0] * (7 - len(pixdim))
    struct.pack_into(byteorder + "8f", header, 76, *pd[:8])
    struct.pack_into(byteorder + "f", header, 108, vox_offset)
    header[344:348] = magic
    if data is None:
        nvox = int(np.prod(dims))
        itemsize = bitpix // 8 if bitpix else 2
        data = bytes(nvox * itemsize)
    return bytes(header) + data


def noisy_sphere_phantom(n=20, seed=7):
    """(truth, prob, intensity_volume): a solid sphere whose soft prediction
    is pushed toward 0.5 and then salted by flipping 15% of the voxels."""
    rng = np.random.default_rng(seed)
    zz, yy, xx = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    c = (n - 1) / 2.0
    truth = (((xx - c) ** 2 + (yy - c) ** 2 + (zz - c) ** 2) <= (0.32 * n) ** 2).astype(np.uint8)

    prob = np.where(truth == 1, 0.8, 0.2)
    salt = rng.random(truth.shape) < 0.15
    prob = np.where(salt, 1.0 - prob, prob)

    intensity = np.where(truth == 1, 0.7, 0.3) + rng.normal(0.0, 0.05, truth.shape)
    intensity = np.clip(intensity, 0.0, 1.0).astype(np.float32)
    vol = Volume3D(intensity, (1.0, 1.0, 1.0), IntensityKind.NORMALIZED01)
    return truth, prob, vol


def four_level_phantom(n=24, seed=3):
    """(volume, truth_labels): four intensity plateaus 0/80/160/240 with
    +-5 uniform noise, one plateau per z-quarter."""
    rng = np.random.default_rng(seed)
    levels = np.array([0.0, 80.0, 160.0, 240.0])
    truth = np.zeros((n, n, n), dtype=np.int64)
    for j in range(4):
        truth[j * n // 4 : (j + 1) * n // 4] = j
    values = levels[truth] + rng.uniform(-5.0, 5.0, truth.shape)
    vol = Volume3D(values.astype(np.float32), (1.0, 1.0, 1.0), IntensityKind.HU)
    return vol, truth


@pytest.fixture
def sphere_phantom():
    return noisy_sphere_phantom()
