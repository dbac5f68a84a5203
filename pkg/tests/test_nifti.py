import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxpipe.errors import (
    BadMagic,
    InvalidDims,
    SidecarMismatch,
    TruncatedData,
    UnsupportedScalarType,
)
from voxpipe.nifti import parse_nifti
from voxpipe.rawio import VolumeSidecar, read_raw_sidecar, write_raw_sidecar
from voxpipe.volume import IntensityKind, Volume3D

from conftest import make_nifti_bytes


class TestParseNifti:
    def test_crafted_little_endian_header(self):
        # 512x512x100 i16 with anisotropic spacing; 52,428,800 data bytes
        data = bytes(512 * 512 * 100 * 2)
        blob = make_nifti_bytes(dims=(512, 512, 100), datatype=4, pixdim=(0.7, 0.7, 2.5), data=data)
        vol = parse_nifti(blob)
        assert vol.dims == (512, 512, 100)
        assert vol.spacing == pytest.approx((0.7, 0.7, 2.5))
        assert vol.voxels.dtype == np.int16

    def test_voxel_values_land_in_xyz_order(self):
        values = np.arange(24, dtype=np.int16)
        blob = make_nifti_bytes(dims=(4, 3, 2), datatype=4, data=values.tobytes())
        vol = parse_nifti(blob)
        assert vol.voxels[0, 0, 1] == 1  # x fastest
        assert vol.voxels[0, 1, 0] == 4
        assert vol.voxels[1, 0, 0] == 12

    def test_bad_magic(self):
        blob = make_nifti_bytes(magic=b"xyz\x00")
        with pytest.raises(BadMagic):
            parse_nifti(blob)

    def test_truncated_data(self):
        blob = make_nifti_bytes(dims=(2, 2, 2), datatype=4, data=bytes(10))
        with pytest.raises(TruncatedData):
            parse_nifti(blob)

    def test_too_short_for_header(self):
        with pytest.raises(TruncatedData):
            parse_nifti(bytes(100))

    def test_byte_swapped_header(self):
        values = np.arange(8, dtype=">i2")
        blob = make_nifti_bytes(dims=(2, 2, 2), datatype=4, byteorder=">", data=values.tobytes())
        vol = parse_nifti(blob)
        assert vol.dims == (2, 2, 2)
        assert np.array_equal(vol.voxels.ravel(), np.arange(8))

    def test_unsupported_scalar_type(self):
        blob = make_nifti_bytes(datatype=8)  # int32
        with pytest.raises(UnsupportedScalarType):
            parse_nifti(blob)

    def test_wrong_sizeof_hdr(self):
        blob = make_nifti_bytes(sizeof_hdr=340)
        with pytest.raises(BadMagic):
            parse_nifti(blob)

    def test_garbage_dim0(self):
        blob = bytearray(make_nifti_bytes())
        blob[40:42] = b"\x63\x00"  # dim[0] = 99 in either order
        with pytest.raises(InvalidDims):
            parse_nifti(bytes(blob))

    def test_multiframe_rejected(self):
        blob = make_nifti_bytes(dims=(2, 2, 2, 5), ndim=4, datatype=4, data=bytes(2 * 2 * 2 * 5 * 2))
        with pytest.raises(InvalidDims):
            parse_nifti(blob)

    def test_u8_and_f32_scalars(self):
        blob = make_nifti_bytes(dims=(2, 1, 1), datatype=2, data=bytes([7, 9]))
        vol = parse_nifti(blob)
        assert vol.voxels.dtype == np.uint8
        assert vol.intensity_kind is IntensityKind.UINT8

        f = np.array([1.5, -2.25], dtype=np.float32)
        vol = parse_nifti(make_nifti_bytes(dims=(2, 1, 1), datatype=16, data=f.tobytes()))
        assert vol.voxels.dtype == np.float32
        assert np.array_equal(vol.voxels.ravel(), f)


class TestRawSidecar:
    def test_round_trip_identity(self, tmp_path):
        vol = Volume3D(
            np.arange(60, dtype=np.int16).reshape(3, 4, 5), (0.8, 0.9, 2.0), IntensityKind.HU
        )
        write_raw_sidecar(vol, tmp_path / "v.raw", tmp_path / "v.json")
        back = read_raw_sidecar(tmp_path / "v.raw", tmp_path / "v.json")
        assert np.array_equal(back.voxels, vol.voxels)
        assert back.dims == vol.dims
        assert back.spacing == vol.spacing
        assert back.intensity_kind == vol.intensity_kind

    def test_two_complement_little_endian_bytes(self, tmp_path):
        vol = Volume3D(np.array([[[100, -150]]], dtype=np.int16), (1, 1, 1), IntensityKind.HU)
        write_raw_sidecar(vol, tmp_path / "v.raw", tmp_path / "v.json")
        assert (tmp_path / "v.raw").read_bytes() == bytes([0x64, 0x00, 0x6A, 0xFF])

    def test_sidecar_mismatch(self, tmp_path):
        sidecar = VolumeSidecar((2, 2, 2), (1, 1, 1), "u8", "little", IntensityKind.UINT8)
        (tmp_path / "v.json").write_text(sidecar.to_json())
        (tmp_path / "v.raw").write_bytes(bytes(7))
        with pytest.raises(SidecarMismatch):
            read_raw_sidecar(tmp_path / "v.raw", tmp_path / "v.json")

    def test_unknown_sidecar_field_tolerated(self, tmp_path):
        vol = Volume3D(np.zeros((1, 1, 1), dtype=np.uint8), (1, 1, 1), IntensityKind.UINT8)
        write_raw_sidecar(vol, tmp_path / "v.raw", tmp_path / "v.json")
        doc = (tmp_path / "v.json").read_text()
        (tmp_path / "v.json").write_text(doc[:-2] + ',\n  "future_field": 42\n}')
        back = read_raw_sidecar(tmp_path / "v.raw", tmp_path / "v.json")
        assert back.dims == (1, 1, 1)

    def test_big_endian_round_trip(self, tmp_path):
        vol = Volume3D(np.array([[[100, -150]]], dtype=np.int16), (1, 1, 1), IntensityKind.HU)
        write_raw_sidecar(vol, tmp_path / "v.raw", tmp_path / "v.json", endianness="big")
        assert (tmp_path / "v.raw").read_bytes() == bytes([0x00, 0x64, 0xFF, 0x6A])
        back = read_raw_sidecar(tmp_path / "v.raw", tmp_path / "v.json")
        assert np.array_equal(back.voxels, vol.voxels)

    @settings(max_examples=25, deadline=None)
    @given(
        dims=st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
        dtype=st.sampled_from([np.int16, np.uint8, np.float32]),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_round_trip_random_volumes(self, dims, dtype, seed):
        rng = np.random.default_rng(seed)
        nx, ny, nz = dims
        if dtype is np.float32:
            vox = rng.normal(0, 100, (nz, ny, nx)).astype(np.float32)
        else:
            info = np.iinfo(dtype)
            vox = rng.integers(info.min, info.max, (nz, ny, nx), endpoint=True).astype(dtype)
        vol = Volume3D(vox, (1.0, 1.5, 2.0), IntensityKind.HU if dtype != np.uint8 else IntensityKind.UINT8)
        with tempfile.TemporaryDirectory() as d:
            base = Path(d)
            write_raw_sidecar(vol, base / "r.raw", base / "r.json")
            back = read_raw_sidecar(base / "r.raw", base / "r.json")
        assert back.voxels.tobytes() == vol.voxels.tobytes()

    def test_parse_then_roundtrip_preserves_bits(self, tmp_path):
        rng = np.random.default_rng(11)
        values = rng.integers(-2000, 3000, (5, 4, 3)).astype(np.int16)
        blob = make_nifti_bytes(dims=(3, 4, 5), datatype=4, pixdim=(0.5, 1.0, 1.5), data=values.tobytes())
        vol = parse_nifti(blob)
        write_raw_sidecar(vol, tmp_path / "p.raw", tmp_path / "p.json")
        back = read_raw_sidecar(tmp_path / "p.raw", tmp_path / "p.json")
        assert back.voxels.tobytes() == values.tobytes()
        assert back.spacing == pytest.approx((0.5, 1.0, 1.5))
