import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pbrflow.core import (
    CameraIntrinsics,
    DimensionMismatchError,
    ImageBuffer,
    IntrinsicBundle,
    ValidationError,
    decode_normal,
    encode_normal,
    pack_rm,
    unpack_rm,
)

from helpers import make_bundle, unit_normals


class TestImageBuffer:
    def test_rejects_nan(self):
        arr = np.ones((2, 2, 3))
        arr[0, 0, 0] = np.nan
        with pytest.raises(ValidationError, match="NaN"):
            ImageBuffer(arr)

    def test_rejects_inf(self):
        arr = np.ones((2, 2, 1))
        arr[1, 1, 0] = np.inf
        with pytest.raises(ValidationError):
            ImageBuffer(arr)

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValidationError):
            ImageBuffer(np.ones((2, 2, 4)))

    def test_two_dim_input_becomes_single_channel(self):
        buf = ImageBuffer(np.ones((3, 5)))
        assert (buf.height, buf.width, buf.channels) == (3, 5, 1)

    def test_immutable(self):
        buf = ImageBuffer(np.ones((2, 2, 3)))
        with pytest.raises(ValueError):
            buf.array[0, 0, 0] = 2.0


class TestCamera:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValidationError):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)

    def test_default_camera(self):
        cam = CameraIntrinsics.default_for(64, 48)
        assert cam.fx == cam.fy == 0.8 * 64
        assert (cam.cx, cam.cy) == (32.0, 24.0)


class TestBundleValidation:
    def test_valid_bundle_passes(self, rng):
        make_bundle(rng)

    def test_mismatched_dims_rejected(self, rng):
        with pytest.raises(DimensionMismatchError, match="shape"):
            IntrinsicBundle(
                albedo=ImageBuffer(rng.uniform(0, 1, (8, 8, 3))),
                roughness=ImageBuffer(rng.uniform(0, 1, (4, 8, 1))),
                metallic=ImageBuffer(rng.uniform(0, 1, (8, 8, 1))),
                normal=ImageBuffer(unit_normals(rng, 8, 8)),
            )

    def test_out_of_range_albedo_rejected(self, rng):
        with pytest.raises(ValidationError, match=r"\[0, 1\]"):
            IntrinsicBundle(
                albedo=ImageBuffer(np.full((4, 4, 3), 1.5)),
                roughness=ImageBuffer(rng.uniform(0, 1, (4, 4, 1))),
                metallic=ImageBuffer(rng.uniform(0, 1, (4, 4, 1))),
                normal=ImageBuffer(unit_normals(rng, 4, 4)),
            )

    def test_non_unit_normals_rejected(self, rng):
        with pytest.raises(ValidationError, match="unit length"):
            IntrinsicBundle(
                albedo=ImageBuffer(rng.uniform(0, 1, (4, 4, 3))),
                roughness=ImageBuffer(rng.uniform(0, 1, (4, 4, 1))),
                metallic=ImageBuffer(rng.uniform(0, 1, (4, 4, 1))),
                normal=ImageBuffer(np.full((4, 4, 3), 0.9)),
            )

    def test_default_camera_attached(self, rng):
        b = make_bundle(rng, h=8, w=10)
        assert b.camera.fx == 0.8 * 10
        assert b.camera.cx == 5.0


class TestPackRm:
    def test_single_pixel_layout(self):
        r = ImageBuffer(np.array([[[0.5]]]))
        m = ImageBuffer(np.array([[[0.25]]]))
        packed = pack_rm(r, m)
        assert packed.array[0, 0].tolist() == [0.5, 0.25, 0.0]

    def test_all_zero_maps(self):
        r = ImageBuffer(np.zeros((3, 3, 1)))
        m = ImageBuffer(np.zeros((3, 3, 1)))
        assert np.all(pack_rm(r, m).array == 0.0)

    def test_dimension_mismatch_names_both_shapes(self):
        r = ImageBuffer(np.zeros((3, 3, 1)))
        m = ImageBuffer(np.zeros((2, 3, 1)))
        with pytest.raises(DimensionMismatchError) as exc:
            pack_rm(r, m)
        assert "(3, 3, 1)" in str(exc.value) and "(2, 3, 1)" in str(exc.value)

    def test_roundtrip_random_buffers(self, rng):
        for _ in range(100):
            h, w = rng.integers(1, 9, size=2)
            r = ImageBuffer(rng.uniform(0, 1, (h, w, 1)))
            m = ImageBuffer(rng.uniform(0, 1, (h, w, 1)))
            r2, m2 = unpack_rm(pack_rm(r, m))
            assert np.array_equal(r2.array, r.array)
            assert np.array_equal(m2.array, m.array)

    def test_unpack_requires_zero_third_channel(self):
        bad = ImageBuffer(np.full((2, 2, 3), 0.5))
        with pytest.raises(ValidationError, match="third channel"):
            unpack_rm(bad)


class TestNormalCodec:
    def test_up_vector_encoding(self):
        n = ImageBuffer(np.array([[[0.0, 0.0, 1.0]]]))
        assert encode_normal(n).array[0, 0].tolist() == [0.5, 0.5, 1.0]

    def test_decode_renormalizes(self):
        enc = ImageBuffer(np.array([[[0.9, 0.5, 0.5]]]))
        dec = decode_normal(enc)
        assert np.linalg.norm(dec.array[0, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_zero_vector_decode_rejected(self):
        enc = ImageBuffer(np.full((1, 1, 3), 0.5))
        with pytest.raises(ValidationError, match="zero vector"):
            decode_normal(enc)

    def test_non_unit_encode_rejected(self):
        with pytest.raises(ValidationError, match="unit vectors"):
            encode_normal(ImageBuffer(np.full((1, 1, 3), 0.9)))

    def test_random_roundtrip(self, rng):
        n = ImageBuffer(unit_normals(rng, 25, 40))
        back = decode_normal(encode_normal(n))
        assert np.max(np.abs(back.array - n.array)) < 1e-3


@given(
    arrays(np.float64, (4, 5, 1), elements=st.floats(0, 1)),
    arrays(np.float64, (4, 5, 1), elements=st.floats(0, 1)),
)
def test_pack_unpack_identity_property(r, m):
    r2, m2 = unpack_rm(pack_rm(ImageBuffer(r), ImageBuffer(m)))
    assert np.array_equal(r2.array, r)
    assert np.array_equal(m2.array, m)


@given(st.integers(0, 2**32 - 1))
def test_encode_decode_identity_property(seed):
    rng = np.random.default_rng(seed)
    n = unit_normals(rng, 4, 4)
    back = decode_normal(encode_normal(ImageBuffer(n)))
    assert np.max(np.abs(back.array - n)) < 1e-3
