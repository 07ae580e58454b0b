import numpy as np
import pytest

from periface import imaging
from periface.errors import DimensionError, InvalidLandmarksError
from periface.imaging import (
    FRONTAL_TEMPLATE,
    Image,
    LandmarkSet,
    MarginConfig,
    Mask,
    PoseAngles,
    StubLandmarkBackend,
    StubPoseBackend,
    apply_mask,
    build_periocular_mask,
    crop_periocular,
    filter_sample,
    periocular_window,
)


def landmarks_with_eye_box(x0, x1, y0, y1, frame=200.0):
    """Template landmarks with the 12 eye points moved onto a given box."""
    pts = FRONTAL_TEMPLATE * frame
    eyes = np.array(
        [
            [x0, y0], [x1, y0], [x0, y1], [x1, y1],
            [(x0 + x1) / 2, y0], [(x0 + x1) / 2, y1],
            [x0, (y0 + y1) / 2], [x1, (y0 + y1) / 2],
            [x0, y0], [x1, y1], [x0, y1], [x1, y0],
        ],
        dtype=np.float64,
    )
    pts[imaging.EYE_SLICE] = eyes
    return LandmarkSet(pts)


class TestDomainTypes:
    def test_image_accepts_valid_raster(self):
        img = Image(np.full((8, 9, 3), 0.5))
        assert img.pixels.dtype == np.float32
        assert img.dims == (8, 9)

    @pytest.mark.parametrize(
        "pixels",
        [
            np.zeros((8, 8)),
            np.zeros((8, 8, 4)),
            np.zeros((4, 8, 3)),
            np.full((8, 8, 3), 1.5),
            np.full((8, 8, 3), -0.1),
        ],
    )
    def test_image_rejects_bad_rasters(self, pixels):
        with pytest.raises(DimensionError):
            Image(pixels)

    def test_image_rejects_nan(self):
        px = np.zeros((8, 8, 3))
        px[0, 0, 0] = np.nan
        with pytest.raises(DimensionError):
            Image(px)

    def test_mask_recomputes_coverage(self):
        bits = np.zeros((4, 4, 1), dtype=np.uint8)
        bits[:2] = 1  # top half visible
        assert Mask(bits).coverage == 0.5

    def test_mask_rejects_wrong_coverage(self):
        with pytest.raises(DimensionError):
            Mask(np.ones((4, 4, 1), dtype=np.uint8), coverage=0.25)

    def test_mask_rejects_nonbinary(self):
        with pytest.raises(DimensionError):
            Mask(np.full((4, 4, 1), 2, dtype=np.uint8))

    def test_mask_accepts_2d_input(self):
        m = Mask(np.ones((4, 4), dtype=np.uint8))
        assert m.bits.shape == (4, 4, 1)
        assert m.coverage == 0.0

    def test_landmarks_require_68_points(self):
        with pytest.raises(InvalidLandmarksError):
            LandmarkSet(np.zeros((67, 2)))

    def test_landmarks_reject_nan(self):
        pts = np.zeros((68, 2))
        pts[3, 0] = np.nan
        with pytest.raises(InvalidLandmarksError):
            LandmarkSet(pts)

    def test_landmarks_out_of_bounds(self):
        pts = np.full((68, 2), 10.0)
        pts[0] = (300.0, 10.0)
        with pytest.raises(InvalidLandmarksError):
            LandmarkSet(pts).require_in_bounds((256, 256))

    def test_pose_angle_range(self):
        PoseAngles(180.0, -180.0, 0.0)
        with pytest.raises(DimensionError):
            PoseAngles(0.0, 0.0, 180.5)


class TestPeriocularWindow:
    def test_integer_landmark_box_maps_to_exact_pixels(self):
        # Eye box x in [96, 159], y in [100, 115] with zero margins:
        # inclusive pixel window of 64 columns by 16 rows.
        lms = landmarks_with_eye_box(96.0, 159.0, 100.0, 115.0)
        window = periocular_window(lms, (256, 256), MarginConfig(side=0.0, top=0.0, bottom=0.0))
        assert window == (100, 116, 96, 160)
        mask = build_periocular_mask(lms, (256, 256), MarginConfig(side=0.0, top=0.0, bottom=0.0))
        assert int(np.count_nonzero(mask.bits)) == 64 * 16
        assert mask.coverage == 1.0 - (64 * 16) / (256 * 256)

    def test_full_frame_box_gives_zero_coverage(self):
        lms = landmarks_with_eye_box(0.0, 255.0, 0.0, 255.0)
        mask = build_periocular_mask(lms, (256, 256), MarginConfig(side=0.0, top=0.0, bottom=0.0))
        assert mask.coverage == 0.0

    def test_margins_expand_window(self):
        lms = landmarks_with_eye_box(100.0, 140.0, 100.0, 120.0)
        small = periocular_window(lms, (256, 256), MarginConfig(side=0.0, top=0.0, bottom=0.0))
        wide = periocular_window(lms, (256, 256), MarginConfig())
        assert wide[2] <= small[2] and wide[3] >= small[3]
        assert wide[0] <= small[0] and wide[1] >= small[1]
        # side margin 0.25 of a 40-wide box is 10px on each flank
        assert wide[2] == 90 and wide[3] == 151

    def test_window_clipped_to_frame(self):
        lms = landmarks_with_eye_box(2.0, 60.0, 2.0, 20.0, frame=60.0)
        row0, row1, col0, col1 = periocular_window(lms, (64, 64), MarginConfig())
        assert 0 <= row0 < row1 <= 64
        assert 0 <= col0 < col1 <= 64

    def test_template_coverage_in_target_band(self):
        lms = LandmarkSet(FRONTAL_TEMPLATE * 256.0)
        mask = build_periocular_mask(lms, (256, 256))
        assert 0.70 <= mask.coverage <= 0.80

    def test_coverage_plus_visible_is_one(self):
        lms = LandmarkSet(FRONTAL_TEMPLATE * 128.0)
        mask = build_periocular_mask(lms, (128, 128))
        visible = np.count_nonzero(mask.bits) / mask.bits.size
        assert mask.coverage + visible == 1.0


class TestApplyMask:
    def test_two_by_two_example(self):
        img = np.array([[[0.2], [0.4]], [[0.6], [0.8]]]) * np.ones(3)
        mask = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        out = apply_mask(img, mask)
        np.testing.assert_array_equal(out[:, :, 0], [[0.2, 0.0], [0.0, 0.8]])

    def test_idempotent(self, small_image):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[4:12, 4:12] = 1
        once = apply_mask(small_image, mask)
        twice = apply_mask(once, mask)
        np.testing.assert_array_equal(once.pixels, twice.pixels)

    def test_known_pixels_preserved_hidden_zeroed(self, small_image):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[2:10, 3:9] = 1
        out = apply_mask(small_image, mask)
        np.testing.assert_array_equal(out.pixels[2:10, 3:9], small_image.pixels[2:10, 3:9])
        assert not out.pixels[mask == 0].any()

    def test_shape_mismatch_rejected(self, small_image):
        with pytest.raises(DimensionError):
            apply_mask(small_image, np.ones((8, 8), dtype=np.uint8))


class TestCropAndResize:
    def test_crop_without_resize_is_window_slice(self, rng):
        px = rng.uniform(size=(256, 256, 3)).astype(np.float32)
        img = Image(px)
        lms = landmarks_with_eye_box(96.0, 159.0, 100.0, 115.0)
        spec = MarginConfig(side=0.0, top=0.0, bottom=0.0)
        crop = crop_periocular(img, lms, spec)
        np.testing.assert_array_equal(crop.pixels, px[100:116, 96:160])

    def test_crop_resized_to_requested_size(self, rng):
        img = Image(rng.uniform(size=(256, 256, 3)).astype(np.float32))
        lms = LandmarkSet(FRONTAL_TEMPLATE * 256.0)
        crop = crop_periocular(img, lms, MarginConfig(crop_size=(16, 16)))
        assert crop.pixels.shape == (16, 16, 3)

    def test_resize_constant_image_stays_constant(self):
        out = imaging.resize(np.full((12, 20, 3), 0.375, dtype=np.float32), (7, 9))
        np.testing.assert_allclose(out, 0.375, atol=1e-7)

    def test_resize_same_size_is_identity(self, rng):
        px = rng.uniform(size=(10, 10, 3)).astype(np.float32)
        np.testing.assert_allclose(imaging.resize(px, (10, 10)), px, atol=1e-6)

    def test_resize_2d_round_trips_shape(self, rng):
        out = imaging.resize(rng.uniform(size=(9, 9)).astype(np.float32), (5, 4))
        assert out.shape == (5, 4)


class TestFiltering:
    def test_missing_landmarks_rejected(self):
        assert filter_sample(PoseAngles(0, 0, 0), None) is False

    def test_missing_pose_accepted(self):
        assert filter_sample(None, LandmarkSet(FRONTAL_TEMPLATE * 100)) is True

    def test_limit_is_inclusive(self):
        lms = LandmarkSet(FRONTAL_TEMPLATE * 100)
        assert filter_sample(PoseAngles(45.0, -45.0, 45.0), lms) is True
        assert filter_sample(PoseAngles(0.0, 0.0, 45.1), lms) is False
        assert filter_sample(PoseAngles(-46.0, 0.0, 0.0), lms) is False


class TestFileIO:
    def test_image_round_trip_quantizes_to_255(self, tmp_path):
        vals = np.array([0.0, 1 / 255, 0.25, 0.5, 0.75, 254.5 / 255, 1.0], dtype=np.float32)
        px = np.zeros((8, 8, 3), dtype=np.float32)
        px[0, : len(vals), 0] = vals
        path = tmp_path / "img.png"
        imaging.save_image(path, Image(px))
        loaded = imaging.load_image(path)
        expected = np.rint(px * 255.0) / 255.0
        np.testing.assert_allclose(loaded.pixels, expected.astype(np.float32), atol=0)
        assert loaded.provenance == str(path)

    def test_quantized_image_round_trips_exactly(self, tmp_path, rng):
        px = (rng.randint(0, 256, size=(16, 16, 3)) / 255.0).astype(np.float32)
        path = tmp_path / "img.png"
        imaging.save_image(path, Image(px))
        np.testing.assert_array_equal(imaging.load_image(path).pixels, px)

    def test_mask_round_trip(self, tmp_path):
        bits = np.zeros((16, 16, 1), dtype=np.uint8)
        bits[3:9, 2:14] = 1
        path = tmp_path / "mask.png"
        imaging.save_mask(path, Mask(bits))
        loaded = imaging.load_mask(path)
        np.testing.assert_array_equal(loaded.bits, bits)
        assert loaded.coverage == Mask(bits).coverage

    def test_landmarks_round_trip(self, tmp_path):
        lms = LandmarkSet(FRONTAL_TEMPLATE * 173.25)
        path = tmp_path / "lms.json"
        imaging.save_landmarks(path, lms)
        np.testing.assert_array_equal(imaging.load_landmarks(path).points, lms.points)


class TestStubBackends:
    def test_landmark_stub_scales_template(self):
        img = Image(np.zeros((64, 128, 3)))
        lms = StubLandmarkBackend().detect(img)
        np.testing.assert_allclose(lms.points, FRONTAL_TEMPLATE * [128.0, 64.0])
        lms.require_in_bounds((64, 128))

    def test_landmark_stub_deterministic(self):
        img = Image(np.zeros((32, 32, 3)))
        b = StubLandmarkBackend()
        np.testing.assert_array_equal(b.detect(img).points, b.detect(img).points)

    def test_pose_stub_returns_fixed_angles(self):
        backend = StubPoseBackend(yaw=30.0)
        angles = backend.estimate(Image(np.zeros((8, 8, 3))))
        assert (angles.roll, angles.pitch, angles.yaw) == (0.0, 0.0, 30.0)
