import numpy as np
import pytest

from hsidehaze.cube import (
    AUGMENT_OPS,
    BandMask,
    HsiCube,
    WavelengthTable,
    augment,
    aviris_water_vapor_mask,
    exclude_bands,
    from_matrix,
    rgb_composite,
    to_matrix,
)
from hsidehaze.errors import DimensionError, DomainError, ParameterError

from conftest import random_cube


class TestHsiCube:
    def test_shape_properties(self, rng):
        cube = random_cube(rng, bands=5, height=3, width=7)
        assert (cube.bands, cube.height, cube.width, cube.pixels) == (5, 3, 7, 21)

    def test_rejects_non_finite(self):
        data = np.ones((2, 2, 2))
        data[1, 0, 1] = np.nan
        with pytest.raises(DomainError):
            HsiCube(data=data)

    def test_rejects_wrong_rank(self):
        with pytest.raises(DimensionError):
            HsiCube(data=np.ones((4, 4)))


class TestWavelengths:
    def test_strictly_increasing_required(self):
        with pytest.raises(DomainError):
            WavelengthTable(centers=np.array([500.0, 500.0, 600.0]), visible_count=1)

    def test_range_bounds(self):
        with pytest.raises(DomainError):
            WavelengthTable(centers=np.array([100.0, 600.0]), visible_count=1)

    def test_visible_count_bounds(self):
        centers = np.array([400.0, 500.0, 900.0])
        with pytest.raises(ParameterError):
            WavelengthTable(centers=centers, visible_count=3)
        with pytest.raises(ParameterError):
            WavelengthTable(centers=centers, visible_count=0)

    def test_from_centers_700nm_boundary(self):
        table = WavelengthTable.from_centers([450.0, 550.0, 650.0, 750.0, 1600.0])
        assert table.visible_count == 3

    def test_from_centers_clamps_to_valid(self):
        # all-visible centers still leave one infrared slot
        table = WavelengthTable.from_centers([400.0, 500.0, 600.0])
        assert table.visible_count == 2

    def test_select_recounts_visible(self):
        table = WavelengthTable.from_centers([450.0, 550.0, 650.0, 750.0, 1600.0])
        keep = np.array([True, False, True, True, True])
        out = table.select(keep)
        assert out.bands == 4
        assert out.visible_count == 2
        assert out.centers.tolist() == [450.0, 650.0, 750.0, 1600.0]


class TestBandExclusion:
    def test_sensor_water_vapor_mask_keeps_172_of_224(self, rng):
        mask = aviris_water_vapor_mask()
        assert mask.keep.size == 224
        assert mask.kept == 172
        cube = random_cube(rng, bands=224, height=2, width=2)
        assert exclude_bands(cube, mask).bands == 172

    def test_mask_preserves_order_and_planes(self, rng):
        cube = random_cube(rng, bands=4, height=3, width=3)
        # keep 1-based bands {2, 4}
        mask = BandMask(keep=np.array([False, True, False, True]))
        out = exclude_bands(cube, mask)
        assert out.bands == 2
        np.testing.assert_array_equal(out.data[0], cube.data[1])
        np.testing.assert_array_equal(out.data[1], cube.data[3])

    def test_all_kept_is_identity(self, rng):
        cube = random_cube(rng)
        mask = BandMask(keep=np.ones(cube.bands, dtype=bool))
        np.testing.assert_array_equal(exclude_bands(cube, mask).data, cube.data)

    def test_length_mismatch(self, rng):
        cube = random_cube(rng, bands=4)
        with pytest.raises(DimensionError):
            exclude_bands(cube, BandMask(keep=np.ones(5, dtype=bool)))

    def test_empty_mask_rejected(self):
        with pytest.raises(DomainError):
            BandMask(keep=np.zeros(3, dtype=bool))


class TestMatrixRoundTrip:
    def test_single_pixel_column(self):
        cube = HsiCube(data=np.arange(3.0).reshape(3, 1, 1))
        matrix = to_matrix(cube)
        assert matrix.shape == (3, 1)
        np.testing.assert_array_equal(matrix[:, 0], [0.0, 1.0, 2.0])

    def test_columns_are_pixel_spectra(self):
        # 2x1 image, 2 bands; pixel (0,0) spectrum (1,2), pixel (1,0) spectrum (3,4)
        data = np.array([[[1.0], [3.0]], [[2.0], [4.0]]])
        matrix = to_matrix(HsiCube(data=data))
        np.testing.assert_array_equal(matrix, [[1.0, 3.0], [2.0, 4.0]])

    def test_round_trip_identity(self, rng):
        for _ in range(20):
            b = int(rng.integers(1, 8))
            h = int(rng.integers(1, 8))
            w = int(rng.integers(1, 8))
            cube = random_cube(rng, bands=b, height=h, width=w)
            back = from_matrix(to_matrix(cube), h, w)
            np.testing.assert_array_equal(back.data, cube.data)

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            from_matrix(np.ones((2, 6)), 2, 2)


class TestAugment:
    def test_identity(self, rng):
        cube = random_cube(rng)
        np.testing.assert_array_equal(augment(cube, "identity").data, cube.data)

    def test_fliph_example(self):
        cube = HsiCube(data=np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = augment(cube, "fliph")
        np.testing.assert_array_equal(out.data[0], [[2.0, 1.0], [4.0, 3.0]])

    def test_double_flip_and_rotation_inverses(self, rng):
        cube = random_cube(rng, bands=3, height=5, width=5)
        for op, inverse in [("fliph", "fliph"), ("flipv", "flipv"),
                            ("rot180", "rot180"), ("rot90", "rot270")]:
            back = augment(augment(cube, op), inverse)
            np.testing.assert_array_equal(back.data, cube.data)

    def test_spectra_preserved_as_multiset(self, rng):
        cube = random_cube(rng, bands=3, height=4, width=4)
        for op in AUGMENT_OPS:
            out = augment(cube, op)
            original = np.sort(to_matrix(cube), axis=1)
            moved = np.sort(to_matrix(out), axis=1)
            np.testing.assert_array_equal(original, moved)

    def test_quarter_turn_requires_square(self, rng):
        cube = random_cube(rng, bands=2, height=3, width=4)
        with pytest.raises(DimensionError):
            augment(cube, "rot90")
        # half turn and flips stay legal on rectangles
        augment(cube, "rot180")

    def test_unknown_op(self, rng):
        with pytest.raises(ParameterError):
            augment(random_cube(rng), "transpose")


class TestRgbComposite:
    def test_constant_band_renders_zero(self):
        data = np.ones((3, 4, 4))
        data[1] = np.linspace(0, 1, 16).reshape(4, 4)
        image = rgb_composite(HsiCube(data=data), 0, 1, 2)
        assert image.shape == (4, 4, 3)
        assert image.dtype == np.uint8
        assert image[:, :, 0].max() == 0
        assert image[:, :, 2].max() == 0

    def test_full_scale_mapping(self):
        data = np.zeros((1, 1, 2))
        data[0, 0, 1] = 1.0
        image = rgb_composite(HsiCube(data=data), 0, 0, 0)
        assert image[0, 0].tolist() == [0, 0, 0]
        assert image[0, 1].tolist() == [255, 255, 255]

    def test_deterministic(self, rng):
        cube = random_cube(rng, bands=5)
        a = rgb_composite(cube, 4, 2, 0)
        b = rgb_composite(cube, 4, 2, 0)
        np.testing.assert_array_equal(a, b)

    def test_band_out_of_range(self, rng):
        with pytest.raises(ParameterError):
            rgb_composite(random_cube(rng, bands=3), 0, 1, 3)
