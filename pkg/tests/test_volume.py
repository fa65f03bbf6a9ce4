import numpy as np
import pytest

from sparseg.errors import EmptyInputError, FormatError, ShapeError
from sparseg.volume import (Mask3D, Volume3D, bounding_box, centroid, connected_components,
                            largest_component, load_mask, load_metaimage, save_metaimage,
                            window_to_8bit)


def write_header(path, dims="4 4 4", spacing="1 1 1", etype="MET_SHORT", raw="v.raw", extra=""):
    path.write_text(
        "ObjectType = Image\nNDims = 3\n"
        f"DimSize = {dims}\nElementSpacing = {spacing}\nOffset = 0 0 0\n"
        f"ElementType = {etype}\nElementByteOrderMSB = False\n{extra}ElementDataFile = {raw}\n"
    )


class TestVolume3D:
    def test_data_is_float_and_read_only(self):
        v = Volume3D(np.zeros((2, 3, 4), dtype=np.int16), (1, 1, 2))
        assert v.data.dtype == np.float64
        assert v.dims == (2, 3, 4)
        assert v.voxel_volume == 2.0
        with pytest.raises(ValueError):
            v.data[0, 0, 0] = 1

    def test_rejects_bad_spacing_and_rank(self):
        with pytest.raises(ValueError):
            Volume3D(np.zeros((2, 2, 2)), (1, 0, 1))
        with pytest.raises((ValueError, ShapeError)):
            Volume3D(np.zeros((2, 2)), (1, 1, 1))

    def test_x_fastest_linearization(self):
        data = np.arange(24, dtype=float).reshape((2, 3, 4), order="F")
        v = Volume3D(data, (1, 1, 1))
        nx, ny = 2, 3
        for x, y, z in [(1, 2, 3), (0, 1, 2), (1, 0, 0)]:
            assert v.linear()[x + nx * (y + ny * z)] == data[x, y, z]

    def test_mask_geometry(self):
        v = Volume3D(np.zeros((3, 3, 3)), (0.5, 0.5, 2.0), (1, 2, 3))
        m = Mask3D.like(v, np.ones((3, 3, 3)))
        assert m.data.dtype == bool and m.count == 27
        assert v.same_geometry(m)


class TestMetaImage:
    def test_zero_int16_volume(self, tmp_path):
        write_header(tmp_path / "v.mhd")
        np.zeros(64, dtype="<i2").tofile(tmp_path / "v.raw")
        v = load_metaimage(tmp_path / "v.mhd")
        assert v.dims == (4, 4, 4)
        assert np.all(v.data == 0.0)

    def test_spacing_read_from_header(self, tmp_path):
        write_header(tmp_path / "v.mhd", spacing="0.7 0.7 5.0")
        np.zeros(64, dtype="<i2").tofile(tmp_path / "v.raw")
        assert load_metaimage(tmp_path / "v.mhd").spacing == (0.7, 0.7, 5.0)

    def test_big_endian_and_x_fastest(self, tmp_path):
        values = np.arange(64, dtype=">i2")
        write_header(tmp_path / "v.mhd", extra="")
        text = (tmp_path / "v.mhd").read_text().replace("ElementByteOrderMSB = False", "ElementByteOrderMSB = True")
        (tmp_path / "v.mhd").write_text(text)
        values.tofile(tmp_path / "v.raw")
        v = load_metaimage(tmp_path / "v.mhd")
        assert v.data[1, 0, 0] == 1 and v.data[0, 1, 0] == 4 and v.data[0, 0, 1] == 16

    @pytest.mark.parametrize("etype", ["MET_SHORT", "MET_UCHAR", "MET_FLOAT"])
    def test_round_trip_bit_identical(self, tmp_path, etype):
        rng = np.random.default_rng(3)
        if etype == "MET_SHORT":
            data = rng.integers(-1024, 3000, (8, 8, 8)).astype(float)
        elif etype == "MET_UCHAR":
            data = rng.integers(0, 256, (8, 8, 8)).astype(float)
        else:
            data = rng.standard_normal((8, 8, 8)).astype(np.float32).astype(float)
        v = Volume3D(data, (0.56, 0.56, 1.0), (-10.0, 5.5, 3.0))
        save_metaimage(v, tmp_path / "r.mhd", element_type=etype)
        back = load_metaimage(tmp_path / "r.mhd")
        assert back.dims == v.dims and back.spacing == v.spacing and back.origin == v.origin
        assert np.array_equal(back.data, v.data)

    def test_spacing_line(self, tmp_path):
        save_metaimage(Volume3D(np.zeros((2, 2, 2)), (0.56, 0.56, 1.0)), tmp_path / "s.mhd")
        assert "ElementSpacing = 0.56 0.56 1.0" in (tmp_path / "s.mhd").read_text()

    def test_mask_round_trip(self, tmp_path):
        m = Mask3D(np.random.default_rng(0).random((5, 6, 7)) > 0.5, (1, 2, 3))
        save_metaimage(m, tmp_path / "m.mhd")
        back = load_mask(tmp_path / "m.mhd")
        assert np.array_equal(back.data, m.data) and back.spacing == m.spacing

    def test_empty_path_is_io_error(self):
        with pytest.raises(OSError):
            save_metaimage(Volume3D(np.zeros((2, 2, 2)), (1, 1, 1)), "")

    def test_missing_raw(self, tmp_path):
        write_header(tmp_path / "v.mhd")
        with pytest.raises(OSError):
            load_metaimage(tmp_path / "v.mhd")

    def test_oversized_raw(self, tmp_path):
        write_header(tmp_path / "v.mhd")
        np.zeros(65, dtype="<i2").tofile(tmp_path / "v.raw")
        with pytest.raises(OSError):
            load_metaimage(tmp_path / "v.mhd")

    def test_unsupported_type(self, tmp_path):
        write_header(tmp_path / "v.mhd", etype="MET_DOUBLE")
        np.zeros(64, dtype="<f8").tofile(tmp_path / "v.raw")
        with pytest.raises(FormatError):
            load_metaimage(tmp_path / "v.mhd")

    def test_compressed_rejected(self, tmp_path):
        write_header(tmp_path / "v.mhd", extra="CompressedData = True\n")
        np.zeros(64, dtype="<i2").tofile(tmp_path / "v.raw")
        with pytest.raises(FormatError):
            load_metaimage(tmp_path / "v.mhd")

    def test_two_dimensional_rejected(self, tmp_path):
        (tmp_path / "v.mhd").write_text("NDims = 2\nDimSize = 4 4\nElementType = MET_SHORT\nElementDataFile = v.raw\n")
        np.zeros(16, dtype="<i2").tofile(tmp_path / "v.raw")
        with pytest.raises(FormatError):
            load_metaimage(tmp_path / "v.mhd")


class TestWindow:
    def v(self, values):
        return Volume3D(np.asarray(values, dtype=float).reshape(-1, 1, 1), (1, 1, 1))

    def test_midpoint_rounds_half_up(self):
        assert window_to_8bit(self.v([50.0])).data[0, 0, 0] == 128.0

    def test_clamped_ends(self):
        out = window_to_8bit(self.v([-125.0, -500.0, 225.0, 3000.0])).data.ravel()
        assert list(out) == [0.0, 0.0, 255.0, 255.0]

    def test_liver_band_mapping(self):
        # 40 HU -> 120.21, 60 HU -> 134.79 under the default window
        out = window_to_8bit(self.v([40.0, 60.0])).data.ravel()
        assert list(out) == [120.0, 135.0]
        # the window placing 40..60 HU exactly on gray 125..155: slope 1.5 gray/HU
        out = window_to_8bit(self.v([40.0, 60.0]), 50.0 - 12.5 / 1.5, 170.0).data.ravel()
        assert list(out) == [125.0, 155.0]

    def test_output_range(self):
        out = window_to_8bit(self.v(np.linspace(-2000, 2000, 101))).data
        assert out.min() >= 0 and out.max() <= 255 and np.all(out == np.round(out))


class TestComponents:
    def test_empty(self):
        labels, sizes = connected_components(np.zeros((4, 4, 4), bool))
        assert labels.max() == 0 and len(sizes) == 0

    def test_two_cubes(self):
        m = np.zeros((8, 8, 8), bool)
        m[0:2, 0:2, 0:2] = True
        m[5:7, 5:7, 5:7] = True
        labels, sizes = connected_components(m, 6)
        assert sorted(sizes) == [8, 8]
        assert set(np.unique(labels)) == {0, 1, 2}

    def test_corner_voxel(self):
        m = np.zeros((4, 4, 4), bool)
        m[3, 3, 3] = True
        _, sizes = connected_components(m)
        assert list(sizes) == [1]

    def test_connectivity_difference(self):
        m = np.zeros((3, 3, 3), bool)
        m[0, 0, 0] = m[1, 1, 1] = True
        assert len(connected_components(m, 6)[1]) == 2
        assert len(connected_components(m, 26)[1]) == 1
        with pytest.raises(ValueError):
            connected_components(m, 18)

    def test_partition_property(self):
        rng = np.random.default_rng(5)
        m = rng.random((10, 10, 10)) > 0.6
        labels, sizes = connected_components(m, 26)
        assert np.array_equal(labels > 0, m)
        assert sizes.sum() == m.sum()
        # 26-adjacent foreground voxels share labels
        for dx, dy, dz in [(1, 0, 0), (0, 1, 1), (1, 1, 1), (1, -1, 0)]:
            a = labels[max(dx, 0):10 + min(dx, 0), max(dy, 0):10 + min(dy, 0), max(dz, 0):10 + min(dz, 0)]
            b = labels[max(-dx, 0):10 + min(-dx, 0), max(-dy, 0):10 + min(-dy, 0), max(-dz, 0):10 + min(-dz, 0)]
            both = (a > 0) & (b > 0)
            assert np.array_equal(a[both], b[both])

    def test_largest_component(self):
        m = np.zeros((8, 8, 8), bool)
        m[0, 0, 0] = True
        m[4:7, 4:7, 4:7] = True
        assert largest_component(m).sum() == 27


class TestCentroid:
    def test_single_voxel(self):
        m = np.zeros((8, 8, 8), bool)
        m[5, 6, 7] = True
        assert centroid(m) == (5.0, 6.0, 7.0)

    def test_two_voxels(self):
        m = np.zeros((4, 4, 4), bool)
        m[0, 0, 0] = m[2, 0, 0] = True
        assert centroid(m) == (1.0, 0.0, 0.0)

    def test_box(self):
        m = np.zeros((10, 10, 10), bool)
        m[4:8, 4:8, 4:8] = True
        assert centroid(m) == (5.5, 5.5, 5.5)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            centroid(np.zeros((3, 3, 3), bool))

    def test_inside_bounding_box(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            m = rng.random((6, 7, 8)) > 0.8
            if not m.any():
                continue
            lo, hi = bounding_box(m)
            c = centroid(m)
            assert all(lo[i] <= c[i] <= hi[i] - 1 for i in range(3))
