import numpy as np
import pytest

from sparseg.errors import LocalizationError
from sparseg.localization import (SEED_SIDE, localize, majority_filter, right_half, seed_box,
                                  threshold_liver)
from sparseg.volume import Volume3D, centroid, largest_component, window_to_8bit


def uniform(value, shape=(10, 10, 10)):
    return Volume3D(np.full(shape, float(value)), (1, 1, 1))


def blob_volume(centers_radii, shape=(64, 64, 64), background=-1000.0):
    x, y, z = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
    data = np.full(shape, background)
    for center, r in centers_radii:
        data[(x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= r * r] = 50.0
    return Volume3D(data, (1, 1, 1))


class TestThreshold:
    def test_uniform_in_band(self):
        assert threshold_liver(uniform(50)).data.all()

    def test_uniform_out_of_band(self):
        assert not threshold_liver(uniform(0)).data.any()

    def test_half_and_half(self):
        data = np.full((12, 12, 12), 200.0)
        data[:6] = 50.0
        m = threshold_liver(Volume3D(data, (1, 1, 1))).data
        expect = np.zeros_like(m)
        expect[:6] = True
        diff = np.argwhere(m != expect)
        assert np.all((diff[:, 0] == 5) | (diff[:, 0] == 6))
        assert np.array_equal(m[:5], expect[:5]) and np.array_equal(m[7:], expect[7:])

    def test_gray_mode(self):
        gray = window_to_8bit(uniform(50))  # 128 in the 125..155 band
        assert threshold_liver(gray, mode="gray").data.all()
        assert not threshold_liver(Volume3D(np.full((5, 5, 5), 100.0), (1, 1, 1)), mode="gray").data.any()

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            threshold_liver(uniform(50), mode="xyz")

    def test_majority_removes_speckle(self):
        m = np.zeros((7, 7, 7), bool)
        m[3, 3, 3] = True
        assert not majority_filter(m).any()
        full = np.ones((7, 7, 7), bool)
        full[3, 3, 3] = False
        assert majority_filter(full).all()

    def test_locality(self):
        rng = np.random.default_rng(0)
        data = rng.choice([50.0, 200.0], size=(12, 12, 12))
        base = threshold_liver(Volume3D(data, (1, 1, 1))).data
        changed = data.copy()
        changed[0, 0, 0] = 50.0 if data[0, 0, 0] == 200.0 else 200.0
        after = threshold_liver(Volume3D(changed, (1, 1, 1))).data
        diff = np.argwhere(after != base)
        assert np.all(diff <= 1)


class TestLocalize:
    def test_single_blob(self):
        seed = localize(blob_volume([((16, 32, 32), 6)]))
        assert seed.center == (16, 32, 32)
        assert seed.lo == (8, 24, 24) and seed.hi == (24, 40, 40)
        assert str(seed) == "center 16 32 32; box 8 24 24 24 40 40"

    def test_largest_right_blob_wins(self):
        vol = blob_volume([((12, 20, 20), 4), ((20, 44, 44), 7), ((50, 32, 32), 10)])
        seed = localize(vol)
        assert seed.center == (20, 44, 44)

    def test_edge_clamp(self):
        seed = localize(blob_volume([((4, 32, 32), 3)]))
        assert seed.lo[0] == 0 and seed.hi[0] - seed.lo[0] >= 12
        assert all(0 <= lo < hi <= 64 for lo, hi in zip(seed.lo, seed.hi))
        assert all(hi - lo <= SEED_SIDE for lo, hi in zip(seed.lo, seed.hi))

    def test_empty_right_half(self):
        vol = blob_volume([((48, 32, 32), 5)])
        with pytest.raises(LocalizationError):
            localize(vol)
        assert localize(vol, fallback=True).center == (48, 32, 32)
        assert localize(vol, flip_lr=True).center == (48, 32, 32)

    def test_center_is_component_centroid(self):
        rng = np.random.default_rng(3)
        data = np.where(rng.random((32, 32, 32)) > 0.3, 50.0, -1000.0)
        data[16:] = -1000.0
        vol = Volume3D(data, (1, 1, 1))
        seed = localize(vol)
        comp = largest_component(threshold_liver(vol).data & right_half(vol.dims), 26)
        assert seed.centroid == pytest.approx(centroid(comp))
        assert seed.mask(vol.dims)[comp].any()

    def test_split_plane_belongs_to_left(self):
        half = right_half((9, 4, 4))
        assert half[:4].all() and not half[4:].any()

    def test_seed_box_rounding(self):
        s = seed_box((10.5, 3.2, 60.0), (64, 64, 64))
        assert s.center == (11, 3, 60)
        assert s.lo == (3, 0, 52) and s.hi == (19, 11, 64)
