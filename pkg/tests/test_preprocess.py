import numpy as np
import pytest
from scipy import ndimage

from connseg import EmptyResultError, InputError
from connseg.preprocess import (
    HUWindow,
    clip_normalize,
    connected_components_3d,
    convex_hull_repair_slice,
    distance_transform,
    extract_lung_mask,
    filled_convex_hull,
    gaussian_smooth_slices,
    lung_bbox,
    threshold_binarize,
)
from oracles import components_union_find, edt_squared_brute, gaussian_kernel_2d, hull_by_lp


class TestGaussian:
    def test_constant_volume_unchanged(self):
        v = np.full((2, 9, 9), -600.0)
        np.testing.assert_allclose(gaussian_smooth_slices(v, 1.0), v, rtol=0, atol=1e-9)

    def test_impulse_reproduces_truncated_kernel(self):
        v = np.zeros((3, 21, 21))
        v[1, 10, 10] = 1.0
        out = gaussian_smooth_slices(v, 1.0)
        k = gaussian_kernel_2d(1.0, 3)
        np.testing.assert_allclose(out[1, 7:14, 7:14], k, atol=1e-12)
        assert out[1, 10, 10] == pytest.approx(0.15924, abs=1e-5)
        # slices never mix
        assert not out[0].any() and not out[2].any()

    def test_reduces_variance(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(2, 16, 16))
        out = gaussian_smooth_slices(v, 1.0)
        assert all(out[z].var() < v[z].var() for z in range(2))

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_rejects_sigma(self, sigma):
        with pytest.raises(InputError):
            gaussian_smooth_slices(np.zeros((1, 4, 4)), sigma)


def test_threshold_binarize():
    v = np.array([-1000.0, 0.0, -600.0, -600.5]).reshape(1, 1, 4)
    assert threshold_binarize(v, -600).ravel().tolist() == [True, False, False, True]


class TestComponents:
    def test_corner_contact_is_one_component(self):
        m = np.zeros((2, 2, 2), bool)
        m[0, 0, 0] = m[1, 1, 1] = True
        _, sizes = connected_components_3d(m)
        assert sizes.tolist() == [2]

    def test_gap_two_separates(self):
        m = np.zeros((3, 3, 3), bool)
        m[0, 0, 0] = m[2, 2, 2] = True
        labels, sizes = connected_components_3d(m)
        assert sizes.tolist() == [1, 1]
        assert labels[0, 0, 0] == 1 and labels[2, 2, 2] == 2

    def test_matches_union_find(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            m = rng.random((6, 6, 6)) < rng.uniform(0.05, 0.4)
            labels, sizes = connected_components_3d(m)
            got = {frozenset(map(tuple, np.argwhere(labels == k))) for k in range(1, len(sizes) + 1)}
            assert got == components_union_find(m)


class TestHull:
    def test_disc_unchanged(self):
        yy, xx = np.mgrid[:21, :21]
        disc = (yy - 10) ** 2 + (xx - 10) ** 2 <= 36
        np.testing.assert_array_equal(convex_hull_repair_slice(disc), disc)

    def test_c_shape_replaced_by_hull(self):
        c = np.zeros((12, 12), bool)
        c[1:11, 1:3] = True
        c[1:3, 1:11] = True
        c[9:11, 1:11] = True
        assert c.sum() == 52
        expected = hull_by_lp(c)
        assert expected.sum() == 100
        assert expected.sum() >= 1.5 * c.sum()
        np.testing.assert_array_equal(convex_hull_repair_slice(c), expected)

    def test_empty_slice(self):
        assert not convex_hull_repair_slice(np.zeros((5, 5), bool)).any()

    def test_hull_matches_lp_oracle_on_random_sets(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            m = rng.random((7, 8)) < rng.uniform(0.02, 0.3)
            np.testing.assert_array_equal(filled_convex_hull(m), hull_by_lp(m))

    def test_superset_and_stable(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            m = rng.random((9, 9)) < 0.15
            once = convex_hull_repair_slice(m)
            assert not (m & ~once).any()
            np.testing.assert_array_equal(convex_hull_repair_slice(once), once)


def _two_lung_phantom(body_hu=0.0):
    shape = (16, 40, 48)
    zz, yy, xx = np.indices(shape)
    truth = np.zeros(shape, bool)
    for cx in (14, 34):
        truth |= ((zz - 7.5) / 20) ** 2 + ((yy - 20) / 12) ** 2 + ((xx - cx) / 8) ** 2 <= 1
    ct = np.full(shape, body_hu)
    ct[truth] = -850.0
    return ct, truth


class TestLungMask:
    def test_two_ellipsoids_recovered_within_one_voxel(self):
        ct, truth = _two_lung_phantom()
        lung = extract_lung_mask(ct)
        s = np.ones((3, 3, 3), bool)
        band = ndimage.binary_dilation(truth, s) & ~ndimage.binary_erosion(truth, s)
        diff = lung ^ truth
        assert not (ndimage.binary_erosion(truth, s) & ~lung).any()
        assert not (diff & ~band).any()

    def test_all_tissue_raises(self):
        with pytest.raises(EmptyResultError):
            extract_lung_mask(np.zeros((4, 16, 16)))

    def test_exterior_air_is_discarded(self):
        ct, truth = _two_lung_phantom()
        ct[:, :, :3] = -1000.0  # air along the W border
        lung = extract_lung_mask(ct)
        assert not lung[:, :, :3].any()

    def test_single_region(self):
        shape = (8, 24, 24)
        zz, yy, xx = np.indices(shape)
        blob = ((yy - 12) / 6) ** 2 + ((xx - 12) / 6) ** 2 <= 1
        ct = np.where(blob, -900.0, 20.0)
        lung = extract_lung_mask(ct)
        assert lung.any()
        _, sizes = connected_components_3d(lung)
        assert len(sizes) == 1

    def test_deterministic(self):
        ct, _ = _two_lung_phantom()
        np.testing.assert_array_equal(extract_lung_mask(ct), extract_lung_mask(ct))


class TestDistance:
    def test_full_cube_centre(self):
        d = distance_transform(np.ones((5, 5, 5), bool))
        assert d[2, 2, 2] == 3.0
        assert d[0, 0, 0] == 1.0

    def test_face_neighbour_and_background(self):
        m = np.ones((5, 5, 5), bool)
        m[2, 2, 2] = False
        d = distance_transform(m)
        assert d[2, 2, 2] == 0.0 and d[2, 2, 3] == 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            m = rng.random(tuple(rng.integers(1, 8, size=3))) < 0.7
            d = distance_transform(m)
            np.testing.assert_array_equal(np.rint(d**2).astype(np.int64), edt_squared_brute(m))
            assert np.allclose(d**2, np.rint(d**2))

    def test_lipschitz_across_faces(self):
        rng = np.random.default_rng(4)
        m = rng.random((8, 8, 8)) < 0.8
        d = distance_transform(m)
        for ax in range(3):
            assert np.abs(np.diff(d, axis=ax)).max() <= 1.0 + 1e-12


class TestClipNormalize:
    def test_window_examples(self):
        out = clip_normalize(np.array([-1000.0, 600.0, -200.0, -2000.0, 3000.0]).reshape(1, 1, 5))
        assert out.ravel().tolist() == [0.0, 255.0, 127.5, 0.0, 255.0]

    def test_monotone(self):
        x = np.linspace(-1500, 1000, 101).reshape(1, 1, -1)
        assert (np.diff(clip_normalize(x).ravel()) >= 0).all()

    def test_bad_window(self):
        with pytest.raises(InputError):
            HUWindow(600, -1000)


def test_lung_bbox():
    m = np.zeros((5, 6, 7), bool)
    m[1, 2, 3] = m[3, 4, 5] = True
    assert lung_bbox(m) == ((1, 4), (2, 5), (3, 6))
    with pytest.raises(InputError):
        lung_bbox(np.zeros((2, 2, 2), bool))
