import numpy as np
import numpy.testing as npt
import pytest

from frpose.heatmaps import JointSet, encode_heatmaps
from frpose.transforms import (CropTransform, build_crop_transform,
                               flip_average, flip_images, transform_joints,
                               unflip_heatmaps, warp_image)

# box covering exactly the pixel area of a (h, w) image under the
# centers-at-integers convention
def full_box(h, w):
    return (-0.5, -0.5, w, h)


class TestBuildCropTransform:
    def test_full_image_box_is_identity(self):
        t = build_crop_transform(full_box(64, 48), (64, 48), margin=1.0)
        npt.assert_allclose(t.matrix, np.eye(3), atol=1e-9)

    def test_aspect_is_preserved(self):
        # wildly non-square box: transform must stay a similarity
        t = build_crop_transform((10, 20, 200, 15), (64, 48), margin=1.25)
        a = t.matrix[:2, :2]
        npt.assert_allclose(a.T @ a, (a[0, 0]**2 + a[0, 1]**2) * np.eye(2),
                            atol=1e-9)

    def test_flip_mirrors_about_crop_center(self):
        t = build_crop_transform(full_box(64, 48), (64, 48), margin=1.0,
                                 flip=True)
        pts = np.array([[0.0, 5.0], [10.0, 7.0], [47.0, 3.0]])
        out = t.apply_xy(pts)
        npt.assert_allclose(out[:, 0], 48 - 1 - pts[:, 0], atol=1e-9)
        npt.assert_allclose(out[:, 1], pts[:, 1], atol=1e-9)

    def test_scale_enlarges_person(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(20, 40, (6, 2))
        t1 = build_crop_transform((15, 15, 30, 40), (96, 72), scale=1.0)
        t2 = build_crop_transform((15, 15, 30, 40), (96, 72), scale=1.3)
        d1 = np.linalg.norm(t1.apply_xy(pts[0]) - t1.apply_xy(pts[1]))
        d2 = np.linalg.norm(t2.apply_xy(pts[0]) - t2.apply_xy(pts[1]))
        assert d2 == pytest.approx(1.3 * d1, rel=0.01)

    def test_rotation_spins_about_crop_center(self):
        t = build_crop_transform(full_box(64, 64), (64, 64), margin=1.0,
                                 rotation_deg=90.0)
        center = np.array([31.5, 31.5])
        npt.assert_allclose(t.apply_xy(center), center, atol=1e-9)
        moved = t.apply_xy(center + [10.0, 0.0])
        npt.assert_allclose(np.linalg.norm(moved - center), 10.0, atol=1e-9)
        assert not np.allclose(moved, center + [10.0, 0.0])

    def test_margin_shrinks_person(self):
        t1 = build_crop_transform((0, 0, 32, 32), (64, 64), margin=1.0)
        t2 = build_crop_transform((0, 0, 32, 32), (64, 64), margin=1.25)
        z1, z2 = t1.matrix[0, 0], t2.matrix[0, 0]
        assert z2 == pytest.approx(z1 / 1.25)

    def test_inverse_round_trip(self):
        t = build_crop_transform((5, 8, 30, 50), (96, 72), margin=1.25,
                                 scale=1.1, rotation_deg=25.0, flip=True)
        pts = np.random.default_rng(1).uniform(0, 60, (10, 2))
        npt.assert_allclose(t.invert().apply_xy(t.apply_xy(pts)), pts,
                            atol=1e-9)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            build_crop_transform((0, 0, 0, 10), (64, 64))


class TestTransformJoints:
    def test_flip_swaps_paired_joints(self):
        t = build_crop_transform(full_box(32, 32), (32, 32), margin=1.0,
                                 flip=True)
        js = JointSet(np.array([[4.0, 10.0], [28.0, 10.0], [16.0, 5.0]]),
                      np.array([2, 1, 2]))
        out = transform_joints(js, t, flip_pairs=[(0, 1)])
        # joint 0 now holds the mirrored position of old joint 1
        npt.assert_allclose(out.xy[0], [31 - 28.0, 10.0])
        npt.assert_allclose(out.xy[1], [31 - 4.0, 10.0])
        npt.assert_allclose(out.xy[2], [31 - 16.0, 5.0])
        assert list(out.visibility) == [1, 2, 2]

    def test_no_swap_without_flip(self):
        t = build_crop_transform(full_box(32, 32), (32, 32), margin=1.0)
        js = JointSet(np.array([[4.0, 10.0], [28.0, 10.0]]), np.array([2, 1]))
        out = transform_joints(js, t, flip_pairs=[(0, 1)])
        npt.assert_allclose(out.xy, js.xy)
        assert list(out.visibility) == [2, 1]


class TestWarpImage:
    def test_identity_reproduces_image(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (3, 16, 12)).astype(np.float32)
        t = build_crop_transform(full_box(16, 12), (16, 12), margin=1.0)
        npt.assert_allclose(warp_image(img, t, (16, 12)), img, atol=1e-6)

    def test_flip_warp_mirrors_columns(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 1, (1, 8, 10)).astype(np.float32)
        t = build_crop_transform(full_box(8, 10), (8, 10), margin=1.0,
                                 flip=True)
        npt.assert_allclose(warp_image(img, t, (8, 10)), img[..., ::-1],
                            atol=1e-6)

    def test_regions_outside_source_are_zero(self):
        img = np.ones((1, 8, 8), np.float32)
        # zoom out 2x: the source occupies only the middle of the crop
        t = build_crop_transform(full_box(8, 8), (8, 8), margin=2.0)
        out = warp_image(img, t, (8, 8))
        assert out[0, 0, 0] == 0.0 and out[0, -1, -1] == 0.0
        assert out[0, 4, 4] == 1.0

    def test_integer_translation_shifts_pixels(self):
        img = np.zeros((1, 8, 8), np.float32)
        img[0, 2, 3] = 1.0
        t = CropTransform(np.array([[1.0, 0, 2.0], [0, 1.0, 1.0], [0, 0, 1.0]]))
        out = warp_image(img, t, (8, 8))
        assert out[0, 3, 5] == 1.0


class TestFlipAveraging:
    PAIRS = [(0, 1)]

    def _encode_pair(self, xy, w=32):
        js = JointSet(np.array(xy), np.array([2, 2]))
        stack, _ = encode_heatmaps(js, w, w, stride=1.0, sigma=2.0)
        return stack.maps

    def test_aligned_unflip_is_exact_inverse_of_input_mirror(self):
        # mirroring the "image" moves joint x to W-1-x and relabels
        # left<->right; unflip must reproduce the original encoding bitwise
        w = 32
        orig = self._encode_pair([[10.3, 12.0], [20.0, 7.5]], w)
        mirrored = self._encode_pair([[w - 1 - 20.0, 7.5],
                                      [w - 1 - 10.3, 12.0]], w)
        restored = unflip_heatmaps(mirrored[None], self.PAIRS, aligned=True)[0]
        npt.assert_array_equal(restored, orig)

    def test_uncorrected_mode_displaces_by_one_cell(self):
        w = 32
        orig = self._encode_pair([[10.0, 12.0], [20.0, 7.0]], w)
        mirrored = self._encode_pair([[w - 1 - 20.0, 7.0],
                                      [w - 1 - 10.0, 12.0]], w)
        shifted = unflip_heatmaps(mirrored[None], self.PAIRS, aligned=False)[0]
        assert shifted[0].argmax() != orig[0].argmax()
        r0, c0 = np.unravel_index(orig[0].argmax(), orig[0].shape)
        r1, c1 = np.unravel_index(shifted[0].argmax(), shifted[0].shape)
        assert (r1, c1) == (r0, c0 + 1)

    def test_flip_average_plumbing(self):
        rng = np.random.default_rng(4)
        maps = rng.uniform(0, 1, (2, 2, 8, 8)).astype(np.float32)

        def fake_forward(images):
            return images  # "heatmaps" == input, so flips are observable

        out = flip_average(fake_forward, maps, self.PAIRS, aligned=True)
        # mirror twice cancels; only the channel swap remains
        expected = 0.5 * (maps + maps[:, [1, 0]])
        npt.assert_allclose(out, expected, atol=1e-7)

    def test_flip_images_mirrors_width(self):
        x = np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3)
        npt.assert_array_equal(flip_images(x)[0, 0],
                               [[2.0, 1.0, 0.0], [5.0, 4.0, 3.0]])


def test_degenerate_matrix_rejected():
    with pytest.raises(ValueError):
        CropTransform(np.zeros((3, 3)))
