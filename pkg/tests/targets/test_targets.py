import math
import unittest

import numpy as np

from bimm.errors import ConfigError, ContractError, ShapeError, UnsupportedConfigError
from bimm.patching import ClipSpec, sample_random_mask, stack_masks, unpatchify_frames
from bimm.targets import (
    ContourConfig,
    GaborBankConfig,
    TargetConfig,
    build_gabor_bank,
    build_target_set,
    contour_target,
    gabor_target,
    gather_masked_batch,
    gather_masked_targets,
    motion_target,
    normalize_tokens,
    rgb_target,
    stack_target_sets,
    tap_kinds,
    target_dim,
)
from tests._util import rng

CLIP = ClipSpec()


class GaborBankTests(unittest.TestCase):
    def test_shape_and_zero_dc(self):
        bank = build_gabor_bank()
        self.assertEqual(bank.shape, (8, 7, 7))
        np.testing.assert_allclose(bank.sum(axis=(1, 2)), 0.0, atol=1e-12)

    def test_invalid_extent(self):
        with self.assertRaises(ConfigError):
            GaborBankConfig(size=6)

    def test_orientation_selectivity(self):
        x = np.arange(32)
        stripes = 0.5 + 0.5 * np.cos(2 * math.pi * x / 4.0)
        image = np.repeat(np.tile(stripes, (32, 1))[..., None], 3, axis=-1)
        out = gabor_target(image, build_gabor_bank(), CLIP).reshape(64, 8, 16)
        energy = (out ** 2).sum(axis=(0, 2))
        # kernel 0 is theta=0, lambda=4; kernel 4 is theta=pi/2, lambda=4
        self.assertGreater(energy[0], 10 * energy[4])


class TargetValueTests(unittest.TestCase):
    def test_constant_image_gives_zero_gabor_and_contour(self):
        image = np.full((32, 32, 3), 0.3)
        np.testing.assert_allclose(gabor_target(image, build_gabor_bank(), CLIP), 0.0, atol=1e-9)
        np.testing.assert_array_equal(contour_target(image, ContourConfig(), CLIP), 0.0)

    def test_static_clip_gives_zero_motion(self):
        frame = rng(0).random((32, 32, 3))
        clip = np.repeat(frame[None], 8, axis=0)
        np.testing.assert_array_equal(motion_target(clip, CLIP), 0.0)

    def test_moving_clip_has_motion(self):
        clip = rng(1).random((8, 32, 32, 3))
        self.assertGreater(motion_target(clip, CLIP).max(), 0.0)

    def test_motion_is_second_minus_first_frame(self):
        clip = rng(2).random((8, 32, 32, 3))
        tokens = motion_target(clip, CLIP)
        self.assertEqual(tokens.shape, (256, 48))
        expected = np.abs(clip[1, :4, :4] - clip[0, :4, :4]).reshape(-1)
        np.testing.assert_allclose(tokens[0], expected)

    def test_step_edge_contour_band(self):
        image = np.zeros((32, 32, 3))
        image[:, 16:] = 1.0
        tokens = contour_target(image, ContourConfig(), CLIP)
        magnitude = unpatchify_frames(tokens, (8, 8), 4, 1)[..., 0]
        self.assertAlmostEqual(magnitude.max(), 1.0, places=6)
        columns = np.flatnonzero(magnitude.max(axis=0) > 0)
        self.assertGreaterEqual(columns.min(), 15)
        self.assertLessEqual(columns.max(), 17)

    def test_normalised_rgb_statistics(self):
        tokens = rgb_target(rng(3).random((64, 48)))
        self.assertLess(np.abs(tokens.mean(axis=-1)).max(), 1e-4)
        self.assertLess(np.abs(tokens.var(axis=-1) - 1.0).max(), 1e-3)

    def test_normalize_returns_stats(self):
        raw = rng(4).random((5, 12))
        norm, mu, sd = normalize_tokens(raw)
        np.testing.assert_allclose(norm * sd + mu, raw)

    def test_motion_needs_tubelet_two(self):
        clip = ClipSpec(height=8, width=8, raw_frames=8, stride=1, tubelet=4, patch=4)
        with self.assertRaises(UnsupportedConfigError):
            motion_target(np.zeros((8, 8, 8, 3)), clip)

    def test_geometry_mismatch(self):
        with self.assertRaises(ShapeError):
            contour_target(np.zeros((16, 16, 3)), ContourConfig(), CLIP)

    def test_unknown_detector(self):
        with self.assertRaises(UnsupportedConfigError):
            ContourConfig(detector="canny")


class TargetSetTests(unittest.TestCase):
    def test_tap_kinds(self):
        self.assertEqual(tap_kinds("ventral", 3), {1: "gabor", 2: "contour", 3: "rgb"})
        self.assertEqual(tap_kinds("dorsal", 3), {1: "gabor", 2: "contour", 3: "motion"})
        self.assertEqual(tap_kinds("ventral", 2), {1: "contour", 2: "rgb"})
        with self.assertRaises(ConfigError):
            tap_kinds("lateral", 3)

    def test_ventral_dimensions(self):
        tset = build_target_set("ventral", rng(5).random((32, 32, 3)), TargetConfig(), CLIP)
        self.assertEqual({t: v.shape for t, v in tset.values.items()}, {1: (64, 128), 2: (64, 16), 3: (64, 48)})
        self.assertIn(3, tset.stats)
        self.assertNotIn(1, tset.stats)

    def test_dorsal_dimensions(self):
        tset = build_target_set("dorsal", rng(6).random((8, 32, 32, 3)), TargetConfig(), CLIP)
        self.assertEqual({t: v.shape for t, v in tset.values.items()}, {1: (256, 256), 2: (256, 32), 3: (256, 48)})
        bank = GaborBankConfig()
        for tap, kind in tset.kinds.items():
            self.assertEqual(tset.values[tap].shape[1], target_dim(kind, "dorsal", CLIP, bank))

    def test_branch_input_rank(self):
        with self.assertRaises(ShapeError):
            build_target_set("dorsal", np.zeros((32, 32, 3)), TargetConfig(), CLIP)

    def test_masked_gather(self):
        tset = build_target_set("ventral", rng(7).random((32, 32, 3)), TargetConfig(), CLIP)
        mask = sample_random_mask(64, 0.75, 0)
        picked = gather_masked_targets(tset, mask)
        np.testing.assert_array_equal(picked[2], tset.values[2][mask.masked_idx])

        sets = [tset, build_target_set("ventral", rng(8).random((32, 32, 3)), TargetConfig(), CLIP)]
        stacked = stack_target_sets(sets)
        batch = stack_masks([mask, sample_random_mask(64, 0.75, 1)])
        rows = gather_masked_batch(stacked[3], batch)
        self.assertEqual(rows.shape, (2, 48, 48))
        np.testing.assert_array_equal(rows[1], sets[1].values[3][batch.masked_idx[1]])

    def test_stacking_needs_matching_sets(self):
        with self.assertRaises(ContractError):
            stack_target_sets([])
        image = build_target_set("ventral", rng(9).random((32, 32, 3)), TargetConfig(), CLIP)
        single = build_target_set("ventral", rng(9).random((32, 32, 3)), TargetConfig(), CLIP, n_taps=1)
        with self.assertRaises(ContractError):
            stack_target_sets([image, single])

    def test_loss_on_values(self):
        with self.assertRaises(ConfigError):
            TargetConfig(loss_on="visible")


if __name__ == "__main__":
    unittest.main()
