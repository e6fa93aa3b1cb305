import unittest

import numpy as np
from PIL import Image

from bimm.errors import ShapeError
from bimm.patching import patchify_frames, sample_random_mask, sample_tube_mask
from bimm.targets import TargetConfig, build_target_set, motion_target, normalize_tokens
from bimm.visualize import compose_grid, emit_reconstruction_grid, render_target_set
from tests._util import TOY_CLIP, rng, sha256_bytes, tmp_dir


def _pixels(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _quantise(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


class ComposeGridTests(unittest.TestCase):
    def test_extent_and_gutter(self):
        a, b = np.zeros((4, 4, 3)), np.full((4, 4, 3), 0.25)
        grid = compose_grid([[a, b], [b]])
        self.assertEqual(grid.shape, (10, 10, 3))
        np.testing.assert_array_equal(grid[4:6], 1.0)
        np.testing.assert_array_equal(grid[6:, :4], 0.25)
        np.testing.assert_array_equal(grid[6:, 6:], 1.0)  # short row padded with fill

    def test_mismatched_panels(self):
        with self.assertRaises(ShapeError):
            compose_grid([[np.zeros((4, 4, 3)), np.zeros((4, 5, 3))]])


class ReconstructionGridTests(unittest.TestCase):
    def setUp(self):
        self.image = rng(0).random((16, 16, 3))
        self.tokens = patchify_frames(self.image, 4)
        self.original = _quantise(self.image)

    def _rows(self, path):
        px = _pixels(path)
        self.assertEqual(px.shape, (52, 16, 3))
        return px[0:16], px[18:34], px[36:52]

    def test_nothing_masked_repeats_the_original(self):
        mask = sample_random_mask(16, 0.0, 0)
        with tmp_dir() as root:
            path = emit_reconstruction_grid("ventral", self.image, mask, np.zeros((0, 48)), root / "g.png", TOY_CLIP)
            rows = self._rows(path)
        for row in rows:
            np.testing.assert_array_equal(row, self.original)

    def test_perfect_prediction_reconstructs(self):
        mask = sample_random_mask(16, 0.75, 1)
        with tmp_dir() as root:
            path = emit_reconstruction_grid(
                "ventral", self.image, mask, self.tokens[mask.masked_idx], root / "g.png", TOY_CLIP
            )
            top, middle, bottom = self._rows(path)
        np.testing.assert_array_equal(top, self.original)
        np.testing.assert_array_equal(bottom, self.original)
        self.assertFalse(np.array_equal(middle, self.original))
        # masked patch (row-major grid position) shows the fill grey
        gr, gc = divmod(int(mask.masked_idx[0]), 4)
        np.testing.assert_array_equal(middle[4 * gr:4 * gr + 4, 4 * gc:4 * gc + 4], 128)

    def test_normalised_predictions_mapped_back(self):
        mask = sample_random_mask(16, 0.5, 2)
        norm, mean, std = normalize_tokens(self.tokens)
        with tmp_dir() as root:
            path = emit_reconstruction_grid(
                "ventral", self.image, mask, norm[mask.masked_idx], root / "g.png", TOY_CLIP, stats=(mean, std)
            )
            _, _, bottom = self._rows(path)
        np.testing.assert_allclose(bottom.astype(int), self.original.astype(int), atol=1)

    def test_dorsal_grid_has_one_column_per_cube(self):
        clip = rng(3).random((TOY_CLIP.frames, 16, 16, 3))
        mask = sample_tube_mask(16, 2, 0.5, 0)
        preds = motion_target(clip, TOY_CLIP)[mask.masked_idx]
        with tmp_dir() as root:
            px = _pixels(emit_reconstruction_grid("dorsal", clip, mask, preds, root / "d.png", TOY_CLIP))
        self.assertEqual(px.shape, (4 * 16 + 3 * 2, 34, 3))
        np.testing.assert_array_equal(px[18:34], px[54:70])

    def test_dorsal_grid_opens_with_rgb_frames(self):
        clip = rng(6).random((TOY_CLIP.frames, 16, 16, 3))
        mask = sample_tube_mask(16, 2, 0.5, 1)
        preds = np.zeros((mask.num_masked, 48))
        with tmp_dir() as root:
            px = _pixels(emit_reconstruction_grid("dorsal", clip, mask, preds, root / "d.png", TOY_CLIP))
        for k, frame in enumerate(clip[:: TOY_CLIP.tubelet]):
            with self.subTest(cube=k):
                np.testing.assert_array_equal(px[0:16, 18 * k:18 * k + 16], _quantise(frame))
        # motion row differs from the footage above it
        self.assertFalse(np.array_equal(px[0:16], px[18:34]))

    def test_prediction_shape_checked(self):
        mask = sample_random_mask(16, 0.75, 1)
        with tmp_dir() as root, self.assertRaises(ShapeError):
            emit_reconstruction_grid("ventral", self.image, mask, np.zeros((11, 48)), root / "g.png", TOY_CLIP)

    def test_bytes_are_stable(self):
        mask = sample_random_mask(16, 0.75, 4)
        preds = np.full((12, 48), 0.3)
        with tmp_dir() as root:
            a = emit_reconstruction_grid("ventral", self.image, mask, preds, root / "a.png", TOY_CLIP).read_bytes()
            b = emit_reconstruction_grid("ventral", self.image, mask, preds, root / "b.png", TOY_CLIP).read_bytes()
        self.assertEqual(sha256_bytes(a), sha256_bytes(b))


class TargetPanelTests(unittest.TestCase):
    def test_one_row_per_tap(self):
        image = rng(5).random((16, 16, 3))
        tset = build_target_set("ventral", image, TargetConfig(), TOY_CLIP)
        with tmp_dir() as root:
            px = _pixels(render_target_set(tset, TOY_CLIP, root / "targets.png", kernels=8))
        # gabor row holds one panel per kernel
        self.assertEqual(px.shape, (3 * 16 + 2 * 2, 8 * 16 + 7 * 2, 3))


if __name__ == "__main__":
    unittest.main()
