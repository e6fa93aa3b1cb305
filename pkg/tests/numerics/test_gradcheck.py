import unittest

import numpy as np

from bimm import tensor as T
from bimm.errors import ContractError, NumericError
from bimm.gradcheck import (
    GradcheckConfig,
    GradcheckEntry,
    GradcheckReport,
    compare_gradients,
    finite_diff_grad,
    relative_error,
    require_pass,
    run_gradcheck,
    sample_coordinates,
)
from bimm.params import ParamStore
from bimm.patching import MaskConfig
from bimm.training import TrainConfig
from tests._util import TINY_CLIP, TINY_ENCODER, toy_config


def _square_store(value: float) -> ParamStore:
    store = ParamStore()
    with T.precision(np.float64):
        store.create("w", np.array([value]))
    return store


class FiniteDifferenceTests(unittest.TestCase):
    def test_square_at_three(self):
        store = _square_store(3.0)
        grad = finite_diff_grad(lambda s: float((s["w"].data ** 2).sum()), store, 1e-6)
        self.assertAlmostEqual(float(grad["w"][0]), 6.0, places=6)

    def test_values_restored(self):
        store = _square_store(3.0)
        finite_diff_grad(lambda s: float((s["w"].data ** 3).sum()), store, 1e-3)
        self.assertEqual(float(store["w"].data[0]), 3.0)

    def test_step_must_be_positive(self):
        store = _square_store(3.0)
        for h in (0.0, -1e-6):
            with self.assertRaises(ContractError):
                finite_diff_grad(lambda s: 0.0, store, h)

    def test_coordinate_form(self):
        store = _square_store(2.0)
        out = finite_diff_grad(lambda s: float((s["w"].data ** 2).sum()), store, 1e-6, [("w", 0)])
        self.assertEqual(list(out), [("w", 0)])
        self.assertAlmostEqual(out[("w", 0)], 4.0, places=6)


class ReportTests(unittest.TestCase):
    def test_relative_error_floor(self):
        self.assertAlmostEqual(relative_error(0.0, 1e-6), 1e-3)
        self.assertAlmostEqual(relative_error(2.0, 1.0), 0.5)

    def test_empty_report_does_not_pass(self):
        report = GradcheckReport(1e-4)
        self.assertFalse(report.passed)
        with self.assertRaises(NumericError):
            require_pass(report)

    def test_worst_entry_first(self):
        report = GradcheckReport(1e-4, [GradcheckEntry("a", 0, 1.0, 1.0), GradcheckEntry("b", 3, 1.0, 2.0)])
        self.assertEqual(report.worst(1)[0].name, "b")
        self.assertFalse(report.passed)
        self.assertEqual(len(report.to_dict()["worst"]), 2)

    def test_compare_gradients_on_quadratic(self):
        store = _square_store(1.5)
        report = compare_gradients(lambda s: T.sum(s["w"] * s["w"]), store, [("w", 0)])
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.entries[0].analytic, 3.0)


class CoordinateSamplingTests(unittest.TestCase):
    def test_every_group_visited(self):
        store = ParamStore()
        for name in ("ventral.embed.weight", "ventral.block01.attn.qkv.weight",
                     "ventral.block02.mlp.fc1.weight", "ventral.mask_token"):
            store.create(name, np.zeros((2, 2)))
        coords = sample_coordinates(store, 6, np.random.default_rng(0))
        self.assertEqual(len(coords), 6)
        self.assertEqual({n for n, _ in coords[:4]}, set(store))


class JointLossGradcheckTests(unittest.TestCase):
    def test_two_block_encoder(self):
        train = TrainConfig(mask=MaskConfig(0.5, 0.5), sharing="none", shared_prefix=0)
        report = run_gradcheck(TINY_ENCODER, TINY_CLIP, train, cfg=GradcheckConfig(coords=20, batch_size=1))
        self.assertGreaterEqual(len(report.entries), 20)
        self.assertLess(report.max_rel_err, 1e-4)

    def test_toy_preset_with_partial_sharing(self):
        cfg = toy_config({"gradcheck.coords": 60, "gradcheck.batch_size": 2})
        report = run_gradcheck(cfg.encoder, cfg.clip, cfg.pretrain_joint, cfg.targets, cfg.gradcheck)
        self.assertTrue(report.passed, report.worst(3))
        require_pass(report)


if __name__ == "__main__":
    unittest.main()
