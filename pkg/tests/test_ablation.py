import unittest

from bimm.ablation import AXES, COLUMNS, AblationResult, axis_overrides, parse_values, run_ablation
from bimm.config import Config
from bimm.errors import ConfigError, UsageError
from bimm.manifest import RunManifest
from tests._util import tmp_dir, toy_config

try:
    import pandas as pd
except ImportError:  # pragma: no cover - optional extra
    pd = None


class ParseValuesTests(unittest.TestCase):
    def test_defaults_per_axis(self):
        self.assertEqual(parse_values("sharing", None), ["none", "partial", "all"])
        self.assertEqual(len(parse_values("mask_ratio", None)), 4)
        for axis in AXES:
            self.assertTrue(parse_values(axis, None))

    def test_comma_separated(self):
        self.assertEqual(parse_values("mask_ratio", " 0.5, 0.9 ,"), ["0.5", "0.9"])
        self.assertEqual(parse_values("init", ["scratch"]), ["scratch"])

    def test_errors(self):
        with self.assertRaises(UsageError):
            parse_values("optimizer", None)
        with self.assertRaises(UsageError):
            parse_values("sharing", " , ")


class AxisOverrideTests(unittest.TestCase):
    def setUp(self):
        self.base = Config.load({})

    def test_separation_sets_depth_and_clamps_prefix(self):
        self.assertEqual(
            axis_overrides("separation", "2-4-12", self.base),
            {"model.separation": [2, 4, 12], "model.depth": 12},
        )
        out = axis_overrides("separation", "12", self.base)
        self.assertEqual(out["model.depth"], 12)
        self.assertNotIn("pretrain_joint.shared_prefix", out)
        out = axis_overrides("separation", "1-2-12", self.base)
        self.assertEqual(out["pretrain_joint.shared_prefix"], 2)
        self.base.overrides(out)  # still a valid layout

    def test_other_axes(self):
        self.assertEqual(axis_overrides("sharing", "all", self.base), {"pretrain_joint.sharing": "all"})
        self.assertEqual(axis_overrides("mask_ratio", "0.75", self.base), {"mask.ratio_video": 0.75})
        self.assertEqual(
            axis_overrides("targets", "v1", self.base),
            {"pretrain_ventral.target_subset": "v1", "pretrain_joint.target_subset": "v1"},
        )
        self.assertEqual(axis_overrides("init", "scratch", self.base), {"pretrain_joint.init": "scratch"})

    def test_malformed_values(self):
        with self.assertRaises(UsageError):
            axis_overrides("separation", "2,4", self.base)
        with self.assertRaises(UsageError):
            axis_overrides("mask_ratio", "most", self.base)


class RunAblationTests(unittest.TestCase):
    def setUp(self):
        self.seen = []

    def _runner(self, cfg, run_dir):
        self.seen.append((cfg.mask.ratio_video, run_dir.name))
        return {"test_acc": cfg.mask.ratio_video / 2, "joint_final_loss": 1.0, "extra": "dropped"}

    @unittest.skipIf(pd is None, "pandas is not installed")
    def test_one_row_per_value(self):
        with tmp_dir() as out:
            manifest = RunManifest(command="ablate")
            result = run_ablation(toy_config(), "mask_ratio", None, out, runner=self._runner, manifest=manifest)
            table = pd.read_csv(out / "ablation_mask_ratio.csv")
            markdown = (out / "ablation_mask_ratio.md").read_text(encoding="utf-8")
        self.assertEqual([r["value"] for r in result.rows], ["0.5", "0.75", "0.9", "0.95"])
        self.assertEqual([name for _, name in self.seen], [f"mask_ratio={v}" for v in ("0.5", "0.75", "0.9", "0.95")])
        self.assertEqual(list(table.columns), list(COLUMNS))
        self.assertAlmostEqual(float(table["test_acc"][2]), 0.45)
        self.assertTrue(table["train_acc"].isna().all())
        self.assertIn("### mask_ratio", markdown)
        self.assertIn("| mask_ratio | 0.95 |", markdown)
        self.assertEqual(len(manifest["results"]["ablation_mask_ratio"]), 4)
        self.assertEqual(sorted(manifest["artifacts"]), ["ablation_mask_ratio.csv", "ablation_mask_ratio.md"])

    def test_bad_value_fails_before_any_run(self):
        with tmp_dir() as out, self.assertRaises(ConfigError):
            run_ablation(toy_config(), "mask_ratio", "0.5,1.5", out, runner=self._runner)
        self.assertEqual(self.seen, [])

    def test_markdown_without_pandas(self):
        result = AblationResult("sharing", [{"axis": "sharing", "value": "none", "test_acc": 0.5}])
        md = result.to_markdown().splitlines()
        self.assertEqual(md[0], "### sharing")
        self.assertEqual(md[2], "| " + " | ".join(COLUMNS) + " |")
        self.assertEqual(md[4], "| sharing | none | null | null | null | null | 0.5 |")


if __name__ == "__main__":
    unittest.main()
