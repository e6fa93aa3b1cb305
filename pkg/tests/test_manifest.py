import json
import unittest
import uuid
from datetime import datetime, timedelta, timezone
from unittest.mock import patch

from bimm.manifest import MANIFEST_NAME, RunManifest
from bimm.validator import SchemaError
from tests._util import sha256_bytes, tmp_dir, toy_config


class RunManifestTests(unittest.TestCase):
    def test_full_lifecycle(self):
        start_dt = datetime(2024, 1, 1, tzinfo=timezone.utc)
        msg_dt = start_dt + timedelta(seconds=1)
        end_dt = start_dt + timedelta(seconds=123)
        iso_times = [t.isoformat() for t in (start_dt, msg_dt, end_dt)]

        with patch("bimm.utils._now_iso", side_effect=iso_times):
            m = RunManifest(command="gradcheck", argv=["gradcheck", "--config", "toy"])
            self.assertEqual(m["initialization_dtg"], iso_times[0])

            m.add_message("info", "checking 60 coordinates")
            self.assertEqual(m["messages"][0], {"timestamp": iso_times[1], "level": "INFO", "text": "checking 60 coordinates"})

            m["results"] = {"passed": True, "max_rel_err": 2.5e-06}
            m.finalise()

        self.assertTrue(m.finalised)
        self.assertEqual(m["finalization_dtg"], iso_times[2])
        self.assertEqual(m["total_runtime_seconds"], 123)
        self.assertEqual(m["status"], "success")
        self.assertEqual(m["exit_code"], 0)
        self.assertIsNone(m["error"])
        uuid.UUID(m["run_id"])
        self.assertRegex(m["results_hash"], r"[0-9a-f]{64}")
        self.assertIn("python_version", m["execution_environment"])

    def test_config_recorded_with_hash_and_seed(self):
        cfg = toy_config({"seed": 5})
        m = RunManifest(command="pretrain-ventral")
        m.set_config(cfg)
        self.assertEqual(m["seed"], 5)
        self.assertEqual(m["config_hash"], cfg.hash)
        self.assertEqual(m["config"], cfg.to_dict())

    def test_failure_status(self):
        m = RunManifest(command="train")
        m.finalise(exit_code=2, error="dataset is empty")
        self.assertEqual(m["status"], "failure")
        self.assertEqual(m["error"], "dataset is empty")

    def test_exit_code_out_of_range_rejected(self):
        m = RunManifest(command="train")
        with self.assertRaises(SchemaError):
            m.finalise(exit_code=7)
        self.assertFalse(m.finalised)

    def test_bad_message_level_rejected(self):
        m = RunManifest(command="train")
        m.add_message("trace", "too chatty")
        with self.assertRaisesRegex(SchemaError, r"root\.messages\[0\]\.level"):
            m.finalise()

    def test_messages_ignored_after_finalise(self):
        m = RunManifest(command="train")
        m.finalise()
        m.add_message("INFO", "late")
        self.assertEqual(m["messages"], [])

    def test_finalise_is_idempotent(self):
        m = RunManifest(command="train")
        m.finalise()
        run_id = m["run_id"]
        m.finalise(exit_code=3)
        self.assertEqual(m["run_id"], run_id)
        self.assertEqual(m["exit_code"], 0)

    def test_artifacts_and_save(self):
        with tmp_dir() as root:
            ckpt = root / "checkpoints" / "ventral.ckpt"
            ckpt.parent.mkdir()
            ckpt.write_bytes(b"BIMM-bytes")
            m = RunManifest(command="pretrain-ventral")
            digest = m.add_artifact(ckpt, root)
            self.assertEqual(digest, sha256_bytes(b"BIMM-bytes"))
            self.assertEqual(m["artifacts"], {"checkpoints/ventral.ckpt": digest})

            with self.assertRaises(RuntimeError):
                m.save(root / MANIFEST_NAME)
            m.finalise()
            out = m.save(root / MANIFEST_NAME)
            on_disk = json.loads(out.read_text(encoding="utf-8"))
        self.assertEqual(on_disk["artifacts"], m["artifacts"])
        self.assertEqual(on_disk["command"], "pretrain-ventral")


if __name__ == "__main__":
    unittest.main()
