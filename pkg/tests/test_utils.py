import os
import re
import unittest
from unittest import mock

import numpy as np

from bimm import utils
from tests._util import sha256_bytes, tmp_bytes_file


class UtilsTests(unittest.TestCase):
    def test_hash_is_deterministic_and_unique(self):
        obj1 = {"a": 1, "b": [2, 3]}
        obj2 = {"a": 1}
        obj3 = {"b": [2, 3], "a": 1} # Order shouldn't matter
        obj4 = {"a": 1, "b": [2, 3, {"c": 4}]} # Deeper object

        self.assertEqual(utils._hash(obj1), utils._hash(obj1))
        self.assertEqual(utils._hash(obj1), utils._hash(obj3))
        self.assertNotEqual(utils._hash(obj1), utils._hash(obj2))
        self.assertNotEqual(utils._hash(obj1), utils._hash(obj4))

    def test_hash_arrays_and_numpy_scalars(self):
        a = np.arange(6, dtype=np.float32).reshape(2, 3)
        self.assertEqual(utils._hash({"w": a}), utils._hash({"w": a.copy()}))
        self.assertNotEqual(utils._hash({"w": a}), utils._hash({"w": a.reshape(3, 2)}))
        self.assertNotEqual(utils._hash({"w": a}), utils._hash({"w": a.astype(np.float64)}))
        self.assertEqual(utils._hash({"lr": np.float64(0.5)}), utils._hash({"lr": 0.5}))

    def test_hash_dataframe(self):
        try:
            import pandas as pd
        except ImportError:
            self.skipTest("pandas is not installed, skipping DataFrame hash test")
        df1 = pd.DataFrame({"value": ["0.5", "0.9"], "test_acc": [0.7, 0.8]})
        df2 = pd.DataFrame({"value": ["0.5", "0.9"], "test_acc": [0.7, 0.9]})
        df_hash1 = utils._hash(df1)
        self.assertEqual(df_hash1, utils._hash(df1.copy()))
        self.assertNotEqual(df_hash1, utils._hash(df2))
        self.assertTrue(re.fullmatch(r"[0-9a-f]{64}", df_hash1))

    def test_is_datetime_various_inputs(self):
        good = [
            "2025-08-03T12:00:00Z",
            "2023-01-02T03:04:05+00:00",
            "2024-12-31T23:59:59-05:00",
        ]
        bad = ["not-dt", "2025-13-01T00:00:00Z", 42, "2025-08-03T12:00:00"] # Missing timezone

        for g in good:
            self.assertTrue(utils._is_datetime(g), g)

        for b in bad:
            self.assertFalse(utils._is_datetime(b), str(b))

    def test_now_iso_is_a_datetime(self):
        self.assertTrue(utils._is_datetime(utils._now_iso()))

    def test_sha256_file_matches_manual_digest(self):
        buf = b"bimm-checkpoint-bytes"
        f = tmp_bytes_file(buf)
        try:
            self.assertEqual(utils._sha256(f), sha256_bytes(buf))
            self.assertTrue(re.fullmatch(r"[0-9a-f]{64}", utils._sha256(f)))
        finally:
            f.unlink(missing_ok=True)

    def test_sha256_empty_file(self):
        f = tmp_bytes_file(b"")
        try:
            self.assertEqual(utils._sha256(f), sha256_bytes(b""))
        finally:
            f.unlink(missing_ok=True)

    def test_environment_capture_functions(self):
        libs = utils._library_versions()
        self.assertIsInstance(libs, dict)
        self.assertIn("numpy", {k.lower() for k in libs})

        hardware = utils._hardware_specs()
        self.assertIsInstance(hardware, dict)
        self.assertIn("cpu", hardware)
        self.assertIn("ram", hardware)
        self.assertIn("gpu", hardware)

    def test_library_versions_cover_installed_tracked_only(self):
        libs = utils._library_versions()
        self.assertLessEqual(set(libs), set(utils._TRACKED_LIBRARIES))
        self.assertEqual(libs["numpy"], np.__version__)

    def test_hardware_specs_are_strings_and_read_visible_devices(self):
        with mock.patch.dict(os.environ, {"CUDA_VISIBLE_DEVICES": "0,1"}):
            hardware = utils._hardware_specs()
        self.assertEqual(hardware["gpu"], "0,1")
        self.assertTrue(all(isinstance(v, str) for v in hardware.values()))
