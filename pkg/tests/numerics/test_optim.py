import unittest

import numpy as np

from bimm.errors import ConfigError, ContractError
from bimm.optim import OptimState, adamw_step, lr_at_step
from bimm.params import ParamStore
from bimm.tensor import Tensor
from bimm.training import ScheduleConfig


def _store(*values: float, dtype=np.float64) -> ParamStore:
    store = ParamStore()
    store.add("w", Tensor(np.asarray(values), requires_grad=True, dtype=dtype))
    return store


class AdamWTests(unittest.TestCase):
    def test_decay_only_with_zero_gradient(self):
        store = _store(1.0)
        adamw_step(store, OptimState.for_store(store), lr=0.1, weight_decay=0.05, grads={"w": np.zeros(1)})
        self.assertAlmostEqual(float(store["w"].data[0]), 0.995, places=12)

    def test_first_step_moves_by_lr_against_the_sign(self):
        store = _store(0.0, 0.0)
        adamw_step(store, OptimState.for_store(store), lr=0.01, weight_decay=0.0,
                   grads={"w": np.array([0.3, -2.0])})
        np.testing.assert_allclose(store["w"].data, [-0.01, 0.01], rtol=1e-6)

    def test_skip_decay_names_are_not_decayed(self):
        store = _store(1.0)
        adamw_step(store, OptimState.for_store(store), lr=0.1, weight_decay=0.5,
                   grads={"w": np.zeros(1)}, skip_decay={"w"})
        self.assertEqual(float(store["w"].data[0]), 1.0)

    def test_grad_slot_used_when_no_grads_given(self):
        store = _store(0.0)
        store["w"].grad = np.array([1.0])
        state = OptimState.for_store(store)
        adamw_step(store, state, lr=0.1, weight_decay=0.0)
        self.assertLess(float(store["w"].data[0]), 0.0)
        self.assertEqual(state.step, 1)

    def test_identical_inputs_give_bit_identical_trajectories(self):
        def run() -> np.ndarray:
            store = ParamStore()
            store.create("w", np.random.default_rng(0).standard_normal((4, 3)).astype(np.float32))
            state = OptimState.for_store(store)
            draws = np.random.default_rng(1)
            for _ in range(100):
                grad = draws.standard_normal((4, 3)).astype(np.float32)
                adamw_step(store, state, lr=1e-3, grads={"w": grad})
            return store["w"].data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_non_positive_lr_rejected(self):
        store = _store(1.0)
        for lr in (0.0, -1e-3):
            with self.assertRaises(ConfigError):
                adamw_step(store, OptimState.for_store(store), lr=lr)

    def test_gradient_shape_mismatch(self):
        store = _store(1.0, 2.0)
        with self.assertRaises(ContractError):
            adamw_step(store, OptimState.for_store(store), lr=0.1, grads={"w": np.zeros(3)})


class ScheduleTests(unittest.TestCase):
    def setUp(self):
        self.schedule = ScheduleConfig(base_lr=1e-3, min_lr=1e-5, warmup_steps=10, total_steps=110)

    def test_linear_warmup(self):
        self.assertEqual(lr_at_step(0, self.schedule), 0.0)
        self.assertAlmostEqual(lr_at_step(5, self.schedule), 5e-4)
        self.assertAlmostEqual(lr_at_step(10, self.schedule), 1e-3)

    def test_cosine_decay_to_floor(self):
        self.assertAlmostEqual(lr_at_step(60, self.schedule), (1e-3 + 1e-5) / 2)
        self.assertAlmostEqual(lr_at_step(110, self.schedule), 1e-5)

    def test_monotone_after_warmup(self):
        lrs = [lr_at_step(s, self.schedule) for s in range(10, 111)]
        self.assertTrue(all(a >= b for a, b in zip(lrs, lrs[1:])))

    def test_step_outside_range(self):
        for step in (-1, 111):
            with self.assertRaises(ContractError):
                lr_at_step(step, self.schedule)

    def test_batch_scaling(self):
        sched = ScheduleConfig(base_lr=1e-3, batch_size=32, lr_scale_batch=True)
        self.assertAlmostEqual(sched.effective_base_lr, 2e-3)

    def test_warmup_must_precede_total(self):
        with self.assertRaises(ConfigError):
            ScheduleConfig(warmup_steps=10, total_steps=10)


if __name__ == "__main__":
    unittest.main()
