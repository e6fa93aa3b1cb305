"""
gradcheck.py - central finite differences against reverse-mode gradients.

``finite_diff_grad`` is the oracle; ``run_gradcheck`` builds a two-branch toy
model in 64-bit, evaluates the joint loss on one fixed batch and compares the
analytic gradient with the oracle on sampled coordinates covering every
encoder block, every decoder and both mask tokens.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .model import EncoderConfig, init_encoder
from .params import ParamStore
from .patching import ClipSpec
from .targets import TargetConfig, build_gabor_bank
from .training import SharedRegion, TrainConfig, loss_dorsal, loss_joint, loss_ventral, prepare_batch

__all__ = [
    "GradcheckConfig",
    "GradcheckEntry",
    "GradcheckReport",
    "relative_error",
    "finite_diff_grad",
    "sample_coordinates",
    "compare_gradients",
    "run_gradcheck",
    "require_pass",
]

log = logging.getLogger(__name__)

_GROUP = re.compile(r"^(\w+)\.(embed|block\d+|decoder\.tap\d+|mask_token|head|cls_token)")


@dataclass(frozen=True)
class GradcheckConfig:
    coords: int = 60
    h: float = 1e-6
    tolerance: float = 1e-4
    batch_size: int = 2
    seed: int = 0


@dataclass(frozen=True)
class GradcheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_err(self) -> float:
        return relative_error(self.analytic, self.numeric)


@dataclass
class GradcheckReport:
    tolerance: float
    entries: list[GradcheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.entries) and self.max_rel_err < self.tolerance

    def worst(self, n: int = 5) -> list[GradcheckEntry]:
        return sorted(self.entries, key=lambda e: e.rel_err, reverse=True)[:n]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "checked": len(self.entries),
            "max_rel_err": self.max_rel_err,
            "worst": [
                {"name": e.name, "index": e.index, "analytic": e.analytic, "numeric": e.numeric, "rel_err": e.rel_err}
                for e in self.worst()
            ],
        }


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """``|a − n| / max(|a|, |n|, floor)``; the floor keeps near-zero gradients from dominating."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_grad(
    f: Callable[[ParamStore], float],
    store: ParamStore,
    h: float = 1e-6,
    coords: Iterable[tuple[str, int]] | None = None,
) -> dict:
    """Central differences ``(f(θ+h) − f(θ−h)) / 2h``.

    Without *coords* every coordinate of every tensor is perturbed and a
    ``name -> array`` map is returned.  With *coords* only those
    ``(name, flat_index)`` pairs are perturbed and a ``(name, index) -> value``
    map is returned.  Each value is restored exactly after its evaluation.
    """
    if not h > 0:
        raise ContractError(f"finite-difference step must be positive, got {h}")
    if coords is None:
        out: dict = {}
        for name, tensor in store.items():
            grad = np.zeros(tensor.size)
            for i in range(tensor.size):
                grad[i] = _central(f, store, tensor, i, h)
            out[name] = grad.reshape(tensor.shape)
        return out
    return {(name, i): _central(f, store, store[name], i, h) for name, i in coords}


def _central(f: Callable[[ParamStore], float], store: ParamStore, tensor: T.Tensor, i: int, h: float) -> float:
    flat = tensor.data.reshape(-1)
    original = flat[i]
    try:
        flat[i] = original + h
        plus = float(f(store))
        flat[i] = original - h
        minus = float(f(store))
    finally:
        flat[i] = original
    return (plus - minus) / (2.0 * h)


def sample_coordinates(store: ParamStore, count: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """One coordinate per parameter group, then uniform draws up to *count*.

    Groups are the token embedding, each block, each decoder and the mask
    token of each branch, so every component is exercised at least once.
    """
    names = list(store)
    groups: dict[str, list[str]] = {}
    for name in names:
        match = _GROUP.match(name)
        groups.setdefault(match.group(0) if match else name, []).append(name)
    coords: list[tuple[str, int]] = []
    for members in groups.values():
        name = members[int(rng.integers(len(members)))]
        coords.append((name, int(rng.integers(store[name].size))))
    while len(coords) < count:
        name = names[int(rng.integers(len(names)))]
        coords.append((name, int(rng.integers(store[name].size))))
    return coords


def compare_gradients(
    f: Callable[[ParamStore], T.Tensor],
    store: ParamStore,
    coords: Sequence[tuple[str, int]],
    h: float = 1e-6,
    tolerance: float = 1e-4,
) -> GradcheckReport:
    """Backward once through ``f(store)``, then check *coords* against the oracle."""
    store.zero_grad()
    loss = f(store)
    T.backward(loss, store)
    analytic = {name: store[name].grad.reshape(-1).copy() for name in store}
    with T.no_grad():
        numeric = finite_diff_grad(lambda s: f(s).item(), store, h, coords)
    report = GradcheckReport(tolerance)
    for name, i in coords:
        report.entries.append(GradcheckEntry(name, i, float(analytic[name][i]), float(numeric[(name, i)])))
    return report


def run_gradcheck(
    enc_cfg: EncoderConfig,
    clip: ClipSpec,
    train_cfg: TrainConfig,
    targets_cfg: TargetConfig | None = None,
    cfg: GradcheckConfig = GradcheckConfig(),
) -> GradcheckReport:
    """Joint-loss gradient check of a fresh two-branch model in 64-bit."""
    targets_cfg = targets_cfg or TargetConfig(loss_on=train_cfg.loss_on)
    rng = np.random.default_rng(cfg.seed)
    with T.precision(np.float64):
        ventral = init_encoder(enc_cfg, clip, "ventral", rng, targets_cfg)
        dorsal = init_encoder(enc_cfg, clip, "dorsal", rng, targets_cfg)
        region = SharedRegion.for_config(enc_cfg, train_cfg.sharing, train_cfg.shared_prefix, ventral.store)
        region.install(ventral, dorsal)
        store = ParamStore.deduplicated(ventral.store, dorsal.store)

        bank = build_gabor_bank(targets_cfg.gabor)
        clips = rng.random((cfg.batch_size, clip.frames, clip.height, clip.width, clip.channels))
        frames = clips[:, 0]
        d_batch = prepare_batch("dorsal", clips, dorsal, train_cfg.mask, targets_cfg, rng, loss_on=train_cfg.loss_on, bank=bank)
        v_batch = prepare_batch("ventral", frames, ventral, train_cfg.mask, targets_cfg, rng, loss_on=train_cfg.loss_on, bank=bank)

        def joint(_: ParamStore) -> T.Tensor:
            l_v, _v = loss_ventral(ventral, v_batch, train_cfg.tap_weights, train_cfg.loss_on)
            l_d, _d = loss_dorsal(dorsal, d_batch, train_cfg.tap_weights, train_cfg.loss_on)
            return loss_joint(l_v, l_d, train_cfg.lam)

        coords = sample_coordinates(store, cfg.coords, rng)
        report = compare_gradients(joint, store, coords, cfg.h, cfg.tolerance)

    log.info("gradcheck: %d coordinates, max relative error %.3g", len(report.entries), report.max_rel_err)
    for entry in report.worst(3):
        log.debug("  %s[%d]: analytic %.6g numeric %.6g", entry.name, entry.index, entry.analytic, entry.numeric)
    return report


def require_pass(report: GradcheckReport) -> None:
    if not report.passed:
        worst = report.worst(1)
        detail = f" worst {worst[0].name}[{worst[0].index}]" if worst else ""
        raise NumericError(f"gradient check failed: max relative error {report.max_rel_err:.3g}{detail}")
