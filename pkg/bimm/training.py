"""
training.py - reconstruction losses, partial weight sharing, the two-stage
pretraining schedule and supervised finetuning.

Public API
----------
ScheduleConfig, TrainConfig, FinetuneConfig
    Frozen run settings; ``__post_init__`` enforces the cross-field rules.

SharedRegion
    Names of encoder parameters held as one storage by both branches.

LossReport
    Per-tap and total losses of one optimizer step.

prepare_batch(branch, inputs, params, ...) -> PreparedBatch
tap_losses(preds, targets, weights) -> (total, per_tap)
loss_ventral(params, batch, weights, loss_on) / loss_dorsal(...)
loss_joint(l_v, l_d, lam)
reconstruct(params, sample, mask_cfg, targets_cfg, rng)
joint_step(clips, ventral, dorsal, region, state, cfg, step, rng, ...)
pretrain_ventral(images, enc_cfg, clip, cfg, ...)
pretrain_joint(clips, ventral, enc_cfg, cfg, ...)
pretrain_dorsal(clips, enc_cfg, clip, cfg, ...)
finetune(train, test, params, cfg, ...)
lr_at_step(step, schedule)
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DataError, NumericError
from .model import (
    BranchParams,
    EncoderConfig,
    POOL_MODES,
    block_prefix,
    decoder_forward,
    encoder_forward_with_taps,
    inflate_ventral_to_dorsal,
    init_encoder,
    init_head,
    head_forward,
)
from .optim import OptimState, adamw_step, lr_at_step
from .params import ParamStore
from .patching import (
    ClipSpec,
    MaskBatch,
    MaskConfig,
    MaskSpec,
    cubify_batch,
    patchify_frames,
    sample_random_mask,
    sample_tube_mask,
    stack_masks,
)
from .targets import TargetConfig, build_gabor_bank, build_target_set, gather_masked_batch, stack_target_sets
from .tensor import Tensor

if TYPE_CHECKING:  # pragma: no cover
    from .metrics import MetricsWriter

__all__ = [
    "ScheduleConfig",
    "TrainConfig",
    "FinetuneConfig",
    "SharedRegion",
    "LossReport",
    "PreparedBatch",
    "FinetuneResult",
    "TARGET_SUBSETS",
    "prepare_batch",
    "tap_losses",
    "loss_ventral",
    "loss_dorsal",
    "loss_joint",
    "reconstruct",
    "joint_step",
    "pretrain_ventral",
    "pretrain_joint",
    "pretrain_dorsal",
    "finetune",
    "evaluate",
    "lr_at_step",
]

log = logging.getLogger(__name__)

SHARING_MODES = ("none", "partial", "all")
INIT_MODES = ("ventral", "scratch", "ventral_frames")
TARGET_SUBSETS: Mapping[str, tuple[float, float, float]] = {
    "v1": (1.0, 0.0, 0.0),
    "v1+v2": (1.0, 1.0, 0.0),
    "full": (1.0, 1.0, 1.0),
}
_LR_REFERENCE_BATCH = 16

# --------------------------------------------------------------------------- #
# Configuration                                                               #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 1.5e-4
    min_lr: float = 1e-6
    warmup_steps: int = 40
    total_steps: int = 1000
    batch_size: int = 8
    lr_scale_batch: bool = False

    def __post_init__(self) -> None:
        if not self.base_lr > 0 or not self.min_lr > 0:
            raise ConfigError(f"base_lr and min_lr must be positive, got {self.base_lr}, {self.min_lr}")
        if self.min_lr > self.effective_base_lr:
            raise ConfigError(f"min_lr {self.min_lr} exceeds base_lr {self.effective_base_lr}")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.total_steps and self.warmup_steps >= self.total_steps:
            raise ConfigError(f"warmup_steps ({self.warmup_steps}) must be < total_steps ({self.total_steps})")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def effective_base_lr(self) -> float:
        """``base_lr``, or ``base_lr · batch / 16`` with linear scaling on."""
        if self.lr_scale_batch:
            return self.base_lr * self.batch_size / _LR_REFERENCE_BATCH
        return self.base_lr


@dataclass(frozen=True)
class TrainConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    lam: float = 1.0
    tap_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    sharing: str = "partial"
    shared_prefix: int = 4
    loss_on: str = "masked"
    frames_per_clip: int = 1
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    random_flip: bool = False
    init: str = "ventral"
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tap_weights", tuple(float(w) for w in self.tap_weights))
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if any(w < 0 for w in self.tap_weights):
            raise ConfigError(f"tap weights must be >= 0, got {self.tap_weights}")
        if self.sharing not in SHARING_MODES:
            raise ConfigError(f"sharing must be one of {SHARING_MODES}, got '{self.sharing}'")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got '{self.init}'")
        if self.loss_on not in ("masked", "all"):
            raise ConfigError(f"loss_on must be 'masked' or 'all', got '{self.loss_on}'")
        if self.frames_per_clip < 1 or self.shared_prefix < 0:
            raise ConfigError("frames_per_clip must be >= 1 and shared_prefix >= 0")

    @property
    def batch_size(self) -> int:
        return self.schedule.batch_size

    def check_encoder(self, enc: EncoderConfig) -> None:
        """Rules that tie the training settings to an encoder layout."""
        if len(self.tap_weights) < enc.n_taps:
            raise ConfigError(f"{len(self.tap_weights)} tap weights for {enc.n_taps} taps")
        bound = enc.separation[min(1, enc.n_taps - 1)]
        if self.sharing == "partial" and self.shared_prefix > bound:
            raise ConfigError(f"shared_prefix {self.shared_prefix} exceeds the second tap position {bound}")


@dataclass(frozen=True)
class FinetuneConfig:
    schedule: ScheduleConfig = field(
        default_factory=lambda: ScheduleConfig(base_lr=1e-3, min_lr=1e-6, warmup_steps=5, total_steps=0, batch_size=16)
    )
    epochs: int = 30
    branch: str = "dorsal"
    probe: bool = False
    pool: str = "mean"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.branch not in ("ventral", "dorsal"):
            raise ConfigError(f"unknown branch '{self.branch}'")
        if self.pool not in POOL_MODES:
            raise ConfigError(f"unknown pool mode '{self.pool}', expected one of {POOL_MODES}")


# --------------------------------------------------------------------------- #
# Shared region                                                               #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class SharedRegion:
    """Block-relative parameter suffixes (``blockNN.attn.qkv.weight`` ...) held once."""

    suffixes: tuple[str, ...]

    @classmethod
    def for_config(cls, enc: EncoderConfig, sharing: str, shared_prefix: int, store: ParamStore) -> "SharedRegion":
        if sharing == "none":
            blocks: Sequence[int] = ()
        elif sharing == "all":
            blocks = range(1, enc.depth + 1)
        else:
            blocks = range(1, min(shared_prefix, enc.depth) + 1)
        suffixes = []
        for i in blocks:
            prefix = block_prefix("ventral", i) + "."
            suffixes.extend(n[len("ventral."):] for n in store.with_prefix(prefix))
        return cls(tuple(suffixes))

    def names(self, branch: str) -> list[str]:
        return [f"{branch}.{s}" for s in self.suffixes]

    def install(self, ventral: BranchParams, dorsal: BranchParams) -> None:
        """Point every shared dorsal name at the ventral tensor (one storage, two readers)."""
        for v_name, d_name in zip(self.names("ventral"), self.names("dorsal")):
            dorsal.store.replace(d_name, ventral.store[v_name])
        log.info("sharing %d tensors between branches", len(self.suffixes))

    def check(self, ventral: BranchParams, dorsal: BranchParams) -> None:
        for v_name, d_name in zip(self.names("ventral"), self.names("dorsal")):
            if ventral.store[v_name] is not dorsal.store[d_name]:
                raise ContractError(f"'{d_name}' is no longer shared with '{v_name}'")


# --------------------------------------------------------------------------- #
# Reports                                                                     #
# --------------------------------------------------------------------------- #


@dataclass
class LossReport:
    step: int
    lr: float
    ventral: dict[int, float] = field(default_factory=dict)
    dorsal: dict[int, float] = field(default_factory=dict)
    L_V: float = 0.0
    L_D: float = 0.0
    L: float = 0.0
    lam: float = 1.0
    wall_ms: float | None = None

    def to_record(self) -> dict:
        record: dict = {"step": self.step, "lr": self.lr}
        for branch, taps in (("ventral", self.ventral), ("dorsal", self.dorsal)):
            for tap, value in sorted(taps.items()):
                record[f"{branch}_tap{tap}"] = value
        record.update({"L_V": self.L_V, "L_D": self.L_D, "L": self.L, "wall_ms": self.wall_ms})
        return record


# --------------------------------------------------------------------------- #
# Batches and losses                                                          #
# --------------------------------------------------------------------------- #


@dataclass
class PreparedBatch:
    """Visible tokens, their positional rows, masks and per-tap targets for one branch."""

    visible: np.ndarray
    pos: np.ndarray
    mask: MaskBatch
    targets: dict[int, np.ndarray]
    stats: list[dict[int, tuple[np.ndarray, np.ndarray]]] = field(default_factory=list, repr=False)


def _flip(x: np.ndarray, rng: np.random.Generator, enabled: bool) -> np.ndarray:
    """Horizontal flip of whole samples (every frame of a clip alike) with probability 1/2."""
    if not enabled:
        return x
    flags = rng.random(x.shape[0]) < 0.5
    out = x.copy()
    out[flags] = out[flags][..., ::-1, :]
    return out


def prepare_batch(
    branch: str,
    inputs: np.ndarray,
    params: BranchParams,
    mask_cfg: MaskConfig,
    targets_cfg: TargetConfig,
    rng: np.random.Generator,
    *,
    loss_on: str = "masked",
    bank: np.ndarray | None = None,
) -> PreparedBatch:
    """Tokenise, mask and build targets for a batch of images or clips."""
    inputs = np.asarray(inputs, dtype=np.float64)
    clip = params.clip
    if branch == "ventral":
        if inputs.ndim != 4:
            raise ContractError(f"ventral batch must be (B, H, W, C), got {inputs.shape}")
        tokens = patchify_frames(inputs, clip.patch)
        masks = [sample_random_mask(params.num_tokens, mask_cfg.ratio_image, rng) for _ in inputs]
    else:
        if inputs.ndim != 5:
            raise ContractError(f"dorsal batch must be (B, T, H, W, C), got {inputs.shape}")
        tokens = cubify_batch(inputs, clip.tubelet, clip.patch)
        gt = clip.video_grid[0]
        if mask_cfg.strategy == "tube":
            masks = [sample_tube_mask(clip.spatial_tokens, gt, mask_cfg.ratio_video, rng) for _ in inputs]
        else:
            masks = [sample_random_mask(params.num_tokens, mask_cfg.ratio_video, rng) for _ in inputs]
    mask = stack_masks(masks)

    bank = build_gabor_bank(targets_cfg.gabor) if bank is None else bank
    sets = [build_target_set(branch, x, targets_cfg, clip, params.cfg.n_taps, bank) for x in inputs]
    full = stack_target_sets(sets)
    targets = full if loss_on == "all" else {tap: gather_masked_batch(v, mask) for tap, v in full.items()}

    visible = np.take_along_axis(tokens, mask.visible_idx[:, :, None], axis=1)
    pos = params.pos_enc[mask.visible_idx]
    return PreparedBatch(visible, pos, mask, targets, [s.stats for s in sets])


def tap_losses(
    preds: Mapping[int, Tensor],
    targets: Mapping[int, np.ndarray],
    weights: Sequence[float],
) -> tuple[Tensor, dict[int, float]]:
    """``Σ_i w_i · MSE(pred_i, target_i)``; a tap with weight 0 is not part of the graph."""
    total: Tensor = T.as_tensor(0.0)
    per_tap: dict[int, float] = {}
    for tap, pred in preds.items():
        w = weights[tap - 1]
        loss = T.mse_loss(pred, targets[tap])
        per_tap[tap] = loss.item()
        if w:
            total = total + loss * w
    return total, per_tap


def _branch_loss(
    params: BranchParams, batch: PreparedBatch, weights: Sequence[float], loss_on: str
) -> tuple[Tensor, dict[int, float]]:
    if set(batch.targets) != set(params.kinds):
        raise ConfigError(f"targets for taps {sorted(batch.targets)} do not match decoder taps {sorted(params.kinds)}")
    taps = encoder_forward_with_taps(batch.visible, batch.pos, params)
    preds: dict[int, Tensor] = {}
    for tap, act in taps.items():
        if weights[tap - 1]:
            preds[tap] = decoder_forward(tap, act, batch.mask, params, loss_on=loss_on)
        else:
            with T.no_grad():
                preds[tap] = decoder_forward(tap, act, batch.mask, params, loss_on=loss_on)
    return tap_losses(preds, batch.targets, weights)


def loss_ventral(
    params: BranchParams, batch: PreparedBatch, weights: Sequence[float] = (1.0, 1.0, 1.0), loss_on: str = "masked"
) -> tuple[Tensor, dict[int, float]]:
    """Weighted Gabor/contour/RGB reconstruction loss of the image branch."""
    if params.branch != "ventral":
        raise ConfigError(f"loss_ventral needs ventral parameters, got {params.branch}")
    return _branch_loss(params, batch, weights, loss_on)


def loss_dorsal(
    params: BranchParams, batch: PreparedBatch, weights: Sequence[float] = (1.0, 1.0, 1.0), loss_on: str = "masked"
) -> tuple[Tensor, dict[int, float]]:
    """Weighted Gabor/contour/motion reconstruction loss of the video branch."""
    if params.branch != "dorsal":
        raise ConfigError(f"loss_dorsal needs dorsal parameters, got {params.branch}")
    return _branch_loss(params, batch, weights, loss_on)


def loss_joint(l_v, l_d, lam: float):
    """``L = L_V + λ·L_D``; with ``λ = 0`` the ventral loss is returned as is."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return l_v
    return l_v + l_d * lam


def reconstruct(
    params: BranchParams,
    sample: np.ndarray,
    mask_cfg: MaskConfig,
    targets_cfg: TargetConfig,
    rng: np.random.Generator,
    *,
    bank: np.ndarray | None = None,
) -> tuple[MaskSpec, np.ndarray, tuple[np.ndarray, np.ndarray] | None]:
    """Last-tap predictions at the masked tokens of one image or clip.

    Returns the mask, the ``(M, D)`` predictions and, when that tap's target
    is normalised per token, the full-grid ``(mean, std)`` to undo it.
    """
    batch = prepare_batch(params.branch, np.asarray(sample)[None], params, mask_cfg, targets_cfg, rng, bank=bank)
    tap = params.cfg.n_taps
    with T.no_grad():
        acts = encoder_forward_with_taps(batch.visible, batch.pos, params)
        pred = decoder_forward(tap, acts[tap], batch.mask, params, loss_on="masked")
    return batch.mask.specs[0], pred.data[0], batch.stats[0].get(tap)


# --------------------------------------------------------------------------- #
# Steps                                                                     #
# --------------------------------------------------------------------------- #

def _decay_exempt(store: ParamStore) -> set[str]:
    """Biases, norm gains and learned tokens (every 1-d tensor) are not decayed."""
    return {name for name, t in store.items() if t.ndim <= 1}


def _check_finite(report: LossReport, where: str) -> None:
    if not all(math.isfinite(v) for v in (report.L_V, report.L_D, report.L)):
        raise NumericError(
            f"{where} step {report.step}: non-finite loss "
            f"(L_V={report.L_V}, L_D={report.L_D}, L={report.L}, lr={report.lr:.3g})"
        )


def _sample_indices(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    return rng.choice(n, size=batch, replace=n < batch)


def _sample_frames(clips: np.ndarray, per_clip: int, rng: np.random.Generator) -> np.ndarray:
    """``per_clip`` uniformly drawn frames of every clip, clip-major."""
    b, t = clips.shape[:2]
    idx = rng.integers(0, t, size=(b, per_clip))
    return clips[np.arange(b)[:, None], idx].reshape(b * per_clip, *clips.shape[2:])


def _apply_update(store: ParamStore, state: OptimState, lr: float, beta1: float, beta2: float, wd: float) -> None:
    adamw_step(
        store, state, lr=lr, beta1=beta1, beta2=beta2, weight_decay=wd, skip_decay=_decay_exempt(store)
    )


def joint_step(
    clips: np.ndarray,
    ventral: BranchParams,
    dorsal: BranchParams,
    region: SharedRegion,
    state: OptimState,
    cfg: TrainConfig,
    step: int,
    rng: np.random.Generator,
    *,
    targets_cfg: TargetConfig | None = None,
    bank: np.ndarray | None = None,
    store: ParamStore | None = None,
) -> LossReport:
    """One optimizer step on ``L = L_V + λ·L_D`` for a batch of clips.

    The dorsal branch sees the masked clips; the ventral branch sees
    ``frames_per_clip`` random frames of the same clips, masked independently.
    Shared tensors collect both branches' gradients in a single backward pass.
    """
    targets_cfg = targets_cfg or TargetConfig(loss_on=cfg.loss_on)
    bank = build_gabor_bank(targets_cfg.gabor) if bank is None else bank
    store = store if store is not None else ParamStore.deduplicated(ventral.store, dorsal.store)
    lr = lr_at_step(step + 1, cfg.schedule)
    started = time.perf_counter()

    clips = _flip(np.asarray(clips, dtype=np.float64), rng, cfg.random_flip)
    d_batch = prepare_batch("dorsal", clips, dorsal, cfg.mask, targets_cfg, rng, loss_on=cfg.loss_on, bank=bank)
    frames = _sample_frames(clips, cfg.frames_per_clip, rng)
    v_batch = prepare_batch("ventral", frames, ventral, cfg.mask, targets_cfg, rng, loss_on=cfg.loss_on, bank=bank)

    try:
        store.zero_grad()
        l_v, v_taps = loss_ventral(ventral, v_batch, cfg.tap_weights, cfg.loss_on)
        if cfg.lam:
            l_d, d_taps = loss_dorsal(dorsal, d_batch, cfg.tap_weights, cfg.loss_on)
        else:
            with T.no_grad():
                l_d, d_taps = loss_dorsal(dorsal, d_batch, cfg.tap_weights, cfg.loss_on)
        total = loss_joint(l_v, l_d, cfg.lam)
        report = LossReport(step, lr, v_taps, d_taps, l_v.item(), l_d.item(), total.item(), cfg.lam)
        _check_finite(report, "joint")
        T.backward(total, store)
    except NumericError as exc:
        raise NumericError(f"joint step {step} (lr {lr:.3g}): {exc}") from exc
    _apply_update(store, state, lr, cfg.beta1, cfg.beta2, cfg.weight_decay)
    region.check(ventral, dorsal)
    report.wall_ms = (time.perf_counter() - started) * 1000.0
    return report


def _single_branch_step(
    branch: str,
    inputs: np.ndarray,
    params: BranchParams,
    state: OptimState,
    cfg: TrainConfig,
    step: int,
    rng: np.random.Generator,
    targets_cfg: TargetConfig,
    bank: np.ndarray,
) -> LossReport:
    lr = lr_at_step(step + 1, cfg.schedule)
    started = time.perf_counter()
    inputs = _flip(np.asarray(inputs, dtype=np.float64), rng, cfg.random_flip)
    batch = prepare_batch(branch, inputs, params, cfg.mask, targets_cfg, rng, loss_on=cfg.loss_on, bank=bank)
    loss_fn = loss_ventral if branch == "ventral" else loss_dorsal
    try:
        params.store.zero_grad()
        loss, taps = loss_fn(params, batch, cfg.tap_weights, cfg.loss_on)
        value = loss.item()
        if branch == "ventral":
            report = LossReport(step, lr, ventral=taps, L_V=value, L=value, lam=cfg.lam)
        else:
            report = LossReport(step, lr, dorsal=taps, L_D=value, L=value, lam=1.0)
        _check_finite(report, branch)
        T.backward(loss, params.store)
    except NumericError as exc:
        raise NumericError(f"{branch} step {step} (lr {lr:.3g}): {exc}") from exc
    _apply_update(params.store, state, lr, cfg.beta1, cfg.beta2, cfg.weight_decay)
    report.wall_ms = (time.perf_counter() - started) * 1000.0
    return report


# --------------------------------------------------------------------------- #
# Loops                                                                       #
# --------------------------------------------------------------------------- #

# called with the number of completed steps and the parameters to save
CheckpointHook = Callable[[int, ParamStore], None]


def _emit(report: LossReport, metrics: "MetricsWriter | None", reports: list[LossReport], every: int) -> None:
    reports.append(report)
    if metrics is not None:
        metrics.write(report.to_record())
    if every and (report.step + 1) % every == 0:
        log.info("step %d lr %.3g L %.5f (L_V %.5f, L_D %.5f)", report.step, report.lr, report.L, report.L_V, report.L_D)


def _require_data(data: np.ndarray, what: str) -> np.ndarray:
    data = np.asarray(data)
    if data.shape[0] == 0:
        raise ConfigError(f"{what} dataset is empty")
    return data


def _maybe_checkpoint(hook: CheckpointHook | None, every: int, step: int, *stores: ParamStore) -> None:
    if hook is not None and every and (step + 1) % every == 0:
        hook(step + 1, stores[0] if len(stores) == 1 else ParamStore.merged(*stores))


def pretrain_ventral(
    images: np.ndarray,
    enc_cfg: EncoderConfig,
    clip: ClipSpec,
    cfg: TrainConfig,
    *,
    targets_cfg: TargetConfig | None = None,
    params: BranchParams | None = None,
    metrics: "MetricsWriter | None" = None,
    checkpoint: CheckpointHook | None = None,
    log_every: int = 50,
) -> tuple[BranchParams, list[LossReport]]:
    """Stage one: masked image modelling on the ventral branch alone."""
    images = _require_data(images, "image")
    cfg.check_encoder(enc_cfg)
    targets_cfg = targets_cfg or TargetConfig(loss_on=cfg.loss_on)
    rng = np.random.default_rng(cfg.seed)
    params = params or init_encoder(enc_cfg, clip, "ventral", rng, targets_cfg)
    bank = build_gabor_bank(targets_cfg.gabor)
    state = OptimState.for_store(params.store)
    reports: list[LossReport] = []
    log.info("pretraining ventral branch for %d steps on %d images", cfg.schedule.total_steps, images.shape[0])
    for step in range(cfg.schedule.total_steps):
        batch = images[_sample_indices(rng, images.shape[0], cfg.batch_size)]
        report = _single_branch_step("ventral", batch, params, state, cfg, step, rng, targets_cfg, bank)
        _emit(report, metrics, reports, log_every)
        _maybe_checkpoint(checkpoint, cfg.checkpoint_every, step, params.store)
    return params, reports


def pretrain_joint(
    clips: np.ndarray,
    ventral: BranchParams | None,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    *,
    clip: ClipSpec | None = None,
    targets_cfg: TargetConfig | None = None,
    metrics: "MetricsWriter | None" = None,
    checkpoint: CheckpointHook | None = None,
    log_every: int = 50,
) -> tuple[BranchParams, BranchParams, SharedRegion, list[LossReport]]:
    """Stage two: both branches on video, dorsal initialised from the ventral encoder.

    ``cfg.init`` picks the dorsal start: ``ventral``/``ventral_frames`` inflate
    the given ventral encoder, ``scratch`` draws a fresh dorsal encoder.
    """
    clips = _require_data(clips, "video")
    cfg.check_encoder(enc_cfg)
    targets_cfg = targets_cfg or TargetConfig(loss_on=cfg.loss_on)
    rng = np.random.default_rng(cfg.seed)
    if ventral is None:
        if clip is None:
            raise ConfigError("pretrain_joint needs a ventral branch or a clip geometry")
        ventral = init_encoder(enc_cfg, clip, "ventral", rng, targets_cfg)
    if clip is not None and clip != ventral.clip:
        raise ConfigError(f"ventral geometry {ventral.clip} does not match video geometry {clip}")
    if ventral.cfg.d_model != enc_cfg.d_model or ventral.cfg.depth != enc_cfg.depth:
        raise ConfigError("ventral encoder layout does not match the joint encoder configuration")

    if cfg.init == "scratch":
        dorsal = init_encoder(enc_cfg, ventral.clip, "dorsal", rng, targets_cfg)
    else:
        dorsal = inflate_ventral_to_dorsal(ventral, enc_cfg, rng, targets_cfg)
    region = SharedRegion.for_config(enc_cfg, cfg.sharing, cfg.shared_prefix, ventral.store)
    region.install(ventral, dorsal)

    store = ParamStore.deduplicated(ventral.store, dorsal.store)
    state = OptimState.for_store(store)
    bank = build_gabor_bank(targets_cfg.gabor)
    reports: list[LossReport] = []
    log.info(
        "joint pretraining for %d steps on %d clips (sharing=%s, init=%s, lambda=%g)",
        cfg.schedule.total_steps, clips.shape[0], cfg.sharing, cfg.init, cfg.lam,
    )
    for step in range(cfg.schedule.total_steps):
        batch = clips[_sample_indices(rng, clips.shape[0], cfg.batch_size)]
        report = joint_step(
            batch, ventral, dorsal, region, state, cfg, step, rng,
            targets_cfg=targets_cfg, bank=bank, store=store,
        )
        _emit(report, metrics, reports, log_every)
        _maybe_checkpoint(checkpoint, cfg.checkpoint_every, step, ventral.store, dorsal.store)
    return ventral, dorsal, region, reports


def pretrain_dorsal(
    clips: np.ndarray,
    enc_cfg: EncoderConfig,
    clip: ClipSpec,
    cfg: TrainConfig,
    *,
    targets_cfg: TargetConfig | None = None,
    metrics: "MetricsWriter | None" = None,
    checkpoint: CheckpointHook | None = None,
    log_every: int = 50,
) -> tuple[BranchParams, list[LossReport]]:
    """The video branch pretrained alone from a fresh initialisation (``L = L_D``)."""
    clips = _require_data(clips, "video")
    cfg.check_encoder(enc_cfg)
    targets_cfg = targets_cfg or TargetConfig(loss_on=cfg.loss_on)
    rng = np.random.default_rng(cfg.seed)
    params = init_encoder(enc_cfg, clip, "dorsal", rng, targets_cfg)
    bank = build_gabor_bank(targets_cfg.gabor)
    state = OptimState.for_store(params.store)
    reports: list[LossReport] = []
    for step in range(cfg.schedule.total_steps):
        batch = clips[_sample_indices(rng, clips.shape[0], cfg.batch_size)]
        report = _single_branch_step("dorsal", batch, params, state, cfg, step, rng, targets_cfg, bank)
        _emit(report, metrics, reports, log_every)
        _maybe_checkpoint(checkpoint, cfg.checkpoint_every, step, params.store)
    return params, reports


# --------------------------------------------------------------------------- #
# Finetuning                                                                  #
# --------------------------------------------------------------------------- #


@dataclass
class FinetuneResult:
    params: BranchParams
    history: list[dict] = field(default_factory=list)

    @property
    def final_test_accuracy(self) -> float | None:
        return self.history[-1]["test_acc"] if self.history else None


def _tokens(params: BranchParams, samples: np.ndarray) -> np.ndarray:
    clip = params.clip
    samples = np.asarray(samples, dtype=np.float64)
    if params.branch == "ventral":
        return patchify_frames(samples, clip.patch)
    return cubify_batch(samples, clip.tubelet, clip.patch)


def _logits(params: BranchParams, tokens: np.ndarray, *, frozen: bool) -> Tensor:
    pos = params.pos_enc[None]
    with_cls = params.pool == "class_token"
    if frozen:
        with T.no_grad():
            final = encoder_forward_with_taps(tokens, pos, params, cls_token=with_cls)[params.cfg.n_taps]
        final = final.detach()
    else:
        final = encoder_forward_with_taps(tokens, pos, params, cls_token=with_cls)[params.cfg.n_taps]
    return head_forward(final, params)


def evaluate(params: BranchParams, samples: np.ndarray, labels: np.ndarray, batch_size: int = 32) -> float:
    """Top-1 accuracy over full, unmasked token grids."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return float("nan")
    correct = 0
    for start in range(0, labels.size, batch_size):
        tokens = _tokens(params, samples[start:start + batch_size])
        with T.no_grad():
            logits = _logits(params, tokens, frozen=True)
        correct += int((logits.data.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / labels.size


def _check_labels(labels: np.ndarray, classes: int, what: str) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"{what} labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


def finetune(
    train: tuple[np.ndarray, np.ndarray],
    test: tuple[np.ndarray, np.ndarray],
    params: BranchParams,
    cfg: FinetuneConfig,
    num_classes: int,
    *,
    metrics: "MetricsWriter | None" = None,
) -> FinetuneResult:
    """Cross-entropy training of a head (and, unless probing, the encoder) on labelled data.

    Only the encoder and head are optimised; decoders and the mask token are
    left out.  Reports train/test accuracy after every epoch.
    """
    x_train, y_train = np.asarray(train[0]), _check_labels(train[1], num_classes, "train")
    x_test, y_test = np.asarray(test[0]), _check_labels(test[1], num_classes, "test")
    if x_train.shape[0] == 0:
        raise ConfigError("finetune dataset is empty")
    if x_train.shape[0] != y_train.shape[0]:
        raise DataError(f"{x_train.shape[0]} training samples but {y_train.shape[0]} labels")
    if params.branch != cfg.branch:
        raise ConfigError(f"finetune is configured for the {cfg.branch} branch, got {params.branch} parameters")

    rng = np.random.default_rng(cfg.seed)
    if not params.has_head:
        init_head(params, num_classes, cfg.pool, rng)
    head_names = params.store.with_prefix(f"{params.prefix}.head") + params.store.with_prefix(f"{params.prefix}.cls_token")
    names = head_names if cfg.probe else params.encoder_names() + head_names
    store = ParamStore((n, params.store[n]) for n in names)
    state = OptimState.for_store(store)

    bs = cfg.schedule.batch_size
    steps_per_epoch = math.ceil(x_train.shape[0] / bs)
    total = cfg.schedule.total_steps or cfg.epochs * steps_per_epoch
    warmup = min(cfg.schedule.warmup_steps, max(total - 1, 0))
    schedule = ScheduleConfig(
        base_lr=cfg.schedule.base_lr, min_lr=cfg.schedule.min_lr, warmup_steps=warmup,
        total_steps=total, batch_size=bs, lr_scale_batch=cfg.schedule.lr_scale_batch,
    )
    result = FinetuneResult(params)
    step = 0
    log.info("%s %s branch: %d epochs, %d steps", "probing" if cfg.probe else "finetuning", cfg.branch, cfg.epochs, total)
    for epoch in range(cfg.epochs):
        order = rng.permutation(x_train.shape[0])
        losses = []
        for start in range(0, order.size, bs):
            if step >= total:
                break
            idx = order[start:start + bs]
            lr = lr_at_step(step + 1, schedule)
            store.zero_grad()
            logits = _logits(params, _tokens(params, x_train[idx]), frozen=cfg.probe)
            loss = T.cross_entropy(logits, y_train[idx])
            T.backward(loss, store)
            adamw_step(
                store, state, lr=lr, beta1=cfg.beta1, beta2=cfg.beta2,
                weight_decay=cfg.weight_decay, skip_decay=_decay_exempt(store),
            )
            losses.append(loss.item())
            step += 1
        entry = {
            "epoch": epoch,
            "step": step,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "train_acc": evaluate(params, x_train, y_train),
            "test_acc": evaluate(params, x_test, y_test),
        }
        result.history.append(entry)
        if metrics is not None:
            metrics.write(entry)
        log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, entry["loss"], entry["train_acc"], entry["test_acc"])
    return result
