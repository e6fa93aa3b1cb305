"""
pipeline.py - the staged runs behind the command line.

Every stage reads a :class:`~bimm.config.Config`, writes its metrics and
checkpoints under a run directory, records those files in the run manifest
when one is given, and returns what it trained.

Run directory layout
--------------------
``metrics_<stage>.jsonl``   one record per step (pretraining) or epoch (finetune)
``<stage>.ckpt``            final parameters; ``<stage>_stepNNNNNN.ckpt`` when
                            ``checkpoint_every`` is set
``recon_<branch>_NNN.png``  reconstruction grids
``targets_<branch>.*``      target dumps (arrays, panels, card)
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from .card import to_markdown_card
from .checkpoint import load_checkpoint, restore_into, save_checkpoint, write_arrays
from .config import Config
from .data import class_names, gen_synthetic_shapes_dataset, generate, split
from .errors import ConfigError, DataError
from .gradcheck import GradcheckReport, require_pass, run_gradcheck
from .manifest import RunManifest
from .metrics import MetricsWriter
from .model import BranchParams, init_encoder, init_head
from .params import ParamStore
from .targets import build_gabor_bank, build_target_set
from .training import (
    FinetuneResult,
    SharedRegion,
    finetune,
    pretrain_dorsal,
    pretrain_joint,
    pretrain_ventral,
    reconstruct,
)
from .visualize import emit_reconstruction_grid, render_target_set

__all__ = [
    "image_dataset",
    "video_dataset",
    "finetune_dataset",
    "frames_of",
    "checkpoint_config",
    "load_branch",
    "load_joint",
    "stage_ventral",
    "stage_joint",
    "stage_dorsal",
    "stage_finetune",
    "stage_reconstruct",
    "stage_targets",
    "stage_gradcheck",
    "run_pipeline",
]

log = logging.getLogger(__name__)


def _record(manifest: RunManifest | None, path: Path, out: Path) -> Path:
    if manifest is not None:
        manifest.add_artifact(path, out)
    return path


def _metrics(cfg: Config, out: Path, stage: str, key: str = "step") -> MetricsWriter:
    return MetricsWriter(out / f"metrics_{stage}.jsonl", key=key, log_wall_time=cfg.output.log_wall_time)


# --------------------------------------------------------------------------- #
# Data                                                                        #
# --------------------------------------------------------------------------- #

def image_dataset(cfg: Config) -> np.ndarray:
    images, _ = gen_synthetic_shapes_dataset(cfg.dataset_spec("images"), cfg.targets.gabor)
    return images


def video_dataset(cfg: Config) -> np.ndarray:
    clips, _ = generate(cfg.dataset_spec("videos"))
    return clips


def frames_of(clips: np.ndarray, n: int, seed: int) -> np.ndarray:
    """*n* frames drawn without replacement from every frame of *clips*."""
    frames = np.asarray(clips).reshape(-1, *clips.shape[2:])
    if n > frames.shape[0]:
        raise DataError(f"asked for {n} frames, the video set holds {frames.shape[0]}")
    idx = np.sort(np.random.default_rng(seed).choice(frames.shape[0], size=n, replace=False))
    return frames[idx]


def finetune_dataset(cfg: Config) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray], int]:
    spec = cfg.dataset_spec("finetune_data")
    samples, labels = generate(spec, cfg.targets.gabor)
    train, test = split(samples, labels, cfg.data.train_size)
    return train, test, len(class_names(spec.kind))


# --------------------------------------------------------------------------- #
# Checkpoints                                                                 #
# --------------------------------------------------------------------------- #

def checkpoint_config(cfg: Config, stage: str, **extra: Any) -> dict:
    """The JSON blob stored in a checkpoint header."""
    return {"stage": stage, "config": cfg.to_dict(), "config_hash": cfg.hash, **extra}


def _save(cfg: Config, out: Path, name: str, store: ParamStore, stage: str, manifest: RunManifest | None, **extra: Any) -> Path:
    path = save_checkpoint(out / name, store, checkpoint_config(cfg, stage, **extra))
    return _record(manifest, path, out)


def _fresh(cfg: Config, branch: str) -> BranchParams:
    return init_encoder(cfg.encoder, cfg.clip, branch, 0, cfg.targets)


def load_branch(path: str | Path, cfg: Config, branch: str) -> BranchParams:
    """One branch's encoder, decoders and (if stored) head from a checkpoint."""
    source, meta = load_checkpoint(path)
    params = _fresh(cfg, branch)
    head = f"{branch}.head.weight"
    if head in source:
        pool = meta.get("pool", "mean")
        init_head(params, int(source[head].shape[1]), pool)
    restore_into(params.store, source)
    log.info("restored %s branch from %s (%s stage)", branch, path, meta.get("stage", "?"))
    return params


def load_joint(path: str | Path, cfg: Config) -> tuple[BranchParams, BranchParams, SharedRegion]:
    """Both branches of a joint checkpoint with weight sharing re-installed."""
    source, meta = load_checkpoint(path)
    if meta.get("stage") != "joint":
        raise DataError(f"{path} holds a '{meta.get('stage')}' checkpoint, not a joint one")
    ventral, dorsal = _fresh(cfg, "ventral"), _fresh(cfg, "dorsal")
    joint = cfg.pretrain_joint
    region = SharedRegion.for_config(cfg.encoder, meta.get("sharing", joint.sharing), meta.get("shared_prefix", joint.shared_prefix), ventral.store)
    region.install(ventral, dorsal)
    restore_into(ventral.store, source)
    restore_into(dorsal.store, source)
    return ventral, dorsal, region


# --------------------------------------------------------------------------- #
# Stages                                                                      #
# --------------------------------------------------------------------------- #

def stage_ventral(
    cfg: Config, out: Path, *, images: np.ndarray | None = None, manifest: RunManifest | None = None
) -> BranchParams:
    """Stage one on the image set (or on *images* when given)."""
    images = image_dataset(cfg) if images is None else images
    metrics = _metrics(cfg, out, "ventral")

    def hook(step: int, store: ParamStore) -> None:
        _save(cfg, out, f"ventral_step{step:06d}.ckpt", store, "ventral", manifest, step=step)

    ventral, reports = pretrain_ventral(
        images, cfg.encoder, cfg.clip, cfg.pretrain_ventral, targets_cfg=cfg.targets,
        metrics=metrics, checkpoint=hook, log_every=cfg.output.log_every,
    )
    _record(manifest, metrics.path, out)
    _save(cfg, out, "ventral.ckpt", ventral.store, "ventral", manifest, step=len(reports))
    if manifest is not None and reports:
        manifest["results"]["ventral_final_loss"] = reports[-1].L
    return ventral


def stage_joint(
    cfg: Config,
    out: Path,
    ventral: BranchParams | None,
    *,
    clips: np.ndarray | None = None,
    manifest: RunManifest | None = None,
) -> tuple[BranchParams, BranchParams, SharedRegion, list]:
    """Stage two: both branches on the video set."""
    clips = video_dataset(cfg) if clips is None else clips
    tc = cfg.pretrain_joint
    metrics = _metrics(cfg, out, "joint")
    extra = {"sharing": tc.sharing, "shared_prefix": tc.shared_prefix}

    def hook(step: int, store: ParamStore) -> None:
        _save(cfg, out, f"joint_step{step:06d}.ckpt", store, "joint", manifest, step=step, **extra)

    if ventral is None and tc.init != "scratch":
        raise ConfigError(f"init '{tc.init}' needs a pretrained ventral branch")
    ventral, dorsal, region, reports = pretrain_joint(
        clips, ventral, cfg.encoder, tc, clip=cfg.clip, targets_cfg=cfg.targets,
        metrics=metrics, checkpoint=hook, log_every=cfg.output.log_every,
    )
    _record(manifest, metrics.path, out)
    _save(cfg, out, "joint.ckpt", ParamStore.merged(ventral.store, dorsal.store), "joint", manifest, step=len(reports), **extra)
    if manifest is not None and reports:
        last = reports[-1]
        manifest["results"].update({"joint_final_loss": last.L, "joint_final_L_V": last.L_V, "joint_final_L_D": last.L_D})
    return ventral, dorsal, region, reports


def stage_dorsal(cfg: Config, out: Path, *, clips: np.ndarray | None = None, manifest: RunManifest | None = None) -> BranchParams:
    """The video branch pretrained alone from a fresh initialisation."""
    clips = video_dataset(cfg) if clips is None else clips
    metrics = _metrics(cfg, out, "dorsal")

    def hook(step: int, store: ParamStore) -> None:
        _save(cfg, out, f"dorsal_step{step:06d}.ckpt", store, "dorsal", manifest, step=step)

    dorsal, reports = pretrain_dorsal(
        clips, cfg.encoder, cfg.clip, cfg.pretrain_joint, targets_cfg=cfg.targets,
        metrics=metrics, checkpoint=hook, log_every=cfg.output.log_every,
    )
    _record(manifest, metrics.path, out)
    _save(cfg, out, "dorsal.ckpt", dorsal.store, "dorsal", manifest, step=len(reports))
    if manifest is not None and reports:
        manifest["results"]["dorsal_final_loss"] = reports[-1].L
    return dorsal


def stage_finetune(
    cfg: Config,
    out: Path,
    params: BranchParams,
    *,
    probe: bool | None = None,
    data=None,
    manifest: RunManifest | None = None,
    name: str = "finetune",
) -> FinetuneResult:
    """Supervised training of a head (and the encoder unless probing)."""
    fc = cfg.finetune
    if probe is not None and probe != fc.probe:
        cfg = cfg.override("finetune.probe", probe)
        fc = cfg.finetune
    train, test, classes = data if data is not None else finetune_dataset(cfg)
    metrics = _metrics(cfg, out, name, key="epoch")
    result = finetune(train, test, params, fc, classes, metrics=metrics)
    _record(manifest, metrics.path, out)
    _save(cfg, out, f"{name}.ckpt", params.store, name, manifest, pool=fc.pool, branch=params.branch)
    if manifest is not None:
        manifest["results"][f"{name}_test_acc"] = result.final_test_accuracy
    return result


def stage_reconstruct(
    cfg: Config,
    out: Path,
    params: BranchParams,
    samples: np.ndarray,
    *,
    manifest: RunManifest | None = None,
) -> list[Path]:
    """Original / masked / reconstruction grids for the first samples."""
    rng = np.random.default_rng(cfg.seed)
    bank = build_gabor_bank(cfg.targets.gabor)
    paths = []
    for i, sample in enumerate(samples[: cfg.output.reconstruct_samples]):
        mask, preds, stats = reconstruct(params, sample, cfg.mask, cfg.targets, rng, bank=bank)
        path = emit_reconstruction_grid(
            params.branch, sample, mask, preds, out / f"recon_{params.branch}_{i:03d}.png", cfg.clip, stats
        )
        paths.append(_record(manifest, path, out))
    return paths


def stage_targets(
    cfg: Config, out: Path, sample: np.ndarray, branch: str, *, manifest: RunManifest | None = None
) -> dict[str, Path]:
    """Target arrays, panels and a Markdown card for one image or clip."""
    bank = build_gabor_bank(cfg.targets.gabor)
    tset = build_target_set(branch, sample, cfg.targets, cfg.clip, cfg.encoder.n_taps, bank)
    arrays = {f"tap{t}.{tset.kinds[t]}": tset.values[t] for t in tset.taps}
    written = {
        "arrays": write_arrays(out / f"targets_{branch}.bin", arrays, {"branch": branch, "config_hash": cfg.hash}),
        "panels": render_target_set(tset, cfg.clip, out / f"targets_{branch}.png", cfg.targets.gabor.num_kernels),
    }
    card = {
        "branch": branch,
        "taps": {f"tap {t}": tset.kinds[t] for t in tset.taps},
        "shapes": {f"tap {t}": "x".join(map(str, tset.values[t].shape)) for t in tset.taps},
        "value_ranges": {
            f"tap {t}": f"[{float(tset.values[t].min()):.4g}, {float(tset.values[t].max()):.4g}]" for t in tset.taps
        },
        "normalized": [t for t in tset.taps if t in tset.stats],
    }
    written["card"] = out / f"targets_{branch}.md"
    written["card"].write_text(to_markdown_card(card) + "\n", encoding="utf-8")
    for path in written.values():
        _record(manifest, path, out)
    return written


def stage_gradcheck(cfg: Config, out: Path, *, manifest: RunManifest | None = None) -> GradcheckReport:
    """Joint-loss gradient check; raises :class:`NumericError` on failure."""
    report = run_gradcheck(cfg.encoder, cfg.clip, cfg.pretrain_joint, cfg.targets, cfg.gradcheck)
    path = out / "gradcheck.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _record(manifest, path, out)
    if manifest is not None:
        manifest["results"]["gradcheck_max_rel_err"] = report.max_rel_err
    require_pass(report)
    return report


# --------------------------------------------------------------------------- #
# Whole schedule                                                              #
# --------------------------------------------------------------------------- #

def run_pipeline(cfg: Config, out: Path, *, manifest: RunManifest | None = None, finetune_only_head: bool = False) -> dict:
    """Image pretraining, joint pretraining and finetuning of the video branch.

    With ``init = ventral_frames`` stage one reads frames of the video set
    instead of the shape images; with ``init = scratch`` the video branch
    starts fresh but the image branch is still pretrained.
    """
    out.mkdir(parents=True, exist_ok=True)
    clips = video_dataset(cfg)
    init = cfg.pretrain_joint.init
    images = frames_of(clips, min(cfg.data.image_size, clips.shape[0] * clips.shape[1]), cfg.seed) if init == "ventral_frames" else None
    ventral = stage_ventral(cfg, out, images=images, manifest=manifest)
    ventral, dorsal, _, reports = stage_joint(cfg, out, ventral, clips=clips, manifest=manifest)

    branch = cfg.finetune.branch
    params = dorsal if branch == "dorsal" else ventral
    result = stage_finetune(cfg, out, params, probe=finetune_only_head or None, manifest=manifest)
    return {
        "joint_final_loss": reports[-1].L if reports else None,
        "joint_final_L_V": reports[-1].L_V if reports else None,
        "joint_final_L_D": reports[-1].L_D if reports else None,
        "test_acc": result.final_test_accuracy,
        "train_acc": result.history[-1]["train_acc"] if result.history else None,
    }
