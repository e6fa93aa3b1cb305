"""
cli.py - the ``bimm`` command.

Sub-commands
------------
pretrain-ventral   stage one: masked image modelling
pretrain-joint     stage two: both branches on video (runs stage one first
                   unless ``--ventral`` names a checkpoint)
pretrain-dorsal    the video branch alone from scratch
finetune / probe   supervised training of a pretrained (or random) encoder
targets dump       target arrays, panels and card for one sample
reconstruct        original / masked / reconstruction grids
gen-data           write a synthetic dataset tree
gradcheck          finite-difference check of the joint loss
ablate             one-axis sweep with a CSV + Markdown comparison table

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__, loader, pipeline
from .ablation import AXES, run_ablation
from .config import Config, load_config_schema
from .data import DATASET_KINDS, DatasetSpec, generate, load_dataset, save_dataset
from .errors import BimmError, UsageError
from .manifest import MANIFEST_NAME, RunManifest
from .model import init_encoder
from .parser import add_schema_flags, parse_assignment

__all__ = ["main", "build_parser"]

log = logging.getLogger("bimm")

_LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- #
# Parser                                                                      #
# --------------------------------------------------------------------------- #

def _common(p: argparse.ArgumentParser, schema: dict) -> None:
    p.add_argument("--config", metavar="FILE|PRESET", default="toy",
                   help="JSON/YAML config file or bundled preset name (default: toy).")
    p.add_argument("--out", metavar="DIR", help="Run directory (default: output.dir of the config).")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="assignments",
                   help="Dotted config override, e.g. --set pretrain_joint.lam=0.5 (repeatable).")
    add_schema_flags(p, schema)


def build_parser(schema: dict | None = None) -> argparse.ArgumentParser:
    schema = schema if schema is not None else load_config_schema()
    parser = _Parser(prog="bimm", description="Dual-branch masked image and video modelling at desk scale.")
    parser.add_argument("--version", action="version", version=f"bimm {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("pretrain-ventral", help="Masked image modelling on the image branch.")
    _common(p, schema)

    p = sub.add_parser("pretrain-joint", help="Joint image/video pretraining with weight sharing.")
    _common(p, schema)
    p.add_argument("--ventral", metavar="CKPT", help="Stage-one checkpoint; stage one runs first when omitted.")

    p = sub.add_parser("pretrain-dorsal", help="Video branch alone from a fresh initialisation.")
    _common(p, schema)

    for name, text in (("finetune", "Finetune encoder and head."), ("probe", "Train a head on a frozen encoder.")):
        p = sub.add_parser(name, help=text)
        _common(p, schema)
        p.add_argument("--checkpoint", metavar="CKPT", help="Pretrained checkpoint; a random encoder when omitted.")

    p = sub.add_parser("targets", help="Inspect prediction targets.")
    tsub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    tsub.required = True
    d = tsub.add_parser("dump", help="Write the targets of one sample.")
    _common(d, schema)
    d.add_argument("--branch", choices=("ventral", "dorsal"), default="dorsal")
    d.add_argument("--index", type=int, default=0, help="Sample of the generated dataset.")

    p = sub.add_parser("reconstruct", help="Write reconstruction grids from a checkpoint.")
    _common(p, schema)
    p.add_argument("--checkpoint", metavar="CKPT", required=True)
    p.add_argument("--branch", choices=("ventral", "dorsal"), default="dorsal")

    p = sub.add_parser("gen-data", help="Generate a synthetic dataset tree.")
    _common(p, schema)
    p.add_argument("--kind", choices=[k for k in DATASET_KINDS if k != "frames_dir"], default="synthetic_motion")
    p.add_argument("--n", type=int, default=400, help="Number of samples.")
    p.add_argument("--no-frames", action="store_true", help="Skip the PNG frame tree.")

    p = sub.add_parser("gradcheck", help="Check analytic gradients against finite differences.")
    _common(p, schema)

    p = sub.add_parser("ablate", help="Sweep one design axis and tabulate the results.")
    _common(p, schema)
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--values", help="Comma-separated values (default: the axis's standard sweep).")
    return parser


# --------------------------------------------------------------------------- #
# Config resolution                                                           #
# --------------------------------------------------------------------------- #

_NON_CONFIG = {
    "command", "action", "config", "out", "assignments", "ventral", "checkpoint",
    "branch", "index", "kind", "n", "no_frames", "axis", "values",
}


def resolve_config(args: argparse.Namespace) -> Config:
    source = args.config
    if Path(source).is_file():
        cfg = Config.load(Path(source))
    elif source in loader.PRESETS:
        cfg = Config.preset(source)
    else:
        raise UsageError(f"--config '{source}' is neither a file nor one of the presets {loader.PRESETS}")

    # schema flags (--seed, --model.depth ...) only appear when given
    overrides: dict[str, Any] = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    for text in args.assignments:
        key, value = parse_assignment(text)
        overrides[key] = value
    if args.out is not None:
        overrides["output.dir"] = args.out
    return cfg.overrides(overrides) if overrides else cfg


# --------------------------------------------------------------------------- #
# Commands                                                                    #
# --------------------------------------------------------------------------- #

def _cmd_pretrain_ventral(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    images = pipeline.image_dataset(cfg)
    ventral = pipeline.stage_ventral(cfg, out, images=images, manifest=manifest)
    pipeline.stage_reconstruct(cfg, out, ventral, images, manifest=manifest)


def _cmd_pretrain_joint(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    clips = pipeline.video_dataset(cfg)
    init = cfg.pretrain_joint.init
    if args.ventral:
        ventral = pipeline.load_branch(args.ventral, cfg, "ventral")
    elif init == "scratch":
        ventral = None
    else:
        images = None
        if init == "ventral_frames":
            images = pipeline.frames_of(clips, min(cfg.data.image_size, clips.shape[0] * clips.shape[1]), cfg.seed)
        ventral = pipeline.stage_ventral(cfg, out, images=images, manifest=manifest)
    _, dorsal, _, _ = pipeline.stage_joint(cfg, out, ventral, clips=clips, manifest=manifest)
    pipeline.stage_reconstruct(cfg, out, dorsal, clips, manifest=manifest)


def _cmd_pretrain_dorsal(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    clips = pipeline.video_dataset(cfg)
    dorsal = pipeline.stage_dorsal(cfg, out, clips=clips, manifest=manifest)
    pipeline.stage_reconstruct(cfg, out, dorsal, clips, manifest=manifest)


def _finetune_params(cfg: Config, checkpoint: str | None):
    branch = cfg.finetune.branch
    if checkpoint:
        return pipeline.load_branch(checkpoint, cfg, branch)
    log.warning("no checkpoint given: finetuning a randomly initialised %s encoder", branch)
    return init_encoder(cfg.encoder, cfg.clip, branch, cfg.finetune.seed, cfg.targets)


def _cmd_finetune(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    params = _finetune_params(cfg, args.checkpoint)
    probe = args.command == "probe"
    pipeline.stage_finetune(cfg, out, params, probe=probe, manifest=manifest, name=args.command)


def _cmd_targets(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    samples = pipeline.image_dataset(cfg) if args.branch == "ventral" else pipeline.video_dataset(cfg)
    if not 0 <= args.index < samples.shape[0]:
        raise UsageError(f"--index {args.index} outside the {samples.shape[0]} generated samples")
    pipeline.stage_targets(cfg, out, samples[args.index], args.branch, manifest=manifest)


def _cmd_reconstruct(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    params = pipeline.load_branch(args.checkpoint, cfg, args.branch)
    samples = pipeline.image_dataset(cfg) if args.branch == "ventral" else pipeline.video_dataset(cfg)
    pipeline.stage_reconstruct(cfg, out, params, samples, manifest=manifest)


def _cmd_gradcheck(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    report = pipeline.stage_gradcheck(cfg, out, manifest=manifest)
    log.info("gradcheck passed: %d coordinates, max relative error %.3g", len(report.entries), report.max_rel_err)


def _cmd_ablate(cfg: Config, args, out: Path, manifest: RunManifest) -> None:
    result = run_ablation(cfg, args.axis, args.values, out, manifest=manifest)
    print(result.to_markdown())


_COMMANDS: dict[str, Callable[..., None]] = {
    "pretrain-ventral": _cmd_pretrain_ventral,
    "pretrain-joint": _cmd_pretrain_joint,
    "pretrain-dorsal": _cmd_pretrain_dorsal,
    "finetune": _cmd_finetune,
    "probe": _cmd_finetune,
    "targets": _cmd_targets,
    "reconstruct": _cmd_reconstruct,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
}


def _gen_data(cfg: Config, args, out: Path) -> None:
    """Dataset trees carry their own ``dataset.json``; no run manifest so reruns match byte for byte."""
    spec = DatasetSpec(args.kind, args.n, cfg.clip, seed=cfg.seed)
    samples, labels = generate(spec, cfg.targets.gabor)
    written = save_dataset(out, samples, labels, spec, frames=not args.no_frames)
    load_dataset(out)
    log.info("wrote %d files under %s", len(written), out)


# --------------------------------------------------------------------------- #
# Entry point                                                                 #
# --------------------------------------------------------------------------- #

def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level="INFO", format=_LOG_FORMAT)
    manifest: RunManifest | None = None
    out: Path | None = None
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        logging.getLogger().setLevel(cfg.output.log_level)
        out = cfg.out_dir
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "gen-data":
            _gen_data(cfg, args, out)
            return 0

        command = args.command if args.command != "targets" else f"targets {args.action}"
        manifest = RunManifest(command=command, argv=argv)
        manifest.set_config(cfg)
        manifest.add_message("INFO", f"{command} started (config {cfg.hash[:12]})")
        _COMMANDS[args.command](cfg, args, out, manifest)
        manifest.add_message("INFO", f"{command} finished")
        _finish(manifest, out, 0)
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except BimmError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        if manifest is not None and out is not None:
            manifest.add_message("ERROR", str(exc))
            _finish(manifest, out, exc.exit_code, error=f"{type(exc).__name__}: {exc}")
        return exc.exit_code


def _finish(manifest: RunManifest, out: Path, code: int, error: str | None = None) -> None:
    manifest.finalise(exit_code=code, error=error)
    manifest.save(out / MANIFEST_NAME)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
