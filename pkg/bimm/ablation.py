"""
ablation.py - one-axis sweeps over the pretraining design choices.

Each value of an axis becomes a config override; the full schedule
(image pretraining, joint pretraining, finetuning) runs once per value in its
own sub-directory and contributes one row to the comparison table.  Accuracy
orderings are reported, never asserted.

Axes
----
``separation``  tap positions, written ``2-4-12`` (depth follows the last tap)
``sharing``     ``none`` / ``partial`` / ``all``
``mask_ratio``  video mask ratio
``targets``     ``v1`` / ``v1+v2`` / ``full`` tap-weight subsets
``init``        ``ventral`` / ``scratch`` / ``ventral_frames``
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .card import to_markdown_table
from .config import Config
from .errors import ConfigError, UsageError
from .manifest import RunManifest
from .pipeline import run_pipeline

__all__ = ["AXES", "AblationResult", "parse_values", "axis_overrides", "run_ablation"]

log = logging.getLogger(__name__)

AXES = ("separation", "sharing", "mask_ratio", "targets", "init")

DEFAULT_VALUES: Mapping[str, tuple[str, ...]] = {
    "separation": ("2-4-12", "4-8-12", "6-9-12", "12"),
    "sharing": ("none", "partial", "all"),
    "mask_ratio": ("0.5", "0.75", "0.9", "0.95"),
    "targets": ("v1", "v1+v2", "full"),
    "init": ("ventral", "scratch", "ventral_frames"),
}

COLUMNS = ("axis", "value", "joint_final_loss", "joint_final_L_V", "joint_final_L_D", "train_acc", "test_acc")


def _separation(text: str) -> list[int]:
    try:
        taps = [int(t) for t in text.split("-")]
    except ValueError as exc:
        raise UsageError(f"separation values look like 2-4-12, got '{text}'") from exc
    return taps


def _ratio(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise UsageError(f"mask_ratio values are numbers, got '{text}'") from exc


def parse_values(axis: str, text: str | Sequence[str] | None) -> list[str]:
    """Comma-separated *text* (or the axis defaults) as a list of value labels."""
    if axis not in AXES:
        raise UsageError(f"unknown ablation axis '{axis}', expected one of {AXES}")
    if text is None:
        return list(DEFAULT_VALUES[axis])
    items = text.split(",") if isinstance(text, str) else list(text)
    values = [v.strip() for v in items if v.strip()]
    if not values:
        raise UsageError(f"no values given for axis '{axis}'")
    return values


def axis_overrides(axis: str, value: str, base: Config) -> dict[str, Any]:
    """Dotted config overrides realising *value* on *axis*."""
    if axis == "separation":
        taps = _separation(value)
        out: dict[str, Any] = {"model.separation": taps, "model.depth": taps[-1]}
        # partial sharing may not reach past the second tap
        bound = taps[min(1, len(taps) - 1)]
        if base.pretrain_joint.shared_prefix > bound:
            out["pretrain_joint.shared_prefix"] = bound
        return out
    if axis == "sharing":
        return {"pretrain_joint.sharing": value}
    if axis == "mask_ratio":
        return {"mask.ratio_video": _ratio(value)}
    if axis == "targets":
        return {"pretrain_ventral.target_subset": value, "pretrain_joint.target_subset": value}
    if axis == "init":
        return {"pretrain_joint.init": value}
    raise UsageError(f"unknown ablation axis '{axis}', expected one of {AXES}")


@dataclass
class AblationResult:
    axis: str
    rows: list[dict[str, Any]] = field(default_factory=list)

    def to_markdown(self) -> str:
        return f"### {self.axis}\n\n" + to_markdown_table(self.rows, COLUMNS)

    def to_frame(self):
        """The rows as a ``pandas.DataFrame`` (needs the ``ablate`` extra)."""
        try:
            import pandas as pd
        except ImportError as exc:  # pragma: no cover - depends on the environment
            raise ConfigError("CSV output needs pandas; install bimm[ablate]") from exc
        return pd.DataFrame(self.rows, columns=list(COLUMNS))

    def write(self, out: Path) -> dict[str, Path]:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"ablation_{self.axis}.csv"
        self.to_frame().to_csv(csv_path, index=False, float_format="%.6g")
        md_path = out / f"ablation_{self.axis}.md"
        md_path.write_text(self.to_markdown() + "\n", encoding="utf-8")
        return {"csv": csv_path, "markdown": md_path}


Runner = Callable[[Config, Path], Mapping[str, Any]]


def _default_runner(cfg: Config, out: Path) -> Mapping[str, Any]:
    return run_pipeline(cfg, out)


def run_ablation(
    base: Config,
    axis: str,
    values: Sequence[str] | str | None,
    out: Path,
    *,
    runner: Runner | None = None,
    manifest: RunManifest | None = None,
) -> AblationResult:
    """Run the full schedule once per value of *axis* and tabulate the results.

    *runner* maps ``(config, run_dir)`` to the summary row; it defaults to
    :func:`bimm.pipeline.run_pipeline`.
    """
    labels = parse_values(axis, values)
    runner = runner or _default_runner
    # fail on a bad value before any run starts
    configs = [(label, base.overrides(axis_overrides(axis, label, base))) for label in labels]
    result = AblationResult(axis)
    for label, cfg in configs:
        run_dir = out / f"{axis}={label}"
        log.info("ablation %s=%s -> %s", axis, label, run_dir)
        summary = dict(runner(cfg, run_dir))
        row = {"axis": axis, "value": label}
        row.update({c: summary.get(c) for c in COLUMNS[2:]})
        result.rows.append(row)
        if manifest is not None:
            manifest.add_message("INFO", f"{axis}={label}: test_acc={row['test_acc']}")
    paths = result.write(out)
    if manifest is not None:
        for path in paths.values():
            manifest.add_artifact(path, out)
        manifest["results"][f"ablation_{axis}"] = result.rows
    return result
