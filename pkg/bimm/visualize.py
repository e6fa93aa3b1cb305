"""
visualize.py - reconstruction grids and target panels as PNG files.

Reconstruction grids have one column per frame of the branch's target space:
the image itself for the ventral branch, one motion map per temporal cube for
the dorsal branch.  The rows are original, masked and reconstruction; dorsal
grids open with an extra row holding the first RGB frame of every cube, so the
original motion row sits under the footage it was computed from.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .data import write_frame
from .errors import ShapeError
from .patching import ClipSpec, MaskSpec, patchify_frames, unpatchify_frames
from .targets import TargetSet, motion_target

__all__ = ["MASK_FILL", "compose_grid", "emit_reconstruction_grid", "render_target_set"]

log = logging.getLogger(__name__)

MASK_FILL = 0.5
_GUTTER = 2


def compose_grid(panels: list[list[np.ndarray]], fill: float = 1.0) -> np.ndarray:
    """Tile equally sized ``H × W × C`` panels row by row with a thin gutter."""
    h, w, c = panels[0][0].shape
    cols = max(len(row) for row in panels)
    out = np.full(
        (len(panels) * h + (len(panels) - 1) * _GUTTER, cols * w + (cols - 1) * _GUTTER, c), fill, dtype=np.float64
    )
    for r, row in enumerate(panels):
        for k, panel in enumerate(row):
            if panel.shape != (h, w, c):
                raise ShapeError(f"panel {r},{k} has shape {panel.shape}, expected {(h, w, c)}")
            top, left = r * (h + _GUTTER), k * (w + _GUTTER)
            out[top:top + h, left:left + w] = panel
    return out


def _target_tokens(branch: str, x: np.ndarray, clip: ClipSpec) -> tuple[np.ndarray, int]:
    """Tokens of the tap-3 target space in raw units and the number of frames they tile."""
    if branch == "ventral":
        return patchify_frames(np.asarray(x, dtype=np.float64), clip.patch), 1
    return motion_target(x, clip), clip.video_grid[0]


def _frames_of_tokens(tokens: np.ndarray, frames: int, clip: ClipSpec) -> list[np.ndarray]:
    per_frame = tokens.reshape(frames, clip.spatial_tokens, tokens.shape[-1])
    return list(unpatchify_frames(per_frame, clip.image_grid, clip.patch, clip.channels))


def emit_reconstruction_grid(
    branch: str,
    x: np.ndarray,
    mask: MaskSpec,
    predictions: np.ndarray,
    path: str | Path,
    clip: ClipSpec,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> Path:
    """Write the original / masked / reconstruction grid of one sample.

    Dorsal grids carry the first RGB frame of each cube above those rows.
    *predictions* are the tap-3 rows at ``mask.masked_idx``.  When the target
    was normalised per token, *stats* holds that token's ``(mean, std)`` and
    the predictions are mapped back to raw units first.
    """
    tokens, frames = _target_tokens(branch, x, clip)
    preds = np.asarray(predictions, dtype=np.float64)
    if preds.shape != (mask.num_masked, tokens.shape[1]):
        raise ShapeError(f"predictions {preds.shape} do not match {mask.num_masked} masked tokens of width {tokens.shape[1]}")
    if stats is not None:
        mean, std = stats
        preds = preds * std[mask.masked_idx] + mean[mask.masked_idx]

    masked = tokens.copy()
    masked[mask.masked_idx] = MASK_FILL
    recon = tokens.copy()
    recon[mask.masked_idx] = preds
    rows = [_frames_of_tokens(np.clip(t, 0.0, 1.0), frames, clip) for t in (tokens, masked, recon)]
    if branch == "dorsal":
        rgb = np.clip(np.asarray(x, dtype=np.float64)[:: clip.tubelet], 0.0, 1.0)
        rows.insert(0, list(rgb[:frames]))
    path = write_frame(path, compose_grid(rows))
    log.info("wrote reconstruction grid %s", path)
    return path


def _panel(values: np.ndarray, channels: int) -> np.ndarray:
    """Min-max scale a single map to [0, 1] and replicate it over *channels*."""
    lo, hi = float(values.min()), float(values.max())
    scaled = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    if scaled.ndim == 2:
        scaled = np.repeat(scaled[..., None], channels, axis=-1)
    return scaled


def render_target_set(tset: TargetSet, clip: ClipSpec, path: str | Path, kernels: int) -> Path:
    """One row per tap showing the first frame of its target as full-size maps."""
    gh, gw = clip.image_grid
    p, c, ns = clip.patch, clip.channels, clip.spatial_tokens
    rows: list[list[np.ndarray]] = []
    for tap in tset.taps:
        kind, values = tset.kinds[tap], tset.values[tap]
        first = values[:ns]
        if kind == "gabor":
            maps = first.reshape(ns, -1, kernels, p, p)[:, 0]
            row = [_panel(_fold(maps[:, k], gh, gw, p), c) for k in range(kernels)]
        elif kind == "contour":
            row = [_panel(_fold(first.reshape(ns, -1, p, p)[:, 0], gh, gw, p), c)]
        else:
            row = [_panel(unpatchify_frames(first, (gh, gw), p, c), c)]
        rows.append(row)
    path = write_frame(path, compose_grid(rows))
    log.info("wrote target panels %s", path)
    return path


def _fold(blocks: np.ndarray, gh: int, gw: int, p: int) -> np.ndarray:
    """``(gh·gw, p, p)`` blocks back to a ``(gh·p, gw·p)`` map."""
    return blocks.reshape(gh, gw, p, p).transpose(0, 2, 1, 3).reshape(gh * p, gw * p)
