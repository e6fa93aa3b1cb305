"""
data.py - synthetic datasets, frame directories and image I/O.

Public API
----------
DatasetSpec
    Kind, size, geometry, class count and seed of a dataset.

gen_synthetic_motion_dataset(spec) -> (clips, labels)
    One bright square per clip translating right/left/up/down.

gen_synthetic_shapes_dataset(spec) -> (images, labels)
    Square, disk, cross or oriented stripes on a dark background.

load_frames_dir(path, clip, seed) -> (clips, names)
    Per-clip sub-directories of numerically ordered PNG/PPM frames.

save_dataset(root, samples, labels, spec) / load_dataset(root)
    ``samples.npy`` + ``labels.npy`` plus a PNG frame tree for inspection.

read_frame(path) / write_frame(path, array)
    Pillow-backed float [0, 1] <-> 8-bit image files.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .patching import ClipSpec
from .targets import GaborBankConfig

__all__ = [
    "DatasetSpec",
    "DATASET_KINDS",
    "MOTION_CLASSES",
    "SHAPE_CLASSES",
    "gen_synthetic_motion_dataset",
    "gen_synthetic_shapes_dataset",
    "generate",
    "load_frames_dir",
    "save_dataset",
    "load_dataset",
    "read_frame",
    "write_frame",
    "split",
]

log = logging.getLogger(__name__)

DATASET_KINDS = ("synthetic_motion", "synthetic_shapes", "frames_dir")
MOTION_CLASSES = ("right", "left", "up", "down")
SHAPE_CLASSES = ("square", "disk", "cross", "stripes")
_FRAME_SUFFIXES = (".png", ".ppm")
_SIDE_RANGE = (6, 10)
_SPEED_RANGE = (1, 2)
_LUMA_RANGE = (0.6, 1.0)
_BACKGROUND_RANGE = (0.0, 0.3)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic_motion"
    size: int = 400
    clip: ClipSpec = field(default_factory=ClipSpec)
    classes: int = 4
    seed: int = 0
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind '{self.kind}', expected one of {DATASET_KINDS}")
        if self.size < 0:
            raise ConfigError(f"dataset size must be >= 0, got {self.size}")
        if self.kind != "frames_dir" and self.classes != 4:
            raise ConfigError(f"synthetic datasets have exactly 4 classes, got {self.classes}")
        if self.kind == "frames_dir" and not self.path:
            raise ConfigError("frames_dir datasets need a path")


def _balanced_labels(n: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % classes).astype(np.int64)


def _canvas(shape: tuple[int, ...], rng: np.random.Generator) -> tuple[np.ndarray, float, float]:
    background = float(rng.uniform(*_BACKGROUND_RANGE))
    luma = float(rng.uniform(*_LUMA_RANGE))
    return np.full(shape, background, dtype=np.float32), background, luma


# --------------------------------------------------------------------------- #
# Motion                                                                      #
# --------------------------------------------------------------------------- #

def _motion_clip(label: int, clip: ClipSpec, rng: np.random.Generator) -> np.ndarray:
    t, h, w = clip.frames, clip.height, clip.width
    extent = h if label in (2, 3) else w
    side = int(rng.integers(_SIDE_RANGE[0], _SIDE_RANGE[1] + 1))
    speed = int(rng.integers(_SPEED_RANGE[0], _SPEED_RANGE[1] + 1))
    # shrink until the whole trajectory fits
    while side + (t - 1) * speed > extent and speed > _SPEED_RANGE[0]:
        speed -= 1
    while side + (t - 1) * speed > extent and side > _SIDE_RANGE[0]:
        side -= 1
    span = side + (t - 1) * speed
    along = int(rng.integers(0, extent - span + 1))
    across = int(rng.integers(0, (w if label in (2, 3) else h) - side + 1))

    frames, _, luma = _canvas((t, h, w), rng)
    for k in range(t):
        step = k * speed
        if label == 0:
            r, c = across, along + step
        elif label == 1:
            r, c = across, along + span - side - step
        elif label == 2:
            r, c = along + span - side - step, across
        else:
            r, c = along + step, across
        frames[k, r:r + side, c:c + side] = luma
    return np.repeat(frames[..., None], clip.channels, axis=-1)


def gen_synthetic_motion_dataset(spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Clips ``(n, T, H, W, C)`` in [0, 1] and balanced direction labels.

    Direction is only visible across frames: start positions are drawn from
    the same range for every class, so a single frame carries no label.
    """
    clip = spec.clip
    t = clip.frames
    if min(clip.height, clip.width) < _SIDE_RANGE[0] + (t - 1) * _SPEED_RANGE[0]:
        raise ConfigError(
            f"{clip.height}x{clip.width} frames are too small for a {_SIDE_RANGE[0]} px square "
            f"moving {_SPEED_RANGE[0]} px over {t} frames"
        )
    rng = np.random.default_rng(spec.seed)
    labels = _balanced_labels(spec.size, 4, rng)
    clips = np.empty((spec.size, t, clip.height, clip.width, clip.channels), dtype=np.float32)
    for i, label in enumerate(labels):
        clips[i] = _motion_clip(int(label), clip, rng)
    log.info("generated %d motion clips (%dx%dx%d)", spec.size, t, clip.height, clip.width)
    return clips, labels


# --------------------------------------------------------------------------- #
# Shapes                                                                      #
# --------------------------------------------------------------------------- #

def _shape_image(label: int, clip: ClipSpec, rng: np.random.Generator, bank: GaborBankConfig) -> np.ndarray:
    h, w = clip.height, clip.width
    img, background, luma = _canvas((h, w), rng)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if label == 3:
        theta = float(rng.choice(bank.orientations))
        lam = float(rng.choice(bank.wavelengths))
        xr = xx * np.cos(theta) + yy * np.sin(theta)
        grating = 0.5 * (1.0 + np.cos(2.0 * np.pi * xr / lam))
        region = max(int(0.75 * min(h, w)), 1)
        r0 = int(rng.integers(0, h - region + 1))
        c0 = int(rng.integers(0, w - region + 1))
        patch = background + (luma - background) * grating[r0:r0 + region, c0:c0 + region]
        img[r0:r0 + region, c0:c0 + region] = patch
        return np.repeat(img[..., None], clip.channels, axis=-1)

    side = int(rng.integers(_SIDE_RANGE[0], min(_SIDE_RANGE[1] + 4, min(h, w)) + 1))
    r0 = int(rng.integers(0, h - side + 1))
    c0 = int(rng.integers(0, w - side + 1))
    if label == 0:
        img[r0:r0 + side, c0:c0 + side] = luma
    elif label == 1:
        cy, cx, radius = r0 + (side - 1) / 2.0, c0 + (side - 1) / 2.0, side / 2.0
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = luma
    else:
        bar = max(side // 3, 1)
        mid = (side - bar) // 2
        img[r0:r0 + side, c0 + mid:c0 + mid + bar] = luma
        img[r0 + mid:r0 + mid + bar, c0:c0 + side] = luma
    return np.repeat(img[..., None], clip.channels, axis=-1)


def gen_synthetic_shapes_dataset(
    spec: DatasetSpec, bank: GaborBankConfig = GaborBankConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Images ``(n, H, W, C)`` in [0, 1] with balanced shape labels."""
    clip = spec.clip
    if min(clip.height, clip.width) < _SIDE_RANGE[0]:
        raise ConfigError(f"{clip.height}x{clip.width} images are too small for a {_SIDE_RANGE[0]} px shape")
    rng = np.random.default_rng(spec.seed)
    labels = _balanced_labels(spec.size, 4, rng)
    images = np.empty((spec.size, clip.height, clip.width, clip.channels), dtype=np.float32)
    for i, label in enumerate(labels):
        images[i] = _shape_image(int(label), clip, rng, bank)
    log.info("generated %d shape images (%dx%d)", spec.size, clip.height, clip.width)
    return images, labels


def generate(spec: DatasetSpec, bank: GaborBankConfig = GaborBankConfig()) -> tuple[np.ndarray, np.ndarray | None]:
    """Samples and labels for any dataset kind (frame directories carry no labels)."""
    if spec.kind == "synthetic_motion":
        return gen_synthetic_motion_dataset(spec)
    if spec.kind == "synthetic_shapes":
        return gen_synthetic_shapes_dataset(spec, bank)
    clips, _ = load_frames_dir(spec.path, spec.clip, spec.seed)
    return clips, None


def split(
    samples: np.ndarray, labels: np.ndarray, n_train: int
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """First *n_train* samples for training, the rest for testing."""
    if not 0 < n_train < len(samples):
        raise ConfigError(f"train split {n_train} must lie strictly between 0 and {len(samples)}")
    return (samples[:n_train], labels[:n_train]), (samples[n_train:], labels[n_train:])


# --------------------------------------------------------------------------- #
# Frame I/O                                                                   #
# --------------------------------------------------------------------------- #

def read_frame(path: str | Path) -> np.ndarray:
    """``H × W × C`` float32 in [0, 1] from an 8-bit PNG/PPM."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read frame {path}: {exc}") from exc
    return arr / 255.0


def write_frame(path: str | Path, array: np.ndarray) -> Path:
    """Quantise ``[0, 1]`` values to 8 bits and save (format from the suffix)."""
    path = Path(path)
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim == 3 and arr.shape[-1] != 3:
        raise DataError(f"cannot write a {arr.shape[-1]}-channel frame to {path}")
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)
    return path


def _frame_number(path: Path) -> int:
    digits = re.findall(r"\d+", path.stem)
    if not digits:
        raise DataError(f"frame file '{path.name}' has no frame number")
    return int(digits[-1])


def load_frames_dir(
    path: str | Path, clip: ClipSpec, seed: int | np.random.Generator = 0
) -> tuple[np.ndarray, list[str]]:
    """Load every clip sub-directory of *path*.

    ``raw_frames`` consecutive frames are taken from a random start and every
    ``stride``-th one is kept.  Frame extents must match the geometry.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"frames directory '{root}' does not exist")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    clip_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not clip_dirs:
        raise DataError(f"no clip directories under '{root}'")

    clips = np.empty((len(clip_dirs), clip.frames, clip.height, clip.width, clip.channels), dtype=np.float32)
    for i, clip_dir in enumerate(clip_dirs):
        files = sorted(
            (f for f in clip_dir.iterdir() if f.suffix.lower() in _FRAME_SUFFIXES), key=_frame_number
        )
        if len(files) < clip.raw_frames:
            raise DataError(
                f"clip '{clip_dir.name}' has {len(files)} frames, {clip.raw_frames} are needed"
            )
        start = int(rng.integers(0, len(files) - clip.raw_frames + 1))
        chosen = files[start:start + clip.raw_frames:clip.stride]
        for k, frame_path in enumerate(chosen):
            frame = read_frame(frame_path)[..., : clip.channels]
            if frame.shape[:2] != (clip.height, clip.width):
                raise DataError(
                    f"clip '{clip_dir.name}' frame {frame_path.name} is {frame.shape[0]}x{frame.shape[1]}, "
                    f"expected {clip.height}x{clip.width}"
                )
            clips[i, k] = frame
    log.info("loaded %d clips from %s", len(clip_dirs), root)
    return clips, [d.name for d in clip_dirs]


# --------------------------------------------------------------------------- #
# Dataset trees                                                               #
# --------------------------------------------------------------------------- #

def save_dataset(
    root: str | Path,
    samples: np.ndarray,
    labels: np.ndarray | None,
    spec: DatasetSpec,
    *,
    frames: bool = True,
) -> list[Path]:
    """Write ``samples.npy``, ``labels.npy``, ``dataset.json`` and (optionally) PNG frames."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    written = [root / "samples.npy"]
    np.save(written[0], np.asarray(samples, dtype=np.float32))
    if labels is not None:
        written.append(root / "labels.npy")
        np.save(written[-1], np.asarray(labels, dtype=np.int64))
    meta = asdict(spec)
    meta["shape"] = list(np.shape(samples))
    written.append(root / "dataset.json")
    written[-1].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if frames:
        for i, sample in enumerate(samples):
            seq = sample if sample.ndim == 4 else sample[None]
            for k, frame in enumerate(seq):
                written.append(write_frame(root / "frames" / f"sample_{i:05d}" / f"frame_{k:04d}.png", frame))
    return written


def load_dataset(root: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    root = Path(root)
    samples_path = root / "samples.npy"
    if not samples_path.is_file():
        raise DataError(f"'{root}' holds no samples.npy")
    samples = np.load(samples_path)
    labels_path = root / "labels.npy"
    labels = np.load(labels_path) if labels_path.is_file() else None
    if labels is not None and labels.shape[0] != samples.shape[0]:
        raise DataError(f"'{root}': {samples.shape[0]} samples but {labels.shape[0]} labels")
    return samples, labels


def class_names(kind: str) -> Sequence[str]:
    return MOTION_CLASSES if kind == "synthetic_motion" else SHAPE_CLASSES
