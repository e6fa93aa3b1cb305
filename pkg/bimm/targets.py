"""
targets.py - progressive prediction targets aligned with the token grids.

Tap kinds per branch, shallow to deep:

=========  =======  =======  ======
branch     tap 1    tap 2    tap 3
=========  =======  =======  ======
ventral    gabor    contour  rgb
dorsal     gabor    contour  motion
=========  =======  =======  ======

With fewer taps the deepest kinds are kept (a single tap predicts rgb/motion).
Every target is a pure function of the raw input and the configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ContractError, ShapeError, UnsupportedConfigError
from .patching import ClipSpec, MaskBatch, MaskSpec, patchify_frames

__all__ = [
    "GaborBankConfig",
    "ContourConfig",
    "TargetConfig",
    "TargetSet",
    "BRANCH_KINDS",
    "tap_kinds",
    "target_dim",
    "build_gabor_bank",
    "gabor_target",
    "contour_target",
    "rgb_target",
    "motion_target",
    "normalize_tokens",
    "build_target_set",
    "gather_masked_targets",
    "gather_masked_batch",
    "stack_target_sets",
]

BRANCH_KINDS: Mapping[str, tuple[str, str, str]] = {
    "ventral": ("gabor", "contour", "rgb"),
    "dorsal": ("gabor", "contour", "motion"),
}
_NORM_EPS = 1e-6

# --------------------------------------------------------------------------- #
# Configuration                                                               #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class GaborBankConfig:
    orientations: tuple[float, ...] = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)
    wavelengths: tuple[float, ...] = (4.0, 8.0)
    sigma: float | None = None  # None -> 0.5 * wavelength
    gamma: float = 0.5
    psi: float = 0.0
    size: int = 7
    zero_dc: bool = True

    def __post_init__(self) -> None:
        if self.size < 1 or self.size % 2 == 0:
            raise ConfigError(f"Gabor kernel extent must be odd and positive, got {self.size}")
        if not self.orientations or not self.wavelengths:
            raise ConfigError("Gabor bank needs at least one orientation and one wavelength")
        if any(w <= 0 for w in self.wavelengths):
            raise ConfigError(f"wavelengths must be positive, got {self.wavelengths}")

    @property
    def num_kernels(self) -> int:
        return len(self.orientations) * len(self.wavelengths)


@dataclass(frozen=True)
class ContourConfig:
    detector: str = "sobel"
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.detector != "sobel":
            raise UnsupportedConfigError(f"unknown contour detector '{self.detector}'")


@dataclass(frozen=True)
class TargetConfig:
    gabor: GaborBankConfig = field(default_factory=GaborBankConfig)
    contour: ContourConfig = field(default_factory=ContourConfig)
    normalize: Mapping[str, bool] = field(
        default_factory=lambda: {"gabor": False, "contour": False, "rgb": True, "motion": False}
    )
    loss_on: str = "masked"

    def __post_init__(self) -> None:
        if self.loss_on not in ("masked", "all"):
            raise ConfigError(f"loss_on must be 'masked' or 'all', got '{self.loss_on}'")
        unknown = set(self.normalize) - {"gabor", "contour", "rgb", "motion"}
        if unknown:
            raise ConfigError(f"unknown target kinds in normalize: {sorted(unknown)}")


@dataclass
class TargetSet:
    """Per-tap target matrices ``(N, D)`` with their kinds.

    ``stats`` holds the per-token ``(mean, std)`` used when a tap's target was
    normalised, so predictions can be mapped back to the raw space.
    """

    branch: str
    kinds: dict[int, str]
    values: dict[int, np.ndarray]
    stats: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def taps(self) -> list[int]:
        return sorted(self.values)

    @property
    def num_tokens(self) -> int:
        return next(iter(self.values.values())).shape[0]


def tap_kinds(branch: str, n_taps: int) -> dict[int, str]:
    """Tap index (1-based) -> target kind for *branch* with *n_taps* taps."""
    if branch not in BRANCH_KINDS:
        raise ConfigError(f"unknown branch '{branch}'")
    if not 1 <= n_taps <= 3:
        raise ConfigError(f"between 1 and 3 taps are supported, got {n_taps}")
    kinds = BRANCH_KINDS[branch][3 - n_taps:]
    return {i + 1: k for i, k in enumerate(kinds)}


def target_dim(kind: str, branch: str, clip: ClipSpec, bank: GaborBankConfig) -> int:
    pp = clip.patch * clip.patch
    frames = clip.tubelet if branch == "dorsal" else 1
    if kind == "gabor":
        return frames * pp * bank.num_kernels
    if kind == "contour":
        return frames * pp
    if kind == "rgb":
        return pp * clip.channels
    if kind == "motion":
        return pp * clip.channels
    raise ConfigError(f"unknown target kind '{kind}'")


# --------------------------------------------------------------------------- #
# Filters                                                                     #
# --------------------------------------------------------------------------- #

def build_gabor_bank(cfg: GaborBankConfig = GaborBankConfig()) -> np.ndarray:
    """Real Gabor kernels ``(K, size, size)``, orientations outer, wavelengths inner.

    ``g(x, y) = exp(-(x'² + γ²y'²) / 2σ²) · cos(2πx'/λ + ψ)`` with
    ``x' = x cosθ + y sinθ`` and ``y' = -x sinθ + y cosθ``; rows index y.
    """
    half = cfg.size // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    kernels = []
    for theta in cfg.orientations:
        c, s = math.cos(theta), math.sin(theta)
        xr = x * c + y * s
        yr = -x * s + y * c
        for lam in cfg.wavelengths:
            sigma = cfg.sigma if cfg.sigma is not None else 0.5 * lam
            envelope = np.exp(-(xr ** 2 + cfg.gamma ** 2 * yr ** 2) / (2.0 * sigma ** 2))
            kernel = envelope * np.cos(2.0 * math.pi * xr / lam + cfg.psi)
            if cfg.zero_dc:
                kernel = kernel - kernel.mean()
            kernels.append(kernel)
    return np.stack(kernels)


def _gray(frames: np.ndarray) -> np.ndarray:
    """Channel mean: ``(..., H, W, C) -> (..., H, W)`` in float64."""
    return np.asarray(frames, dtype=np.float64).mean(axis=-1)


def _gabor_maps(gray: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """``(H, W) -> (H, W, K)`` same-size responses with reflect padding."""
    return np.stack([ndimage.convolve(gray, k, mode="mirror") for k in bank], axis=-1)


def _sobel_magnitude(gray: np.ndarray, eps: float) -> np.ndarray:
    gx = ndimage.sobel(gray, axis=1, mode="mirror")
    gy = ndimage.sobel(gray, axis=0, mode="mirror")
    mag = np.hypot(gx, gy)
    return mag / (mag.max() + eps)


def _kernel_major(tokens: np.ndarray, k: int) -> np.ndarray:
    """``(..., N, p·p·K)`` pixel-major -> ``(..., N, K·p·p)`` one block per map."""
    *lead, n, d = tokens.shape
    pp = d // k
    return tokens.reshape(*lead, n, pp, k).swapaxes(-1, -2).reshape(*lead, n, d)


def _group_cubes(per_frame: np.ndarray, tubelet: int) -> np.ndarray:
    """Per-frame tokens ``(T, Ns, d)`` -> cube tokens ``(T/ct · Ns, ct·d)``."""
    t, ns, d = per_frame.shape
    if t % tubelet:
        raise ShapeError(f"{t} frames are not divisible by tubelet {tubelet}")
    x = per_frame.reshape(t // tubelet, tubelet, ns, d).transpose(0, 2, 1, 3)
    return x.reshape((t // tubelet) * ns, tubelet * d)


def _frames_of(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected an H x W x C image or T x H x W x C clip, got {x.shape}")


# --------------------------------------------------------------------------- #
# Targets                                                                     #
# --------------------------------------------------------------------------- #

def gabor_target(
    frames: np.ndarray, bank: np.ndarray, clip: ClipSpec
) -> np.ndarray:
    """Gabor responses per token: ``p·p·K`` (image) or ``ct·p·p·K`` (clip)."""
    seq, is_video = _frames_of(frames)
    if seq.shape[1:3] != (clip.height, clip.width):
        raise ShapeError(f"frames {seq.shape[1:3]} do not match geometry {(clip.height, clip.width)}")
    k = bank.shape[0]
    maps = np.stack([_gabor_maps(g, bank) for g in _gray(seq)])
    tokens = _kernel_major(patchify_frames(maps, clip.patch), k)
    if not is_video:
        return tokens[0]
    return _group_cubes(tokens, clip.tubelet)


def contour_target(frames: np.ndarray, cfg: ContourConfig, clip: ClipSpec) -> np.ndarray:
    """Max-normalised Sobel magnitude per token: ``p·p`` (image) or ``ct·p·p`` (clip)."""
    seq, is_video = _frames_of(frames)
    if seq.shape[1:3] != (clip.height, clip.width):
        raise ShapeError(f"frames {seq.shape[1:3]} do not match geometry {(clip.height, clip.width)}")
    maps = np.stack([_sobel_magnitude(g, cfg.eps) for g in _gray(seq)])[..., None]
    tokens = patchify_frames(maps, clip.patch)
    if not is_video:
        return tokens[0]
    return _group_cubes(tokens, clip.tubelet)


def normalize_tokens(tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-token standardisation; returns ``(normalised, mean, std)``."""
    tokens = np.asarray(tokens, dtype=np.float64)
    mean = tokens.mean(axis=-1, keepdims=True)
    std = np.sqrt(tokens.var(axis=-1, keepdims=True) + _NORM_EPS)
    return (tokens - mean) / std, mean, std


def rgb_target(tokens: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Patch pixels, optionally standardised per token."""
    if not normalize:
        return np.asarray(tokens, dtype=np.float64).copy()
    return normalize_tokens(tokens)[0]


def motion_target(clip_frames: np.ndarray, clip: ClipSpec, normalize: bool = False) -> np.ndarray:
    """``|frame₂ − frame₁|`` over each cube's footprint, all channels: ``p·p·C``."""
    if clip.tubelet != 2:
        raise UnsupportedConfigError(
            f"motion targets are defined between two adjacent frames; tubelet {clip.tubelet} is unsupported"
        )
    frames = np.asarray(clip_frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[1:3] != (clip.height, clip.width):
        raise ShapeError(f"expected a T x {clip.height} x {clip.width} x C clip, got {frames.shape}")
    t = frames.shape[0]
    if t % 2:
        raise ShapeError(f"{t} frames are not divisible by tubelet 2")
    pairs = frames.reshape(t // 2, 2, *frames.shape[1:])
    diff = np.abs(pairs[:, 1] - pairs[:, 0])
    tokens = patchify_frames(diff, clip.patch).reshape(-1, clip.patch * clip.patch * frames.shape[-1])
    return normalize_tokens(tokens)[0] if normalize else tokens


def build_target_set(
    branch: str,
    x: np.ndarray,
    cfg: TargetConfig,
    clip: ClipSpec,
    n_taps: int = 3,
    bank: np.ndarray | None = None,
) -> TargetSet:
    """All tap targets for one image (ventral) or one clip (dorsal)."""
    kinds = tap_kinds(branch, n_taps)
    x = np.asarray(x)
    expected = 3 if branch == "ventral" else 4
    if x.ndim != expected:
        raise ShapeError(f"{branch} input must be {expected}-d, got shape {x.shape}")
    bank = build_gabor_bank(cfg.gabor) if bank is None else bank

    values: dict[int, np.ndarray] = {}
    stats: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for tap, kind in kinds.items():
        if kind == "gabor":
            raw = gabor_target(x, bank, clip)
        elif kind == "contour":
            raw = contour_target(x, cfg.contour, clip)
        elif kind == "rgb":
            raw = patchify_frames(x, clip.patch).astype(np.float64)
        else:
            raw = motion_target(x, clip)
        if cfg.normalize.get(kind, False):
            norm, mu, sd = normalize_tokens(raw)
            values[tap] = norm
            stats[tap] = (mu, sd)
        else:
            values[tap] = raw
    return TargetSet(branch, kinds, values, stats)


def gather_masked_targets(tset: TargetSet, mask: MaskSpec) -> dict[int, np.ndarray]:
    """Rows of every tap target at ``mask.masked_idx`` (ascending)."""
    out = {}
    for tap, value in tset.values.items():
        if value.shape[0] != mask.num_tokens:
            raise ContractError(f"mask covers {mask.num_tokens} tokens, tap {tap} target has {value.shape[0]}")
        out[tap] = value[mask.masked_idx]
    return out


def gather_masked_batch(values: np.ndarray, mask: MaskBatch) -> np.ndarray:
    """Batched form: ``(B, N, D)`` targets -> ``(B, M, D)`` at the masked rows."""
    if values.shape[:2] != (mask.batch_size, mask.num_tokens):
        raise ContractError(f"targets {values.shape[:2]} do not match mask batch {(mask.batch_size, mask.num_tokens)}")
    return np.take_along_axis(values, mask.masked_idx[:, :, None], axis=1)


def stack_target_sets(sets: Sequence[TargetSet]) -> dict[int, np.ndarray]:
    """``{tap: (B, N, D)}`` from per-sample target sets of one branch."""
    if not sets:
        raise ContractError("stack_target_sets: no target sets to stack")
    taps = sets[0].taps
    if any(s.taps != taps for s in sets):
        raise ContractError("stack_target_sets: target sets disagree on their taps")
    return {tap: np.stack([s.values[tap] for s in sets]) for tap in taps}
