"""
patching.py - token grids, masks and fixed positional codes.

Conventions (normative for checkpoints and target dumps)
--------------------------------------------------------
* Image tokens are row-major over the patch grid (top-left first); each token
  is the flattened ``p × p × C`` block, channel last.
* Video tokens are time-major, then row-major; each token is the flattened
  ``ct × p × p × C`` cube.
* Mask counts use round-half-up on ``ratio × basis`` where the basis is the
  token count (random masks) or the spatial position count (tube masks).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

__all__ = [
    "ClipSpec",
    "TokenGrid",
    "MaskConfig",
    "MaskSpec",
    "MaskBatch",
    "round_half_up",
    "patchify_image",
    "unpatchify_image",
    "cubify_clip",
    "uncubify_clip",
    "patchify_frames",
    "unpatchify_frames",
    "sample_random_mask",
    "sample_tube_mask",
    "stack_masks",
    "gather_visible",
    "sincos_pos_embed",
]

# --------------------------------------------------------------------------- #
# Types                                                                       #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ClipSpec:
    """Pixel extents, temporal sampling and token geometry shared by both branches.

    A clip samples ``raw_frames`` (t) consecutive frames with stride τ, giving
    ``frames = t / τ`` (T).  Images are single frames of the same extents.
    """

    height: int = 32
    width: int = 32
    channels: int = 3
    raw_frames: int = 16
    stride: int = 2
    tubelet: int = 2
    patch: int = 4

    def __post_init__(self) -> None:
        extents = (self.height, self.width, self.channels, self.raw_frames, self.stride, self.tubelet, self.patch)
        if min(extents) < 1:
            raise ConfigError(f"clip extents must be positive: {self}")
        if self.raw_frames % self.stride:
            raise ConfigError(f"raw_frames {self.raw_frames} is not divisible by stride {self.stride}")
        if self.frames % self.tubelet:
            raise ConfigError(f"frames {self.frames} is not divisible by tubelet {self.tubelet}")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError(f"{self.height}x{self.width} is not divisible by patch {self.patch}")

    @property
    def frames(self) -> int:
        return self.raw_frames // self.stride

    @property
    def image_grid(self) -> tuple[int, int]:
        return (self.height // self.patch, self.width // self.patch)

    @property
    def video_grid(self) -> tuple[int, int, int]:
        return (self.frames // self.tubelet, *self.image_grid)

    @property
    def spatial_tokens(self) -> int:
        gh, gw = self.image_grid
        return gh * gw

    @property
    def image_token_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def video_token_dim(self) -> int:
        return self.tubelet * self.image_token_dim

    def grid(self, branch: str) -> tuple[int, ...]:
        return self.image_grid if branch == "ventral" else self.video_grid

    def token_dim(self, branch: str) -> int:
        return self.image_token_dim if branch == "ventral" else self.video_token_dim


@dataclass(frozen=True)
class TokenGrid:
    """Tokens ``(N, D_raw)`` plus the grid and block extents they came from."""

    tokens: np.ndarray
    grid: tuple[int, ...]
    block: tuple[int, ...]
    channels: int

    def __post_init__(self) -> None:
        n = int(np.prod(self.grid))
        d = int(np.prod(self.block)) * self.channels
        if self.tokens.shape != (n, d):
            raise ShapeError(f"token grid {self.grid}x{self.block}x{self.channels} needs {(n, d)}, got {self.tokens.shape}")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def is_video(self) -> bool:
        return len(self.grid) == 3


@dataclass(frozen=True)
class MaskConfig:
    ratio_image: float = 0.75
    ratio_video: float = 0.9
    strategy: str = "tube"

    def __post_init__(self) -> None:
        for name in ("ratio_image", "ratio_video"):
            _check_ratio(getattr(self, name), name)
        if self.strategy not in ("random", "tube"):
            raise ConfigError(f"unknown video mask strategy '{self.strategy}'")


@dataclass(frozen=True)
class MaskSpec:
    """Disjoint, sorted masked/visible index sets covering ``0..N-1``."""

    masked_idx: np.ndarray
    visible_idx: np.ndarray

    def __post_init__(self) -> None:
        masked = np.asarray(self.masked_idx, dtype=np.int64)
        visible = np.asarray(self.visible_idx, dtype=np.int64)
        object.__setattr__(self, "masked_idx", masked)
        object.__setattr__(self, "visible_idx", visible)
        n = masked.size + visible.size
        both = np.concatenate([masked, visible])
        if np.any(np.diff(masked) <= 0) or np.any(np.diff(visible) <= 0):
            raise ContractError("mask index sets must be strictly increasing")
        if n and not np.array_equal(np.sort(both), np.arange(n)):
            raise ContractError("masked and visible indices must partition 0..N-1")

    @property
    def num_tokens(self) -> int:
        return int(self.masked_idx.size + self.visible_idx.size)

    @property
    def num_masked(self) -> int:
        return int(self.masked_idx.size)

    def boolean(self) -> np.ndarray:
        """``True`` at masked positions."""
        out = np.zeros(self.num_tokens, dtype=bool)
        out[self.masked_idx] = True
        return out


@dataclass(frozen=True)
class MaskBatch:
    """Per-sample masks with equal counts, stacked to ``(B, M)`` / ``(B, V)``."""

    masked_idx: np.ndarray
    visible_idx: np.ndarray
    specs: tuple[MaskSpec, ...] = field(repr=False, default=())

    @property
    def batch_size(self) -> int:
        return int(self.masked_idx.shape[0])

    @property
    def num_tokens(self) -> int:
        return int(self.masked_idx.shape[1] + self.visible_idx.shape[1])


# --------------------------------------------------------------------------- #
# Tokenisation                                                                #
# --------------------------------------------------------------------------- #

def _patchify(arr: np.ndarray, p: int) -> np.ndarray:
    """``(..., H, W, C) -> (..., gh·gw, p·p·C)``."""
    *lead, h, w, c = arr.shape
    if h % p or w % p:
        raise ShapeError(f"image {h}x{w} is not divisible by patch {p}")
    gh, gw = h // p, w // p
    k = len(lead)
    x = arr.reshape(*lead, gh, p, gw, p, c)
    x = x.transpose(*range(k), k, k + 2, k + 1, k + 3, k + 4)
    return x.reshape(*lead, gh * gw, p * p * c)


def _unpatchify(tokens: np.ndarray, gh: int, gw: int, p: int, c: int) -> np.ndarray:
    *lead, n, d = tokens.shape
    if n != gh * gw or d != p * p * c:
        raise ShapeError(f"tokens {tokens.shape} do not match grid {gh}x{gw}, patch {p}, channels {c}")
    k = len(lead)
    x = tokens.reshape(*lead, gh, gw, p, p, c)
    x = x.transpose(*range(k), k, k + 2, k + 1, k + 3, k + 4)
    return x.reshape(*lead, gh * p, gw * p, c)


def patchify_image(image: np.ndarray, p: int) -> TokenGrid:
    """Split an ``H × W × C`` image into non-overlapping ``p × p`` patches."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"expected H x W x C image, got shape {image.shape}")
    h, w, c = image.shape
    tokens = _patchify(image, p)
    return TokenGrid(tokens, (h // p, w // p), (p, p), c)


def unpatchify_image(grid: TokenGrid) -> np.ndarray:
    gh, gw = grid.grid
    p = grid.block[0]
    return _unpatchify(grid.tokens, gh, gw, p, grid.channels)


def patchify_frames(frames: np.ndarray, p: int) -> np.ndarray:
    """Batched ``(..., H, W, C)`` patchify returning raw token arrays."""
    return _patchify(np.asarray(frames), p)


def unpatchify_frames(tokens: np.ndarray, grid: tuple[int, int], p: int, channels: int) -> np.ndarray:
    return _unpatchify(np.asarray(tokens), grid[0], grid[1], p, channels)


def _cubify(arr: np.ndarray, ct: int, p: int) -> np.ndarray:
    """``(..., T, H, W, C) -> (..., gt·gh·gw, ct·p·p·C)``."""
    *lead, t, h, w, c = arr.shape
    if t % ct:
        raise ShapeError(f"{t} frames are not divisible by tubelet {ct}")
    if h % p or w % p:
        raise ShapeError(f"frames {h}x{w} are not divisible by patch {p}")
    gt, gh, gw = t // ct, h // p, w // p
    k = len(lead)
    x = arr.reshape(*lead, gt, ct, gh, p, gw, p, c)
    x = x.transpose(*range(k), k, k + 2, k + 4, k + 1, k + 3, k + 5, k + 6)
    return x.reshape(*lead, gt * gh * gw, ct * p * p * c)


def cubify_clip(clip: np.ndarray, cube: Sequence[int] = (2, 4, 4)) -> TokenGrid:
    """Split a ``T × H × W × C`` clip into ``ct × p × p`` cubes."""
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise ShapeError(f"expected T x H x W x C clip, got shape {clip.shape}")
    ct, ph, pw = cube
    if ph != pw:
        raise ShapeError(f"cube spatial extents must be square, got {ph}x{pw}")
    t, h, w, c = clip.shape
    tokens = _cubify(clip, ct, ph)
    return TokenGrid(tokens, (t // ct, h // ph, w // ph), (ct, ph, ph), c)


def uncubify_clip(grid: TokenGrid) -> np.ndarray:
    gt, gh, gw = grid.grid
    ct, p, _ = grid.block
    c = grid.channels
    x = grid.tokens.reshape(gt, gh, gw, ct, p, p, c)
    x = x.transpose(0, 3, 1, 4, 2, 5, 6)
    return x.reshape(gt * ct, gh * p, gw * p, c)


def cubify_batch(clips: np.ndarray, ct: int, p: int) -> np.ndarray:
    return _cubify(np.asarray(clips), ct, p)


# --------------------------------------------------------------------------- #
# Masking                                                                     #
# --------------------------------------------------------------------------- #

def _check_ratio(ratio: float, name: str = "ratio") -> None:
    if not (0.0 <= ratio < 1.0):
        raise ConfigError(f"{name} must lie in [0, 1), got {ratio}")


def round_half_up(ratio: float, basis: int) -> int:
    """``round(ratio · basis)`` with halves rounded up, computed in decimal."""
    product = Decimal(repr(float(ratio))) * basis
    return int(product.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _rng(seed: int | np.random.Generator) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_random_mask(n: int, ratio: float, seed: int | np.random.Generator) -> MaskSpec:
    """Mask ``round_half_up(ratio·n)`` tokens chosen uniformly without replacement."""
    _check_ratio(ratio)
    if n < 1:
        raise ContractError(f"need at least one token, got {n}")
    count = round_half_up(ratio, n)
    perm = _rng(seed).permutation(n)
    return MaskSpec(np.sort(perm[:count]), np.sort(perm[count:]))


def sample_tube_mask(
    spatial_n: int, temporal_cubes: int, ratio: float, seed: int | np.random.Generator
) -> MaskSpec:
    """Mask the same spatial positions at every temporal index."""
    _check_ratio(ratio)
    if spatial_n < 1 or temporal_cubes < 1:
        raise ContractError(f"empty token grid: {spatial_n} positions x {temporal_cubes} cubes")
    count = round_half_up(ratio, spatial_n)
    perm = _rng(seed).permutation(spatial_n)
    spatial = np.zeros(spatial_n, dtype=bool)
    spatial[perm[:count]] = True
    full = np.tile(spatial, temporal_cubes)
    idx = np.arange(spatial_n * temporal_cubes)
    return MaskSpec(idx[full], idx[~full])


def stack_masks(specs: Sequence[MaskSpec]) -> MaskBatch:
    if not specs:
        raise ContractError("cannot stack an empty list of masks")
    counts = {(s.num_masked, s.num_tokens) for s in specs}
    if len(counts) != 1:
        raise ContractError(f"masks in a batch must share counts, got {sorted(counts)}")
    n, m = specs[0].num_tokens, specs[0].num_masked
    masked = np.stack([s.masked_idx for s in specs]).reshape(len(specs), m)
    visible = np.stack([s.visible_idx for s in specs]).reshape(len(specs), n - m)
    return MaskBatch(masked, visible, tuple(specs))


def gather_visible(grid: TokenGrid | np.ndarray, mask: MaskSpec) -> tuple[np.ndarray, np.ndarray]:
    """Visible tokens in ascending index order, and the indices they came from."""
    tokens = grid.tokens if isinstance(grid, TokenGrid) else np.asarray(grid)
    n = tokens.shape[0]
    if mask.num_tokens != n:
        raise ContractError(f"mask covers {mask.num_tokens} tokens, grid has {n}")
    if mask.visible_idx.size and (mask.visible_idx.max() >= n or mask.visible_idx.min() < 0):
        raise ContractError("visible index out of range")
    return tokens[mask.visible_idx], mask.visible_idx.copy()


# --------------------------------------------------------------------------- #
# Positional embeddings                                                       #
# --------------------------------------------------------------------------- #

def _sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    omega = 1.0 / 10000.0 ** (np.arange(half, dtype=np.float64) / half)
    angles = positions.astype(np.float64)[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_pos_embed(grid: Sequence[int], d_model: int) -> np.ndarray:
    """Fixed sine/cosine code per grid axis, concatenated across axes.

    Rows follow the token order (first axis slowest).  Each axis receives an
    even share of ``d_model`` split into sines then cosines; when ``d_model``
    does not divide evenly the first axis takes the remaining dimensions.

    This is looser than requiring ``d_model`` to be a multiple of twice the
    axis count: only odd widths and widths below ``2·axes`` are rejected, so
    ``d_model=32`` on a three-axis video grid gives shares ``(12, 10, 10)``.
    """
    axes = len(grid)
    if axes < 1 or d_model % 2 or d_model < 2 * axes:
        raise ConfigError(f"d_model {d_model} must be even and at least {2 * axes} for a {axes}-axis grid")
    share = 2 * (d_model // (2 * axes))
    dims = [share] * axes
    dims[0] += d_model - share * axes
    coords = np.meshgrid(*[np.arange(g) for g in grid], indexing="ij")
    parts = [_sincos_1d(c.reshape(-1), d) for c, d in zip(coords, dims)]
    return np.concatenate(parts, axis=1)
