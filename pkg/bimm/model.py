"""
model.py - tapped ViT encoder, per-tap decoders, classification head and the
image-to-video weight inflation.

Public API
----------
EncoderConfig
    Depth, tap positions, widths and decoder shape of one branch.

BranchParams
    A branch's ``ParamStore`` plus its geometry and positional tables.

init_encoder(cfg, clip, branch, seed, targets=None) -> BranchParams
encoder_forward_with_taps(tokens, pos, params, *, cls_token=False) -> dict[int, Tensor]
encoder_forward(tokens, pos, params) -> Tensor
decoder_forward(tap, activation, mask, params, *, loss_on="masked") -> Tensor
inflate_ventral_to_dorsal(ventral, dorsal_cfg, seed, targets=None) -> BranchParams
init_head(params, num_classes, pool, seed) / head_forward(final, params, pool) -> Tensor

Parameter names (normative for checkpoints)
-------------------------------------------
``{branch}.embed.{weight,bias}``
``{branch}.blockNN.{norm1,attn.qkv,attn.proj,norm2,mlp.fc1,mlp.fc2}.{weight,bias}``
``{branch}.mask_token``
``{branch}.decoder.tapK.{norm_in,embed,blockNN.*,norm,pred}.*`` (attention taps)
``{branch}.decoder.tap1.{fc1,fc2,...,context}.*`` (linear-only tap)
``{branch}.head.{norm,weight,bias}`` and ``{branch}.cls_token``

Linear weights are stored ``(in, out)``; ``y = x @ W + b``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .params import ParamStore
from .patching import ClipSpec, MaskBatch, sincos_pos_embed
from .targets import GaborBankConfig, TargetConfig, tap_kinds, target_dim
from .tensor import Tensor

__all__ = [
    "EncoderConfig",
    "BranchParams",
    "POOL_MODES",
    "init_encoder",
    "encoder_forward",
    "encoder_forward_with_taps",
    "decoder_forward",
    "inflate_ventral_to_dorsal",
    "init_head",
    "head_forward",
    "block_prefix",
    "encoder_param_count",
]

log = logging.getLogger(__name__)

POOL_MODES = ("mean", "class_token")
_INIT_STD = 0.02

# --------------------------------------------------------------------------- #
# Configuration                                                               #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 12
    separation: tuple[int, ...] = (2, 4, 12)
    d_model: int = 96
    heads: int = 4
    mlp_ratio: int = 4
    decoder_depth: int = 1
    decoder_width: int | None = None  # None -> d_model // 2
    decoder_heads: int | None = None  # None -> heads
    tap1_layers: int = 2
    tap1_context: str = "none"
    ln_eps: float = 1e-6

    def __post_init__(self) -> None:
        sep = tuple(int(s) for s in self.separation)
        object.__setattr__(self, "separation", sep)
        if not sep:
            raise ConfigError("separation must name at least one tap")
        if len(sep) > 3:
            raise ConfigError(f"at most 3 taps are supported, got {list(sep)}")
        if any(b <= a for a, b in zip(sep, sep[1:])) or sep[0] < 1:
            raise ConfigError(f"separation must be strictly increasing positive block indices, got {list(sep)}")
        if sep[-1] != self.depth:
            raise ConfigError(f"last tap ({sep[-1]}) must equal depth ({self.depth})")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.mlp_ratio < 1 or self.decoder_depth < 0 or self.tap1_layers < 1:
            raise ConfigError("mlp_ratio and tap1_layers must be >= 1, decoder_depth >= 0")
        if self.dec_width % self.dec_heads:
            raise ConfigError(f"decoder width {self.dec_width} is not divisible by decoder heads {self.dec_heads}")
        if self.tap1_context not in ("none", "pooled"):
            raise ConfigError(f"tap1_context must be 'none' or 'pooled', got '{self.tap1_context}'")

    @property
    def dec_width(self) -> int:
        return self.decoder_width if self.decoder_width is not None else self.d_model // 2

    @property
    def dec_heads(self) -> int:
        return self.decoder_heads if self.decoder_heads is not None else self.heads

    @property
    def n_taps(self) -> int:
        return len(self.separation)

    @property
    def hidden(self) -> int:
        return self.mlp_ratio * self.d_model


@dataclass
class BranchParams:
    """Parameters of one branch and the fixed tables its forward pass reads."""

    branch: str
    cfg: EncoderConfig
    clip: ClipSpec
    store: ParamStore
    kinds: dict[int, str]
    target_dims: dict[int, int]
    pos_enc: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    pos_dec: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    num_classes: int | None = None
    pool: str = "mean"

    def __post_init__(self) -> None:
        grid = self.clip.grid(self.branch)
        if self.pos_enc is None:
            self.pos_enc = sincos_pos_embed(grid, self.cfg.d_model)
        if self.pos_dec is None:
            self.pos_dec = sincos_pos_embed(grid, self.cfg.dec_width)

    @property
    def prefix(self) -> str:
        return self.branch

    @property
    def num_tokens(self) -> int:
        return int(self.pos_enc.shape[0])

    @property
    def token_dim(self) -> int:
        return self.clip.token_dim(self.branch)

    @property
    def has_head(self) -> bool:
        return self.num_classes is not None

    def encoder_names(self) -> list[str]:
        """Embedding and block parameters (everything the encoder reads)."""
        p = self.prefix
        return [n for n in self.store if n.startswith(f"{p}.embed.") or n.startswith(f"{p}.block")]

    def decoder_names(self, tap: int | None = None) -> list[str]:
        stem = f"{self.prefix}.decoder." + (f"tap{tap}." if tap is not None else "")
        return self.store.with_prefix(stem)


def block_prefix(branch: str, index: int, decoder_tap: int | None = None) -> str:
    """Dotted prefix of encoder block *index* (1-based) or of a decoder block."""
    if decoder_tap is None:
        return f"{branch}.block{index:02d}"
    return f"{branch}.decoder.tap{decoder_tap}.block{index:02d}"


# --------------------------------------------------------------------------- #
# Initialisation                                                              #
# --------------------------------------------------------------------------- #

def _trunc_normal(rng: np.random.Generator, shape: Sequence[int], std: float = _INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations."""
    return stats.truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=tuple(shape), random_state=rng)


def _linear(store: ParamStore, rng: np.random.Generator, name: str, d_in: int, d_out: int) -> None:
    store.create(f"{name}.weight", _trunc_normal(rng, (d_in, d_out)))
    store.create(f"{name}.bias", np.zeros(d_out))


def _norm(store: ParamStore, name: str, d: int) -> None:
    store.create(f"{name}.weight", np.ones(d))
    store.create(f"{name}.bias", np.zeros(d))


def _block(store: ParamStore, rng: np.random.Generator, prefix: str, d: int, hidden: int) -> None:
    _norm(store, f"{prefix}.norm1", d)
    _linear(store, rng, f"{prefix}.attn.qkv", d, 3 * d)
    _linear(store, rng, f"{prefix}.attn.proj", d, d)
    _norm(store, f"{prefix}.norm2", d)
    _linear(store, rng, f"{prefix}.mlp.fc1", d, hidden)
    _linear(store, rng, f"{prefix}.mlp.fc2", hidden, d)


def _resolve_targets(
    branch: str, cfg: EncoderConfig, clip: ClipSpec, targets: TargetConfig | None
) -> tuple[dict[int, str], dict[int, int]]:
    bank = (targets or TargetConfig()).gabor
    kinds = tap_kinds(branch, cfg.n_taps)
    dims = {tap: target_dim(kind, branch, clip, bank) for tap, kind in kinds.items()}
    return kinds, dims


def _init_decoders(
    store: ParamStore,
    rng: np.random.Generator,
    branch: str,
    cfg: EncoderConfig,
    dims: Mapping[int, int],
    kinds: Mapping[int, str],
) -> None:
    d, w = cfg.d_model, cfg.dec_width
    store.create(f"{branch}.mask_token", _trunc_normal(rng, (w,)))
    for tap, d_out in dims.items():
        stem = f"{branch}.decoder.tap{tap}"
        if kinds[tap] == "gabor":
            for i in range(1, cfg.tap1_layers + 1):
                last = i == cfg.tap1_layers
                _linear(store, rng, f"{stem}.fc{i}", w, d_out if last else w)
            if cfg.tap1_context == "pooled":
                _linear(store, rng, f"{stem}.context", d, w)
            continue
        _norm(store, f"{stem}.norm_in", d)
        _linear(store, rng, f"{stem}.embed", d, w)
        for i in range(1, cfg.decoder_depth + 1):
            _block(store, rng, block_prefix(branch, i, tap), w, cfg.mlp_ratio * w)
        _norm(store, f"{stem}.norm", w)
        _linear(store, rng, f"{stem}.pred", w, d_out)


def init_encoder(
    cfg: EncoderConfig,
    clip: ClipSpec,
    branch: str,
    seed: int | np.random.Generator,
    targets: TargetConfig | None = None,
) -> BranchParams:
    """Fresh branch parameters: encoder blocks, one decoder per tap and the mask token.

    Weights are truncated-normal (std 0.02), biases zero, layer-norm gains one.
    The same seed always yields bit-identical parameters.
    """
    if branch not in ("ventral", "dorsal"):
        raise ConfigError(f"unknown branch '{branch}'")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kinds, dims = _resolve_targets(branch, cfg, clip, targets)

    store = ParamStore()
    _linear(store, rng, f"{branch}.embed", clip.token_dim(branch), cfg.d_model)
    for i in range(1, cfg.depth + 1):
        _block(store, rng, block_prefix(branch, i), cfg.d_model, cfg.hidden)
    _init_decoders(store, rng, branch, cfg, dims, kinds)
    params = BranchParams(branch, cfg, clip, store, kinds, dims)
    log.debug("initialised %s branch: %s", branch, store)
    return params


def encoder_param_count(cfg: EncoderConfig, token_dim: int) -> int:
    """Closed-form size of the embedding plus ``depth`` blocks."""
    d, h = cfg.d_model, cfg.hidden
    per_block = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d)
    return token_dim * d + d + cfg.depth * per_block


# --------------------------------------------------------------------------- #
# Forward passes                                                              #
# --------------------------------------------------------------------------- #

def _dense(x: Tensor, store: ParamStore, name: str) -> Tensor:
    return x @ store[f"{name}.weight"] + store[f"{name}.bias"]


def _ln(x: Tensor, store: ParamStore, name: str, eps: float) -> Tensor:
    return T.layer_norm(x, store[f"{name}.weight"], store[f"{name}.bias"], eps)


def _attention(x: Tensor, store: ParamStore, prefix: str, heads: int) -> Tensor:
    b, n, d = x.shape
    dh = d // heads
    qkv = _dense(x, store, f"{prefix}.qkv").reshape(b, n, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    out = T.softmax(scores) @ v
    out = out.transpose(0, 2, 1, 3).reshape(b, n, d)
    return _dense(out, store, f"{prefix}.proj")


def _run_block(x: Tensor, store: ParamStore, prefix: str, heads: int, eps: float) -> Tensor:
    x = x + _attention(_ln(x, store, f"{prefix}.norm1", eps), store, f"{prefix}.attn", heads)
    h = T.gelu(_dense(_ln(x, store, f"{prefix}.norm2", eps), store, f"{prefix}.mlp.fc1"))
    return x + _dense(h, store, f"{prefix}.mlp.fc2")


def _batched(tokens: object) -> tuple[Tensor, bool]:
    x = T.as_tensor(tokens)
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"expected (V, D) or (B, V, D) tokens, got {x.shape}")
    return x, False


def _embed(tokens: object, pos: object, params: BranchParams, cls_token: bool) -> tuple[Tensor, bool]:
    x, squeeze = _batched(tokens)
    if x.shape[-1] != params.token_dim:
        raise ShapeError(
            f"{params.branch} tokens have dim {x.shape[-1]}, the embedding expects {params.token_dim}"
        )
    h = _dense(x, params.store, f"{params.prefix}.embed")
    if pos is not None:
        pos_arr = np.asarray(pos)
        if pos_arr.ndim == 2:
            pos_arr = pos_arr[None]
        if pos_arr.shape[1:] != h.shape[1:] or pos_arr.shape[0] not in (1, h.shape[0]):
            raise ShapeError(f"positional table {pos_arr.shape} does not match embedded tokens {h.shape}")
        h = h + pos_arr
    if cls_token:
        cls = params.store[f"{params.prefix}.cls_token"]
        b, _, d = h.shape
        h = T.concat([T.broadcast_to(cls.reshape(1, 1, d), (b, 1, d)), h], axis=1)
    return h, squeeze


def encoder_forward_with_taps(
    tokens: object,
    pos: object,
    params: BranchParams,
    *,
    cls_token: bool = False,
) -> dict[int, Tensor]:
    """Embed raw tokens, add *pos*, run the blocks and record each tap.

    ``tokens`` is ``(V, D_raw)`` or ``(B, V, D_raw)``; ``pos`` the matching
    ``(V, d_model)`` / ``(B, V, d_model)`` table or ``None``.  Tap ``i``
    holds the activation right after block ``separation[i]``; the last tap
    is the full-depth output.
    """
    cfg, store = params.cfg, params.store
    x, squeeze = _embed(tokens, pos, params, cls_token)
    taps: dict[int, Tensor] = {}
    at = {block: i + 1 for i, block in enumerate(cfg.separation)}
    for i in range(1, cfg.depth + 1):
        x = _run_block(x, store, block_prefix(params.prefix, i), cfg.heads, cfg.ln_eps)
        if i in at:
            taps[at[i]] = x.reshape(*x.shape[1:]) if squeeze else x
    return taps


def encoder_forward(tokens: object, pos: object, params: BranchParams) -> Tensor:
    """Plain full-depth encoder without tap bookkeeping."""
    cfg, store = params.cfg, params.store
    x, squeeze = _embed(tokens, pos, params, cls_token=False)
    for i in range(1, cfg.depth + 1):
        x = _run_block(x, store, block_prefix(params.prefix, i), cfg.heads, cfg.ln_eps)
    return x.reshape(*x.shape[1:]) if squeeze else x


def _readout_index(mask: MaskBatch, loss_on: str) -> np.ndarray:
    """Rows of the ``[visible, masked]`` sequence to read, per sample."""
    b = mask.batch_size
    v = mask.visible_idx.shape[1]
    if loss_on == "masked":
        return np.tile(np.arange(v, mask.num_tokens), (b, 1))
    order = np.concatenate([mask.visible_idx, mask.masked_idx], axis=1)
    return np.argsort(order, axis=1, kind="stable")


def decoder_forward(
    tap: int,
    activation: Tensor,
    mask: MaskBatch,
    params: BranchParams,
    *,
    loss_on: str = "masked",
) -> Tensor:
    """Predictions of tap *tap*'s target at the masked rows (ascending index order).

    ``activation`` is the ``(B, V, d_model)`` tap output over visible tokens.
    Attention taps append the shared mask token at every masked position, add
    the decoder's positional code and run the decoder blocks over the full
    sequence.  The linear-only tap sees mask-token plus positional rows.
    With ``loss_on="all"`` every token is read out, in token order.
    """
    if loss_on not in ("masked", "all"):
        raise ConfigError(f"loss_on must be 'masked' or 'all', got '{loss_on}'")
    if tap not in params.kinds:
        raise ConfigError(f"{params.branch} branch has no tap {tap}")
    store, cfg, branch = params.store, params.cfg, params.prefix
    stem = f"{branch}.decoder.tap{tap}"
    act, _ = _batched(activation)
    b, v, _ = act.shape
    if mask.batch_size != b or mask.visible_idx.shape[1] != v:
        raise ShapeError(f"activation {act.shape} does not match mask batch {mask.masked_idx.shape}")
    if mask.num_tokens != params.num_tokens:
        raise ShapeError(f"mask covers {mask.num_tokens} tokens, the {branch} grid has {params.num_tokens}")
    expected = f"{stem}.pred.weight" if params.kinds[tap] != "gabor" else f"{stem}.fc{cfg.tap1_layers}.weight"
    if store[expected].shape[1] != params.target_dims[tap]:
        raise ConfigError(f"tap {tap} head width does not match its {params.kinds[tap]} target")

    mask_token = store[f"{branch}.mask_token"]
    w = cfg.dec_width

    if params.kinds[tap] == "gabor":
        rows = mask.masked_idx if loss_on == "masked" else np.tile(np.arange(mask.num_tokens), (b, 1))
        h = T.broadcast_to(mask_token.reshape(1, 1, w), (b, rows.shape[1], w)) + params.pos_dec[rows]
        if cfg.tap1_context == "pooled":
            h = h + _dense(act.mean(axis=1, keepdims=True), store, f"{stem}.context")
        for i in range(1, cfg.tap1_layers + 1):
            h = _dense(h, store, f"{stem}.fc{i}")
            if i < cfg.tap1_layers:
                h = T.gelu(h)
        return h

    m = mask.masked_idx.shape[1]
    e = _dense(_ln(act, store, f"{stem}.norm_in", cfg.ln_eps), store, f"{stem}.embed")
    seq = T.concat([e, T.broadcast_to(mask_token.reshape(1, 1, w), (b, m, w))], axis=1)
    order = np.concatenate([mask.visible_idx, mask.masked_idx], axis=1)
    seq = seq + params.pos_dec[order]
    for i in range(1, cfg.decoder_depth + 1):
        seq = _run_block(seq, store, block_prefix(branch, i, tap), cfg.dec_heads, cfg.ln_eps)
    seq = _ln(seq, store, f"{stem}.norm", cfg.ln_eps)
    seq = T.gather_rows(seq, _readout_index(mask, loss_on))
    return _dense(seq, store, f"{stem}.pred")


# --------------------------------------------------------------------------- #
# Inflation                                                                   #
# --------------------------------------------------------------------------- #

def inflate_ventral_to_dorsal(
    ventral: BranchParams,
    dorsal_cfg: EncoderConfig,
    seed: int | np.random.Generator,
    targets: TargetConfig | None = None,
) -> BranchParams:
    """Dorsal parameters initialised from a (pretrained) ventral branch.

    Blocks are copied verbatim.  The cube embedding tiles the image
    projection over the cube's ``ct`` frames and divides by ``ct`` so a
    static clip embeds exactly like its frame.  Decoders and the mask token
    are fresh.
    """
    vcfg = ventral.cfg
    for attr in ("d_model", "depth", "heads", "mlp_ratio"):
        if getattr(vcfg, attr) != getattr(dorsal_cfg, attr):
            raise ConfigError(
                f"cannot inflate: ventral {attr}={getattr(vcfg, attr)} vs dorsal {attr}={getattr(dorsal_cfg, attr)}"
            )
    clip = ventral.clip
    dorsal = init_encoder(dorsal_cfg, clip, "dorsal", seed, targets)
    src, dst = ventral.store, dorsal.store

    ct = clip.tubelet
    w_img = src["ventral.embed.weight"].data
    dst["dorsal.embed.weight"].data[...] = np.tile(w_img, (ct, 1)) / ct
    dst["dorsal.embed.bias"].data[...] = src["ventral.embed.bias"].data
    for i in range(1, vcfg.depth + 1):
        v_prefix, d_prefix = block_prefix("ventral", i), block_prefix("dorsal", i)
        for name in src.with_prefix(v_prefix + "."):
            dst[d_prefix + name[len(v_prefix):]].data[...] = src[name].data
    log.info("inflated ventral encoder into dorsal (tubelet %d)", ct)
    return dorsal


# --------------------------------------------------------------------------- #
# Classification head                                                         #
# --------------------------------------------------------------------------- #

def init_head(
    params: BranchParams,
    num_classes: int,
    pool: str = "mean",
    seed: int | np.random.Generator = 0,
) -> BranchParams:
    """Add a layer-normed linear head (and a class token for ``pool="class_token"``)."""
    if pool not in POOL_MODES:
        raise ConfigError(f"unknown pool mode '{pool}', expected one of {POOL_MODES}")
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d, p = params.cfg.d_model, params.prefix
    _norm(params.store, f"{p}.head.norm", d)
    _linear(params.store, rng, f"{p}.head", d, num_classes)
    if pool == "class_token":
        params.store.create(f"{p}.cls_token", _trunc_normal(rng, (d,)))
    params.num_classes = num_classes
    params.pool = pool
    return params


def head_forward(final: Tensor, params: BranchParams, pool: str | None = None) -> Tensor:
    """Pool the full-token final activation ``(B, N, d)`` and map to class logits."""
    pool = pool or params.pool
    if pool not in POOL_MODES:
        raise ConfigError(f"unknown pool mode '{pool}', expected one of {POOL_MODES}")
    if not params.has_head:
        raise ContractError(f"{params.branch} branch has no classification head")
    x, _ = _batched(final)
    feats = x.mean(axis=1) if pool == "mean" else x[:, 0, :]
    p = params.prefix
    return _dense(_ln(feats, params.store, f"{p}.head.norm", params.cfg.ln_eps), params.store, f"{p}.head")
