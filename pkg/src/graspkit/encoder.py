"""Swin-style hierarchical encoder.

Token grids travel as ``[B, H, W, C]`` tensors. Attention inputs are
``[B, heads, H*W, d]`` with tokens in row-major grid order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor

MASK_VALUE = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 224
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple = (2, 2, 2, 2)
    num_heads: tuple = (1, 2, 4, 8)
    window_size: int = 7
    mlp_ratio: int = 4
    in_chans: int = 3

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "num_heads", tuple(int(h) for h in self.num_heads))
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ValueError("encoder needs exactly four stages of depths and num_heads")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        grid = self.image_size // self.patch_size
        if grid % 8:
            raise ValueError(f"patch grid {grid} must be divisible by 8 for three patch merges")
        for s in range(4):
            dim = self.stage_dim(s)
            if dim % self.num_heads[s]:
                raise ValueError(f"stage {s} dim {dim} not divisible by {self.num_heads[s]} heads")
            g = self.stage_grid(s)
            m, _ = self.stage_window(s)
            if g % m:
                raise ValueError(f"stage {s} grid {g} not divisible by window {m}")

    @classmethod
    def micro(cls) -> "EncoderConfig":
        return cls(image_size=64, patch_size=4, embed_dim=16, depths=(1, 1, 1, 1),
                   num_heads=(1, 2, 4, 8), window_size=4)

    def stage_dim(self, s: int) -> int:
        return self.embed_dim * 2 ** s

    def stage_grid(self, s: int) -> int:
        return self.image_size // self.patch_size // 2 ** s

    def stage_window(self, s: int):
        """Effective (window, shift) for stage ``s``; windows never exceed the grid."""
        g = self.stage_grid(s)
        if g <= self.window_size:
            return g, 0
        return self.window_size, self.window_size // 2

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["num_heads"] = list(self.num_heads)
        return d


@dataclass
class FeaturePyramid:
    """Encoder outputs at strides 8, 16 and 32, each ``[B, C, H, W]``."""

    features: list = field(default_factory=list)
    strides: tuple = (8, 16, 32)

    def __iter__(self):
        return iter(self.features)

    def __getitem__(self, i):
        return self.features[i]

    def __len__(self):
        return len(self.features)


def trunc_normal(rng, shape, std=0.02):
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def init_encoder(cfg: EncoderConfig, rng) -> dict:
    p = {}
    C = cfg.embed_dim
    P = cfg.patch_size
    p["patch_embed.w"] = trunc_normal(rng, (P * P * cfg.in_chans, C))
    p["patch_embed.b"] = np.zeros(C)
    p["pos_embed"] = trunc_normal(rng, (cfg.num_patches, C))
    for s in range(4):
        dim = cfg.stage_dim(s)
        m, _ = cfg.stage_window(s)
        for b in range(cfg.depths[s]):
            k = f"stages.{s}.blocks.{b}."
            p[k + "norm1.g"] = np.ones(dim)
            p[k + "norm1.b"] = np.zeros(dim)
            for name in ("q", "k", "v"):
                p[k + f"attn.w{name}"] = trunc_normal(rng, (dim, dim))
                p[k + f"attn.b{name}"] = np.zeros(dim)
            p[k + "attn.rel_bias"] = np.zeros(((2 * m - 1) ** 2, cfg.num_heads[s]))
            p[k + "attn.proj.w"] = trunc_normal(rng, (dim, dim))
            p[k + "attn.proj.b"] = np.zeros(dim)
            p[k + "norm2.g"] = np.ones(dim)
            p[k + "norm2.b"] = np.zeros(dim)
            hidden = dim * cfg.mlp_ratio
            p[k + "mlp.fc1.w"] = trunc_normal(rng, (dim, hidden))
            p[k + "mlp.fc1.b"] = np.zeros(hidden)
            p[k + "mlp.fc2.w"] = trunc_normal(rng, (hidden, dim))
            p[k + "mlp.fc2.b"] = np.zeros(dim)
        if s < 3:
            k = f"stages.{s}.merge."
            p[k + "norm.g"] = np.ones(4 * dim)
            p[k + "norm.b"] = np.zeros(4 * dim)
            p[k + "w"] = trunc_normal(rng, (4 * dim, 2 * dim))
        if s > 0:
            p[f"out_norm.{s}.g"] = np.ones(dim)
            p[f"out_norm.{s}.b"] = np.zeros(dim)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def patch_partition_embed(image, cfg: EncoderConfig, weights: dict) -> Tensor:
    """Split into PxP patches, embed linearly, add the absolute position embedding.

    ``image`` is ``[3, H, W]`` (returns ``[N, C]``) or ``[B, 3, H, W]``
    (returns ``[B, N, C]``). Patches are flattened in (row, col, channel) order.
    """
    image = T.as_tensor(image)
    single = image.ndim == 3
    if single:
        image = T.reshape(image, (1,) + image.shape)
    B, ch, H, W = image.shape
    P = cfg.patch_size
    if H % P or W % P:
        raise ValueError(f"image {H}x{W} not divisible into {P}x{P} patches")
    gh, gw = H // P, W // P
    x = T.reshape(image, (B, ch, gh, P, gw, P))
    x = T.permute(x, (0, 2, 4, 3, 5, 1))
    x = T.reshape(x, (B, gh * gw, P * P * ch))
    tokens = T.linear(x, weights["patch_embed.w"], weights["patch_embed.b"])
    pos = weights["pos_embed"]
    if pos.shape[0] != gh * gw:
        raise ValueError(f"position embedding has {pos.shape[0]} rows, image gives {gh * gw} patches")
    tokens = tokens + pos
    return tokens[0] if single else tokens


def qkv_project(tokens, wq, wk, wv, heads: int, bq=None, bk=None, bv=None):
    """Project ``[..., N, C]`` tokens to per-head Q, K, V of shape ``[..., heads, N, C/heads]``."""
    tokens = T.as_tensor(tokens)
    C = tokens.shape[-1]
    if C % heads:
        raise ValueError(f"channels {C} not divisible by {heads} heads")
    d = C // heads
    lead = tokens.shape[:-2]
    N = tokens.shape[-2]
    out = []
    for w, b in ((wq, bq), (wk, bk), (wv, bv)):
        if T.as_tensor(w).shape != (C, C):
            raise ValueError(f"projection weight shape {T.as_tensor(w).shape} != {(C, C)}")
        y = T.linear(tokens, w, b)
        y = T.reshape(y, lead + (N, heads, d))
        nd = len(lead)
        y = T.permute(y, tuple(range(nd)) + (nd + 1, nd, nd + 2))
        out.append(y)
    return tuple(out)


def merge_heads(x: Tensor) -> Tensor:
    """``[..., heads, N, d]`` -> ``[..., N, heads*d]``."""
    *lead, h, n, d = x.shape
    nd = len(lead)
    x = T.permute(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))
    return T.reshape(x, tuple(lead) + (n, h * d))


def relative_position_index(m: int) -> np.ndarray:
    """``[m*m, m*m]`` indices into a ``(2m-1)**2`` bias table by (d_row, d_col)."""
    rows, cols = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    r = rows.reshape(-1)
    c = cols.reshape(-1)
    dr = r[:, None] - r[None, :] + m - 1
    dc = c[:, None] - c[None, :] + m - 1
    return dr * (2 * m - 1) + dc


def shift_region_labels(H: int, W: int, m: int, shift: int) -> np.ndarray:
    """Region id of every cell in the cyclically shifted grid (Swin's three-slice labelling)."""
    lab = np.zeros((H, W), dtype=np.int64)
    cnt = 0
    for hs in (slice(0, H - m), slice(H - m, H - shift), slice(H - shift, H)):
        for ws in (slice(0, W - m), slice(W - m, W - shift), slice(W - shift, W)):
            lab[hs, ws] = cnt
            cnt += 1
    return lab


def shift_attention_mask(H: int, W: int, m: int, shift: int) -> np.ndarray:
    """``[nW, m*m, m*m]`` additive mask: 0 within a region, MASK_VALUE across."""
    lab = shift_region_labels(H, W, m, shift)
    win = partition_grid(lab[None, :, :, None], m)[0, :, :, 0]
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, MASK_VALUE)


def partition_grid(a: np.ndarray, m: int) -> np.ndarray:
    """Numpy helper: ``[B, H, W, C]`` -> ``[B, nW, m*m, C]``."""
    B, H, W, C = a.shape
    a = a.reshape(B, H // m, m, W // m, m, C).transpose(0, 1, 3, 2, 4, 5)
    return a.reshape(B, (H // m) * (W // m), m * m, C)


def _to_windows(x: Tensor, H: int, W: int, m: int) -> Tensor:
    # [B, h, H*W, d] -> [B, h, nW, m*m, d]
    B, h, _, d = x.shape
    x = T.reshape(x, (B, h, H // m, m, W // m, m, d))
    x = T.permute(x, (0, 1, 2, 4, 3, 5, 6))
    return T.reshape(x, (B, h, (H // m) * (W // m), m * m, d))


def _from_windows(x: Tensor, H: int, W: int, m: int) -> Tensor:
    B, h, _, _, d = x.shape
    x = T.reshape(x, (B, h, H // m, W // m, m, m, d))
    x = T.permute(x, (0, 1, 2, 4, 3, 5, 6))
    return T.reshape(x, (B, h, H * W, d))


def gather_bias(bias_table, m: int) -> Tensor:
    """Bias table ``[(2m-1)^2, heads]`` -> ``[heads, m*m, m*m]``."""
    bias_table = T.as_tensor(bias_table)
    if bias_table.shape[0] != (2 * m - 1) ** 2:
        raise ValueError(f"bias table has {bias_table.shape[0]} rows, window {m} needs {(2 * m - 1) ** 2}")
    idx = relative_position_index(m).reshape(-1)
    b = T.getitem(bias_table, idx)
    b = T.reshape(b, (m * m, m * m, bias_table.shape[1]))
    return T.permute(b, (2, 0, 1))


def window_attention(q, k, v, bias_table, grid, window_size: int, mask=None, return_attn=False):
    """Scaled dot-product attention inside non-overlapping windows plus relative position bias.

    ``q``, ``k``, ``v``: ``[B, heads, H*W, d]``; ``grid`` = (H, W).
    ``mask`` (optional): ``[nW, m*m, m*m]`` additive constant.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    H, W = grid
    m = window_size
    if H % m or W % m:
        raise ValueError(f"grid {H}x{W} is not divisible by window {m}")
    if q.shape[2] != H * W or k.shape != q.shape or v.shape[:3] != q.shape[:3]:
        raise ValueError(f"token count mismatch: q {q.shape}, k {k.shape}, v {v.shape}, grid {grid}")
    d = q.shape[-1]
    qw = _to_windows(q, H, W, m)
    kw = _to_windows(k, H, W, m)
    vw = _to_windows(v, H, W, m)
    scores = T.matmul(qw, T.transpose_last(kw)) * (1.0 / math.sqrt(d))
    if bias_table is not None:
        bias = gather_bias(bias_table, m)
        scores = scores + T.reshape(bias, (1, bias.shape[0], 1, m * m, m * m))
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape[0] != qw.shape[2]:
            raise ValueError(f"mask has {mask.shape[0]} windows, grid gives {qw.shape[2]}")
        scores = scores + Tensor(mask[None, None])
    attn = T.softmax_lastdim(scores)
    out = _from_windows(T.matmul(attn, vw), H, W, m)
    return (out, attn) if return_attn else out


def _roll_tokens(x: Tensor, H: int, W: int, s: int) -> Tensor:
    B, h, _, d = x.shape
    x = T.reshape(x, (B, h, H, W, d))
    x = T.roll(x, (s, s), (2, 3))
    return T.reshape(x, (B, h, H * W, d))


def shifted_window_attention(q, k, v, bias_table, grid, window_size: int, shift: int,
                             return_attn=False):
    """Window attention on the grid cyclically shifted by ``(-shift, -shift)``.

    Pairs that wrapped around from opposite image borders are masked out, so
    the result equals per-region attention on the unshifted grid.
    """
    if shift == 0:
        return window_attention(q, k, v, bias_table, grid, window_size, return_attn=return_attn)
    if not 0 < shift < window_size:
        raise ValueError(f"shift {shift} must lie in (0, {window_size})")
    H, W = grid
    qs, ks, vs = (_roll_tokens(T.as_tensor(t), H, W, -shift) for t in (q, k, v))
    mask = shift_attention_mask(H, W, window_size, shift)
    res = window_attention(qs, ks, vs, bias_table, grid, window_size, mask=mask, return_attn=return_attn)
    if return_attn:
        out, attn = res
        return _roll_tokens(out, H, W, shift), attn
    return _roll_tokens(res, H, W, shift)


def swin_block(x, weights: dict, prefix: str, heads: int, window_size: int, shift: int) -> Tensor:
    """norm -> (shifted) window attention -> residual -> norm -> MLP -> residual."""
    x = T.as_tensor(x)
    B, H, W, C = x.shape
    w = lambda name: weights[prefix + name]
    tokens = T.reshape(x, (B, H * W, C))
    y = T.layer_norm(tokens, w("norm1.g"), w("norm1.b"))
    q, k, v = qkv_project(y, w("attn.wq"), w("attn.wk"), w("attn.wv"), heads,
                          w("attn.bq"), w("attn.bk"), w("attn.bv"))
    a = shifted_window_attention(q, k, v, w("attn.rel_bias"), (H, W), window_size, shift)
    a = T.linear(merge_heads(a), w("attn.proj.w"), w("attn.proj.b"))
    tokens = tokens + a
    y = T.layer_norm(tokens, w("norm2.g"), w("norm2.b"))
    y = T.gelu(T.linear(y, w("mlp.fc1.w"), w("mlp.fc1.b")))
    tokens = tokens + T.linear(y, w("mlp.fc2.w"), w("mlp.fc2.b"))
    return T.reshape(tokens, (B, H, W, C))


def patch_merge(x, weights: dict, prefix: str) -> Tensor:
    """``[B, H, W, C]`` -> ``[B, H/2, W/2, 2C]``: concat each 2x2 neighbourhood, norm, project."""
    x = T.as_tensor(x)
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"patch_merge needs even extents, got {H}x{W}")
    parts = [x[:, 0::2, 0::2, :], x[:, 1::2, 0::2, :], x[:, 0::2, 1::2, :], x[:, 1::2, 1::2, :]]
    y = T.concat(parts, axis=-1)
    y = T.layer_norm(y, weights[prefix + "norm.g"], weights[prefix + "norm.b"])
    return T.matmul(y, weights[prefix + "w"])


def encoder_forward(images, cfg: EncoderConfig, weights: dict) -> FeaturePyramid:
    """Run the four stages; return stage 2-4 features as ``[B, C, H, W]`` at strides 8/16/32."""
    images = T.as_tensor(images)
    if images.ndim == 3:
        images = T.reshape(images, (1,) + images.shape)
    if images.shape[1:] != (cfg.in_chans, cfg.image_size, cfg.image_size):
        raise ValueError(f"image shape {images.shape[1:]} does not match config "
                         f"{(cfg.in_chans, cfg.image_size, cfg.image_size)}")
    B = images.shape[0]
    g = cfg.stage_grid(0)
    x = T.reshape(patch_partition_embed(images, cfg, weights), (B, g, g, cfg.embed_dim))
    feats = []
    for s in range(4):
        m, shift = cfg.stage_window(s)
        for b in range(cfg.depths[s]):
            x = swin_block(x, weights, f"stages.{s}.blocks.{b}.", cfg.num_heads[s], m,
                           shift if b % 2 else 0)
        if s > 0:
            y = T.layer_norm(x, weights[f"out_norm.{s}.g"], weights[f"out_norm.{s}.b"])
            feats.append(T.permute(y, (0, 3, 1, 2)))
        if s < 3:
            x = patch_merge(x, weights, f"stages.{s}.merge.")
    return FeaturePyramid(feats)
