"""Sliding-window self-attention encoder layer.

Token mixer: per-channel affine Q/K/V, attention inside overlapping ``w x w``
windows placed every ``s`` pixels, with a learned relative-position bias.
Overlapping window outputs are merged back onto the grid by averaging over
the windows that cover each pixel.  Channel mixer: two 1x1 convolutions with
GELU, residual add, then layer norm over channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .tensor import DTYPE, ConvKernel, Layer, ShapeError, as_tensor4, conv2d, conv_layer, gelu


@dataclass(frozen=True)
class SwsaConfig:
    window: int = 7
    stride: int = 4
    heads: int = 8
    d_k: Optional[int] = None

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.heads < 1:
            raise ValueError("window, stride and heads must be positive")
        if self.stride > self.window:
            raise ValueError(f"stride {self.stride} exceeds window {self.window}; pixels would be skipped")

    def head_dim(self, channels: int) -> int:
        if channels % self.heads:
            raise ShapeError(f"channel count {channels} not divisible by heads {self.heads}")
        return channels // self.heads

    def scale_dim(self, channels: int) -> int:
        return self.head_dim(channels) if self.d_k is None else self.d_k


@dataclass
class SwsaParams:
    qkv_scale: np.ndarray  # (3, c)
    qkv_bias: np.ndarray  # (3, c)
    rpe: np.ndarray  # (heads, 2w-1, 2w-1)
    ffn1: ConvKernel
    ffn2: ConvKernel
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    ln_eps: float = 1e-6

    @property
    def channels(self) -> int:
        return np.asarray(self.qkv_scale).shape[1]


def init_swsa(c: int, cfg: SwsaConfig, expansion: int = 2, rng=None) -> SwsaParams:
    rng = np.random.default_rng() if rng is None else rng
    hidden = expansion * c
    w = cfg.window
    return SwsaParams(
        qkv_scale=rng.normal(1.0, 0.1, (3, c)).astype(DTYPE),
        qkv_bias=rng.normal(0.0, 0.02, (3, c)).astype(DTYPE),
        rpe=rng.normal(0.0, 0.02, (cfg.heads, 2 * w - 1, 2 * w - 1)).astype(DTYPE),
        ffn1=ConvKernel(rng.normal(0, np.sqrt(2.0 / c), (hidden, c, 1, 1)), np.zeros(hidden)),
        ffn2=ConvKernel(rng.normal(0, np.sqrt(1.0 / hidden), (c, hidden, 1, 1)), np.zeros(c)),
        ln_gamma=np.ones(c, DTYPE),
        ln_beta=np.zeros(c, DTYPE),
    )


def qkv_project(x: np.ndarray, p: SwsaParams):
    x = as_tensor4(x)
    scale = np.asarray(p.qkv_scale, DTYPE)
    bias = np.asarray(p.qkv_bias, DTYPE)
    if scale.shape != (3, x.shape[1]) or bias.shape != (3, x.shape[1]):
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, QKV params have {scale.shape}")
    return tuple(x * scale[i][None, :, None, None] + bias[i][None, :, None, None] for i in range(3))


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def padded_extent(size: int, window: int, stride: int) -> int:
    if size <= window:
        return window
    return window + -(-(size - window) // stride) * stride


class Windows(NamedTuple):
    patches: np.ndarray  # (n, ny, nx, c, w, w)
    valid: np.ndarray  # (ny, nx, w, w) bool, False on padding
    coverage: np.ndarray  # (h, w) int, windows covering each real pixel
    size: tuple  # original (h, w)


def window_partition(x: np.ndarray, cfg: SwsaConfig) -> Windows:
    x = as_tensor4(x)
    n, c, h, w = x.shape
    win, s = cfg.window, cfg.stride
    hp, wp = padded_extent(h, win, s), padded_extent(w, win, s)
    xp = np.zeros((n, c, hp, wp), DTYPE)
    xp[:, :, :h, :w] = x
    mask = np.zeros((hp, wp), bool)
    mask[:h, :w] = True
    ny, nx = (hp - win) // s + 1, (wp - win) // s + 1
    patches = np.empty((n, ny, nx, c, win, win), DTYPE)
    valid = np.empty((ny, nx, win, win), bool)
    coverage = np.zeros((hp, wp), np.int64)
    for iy in range(ny):
        for ix in range(nx):
            y0, x0 = iy * s, ix * s
            patches[:, iy, ix] = xp[:, :, y0 : y0 + win, x0 : x0 + win]
            valid[iy, ix] = mask[y0 : y0 + win, x0 : x0 + win]
            coverage[y0 : y0 + win, x0 : x0 + win] += 1
    return Windows(patches, valid, coverage[:h, :w], (h, w))


def window_merge(patches: np.ndarray, windows: Windows, cfg: SwsaConfig) -> np.ndarray:
    """Average overlapping window outputs back onto the original grid."""
    n, ny, nx, c, win, _ = patches.shape
    s = cfg.stride
    h, w = windows.size
    acc = np.zeros((n, c, (ny - 1) * s + win, (nx - 1) * s + win), DTYPE)
    for iy in range(ny):
        for ix in range(nx):
            acc[:, :, iy * s : iy * s + win, ix * s : ix * s + win] += patches[:, iy, ix]
    return acc[:, :, :h, :w] / windows.coverage.astype(DTYPE)[None, None]


def relative_position_index(window: int) -> np.ndarray:
    """``(w*w, w*w, 2)`` table of (dy + w - 1, dx + w - 1) for query/key token pairs."""
    ys, xs = np.divmod(np.arange(window * window), window)
    dy = ys[:, None] - ys[None, :] + window - 1
    dx = xs[:, None] - xs[None, :] + window - 1
    return np.stack([dy, dx], axis=-1)


def relative_bias(rpe: np.ndarray, window: int) -> np.ndarray:
    rpe = np.asarray(rpe, DTYPE)
    if rpe.shape[1:] != (2 * window - 1, 2 * window - 1):
        raise ShapeError(f"position table shape {rpe.shape} does not fit window {window}")
    idx = relative_position_index(window)
    return rpe[:, idx[..., 0], idx[..., 1]]  # (heads, T, T)


def _tokens(patches: np.ndarray, heads: int) -> np.ndarray:
    n, ny, nx, c, win, _ = patches.shape
    t = patches.reshape(n, ny, nx, heads, c // heads, win * win)
    return t.transpose(0, 1, 2, 3, 5, 4)  # (n, ny, nx, heads, T, d)


def attention_logits(q_win: Windows, k_win: Windows, cfg: SwsaConfig, rpe=None) -> np.ndarray:
    """Scaled dot-product logits plus position bias; padding keys set to -inf.

    Shape ``(n, ny, nx, heads, T, T)``.
    """
    c = q_win.patches.shape[3]
    cfg.head_dim(c)
    q = _tokens(q_win.patches, cfg.heads)
    k = _tokens(k_win.patches, cfg.heads)
    logits = np.matmul(q, np.swapaxes(k, -1, -2)) / DTYPE(np.sqrt(cfg.scale_dim(c)))
    if rpe is not None:
        logits = logits + relative_bias(rpe, cfg.window)
    key_valid = q_win.valid.reshape(q_win.valid.shape[0], q_win.valid.shape[1], -1)
    return np.where(key_valid[None, :, :, None, None, :], logits, -np.inf).astype(DTYPE)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis; normalisation is accumulated in float64."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=-1, keepdims=True)).astype(DTYPE)


def windowed_attention(q, k, v, cfg: SwsaConfig, rpe=None) -> np.ndarray:
    q, k, v = as_tensor4(q, "Q"), as_tensor4(k, "K"), as_tensor4(v, "V")
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    qw, kw, vw = (window_partition(t, cfg) for t in (q, k, v))
    attn = softmax_rows(attention_logits(qw, kw, cfg, rpe))
    out = np.matmul(attn, _tokens(vw.patches, cfg.heads))  # (n, ny, nx, heads, T, d)
    n, ny, nx, heads, _, d = out.shape
    win = cfg.window
    patches = out.transpose(0, 1, 2, 3, 5, 4).reshape(n, ny, nx, heads * d, win, win)
    return window_merge(patches, vw, cfg)


# ---------------------------------------------------------------------------
# Channel mixer and encoder layer
# ---------------------------------------------------------------------------


def layer_norm_channels(x: np.ndarray, gamma, beta, eps: float) -> np.ndarray:
    x = as_tensor4(x)
    mean = x.mean(axis=1, keepdims=True, dtype=np.float64)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    y = (x - mean) / np.sqrt(var + eps)
    y = y * np.asarray(gamma, np.float64)[None, :, None, None] + np.asarray(beta, np.float64)[None, :, None, None]
    return y.astype(DTYPE)


def channel_mixer(o: np.ndarray, p: SwsaParams) -> np.ndarray:
    o = as_tensor4(o)
    if p.ffn1.c_in != o.shape[1] or p.ffn2.c_out != o.shape[1] or p.ffn2.c_in != p.ffn1.c_out:
        raise ShapeError(
            f"FFN kernels {p.ffn1.weight.shape} / {p.ffn2.weight.shape} do not fit {o.shape[1]} channels"
        )
    ffn = conv2d(gelu(conv2d(o, p.ffn1)), p.ffn2)
    return layer_norm_channels(ffn + o, p.ln_gamma, p.ln_beta, p.ln_eps)


def token_mixer(x: np.ndarray, p: SwsaParams, cfg: SwsaConfig) -> np.ndarray:
    q, k, v = qkv_project(x, p)
    return x + windowed_attention(q, k, v, cfg, p.rpe)


def swsa_ifi_forward(f5: np.ndarray, p: SwsaParams, cfg: SwsaConfig) -> np.ndarray:
    return channel_mixer(token_mixer(as_tensor4(f5, "F5"), p, cfg), p)


def swsa_layers(p: SwsaParams, cfg: SwsaConfig, in_shape: tuple, name: str = "swsa") -> list[Layer]:
    c, h, w = in_shape
    win = cfg.window
    ny = (padded_extent(h, win, cfg.stride) - win) // cfg.stride + 1
    nx = (padded_extent(w, win, cfg.stride) - win) // cfg.stride + 1
    tokens = win * win
    # QK^T and AV over every window, all heads together span c channels
    macs = 2 * ny * nx * tokens * tokens * c
    logits_shape = (cfg.heads, ny * nx * tokens, tokens)
    f1 = conv_layer(p.ffn1, in_shape, f"{name}.ffn1")
    return [
        Layer("affine", f"{name}.q", in_shape),
        Layer("affine", f"{name}.k", in_shape),
        Layer("affine", f"{name}.v", in_shape),
        Layer("matmul", f"{name}.attn", macs=macs, in_shape=in_shape, params=int(np.asarray(p.rpe).size)),
        Layer("softmax", f"{name}.softmax", logits_shape),
        Layer("add", f"{name}.res1", in_shape),
        f1,
        Layer("act", f"{name}.gelu", f1.out_shape),
        conv_layer(p.ffn2, f1.out_shape, f"{name}.ffn2"),
        Layer("add", f"{name}.res2", in_shape),
        Layer("affine", f"{name}.ln", in_shape),
    ]
