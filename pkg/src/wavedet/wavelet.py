"""Orthonormal 2D Haar filter bank, multi-level decomposition and WTConv.

Sub-band naming follows the analysis kernels (each scaled by 1/2)::

    LL = [[1, 1], [1, 1]]    LH = [[1, -1], [1, -1]]
    HL = [[1, 1], [-1, -1]]  HH = [[1, -1], [-1, 1]]

After concatenation the channel layout is ``[LL | LH | HL | HH]``, each block
holding the ``c`` input channels in order.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from .tensor import (
    DTYPE,
    ConvKernel,
    Layer,
    NormParams,
    ShapeError,
    as_tensor4,
    batch_norm_infer,
    conv2d,
    conv_layer,
    read_t4f,
    relu,
    write_t4f,
)

BAND_NAMES = ("LL", "LH", "HL", "HH")

HAAR_KERNELS = 0.5 * np.array(
    [
        [[1, 1], [1, 1]],
        [[1, -1], [1, -1]],
        [[1, 1], [-1, -1]],
        [[1, -1], [-1, 1]],
    ],
    dtype=DTYPE,
)


class SubBands(NamedTuple):
    LL: np.ndarray
    LH: np.ndarray
    HL: np.ndarray
    HH: np.ndarray


@dataclass
class WaveletPyramid:
    """``levels[i]`` holds the sub-bands of decomposition level ``i + 1``."""

    levels: List[SubBands]

    @property
    def depth(self) -> int:
        return len(self.levels)


def haar_dwt2(x: np.ndarray) -> SubBands:
    x = as_tensor4(x)
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ShapeError(
            f"Haar transform needs even height and width, got {h}x{w}; pad the input first"
        )
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    half = DTYPE(0.5)
    return SubBands(
        ((a + b) + (c + d)) * half,
        ((a - b) + (c - d)) * half,
        ((a + b) - (c + d)) * half,
        ((a - b) - (c - d)) * half,
    )


def haar_idwt2(bands) -> np.ndarray:
    ll, lh, hl, hh = (as_tensor4(b, name) for b, name in zip(bands, BAND_NAMES))
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeError(
            "sub-band shapes differ: "
            + ", ".join(f"{n}={b.shape}" for n, b in zip(BAND_NAMES, (ll, lh, hl, hh)))
        )
    n, c, h, w = ll.shape
    out = np.empty((n, c, 2 * h, 2 * w), dtype=DTYPE)
    half = DTYPE(0.5)
    out[:, :, 0::2, 0::2] = ((ll + lh) + (hl + hh)) * half
    out[:, :, 0::2, 1::2] = ((ll - lh) + (hl - hh)) * half
    out[:, :, 1::2, 0::2] = ((ll + lh) - (hl + hh)) * half
    out[:, :, 1::2, 1::2] = ((ll - lh) - (hl - hh)) * half
    return out


def _check_levels(shape, levels: int) -> None:
    if levels < 1:
        raise ValueError(f"wavelet levels must be >= 1, got {levels}")
    h, w = shape[2:]
    m = 2**levels
    if h % m or w % m:
        raise ShapeError(
            f"wavelet decomposition with {levels} levels needs height and width divisible "
            f"by {m}, got {h}x{w}"
        )


def wt_decompose(x: np.ndarray, levels: int) -> WaveletPyramid:
    x = as_tensor4(x)
    _check_levels(x.shape, levels)
    out = []
    ll = x
    for _ in range(levels):
        bands = haar_dwt2(ll)
        out.append(bands)
        ll = bands.LL
    return WaveletPyramid(out)


def wt_reconstruct(pyramid: WaveletPyramid) -> np.ndarray:
    """Plain synthesis: rebuild the input from the deepest LL and all detail bands."""
    ll = pyramid.levels[-1].LL
    for bands in reversed(pyramid.levels):
        ll = haar_idwt2((ll, bands.LH, bands.HL, bands.HH))
    return ll


def save_pyramid(pyramid: WaveletPyramid, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    dims = []
    for i, bands in enumerate(pyramid.levels, 1):
        for name, band in zip(BAND_NAMES, bands):
            write_t4f(os.path.join(directory, f"{name}_{i}.t4f"), band)
        dims.append(list(bands.LL.shape))
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump({"levels": pyramid.depth, "dims": dims}, fh, indent=2)


def load_pyramid(directory) -> WaveletPyramid:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    levels = []
    for i in range(1, manifest["levels"] + 1):
        bands = SubBands(*(read_t4f(os.path.join(directory, f"{n}_{i}.t4f")) for n in BAND_NAMES))
        if list(bands.LL.shape) != manifest["dims"][i - 1]:
            raise ShapeError(f"level {i}: manifest dims {manifest['dims'][i - 1]} != {bands.LL.shape}")
        levels.append(bands)
    return WaveletPyramid(levels)


# ---------------------------------------------------------------------------
# WTConv
# ---------------------------------------------------------------------------


@dataclass
class WtConvParams:
    """Per-level depthwise 5x5 kernels over ``4c`` channels and channel scales.

    ``base_kernel`` is the depthwise path on the undecomposed input; ``None``
    disables it.
    """

    level_kernels: List[ConvKernel]
    level_scales: List[np.ndarray]
    base_kernel: Optional[ConvKernel] = None

    @property
    def levels(self) -> int:
        return len(self.level_kernels)

    @property
    def channels(self) -> int:
        return self.level_kernels[0].c_out // 4

    def validate(self, c: int) -> None:
        if self.levels < 1 or len(self.level_scales) != self.levels:
            raise ValueError("WTConv needs >= 1 level and one scale vector per level")
        for i, (k, s) in enumerate(zip(self.level_kernels, self.level_scales), 1):
            if k.c_out != 4 * c or k.groups != 4 * c or k.weight.shape[1] != 1:
                raise ShapeError(f"level {i}: expected depthwise kernel over {4 * c} channels")
            if np.asarray(s).shape != (4 * c,):
                raise ShapeError(f"level {i}: scale must have length {4 * c}")
        if self.base_kernel is not None and (self.base_kernel.c_out != c or self.base_kernel.groups != c):
            raise ShapeError(f"base kernel must be depthwise over {c} channels")


def depthwise_kernel(weight: np.ndarray, bias=None) -> ConvKernel:
    weight = np.asarray(weight, DTYPE)
    c, _, k, _ = weight.shape
    return ConvKernel(weight, bias, stride=1, padding=k // 2, groups=c)


def identity_depthwise(c: int, k: int = 5) -> ConvKernel:
    weight = np.zeros((c, 1, k, k), DTYPE)
    weight[:, 0, k // 2, k // 2] = 1.0
    return depthwise_kernel(weight)


def init_wtconv(c: int, levels: int = 2, k: int = 5, rng=None, base: bool = True) -> WtConvParams:
    rng = np.random.default_rng() if rng is None else rng
    std = 1.0 / k
    kernels = [depthwise_kernel(rng.normal(0, std, (4 * c, 1, k, k))) for _ in range(levels)]
    scales = [np.full(4 * c, 0.1, DTYPE) for _ in range(levels)]
    base_kernel = depthwise_kernel(rng.normal(0, std, (c, 1, k, k))) if base else None
    return WtConvParams(kernels, scales, base_kernel)


def wtconv_forward(x: np.ndarray, p: WtConvParams) -> np.ndarray:
    x = as_tensor4(x)
    c = x.shape[1]
    p.validate(c)
    pyramid = wt_decompose(x, p.levels)
    filtered = []
    for bands, kernel, scale in zip(pyramid.levels, p.level_kernels, p.level_scales):
        stacked = np.concatenate(bands, axis=1)
        y = conv2d(stacked, kernel) * np.asarray(scale, DTYPE)[None, :, None, None]
        filtered.append(SubBands(*np.split(y, 4, axis=1)))

    carry = None
    for y in reversed(filtered):
        ll = y.LL if carry is None else y.LL + carry
        carry = haar_idwt2((ll, y.LH, y.HL, y.HH))
    if p.base_kernel is not None:
        carry = carry + conv2d(x, p.base_kernel)
    return carry


def wtconv_layers(p: WtConvParams, in_shape: tuple, name: str = "wtconv") -> list[Layer]:
    c, h, w = in_shape
    layers = []
    for i, kernel in enumerate(p.level_kernels, 1):
        hi, wi = h >> (i - 1), w >> (i - 1)
        band = (c, hi, wi)
        layers.append(Layer("fixed_conv", f"{name}.dwt{i}", band, kernel=(4 * c, 1, 2, 2), stride=2))
        sub = (4 * c, hi // 2, wi // 2)
        layers.append(conv_layer(kernel, sub, f"{name}.dw{i}"))
        layers.append(Layer("scale", f"{name}.scale{i}", sub))
        if i < p.levels:
            layers.append(Layer("add", f"{name}.carry{i}", (c, hi // 2, wi // 2)))
        # synthesis is the transposed filter bank: same tap count as analysis
        layers.append(Layer("fixed_conv", f"{name}.iwt{i}", band, kernel=(4 * c, 1, 2, 2), stride=2))
    if p.base_kernel is not None:
        layers.append(conv_layer(p.base_kernel, in_shape, f"{name}.base"))
        layers.append(Layer("add", f"{name}.base_add", in_shape))
    return layers


# ---------------------------------------------------------------------------
# WTConv Block
# ---------------------------------------------------------------------------


@dataclass
class WtStage:
    conv: ConvKernel
    norm1: NormParams
    wtconv: WtConvParams
    norm2: NormParams


@dataclass
class WtBlockParams:
    """Refinement stage (stride 1) followed by a stride-2 compression stage."""

    stage1: WtStage
    stage2: WtStage
    shortcut: ConvKernel
    shortcut_norm: NormParams

    @property
    def levels(self) -> int:
        return self.stage1.wtconv.levels

    @property
    def out_channels(self) -> int:
        return self.stage2.conv.c_out


def _residual_mapping(x: np.ndarray, stage: WtStage) -> np.ndarray:
    t = relu(batch_norm_infer(conv2d(x, stage.conv), stage.norm1))
    return batch_norm_infer(wtconv_forward(t, stage.wtconv), stage.norm2)


def wtconv_block_forward(x: np.ndarray, p: WtBlockParams) -> np.ndarray:
    x = as_tensor4(x)
    h, w = x.shape[2:]
    m = 2 ** (p.levels + 1)
    if h % m or w % m:
        raise ShapeError(
            f"WTConv block with {p.levels} wavelet levels needs height and width divisible "
            f"by {m}, got {h}x{w}"
        )
    x1 = relu(_residual_mapping(x, p.stage1) + x)
    shortcut = batch_norm_infer(conv2d(x1, p.shortcut), p.shortcut_norm)
    return relu(_residual_mapping(x1, p.stage2) + shortcut)


def _conv3(rng, c_in, c_out, stride):
    std = np.sqrt(2.0 / (9 * c_in))
    return ConvKernel(rng.normal(0, std, (c_out, c_in, 3, 3)), None, stride=stride, padding=1)


def _random_norm(rng, c):
    return NormParams(
        rng.uniform(0.5, 1.0, c).astype(DTYPE),
        rng.normal(0, 0.05, c).astype(DTYPE),
        rng.normal(0, 0.05, c).astype(DTYPE),
        rng.uniform(0.8, 1.2, c).astype(DTYPE),
        1e-5,
    )


def init_wtconv_block(c_in: int, c_out: Optional[int] = None, levels: int = 2, rng=None) -> WtBlockParams:
    rng = np.random.default_rng() if rng is None else rng
    c_out = 2 * c_in if c_out is None else c_out
    stage1 = WtStage(_conv3(rng, c_in, c_in, 1), _random_norm(rng, c_in),
                     init_wtconv(c_in, levels, rng=rng), _random_norm(rng, c_in))
    stage2 = WtStage(_conv3(rng, c_in, c_out, 2), _random_norm(rng, c_out),
                     init_wtconv(c_out, levels, rng=rng), _random_norm(rng, c_out))
    shortcut = ConvKernel(rng.normal(0, np.sqrt(1.0 / c_in), (c_out, c_in, 1, 1)), None, stride=2)
    return WtBlockParams(stage1, stage2, shortcut, _random_norm(rng, c_out))


def _stage_layers(stage: WtStage, in_shape, name):
    conv = conv_layer(stage.conv, in_shape, f"{name}.conv")
    mid = conv.out_shape
    return [
        conv,
        Layer("norm", f"{name}.bn1", mid),
        Layer("act", f"{name}.relu", mid),
        *wtconv_layers(stage.wtconv, mid, f"{name}.wtconv"),
        Layer("norm", f"{name}.bn2", mid),
    ]


def wtconv_block_layers(p: WtBlockParams, in_shape: tuple, name: str = "block") -> list[Layer]:
    in_shape = tuple(in_shape)
    s1 = _stage_layers(p.stage1, in_shape, f"{name}.stage1")
    s1 += [Layer("add", f"{name}.res1", in_shape), Layer("act", f"{name}.relu1", in_shape)]
    s2 = _stage_layers(p.stage2, in_shape, f"{name}.stage2")
    out = s2[0].out_shape
    sc = conv_layer(p.shortcut, in_shape, f"{name}.shortcut")
    return s1 + s2 + [
        sc,
        Layer("norm", f"{name}.shortcut_bn", out),
        Layer("add", f"{name}.res2", out),
        Layer("act", f"{name}.relu2", out),
    ]
