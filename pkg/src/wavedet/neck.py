"""Cross-scale fusion neck: gated boundary aggregation, re-parameterizable
ELAN aggregation and the top-down pyramid loop.

The gating math of :func:`sba_forward` is a reconstruction: two projected
inputs each get a sigmoid spatial gate, each side is recalibrated with the
other side's gated features, and a 3x3 convolution fuses the pair.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .tensor import (
    DTYPE,
    ConvKernel,
    Layer,
    NormParams,
    ShapeError,
    as_tensor4,
    batch_norm_infer,
    concat_channels,
    conv2d,
    conv_layer,
    relu,
    sigmoid,
    upsample_nearest2x,
)

# ---------------------------------------------------------------------------
# Structural re-parameterization
# ---------------------------------------------------------------------------


@dataclass
class RepBranchSet:
    """3x3 + 1x1 (+ identity) branches, each followed by a norm.

    ``fused`` is filled by :func:`rep_fuse`.
    """

    conv3: ConvKernel
    norm3: NormParams
    conv1: ConvKernel
    norm1: NormParams
    identity_norm: Optional[NormParams] = None
    fused: Optional[ConvKernel] = None

    def __post_init__(self):
        if self.conv3.kernel_size != (3, 3) or self.conv1.kernel_size != (1, 1):
            raise ShapeError("branches must be 3x3 and 1x1 convolutions")
        if self.conv3.stride != self.conv1.stride or self.conv3.c_out != self.conv1.c_out:
            raise ShapeError("branches must share stride and output channels")
        if self.conv3.padding != 1 or self.conv1.padding != 0:
            raise ShapeError("3x3 branch needs padding 1 and 1x1 branch padding 0")
        if self.conv3.groups != 1 or self.conv1.groups != 1:
            raise ShapeError("grouped branches are not supported")
        if self.identity_norm is not None and (
            self.conv3.c_in != self.conv3.c_out or self.conv3.stride != 1
        ):
            raise ShapeError("identity branch needs matching channels and stride 1")

    def train_params(self) -> int:
        n = self.conv3.num_params() + self.conv1.num_params() + 2 * self.norm3.channels + 2 * self.norm1.channels
        if self.identity_norm is not None:
            n += 2 * self.identity_norm.channels
        return n


def rep_forward_train(x: np.ndarray, b: RepBranchSet) -> np.ndarray:
    x = as_tensor4(x)
    if x.shape[1] != b.conv3.c_in:
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, block expects {b.conv3.c_in}")
    y = batch_norm_infer(conv2d(x, b.conv3), b.norm3) + batch_norm_infer(conv2d(x, b.conv1), b.norm1)
    if b.identity_norm is not None:
        y = y + batch_norm_infer(x, b.identity_norm)
    return relu(y)


def _fold(weight: np.ndarray, bias: Optional[np.ndarray], norm: NormParams):
    scale, shift = norm.folded()
    w = np.asarray(weight, np.float64) * scale[:, None, None, None]
    b = shift if bias is None else shift + np.asarray(bias, np.float64) * scale
    return w, b


def rep_fuse(b: RepBranchSet) -> RepBranchSet:
    """Collapse all branches into one biased 3x3 kernel (folding done in float64)."""
    w3, b3 = _fold(b.conv3.weight, b.conv3.bias, b.norm3)
    w1, b1 = _fold(b.conv1.weight, b.conv1.bias, b.norm1)
    weight = w3.copy()
    weight[:, :, 1, 1] += w1[:, :, 0, 0]
    bias = b3 + b1
    if b.identity_norm is not None:
        c = b.conv3.c_out
        eye = np.zeros((c, c, 3, 3))
        eye[np.arange(c), np.arange(c), 1, 1] = 1.0
        wi, bi = _fold(eye, None, b.identity_norm)
        weight += wi
        bias = bias + bi
    fused = ConvKernel(weight.astype(DTYPE), bias.astype(DTYPE), stride=b.conv3.stride, padding=1)
    return replace(b, fused=fused)


def rep_forward_fused(x: np.ndarray, b: RepBranchSet) -> np.ndarray:
    if b.fused is None:
        raise ValueError("branch set has not been fused; call rep_fuse first")
    return relu(conv2d(x, b.fused))


def rep_forward(x: np.ndarray, b: RepBranchSet) -> np.ndarray:
    """Deployment path when fused, multi-branch path otherwise."""
    return rep_forward_fused(x, b) if b.fused is not None else rep_forward_train(x, b)


def rep_layers(b: RepBranchSet, in_shape, name="rep", fused=None) -> List[Layer]:
    use_fused = b.fused is not None if fused is None else fused
    if use_fused:
        if b.fused is None:
            raise ValueError("branch set has not been fused")
        k = conv_layer(b.fused, in_shape, f"{name}.fused")
        return [k, Layer("act", f"{name}.relu", k.out_shape)]
    k3 = conv_layer(b.conv3, in_shape, f"{name}.conv3")
    out = k3.out_shape
    layers = [
        k3,
        Layer("norm", f"{name}.bn3", out),
        conv_layer(b.conv1, in_shape, f"{name}.conv1"),
        Layer("norm", f"{name}.bn1", out),
        Layer("add", f"{name}.sum", out),
    ]
    if b.identity_norm is not None:
        layers += [Layer("norm", f"{name}.bn_id", out), Layer("add", f"{name}.sum_id", out)]
    return layers + [Layer("act", f"{name}.relu", out)]


def _random_norm(rng, c):
    return NormParams(
        rng.uniform(0.5, 1.5, c).astype(DTYPE),
        rng.normal(0, 0.1, c).astype(DTYPE),
        rng.normal(0, 0.1, c).astype(DTYPE),
        rng.uniform(0.5, 1.5, c).astype(DTYPE),
        1e-5,
    )


def init_rep_branch(c_in: int, c_out: Optional[int] = None, identity: Optional[bool] = None, rng=None) -> RepBranchSet:
    rng = np.random.default_rng() if rng is None else rng
    c_out = c_in if c_out is None else c_out
    identity = (c_in == c_out) if identity is None else identity
    return RepBranchSet(
        ConvKernel(rng.normal(0, np.sqrt(1.0 / (9 * c_in)), (c_out, c_in, 3, 3)), None, padding=1),
        _random_norm(rng, c_out),
        ConvKernel(rng.normal(0, np.sqrt(1.0 / c_in), (c_out, c_in, 1, 1)), None),
        _random_norm(rng, c_out),
        _random_norm(rng, c_out) if identity else None,
    )


# ---------------------------------------------------------------------------
# SBA
# ---------------------------------------------------------------------------


@dataclass
class SbaParams:
    proj_hi: ConvKernel
    proj_lo: ConvKernel
    gate_hi: ConvKernel
    gate_lo: ConvKernel
    out_conv: ConvKernel

    def __post_init__(self):
        if self.proj_hi.c_out != self.proj_lo.c_out:
            raise ShapeError("proj_hi and proj_lo must map to the same channel count")
        if self.gate_hi.c_out != 1 or self.gate_lo.c_out != 1:
            raise ShapeError("gates produce a single channel")
        if self.out_conv.c_in != 2 * self.proj_hi.c_out:
            raise ShapeError("out_conv must take both recalibrated paths")


def init_sba(c_hi: int, c_lo: int, c_mid: int, c_out: int, rng=None) -> SbaParams:
    rng = np.random.default_rng() if rng is None else rng

    def conv(ci, co, k):
        return ConvKernel(rng.normal(0, np.sqrt(1.0 / (ci * k * k)), (co, ci, k, k)), np.zeros(co), padding=k // 2)

    return SbaParams(conv(c_hi, c_mid, 1), conv(c_lo, c_mid, 1), conv(c_mid, 1, 1), conv(c_mid, 1, 1),
                     conv(2 * c_mid, c_out, 3))


def sba_gates(f_hi: np.ndarray, f_lo: np.ndarray, p: SbaParams):
    """Return ``(P, Q, g_P, g_Q)``."""
    f_hi, f_lo = as_tensor4(f_hi, "f_hi"), as_tensor4(f_lo, "f_lo")
    if f_hi.shape[0] != f_lo.shape[0] or f_hi.shape[2:] != f_lo.shape[2:]:
        raise ShapeError(f"SBA inputs differ spatially: {f_hi.shape} vs {f_lo.shape}; upsample f_hi first")
    proj_p = conv2d(f_hi, p.proj_hi)
    proj_q = conv2d(f_lo, p.proj_lo)
    return proj_p, proj_q, sigmoid(conv2d(proj_p, p.gate_hi)), sigmoid(conv2d(proj_q, p.gate_lo))


def sba_forward(f_hi: np.ndarray, f_lo: np.ndarray, p: SbaParams) -> np.ndarray:
    proj_p, proj_q, g_p, g_q = sba_gates(f_hi, f_lo, p)
    gated_p = g_p * proj_p
    gated_q = g_q * proj_q
    rau1 = gated_p + (1 - g_p) * gated_q
    rau2 = gated_q + (1 - g_q) * gated_p
    return conv2d(concat_channels([rau1, rau2]), p.out_conv)


def sba_layers(p: SbaParams, hi_shape, lo_shape, name="sba") -> List[Layer]:
    ph = conv_layer(p.proj_hi, hi_shape, f"{name}.proj_hi")
    mid = ph.out_shape
    gate = (1,) + tuple(mid[1:])
    return [
        ph,
        conv_layer(p.proj_lo, lo_shape, f"{name}.proj_lo"),
        conv_layer(p.gate_hi, mid, f"{name}.gate_hi"),
        conv_layer(p.gate_lo, mid, f"{name}.gate_lo"),
        Layer("act", f"{name}.sigmoid_hi", gate),
        Layer("act", f"{name}.sigmoid_lo", gate),
        # g*P and g*Q, then (1-g), its product with the other side, and the sum
        Layer("mul", f"{name}.gate_p", mid),
        Layer("mul", f"{name}.gate_q", mid),
        Layer("act", f"{name}.one_minus", gate),
        Layer("act", f"{name}.one_minus", gate),
        Layer("mul", f"{name}.cross1", mid),
        Layer("mul", f"{name}.cross2", mid),
        Layer("add", f"{name}.rau1", mid),
        Layer("add", f"{name}.rau2", mid),
        conv_layer(p.out_conv, (2 * mid[0],) + tuple(mid[1:]), f"{name}.out"),
    ]


# ---------------------------------------------------------------------------
# ELAN with re-parameterizable bottlenecks
# ---------------------------------------------------------------------------


@dataclass
class ElanParams:
    transition_in: ConvKernel
    rep_block_1: List[RepBranchSet]
    rep_block_2: List[RepBranchSet]
    transition_out: ConvKernel

    def __post_init__(self):
        hidden = self.transition_in.c_out
        if hidden % 2:
            raise ShapeError(f"transition_in produces {hidden} channels; the split needs an even count")
        if self.transition_out.c_in != 2 * hidden:
            raise ShapeError(f"transition_out expects {self.transition_out.c_in} channels, concat gives {2 * hidden}")


def init_elan(c_in: int, c_out: int, hidden: Optional[int] = None, depth: int = 1, rng=None) -> ElanParams:
    rng = np.random.default_rng() if rng is None else rng
    hidden = c_out if hidden is None else hidden
    half = hidden // 2
    return ElanParams(
        ConvKernel(rng.normal(0, np.sqrt(1.0 / c_in), (hidden, c_in, 1, 1)), np.zeros(hidden)),
        [init_rep_branch(half, rng=rng) for _ in range(depth)],
        [init_rep_branch(half, rng=rng) for _ in range(depth)],
        ConvKernel(rng.normal(0, np.sqrt(1.0 / (2 * hidden)), (c_out, 2 * hidden, 1, 1)), np.zeros(c_out)),
    )


def fuse_elan(p: ElanParams) -> ElanParams:
    return replace(p, rep_block_1=[rep_fuse(b) for b in p.rep_block_1],
                   rep_block_2=[rep_fuse(b) for b in p.rep_block_2])


def _run_blocks(x, blocks):
    for b in blocks:
        x = rep_forward(x, b)
    return x


def elan_forward(x: np.ndarray, p: ElanParams) -> np.ndarray:
    t = conv2d(x, p.transition_in)
    half = t.shape[1] // 2
    x1, x2 = t[:, :half], t[:, half:]
    y2 = _run_blocks(x2, p.rep_block_1)
    y3 = _run_blocks(y2, p.rep_block_2)
    return conv2d(concat_channels([x1, x2, y2, y3]), p.transition_out)


def elan_layers(p: ElanParams, in_shape, name="elan", fused=None) -> List[Layer]:
    t = conv_layer(p.transition_in, in_shape, f"{name}.in")
    hidden, h, w = t.out_shape
    half = (hidden // 2, h, w)
    layers = [t]
    for i, b in enumerate(p.rep_block_1 + p.rep_block_2):
        layers += rep_layers(b, half, f"{name}.rep{i}", fused=fused)
    layers.append(conv_layer(p.transition_out, (2 * hidden, h, w), f"{name}.out"))
    return layers


# ---------------------------------------------------------------------------
# Top-down pyramid
# ---------------------------------------------------------------------------


@dataclass
class NeckParams:
    """Per pyramid level, ordered P5, P4, P3, P2."""

    sba: List[SbaParams]
    elan: List[ElanParams]

    def fused(self) -> "NeckParams":
        return NeckParams(list(self.sba), [fuse_elan(e) for e in self.elan])


def init_neck(feature_channels: Sequence[int], widths: Sequence[int], depth: int = 1, rng=None) -> NeckParams:
    """``feature_channels`` and ``widths`` are ordered (level 2, 3, 4, 5)."""
    rng = np.random.default_rng() if rng is None else rng
    c2, c3, c4, c5 = feature_channels
    w2, w3, w4, w5 = widths
    sba = [init_sba(c5, c5, w5, w5, rng)]
    elan = [init_elan(w5, w5, depth=depth, rng=rng)]
    prev = w5
    for c_lo, width in ((c4, w4), (c3, w3), (c2, w2)):
        sba.append(init_sba(prev, c_lo, width, width, rng))
        elan.append(init_elan(width, width, depth=depth, rng=rng))
        prev = width
    return NeckParams(sba, elan)


def ecfrfn_forward(f5p, f4, f3, f2, p: NeckParams):
    """Return ``(P5, P4, P3, P2)``."""
    feats = [as_tensor4(f, name) for f, name in ((f5p, "F5'"), (f4, "F4"), (f3, "F3"), (f2, "F2"))]
    for deep, shallow, i in zip(feats, feats[1:], (5, 4, 3)):
        if shallow.shape[2] != 2 * deep.shape[2] or shallow.shape[3] != 2 * deep.shape[3]:
            raise ShapeError(
                f"stride mismatch: F{i - 1} is {shallow.shape[2]}x{shallow.shape[3]}, "
                f"expected twice F{i}'s {deep.shape[2]}x{deep.shape[3]}"
            )
    top = feats[0]
    out = [elan_forward(sba_forward(top, top, p.sba[0]), p.elan[0])]
    for f, sba, elan in zip(feats[1:], p.sba[1:], p.elan[1:]):
        out.append(elan_forward(sba_forward(upsample_nearest2x(out[-1]), f, sba), elan))
    return tuple(out)


def neck_layers(p: NeckParams, shapes, name="neck", fused=None) -> List[Layer]:
    """``shapes`` are the ``(c, h, w)`` of (F5', F4, F3, F2)."""
    layers = sba_layers(p.sba[0], shapes[0], shapes[0], f"{name}.sba5")
    mid = layers[-1].out_shape
    layers += elan_layers(p.elan[0], mid, f"{name}.elan5", fused)
    prev = layers[-1].out_shape
    for level, shape, sba, elan in zip((4, 3, 2), shapes[1:], p.sba[1:], p.elan[1:]):
        up = (prev[0], 2 * prev[1], 2 * prev[2])
        sl = sba_layers(sba, up, shape, f"{name}.sba{level}")
        el = elan_layers(elan, sl[-1].out_shape, f"{name}.elan{level}", fused)
        layers += sl + el
        prev = el[-1].out_shape
    return layers
