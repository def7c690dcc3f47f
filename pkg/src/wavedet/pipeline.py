"""Forward feature pipeline: stem, four WTConv blocks, SWSA encoder on the
deepest map, then the top-down fusion neck.

The stem is a stride-2 3x3 conv + BN + ReLU so that block ``i`` (i = 2..5)
emits its map at stride ``2**i``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import neck as nk
from . import wavelet as wv
from .boxloss import LossConfig
from .swsa import SwsaConfig, SwsaParams, init_swsa, swsa_ifi_forward, swsa_layers
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
    count_params_flops,
    relu,
)

NUM_BLOCKS = 4


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    """JSON-serializable configuration.  Widths are ordered level 2, 3, 4, 5."""

    height: int = 256
    width: int = 256
    in_channels: int = 3
    batch: int = 1
    stem_channels: int = 16
    backbone_widths: Tuple[int, ...] = (32, 64, 128, 256)
    neck_widths: Tuple[int, ...] = (64, 128, 256, 256)
    wavelet_levels: int = 2
    window: int = 7
    stride: int = 4
    heads: int = 8
    ffn_expansion: int = 2
    elan_depth: int = 1
    nwd_c: float = 12.8
    ratio: float = 0.75
    lam: float = 0.5
    seed: int = 0
    target_size: int = 8

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("backbone_widths", "neck_widths"):
            if key in data:
                data[key] = tuple(int(v) for v in data[key])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_widths"] = list(self.backbone_widths)
        d["neck_widths"] = list(self.neck_widths)
        return d

    @property
    def swsa(self) -> SwsaConfig:
        return SwsaConfig(self.window, self.stride, self.heads)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(self.nwd_c, self.ratio, self.lam)

    def validate(self) -> None:
        if len(self.backbone_widths) != NUM_BLOCKS or len(self.neck_widths) != NUM_BLOCKS:
            raise ConfigError("backbone_widths and neck_widths need one entry per level 2..5")
        # stem halves once, each block halves once, and the deepest block's
        # wavelet stack needs another 2**(levels + 1)
        m = 2 ** (1 + (NUM_BLOCKS - 1) + self.wavelet_levels + 1)
        if self.height % m or self.width % m:
            raise ConfigError(
                f"input {self.height}x{self.width}: wavelet decomposition with "
                f"{self.wavelet_levels} levels in every block needs height and width divisible by {m}"
            )
        if self.backbone_widths[-1] % self.heads:
            raise ConfigError(f"deepest width {self.backbone_widths[-1]} not divisible by heads {self.heads}")
        if any(w % 2 for w in self.neck_widths):
            raise ConfigError("neck widths must be even for the CSP split")
        # both constructors raise on bad values
        SwsaConfig(self.window, self.stride, self.heads)
        LossConfig(self.nwd_c, self.ratio, self.lam)


@dataclass
class PipelineParams:
    stem: ConvKernel
    stem_norm: NormParams
    blocks: List[wv.WtBlockParams]
    swsa: SwsaParams
    neck: nk.NeckParams


def init_params(cfg: PipelineConfig) -> PipelineParams:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    c0 = cfg.stem_channels
    stem = ConvKernel(rng.normal(0, np.sqrt(2.0 / (9 * cfg.in_channels)), (c0, cfg.in_channels, 3, 3)),
                      None, stride=2, padding=1)
    stem_norm = NormParams.identity(c0, 1e-5)
    blocks = []
    c_in = c0
    for c_out in cfg.backbone_widths:
        blocks.append(wv.init_wtconv_block(c_in, c_out, cfg.wavelet_levels, rng))
        c_in = c_out
    swsa = init_swsa(cfg.backbone_widths[-1], cfg.swsa, cfg.ffn_expansion, rng)
    neck = nk.init_neck(cfg.backbone_widths, cfg.neck_widths, cfg.elan_depth, rng)
    return PipelineParams(stem, stem_norm, blocks, swsa, neck)


def synthetic_input(cfg: PipelineConfig) -> np.ndarray:
    """Uniform noise in [0, 0.5) with one bright ``target_size`` square per image."""
    rng = np.random.default_rng([cfg.seed, 1])
    x = rng.uniform(0.0, 0.5, (cfg.batch, cfg.in_channels, cfg.height, cfg.width)).astype(DTYPE)
    k = min(cfg.target_size, cfg.height, cfg.width)
    for n in range(cfg.batch):
        y0 = int(rng.integers(0, cfg.height - k + 1))
        x0 = int(rng.integers(0, cfg.width - k + 1))
        x[n, :, y0 : y0 + k, x0 : x0 + k] = 1.0
    return x


def forward(x: np.ndarray, params: PipelineParams, cfg: PipelineConfig) -> Dict[str, np.ndarray]:
    """Return the named maps ``F2..F5``, ``F5'`` and ``P2..P5``."""
    x = as_tensor4(x, "input")
    h, w = x.shape[2:]
    m = 2 ** (1 + (NUM_BLOCKS - 1) + cfg.wavelet_levels + 1)
    if h % m or w % m or x.shape[1] != cfg.in_channels:
        raise ShapeError(
            f"input {tuple(x.shape)}: expected {cfg.in_channels} channels and height/width divisible by {m} "
            f"(wavelet decomposition with {cfg.wavelet_levels} levels in every block)"
        )
    t = relu(batch_norm_infer(conv2d(x, params.stem), params.stem_norm))
    maps = {}
    for level, block in zip(range(2, 6), params.blocks):
        t = wv.wtconv_block_forward(t, block)
        maps[f"F{level}"] = t
    maps["F5'"] = swsa_ifi_forward(maps["F5"], params.swsa, cfg.swsa)
    p5, p4, p3, p2 = nk.ecfrfn_forward(maps["F5'"], maps["F4"], maps["F3"], maps["F2"], params.neck)
    maps.update(P5=p5, P4=p4, P3=p3, P2=p2)
    return maps


def describe(params: PipelineParams, cfg: PipelineConfig, fused: Optional[bool] = None) -> List[Layer]:
    shape = (cfg.in_channels, cfg.height, cfg.width)
    stem = conv_layer(params.stem, shape, "stem")
    s = stem.out_shape
    layers = [stem, Layer("norm", "stem.bn", s), Layer("act", "stem.relu", s)]
    shapes = {}
    for level, block in zip(range(2, 6), params.blocks):
        bl = wv.wtconv_block_layers(block, s, f"block{level}")
        layers += bl
        s = bl[-1].out_shape
        shapes[level] = s
    layers += swsa_layers(params.swsa, cfg.swsa, shapes[5])
    layers += nk.neck_layers(params.neck, [shapes[5], shapes[4], shapes[3], shapes[2]], fused=fused)
    return layers


def complexity(params: PipelineParams, cfg: PipelineConfig) -> dict:
    unfused = count_params_flops(describe(params, cfg, fused=False))
    deployed = replace(params, neck=params.neck.fused())
    deploy = count_params_flops(describe(deployed, cfg, fused=True))
    return {
        "train_params": unfused[0],
        "train_flops": unfused[1],
        "deploy_params": deploy[0],
        "deploy_flops": deploy[1],
    }
