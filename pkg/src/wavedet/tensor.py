"""Dense NCHW float32 tensor substrate.

Feature maps are plain ``numpy.ndarray`` objects of shape ``(n, c, h, w)`` and
dtype float32.  Everything here is a pure function of its inputs.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float32

T4F_MAGIC = b"T4F1"
_T4F_HEADER = struct.Struct("<4s4I")


class ShapeError(ValueError):
    """Raised when tensor or kernel shapes are inconsistent."""


def as_tensor4(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 4:
        raise ShapeError(f"{name}: expected 4 axes (n, c, h, w), got shape {arr.shape}")
    return arr


@dataclass
class ConvKernel:
    """Convolution weights ``(c_out, c_in_per_group, k_h, k_w)`` plus optional bias."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=DTYPE)
        if self.weight.ndim != 4:
            raise ShapeError(f"kernel weight must have 4 axes, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=DTYPE).reshape(-1)
            if self.bias.shape[0] != self.weight.shape[0]:
                raise ShapeError(
                    f"bias length {self.bias.shape[0]} != c_out {self.weight.shape[0]}"
                )
        if self.stride < 1 or self.groups < 1 or self.padding < 0:
            raise ValueError("stride and groups must be positive, padding nonnegative")
        if self.weight.shape[0] % self.groups:
            raise ShapeError(f"c_out {self.weight.shape[0]} not divisible by groups {self.groups}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def num_params(self) -> int:
        return self.weight.size + (0 if self.bias is None else self.bias.size)


@dataclass
class NormParams:
    """Inference-mode batch-norm statistics for ``c`` channels."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: Optional[np.ndarray]
    running_var: Optional[np.ndarray]
    eps: float = 1e-5

    @classmethod
    def identity(cls, c: int, eps: float = 0.0) -> "NormParams":
        return cls(np.ones(c, DTYPE), np.zeros(c, DTYPE), np.zeros(c, DTYPE), np.ones(c, DTYPE), eps)

    @property
    def channels(self) -> int:
        return np.asarray(self.gamma).shape[0]

    def folded(self) -> tuple[np.ndarray, np.ndarray]:
        """Return per-channel ``(scale, shift)`` with ``y = scale * x + shift``.

        Computed in float64 and rounded once to float32.
        """
        if self.running_mean is None or self.running_var is None:
            raise ValueError("norm is missing running statistics")
        gamma = np.asarray(self.gamma, np.float64)
        beta = np.asarray(self.beta, np.float64)
        mean = np.asarray(self.running_mean, np.float64)
        denom = np.asarray(self.running_var, np.float64) + self.eps
        if not (gamma.shape == beta.shape == mean.shape == denom.shape):
            raise ShapeError("norm parameter arrays have different lengths")
        if np.any(denom <= 0):
            raise ValueError("running_var + eps must be positive")
        scale = gamma / np.sqrt(denom)
        return scale, beta - mean * scale


def _out_dim(size: int, k: int, stride: int, pad: int, axis: str) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"{axis}: input {size} with kernel {k}, pad {pad}, stride {stride} gives empty output"
        )
    return out


def conv2d(x: np.ndarray, k: ConvKernel) -> np.ndarray:
    """Cross-correlation with zero padding.

    The tap loop is the outer loop and runs in fixed (row, col) order so the
    floating-point result is reproducible.
    """
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if c != k.c_in:
        raise ShapeError(f"channel axis: input has {c} channels, kernel expects {k.c_in}")
    kh, kw = k.kernel_size
    s, p, g = k.stride, k.padding, k.groups
    ho = _out_dim(h, kh, s, p, "height axis")
    wo = _out_dim(w, kw, s, p, "width axis")
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((n, k.c_out, ho, wo), dtype=DTYPE)
    weight = k.weight
    depthwise = g == c and weight.shape[1] == 1
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
            tap = weight[:, :, i, j]
            if depthwise:
                mult = k.c_out // c
                src = np.repeat(patch, mult, axis=1) if mult > 1 else patch
                out += src * tap[:, 0][None, :, None, None]
            elif g == 1:
                out += np.tensordot(tap, patch, axes=([1], [1])).transpose(1, 0, 2, 3)
            else:
                cpg, opg = c // g, k.c_out // g
                for gi in range(g):
                    sub = patch[:, gi * cpg : (gi + 1) * cpg]
                    t = tap[gi * opg : (gi + 1) * opg]
                    out[:, gi * opg : (gi + 1) * opg] += np.tensordot(
                        t, sub, axes=([1], [1])
                    ).transpose(1, 0, 2, 3)
    if k.bias is not None:
        out += k.bias[None, :, None, None]
    return out


def batch_norm_infer(x: np.ndarray, p: NormParams) -> np.ndarray:
    x = as_tensor4(x)
    if x.shape[1] != p.channels:
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, norm has {p.channels}")
    scale, shift = p.folded()
    return (x * scale.astype(DTYPE)[None, :, None, None] + shift.astype(DTYPE)[None, :, None, None]).astype(DTYPE)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, DTYPE), DTYPE(0))


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    x = np.asarray(x, DTYPE)
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(DTYPE)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(DTYPE)


def upsample_nearest2x(x: np.ndarray) -> np.ndarray:
    x = as_tensor4(x)
    return x.repeat(2, axis=2).repeat(2, axis=3)


def concat_channels(xs: Sequence[np.ndarray]) -> np.ndarray:
    xs = [as_tensor4(x, f"xs[{i}]") for i, x in enumerate(xs)]
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = xs[0].shape
    for i, x in enumerate(xs[1:], 1):
        if (x.shape[0], x.shape[2], x.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat: xs[{i}] has shape {x.shape}, incompatible with {ref}")
    return np.concatenate(xs, axis=1)


def _same_shape(a, b, op):
    a, b = as_tensor4(a, "a"), as_tensor4(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _same_shape(a, b, "add")
    return a + b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _same_shape(a, b, "hadamard")
    return a * b


# ---------------------------------------------------------------------------
# T4F file format
# ---------------------------------------------------------------------------


def write_t4f(path, x: np.ndarray) -> None:
    """Write ``x`` atomically (temp file in the target directory, then rename)."""
    x = as_tensor4(x)
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_T4F_HEADER.pack(T4F_MAGIC, *x.shape))
            fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_t4f(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _T4F_HEADER.size:
        raise ValueError(f"{path}: truncated T4F header")
    magic, n, c, h, w = _T4F_HEADER.unpack_from(raw)
    if magic != T4F_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {T4F_MAGIC!r}")
    count = n * c * h * w
    body = raw[_T4F_HEADER.size :]
    if len(body) != 4 * count:
        raise ValueError(f"{path}: expected {count} float32 values, found {len(body) // 4}")
    arr = np.frombuffer(body, dtype="<f4").astype(DTYPE).reshape(n, c, h, w)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: tensor contains NaN or Inf")
    return arr


# ---------------------------------------------------------------------------
# Parameter / FLOP accounting
# ---------------------------------------------------------------------------

COUNTING_CONVENTION = (
    "params: conv weights + biases, norm gamma/beta (running statistics are buffers "
    "and are not counted), per-channel scales, attention position tables. "
    "flops: 2 per multiply-accumulate for convolutions and matmuls (bias adds not "
    "counted); 2 per element for inference norms and affine maps (multiply + add); "
    "1 per element for activations, adds, products and per-channel scalings; "
    "softmax counted as 3 per logit."
)


@dataclass(frozen=True)
class Layer:
    """One entry of a pipeline description used by :func:`count_params_flops`.

    ``in_shape`` is ``(c, h, w)`` of the layer input.  Supported kinds:

    ``conv``
        needs ``kernel=(c_out, c_in_per_group, kh, kw)``, ``stride``,
        ``padding``, ``bias``.
    ``fixed_conv``
        like ``conv`` but the weights are constants (Haar filters); no params.
    ``norm``, ``affine``, ``scale``, ``act``, ``add``, ``mul``, ``softmax``
        elementwise over ``in_shape``.
    ``matmul``
        ``macs`` given explicitly.
    """

    kind: str
    name: str = ""
    in_shape: Optional[tuple] = None
    kernel: Optional[tuple] = None
    stride: int = 1
    padding: int = 0
    bias: bool = False
    macs: int = 0
    params: int = 0
    extra: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def out_shape(self) -> tuple:
        if self.in_shape is None:
            raise ShapeError(f"layer {self.name or self.kind!r} has no input shape")
        if self.kind in ("conv", "fixed_conv"):
            c_out, _, kh, kw = self.kernel
            _, h, w = self.in_shape
            return (
                c_out,
                _out_dim(h, kh, self.stride, self.padding, "height axis"),
                _out_dim(w, kw, self.stride, self.padding, "width axis"),
            )
        return self.in_shape


_ELEMENTWISE_FLOPS = {"norm": 2, "affine": 2, "scale": 1, "act": 1, "add": 1, "mul": 1, "softmax": 3}


def layer_cost(layer: Layer) -> tuple[int, int]:
    if layer.in_shape is None:
        raise ShapeError(f"layer {layer.name or layer.kind!r} is unshaped")
    c, h, w = layer.in_shape
    if layer.kind in ("conv", "fixed_conv"):
        if layer.kernel is None:
            raise ShapeError(f"layer {layer.name!r}: conv without kernel shape")
        c_out, cpg, kh, kw = layer.kernel
        _, ho, wo = layer.out_shape
        macs = c_out * ho * wo * cpg * kh * kw
        params = 0
        if layer.kind == "conv":
            params = c_out * cpg * kh * kw + (c_out if layer.bias else 0)
        return params + layer.params, 2 * macs
    if layer.kind in _ELEMENTWISE_FLOPS:
        params = layer.params
        if layer.kind == "norm":
            params += 2 * c
        elif layer.kind == "affine":
            params += 2 * c
        elif layer.kind == "scale":
            params += c
        return params, _ELEMENTWISE_FLOPS[layer.kind] * c * h * w
    if layer.kind == "matmul":
        return layer.params, 2 * layer.macs
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def count_params_flops(layers: Iterable[Layer]) -> tuple[int, int]:
    """Sum parameters and FLOPs over a pipeline description.

    See :data:`COUNTING_CONVENTION` for what is counted.
    """
    params = flops = 0
    for layer in layers:
        p, f = layer_cost(layer)
        params += p
        flops += f
    return params, flops


def conv_layer(k: ConvKernel, in_shape: tuple, name: str = "") -> Layer:
    return Layer(
        "conv",
        name,
        tuple(in_shape),
        kernel=tuple(k.weight.shape),
        stride=k.stride,
        padding=k.padding,
        bias=k.bias is not None,
    )
