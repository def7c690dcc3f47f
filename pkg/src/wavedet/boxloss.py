"""Box regression losses on center-size boxes: IoU, CIoU, Inner-CIoU,
Gaussian-Wasserstein (NWD) and their blend, with analytic gradients with
respect to the predicted box ``(cx, cy, w, h)``.

All arithmetic is scalar float64.  The CIoU trade-off weight ``alpha`` is
treated as a constant when differentiating.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_V_FACTOR = 4.0 / math.pi**2


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box has non-finite coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def of(cls, seq: Sequence[float]) -> "BBox":
        cx, cy, w, h = (float(v) for v in seq)
        return cls(cx, cy, w, h)

    def as_tuple(self) -> tuple:
        return (self.cx, self.cy, self.w, self.h)

    def corners(self) -> tuple:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class GaussianBox:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class LossConfig:
    C: float = 12.8
    r: float = 0.75
    lam: float = 0.5

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("NWD normalizer C must be positive")
        if not self.r > 0:
            raise ValueError("inner-box ratio r must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("blend weight lambda must lie in [0, 1]")


@dataclass(frozen=True)
class CiouBreakdown:
    iou: float
    rho2: float
    c2: float
    v: float
    alpha: float
    loss: float


def _overlap(a_lo, a_hi, b_lo, b_hi):
    return max(0.0, min(a_hi, b_hi) - max(a_lo, b_lo))


def _corner_area(x1, y1, x2, y2) -> float:
    # from the same rounded corners as the overlap, so inter <= area holds exactly
    return (x2 - x1) * (y2 - y1)


def iou(a: BBox, b: BBox) -> float:
    ca, cb = a.corners(), b.corners()
    inter = _overlap(ca[0], ca[2], cb[0], cb[2]) * _overlap(ca[1], ca[3], cb[1], cb[3])
    return min(1.0, inter / (_corner_area(*ca) + _corner_area(*cb) - inter))


def _aspect_term(p: BBox, g: BBox) -> float:
    return _V_FACTOR * (math.atan(g.w / g.h) - math.atan(p.w / p.h)) ** 2


def _ciou(p: BBox, g: BBox, alpha: Optional[float] = None) -> CiouBreakdown:
    px1, py1, px2, py2 = p.corners()
    gx1, gy1, gx2, gy2 = g.corners()
    u = iou(p, g)
    rho2 = (p.cx - g.cx) ** 2 + (p.cy - g.cy) ** 2
    c2 = (max(px2, gx2) - min(px1, gx1)) ** 2 + (max(py2, gy2) - min(py1, gy1)) ** 2
    v = _aspect_term(p, g)
    if alpha is None:
        alpha = 0.0 if v == 0 else v / ((1.0 - u) + v)
    return CiouBreakdown(u, rho2, c2, v, alpha, 1.0 - u + rho2 / c2 + alpha * v)


def ciou_loss(p: BBox, g: BBox) -> CiouBreakdown:
    return _ciou(p, g)


def inner_box(b: BBox, r: float) -> BBox:
    if not r > 0:
        raise ValueError(f"inner-box ratio must be positive, got {r}")
    if r == 1:
        return b
    return BBox(b.cx, b.cy, r * b.w, r * b.h)


def inner_ciou_loss(p: BBox, g: BBox, r: float) -> CiouBreakdown:
    return ciou_loss(inner_box(p, r), inner_box(g, r))


def gaussian_of_box(b: BBox) -> GaussianBox:
    return GaussianBox(np.array([b.cx, b.cy]), np.diag([(b.w / 2) ** 2, (b.h / 2) ** 2]))


def wasserstein2_sq(a, b) -> float:
    """Squared 2-Wasserstein distance between two box Gaussians (or boxes)."""
    ga = a if isinstance(a, GaussianBox) else gaussian_of_box(a)
    gb = b if isinstance(b, GaussianBox) else gaussian_of_box(b)
    dmu = ga.mu - gb.mu
    # diagonal covariances: the matrix square root is elementwise
    droot = np.sqrt(np.diag(ga.sigma)) - np.sqrt(np.diag(gb.sigma))
    return float(dmu @ dmu + droot @ droot)


def nwd_loss(p: BBox, g: BBox, C: float) -> float:
    if not C > 0:
        raise ValueError("C must be positive")
    return -math.expm1(-math.sqrt(wasserstein2_sq(p, g)) / C)


def hybrid_value(p: BBox, g: BBox, cfg: LossConfig) -> float:
    inner = inner_ciou_loss(p, g, cfg.r).loss
    return cfg.lam * inner + (1.0 - cfg.lam) * nwd_loss(p, g, cfg.C)


# ---------------------------------------------------------------------------
# Analytic gradients
# ---------------------------------------------------------------------------


def _pick(p_wins: bool, tie: bool) -> float:
    """Weight of ``p`` in a max/min; coincident edges share it (symmetric subgradient)."""
    return 0.5 if tie else (1.0 if p_wins else 0.0)


def _interval_grad(p_lo, p_hi, g_lo, g_hi):
    """Overlap length and its derivative w.r.t. (p_lo, p_hi)."""
    length = min(p_hi, g_hi) - max(p_lo, g_lo)
    if length <= 0:
        return 0.0, 0.0, 0.0
    return length, -_pick(p_lo > g_lo, p_lo == g_lo), _pick(p_hi < g_hi, p_hi == g_hi)


def _span_grad(p_lo, p_hi, g_lo, g_hi):
    """Enclosing span length and its derivative w.r.t. (p_lo, p_hi)."""
    length = max(p_hi, g_hi) - min(p_lo, g_lo)
    return length, -_pick(p_lo < g_lo, p_lo == g_lo), _pick(p_hi > g_hi, p_hi == g_hi)


def _edges_to_box(d_lo, d_hi):
    """Chain (d/d lo, d/d hi) of an axis into (d/d center, d/d size)."""
    return d_lo + d_hi, 0.5 * (d_hi - d_lo)


def ciou_grad(p: BBox, g: BBox, alpha: Optional[float] = None) -> tuple[CiouBreakdown, np.ndarray]:
    """CIoU breakdown and d loss / d (cx, cy, w, h) of ``p`` with alpha held fixed."""
    br = _ciou(p, g, alpha)
    px1, py1, px2, py2 = p.corners()
    gx1, gy1, gx2, gy2 = g.corners()

    iw, diw_lo, diw_hi = _interval_grad(px1, px2, gx1, gx2)
    ih, dih_lo, dih_hi = _interval_grad(py1, py2, gy1, gy2)
    diw_c, diw_s = _edges_to_box(diw_lo, diw_hi)
    dih_c, dih_s = _edges_to_box(dih_lo, dih_hi)
    inter = iw * ih
    # d inter / d (cx, cy, w, h)
    d_inter = np.array([diw_c * ih, dih_c * iw, diw_s * ih, dih_s * iw])
    union = _corner_area(px1, py1, px2, py2) + _corner_area(gx1, gy1, gx2, gy2) - inter
    d_area = np.array([0.0, 0.0, p.h, p.w])
    d_union = d_area - d_inter
    d_iou = (d_inter * union - inter * d_union) / union**2

    d_rho2 = np.array([2 * (p.cx - g.cx), 2 * (p.cy - g.cy), 0.0, 0.0])
    cw, dcw_lo, dcw_hi = _span_grad(px1, px2, gx1, gx2)
    ch, dch_lo, dch_hi = _span_grad(py1, py2, gy1, gy2)
    dcw_c, dcw_s = _edges_to_box(dcw_lo, dcw_hi)
    dch_c, dch_s = _edges_to_box(dch_lo, dch_hi)
    d_c2 = np.array([2 * cw * dcw_c, 2 * ch * dch_c, 2 * cw * dcw_s, 2 * ch * dch_s])
    d_dist = d_rho2 / br.c2 - br.rho2 * d_c2 / br.c2**2

    delta = math.atan(g.w / g.h) - math.atan(p.w / p.h)
    denom = p.w**2 + p.h**2
    d_v = np.array([0.0, 0.0, -2 * _V_FACTOR * delta * p.h / denom, 2 * _V_FACTOR * delta * p.w / denom])

    return br, -d_iou + d_dist + br.alpha * d_v


def inner_ciou_grad(p: BBox, g: BBox, r: float) -> tuple[CiouBreakdown, np.ndarray]:
    br, grad = ciou_grad(inner_box(p, r), inner_box(g, r))
    return br, grad * np.array([1.0, 1.0, r, r])


def nwd_grad(p: BBox, g: BBox, C: float) -> tuple[float, np.ndarray]:
    """NWD loss and gradient; at zero distance the gradient is taken as zero."""
    w2 = wasserstein2_sq(p, g)
    dist = math.sqrt(w2)
    value = -math.expm1(-dist / C)
    if dist == 0:
        return value, np.zeros(4)
    d_w2 = np.array([2 * (p.cx - g.cx), 2 * (p.cy - g.cy), (p.w - g.w) / 2, (p.h - g.h) / 2])
    return value, math.exp(-dist / C) / C * d_w2 / (2 * dist)


def hybrid_box_loss(p: BBox, g: BBox, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    inner, d_inner = inner_ciou_grad(p, g, cfg.r)
    nwd, d_nwd = nwd_grad(p, g, cfg.C)
    loss = cfg.lam * inner.loss + (1.0 - cfg.lam) * nwd
    return loss, cfg.lam * d_inner + (1.0 - cfg.lam) * d_nwd


def evaluate_pair(p: BBox, g: BBox, cfg: LossConfig = LossConfig()) -> dict:
    """Everything the ``loss`` command reports for one pair."""
    loss, grad = hybrid_box_loss(p, g, cfg)
    return {
        "loss": loss,
        "iou": iou(p, g),
        "ciou": ciou_loss(p, g).loss,
        "inner_ciou": inner_ciou_loss(p, g, cfg.r).loss,
        "nwd": nwd_loss(p, g, cfg.C),
        "grad": [float(v) for v in grad],
    }


def finite_difference_grad(p: BBox, g: BBox, cfg: LossConfig = LossConfig(), step: float = 1e-5) -> np.ndarray:
    """Central differences of the hybrid loss in float64.

    The CIoU ``alpha`` of the unperturbed pair is frozen, matching the
    analytic gradient's convention.
    """
    alpha = ciou_loss(inner_box(p, cfg.r), inner_box(g, cfg.r)).alpha
    base = np.array(p.as_tuple(), dtype=np.float64)

    def f(vec):
        q = BBox.of(vec)
        inner = _ciou(inner_box(q, cfg.r), inner_box(g, cfg.r), alpha).loss
        return cfg.lam * inner + (1.0 - cfg.lam) * nwd_loss(q, g, cfg.C)

    grad = np.empty(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = step
        grad[i] = (f(base + e) - f(base - e)) / (2 * step)
    return grad


def differentiable_at(p: BBox, g: BBox, cfg: LossConfig = LossConfig()) -> bool:
    """False when an inner-box edge of ``p`` coincides with one of ``g``.

    There the overlap and enclosing spans have a kink; the analytic gradient
    returns the symmetric subgradient and a difference check is meaningless.
    """
    pc, gc = inner_box(p, cfg.r).corners(), inner_box(g, cfg.r).corners()
    return all(a != b for a, b in zip(pc, gc))


def gradient_error(analytic, numeric, rel_tol: float = 1e-4, abs_floor: float = 1e-7) -> tuple[float, bool]:
    """Worst ``|a - n| / max(|n|, abs_floor / rel_tol)`` and whether it is within ``rel_tol``."""
    analytic = np.asarray(analytic, np.float64)
    numeric = np.asarray(numeric, np.float64)
    scale = np.maximum(np.abs(numeric), abs_floor / rel_tol)
    err = float(np.max(np.abs(analytic - numeric) / scale))
    return err, err <= rel_tol
