"""Property suites run by ``wavedet check``.

Each property returns ``(measured, tolerance, passed)``; the runner adds the
suite and property names.  Trial counts are kept small enough that the whole
registry runs in a few seconds.
"""
from __future__ import annotations

import itertools
import math
import time
from typing import Callable, Dict, List

import numpy as np

from . import boxloss as bl
from . import metrics as mt
from . import neck as nk
from . import swsa as sw
from . import tensor as tc
from . import wavelet as wv

SUITES: Dict[str, Dict[str, Callable]] = {}


def prop(suite: str, name: str):
    def register(fn):
        SUITES.setdefault(suite, {})[name] = fn
        return fn

    return register


def _rng(seed=0):
    return np.random.default_rng(seed)


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64)))) if np.size(a) else 0.0


def _rel(a, b) -> float:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30))


# -- tensor ------------------------------------------------------------------


@prop("tensor", "conv_identity_kernel")
def _conv_identity():
    rng = _rng(1)
    worst = 0.0
    for k in (1, 3, 5):
        x = rng.standard_normal((2, 3, 7, 6)).astype(np.float32)
        w = np.zeros((3, 3, k, k), np.float32)
        w[np.arange(3), np.arange(3), k // 2, k // 2] = 1
        worst = max(worst, _max_abs(tc.conv2d(x, tc.ConvKernel(w, padding=k // 2)), x))
    return worst, 0.0, worst == 0.0


@prop("tensor", "conv_linearity")
def _conv_linear():
    rng = _rng(2)
    worst = 0.0
    for groups in (1, 2, 4):
        k = tc.ConvKernel(rng.standard_normal((4, 4 // groups, 3, 3)), None, stride=1, padding=1, groups=groups)
        x, y = rng.standard_normal((2, 1, 4, 8, 8)).astype(np.float32)
        a, b = 0.7, -1.3
        lhs = tc.conv2d(a * x + b * y, k)
        rhs = a * tc.conv2d(x, k) + b * tc.conv2d(y, k)
        worst = max(worst, _rel(lhs, rhs))
    return worst, 1e-5, worst <= 1e-5


@prop("tensor", "batch_norm_inverse")
def _bn_inverse():
    rng = _rng(3)
    x = rng.standard_normal((2, 5, 4, 4)).astype(np.float32)
    p = tc.NormParams(rng.uniform(0.5, 2, 5), rng.normal(size=5), rng.normal(size=5), rng.uniform(0.5, 2, 5), 1e-5)
    y = tc.batch_norm_infer(x, p).astype(np.float64)
    g, b, m, v = (np.asarray(a, np.float64)[None, :, None, None] for a in (p.gamma, p.beta, p.running_mean, p.running_var))
    back = (y - b) * np.sqrt(v + p.eps) / g + m
    err = _max_abs(back, x)
    return err, 1e-5, err <= 1e-5


@prop("tensor", "upsample_then_meanpool")
def _upsample_pool():
    x = _rng(4).standard_normal((1, 3, 5, 4)).astype(np.float32)
    u = tc.upsample_nearest2x(x)
    pooled = u.reshape(1, 3, 5, 2, 4, 2).mean(axis=(3, 5))
    err = _max_abs(pooled, x)
    return err, 0.0, err == 0.0


@prop("tensor", "concat_then_slice")
def _concat_slice():
    rng = _rng(5)
    parts = [rng.standard_normal((1, c, 3, 3)).astype(np.float32) for c in (2, 3, 1)]
    cat = tc.concat_channels(parts)
    err = max(_max_abs(cat[:, 0:2], parts[0]), _max_abs(cat[:, 2:5], parts[1]), _max_abs(cat[:, 5:6], parts[2]))
    return err, 0.0, err == 0.0


# -- wavelet -----------------------------------------------------------------


@prop("wavelet", "perfect_reconstruction")
def _perfect_recon(trials=200):
    rng = _rng(10)
    worst = 0.0
    for _ in range(trials):
        h, w = 2 * rng.integers(1, 17, 2)
        x = rng.standard_normal((1, int(rng.integers(1, 4)), h, w)).astype(np.float32)
        worst = max(worst, _max_abs(wv.haar_idwt2(wv.haar_dwt2(x)), x))
    return worst, 1e-6, worst <= 1e-6


@prop("wavelet", "energy_conservation")
def _energy(trials=200):
    rng = _rng(11)
    worst = 0.0
    for _ in range(trials):
        h, w = 2 * rng.integers(1, 17, 2)
        x = rng.standard_normal((1, 2, h, w)).astype(np.float32)
        e_in = float(np.sum(x.astype(np.float64) ** 2))
        e_out = sum(float(np.sum(b.astype(np.float64) ** 2)) for b in wv.haar_dwt2(x))
        worst = max(worst, abs(e_out - e_in) / e_in)
    return worst, 1e-4, worst <= 1e-4


@prop("wavelet", "decompose_linearity")
def _decompose_linear():
    rng = _rng(12)
    x, y = rng.standard_normal((2, 1, 2, 16, 16)).astype(np.float32)
    a, b = 1.5, -0.25
    lhs = wv.wt_decompose(a * x + b * y, 3)
    px, py = wv.wt_decompose(x, 3), wv.wt_decompose(y, 3)
    worst = 0.0
    for lz, lx, ly in zip(lhs.levels, px.levels, py.levels):
        for bz, bx, by in zip(lz, lx, ly):
            worst = max(worst, _rel(bz, a * bx + b * by))
    return worst, 1e-5, worst <= 1e-5


@prop("wavelet", "wtconv_linearity")
def _wtconv_linear():
    rng = _rng(13)
    p = wv.init_wtconv(3, 2, rng=rng)
    x, y = rng.standard_normal((2, 1, 3, 16, 16)).astype(np.float32)
    a, b = 0.5, 2.0
    err = _rel(wv.wtconv_forward(a * x + b * y, p), a * wv.wtconv_forward(x, p) + b * wv.wtconv_forward(y, p))
    return err, 1e-5, err <= 1e-5


@prop("wavelet", "wtconv_identity")
def _wtconv_identity():
    c = 3
    p = wv.WtConvParams([wv.identity_depthwise(4 * c)], [np.ones(4 * c, np.float32)], None)
    x = _rng(14).standard_normal((2, c, 8, 12)).astype(np.float32)
    err = _max_abs(wv.wtconv_forward(x, p), x)
    return err, 1e-6, err <= 1e-6


@prop("wavelet", "block_halves_dims")
def _block_halves():
    rng = _rng(15)
    x = rng.standard_normal((1, 4, 32, 32)).astype(np.float32)
    shapes = []
    for _ in range(2):
        x = wv.wtconv_block_forward(x, wv.init_wtconv_block(x.shape[1], levels=1, rng=rng))
        shapes.append(x.shape[2:])
    ok = shapes == [(16, 16), (8, 8)]
    return 0.0 if ok else 1.0, 0.0, ok


# -- swsa --------------------------------------------------------------------


@prop("swsa", "softmax_rows_sum_to_one")
def _softmax_rows():
    rng = _rng(20)
    cfg = sw.SwsaConfig(5, 3, 2)
    q, k = rng.standard_normal((2, 1, 4, 9, 11)).astype(np.float32)
    attn = sw.softmax_rows(sw.attention_logits(sw.window_partition(q, cfg), sw.window_partition(k, cfg), cfg,
                                               rng.standard_normal((2, 9, 9))))
    err = float(np.max(np.abs(attn.astype(np.float64).sum(-1) - 1)))
    return err, 1e-6, err <= 1e-6


@prop("swsa", "convex_hull_bound")
def _convex_hull(trials=20):
    rng = _rng(21)
    cfg = sw.SwsaConfig(4, 2, 2)
    worst = 0.0
    for _ in range(trials):
        q, k, v = rng.standard_normal((3, 1, 4, 7, 7)).astype(np.float32)
        out = sw.windowed_attention(q, k, v, cfg, None)
        lo = v.min(axis=(2, 3), keepdims=True)
        hi = v.max(axis=(2, 3), keepdims=True)
        worst = max(worst, float(np.max(lo - out)), float(np.max(out - hi)))
    return worst, 1e-6, worst <= 1e-6


@prop("swsa", "partition_merge_roundtrip")
def _roundtrip():
    cfg = sw.SwsaConfig(4, 4, 1)
    v = _rng(22).standard_normal((1, 3, 8, 12)).astype(np.float32)
    win = sw.window_partition(v, cfg)
    err = _max_abs(sw.window_merge(win.patches, win, cfg), v)
    ok = err == 0.0 and bool(np.all(win.coverage == 1))
    return err, 0.0, ok


@prop("swsa", "translation_equivariance")
def _translation():
    cfg = sw.SwsaConfig(4, 2, 1)
    x = _rng(23).standard_normal((1, 2, 12, 12)).astype(np.float32)
    shifted = np.zeros_like(x)
    shifted[:, :, :, 2:] = x[:, :, :, :-2]
    a = sw.window_partition(x, cfg).patches
    b = sw.window_partition(shifted, cfg).patches
    # window column j+1 of the shifted map equals column j of the original
    err = _max_abs(b[:, :, 1:-1], a[:, :, :-2])
    return err, 0.0, err == 0.0


@prop("swsa", "logit_scaling")
def _logit_scaling():
    cfg = sw.SwsaConfig(3, 2, 2)
    rng = _rng(24)
    q, k = rng.standard_normal((2, 1, 4, 6, 6)).astype(np.float32)
    kw = sw.window_partition(k, cfg)
    l1 = sw.attention_logits(sw.window_partition(q, cfg), kw, cfg)
    l2 = sw.attention_logits(sw.window_partition(2 * q, cfg), kw, cfg)
    finite = np.isfinite(l1)
    err = _max_abs(l2[finite], 2 * l1[finite])
    return err, 1e-5, err <= 1e-5


@prop("swsa", "determinism")
def _swsa_det():
    cfg = sw.SwsaConfig(3, 2, 2)
    rng = _rng(25)
    p = sw.init_swsa(4, cfg, rng=rng)
    x = rng.standard_normal((1, 4, 6, 6)).astype(np.float32)
    same = sw.swsa_ifi_forward(x, p, cfg).tobytes() == sw.swsa_ifi_forward(x, p, cfg).tobytes()
    return 0.0 if same else 1.0, 0.0, same


# -- neck --------------------------------------------------------------------


@prop("neck", "rep_fuse_equivalence")
def _rep_equiv(trials=50):
    rng = _rng(30)
    worst = 0.0
    for _ in range(trials):
        c = int(rng.integers(1, 6))
        b = nk.init_rep_branch(c, identity=bool(rng.integers(2)), rng=rng)
        x = rng.standard_normal((1, c, 6, 5)).astype(np.float32)
        worst = max(worst, _max_abs(nk.rep_forward_train(x, b), nk.rep_forward_fused(x, nk.rep_fuse(b))))
    return worst, 1e-5, worst <= 1e-5


@prop("neck", "fused_fewer_params")
def _fused_fewer():
    b = nk.rep_fuse(nk.init_rep_branch(8, rng=_rng(31)))
    train, fused = b.train_params(), b.fused.num_params()
    return float(fused - train), 0.0, fused < train


@prop("neck", "sba_gate_lipschitz")
def _sba_lipschitz():
    rng = _rng(32)
    p = nk.init_sba(4, 4, 4, 4, rng)
    hi, lo = rng.standard_normal((2, 1, 4, 6, 6)).astype(np.float32)
    base = nk.sba_forward(hi, lo, p).astype(np.float64)
    ratios = []
    for delta in (1e-1, 1e-2):
        q = nk.SbaParams(p.proj_hi, p.proj_lo,
                         tc.ConvKernel(p.gate_hi.weight, p.gate_hi.bias + delta), p.gate_lo, p.out_conv)
        ratios.append(float(np.max(np.abs(nk.sba_forward(hi, lo, q) - base))) / delta)
    # sigmoid slope <= 1/4; bound by a generous multiple of the data scale
    bound = 10.0 * (1 + float(np.max(np.abs(base))))
    worst = max(ratios)
    return worst, bound, worst <= bound


@prop("neck", "pyramid_strides")
def _pyramid_strides():
    rng = _rng(33)
    chans = (4, 4, 8, 8)
    feats = [rng.standard_normal((1, c, s, s)).astype(np.float32) for c, s in zip(chans, (16, 8, 4, 2))]
    p = nk.init_neck(chans, (4, 4, 8, 8), rng=rng)
    outs = nk.ecfrfn_forward(feats[3], feats[2], feats[1], feats[0], p)
    sizes = [o.shape[2] for o in outs]
    ok = len(outs) == 4 and sizes == [2, 4, 8, 16]
    return 0.0 if ok else 1.0, 0.0, ok


@prop("neck", "elan_both_halves_contribute")
def _elan_halves():
    rng = _rng(34)
    p = nk.init_elan(4, 4, hidden=4, rng=rng)
    x = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
    t = tc.conv2d(x, p.transition_in)

    def run(t):
        y2 = nk._run_blocks(t[:, 2:], p.rep_block_1)
        y3 = nk._run_blocks(y2, p.rep_block_2)
        return tc.conv2d(tc.concat_channels([t[:, :2], t[:, 2:], y2, y3]), p.transition_out)

    base = run(t)
    d1, d2 = t.copy(), t.copy()
    d1[:, :2] += 0.5
    d2[:, 2:] += 0.5
    m1, m2 = _max_abs(run(d1), base), _max_abs(run(d2), base)
    return min(m1, m2), 0.0, m1 > 0 and m2 > 0


# -- boxloss -----------------------------------------------------------------


def _random_box(rng, lo=-10, hi=10):
    return bl.BBox(*rng.uniform(lo, hi, 2), *rng.uniform(0.5, 8, 2))


@prop("boxloss", "iou_symmetry_and_invariance")
def _iou_props(trials=500):
    rng = _rng(40)
    worst = 0.0
    for _ in range(trials):
        a, b = _random_box(rng), _random_box(rng)
        u = bl.iou(a, b)
        t, s = rng.uniform(-5, 5, 2), rng.uniform(0.5, 3)
        a2 = bl.BBox(s * (a.cx + t[0]), s * (a.cy + t[1]), s * a.w, s * a.h)
        b2 = bl.BBox(s * (b.cx + t[0]), s * (b.cy + t[1]), s * b.w, s * b.h)
        bad = 0.0 if 0 <= u <= 1 else 1.0
        worst = max(worst, abs(u - bl.iou(b, a)), abs(u - bl.iou(a2, b2)), bad)
    return worst, 1e-9, worst <= 1e-9


@prop("boxloss", "ciou_nonnegative_and_concentric")
def _ciou_props(trials=500):
    rng = _rng(41)
    worst = 0.0
    for _ in range(trials):
        a, b = _random_box(rng), _random_box(rng)
        worst = max(worst, -bl.ciou_loss(a, b).loss)
        s = rng.uniform(0.3, 3)
        c = bl.BBox(a.cx, a.cy, s * a.w, s * a.h)
        worst = max(worst, abs(bl.ciou_loss(c, a).loss - (1 - bl.iou(c, a))))
    return worst, 1e-12, worst <= 1e-12


@prop("boxloss", "inner_ciou_r1_bit_identical")
def _inner_r1(trials=500):
    rng = _rng(42)
    bad = sum(bl.inner_ciou_loss(a, b, 1.0) != bl.ciou_loss(a, b)
              for a, b in ((_random_box(rng), _random_box(rng)) for _ in range(trials)))
    return float(bad), 0.0, bad == 0


@prop("boxloss", "nwd_range_monotone_translation")
def _nwd_props(trials=500):
    rng = _rng(43)
    ok = True
    for _ in range(trials):
        a, b = _random_box(rng), _random_box(rng)
        v = bl.nwd_loss(a, b, 12.8)
        ok &= 0 <= v < 1
        t = rng.uniform(-5, 5, 2)
        moved = bl.nwd_loss(bl.BBox(a.cx + t[0], a.cy + t[1], a.w, a.h), bl.BBox(b.cx + t[0], b.cy + t[1], b.w, b.h), 12.8)
        ok &= abs(moved - v) <= 1e-12
        u = rng.normal(size=2)
        u /= np.linalg.norm(u)
        dist = rng.uniform(0.1, 20)
        near = bl.BBox(a.cx + dist * u[0], a.cy + dist * u[1], b.w, b.h)
        far = bl.BBox(a.cx + 2 * dist * u[0], a.cy + 2 * dist * u[1], b.w, b.h)
        ok &= bl.nwd_loss(a, far, 12.8) > bl.nwd_loss(a, near, 12.8)
    return 0.0 if ok else 1.0, 0.0, bool(ok)


@prop("boxloss", "hybrid_lambda_affine")
def _affine(trials=300):
    rng = _rng(44)
    worst = 0.0
    for _ in range(trials):
        a, b = _random_box(rng), _random_box(rng)
        lam = float(rng.uniform())
        l1 = bl.hybrid_box_loss(a, b, bl.LossConfig(12.8, 0.75, 1.0))[0]
        l0 = bl.hybrid_box_loss(a, b, bl.LossConfig(12.8, 0.75, 0.0))[0]
        mid = bl.hybrid_box_loss(a, b, bl.LossConfig(12.8, 0.75, lam))[0]
        worst = max(worst, abs(mid - (lam * l1 + (1 - lam) * l0)))
    return worst, 1e-15, worst <= 1e-15


@prop("boxloss", "gradient_vs_central_differences")
def _grad_check(trials=200):
    rng = _rng(45)
    worst = 0.0
    for _ in range(trials):
        a, b = _random_box(rng), _random_box(rng)
        cfg = bl.LossConfig(float(rng.uniform(2, 20)), float(rng.uniform(0.5, 1.5)), float(rng.uniform()))
        err, _ = bl.gradient_error(bl.hybrid_box_loss(a, b, cfg)[1], bl.finite_difference_grad(a, b, cfg))
        worst = max(worst, err)
    return worst, 1e-4, worst <= 1e-4


@prop("boxloss", "small_shift_sensitivity")
def _small_shift():
    a = bl.BBox(10, 10, 4, 4)
    b = bl.BBox(11, 10, 4, 4)
    u = bl.iou(a, b)
    d_iou = 1 - u
    d_nwd = bl.nwd_loss(a, b, 12.8) - bl.nwd_loss(a, a, 12.8)
    return d_nwd / d_iou, 1.0, u < 0.78 and d_nwd < d_iou


# -- metrics -----------------------------------------------------------------


def _random_instance(rng, n_pred, n_gt):
    gts = [mt.DetectionRecord("img", bl.BBox(*rng.uniform(0, 6, 2), *rng.uniform(1, 4, 2))) for _ in range(n_gt)]
    preds = [mt.DetectionRecord("img", bl.BBox(*rng.uniform(0, 6, 2), *rng.uniform(1, 4, 2)),
                                score=float(rng.choice([0.2, 0.5, 0.9, rng.uniform()])))
             for _ in range(n_pred)]
    return preds, gts


def protocol_replay(preds, gts, thr):
    """Independent replay of the matching protocol: all qualifying pairs are
    ranked by (prediction rank, -IoU, GT index) and accepted in order."""
    ranks = {i: r for r, i in enumerate(sorted(range(len(preds)), key=lambda i: (-preds[i].score, i)))}
    pairs = []
    for i, j in itertools.product(range(len(preds)), range(len(gts))):
        if preds[i].image_id != gts[j].image_id:
            continue
        v = bl.iou(preds[i].box, gts[j].box)
        if v >= thr:
            pairs.append((ranks[i], -v, j, i))
    used_p, used_g = set(), set()
    for _, _, j, i in sorted(pairs):
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
    tp = len(used_p)
    return tp, len(preds) - tp, len(gts) - tp


@prop("metrics", "counts_consistent_and_replay")
def _match_replay(trials=400):
    rng = _rng(50)
    bad = 0
    for _ in range(trials):
        preds, gts = _random_instance(rng, int(rng.integers(0, 7)), int(rng.integers(0, 5)))
        thr = float(rng.choice(mt.IOU_THRESHOLDS))
        c = mt.match_greedy(preds, gts, thr).counts
        bad += (c.tp + c.fp != len(preds)) or (c.tp + c.fn != len(gts))
        bad += (c.tp, c.fp, c.fn) != protocol_replay(preds, gts, thr)
    return float(bad), 0.0, bad == 0


def max_matching(qualifies) -> int:
    """Largest one-to-one matching by exhaustive enumeration (small inputs only)."""
    n_p = len(qualifies)
    n_g = len(qualifies[0]) if n_p else 0
    best = 0
    if n_p >= n_g:
        for perm in itertools.permutations(range(n_p), n_g):
            best = max(best, sum(qualifies[i][j] for j, i in enumerate(perm)))
    else:
        for perm in itertools.permutations(range(n_g), n_p):
            best = max(best, sum(qualifies[i][j] for i, j in enumerate(perm)))
    return best


@prop("metrics", "greedy_bounded_by_max_matching")
def _max_matching(trials=300):
    rng = _rng(51)
    bad = 0
    for _ in range(trials):
        preds, gts = _random_instance(rng, int(rng.integers(0, 7)), int(rng.integers(0, 5)))
        thr = 0.3
        q = [[bl.iou(p.box, g.box) >= thr for g in gts] for p in preds]
        best = max_matching(q)
        tp = mt.match_greedy(preds, gts, thr).counts.tp
        bad += tp > best
        if all(sum(row) <= 1 for row in q):
            bad += tp != best
    return float(bad), 0.0, bad == 0


@prop("metrics", "ap_tie_permutation_invariance")
def _ap_perm():
    gts = [mt.DetectionRecord("a", bl.BBox(5 * k, 0, 2, 2)) for k in range(4)]
    preds = [mt.DetectionRecord("a", bl.BBox(5 * k + 0.1, 0, 2, 2), score=0.5) for k in range(3)]
    preds.append(mt.DetectionRecord("a", bl.BBox(50, 50, 2, 2), score=0.5))
    base = mt.average_precision(preds, gts, 0.5)
    worst = max(abs(mt.average_precision(list(p), gts, 0.5) - base) for p in itertools.permutations(preds))
    return worst, 0.0, worst == 0.0


@prop("metrics", "map5095_not_above_map50")
def _map_order(trials=100):
    rng = _rng(52)
    worst = -1.0
    for _ in range(trials):
        preds, gts = _random_instance(rng, int(rng.integers(0, 7)), int(rng.integers(1, 5)))
        m50, _, m5095 = mt.map_suite(preds, gts)
        worst = max(worst, m5095 - m50)
    return worst, 0.0, worst <= 0.0


@prop("metrics", "recall_monotone_in_cutoff")
def _recall_monotone(trials=50):
    rng = _rng(53)
    ok = True
    for _ in range(trials):
        preds, gts = _random_instance(rng, int(rng.integers(0, 7)), int(rng.integers(1, 5)))
        recalls = [r[2] for r in mt.f1_curve(preds, gts)]
        ok &= all(b <= a for a, b in zip(recalls, recalls[1:]))
    return 0.0 if ok else 1.0, 0.0, bool(ok)


# -- cli ---------------------------------------------------------------------


@prop("cli", "commands_deterministic")
def _cli_determinism():
    import json
    import os
    import tempfile

    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        pairs = os.path.join(tmp, "pairs.jsonl")
        with open(pairs, "w") as fh:
            fh.write(json.dumps({"pred": [1, 2, 3, 4], "gt": [1.5, 2, 3, 5]}) + "\n")
        outs = []
        for run in range(2):
            out = os.path.join(tmp, f"loss{run}.jsonl")
            main(["loss", pairs, "--output", out])
            cfg = os.path.join(tmp, "cfg.json")
            with open(cfg, "w") as fh:
                json.dump({"height": 128, "width": 128, "backbone_widths": [8, 8, 16, 16],
                           "neck_widths": [8, 8, 16, 16], "stem_channels": 8, "heads": 2}, fh)
            fdir = os.path.join(tmp, f"fwd{run}")
            main(["forward", "--config", cfg, "--synthetic", "--seed", "3", "--out-dir", fdir])
            blobs = [open(out, "rb").read()]
            for name in sorted(os.listdir(fdir)):
                with open(os.path.join(fdir, name), "rb") as fh:
                    blobs.append(fh.read())
            outs.append(blobs)
    same = outs[0] == outs[1]
    return 0.0 if same else 1.0, 0.0, same


def run_suites(names=None) -> List[dict]:
    names = list(SUITES) if not names else names
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}; available: {', '.join(SUITES)}")
    report = []
    for suite in names:
        for name, fn in SUITES[suite].items():
            start = time.perf_counter()
            try:
                measured, tol, passed = fn()
                error = None
            except Exception as exc:  # a crashing property is a failed property
                measured, tol, passed, error = math.nan, math.nan, False, f"{type(exc).__name__}: {exc}"
            entry = {
                "suite": suite,
                "property": name,
                "passed": bool(passed),
                "measured": float(measured),
                "tolerance": float(tol),
                "seconds": round(time.perf_counter() - start, 4),
            }
            if error:
                entry["error"] = error
            report.append(entry)
    return report
