"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line (also
collected into the terminal summary) before asserting."""
import itertools
import json
import time

import numpy as np

from wavedet import boxloss as bl
from wavedet import metrics as mt
from wavedet.checks import protocol_replay
from wavedet.cli import main
from wavedet.neck import elan_layers, fuse_elan, init_elan, init_rep_branch, rep_forward_fused, rep_forward_train, rep_fuse, rep_layers
from wavedet.swsa import SwsaConfig, attention_logits, softmax_rows, window_partition, windowed_attention, _tokens
from wavedet.tensor import count_params_flops
from wavedet.wavelet import WtConvParams, haar_dwt2, haar_idwt2, identity_depthwise, init_wtconv_block, wtconv_block_layers, wtconv_forward

from oracles import central_difference


def test_criterion_01_perfect_reconstruction(verdict):
    rng = np.random.default_rng(1)
    worst_err = worst_energy = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), 2 * int(rng.integers(1, 17)), 2 * int(rng.integers(1, 17)))
        x = rng.normal(size=shape).astype(np.float32)
        bands = haar_dwt2(x)
        worst_err = max(worst_err, float(np.max(np.abs(haar_idwt2(bands) - x))))
        e_in = float(np.sum(x.astype(np.float64) ** 2))
        e_out = sum(float(np.sum(b.astype(np.float64) ** 2)) for b in bands)
        worst_energy = max(worst_energy, abs(e_out - e_in) / e_in)
    elapsed = time.perf_counter() - start
    ok = worst_err <= 1e-6 and worst_energy <= 1e-4 and elapsed < 10
    verdict(1, "wavelet perfect reconstruction",
            ok, f"max_abs={worst_err:.2e} energy_rel={worst_energy:.2e} time={elapsed:.2f}s")
    assert ok


def test_criterion_02_wtconv_identity(verdict):
    rng = np.random.default_rng(2)
    c = 3
    p = WtConvParams([identity_depthwise(4 * c)], [np.ones(4 * c, np.float32)], None)
    x = rng.normal(size=(2, c, 16, 12)).astype(np.float32)
    err = float(np.max(np.abs(wtconv_forward(x, p) - x)))
    ok = err <= 1e-6
    verdict(2, "WTConv identity case", ok, f"max_abs={err:.2e}")
    assert ok


def test_criterion_03_reparameterization(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    smaller = True
    for _ in range(200):
        c_in = int(rng.integers(1, 7))
        c_out = int(rng.choice([c_in, int(rng.integers(1, 7))]))
        b = init_rep_branch(c_in, c_out, rng=rng)
        f = rep_fuse(b)
        x = rng.normal(size=(1, c_in, int(rng.integers(3, 10)), int(rng.integers(3, 10)))).astype(np.float32)
        worst = max(worst, float(np.max(np.abs(rep_forward_fused(x, f) - rep_forward_train(x, b)))))
        shape = (c_in, 8, 8)
        smaller &= count_params_flops(rep_layers(f, shape, fused=True))[0] < count_params_flops(rep_layers(b, shape, fused=False))[0]
        smaller &= f.fused.num_params() < b.train_params()
    ok = worst <= 1e-5 and smaller
    verdict(3, "re-parameterization equivalence", ok, f"max_abs={worst:.2e} fused_smaller={smaller}")
    assert ok


def _random_box(rng):
    return bl.BBox(*rng.uniform(-20, 20, 2), *rng.uniform(0.1, 20, 2))


def test_criterion_04_loss_identities(verdict):
    rng = np.random.default_rng(4)
    r1_equal = affine_exact = self_zero = in_range = True
    for _ in range(10000):
        p, g = _random_box(rng), _random_box(rng)
        c = float(rng.uniform(1, 30))
        nwd = bl.nwd_loss(p, g, c)
        in_range &= 0.0 <= nwd < 1.0
        self_zero &= bl.nwd_loss(p, p, c) == 0.0
    for _ in range(2000):
        p, g = _random_box(rng), _random_box(rng)
        r1_equal &= bl.inner_ciou_loss(p, g, 1.0).loss == bl.ciou_loss(p, g).loss
        lam = float(rng.uniform())
        cfg = dict(C=float(rng.uniform(1, 30)), r=float(rng.uniform(0.5, 1.5)))
        whole = bl.hybrid_value(p, g, bl.LossConfig(lam=lam, **cfg))
        ends = lam * bl.hybrid_value(p, g, bl.LossConfig(lam=1.0, **cfg)) + (1 - lam) * bl.hybrid_value(p, g, bl.LossConfig(lam=0.0, **cfg))
        affine_exact &= whole == ends
    ok = r1_equal and affine_exact and self_zero and in_range
    verdict(4, "loss identities", ok,
            f"r1_bit_equal={r1_equal} lambda_affine={affine_exact} nwd_self_zero={self_zero} nwd_in_[0,1)={in_range}")
    assert ok


def test_criterion_05_gradient_oracle(verdict):
    rng = np.random.default_rng(5)
    cases = []
    for _ in range(500):
        cfg = bl.LossConfig(float(rng.uniform(2, 20)), float(rng.uniform(0.5, 1.5)), float(rng.uniform()))
        cases.append((_random_box(rng), _random_box(rng), cfg))
    start = time.perf_counter()
    analytic = [bl.hybrid_box_loss(p, g, cfg)[1] for p, g, cfg in cases]
    numeric = [central_difference(p.as_tuple(), g.as_tuple(), cfg.C, cfg.r, cfg.lam) for p, g, cfg in cases]
    elapsed = time.perf_counter() - start
    worst = max(bl.gradient_error(a, n, rel_tol=1e-4, abs_floor=1e-7)[0] for a, n in zip(analytic, numeric))
    ok = worst <= 1e-4 and elapsed < 5
    verdict(5, "gradient oracle", ok, f"max_rel_err={worst:.2e} time={elapsed:.2f}s")
    assert ok


def test_criterion_06_hand_values(verdict):
    u = bl.iou(bl.BBox(0, 0, 2, 2), bl.BBox(1, 0, 2, 2))
    w2 = bl.wasserstein2_sq(bl.BBox(0, 0, 2, 2), bl.BBox(0, 0, 4, 4))
    bands = haar_dwt2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    haar = tuple(float(b.item()) for b in bands)
    ok = abs(u - 1 / 3) <= 1e-7 and w2 == 2.0 and haar == (5.0, -1.0, -2.0, 0.0)
    verdict(6, "hand-checkable values", ok, f"iou={u!r} w2={w2!r} haar={haar}")
    assert ok


def test_criterion_07_attention_invariants(verdict):
    rng = np.random.default_rng(7)
    worst_sum = 0.0
    hull_ok = True
    for _ in range(100):
        win = int(rng.integers(2, 6))
        s = int(rng.integers(1, win + 1))
        heads = int(rng.choice([1, 2]))
        cfg = SwsaConfig(win, s, heads)
        shape = (1, 2 * heads, int(rng.integers(1, 12)), int(rng.integers(1, 12)))
        q, k, v = (rng.normal(size=shape).astype(np.float32) * 3 for _ in range(3))
        qw, kw, vw = (window_partition(t, cfg) for t in (q, k, v))
        a = softmax_rows(attention_logits(qw, kw, cfg, None))
        worst_sum = max(worst_sum, float(np.max(np.abs(a.sum(-1) - 1))))
        out = np.matmul(a, _tokens(vw.patches, heads))  # (n, ny, nx, heads, T, d)
        vt = _tokens(vw.patches, heads)
        valid = vw.valid.reshape(vw.valid.shape[0], vw.valid.shape[1], 1, -1, 1)
        lo = np.where(valid, vt, np.inf).min(axis=-2, keepdims=True)
        hi = np.where(valid, vt, -np.inf).max(axis=-2, keepdims=True)
        hull_ok &= bool(np.all(out >= lo - 1e-5) and np.all(out <= hi + 1e-5))
    q, k, v = (rng.normal(size=(1, 4, 6, 5)).astype(np.float32) for _ in range(3))
    w1_exact = np.array_equal(windowed_attention(q, k, v, SwsaConfig(1, 1, 2)), v)
    ok = worst_sum <= 1e-6 and w1_exact and hull_ok
    verdict(7, "attention invariants", ok, f"row_sum_err={worst_sum:.1e} w1_returns_V={w1_exact} convex_hull={hull_ok}")
    assert ok


def test_criterion_08_pipeline_shapes(verdict, tmp_path):
    runs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["forward", "--synthetic", "--height", "256", "--width", "256", "--seed", "0",
                   "--out-dir", str(d)]) for d in runs]
    manifest = json.loads((runs[0] / "manifest.json").read_text())
    strides = {n: manifest["maps"][n]["stride"] for n in ("P2", "P3", "P4", "P5")}
    dims = {n: manifest["maps"][n]["shape"][2:] for n in strides}
    files = sorted(p.name for p in runs[0].iterdir())
    identical = files == sorted(p.name for p in runs[1].iterdir()) and all(
        (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes() for f in files)
    ok = (codes == [0, 0] and strides == {"P2": 4, "P3": 8, "P4": 16, "P5": 32}
          and dims == {"P2": [64, 64], "P3": [32, 32], "P4": [16, 16], "P5": [8, 8]} and identical)
    verdict(8, "pipeline shapes", ok, f"strides={list(strides.values())} byte_identical={identical}")
    assert ok


def test_criterion_09_metrics_oracle(verdict):
    gt = mt.DetectionRecord("a", bl.BBox(5, 5, 10, 10))
    pred = mt.DetectionRecord("a", bl.BBox(7, 5, 6, 10), score=0.9)
    fixture = mt.map_suite([pred], [gt])
    rng = np.random.default_rng(9)
    mismatches = total = 0
    for n_pred, n_gt in itertools.product(range(7), range(5)):
        for _ in range(40):
            gts = [mt.DetectionRecord(str(rng.integers(2)), bl.BBox(*rng.uniform(0, 6, 2), *rng.uniform(1, 4, 2)))
                   for _ in range(n_gt)]
            preds = [mt.DetectionRecord(str(rng.integers(2)), bl.BBox(*rng.uniform(0, 6, 2), *rng.uniform(1, 4, 2)),
                                        score=float(rng.choice([0.3, 0.7, rng.uniform()]))) for _ in range(n_pred)]
            for thr in mt.IOU_THRESHOLDS:
                c = mt.match_greedy(preds, gts, thr).counts
                mismatches += (c.tp, c.fp, c.fn) != protocol_replay(preds, gts, thr)
                total += 1
    ok = fixture == (1.0, 0.0, 0.3) and mismatches == 0
    verdict(9, "metrics oracle", ok, f"fixture={fixture} replay_mismatches={mismatches}/{total}")
    assert ok


def test_criterion_10_parameter_accounting(verdict):
    rng = np.random.default_rng(10)
    # WTConv block, 2 -> 4 channels, one wavelet level, input (2, 8, 8).
    # params
    #   stage 1: conv3x3 2*2*9=36, bn 4, level dw5x5 over 8 ch 8*25=200, scales 8,
    #            base dw5x5 2*25=50, bn 4                                  -> 302
    #   stage 2: conv3x3 s2 4*2*9=72, bn 8, dw5x5 16*25=400, scales 16,
    #            base 4*25=100, bn 8                                       -> 604
    #   shortcut 1x1 s2 4*2=8, bn 8                                        -> 16
    #   total 922
    # flops (2 per MAC, 2/elem norm, 1/elem scale/add/relu)
    #   stage 1 at 8x8: conv 2*(2*64*2*9)=4608, bn 256, relu 128,
    #       haar analysis 2*(8*16*4)=1024, dw 2*(8*16*25)=6400, scale 128,
    #       synthesis 1024, base 2*(2*64*25)=6400, base add 128, bn 256,
    #       residual add 128, relu 128                                     -> 20608
    #   stage 2 at 4x4: conv 2*(4*16*2*9)=2304, bn 128, relu 64,
    #       analysis 2*(16*4*4)=512, dw 2*(16*4*25)=3200, scale 64, synthesis 512,
    #       base 2*(4*16*25)=3200, base add 64, bn 128                     -> 10176
    #   shortcut 2*(4*16*2)=256, bn 128, add 64, relu 64                   -> 512
    #   total 31296
    block = init_wtconv_block(2, 4, levels=1, rng=rng)
    block_count = count_params_flops(wtconv_block_layers(block, (2, 8, 8)))
    arrays = [block.shortcut.weight]
    for st in (block.stage1, block.stage2):
        arrays += [st.conv.weight, st.wtconv.base_kernel.weight, *[k.weight for k in st.wtconv.level_kernels],
                   *st.wtconv.level_scales, st.norm1.gamma, st.norm1.beta, st.norm2.gamma, st.norm2.beta]
    arrays += [block.shortcut_norm.gamma, block.shortcut_norm.beta]
    learnable = sum(np.asarray(a).size for a in arrays)

    # ELAN 4 -> 4, hidden 4 (split 2 + 2), one bottleneck per rep block, input (4, 6, 6).
    #   transition_in 1x1 4->4 + bias: 20 params, 2*(4*36*4)=1152 flops
    #   each unfused rep block (2 ch, identity branch): conv3x3 36, conv1x1 4,
    #       three norms 3*4 -> 52 params; flops 2*(2*36*2*9)=2592 + 2*(2*36*2)=288
    #       + norms 3*144 + two adds 2*72 + relu 72 -> 3528
    #   each fused rep block: 3x3 with bias 36+2=38 params; 2592 + relu 72 -> 2664
    #   transition_out 1x1 8->4 + bias: 36 params, 2*(4*36*8)=2304 flops
    #   unfused: 20+2*52+36=160 params, 1152+2*3528+2304=10512 flops
    #   fused:   20+2*38+36=132 params, 1152+2*2664+2304=8784 flops
    elan = init_elan(4, 4, hidden=4, depth=1, rng=rng)
    unfused = count_params_flops(elan_layers(elan, (4, 6, 6), fused=False))
    fused = count_params_flops(elan_layers(fuse_elan(elan), (4, 6, 6), fused=True))

    ok = (block_count == (922, 31296) and learnable == 922
          and unfused == (160, 10512) and fused == (132, 8784))
    verdict(10, "parameter accounting", ok,
            f"block={block_count} learnable={learnable} elan_unfused={unfused} elan_fused={fused}")
    assert ok
