"""``wavedet`` command line.

Exit codes: 0 success, 1 property or evaluation failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager

import numpy as np

from . import boxloss as bl
from . import metrics as mt
from .checks import SUITES, run_suites
from .pipeline import ConfigError, PipelineConfig, complexity, forward, init_params, synthetic_input
from .tensor import ShapeError, read_t4f, write_t4f
from .wavelet import save_pyramid, wt_decompose

log = logging.getLogger("wavedet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@contextmanager
def atomic_open(path, mode="w"):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj):
    with atomic_open(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit(args, payload: dict):
    """Machine-readable line on stdout when --json is given, log line otherwise."""
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        log.info(" ".join(f"{k}={v}" for k, v in payload.items()))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    names = args.suite or None
    try:
        report = run_suites(names)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    failed = [r for r in report if not r["passed"]]
    summary = {"passed": len(report) - len(failed), "failed": len(failed), "properties": report}
    if args.out_dir:
        _write_json(os.path.join(args.out_dir, "check_report.json"), summary)
    print(json.dumps(summary, indent=None if args.json else 2, sort_keys=True))
    return EXIT_FAIL if failed else EXIT_OK


def _load_config(args) -> PipelineConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    for flag in ("height", "width", "levels"):
        value = getattr(args, flag, None)
        if value is not None:
            data["wavelet_levels" if flag == "levels" else flag] = value
    try:
        cfg = PipelineConfig.from_dict(data)
        cfg.validate()
    except (ConfigError, ValueError, TypeError) as exc:
        raise UsageError(f"config error: {exc}") from None
    return cfg


def _map_stats(x: np.ndarray) -> dict:
    return {
        "shape": list(x.shape),
        "min": float(x.min()),
        "max": float(x.max()),
        "mean": float(x.mean(dtype=np.float64)),
    }


def cmd_forward(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out_dir or "forward_out"
    if args.input:
        try:
            x = read_t4f(args.input)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read input tensor: {exc}") from None
        cfg.height, cfg.width = x.shape[2], x.shape[3]
        cfg.in_channels, cfg.batch = x.shape[1], x.shape[0]
        try:
            cfg.validate()
        except ConfigError as exc:
            raise UsageError(f"config error: {exc}") from None
    else:
        x = synthetic_input(cfg)
    params = init_params(cfg)
    try:
        maps = forward(x, params, cfg)
    except ShapeError as exc:
        raise UsageError(str(exc)) from None
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "maps": {}, "complexity": complexity(params, cfg)}
    for name, value in maps.items():
        fname = name.replace("'", "_prime") + ".t4f"
        write_t4f(os.path.join(out_dir, fname), value)
        stats = _map_stats(value)
        stats["file"] = fname
        stats["stride"] = cfg.height // value.shape[2]
        manifest["maps"][name] = stats
    if args.dump_pyramid:
        save_pyramid(wt_decompose(x, cfg.wavelet_levels), os.path.join(out_dir, "input_pyramid"))
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    for name in ("P2", "P3", "P4", "P5"):
        _emit(args, {"map": name, "shape": manifest["maps"][name]["shape"], "stride": manifest["maps"][name]["stride"]})
    return EXIT_OK


def _read_pairs(path):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append((bl.BBox.of(obj["pred"]), bl.BBox.of(obj["gt"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise UsageError(f"{path}:{lineno}: malformed pair ({exc})") from None
    return pairs


def cmd_loss(args) -> int:
    base = _load_config(args).loss if args.config else bl.LossConfig()
    try:
        cfg = bl.LossConfig(
            base.C if args.nwd_c is None else args.nwd_c,
            base.r if args.ratio is None else args.ratio,
            base.lam if args.lam is None else args.lam,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        pairs = _read_pairs(args.pairs)
    except OSError as exc:
        raise UsageError(f"cannot read pairs: {exc}") from None
    rows = []
    failed = False
    for pred, gt in pairs:
        row = bl.evaluate_pair(pred, gt, cfg)
        if args.grad_check:
            numeric = bl.finite_difference_grad(pred, gt, cfg)
            err, ok = bl.gradient_error(row["grad"], numeric)
            smooth = bl.differentiable_at(pred, gt, cfg)
            row["grad_check"] = {"numeric": [float(v) for v in numeric], "max_rel_err": err,
                                 "ok": ok, "differentiable": smooth}
            failed |= smooth and not ok
        rows.append(row)
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if args.output:
        with atomic_open(args.output) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_FAIL if failed else EXIT_OK


def _ordered_ids(*groups):
    seen = {}
    for records in groups:
        for r in records:
            seen.setdefault(r.image_id, None)
    return list(seen)


def _write_csv(path, header, rows):
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_eval(args) -> int:
    try:
        gts = mt.read_records(args.gt, prediction=False)
        preds = mt.read_records(args.pred, prediction=True)
    except OSError as exc:
        raise UsageError(f"cannot read records: {exc}") from None
    except mt.RecordFormatError as exc:
        raise UsageError(str(exc)) from None
    if args.subsample:
        keep = set(mt.subsample_frames(_ordered_ids(gts, preds), args.seed or 0, args.subsample))
        gts = [g for g in gts if g.image_id in keep]
        preds = [p for p in preds if p.image_id in keep]
    conf = args.conf
    if conf != "best-f1":
        try:
            conf = float(conf)
        except ValueError:
            raise UsageError(f"--conf must be a number or 'best-f1', got {args.conf!r}") from None
    summary = mt.evaluate(preds, gts, conf)
    out_dir = args.out_dir or "eval_out"
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "metrics.json"), summary)
    _write_csv(os.path.join(out_dir, "pr_curve.csv"), ["recall", "precision"], mt.pr_curve(preds, gts))
    _write_csv(os.path.join(out_dir, "f1_curve.csv"), ["confidence", "f1"],
               [(c, f1) for c, _, _, f1 in mt.f1_curve(preds, gts)])
    _emit(args, {k: summary[k] for k in ("precision", "recall", "f1", "mAP50", "mAP75", "mAP50_95")})
    return EXIT_OK


def cmd_subsample(args) -> int:
    try:
        with open(args.frames) as fh:
            frames = [line.strip() for line in fh if line.strip()]
    except OSError as exc:
        raise UsageError(f"cannot read frame list: {exc}") from None
    picked = mt.subsample_frames(frames, args.seed or 0, args.window)
    text = "".join(f + "\n" for f in picked)
    if args.out_dir:
        with atomic_open(os.path.join(args.out_dir, "frames.txt")) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="PRNG seed")
    parser.add_argument("--config", default=default, help="pipeline config JSON")
    parser.add_argument("--out-dir", default=default, help="directory for outputs")
    parser.add_argument("--json", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="machine-readable stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wavedet", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("check", cmd_check, "run invariant suites")
    p.add_argument("--suite", action="append", help=f"one of: {', '.join(SUITES)} (repeatable)")

    p = add("forward", cmd_forward, "run the feature pipeline and dump maps")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="input T4F tensor")
    src.add_argument("--synthetic", action="store_true", help="seeded synthetic input (default)")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--levels", type=int, help="wavelet levels per WTConv")
    p.add_argument("--dump-pyramid", action="store_true", help="also write the input's wavelet pyramid")

    p = add("loss", cmd_loss, "evaluate the hybrid box loss on JSONL pairs")
    p.add_argument("pairs", help='JSONL lines {"pred": [cx,cy,w,h], "gt": [cx,cy,w,h]}')
    p.add_argument("--lambda", dest="lam", type=float, help="blend weight (default 0.5)")
    p.add_argument("--ratio", type=float, help="inner-box ratio r (default 0.75)")
    p.add_argument("--nwd-c", type=float, help="NWD normalizer C (default 12.8)")
    p.add_argument("--grad-check", action="store_true", help="verify gradients by central differences")
    p.add_argument("--output", help="write JSONL here instead of stdout")

    p = add("eval", cmd_eval, "detection metrics and curves")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--conf", default="best-f1", help="fixed cutoff or 'best-f1'")
    p.add_argument("--subsample", type=int, metavar="N", help="keep one image per N consecutive ids")

    p = add("subsample", cmd_subsample, "pick one frame from every window of consecutive frames")
    p.add_argument("frames", help="text file, one frame id per line")
    p.add_argument("--window", type=int, default=5)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
