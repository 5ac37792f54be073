"""Command-line interface.

    lantnet synth       DIR                    write i1.pgm, i2.pgm, truth.pgm
    lantnet preclassify I1 I2 OUT              pseudo-label map (0 / 128 / 255)
    lantnet detect      I1 I2 OUT [--truth T]  full pipeline -> change map
    lantnet predict     I1 I2 OUT --checkpoint C
    lantnet eval        PRED TRUTH
    lantnet sweep       I1 I2 TRUTH [--r-list 5,7,...]

Exit status: 0 success, 1 internal or numeric failure, 2 usage / validation error.
Results go to stdout (JSON lines or a tab-separated table); progress goes to stderr.
The default seed (0) can be changed with LANTNET_SEED; an explicit --seed wins.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .diff_image import log_ratio
from .metrics import evaluate
from .model import load_checkpoint, predict_map, save_checkpoint
from .patches import PatchConfig
from .pipeline import SWEEP_RS, DetectConfig, detect
from .preclassify import PreclassificationError, hierarchical_fcm
from .raster_io import read_change_map, read_pgm, write_change_map, write_pgm
from .synth import SceneSpec, generate
from .tensor import NumericError

log = logging.getLogger("lantnet")

SEED_ENV = "LANTNET_SEED"
EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def _r_list(text: str) -> list[int]:
    try:
        rs = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not rs:
        raise argparse.ArgumentTypeError("empty R list")
    return rs


def _add_train_flags(p: argparse.ArgumentParser, with_r: bool = True) -> None:
    if with_r:
        p.add_argument("--r", type=int, default=7, help="patch size R (odd, default 7)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=128, help="mini-batch size")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=0.1, help="CE weight")
    p.add_argument("--beta", type=float, default=0.9, help="MAE weight")
    p.add_argument("--seed", type=int, default=None, help=f"run seed (default 0, or ${SEED_ENV})")
    p.add_argument("--max-per-class", type=int, default=20000)
    p.add_argument("--flip-rate", type=float, default=0.0, help="fraction of training labels to flip")
    p.add_argument("--no-attention", action="store_true", help="skip the layer-attention block (Y = X)")
    p.add_argument("--ce-only", action="store_true", help="plain cross entropy (alpha=1, beta=0)")


def _detect_config(args, r: int | None = None) -> DetectConfig:
    alpha, beta = (1.0, 0.0) if args.ce_only else (args.alpha, args.beta)
    cfg = DetectConfig(
        r=args.r if r is None else r,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        alpha=alpha,
        beta=beta,
        seed=_seed(args),
        max_per_class=args.max_per_class,
        flip_rate=args.flip_rate,
        attention=not args.no_attention,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _read_pair(args):
    i1, i2 = read_pgm(args.i1), read_pgm(args.i2)
    if i1.shape != i2.shape:
        raise UsageError(f"image size mismatch: {i1.width}x{i1.height} vs {i2.width}x{i2.height}")
    return i1, i2


def _emit_report(rep) -> None:
    print(rep.as_text(), file=sys.stderr)
    print(rep.as_record())


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec = SceneSpec(
        width=args.width,
        height=args.height,
        n_shapes=args.shapes,
        background_level=args.background,
        change_level=args.change,
        speckle_looks=args.looks,
        seed=_seed(args),
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    i1, i2, truth = generate(spec)
    write_pgm(i1, out / "i1.pgm")
    write_pgm(i2, out / "i2.pgm")
    write_change_map(truth, out / "truth.pgm")
    print(json.dumps({"i1": str(out / "i1.pgm"), "i2": str(out / "i2.pgm"), "truth": str(out / "truth.pgm"),
                      "changed_pixels": int(truth.labels.sum())}))
    return EXIT_OK


def cmd_preclassify(args) -> int:
    i1, i2 = _read_pair(args)
    di = log_ratio(i1, i2)
    labels = hierarchical_fcm(di)
    write_pgm(labels.to_raster(), args.out)
    if args.di:
        write_pgm(di, args.di)
    print(json.dumps(labels.counts()))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _detect_config(args)
    i1, i2 = _read_pair(args)
    truth = read_change_map(args.truth) if args.truth else None
    if truth is not None and truth.shape != i1.shape:
        raise UsageError(f"ground truth is {truth.width}x{truth.height}, images are {i1.width}x{i1.height}")
    res = detect(i1, i2, cfg)
    write_change_map(res.change_map, args.out)
    if args.checkpoint:
        save_checkpoint(args.checkpoint, res.params, res.train_config)
    if args.dump_labels:
        write_pgm(res.pseudo_labels.to_raster(), args.dump_labels)
    log.info("done in %.1f s, %d training samples, final loss %.5f", res.seconds, res.n_train, res.loss_trace[-1])
    if truth is not None:
        _emit_report(evaluate(res.change_map, truth))
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        PatchConfig(args.r)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    i1, i2 = _read_pair(args)
    params, tcfg = load_checkpoint(args.checkpoint, r=args.r)
    attention = tcfg.attention if tcfg is not None else True
    cmap = predict_map(params, i1, i2, log_ratio(i1, i2), args.r, attention=attention)
    write_change_map(cmap, args.out)
    if args.truth:
        _emit_report(evaluate(cmap, read_change_map(args.truth)))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, truth = read_change_map(args.pred), read_change_map(args.truth)
    if pred.shape != truth.shape:
        raise UsageError(f"map size mismatch: {pred.width}x{pred.height} vs {truth.width}x{truth.height}")
    _emit_report(evaluate(pred, truth))
    return EXIT_OK


def cmd_sweep(args) -> int:
    bad = [r for r in args.r_list if r % 2 == 0 or not 5 <= r <= 15]
    if bad:
        raise UsageError(f"sweep R values must be odd and in [5, 15], got {bad}")
    cfgs = [_detect_config(args, r) for r in args.r_list]
    i1, i2 = _read_pair(args)
    truth = read_change_map(args.truth)
    if truth.shape != i1.shape:
        raise UsageError(f"ground truth is {truth.width}x{truth.height}, images are {i1.width}x{i1.height}")
    print("R\tPCC")
    for cfg in cfgs:
        rep = evaluate(detect(i1, i2, cfg).change_map, truth)
        log.info("R=%d PCC=%.2f KC=%.2f", cfg.r, rep.pcc, rep.kc)
        print(f"{cfg.r}\t{rep.pcc:.4f}", flush=True)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lantnet", description="Unsupervised SAR change detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic image pair with ground truth")
    p.add_argument("out_dir")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--shapes", type=int, default=4)
    p.add_argument("--background", type=float, default=60.0)
    p.add_argument("--change", type=float, default=180.0)
    p.add_argument("--looks", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preclassify", help="hierarchical FCM pseudo-labels as a PGM")
    p.add_argument("i1")
    p.add_argument("i2")
    p.add_argument("out")
    p.add_argument("--di", help="also write the difference image here")
    p.set_defaults(func=cmd_preclassify)

    p = sub.add_parser("detect", help="run the full pipeline and write a change map")
    p.add_argument("i1")
    p.add_argument("i2")
    p.add_argument("out")
    p.add_argument("--truth", help="ground-truth PGM; prints an evaluation report")
    p.add_argument("--checkpoint", help="save the trained model here")
    p.add_argument("--dump-labels", help="write the pseudo-label map (0/128/255) here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("predict", help="classify with a saved checkpoint")
    p.add_argument("i1")
    p.add_argument("i2")
    p.add_argument("out")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--r", type=int, default=7)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="compare a change map against ground truth")
    p.add_argument("pred")
    p.add_argument("truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="PCC as a function of patch size R")
    p.add_argument("i1")
    p.add_argument("i2")
    p.add_argument("truth")
    p.add_argument("--r-list", type=_r_list, default=list(SWEEP_RS), help="comma-separated odd R values")
    _add_train_flags(p, with_r=False)
    p.set_defaults(func=cmd_sweep, r=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lantnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PreclassificationError, NumericError) as exc:
        print(f"lantnet: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ValueError, FileNotFoundError) as exc:
        print(f"lantnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort exit status
        print(f"lantnet: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
