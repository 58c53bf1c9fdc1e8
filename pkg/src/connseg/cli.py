"""``connseg`` command line: phantom, preprocess, encode, decode, train, predict, evaluate.

Every command that writes an output directory also writes ``manifest.json``
echoing its parsed arguments. Exit codes: 0 success, 2 rejected input,
3 numeric failure, 4 I/O failure, 5 empty result.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .connectivity import decode_connectivity, encode_connectivity
from .errors import ConnsegError, InputError
from .fuzzyconn import AffinityParams
from .metrics import evaluate, format_csv, format_table
from .model import AdamState, ConnectivityUNet, load_checkpoint, save_checkpoint
from .phantom import PhantomConfig, generate
from .preprocess import HUWindow, clip_normalize, distance_transform, extract_lung_mask
from .tiler import SamplingPolicy, TileSpec
from .training import Case, TrainConfig, model_config_for, segment, train
from .volio import read_volume, write_volume

log = logging.getLogger("connseg")


def _triple(text: str) -> tuple[int, int, int]:
    parts = text.replace("x", ",").split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three integers like 32,64,64, got {text!r}")
    return tuple(int(p) for p in parts)


def _write_manifest(directory: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = {"version": __version__, "command": args.command, "args": _jsonable(vars(args))}
    if extra:
        payload.update(extra)
    (directory / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if k == "func":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _read_mask(stem) -> np.ndarray:
    header, data = read_volume(stem)
    if header.kind != "mask" or header.channels != 1:
        raise InputError(f"{stem} is not a single-channel mask volume")
    return data.astype(bool)


def _read_case(prep: Path, gt: str | None = None) -> tuple[Case, tuple]:
    header, image = read_volume(prep / "image")
    lung = _read_mask(prep / "lung")
    _, dist = read_volume(prep / "distance")
    airway = _read_mask(gt) if gt else None
    return Case(image, lung, dist, airway, name=prep.name), header.spacing


# -- subcommands ---------------------------------------------------------------


def cmd_phantom(args) -> int:
    cfg = PhantomConfig(
        shape=tuple(args.shape), depth=args.depth, seed=args.seed,
        trunk_radius=args.trunk_radius, noise_sd=args.noise_sd,
    )
    ct, airway, lung = generate(cfg)
    prefix = Path(args.out_prefix)
    write_volume(f"{prefix}_ct", ct.data, "intensity", ct.spacing)
    write_volume(f"{prefix}_airway", airway, "mask", ct.spacing)
    write_volume(f"{prefix}_lung", lung, "mask", ct.spacing)
    manifest = {"version": __version__, "command": "phantom", "args": _jsonable(vars(args)), "config": asdict(cfg)}
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"phantom: {int(airway.sum())} airway voxels, {int(lung.sum())} lung voxels -> {prefix}_*")
    return 0


def cmd_preprocess(args) -> int:
    header, ct = read_volume(args.ct)
    if header.channels != 1:
        raise InputError("CT volume must have a single channel")
    lung = extract_lung_mask(ct, sigma=args.sigma, threshold=args.lung_threshold, hull_ratio=args.hull_ratio)
    out = Path(args.out)
    image = clip_normalize(ct, HUWindow(args.hu_lo, args.hu_hi))
    write_volume(out / "image", image.astype(np.float32), "intensity", header.spacing)
    write_volume(out / "lung", lung, "mask", header.spacing)
    write_volume(out / "distance", distance_transform(lung).astype(np.float32), "distance", header.spacing)
    _write_manifest(out, args)
    print(f"preprocess: lung mask {int(lung.sum())} voxels -> {out}")
    return 0


def cmd_encode(args) -> int:
    header, _ = read_volume(args.mask)
    cube = encode_connectivity(_read_mask(args.mask))
    write_volume(args.out, cube, "mask", header.spacing)
    return 0


def cmd_decode(args) -> int:
    header, cube = read_volume(args.cube)
    if header.channels != 26:
        raise InputError(f"{args.cube} has {header.channels} channels, expected 26")
    write_volume(args.out, decode_connectivity(cube, args.threshold), "mask", header.spacing)
    return 0


def cmd_train(args) -> int:
    if len(args.prep) != len(args.gt):
        raise InputError("--prep and --gt must be given the same number of times")
    cases = [_read_case(Path(p), g)[0] for p, g in zip(args.prep, args.gt)]
    out = Path(args.out)
    target = "mask" if args.no_conn else "connectivity"
    model = adam = None
    start, history = 0, []
    if args.resume:
        model, adam, meta = load_checkpoint(args.resume)
        start, history = int(meta.get("epoch", 0)), list(meta.get("history", []))
        target = meta.get("target", target)
        model_cfg = model.config
    else:
        model_cfg = model_config_for(
            target, scales=args.scales, base_channels=args.base_channels, batchnorm=not args.no_batchnorm
        )
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, samples_per_epoch=args.samples_per_epoch,
        lr=args.lr, beta1=args.beta1, beta2=args.beta2, dice_eps=args.dice_eps, seed=args.seed,
        target=target, tiles=TileSpec(args.cube_size, args.train_stride),
        policy=SamplingPolicy(args.bg_keep_prob, args.flip_prob), model=model_cfg,
    )
    _write_manifest(out, args, {"train_config": _jsonable(asdict(cfg))})
    meta = {"target": target, "seed": args.seed, "cube_size": list(args.cube_size)}

    def checkpoint(epoch, loss, m, a):
        history.append(loss)
        save_checkpoint(out / "checkpoint", m, a, {**meta, "epoch": epoch, "history": history})
        with open(out / "loss_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss"])
            w.writerows((k + 1, repr(v)) for k, v in enumerate(history))
        print(f"epoch {epoch}: mean loss {loss:.6f}")

    if start >= cfg.epochs and model is not None:
        print(f"checkpoint already at epoch {start}; nothing to do")
        return 0
    if cfg.epochs == 0:
        model = ConnectivityUNet(cfg.model, seed=cfg.seed)
        save_checkpoint(out / "checkpoint", model, AdamState(cfg.lr, cfg.beta1, cfg.beta2), {**meta, "epoch": 0, "history": []})
        with open(out / "loss_curve.csv", "w", newline="") as fh:
            fh.write("epoch,mean_loss\n")
        return 0
    train(cases, cfg, model, adam, start_epoch=start, on_epoch=checkpoint)
    return 0


def cmd_predict(args) -> int:
    prep = Path(args.prep)
    case, spacing = _read_case(prep)
    model, _, meta = load_checkpoint(args.checkpoint)
    cube = tuple(args.cube_size or meta.get("cube_size") or (32, 64, 64))
    stride = tuple(args.test_stride or [max(1, c // 2) for c in cube])
    fc = None if args.no_fc else AffinityParams(args.fc_sigma, args.fc_theta)
    seg = segment(model, case, spec=TileSpec(cube, stride), threshold=args.threshold, fc=fc)
    out = Path(args.out)
    write_volume(out / "prediction", seg.final, "mask", spacing)
    if args.save_intermediate:
        write_volume(out / "probability", seg.probability, "probability", spacing)
        write_volume(out / "candidates", seg.decoded, "mask", spacing)
    _write_manifest(out, args, {"target": meta.get("target", "connectivity")})
    print(f"predict: {int(seg.decoded.sum())} candidate voxels, {int(seg.final.sum())} after consolidation -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    if len(args.pred) != len(args.gt):
        raise InputError("--pred and --gt must be given the same number of times")
    if args.metrics_domain == "lung" and len(args.lung or []) != len(args.pred):
        raise InputError("--metrics-domain lung needs one --lung mask per case")
    names = args.name or [Path(p).parent.name or Path(p).name for p in args.pred]
    if len(names) != len(args.pred):
        raise InputError("--name must be given once per case")
    rows = {}
    for k, (p, g) in enumerate(zip(args.pred, args.gt)):
        domain = _read_mask(args.lung[k]) if args.metrics_domain == "lung" else None
        key = names[k] if names[k] not in rows else f"{names[k]}#{k + 1}"
        rows[key] = evaluate(_read_mask(p), _read_mask(g), domain)
    print(format_table(rows))
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(format_csv(rows), encoding="utf-8")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="connseg", description="Voxel-connectivity aware airway segmentation.")
    p.add_argument("--version", action="version", version=f"connseg {__version__}")
    p.add_argument("--threads", type=int, default=None, help="torch threads (default: $CONNSEG_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="generate a synthetic chest phantom")
    s.add_argument("--shape", type=int, nargs=3, default=[64, 64, 64], metavar=("Z", "H", "W"))
    s.add_argument("--depth", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trunk-radius", type=float, default=3.0)
    s.add_argument("--noise-sd", type=float, default=30.0)
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("preprocess", help="lung mask, distance map and normalised image")
    s.add_argument("--ct", required=True, help="CT volume stem (HU)")
    s.add_argument("--out", required=True)
    s.add_argument("--hu-lo", type=float, default=-1000.0)
    s.add_argument("--hu-hi", type=float, default=600.0)
    s.add_argument("--lung-threshold", type=float, default=-600.0)
    s.add_argument("--hull-ratio", type=float, default=1.5)
    s.add_argument("--sigma", type=float, default=1.0, help="per-slice Gaussian sigma for lung extraction")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("encode", help="mask -> 26-channel connectivity labels")
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="connectivity cube -> mask")
    s.add_argument("--cube", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("train", help="train the network on preprocessed cases")
    s.add_argument("--prep", action="append", required=True, help="preprocessed case directory (repeatable)")
    s.add_argument("--gt", action="append", required=True, help="airway mask stem, paired with --prep")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint stem to continue from")
    s.add_argument("--epochs", type=int, default=15)
    s.add_argument("--batch-size", type=int, default=4)
    s.add_argument("--samples-per-epoch", type=int, default=500)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--beta1", type=float, default=0.5)
    s.add_argument("--beta2", type=float, default=0.999)
    s.add_argument("--dice-eps", type=float, default=1e-7)
    s.add_argument("--cube-size", type=_triple, default=(32, 64, 64))
    s.add_argument("--train-stride", type=_triple, default=(8, 16, 16))
    s.add_argument("--bg-keep-prob", type=float, default=0.25)
    s.add_argument("--flip-prob", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scales", type=int, default=4)
    s.add_argument("--base-channels", type=int, default=8)
    s.add_argument("--no-batchnorm", action="store_true")
    s.add_argument("--no-conn", action="store_true", help="train a plain 1-channel mask network (ablation)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="segment a preprocessed case")
    s.add_argument("--prep", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cube-size", type=_triple, default=None, help="default: the training cube size")
    s.add_argument("--test-stride", type=_triple, default=None, help="default: half the cube size")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--fc-sigma", type=float, default=AffinityParams.sigma)
    s.add_argument("--fc-theta", type=float, default=AffinityParams.theta)
    s.add_argument("--no-fc", action="store_true", help="skip fuzzy connectedness consolidation")
    s.add_argument("--save-intermediate", action="store_true")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="DSC/TPR/FPR/PPV table")
    s.add_argument("--pred", action="append", required=True)
    s.add_argument("--gt", action="append", required=True)
    s.add_argument("--name", action="append")
    s.add_argument("--lung", action="append")
    s.add_argument("--metrics-domain", choices=("full", "lung"), default="full")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or int(os.environ.get("CONNSEG_THREADS", "1"))
    torch.set_num_threads(max(1, threads))
    try:
        return args.func(args)
    except ConnsegError as exc:
        print(f"connseg {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
