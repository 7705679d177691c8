"""Command-line harness.

Every reporting command writes machine-readable delimited files and renders
the matching matplotlib figure next to them, plus an echo of the effective
configuration, so a run directory is self-describing.

    frpose train --config run.ini --out runs/a
    frpose eval --config run.ini --checkpoint runs/a/final.ckpt --out runs/e
    frpose analyze-quantization --out runs/q
    frpose param-count --config run.ini
    frpose dump-heatmaps --config run.ini --out runs/h --index 2
"""

from __future__ import annotations

import argparse
import pathlib
import sys

import numpy as np

from . import __version__
from .analysis import CSV_HEADER as QUANT_HEADER
from .analysis import run_quantization_analysis
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config, save_config
from .data import AnnotationError, make_crop
from .heatmaps import HeatmapStack, dump_heatmaps, encode_heatmaps, sigma_for_input
from .network import build_network, count_params
from .report import (heatmap_grid_figure, loss_curve_figure,
                     metric_bar_figure, quantization_figure, write_csv,
                     write_key_values)
from .train import build_dataset, evaluate_model, run_training

_USER_ERRORS = (ConfigError, CheckpointError, AnnotationError,
                ValueError, OSError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frpose",
        description="full-resolution pose estimation: train, evaluate, "
                    "and analyze heatmap quantization")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="INI run configuration "
                                        "(defaults apply when omitted)")
        p.add_argument("--seed", type=int,
                       help="override the train/data/analysis seeds")
        if out_required:
            p.add_argument("--out", required=True,
                           help="output directory (created if missing)")

    p = sub.add_parser("train", help="train a network on the configured data")
    common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-step progress lines")

    p = sub.add_parser("eval", help="evaluate a checkpoint with OKS AP/AR")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("analyze-quantization",
                       help="measure the decode-error floor per stride")
    common(p)

    p = sub.add_parser("param-count",
                       help="parameter totals per component")
    common(p, out_required=False)
    p.add_argument("--out", help="also write parameters.csv here")

    p = sub.add_parser("dump-heatmaps",
                       help="write target (and predicted) heatmaps "
                            "for one training sample")
    common(p)
    p.add_argument("--checkpoint", help="also dump this model's predictions")
    p.add_argument("--index", type=int, default=0,
                   help="which annotated person (default 0)")
    return parser


def _load_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.data.seed = args.seed
        cfg.analysis.seed = args.seed
    cfg.validate()
    return cfg


def _prepare_out(args, cfg: RunConfig) -> pathlib.Path:
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config_used.ini")
    return out


def _write_metrics(out: pathlib.Path, metrics: dict) -> None:
    write_key_values(out / "metrics.csv", metrics)
    metric_bar_figure(metrics, out / "metrics.png")


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args, cfg)
    log = None if args.quiet else print
    result = run_training(cfg, out_dir=out, resume=args.resume, log=log)
    loss_curve_figure(result.loss_rows, out / "loss_curve.png")
    _write_metrics(out, result.metrics)
    print(f"trained {len(result.loss_rows)} steps; final loss "
          f"{result.final_loss:.6f}")
    for kind, value in result.metrics.items():
        print(f"{kind}: {value:.4f}")
    print(f"outputs in {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args, cfg)
    dataset = build_dataset(cfg)
    net = build_network(cfg.network, seed=cfg.train.seed)
    load_checkpoint(str(args.checkpoint), net)
    result = evaluate_model(net, dataset, cfg)
    _write_metrics(out, result.metrics)
    header = ["image_id", "score"]
    for j in range(cfg.network.num_joints):
        header += [f"x{j}", f"y{j}"]
    rows = [[p.image_id, p.score]
            + [v for xy in p.xy for v in (float(xy[0]), float(xy[1]))]
            for p in result.predictions]
    write_csv(out / "predictions.csv", header, rows)
    for kind, value in result.metrics.items():
        print(f"{kind}: {value:.4f}")
    print(f"outputs in {out}")
    return 0


def _cmd_analyze(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args, cfg)
    rows = run_quantization_analysis(cfg.analysis)
    write_csv(out / "quantization.csv", QUANT_HEADER,
              [r.as_tuple() for r in rows])
    quantization_figure(rows, out / "quantization.png")
    for r in rows:
        print(f"stride {r.stride} {r.decode:8s} flip={r.flip:11s} "
              f"mean {r.mean_px_error:.3f}px  max {r.max_px_error:.3f}px  "
              f"oks {r.mean_oks:.4f}")
    print(f"outputs in {out}")
    return 0


def _cmd_param_count(args) -> int:
    cfg = _load_config(args)
    net = build_network(cfg.network, seed=cfg.train.seed)
    stats = count_params(net)
    rows = sorted(stats.by_component.items()) + [("total", stats.total)]
    for name, count in rows:
        print(f"{name}: {count}")
    if args.out:
        out = _prepare_out(args, cfg)
        write_csv(out / "parameters.csv", ("component", "parameters"), rows)
        print(f"outputs in {out}")
    return 0


def _cmd_dump_heatmaps(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args, cfg)
    dataset = build_dataset(cfg)
    if not 0 <= args.index < len(dataset.instances):
        raise ValueError(f"--index {args.index} out of range "
                         f"(dataset has {len(dataset.instances)} people)")
    person = dataset.instances[args.index]
    skeleton = dataset.annotations.skeleton
    out_size = cfg.network.input_size
    stride = cfg.network.output_stride
    sigma = (cfg.train.sigma if cfg.train.sigma is not None
             else sigma_for_input(out_size[0]))
    crop, joints, _ = make_crop(dataset.images[person.image_id], person,
                                skeleton, out_size,
                                margin=cfg.data.crop_margin)
    stack, _ = encode_heatmaps(joints, out_size[0] // stride,
                               out_size[1] // stride, stride, sigma)
    dump_heatmaps(str(out / "target_heatmaps.txt"), stack)
    heatmap_grid_figure(stack.maps, out / "target_heatmaps.png",
                        joint_names=skeleton.joint_names)
    if args.checkpoint:
        net = build_network(cfg.network, seed=cfg.train.seed)
        load_checkpoint(str(args.checkpoint), net)
        maps = net.predict(crop[None])[0]
        predicted = HeatmapStack(maps, stride, sigma)
        dump_heatmaps(str(out / "predicted_heatmaps.txt"), predicted)
        heatmap_grid_figure(maps, out / "predicted_heatmaps.png",
                            joint_names=skeleton.joint_names)
    print(f"outputs in {out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "analyze-quantization": _cmd_analyze,
    "param-count": _cmd_param_count,
    "dump-heatmaps": _cmd_dump_heatmaps,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USER_ERRORS as exc:
        print(f"frpose: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
