"""Command-line surface.

Subcommands: train, eval, profile, ablate, selftest, plus synth for
generating the synthetic benchmark dataset. Exit codes: 0 success, 1
failure with a one-line reason, 2 usage errors (argparse default).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np


def _build_parser():
    parser = argparse.ArgumentParser(prog="hsimamba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train per the config; one run per seed")
    p.add_argument("config")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=None, help="split seed (default: first in config)")
    p.add_argument("--map", dest="map_path", default=None, help="write a PPM classification map")

    p = sub.add_parser("profile", help="parameter/FLOP cost report for the config")
    p.add_argument("config")
    p.add_argument("--kv", action="store_true", help="emit key=value lines instead of the table")

    p = sub.add_parser("ablate", help="run a variant grid and report metrics")
    p.add_argument("config")
    p.add_argument("--axis", choices=("spectral-scan", "fusion"), required=True)

    p = sub.add_parser("selftest", help="run the oracle and gradient smoke suites")

    p = sub.add_parser("synth", help="generate the synthetic dataset files")
    p.add_argument("--out", required=True, help="output prefix for .hsic/.hsil")
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args):
    from .train import parse_config, train

    cfg = parse_config(args.config)
    logs = train(cfg)
    for log in logs:
        last = log.epochs[-1]
        line = f"seed={log.seed} final_loss={last[1]:.6f} train_acc={last[2]:.4f}"
        if log.final_metrics:
            line += " " + " ".join(f"{k}={v:.4f}" for k, v in sorted(log.final_metrics.items()))
        print(line)
    print(f"wrote {len(logs)} run(s) under {cfg.out_dir}")
    return 0


def _cmd_eval(args):
    from .train import evaluate, parse_config

    cfg = parse_config(args.config)
    cm, m = evaluate(cfg, args.checkpoint, seed=args.seed, map_path=args.map_path)
    print(f"test pixels: {cm.total}")
    print(f"OA={m['oa']:.4f} AA={m['aa']:.4f} kappa={m['kappa']:.4f}")
    for k, acc in enumerate(m["per_class"], 1):
        if not np.isnan(acc):
            print(f"class {k}: {acc:.4f}")
    if args.map_path:
        print(f"map written to {args.map_path}")
    return 0


def _cmd_profile(args):
    from .model import build_model
    from .profile import count_flops
    from .train import parse_config

    cfg = parse_config(args.config)
    model = build_model(cfg.model, seed=cfg.seeds[0])
    report = count_flops(model)
    print(report.as_kv() if args.kv else report.as_text())
    return 0


def _cmd_ablate(args):
    from .train import parse_config, train

    base = parse_config(args.config)
    variants = (
        ("unidirectional", "bidirectional")
        if args.axis == "spectral-scan"
        else ("sum", "concat_linear", "learnable", "adaptive")
    )
    field = "spectral_scan" if args.axis == "spectral-scan" else "fusion"
    print(f"ablation over {args.axis}: {len(variants)} variants x {len(base.seeds)} seed(s)")
    for variant in variants:
        model_cfg = dataclasses.replace(base.model, **{field: variant})
        cfg = dataclasses.replace(base, model=model_cfg,
                                  out_dir=f"{base.out_dir}/{args.axis}-{variant}")
        logs = train(cfg)
        scores = [log.final_metrics for log in logs if log.final_metrics]
        oa = np.array([s["oa"] for s in scores])
        aa = np.array([s["aa"] for s in scores])
        kap = np.array([s["kappa"] for s in scores])
        print(
            f"{variant:16s} OA={oa.mean():.4f}±{oa.std():.4f} "
            f"AA={aa.mean():.4f}±{aa.std():.4f} kappa={kap.mean():.4f}±{kap.std():.4f}"
        )
    return 0


def _cmd_selftest(args):
    from . import selftest

    return selftest.run()


def _cmd_synth(args):
    from . import data

    cube = data.make_synthetic_cube(
        height=args.height, width=args.width, bands=args.bands,
        num_classes=args.classes, noise=args.noise, seed=args.seed,
    )
    data.write_cube(args.out + ".hsic", cube.values)
    data.write_labels(args.out + ".hsil", cube.labels, cube.class_names)
    labeled = int((cube.labels > 0).sum())
    print(f"wrote {args.out}.hsic / .hsil ({cube.height}x{cube.width}x{cube.bands}, "
          f"{labeled} labeled pixels, {cube.num_classes} classes)")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "profile": _cmd_profile,
    "ablate": _cmd_ablate,
    "selftest": _cmd_selftest,
    "synth": _cmd_synth,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # one-line reason, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
