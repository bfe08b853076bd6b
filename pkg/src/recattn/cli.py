"""Command-line entry point.

Commands: ``gen``, ``train``, ``eval``, ``ablate``, ``saliency``.  Every
command accepts ``--config PATH``, ``--out DIR``, ``--seed N`` and repeated
``--set key=value`` overrides.  Errors exit nonzero with a single
machine-parsable ``ERROR:<CODE>:`` line on stderr.
"""

import argparse
import sys

from .config import load_config, parse_set_args
from .errors import RecAttnError, UsageError
from .train import (ABLATION_MODES, cmd_ablate, cmd_eval, cmd_gen,
                    cmd_saliency, cmd_train)


def _add_common(p):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="recattn",
        description="Two-stream recurrent-attention fine-grained classifier")
    sub = parser.add_subparsers(dest="command")
    for name, help_text in (
            ("gen", "generate the synthetic dataset"),
            ("train", "train the two-stream model"),
            ("eval", "evaluate a checkpoint"),
            ("ablate", "run an ablation experiment"),
            ("saliency", "export per-step Grad-CAM heatmaps")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "eval":
            p.add_argument("--checkpoint", default=None)
        if name == "ablate":
            p.add_argument("--mode", required=True)
        if name == "saliency":
            p.add_argument("--checkpoint", default=None)
            p.add_argument("--image-id", required=True)
            p.add_argument("--patch-id", default="0")
    return parser


def _config_from_args(args):
    overrides = parse_set_args(args.overrides)
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("ERROR:USAGE: no command given", file=sys.stderr)
        return 2
    try:
        cfg = _config_from_args(args)
        if args.command == "gen":
            n_train, n_test = cmd_gen(cfg)
            print(f"generated {n_train} train / {n_test} test samples "
                  f"in {cfg.data_dir}")
        elif args.command == "train":
            _, metrics = cmd_train(cfg)
            if metrics:
                last = metrics[-1]
                print(f"trained {cfg.epochs} epochs; fused_acc="
                      f"{last['fused_acc']:.4f} (out: {cfg.out_dir})")
            else:
                print(f"epochs=0; wrote initialization checkpoint to {cfg.out_dir}")
        elif args.command == "eval":
            ckpt = args.checkpoint or f"{cfg.out_dir}/model.ckpt"
            result = cmd_eval(cfg, ckpt)
            print(f"global={result['global_acc']:.4f} "
                  f"local={result['local_acc']:.4f} "
                  f"fused={result['fused_acc']:.4f}")
        elif args.command == "ablate":
            if args.mode not in ABLATION_MODES:
                raise UsageError(f"unknown ablation mode {args.mode!r}; "
                                 f"expected one of {ABLATION_MODES}")
            path, rows = cmd_ablate(cfg, args.mode)
            print(f"wrote {len(rows)} rows to {path}")
        elif args.command == "saliency":
            ckpt = args.checkpoint or f"{cfg.out_dir}/model.ckpt"
            paths = cmd_saliency(cfg, ckpt, args.image_id, args.patch_id)
            print(f"wrote {len(paths)} heatmaps to {cfg.out_dir}")
    except RecAttnError as exc:
        print(f"ERROR:{exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ERROR:IO: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
