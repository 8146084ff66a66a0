"""Command-line entry point.

Subcommands: pretrain, finetune-se, finetune-cls, enhance, evaluate.
Exit codes: 0 success, 2 usage/config error, 3 numeric failure.
"""

import argparse
import sys

from .config import ConfigError, load_config_file, resolve_config
from .optim import NonFiniteGradient
from .runs import run_enhance, run_evaluate, run_finetune_cls, run_finetune_se, run_pretrain
from .training import TrainingDiverged


def _add_train_flags(p):
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides io.out_dir)")
    p.add_argument("--seed", type=int, help="training seed (overrides train.seed)")
    p.add_argument("--steps", type=int, help="training steps (overrides train.steps)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specmae")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    _add_train_flags(p)

    p = sub.add_parser("finetune-se", help="speech-enhancement fine-tuning")
    _add_train_flags(p)
    p.add_argument("--variant", choices=["vanilla", "additive", "multiplicative", "istft"],
                   help="enhancement variant (overrides train.variant)")
    p.add_argument("--init", help="'scratch' or a pretrain/resume checkpoint path")

    p = sub.add_parser("finetune-cls", help="classification fine-tuning")
    _add_train_flags(p)
    p.add_argument("--init", help="'scratch' or a pretrain checkpoint path")

    p = sub.add_parser("enhance", help="enhance a WAV file with an SE checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("in_wav")
    p.add_argument("out_wav")
    p.add_argument("--dump-mel", help="also save the pre-vocoder mel (or magnitude) as .npy")
    p.add_argument("--gl-iters", type=int, default=64)

    p = sub.add_parser("evaluate", help="metric report for a checkpoint on the test set")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="JSON run configuration for the test corpus")
    p.add_argument("--out", help="report CSV path")
    p.add_argument("--items", type=int, help="number of test items (overrides eval.items)")
    return parser


def _resolved(args, extra_overrides=None) -> dict:
    document = load_config_file(args.config) if args.config else {}
    overrides = {
        "io.out_dir": getattr(args, "out", None),
        "train.seed": getattr(args, "seed", None),
        "train.steps": getattr(args, "steps", None),
    }
    overrides.update(extra_overrides or {})
    return resolve_config(document, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pretrain":
            cfg = _resolved(args, {"train.variant": "pretrain"})
            ckpt, logs = run_pretrain(cfg)
            print(f"checkpoint: {ckpt}  final_loss={logs[-1].loss:.6f}")
        elif args.command == "finetune-se":
            cfg = _resolved(args, {"train.variant": args.variant, "train.init": args.init})
            ckpt, logs, _ = run_finetune_se(cfg)
            print(f"checkpoint: {ckpt}  final_loss={logs[-1].loss:.6f}")
        elif args.command == "finetune-cls":
            cfg = _resolved(args, {"train.variant": "classifier", "train.init": args.init})
            ckpt, logs, val_logs = run_finetune_cls(cfg)
            top1 = f"  top1={val_logs[-1][1]:.3f}" if val_logs else ""
            print(f"checkpoint: {ckpt}  final_loss={logs[-1].loss:.6f}{top1}")
        elif args.command == "enhance":
            run_enhance(args.checkpoint, args.in_wav, args.out_wav,
                        dump_mel=args.dump_mel, gl_iters=args.gl_iters)
            print(f"wrote {args.out_wav}")
        elif args.command == "evaluate":
            cfg = _resolved(args, {"eval.items": args.items})
            report = run_evaluate(args.checkpoint, cfg, out_csv=args.out)
            for metric in report.metric_names():
                print(f"{metric}: {report.mean(metric):.4f}")
        return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NonFiniteGradient) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
