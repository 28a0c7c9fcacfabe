"""Command-line interface: generate / train / eval / infer / preview / selftest.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage
error (usage text on stderr).  Flags override config-file values, which
override built-in defaults.  ``--threads 1`` pins every thread pool —
including the BLAS backing numpy — to one thread for bitwise
reproducibility, which is why this module defers all numpy-touching
imports until after the thread environment is configured.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

__all__ = ["main"]

_PRECEDENCE_NOTE = (
    "Option precedence: command-line flags override values from --config, "
    "which override built-in defaults."
)


class _UsageError(Exception):
    """Post-parse usage problem: exits 2 before any output file is touched."""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afpseg",
        description=(
            "Synthesize fiber-placement depth-map training data, train a "
            "from-scratch segmentation network, and evaluate or apply it."
        ),
        epilog=_PRECEDENCE_NOTE,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gen = sub.add_parser(
        "generate",
        help="render an annotated dataset to an AFPD file",
        description="Render depth/label samples into an AFPD container.",
        epilog=_PRECEDENCE_NOTE,
    )
    gen.add_argument("--config", help="generator config JSON file")
    gen.add_argument("--count", type=int, default=100, help="number of samples (default 100)")
    gen.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    gen.add_argument("--out", required=True, help="output AFPD path")
    gen.add_argument("--threads", type=int, default=1, help="render workers (default 1)")
    gen.set_defaults(func=_cmd_generate)

    tr = sub.add_parser(
        "train",
        help="train a segmentation network and write checkpoint + metrics",
        description=(
            "Generate (or load) train/val datasets, run seeded mini-batch "
            "training, and write checkpoint.afpw, metrics.jsonl and "
            "curves.png into the output directory."
        ),
        epilog=_PRECEDENCE_NOTE,
    )
    tr.add_argument("--config", help="train config JSON file")
    tr.add_argument("--seed", type=int, help="override the config seed")
    tr.add_argument("--epochs", type=int, help="override the config epoch count")
    tr.add_argument("--out", help="output directory (overrides config out_dir)")
    tr.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser(
        "eval",
        help="confusion matrix of a checkpoint over a dataset",
        description=(
            "Print a 4-class confusion table (percent of total pixels, "
            "prediction rows x ground-truth columns, marginal sums)."
        ),
        epilog=_PRECEDENCE_NOTE,
    )
    ev.add_argument("--checkpoint", required=True, help="AFPW checkpoint path")
    ev.add_argument("--data", required=True, help="AFPD dataset path")
    ev.add_argument("--out", help="directory for confusion.csv / confusion.png / report.json")
    ev.add_argument("--json", action="store_true", help="print the report as JSON instead")
    ev.add_argument("--threads", type=int, default=1, help="evaluation workers (default 1)")
    ev.set_defaults(func=_cmd_eval)

    inf = sub.add_parser(
        "infer",
        help="segment one depth image (PNG or AFPD sample)",
        description=(
            "Run a checkpoint on one depth input and write the label map "
            "as a color PNG (gap red, tow green, overlap blue, fuzzball "
            "yellow)."
        ),
        epilog=_PRECEDENCE_NOTE,
    )
    inf.add_argument("--checkpoint", required=True, help="AFPW checkpoint path")
    inf.add_argument("--input", required=True, help="grayscale PNG or AFPD path")
    inf.add_argument("--index", type=int, default=0, help="sample index for AFPD inputs")
    inf.add_argument("--out", required=True, help="output label PNG path")
    inf.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    inf.set_defaults(func=_cmd_infer)

    pv = sub.add_parser(
        "preview",
        help="export one dataset sample as a depth/label PNG pair",
        description=(
            "Write <prefix>_depth.png (grayscale) and <prefix>_labels.png "
            "(class palette) for a dataset sample."
        ),
        epilog=_PRECEDENCE_NOTE,
    )
    pv.add_argument("--data", required=True, help="AFPD dataset path")
    pv.add_argument("--index", type=int, default=0, help="sample index (default 0)")
    pv.add_argument("--out", required=True, help="output path prefix")
    pv.set_defaults(func=_cmd_preview)

    st = sub.add_parser(
        "selftest",
        help="run built-in gradient and rasterizer oracles",
        description=(
            "Check the analytic gradients against finite differences and "
            "the rasterizer kernels against naive oracles; prints one "
            "PASS/FAIL line per check."
        ),
        epilog=_PRECEDENCE_NOTE,
    )
    st.add_argument("--seed", type=int, default=0, help="seed for the randomized checks")
    st.set_defaults(func=_cmd_selftest)

    return parser


def _apply_threads(args) -> None:
    """Pin BLAS/OpenMP pools before numpy loads; must run pre-import."""
    threads = getattr(args, "threads", None)
    if threads is None:
        return
    if threads < 1:
        raise _UsageError(f"--threads must be >= 1, got {threads}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ[var] = str(threads)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except FileNotFoundError:
        raise _UsageError(f"config file not found: {path}")


# ---------------------------------------------------------------------------
# Subcommand handlers (all heavy imports deferred)
# ---------------------------------------------------------------------------


def _cmd_generate(args) -> int:
    from .dataset import generate_dataset
    from .scene import GeneratorConfig

    if args.count < 0:
        raise _UsageError(f"--count must be >= 0, got {args.count}")
    if args.config:
        config = GeneratorConfig.from_json(_read_text(args.config))
    else:
        config = GeneratorConfig()
    path = generate_dataset(config, args.count, args.seed, args.out, threads=args.threads)
    print(f"wrote {args.count} samples ({config.height_px}x{config.width_px}) to {path}")
    return 0


def _cmd_train(args) -> int:
    from .pipeline import TrainConfig, train

    if args.config:
        config = TrainConfig.from_json(_read_text(args.config))
    else:
        config = TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs
    config.validate()

    def progress(epoch: int, train_loss: float, val_accuracy: float) -> None:
        print(
            f"epoch {epoch:3d}: train_loss {train_loss:.4f}  "
            f"val_accuracy {val_accuracy:.4f}",
            flush=True,
        )

    result = train(config, out_dir=args.out, threads=args.threads, progress=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    if result.curves_path:
        print(f"curves:     {result.curves_path}")
    print(f"final val accuracy: {result.final_val_accuracy:.4f}")
    return 0


def _cmd_eval(args) -> int:
    from .pipeline import evaluate

    report = evaluate(args.checkpoint, args.data, threads=args.threads)
    if args.json:
        print(report.to_json())
    else:
        print(report.format_table())
    if args.out:
        from .report import save_confusion_figure, write_confusion_csv

        os.makedirs(args.out, exist_ok=True)
        csv_path = write_confusion_csv(report, os.path.join(args.out, "confusion.csv"))
        fig_path = save_confusion_figure(report, os.path.join(args.out, "confusion.png"))
        json_path = os.path.join(args.out, "report.json")
        with open(json_path, "w") as fh:
            fh.write(report.to_json() + "\n")
        if not args.json:
            print(f"report files: {csv_path}, {fig_path}, {json_path}")
    return 0


def _cmd_infer(args) -> int:
    from .pipeline import infer
    from .raster import write_labels_png

    labels = infer(args.checkpoint, args.input, index=args.index)
    write_labels_png(args.out, labels)
    print(f"wrote {labels.shape[0]}x{labels.shape[1]} label map to {args.out}")
    return 0


def _cmd_preview(args) -> int:
    from .dataset import Dataset
    from .raster import write_depth_png, write_labels_png

    dataset = Dataset(args.data)
    if not 0 <= args.index < len(dataset):
        raise _UsageError(
            f"--index {args.index} out of range: dataset has {len(dataset)} samples"
        )
    depth, labels = dataset[args.index]
    depth_path = f"{args.out}_depth.png"
    labels_path = f"{args.out}_labels.png"
    write_depth_png(depth_path, depth)
    write_labels_png(labels_path, labels)
    print(f"wrote {depth_path} and {labels_path}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return run_selftest(seed=args.seed, out=sys.stdout)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args)
        return args.func(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
