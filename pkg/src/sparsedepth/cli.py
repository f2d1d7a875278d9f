"""Command-line entry point: ``sparsedepth <command> [flags]``.

Exit status is 0 on success, 1 on runtime failure and 2 on usage or
configuration errors. Set ``SDT_LOG=debug`` or ``SDT_LOG=info`` for
progress output on standard error.
"""
import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

from . import __version__
from .config import RunSpec, load_run_spec
from .datagen import SceneSpec, gen_scenes, read_dataset, scene_pairs, write_dataset
from .distill import CachedTeacher, oracle_teacher
from .exceptions import ConfigError
from .metrics import MetricConfig
from .model import build_model, count_params, load_checkpoint, save_checkpoint, strip_heads
from .rebalance import read_curves, replay
from .train import METRIC_FIELDS, DepthDataset, evaluate, train

logger = logging.getLogger("sparsedepth")

CONFIG_COPY = "config.cfg"


class UsageError(Exception):
    """Bad flag combination detected after argument parsing."""


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _non_negative(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _format_record(record):
    return " ".join(
        f"{k}={'NA' if record.get(k) is None else format(record[k], '.4f')}" for k in METRIC_FIELDS
    )


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args):
    spec = SceneSpec(height=args.size, width=args.size, layer_count=args.layers,
                     texture_noise=args.texture_noise)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    scenes = gen_scenes(args.scenes, seed=args.seed, spec=spec)
    pairs = scene_pairs(scenes, args.pairs, seed=args.seed, equal_fraction=args.equal_fraction,
                        tolerance=args.tolerance)
    write_dataset(scenes, pairs, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def _run_spec(args):
    spec = load_run_spec(args.config) if args.config else RunSpec()
    if args.seed is not None:
        spec.train.seed = args.seed
    spec.data_dir = args.data or spec.data_dir
    spec.out_dir = args.out or spec.out_dir
    spec.checkpoint = args.checkpoint or spec.checkpoint
    return spec


def _require(value, flag):
    if not value:
        raise UsageError(f"{flag} is required (flag or config)")
    return value


def _load_dataset(path):
    scenes, pairs = read_dataset(path)
    return DepthDataset(scenes, pairs, name=str(path))


def _initial_model(spec):
    if spec.checkpoint:
        return load_checkpoint(spec.checkpoint)
    return build_model(spec.model, seed=spec.train.seed)


def _prepare_out(args, spec):
    out = Path(_require(spec.out_dir, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        shutil.copyfile(args.config, out / CONFIG_COPY)
    return out


def _train_command(args, distill):
    spec = _run_spec(args)
    data = _require(spec.data_dir, "--data")
    if distill:
        spec.train.loss_suite = "distill"
    elif spec.train.loss_suite == "distill":
        raise UsageError("loss_suite 'distill' runs through the distill command")
    try:
        spec.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _prepare_out(args, spec)
    dataset = _load_dataset(data)
    teacher = None
    if distill:
        if spec.teacher_cache:
            teacher = CachedTeacher(spec.teacher_cache)
        else:
            teacher = oracle_teacher(dataset, noise_sigma=spec.teacher_noise, seed=spec.teacher_seed)
    model = _initial_model(spec)
    _, log = train(model, dataset, spec.train, teacher=teacher, out_dir=out)
    print(_format_record(log.epoch_metrics[-1]))
    return 0


def cmd_train(args):
    return _train_command(args, distill=False)


def cmd_distill(args):
    return _train_command(args, distill=True)


def cmd_eval(args):
    spec = _run_spec(args)
    ckpt = _require(spec.checkpoint, "--checkpoint")
    data = _require(spec.data_dir, "--data")
    metrics = spec.train.metrics if args.config else MetricConfig()
    model = load_checkpoint(ckpt)
    record = evaluate(model, _load_dataset(data), metrics)
    line = _format_record(record)
    if spec.out_dir:
        out = _prepare_out(args, spec)
        (out / "eval.txt").write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


def cmd_export(args):
    spec = _run_spec(args)
    ckpt = _require(spec.checkpoint, "--checkpoint")
    out = _require(spec.out_dir, "--out")
    model = strip_heads(load_checkpoint(ckpt))
    save_checkpoint(model, out)
    print(f"exported {count_params(model)} parameters to {out}")
    return 0


def cmd_params(args):
    spec = _run_spec(args)
    model = load_checkpoint(spec.checkpoint) if spec.checkpoint else build_model(spec.model, seed=0)
    if not args.with_heads:
        model = strip_heads(model)
    print(count_params(model))
    return 0


def cmd_rebalance_sim(args):
    curves = read_curves(args.curves)
    rows = replay(curves, alpha_start=args.alpha_start, alpha_end=args.alpha_end)
    lines = ["step,name,weight"]
    for step, weights in rows:
        lines.extend(f"{step},{name},{weights[name]:.4f}" for name in sorted(weights))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# -- parser ------------------------------------------------------------------

def _common(p, config=True):
    if config:
        p.add_argument("--config", metavar="PATH", help="run configuration file")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--data", metavar="DIR", help="dataset directory")
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="sparsedepth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--scenes", type=_positive_int, required=True)
    p.add_argument("--size", type=_positive_int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=_positive_int, default=20)
    p.add_argument("--layers", type=_positive_int, default=3)
    p.add_argument("--equal-fraction", type=_fraction, default=0.0)
    p.add_argument("--tolerance", type=_non_negative, default=0.0)
    p.add_argument("--texture-noise", type=_non_negative, default=0.05)
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, func, text in (
        ("train", cmd_train, "train a model"),
        ("distill", cmd_distill, "train a student against a teacher"),
        ("eval", cmd_eval, "evaluate a checkpoint on a dataset"),
        ("export", cmd_export, "write a checkpoint without intermediate heads"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("params", help="print the inference-time parameter count")
    _common(p)
    p.add_argument("--with-heads", action="store_true", help="count intermediate heads too")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("rebalance-sim", help="replay loss curves through the rebalancer")
    p.add_argument("--curves", metavar="PATH", required=True, help="CSV with step,name,value")
    p.add_argument("--out", metavar="PATH", help="write the weight CSV here instead of stdout")
    p.add_argument("--alpha-start", type=float, default=4.0)
    p.add_argument("--alpha-end", type=float, default=-4.0)
    p.set_defaults(func=cmd_rebalance_sim)
    return parser


def _setup_logging():
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("SDT_LOG", "").strip().lower(), logging.WARNING
    )
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"sparsedepth {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        logger.debug("failure", exc_info=True)
        print(f"sparsedepth {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
