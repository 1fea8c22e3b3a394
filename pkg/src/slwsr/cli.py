"""Command line entry point: ``slwsr {train,eval,infer,count,gradcheck}``.

Exit codes::

    0  success
    2  configuration or usage error (bad flags, config/checkpoint mismatch)
    3  data error (missing dataset, unreadable image or checkpoint file)
    4  numeric error (non-finite loss or gradient)
    5  gradient check failure
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import gradcheck as gc
from .config import ModelConfig, parse_key_values
from .errors import ConfigurationError, DataError, NumericError, UsageError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5

DATA_ROOT_ENV = "SLWSR_DATA_ROOT"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

logger = logging.getLogger("slwsr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------- arguments


def _model_config(args) -> ModelConfig:
    values = {}
    if args.config:
        try:
            values.update(parse_key_values(Path(args.config).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if getattr(args, "scale", None) is not None:
        values["scale"] = str(args.scale)
    return ModelConfig.from_dict(values)


def _log_config(title, cfg):
    text = cfg.to_text() if isinstance(cfg, ModelConfig) else "".join(
        f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())
    logger.info("%s:\n%s", title, text.rstrip("\n"))


def _data_root(args):
    root = getattr(args, "data_root", None) or os.environ.get(DATA_ROOT_ENV)
    return Path(root) if root else None


def resolve_dataset(name_or_path, args) -> Path:
    """A directory path as given, else ``<data root>/<name>/HR`` or
    ``<data root>/<name>``."""
    direct = Path(name_or_path)
    if direct.is_dir():
        return direct
    root = _data_root(args)
    if root is not None:
        for cand in (root / name_or_path / "HR", root / name_or_path):
            if cand.is_dir():
                return cand
    where = f" under {root}" if root is not None else f" (set --data-root or {DATA_ROOT_ENV})"
    raise DataError(f"dataset not found: {name_or_path}{where}")


def _add_common(p, model=True):
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--data-root", help=f"directory holding named datasets (default ${DATA_ROOT_ENV})")
    if model:
        p.add_argument("--config", help="model config file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one model config key")


def build_parser():
    parser = _Parser(prog="slwsr", description="Lightweight symmetric super-resolution toolkit.",
                     epilog="exit codes: 0 ok, 2 config/usage, 3 data, 4 numeric, 5 gradcheck failure")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    # -q is accepted before or after the subcommand
    quiet = _Parser(add_help=False)
    quiet.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                       help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[quiet], help="train on a directory of HR images")
    _add_common(p)
    p.add_argument("--data", required=True, help="HR image directory or dataset name ('fixtures' for the bundled pair)")
    p.add_argument("--lr-dir", help="matching LR images (default: bicubic downscaling of HR)")
    p.add_argument("--out", required=True, help="output directory for checkpoints and train_log.csv")
    p.add_argument("--steps", type=int, help="number of steps (default: --epochs * --steps-per-epoch)")
    p.add_argument("--epochs", type=int, default=1, help="epochs to run when --steps is absent")
    p.add_argument("--scale", type=int, help="upscaling factor (overrides the config)")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patch", type=int, default=48, help="LR patch size")
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p.add_argument("--halving-period", type=int, default=200, help="epochs between learning-rate halvings")
    p.add_argument("--steps-per-epoch", type=int, default=1000)
    p.add_argument("--no-augment", action="store_true", help="disable flip/rotation augmentation")
    p.add_argument("--grad-clip", type=float, default=0.0, help="global gradient-norm clip (0 disables)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="epochs between checkpoints (0: end only)")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", parents=[quiet], help="score a checkpoint or bicubic on a benchmark set")
    _add_common(p, model=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="trained checkpoint")
    src.add_argument("--bicubic", action="store_true", help="evaluate plain bicubic upscaling")
    p.add_argument("--dataset", required=True, help="dataset name under the data root, or an HR directory")
    p.add_argument("--lr-dir", help="matching LR images (default: bicubic downscaling of HR)")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--ensemble", action="store_true", help="self-ensemble over 8 flips/rotations")
    p.add_argument("--jobs", type=int, default=1, help="images scored in parallel")
    p.add_argument("--edge", choices=("clamp", "symmetric"), default="clamp", help="bicubic border handling")
    p.add_argument("--csv", help="write the per-image report here")
    p.add_argument("--save-dir", help="write super-resolved PNGs here")

    p = sub.add_parser("infer", parents=[quiet], help="super-resolve PNG files or directories")
    _add_common(p, model=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs="+", help="image files or directories")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ensemble", action="store_true")

    p = sub.add_parser("count", parents=[quiet], help="parameter and multi-add accounting")
    _add_common(p)
    p.add_argument("--scale", type=int, help="upscaling factor (overrides the config)")
    p.add_argument("--reference", default="1280x720", help="HR output size WxH (default 1280x720)")
    p.add_argument("--layers", action="store_true", help="print the per-layer table")
    p.add_argument("--csv", help="write the per-layer CSV here")
    p.add_argument("--sweep", action="store_true", help="cost the baseline, depth and width variants")

    p = sub.add_parser("gradcheck", parents=[quiet], help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--op", action="append", help=f"restrict to an op (repeatable): {', '.join(gc.CASES)}")
    return parser


# -------------------------------------------------------------- commands


def cmd_train(args):
    from .data import load_dataset
    from .model import build_model
    from .train import Adam, CsvLog, TrainConfig, TrainState, resume_state, train_loop

    cfg = _model_config(args)
    tcfg = TrainConfig(lr=args.lr, halving_period=args.halving_period, steps_per_epoch=args.steps_per_epoch,
                       batch_size=args.batch_size, patch=args.patch, seed=args.seed, augment=not args.no_augment,
                       grad_clip=args.grad_clip, checkpoint_every=args.checkpoint_every)
    steps = args.steps if args.steps is not None else args.epochs * tcfg.steps_per_epoch
    if steps < 0:
        raise ConfigurationError("--steps must be >= 0")
    data = FIXTURES if args.data == "fixtures" else resolve_dataset(args.data, args)
    pairs = load_dataset(data, cfg.scale, args.lr_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.resume:
        ck = ckpt_io.load(args.resume)
        if ck.config != cfg and (args.config or args.set):
            raise ckpt_io.CheckpointError("--resume checkpoint config differs from the requested config")
        cfg = ck.config
        model = build_model(cfg)
        state = resume_state(model, tcfg, ck)
    else:
        rng = np.random.default_rng(args.seed)
        model = build_model(cfg, seed=rng)
        state = TrainState(0, rng, Adam(model.params, tcfg))
    _log_config("model config", cfg)
    _log_config("train config", tcfg)
    logger.info("%d training images from %s, %d steps, %d parameters", len(pairs), data, steps,
                model.num_parameters())

    def save(st):
        ck = st.to_checkpoint(model)
        ckpt_io.save(out / f"step{st.step:07d}.ckpt", ck)
        ckpt_io.save(out / "last.ckpt", ck)

    with CsvLog(out / "train_log.csv", append=bool(args.resume)) as log:
        train_loop(model, pairs, tcfg, steps, state, log, on_checkpoint=save)
    logger.info("finished at step %d; checkpoint %s", state.step, out / "last.ckpt")
    return EXIT_OK


def _load_model(path):
    ck = ckpt_io.load(path)
    return ckpt_io.to_model(ck), ck


def cmd_eval(args):
    from .evaluation import bicubic_upscaler, evaluate_dataset

    if args.jobs < 1:
        raise ConfigurationError("--jobs must be >= 1")
    hr_dir = resolve_dataset(args.dataset, args)
    if args.bicubic:
        model, model_id = bicubic_upscaler(args.scale, args.edge), "bicubic"
        logger.info("resolved config:\nmodel = bicubic\nscale = %d\nedge = %s", args.scale, args.edge)
    else:
        model, ck = _load_model(args.checkpoint)
        if ck.config.scale != args.scale:
            raise ckpt_io.CheckpointError(f"checkpoint is x{ck.config.scale}, --scale asks for x{args.scale}")
        model_id = Path(args.checkpoint).stem
        _log_config("model config", ck.config)
    if args.save_dir:
        Path(args.save_dir).mkdir(parents=True, exist_ok=True)
    report = evaluate_dataset(model, hr_dir, args.scale, args.lr_dir, args.ensemble, Path(args.dataset).name,
                              model_id, args.jobs, args.edge, args.save_dir)
    if not report.images:
        raise DataError(f"no images in {hr_dir}")
    print(report.table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def _collect_inputs(inputs):
    from .imaging import list_images

    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(list_images(p))
        elif p.exists():
            files.append(p)
        else:
            raise DataError(f"input not found: {p}")
    seen, unique = set(), []
    for f in files:
        key = f.resolve()
        if key not in seen:
            seen.add(key)
            unique.append(f)
    return unique


def cmd_infer(args):
    from .evaluation import super_resolve
    from .imaging import load_image, save_png

    model, ck = _load_model(args.checkpoint)
    _log_config("model config", ck.config)
    files = _collect_inputs(args.inputs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in files:
        sr = super_resolve(model, load_image(f), args.ensemble)
        target = out / f"{f.stem}_x{ck.config.scale}.png"
        save_png(target, sr)
        print(target)
    logger.info("wrote %d images to %s", len(files), out)
    return EXIT_OK


def _parse_reference(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"--reference expects WxH, got {text!r}") from exc
    if w < 1 or h < 1:
        raise ConfigurationError("--reference sizes must be positive")
    return w, h


def cmd_count(args):
    from .profiler import cost_sweep, profile, sweep_csv, sweep_table, variant_configs

    reference = _parse_reference(args.reference)
    if args.sweep:
        reports = cost_sweep(variant_configs(), reference)
        print(sweep_table(reports))
        if args.csv:
            Path(args.csv).write_text(sweep_csv(reports), encoding="utf-8")
        return EXIT_OK
    cfg = _model_config(args)
    _log_config("model config", cfg)
    report = profile(cfg, reference)
    if args.layers:
        print(report.table())
    print(f"{report.label}: {report.params} parameters, {report.multi_adds / 1e9:.2f}G multi-adds "
          f"at {reference[0]}x{reference[1]}")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_gradcheck(args):
    names = gc.select(args.op)
    logger.info("resolved config:\nops = %s\nseed = %d\neps = %g\ntolerance = %g", ", ".join(names), args.seed,
                gc.EPS, gc.TOLERANCE)
    failed = []
    for r in gc.run(names, seed=args.seed):
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:<26} max_rel_err {r.max_rel_error:.3e}  {status}")
        if not r.passed:
            failed.append(r.op)
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _setup_logging(level):
    pkg = logging.getLogger("slwsr")
    pkg.setLevel(level)
    if not any(isinstance(h, _StderrHandler) for h in pkg.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        pkg.addHandler(handler)


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "count": cmd_count, "gradcheck": cmd_gradcheck}


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging(logging.WARNING if args.quiet else logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except NumericError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except (ConfigurationError, UsageError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
