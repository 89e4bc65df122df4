"""Command line front end: gen-data, train, eval, predict, inspect.

Machine-readable results go to stdout, log lines to stderr. Exit status is
0 on success, 2 for configuration problems, 3 for data or file-format
problems and 4 for numeric failures during training.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Binning, load_checkpoint, save_checkpoint
from .config import load_config
from .errors import CompatibilityError, ConfigError, DataError, EvsnnError
from .events import bin_to_spike_tensor, crop_center, read_events, stream_stats
from .layers import Network
from .synth import REGIMES, SynthConfig, read_manifest, split_dataset, synth_dataset, write_dataset, write_manifest
from .training import FitConfig, evaluate, fit, predict

log = logging.getLogger("evsnn")


# ---------------------------------------------------------------- preprocessing


def prepare(stream, binning: Binning, height: int, width: int):
    """Crop (when needed) and bin a stream to match a network input."""
    if (stream.height, stream.width) != (height, width):
        side = binning.crop_side
        if side and side == height == width and min(stream.height, stream.width) >= side:
            stream = crop_center(stream, side)
        else:
            raise CompatibilityError(
                f"stream is {stream.height}x{stream.width} but the network expects {height}x{width}"
            )
    return bin_to_spike_tensor(stream, binning.sample_window, binning.bin_width)


def _load_entries(entries, binning, height, width, n_classes):
    out = []
    for path, label in entries:
        if not 0 <= label < n_classes:
            raise DataError(f"{path}: label {label} outside 0..{n_classes - 1}")
        try:
            stream = read_events(path)
        except FileNotFoundError:
            raise DataError(f"{path}: listed in the manifest but missing") from None
        try:
            out.append((prepare(stream, binning, height, width), label))
        except CompatibilityError as exc:
            raise CompatibilityError(f"{path}: {exc}") from None
    return out


def _binning_for(cfg) -> Binning:
    n = cfg.network
    side = n.input_height if n.input_height == n.input_width else 0
    return Binning(cfg.training.sample_window, cfg.training.bin_width, side)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    if args.classes < 1 or args.per_class < 0:
        raise ConfigError("--classes must be >= 1 and --per-class >= 0")
    base = SynthConfig(
        resolution=args.resolution,
        duration=args.duration,
        signal_event_rate=args.signal_rate,
        seed=args.seed,
        noise_rate=args.noise_rate,
    )
    entries = write_dataset(args.out_dir, args.classes, args.per_class, base, args.noise)
    log.info("wrote %d samples to %s", len(entries), args.out_dir)
    return 0


def _overrides(args):
    values = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        key, value = item.split("=", 1)
        values[key.strip()] = value
    for flag, key in (("epochs", "training.epochs"), ("seed", "training.seed"), ("lr", "training.lr")):
        value = getattr(args, flag)
        if value is not None:
            values[key] = str(value)
    # command-line paths are relative to the working directory
    for flag, key in (("dataset", "data.dataset"), ("report", "output.report"), ("checkpoint", "output.checkpoint")):
        value = getattr(args, flag)
        if value is not None:
            values[key] = str(Path(value).resolve())
    return values


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args)).validate()
    if args.dump_config:
        sys.stdout.write(cfg.dumps())
        return 0
    params = cfg.cuba_params()
    layers = cfg.layer_specs()
    binning = _binning_for(cfg)
    height, width = cfg.network.input_height, cfg.network.input_width
    net = Network.build(
        cfg.input_shape,
        layers,
        params=params,
        seed=cfg.training.seed,
        gain=cfg.network.init_gain,
        delays=cfg.network.delays,
        dtype=cfg.dtype,
    )
    n_classes = net.output_shape[0]
    report_path = cfg.resolve_path(cfg.output.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)

    if cfg.data.dataset:
        entries = read_manifest(cfg.resolve_path(cfg.data.dataset))
        train_entries, test_entries = split_dataset(entries, cfg.training.train_fraction, cfg.training.seed)
        stem = report_path.with_suffix("")
        write_manifest(Path(f"{stem}.train.csv"), train_entries)
        write_manifest(Path(f"{stem}.test.csv"), test_entries)
        train = _load_entries(train_entries, binning, height, width, n_classes)
        test = _load_entries(test_entries, binning, height, width, n_classes)
    else:
        d = cfg.data
        streams = synth_dataset(d.synth_classes, d.synth_per_class, cfg.synth_config(), d.synth_noise)
        train_s, test_s = split_dataset(streams, cfg.training.train_fraction, cfg.training.seed)
        train = [(prepare(s, binning, height, width), y) for s, y in train_s]
        test = [(prepare(s, binning, height, width), y) for s, y in test_s]
    log.info("train %d samples, test %d samples, %d time steps", len(train), len(test), cfg.timesteps)

    t = cfg.training
    fit_cfg = FitConfig(
        epochs=t.epochs,
        lr=t.lr,
        seed=t.seed,
        beta1=t.beta1,
        beta2=t.beta2,
        eps=t.eps,
        train_delays=t.train_delays,
        surrogate_width=t.surrogate_width,
        target_accuracy=t.target_accuracy or None,
    )
    out = sys.stdout
    out.write("epoch,loss,train_acc,test_acc\n")

    def progress(rec):
        out.write(f"{rec.epoch},{rec.loss:.6g},{rec.train_acc:.6g},{rec.test_acc:.6g}\n")
        out.flush()
        log.info("epoch %d done in %.1fs", rec.epoch, rec.wall_clock_s)

    report, best = fit(net, train, test, fit_cfg, progress)
    report_path.write_text(report.to_json(timing=args.timing, config=cfg.to_dict(include_output=False)))
    ckpt_path = cfg.resolve_path(cfg.output.checkpoint)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt_path, best, binning)
    log.info("best test accuracy %.4f at epoch %d", report.best_test_acc, report.best_epoch)
    log.info("wrote %s and %s", report_path, ckpt_path)
    return 0


def _load_model(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None


def cmd_eval(args):
    net, binning = _load_model(args.checkpoint)
    _, height, width, _ = net.input_shape
    n_classes = net.output_shape[0]
    samples = _load_entries(read_manifest(args.dataset), binning, height, width, n_classes)
    if not samples:
        raise DataError(f"{args.dataset}: dataset is empty")
    acc, confusion = evaluate(net, samples, n_classes)
    print(f"accuracy={acc:.6g}")
    print(f"samples={len(samples)}")
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(confusion.tolist())
    if args.confusion:
        Path(args.confusion).write_text(buf.getvalue())
        log.info("wrote %s", args.confusion)
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_predict(args):
    net, binning = _load_model(args.checkpoint)
    _, height, width, _ = net.input_shape
    x = prepare(read_events(args.events), binning, height, width)
    cls, counts = predict(net, x)
    print(f"class={cls}")
    print("counts=" + ",".join(str(int(c)) for c in counts))
    return 0


def cmd_inspect(args):
    stats = stream_stats(read_events(args.events))
    for key, value in stats.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}={value}")
    return 0


# ---------------------------------------------------------------- argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="evsnn", description="Event-camera spiking network tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    p.add_argument("out_dir")
    p.add_argument("--classes", type=int, default=13)
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=72)
    p.add_argument("--duration", type=float, default=3.0, help="seconds per sample")
    p.add_argument("--signal-rate", type=float, default=3000.0, help="signal events per second")
    p.add_argument("--noise", choices=REGIMES + ("mixed",), default="mixed")
    p.add_argument("--noise-rate", type=float, default=None, help="background events per second; overrides --noise")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", help="INI config; missing keys take the defaults")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    p.add_argument("--dataset", help="dataset directory or manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--report", help="report JSON path")
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--timing", action="store_true", help="record wall-clock times in the report")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and confusion matrix on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="dataset directory or manifest")
    p.add_argument("--confusion", help="write the confusion CSV here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one event file")
    p.add_argument("checkpoint")
    p.add_argument("events")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="event stream statistics")
    p.add_argument("events")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except EvsnnError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return DataError.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
