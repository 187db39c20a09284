"""Command-line entry point: ``diffractnet {train,eval,predict,gradcheck,export-maps,compare}``.

Exit status is 0 on success, 1 on runtime failures (bad files, failed
gradient check) and 2 on configuration or usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from diffractnet import config as cfgmod
from diffractnet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from diffractnet.config import ConfigError
from diffractnet.data import (
    IMAGE_SIDE,
    IdxFormatError,
    encode_images,
    load_dataset,
    load_idx,
    read_pgm,
    write_pgm16,
)
from diffractnet.field import GridGeometry
from diffractnet.network import MFDNet, forward_batch, pick_frequencies
from diffractnet.report import metrics_csv, plot_learning_curves, plot_maps
from diffractnet.training import evaluate, fit, grad_check

log = logging.getLogger("diffractnet")

CHECKPOINT_NAME = "checkpoint.mfdn"
METRICS_NAME = "metrics.csv"
CURVES_NAME = "learning_curves.png"


class CommandError(Exception):
    pass


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} path is not set")
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"{what} not found: {p}")
    return p


def _prepare_out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from exc
    probe = out / ".write-test"
    try:
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CommandError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _load_config(args) -> dict:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "out", None) is not None:
        overrides.append(f"out.dir={args.out}")
    return cfgmod.load_config(args.config, overrides)


def _load_image(path, orientation_fix: bool) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"image not found: {p}")
    head = p.read_bytes()[:2]
    if head == b"P5":
        image = read_pgm(p)
    else:
        arr = load_idx(p)
        if arr.ndim == 3 and arr.shape[0] == 1:
            arr = arr[0]
        if arr.ndim != 2:
            raise CommandError(f"{p}: expected a single-image IDX file, got shape {arr.shape}")
        image = arr.T.copy() if orientation_fix else arr
    if image.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise CommandError(f"{p}: expected a {IMAGE_SIDE}x{IMAGE_SIDE} image, got {image.shape[1]}x{image.shape[0]}")
    return image


def cmd_train(args) -> int:
    config = _load_config(args)
    ncfg = cfgmod.net_config(config)
    tcfg = cfgmod.train_config(config)
    train_paths = (
        _require_file(config["data.train_images"], "training images"),
        _require_file(config["data.train_labels"], "training labels"),
    )
    test_paths = None
    if config["data.test_images"] or config["data.test_labels"]:
        test_paths = (
            _require_file(config["data.test_images"], "test images"),
            _require_file(config["data.test_labels"], "test labels"),
        )
    fix = config["data.orientation_fix"]
    train = load_dataset(*train_paths, ncfg.num_classes, fix).subset(tcfg.train_subset)
    test = None
    if test_paths:
        test = load_dataset(*test_paths, ncfg.num_classes, fix).subset(tcfg.test_subset)
    out = _prepare_out_dir(config["out.dir"])

    net = MFDNet.create(ncfg, tcfg.seed)
    log.info(
        "training %d samples, %d layers, %d channels, %d trainable parameters",
        len(train), ncfg.num_layers, ncfg.num_channels, net.num_trainable,
    )
    timing = config["train.timing"]
    metrics_path = out / METRICS_NAME
    history = []

    def record(m):
        history.append(m)
        metrics_path.write_text(metrics_csv(history, timing), encoding="ascii")
        log.info(
            "epoch %d  loss %.4f  train %.4f  test %.4f  (%.1fs)",
            m.epoch, m.train_loss, m.train_acc, m.test_acc, m.seconds,
        )

    fit(net, train, tcfg, test, record)
    save_checkpoint(out / CHECKPOINT_NAME, net, config)
    if config["out.figures"]:
        plot_learning_curves(history, out / CURVES_NAME, f"F = {ncfg.num_channels}, L = {ncfg.num_layers}")
    print(f"wrote {metrics_path} and {out / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args) -> int:
    net, config = load_checkpoint(args.checkpoint)
    images = args.images or config["data.test_images"]
    labels = args.labels or config["data.test_labels"]
    images_p = _require_file(images, "evaluation images")
    labels_p = _require_file(labels, "evaluation labels")
    classes = net.config.num_classes
    if args.classes is not None and args.classes != classes:
        raise CommandError(f"dataset declares {args.classes} classes but checkpoint has {classes}")
    raw_labels = load_idx(labels_p)
    if raw_labels.size and int(raw_labels.max()) >= classes:
        raise CommandError(
            f"labels reach {int(raw_labels.max())} but the checkpoint has only {classes} classes"
        )
    dataset = load_dataset(images_p, labels_p, classes, config["data.orientation_fix"])
    if not args.all:
        dataset = dataset.subset(config["train.test_subset"])
    print(f"{evaluate(net, dataset):.4f}")
    return 0


def _scores(net: MFDNet, image: np.ndarray):
    trace = forward_batch(net, encode_images(image, net.config.geometry))
    return trace, trace.logits[0]


def cmd_predict(args) -> int:
    net, config = load_checkpoint(args.checkpoint)
    image = _load_image(args.image, config["data.orientation_fix"])
    _, scores = _scores(net, image)
    print(int(np.argmax(scores)))
    print(" ".join(format(s, ".9g") for s in scores))
    return 0


def gradcheck_net(config: dict) -> MFDNet:
    base = cfgmod.net_config(config)
    side = config["gradcheck.grid"]
    ncfg = replace(
        base,
        num_layers=config["gradcheck.layers"],
        wavelengths=tuple(pick_frequencies(config["net.lambda_min"], config["net.lambda_max"], config["gradcheck.channels"])),
        geometry=GridGeometry(side, side, base.geometry.pitch),
        num_classes=config["gradcheck.classes"],
        amplitude_trainable=True,
        bias_enabled=True,
    )
    return MFDNet.create(ncfg, config["train.seed"])


def cmd_gradcheck(args) -> int:
    config = _load_config(args)
    try:
        net = gradcheck_net(config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(config["train.seed"])
    sample = rng.uniform(0, 1, net.config.geometry.shape)
    sample = sample / np.sqrt(np.sum(sample**2))
    label = int(rng.integers(net.config.num_classes))
    worst = grad_check(
        net,
        sample,
        label,
        config["gradcheck.probes"],
        config["gradcheck.epsilon"],
        seed=config["train.seed"],
        flip_sign=config["gradcheck.flip_sign"],
    )
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def cmd_export_maps(args) -> int:
    net, config = load_checkpoint(args.checkpoint)
    image = _load_image(args.image, config["data.orientation_fix"])
    out = _prepare_out_dir(args.out)
    trace, scores = _scores(net, image)
    predicted = int(np.argmax(scores))
    channels = [c[0] for c in trace.channels]
    for f, ch in enumerate(channels):
        write_pgm16(out / f"channel_{f}.pgm", ch)
    merged = trace.merged[0]
    write_pgm16(out / "merged.pgm", merged)
    if args.png:
        plot_maps(channels, merged, net.detector.regions, net.config.wavelengths, out / "maps.png", predicted)
    peak = np.unravel_index(np.argmax(merged), merged.shape)
    y0, y1, x0, x1 = net.detector.regions[predicted]
    inside = y0 <= peak[0] < y1 and x0 <= peak[1] < x1 and merged.max() > 0
    print(f"predicted class {predicted}; brightest merged pixel {tuple(int(v) for v in peak)} "
          f"{'inside' if inside else 'outside'} its detector region")
    print(f"wrote {len(channels) + 1} maps to {out}")
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


def cmd_compare(args) -> int:
    from diffractnet.experiments import compare_channels

    config = _load_config(args)
    channels = _int_list(args.channels)
    seeds = _int_list(args.seeds)
    if not channels or min(channels) < 1 or not seeds:
        raise ConfigError("--channels and --seeds need at least one value; channel counts must be >= 1")
    ncfg = cfgmod.net_config(config)
    tcfg = cfgmod.train_config(config)
    fix = config["data.orientation_fix"]
    train = load_dataset(
        _require_file(config["data.train_images"], "training images"),
        _require_file(config["data.train_labels"], "training labels"),
        ncfg.num_classes, fix,
    ).subset(tcfg.train_subset)
    test = load_dataset(
        _require_file(config["data.test_images"], "test images"),
        _require_file(config["data.test_labels"], "test labels"),
        ncfg.num_classes, fix,
    ).subset(tcfg.test_subset)
    out = _prepare_out_dir(config["out.dir"])
    result = compare_channels(
        train, test, ncfg, tcfg, channels, seeds,
        (config["net.lambda_min"], config["net.lambda_max"]), out,
    )
    for f in channels:
        accs = ", ".join(f"{a:.4f}" for a in result.final_test_acc(f))
        print(f"F={f}: mean test accuracy {result.mean_test_acc(f):.4f} ({accs})")
    print(f"wrote {out / 'compare.csv'} and {out / 'channel_curves.png'} in {result.seconds:.0f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffractnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")

    p = sub.add_parser("train", help="train a network and write metrics + checkpoint")
    config_flags(p)
    p.add_argument("--out", help="output directory (out.dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a labeled dataset")
    p.add_argument("checkpoint")
    p.add_argument("--images", help="IDX images (default: checkpoint's test set)")
    p.add_argument("--labels", help="IDX labels (default: checkpoint's test set)")
    p.add_argument("--classes", type=int, help="class count the dataset is expected to have")
    p.add_argument("--all", action="store_true", help="ignore train.test_subset and use every sample")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one 28x28 P5 graymap or 1-sample IDX file")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="compare backprop with central differences")
    config_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare", help="train F-channel variants over several seeds and plot test accuracy")
    config_flags(p)
    p.add_argument("--out", help="output directory (out.dir)")
    p.add_argument("--channels", default="1,3", help="comma-separated channel counts (default 1,3)")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (default 0,1,2)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-maps", help="write channel and merged output maps as 16-bit PGM")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--png", action="store_true", help="also render maps.png")
    p.set_defaults(func=cmd_export_maps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"diffractnet: config error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, CheckpointError, IdxFormatError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"diffractnet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
