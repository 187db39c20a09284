"""Flat ``key = value`` run configuration.

Grammar, one entry per line::

    # comment
    net.layers = 5
    net.method = "angular-spectrum"
    train.lr = 0.001

Keys are the dotted names in :data:`SCHEMA`; unknown keys are rejected.
Values are coerced to the type of the key's default: integers, floats,
booleans (``true``/``false``, ``yes``/``no``, ``1``/``0``) or strings
(quotes optional). A ``#`` starts a comment unless it is inside quotes.
``--set key=value`` on the command line uses the same value syntax.
"""

from __future__ import annotations

import json
from pathlib import Path

from diffractnet.field import GridGeometry
from diffractnet.network import MFDNetConfig, pick_frequencies
from diffractnet.training import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (default, description)
SCHEMA: dict[str, tuple[object, str]] = {
    "net.layers": (5, "number of modulation layers"),
    "net.nx": (56, "grid width in pixels"),
    "net.ny": (56, "grid height in pixels"),
    "net.pitch": (1.0, "pixel pitch, same unit as wavelengths"),
    "net.spacing": (20.0, "distance between consecutive planes"),
    "net.lambda_min": (0.8, "shortest wavelength"),
    "net.lambda_max": (1.2, "longest wavelength"),
    "net.channels": (3, "number of frequency channels"),
    "net.method": ("sampled-rs", "propagation method: sampled-rs | angular-spectrum"),
    "net.loss": ("cross-entropy", "cross-entropy | mean-squared-error"),
    "net.classes": (10, "number of classes / detector regions"),
    "net.amplitude_trainable": (False, "train amplitudes as well as phases"),
    "net.bias": (False, "add a learnable complex bias per layer"),
    "net.dispersive": (False, "scale layer phase by lambda_ref / lambda per channel"),
    "net.readout": ("modulus", "per-channel output map: modulus | intensity"),
    "train.lr": (1e-3, "learning rate"),
    "train.batch_size": (32, "samples per optimizer step"),
    "train.epochs": (10, "number of epochs"),
    "train.optimizer": ("adam", "adam | sgd-momentum"),
    "train.momentum": (0.9, "sgd momentum"),
    "train.beta1": (0.9, "adam beta1"),
    "train.beta2": (0.999, "adam beta2"),
    "train.epsilon": (1e-8, "adam epsilon"),
    "train.seed": (0, "seed for initialization and shuffling"),
    "train.train_subset": (0, "use the first N training samples (0 = all)"),
    "train.test_subset": (0, "use the first N test samples (0 = all)"),
    "train.timing": (True, "record wall-clock seconds in metrics.csv (false leaves the column empty)"),
    "data.train_images": ("", "training images IDX file"),
    "data.train_labels": ("", "training labels IDX file"),
    "data.test_images": ("", "test images IDX file (optional)"),
    "data.test_labels": ("", "test labels IDX file (optional)"),
    "data.orientation_fix": (False, "transpose images on load (EMNIST)"),
    "out.dir": ("runs/default", "output directory"),
    "out.figures": (True, "render learning_curves.png next to metrics.csv"),
    "gradcheck.probes": (20, "number of probed parameters"),
    "gradcheck.epsilon": (1e-6, "central-difference step"),
    "gradcheck.layers": (2, "layers in the gradcheck network"),
    "gradcheck.channels": (2, "frequency channels in the gradcheck network"),
    "gradcheck.grid": (16, "gradcheck grid side in pixels"),
    "gradcheck.classes": (4, "classes in the gradcheck network"),
    "gradcheck.flip_sign": (False, "negate the analytic gradient (harness self-test)"),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def defaults() -> dict:
    return {k: v for k, (v, _) in SCHEMA.items()}


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def coerce(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    default = SCHEMA[key][0]
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = json.loads(text) if text[0] == '"' else text[1:-1]
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw.strip()!r} as {type(default).__name__}")
    return text


def parse_config_text(text: str, base: dict | None = None) -> dict:
    config = dict(base) if base is not None else defaults()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(line).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        config[key] = coerce(key, value)
    return config


def apply_overrides(config: dict, overrides) -> dict:
    config = dict(config)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config[key.strip()] = coerce(key.strip(), value)
    return config


def load_config(path=None, overrides=()) -> dict:
    config = defaults()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        config = parse_config_text(p.read_text(encoding="utf-8"), config)
    config = apply_overrides(config, overrides)
    validate(config)
    return config


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return json.dumps(value)


def to_text(config: dict, include_output: bool = True) -> str:
    """Serialize every key; ``include_output=False`` drops ``out.*`` (run location, not model state)."""
    keys = [k for k in SCHEMA if include_output or not k.startswith("out.")]
    return "".join(f"{k} = {format_value(config[k])}\n" for k in keys)


def net_config(config: dict) -> MFDNetConfig:
    try:
        geometry = GridGeometry(config["net.nx"], config["net.ny"], config["net.pitch"])
        wavelengths = pick_frequencies(
            config["net.lambda_min"], config["net.lambda_max"], config["net.channels"]
        )
        return MFDNetConfig(
            num_layers=config["net.layers"],
            wavelengths=tuple(wavelengths),
            layer_spacing=config["net.spacing"],
            geometry=geometry,
            method=config["net.method"],
            loss_kind=config["net.loss"],
            num_classes=config["net.classes"],
            amplitude_trainable=config["net.amplitude_trainable"],
            bias_enabled=config["net.bias"],
            dispersive=config["net.dispersive"],
            readout=config["net.readout"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(config: dict) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=config["train.lr"],
            batch_size=config["train.batch_size"],
            epochs=config["train.epochs"],
            optimizer=config["train.optimizer"],
            momentum=config["train.momentum"],
            beta1=config["train.beta1"],
            beta2=config["train.beta2"],
            epsilon=config["train.epsilon"],
            seed=config["train.seed"],
            train_subset=config["train.train_subset"],
            test_subset=config["train.test_subset"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def validate(config: dict) -> None:
    unknown = set(config) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    net_config(config)
    train_config(config)
    if config["gradcheck.probes"] < 1:
        raise ConfigError("gradcheck.probes must be >= 1")
    if not config["gradcheck.epsilon"] > 0:
        raise ConfigError("gradcheck.epsilon must be positive")
    for key in ("gradcheck.layers", "gradcheck.channels", "gradcheck.grid", "gradcheck.classes"):
        if config[key] < 1:
            raise ConfigError(f"{key} must be positive")
