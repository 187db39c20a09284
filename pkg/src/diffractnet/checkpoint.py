"""MFDN checkpoint files.

Byte layout, all integers and floats little-endian::

    "MFDN"                       4 ASCII bytes
    version                      u32 (currently 1)
    config length N              u32
    config text                  N bytes, UTF-8 (see diffractnet.config);
                                 out.* keys are omitted
    for each layer:              amplitude grid then phase grid,
                                 ny*nx f64 each, row-major (x fastest)
    bias pairs                   (re, im) f64 per layer, only if net.bias
    channel weights              F f64
    checksum                     u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from diffractnet.config import ConfigError, net_config, parse_config_text, to_text, validate
from diffractnet.layers import ModulationParams
from diffractnet.network import MFDNet

MAGIC = b"MFDN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(net: MFDNet, config: dict) -> bytes:
    text = to_text(config, include_output=False).encode("utf-8")
    if net_config(config) != net.config:
        raise CheckpointError("run config does not describe this network")
    parts = [MAGIC, struct.pack("<II", VERSION, len(text)), text]
    for p in net.layers:
        parts.append(np.ascontiguousarray(p.amplitude, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(p.phase, dtype="<f8").tobytes())
    if net.config.bias_enabled:
        for p in net.layers:
            parts.append(struct.pack("<dd", p.bias.real, p.bias.imag))
    parts.append(np.ascontiguousarray(net.channel_weights, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, net: MFDNet, config: dict) -> None:
    Path(path).write_bytes(checkpoint_bytes(net, config))


def parse_checkpoint(data: bytes) -> tuple[MFDNet, dict]:
    if len(data) < 16:
        raise CheckpointError("checkpoint is truncated")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (file corrupt or truncated)")
    version, n = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12 + n
    try:
        config = parse_config_text(body[12:pos].decode("utf-8"))
        validate(config)
    except (UnicodeDecodeError, ConfigError) as exc:
        raise CheckpointError(f"invalid embedded config: {exc}") from exc
    cfg = net_config(config)
    shape = cfg.geometry.shape
    grid_bytes = 8 * cfg.geometry.size
    expected = pos + 2 * grid_bytes * cfg.num_layers + 8 * cfg.num_channels
    if cfg.bias_enabled:
        expected += 16 * cfg.num_layers
    if len(body) != expected:
        raise CheckpointError(f"checkpoint body is {len(body)} bytes, expected {expected}")

    def take(count):
        nonlocal pos
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    grids = []
    for _ in range(cfg.num_layers):
        amp = take(cfg.geometry.size).reshape(shape)
        phase = take(cfg.geometry.size).reshape(shape)
        grids.append((amp, phase))
    biases = [complex(*take(2)) for _ in range(cfg.num_layers)] if cfg.bias_enabled else [None] * cfg.num_layers
    weights = take(cfg.num_channels)
    try:
        layers = [
            ModulationParams(cfg.geometry, amp, phase, b, cfg.amplitude_trainable)
            for (amp, phase), b in zip(grids, biases)
        ]
        net = MFDNet(cfg, layers, weights)
    except ValueError as exc:
        raise CheckpointError(f"invalid checkpoint parameters: {exc}") from exc
    return net, config


def load_checkpoint(path) -> tuple[MFDNet, dict]:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    return parse_checkpoint(p.read_bytes())
