"""Multi-frequency diffractive network: shared layers, per-wavelength channels,
weighted merge of output moduli, and a detector-region classifier.

All heavy lifting is batched over a leading sample axis. The single-sample
functions (:func:`forward`, :func:`predict`, ...) are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from diffractnet.field import ComplexField, GridGeometry, RealMap
from diffractnet.layers import (
    ModulationParams,
    ParamGrad,
    modulate_array,
    modulate_backward_array,
)
from diffractnet.propagation import METHODS, SAMPLED_RS, KernelCache, PropagationKernel, apply_kernel

CROSS_ENTROPY = "cross-entropy"
MSE = "mean-squared-error"
LOSS_KINDS = (CROSS_ENTROPY, MSE)
READOUTS = ("modulus", "intensity")


def pick_frequencies(lambda_min: float, lambda_max: float, count: int) -> list[float]:
    """``count`` wavelengths evenly spaced over ``[lambda_min, lambda_max]``.

    A single channel sits at the midpoint of the range.
    """
    if not 0 < lambda_min <= lambda_max:
        raise ValueError(f"need 0 < lambda_min <= lambda_max, got {lambda_min}, {lambda_max}")
    if count < 1:
        raise ValueError(f"channel count must be >= 1, got {count}")
    if count == 1:
        return [0.5 * (lambda_min + lambda_max)]
    return [float(v) for v in np.linspace(lambda_min, lambda_max, count)]


@dataclass(frozen=True)
class DetectorLayout:
    # (y0, y1, x0, x1), half-open
    regions: tuple[tuple[int, int, int, int], ...]
    geometry: GridGeometry

    def __post_init__(self):
        ny, nx = self.geometry.shape
        occupied = np.zeros((ny, nx), dtype=bool)
        for y0, y1, x0, x1 in self.regions:
            if not (0 <= y0 < y1 <= ny and 0 <= x0 < x1 <= nx):
                raise ValueError(f"detector region {(y0, y1, x0, x1)} is empty or out of bounds")
            if occupied[y0:y1, x0:x1].any():
                raise ValueError("detector regions overlap")
            occupied[y0:y1, x0:x1] = True

    @property
    def num_classes(self) -> int:
        return len(self.regions)

    def sums(self, values: np.ndarray) -> np.ndarray:
        """Per-region totals of ``values`` with shape ``(..., ny, nx)`` -> ``(..., C)``."""
        return np.stack(
            [values[..., y0:y1, x0:x1].sum(axis=(-2, -1)) for y0, y1, x0, x1 in self.regions],
            axis=-1,
        )

    def masks(self) -> np.ndarray:
        out = np.zeros((len(self.regions),) + self.geometry.shape)
        for c, (y0, y1, x0, x1) in enumerate(self.regions):
            out[c, y0:y1, x0:x1] = 1.0
        return out


def make_detector_layout(geometry: GridGeometry, num_classes: int) -> DetectorLayout:
    """Equal squares on the smallest ``g x g`` cell grid holding ``num_classes`` cells.

    Cells are filled row-major; each square spans the central half of its
    cell along each axis. Squares narrower than 2 pixels are rejected.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    g = math.isqrt(num_classes - 1) + 1
    cell = min(geometry.nx, geometry.ny) // g
    side = cell // 2
    if side < 2:
        raise ValueError(
            f"{geometry.nx}x{geometry.ny} grid too small for {num_classes} detector regions"
        )
    y_origin = (geometry.ny - g * cell) // 2
    x_origin = (geometry.nx - g * cell) // 2
    inset = (cell - side) // 2
    regions = []
    for c in range(num_classes):
        row, col = divmod(c, g)
        y0 = y_origin + row * cell + inset
        x0 = x_origin + col * cell + inset
        regions.append((y0, y0 + side, x0, x0 + side))
    return DetectorLayout(tuple(regions), geometry)


@dataclass(frozen=True)
class MFDNetConfig:
    num_layers: int = 5
    wavelengths: tuple[float, ...] = (0.8, 1.0, 1.2)
    layer_spacing: float = 20.0
    geometry: GridGeometry = GridGeometry(56, 56, 1.0)
    method: str = SAMPLED_RS
    loss_kind: str = CROSS_ENTROPY
    num_classes: int = 10
    amplitude_trainable: bool = False
    bias_enabled: bool = False
    dispersive: bool = False
    readout: str = "modulus"

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        wl = self.wavelengths
        if len(wl) < 1:
            raise ValueError("at least one wavelength is required")
        if any(not w > 0 for w in wl):
            raise ValueError("wavelengths must be positive")
        if list(wl) != sorted(wl):
            raise ValueError("wavelengths must be sorted ascending")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.layer_spacing > 0:
            raise ValueError("layer_spacing must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss_kind!r}")
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout {self.readout!r}")

    @property
    def num_channels(self) -> int:
        return len(self.wavelengths)

    def phase_scales(self) -> list[float]:
        """Per-channel phase multipliers; all 1 unless the layers are dispersive."""
        if not self.dispersive:
            return [1.0] * self.num_channels
        ref = 0.5 * (self.wavelengths[0] + self.wavelengths[-1])
        return [ref / w for w in self.wavelengths]


class MFDNet:
    def __init__(
        self,
        config: MFDNetConfig,
        layers: list[ModulationParams],
        channel_weights,
        detector: DetectorLayout | None = None,
    ):
        if len(layers) != config.num_layers:
            raise ValueError(f"expected {config.num_layers} layers, got {len(layers)}")
        for p in layers:
            if p.geometry != config.geometry:
                raise ValueError("layer geometry does not match config")
            if p.amplitude_trainable != config.amplitude_trainable:
                raise ValueError("layer amplitude_trainable flag does not match config")
            if (p.bias is not None) != config.bias_enabled:
                raise ValueError("layer bias presence does not match config")
        weights = np.array(channel_weights, dtype=np.float64).reshape(-1)
        if weights.shape != (config.num_channels,):
            raise ValueError(f"expected {config.num_channels} channel weights, got {weights.size}")
        self.config = config
        self.layers = layers
        self.channel_weights = weights
        self.detector = detector or make_detector_layout(config.geometry, config.num_classes)
        if self.detector.num_classes != config.num_classes:
            raise ValueError("detector layout does not match num_classes")
        self._cache = KernelCache()
        self._masks = self.detector.masks()
        self.version = 0

    @classmethod
    def create(cls, config: MFDNetConfig, seed=0) -> MFDNet:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        layers = [
            ModulationParams.initial(
                config.geometry, rng, config.amplitude_trainable, config.bias_enabled
            )
            for _ in range(config.num_layers)
        ]
        weights = np.full(config.num_channels, 1.0 / config.num_channels)
        return cls(config, layers, weights)

    def kernel(self, f: int) -> PropagationKernel:
        c = self.config
        return self._cache.get(c.geometry, c.wavelengths[f], c.layer_spacing, c.method)

    @property
    def kernels(self) -> list[list[PropagationKernel]]:
        """``F x (L+1)`` hop kernels; hops share spacing so each row repeats one object."""
        return [[self.kernel(f)] * (self.config.num_layers + 1) for f in range(self.config.num_channels)]

    @property
    def num_trainable(self) -> int:
        return sum(p.num_trainable for p in self.layers) + self.channel_weights.size

    def copy(self) -> MFDNet:
        net = MFDNet(self.config, [p.copy() for p in self.layers], self.channel_weights.copy(), self.detector)
        net._cache = self._cache
        return net

    def touch(self) -> None:
        """Mark parameters as changed; traces taken before become stale."""
        self.version += 1


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    # pre_modulation[f][l]: field arriving at layer l for channel f
    pre_modulation: list[list[np.ndarray]]
    outputs: list[np.ndarray]
    channels: list[np.ndarray]
    merged: np.ndarray
    logits: np.ndarray
    geometry: GridGeometry
    net_id: int = field(default=0, repr=False)
    net_version: int = field(default=0, repr=False)

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]

    def channel_map(self, f: int, index: int = 0) -> RealMap:
        return RealMap(self.geometry, self.channels[f][index])

    def merged_map(self, index: int = 0) -> RealMap:
        # raises if negative channel weights drove the merge below zero
        return RealMap(self.geometry, self.merged[index])


@dataclass
class NetGradients:
    layers: list[ParamGrad]
    d_weights: np.ndarray


def _readout_channel(u: np.ndarray, readout: str) -> np.ndarray:
    if readout == "intensity":
        return u.real**2 + u.imag**2
    return np.abs(u)


def forward_batch(net: MFDNet, inputs: np.ndarray) -> ForwardTrace:
    """Run every channel over a batch ``(B, ny, nx)`` of complex input planes."""
    cfg = net.config
    inputs = np.asarray(inputs, dtype=np.complex128)
    if inputs.ndim == 2:
        inputs = inputs[None]
    if inputs.shape[-2:] != cfg.geometry.shape:
        raise ValueError(f"input shape {inputs.shape[-2:]} does not match network grid {cfg.geometry.shape}")
    scales = cfg.phase_scales()
    pre, outputs, channels = [], [], []
    merged = np.zeros(inputs.shape, dtype=np.float64)
    for f in range(cfg.num_channels):
        kernel = net.kernel(f)
        u = inputs
        cache = []
        for params in net.layers:
            z = apply_kernel(u, kernel)
            cache.append(z)
            u = modulate_array(z, params, scales[f])
        u = apply_kernel(u, kernel)
        channel = _readout_channel(u, cfg.readout)
        pre.append(cache)
        outputs.append(u)
        channels.append(channel)
        merged = merged + net.channel_weights[f] * channel
    logits = net.detector.sums(merged)
    return ForwardTrace(inputs, pre, outputs, channels, merged, logits, cfg.geometry, id(net), net.version)


def forward(net: MFDNet, input: ComplexField) -> ForwardTrace:
    if input.geometry != net.config.geometry:
        raise ValueError(f"input geometry {input.geometry} does not match network {net.config.geometry}")
    return forward_batch(net, input.values[None])


def detector_readout(merged: RealMap, layout: DetectorLayout) -> np.ndarray:
    if merged.geometry.shape != layout.geometry.shape:
        raise ValueError("merged map does not match detector layout grid")
    return layout.sums(merged.values)


def loss_and_grad(logits: np.ndarray, labels, kind: str = CROSS_ENTROPY) -> tuple[float, np.ndarray]:
    """Batch-mean loss and its gradient with respect to the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label out of range for {c} classes")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    if kind == CROSS_ENTROPY:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - log_z
        value = -np.mean(log_p[np.arange(b), labels])
        grad = (np.exp(log_p) - onehot) / b
    elif kind == MSE:
        diff = logits - onehot
        value = np.mean(np.mean(diff**2, axis=1))
        grad = 2.0 * diff / (c * b)
    else:
        raise ValueError(f"unknown loss {kind!r}")
    return float(value), grad


def loss(trace: ForwardTrace, label, kind: str = CROSS_ENTROPY) -> float:
    return loss_and_grad(trace.logits, label, kind)[0]


def backward(net: MFDNet, trace: ForwardTrace, labels) -> NetGradients:
    """Exact gradient of the batch-mean loss with respect to every trainable parameter."""
    if trace is None or trace.net_id != id(net) or trace.net_version != net.version:
        raise ValueError("trace was not produced by this network in its current state")
    cfg = net.config
    _, grad_logits = loss_and_grad(trace.logits, labels, cfg.loss_kind)
    grad_merged = np.einsum("bc,cij->bij", grad_logits, net._masks)
    d_weights = np.array([np.sum(grad_merged * ch) for ch in trace.channels])
    layer_grads = [ParamGrad.zeros_like(p) for p in net.layers]
    scales = cfg.phase_scales()
    for f in range(cfg.num_channels):
        kernel = net.kernel(f)
        g_channel = net.channel_weights[f] * grad_merged
        u = trace.outputs[f]
        if cfg.readout == "intensity":
            g = 2.0 * g_channel * u
        else:
            mag = np.abs(u)
            safe = np.where(mag > 0, mag, 1.0)
            g = np.where(mag > 0, g_channel * u / safe, 0.0)
        g = apply_kernel(g, kernel, adjoint=True)
        for l in range(cfg.num_layers - 1, -1, -1):
            g, pg = modulate_backward_array(g, trace.pre_modulation[f][l], net.layers[l], scales[f])
            layer_grads[l] += pg
            g = apply_kernel(g, kernel, adjoint=True)
    if not cfg.amplitude_trainable:
        for pg in layer_grads:
            pg.d_amplitude = np.zeros_like(pg.d_amplitude)
    return NetGradients(layer_grads, d_weights)


def predict_batch(net: MFDNet, inputs: np.ndarray) -> np.ndarray:
    return np.argmax(forward_batch(net, inputs).logits, axis=1)


def predict(net: MFDNet, input: ComplexField) -> int:
    """Index of the brightest detector region; ties go to the lowest index."""
    return int(np.argmax(forward(net, input).logits[0]))


def with_channels(config: MFDNetConfig, wavelengths) -> MFDNetConfig:
    return replace(config, wavelengths=tuple(wavelengths))
