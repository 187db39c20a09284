"""Optimizers, the epoch loop, evaluation and finite-difference gradient checks.

Trainable parameters are handled as one flat float vector. Per layer the
order is phase, amplitude (when trainable), bias real/imag (when enabled);
the channel weights come last.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from diffractnet.data import Dataset, batches, encode_images
from diffractnet.network import MFDNet, NetGradients, backward, forward_batch, loss_and_grad

OPTIMIZERS = ("adam", "sgd-momentum")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    train_subset: int = 0
    test_subset: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if self.train_subset < 0 or self.test_subset < 0:
            raise ValueError("subset sizes must be >= 0")


def parameter_kinds(net: MFDNet) -> list[str]:
    """Kind label (``phase``, ``amplitude``, ``bias``, ``weight``) of every flat entry."""
    kinds: list[str] = []
    for p in net.layers:
        kinds += ["phase"] * p.phase.size
        if p.amplitude_trainable:
            kinds += ["amplitude"] * p.amplitude.size
        if p.bias is not None:
            kinds += ["bias", "bias"]
    kinds += ["weight"] * net.channel_weights.size
    return kinds


def get_flat_params(net: MFDNet) -> np.ndarray:
    parts = []
    for p in net.layers:
        parts.append(p.phase.ravel())
        if p.amplitude_trainable:
            parts.append(p.amplitude.ravel())
        if p.bias is not None:
            parts.append(np.array([p.bias.real, p.bias.imag]))
    parts.append(net.channel_weights)
    return np.concatenate(parts)


def set_flat_params(net: MFDNet, vec: np.ndarray) -> None:
    if vec.shape != (net.num_trainable,):
        raise ValueError(f"expected {net.num_trainable} parameters, got {vec.shape}")
    i = 0
    for p in net.layers:
        n = p.phase.size
        p.phase = vec[i : i + n].reshape(p.phase.shape).copy()
        i += n
        if p.amplitude_trainable:
            p.amplitude = vec[i : i + n].reshape(p.amplitude.shape).copy()
            i += n
        if p.bias is not None:
            p.bias = complex(vec[i], vec[i + 1])
            i += 2
    net.channel_weights = vec[i:].copy()
    net.touch()


def flatten_grads(net: MFDNet, grads: NetGradients) -> np.ndarray:
    if len(grads.layers) != len(net.layers):
        raise ValueError("gradient layer count does not match network")
    parts = []
    for p, g in zip(net.layers, grads.layers):
        if g.d_phase.shape != p.phase.shape:
            raise ValueError("gradient shape does not match layer")
        parts.append(g.d_phase.ravel())
        if p.amplitude_trainable:
            parts.append(g.d_amplitude.ravel())
        if p.bias is not None:
            parts.append(np.array([g.d_bias.real, g.d_bias.imag]))
    parts.append(np.asarray(grads.d_weights, dtype=np.float64))
    return np.concatenate(parts)


@dataclass
class OptimizerState:
    kind: str
    first: np.ndarray
    second: np.ndarray | None = None
    steps: int = 0

    @classmethod
    def create(cls, net_or_size, config: TrainConfig) -> OptimizerState:
        n = net_or_size if isinstance(net_or_size, int) else net_or_size.num_trainable
        second = np.zeros(n) if config.optimizer == "adam" else None
        return cls(config.optimizer, np.zeros(n), second)


def update_vector(theta: np.ndarray, grad: np.ndarray, state: OptimizerState, config: TrainConfig) -> np.ndarray:
    """One optimizer update on a flat vector; ``state`` is advanced in place."""
    if theta.shape != grad.shape or state.first.shape != grad.shape:
        raise ValueError(f"shape mismatch: params {theta.shape}, grads {grad.shape}, state {state.first.shape}")
    state.steps += 1
    lr = config.learning_rate
    if state.kind == "adam":
        b1, b2 = config.beta1, config.beta2
        state.first = b1 * state.first + (1 - b1) * grad
        state.second = b2 * state.second + (1 - b2) * grad * grad
        m_hat = state.first / (1 - b1**state.steps)
        v_hat = state.second / (1 - b2**state.steps)
        return theta - lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
    state.first = config.momentum * state.first + grad
    return theta - lr * state.first


def step(net: MFDNet, grads: NetGradients, state: OptimizerState, config: TrainConfig) -> MFDNet:
    theta = update_vector(get_flat_params(net), flatten_grads(net, grads), state, config)
    set_flat_params(net, theta)
    for p in net.layers:
        if p.amplitude_trainable:
            np.maximum(p.amplitude, 0.0, out=p.amplitude)
    return net


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    seconds: float


def _check_classes(net: MFDNet, dataset: Dataset) -> None:
    if dataset.num_classes != net.config.num_classes:
        raise ValueError(
            f"dataset has {dataset.num_classes} classes but the network has {net.config.num_classes}"
        )


def eval_chunk(net: MFDNet) -> int:
    return max(1, (1 << 19) // net.config.geometry.size)


def evaluate(net: MFDNet, dataset: Dataset) -> float:
    """Fraction of samples whose predicted class equals the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    chunk = eval_chunk(net)
    for i in range(0, len(dataset), chunk):
        x = encode_images(dataset.images[i : i + chunk], net.config.geometry)
        pred = np.argmax(forward_batch(net, x).logits, axis=1)
        correct += int(np.sum(pred == dataset.labels[i : i + chunk]))
    return correct / len(dataset)


def train_epoch(
    net: MFDNet,
    dataset: Dataset,
    config: TrainConfig,
    state: OptimizerState,
    epoch: int = 1,
    shuffle_seed=None,
    test: Dataset | None = None,
) -> EpochMetrics:
    """One shuffled pass with one optimizer step per batch.

    Loss and accuracy are accumulated from the forward passes taken before
    each step. ``test_acc`` is NaN when no test set is given.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    _check_classes(net, dataset)
    start = time.perf_counter()
    seed = config.seed if shuffle_seed is None else shuffle_seed
    total_loss = 0.0
    correct = 0
    for idx in batches(dataset, config.batch_size, seed):
        x = encode_images(dataset.images[idx], net.config.geometry)
        y = dataset.labels[idx]
        trace = forward_batch(net, x)
        value, _ = loss_and_grad(trace.logits, y, net.config.loss_kind)
        total_loss += value * len(idx)
        correct += int(np.sum(np.argmax(trace.logits, axis=1) == y))
        step(net, backward(net, trace, y), state, config)
    test_acc = float("nan")
    if test is not None:
        _check_classes(net, test)
        test_acc = evaluate(net, test)
    return EpochMetrics(
        epoch,
        total_loss / len(dataset),
        correct / len(dataset),
        test_acc,
        time.perf_counter() - start,
    )


def epoch_seeds(seed: int, epochs: int) -> list[int]:
    children = np.random.SeedSequence([int(seed), 1]).spawn(epochs)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def fit(net: MFDNet, train: Dataset, config: TrainConfig, test: Dataset | None = None, callback=None):
    """Run ``config.epochs`` epochs; returns the list of :class:`EpochMetrics`."""
    state = OptimizerState.create(net, config)
    history = []
    for epoch, seed in enumerate(epoch_seeds(config.seed, config.epochs), start=1):
        metrics = train_epoch(net, train, config, state, epoch, seed, test)
        history.append(metrics)
        if callback is not None:
            callback(metrics)
    return history


def _relative_error(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale < 1e-12:
        return 0.0
    return abs(a - b) / scale


def grad_check(
    net: MFDNet,
    sample: np.ndarray,
    label: int,
    n_probes: int = 20,
    epsilon: float = 1e-6,
    seed: int = 0,
    flip_sign: bool = False,
    return_details: bool = False,
):
    """Worst relative error between ``backward`` and central differences.

    Probes are spread round-robin over the parameter kinds present in the
    network (phase, amplitude, bias, weight). ``flip_sign`` negates the
    analytic gradient and exists only to show the check can fail.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    sample = np.asarray(sample, dtype=np.complex128)
    if sample.ndim == 2:
        sample = sample[None]
    labels = np.atleast_1d(label)
    kind = net.config.loss_kind

    trace = forward_batch(net, sample)
    analytic = flatten_grads(net, backward(net, trace, labels))
    if flip_sign:
        analytic = -analytic

    rng = np.random.default_rng(seed)
    kinds = np.array(parameter_kinds(net))
    pools = [rng.permutation(np.flatnonzero(kinds == k)) for k in dict.fromkeys(kinds)]
    probes = []
    while len(probes) < n_probes and any(len(p) for p in pools):
        for i, pool in enumerate(pools):
            if len(pool) and len(probes) < n_probes:
                probes.append(int(pool[0]))
                pools[i] = pool[1:]

    theta = get_flat_params(net)
    details = []
    worst = 0.0
    try:
        for i in probes:
            values = []
            for sign in (1.0, -1.0):
                shifted = theta.copy()
                shifted[i] += sign * epsilon
                set_flat_params(net, shifted)
                values.append(loss_and_grad(forward_batch(net, sample).logits, labels, kind)[0])
            numeric = (values[0] - values[1]) / (2 * epsilon)
            err = _relative_error(analytic[i], numeric)
            worst = max(worst, err)
            details.append((i, str(kinds[i]), float(analytic[i]), numeric, err))
    finally:
        set_flat_params(net, theta)
    if math.isnan(worst):
        worst = math.inf
    return (worst, details) if return_details else worst
