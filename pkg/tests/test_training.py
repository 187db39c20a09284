import os
from pathlib import Path

import numpy as np
import pytest

from diffractnet.data import Dataset, encode_images, load_dataset
from diffractnet.layers import ParamGrad
from diffractnet.network import MFDNet, MFDNetConfig, NetGradients, forward_batch, pick_frequencies
from diffractnet.training import (
    OptimizerState,
    TrainConfig,
    evaluate,
    fit,
    get_flat_params,
    grad_check,
    set_flat_params,
    step,
    train_epoch,
    update_vector,
)

from conftest import small_net, synthetic_images


def test_train_config_validation():
    for bad in (dict(learning_rate=0), dict(batch_size=0), dict(epochs=0), dict(optimizer="lbfgs")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_zero_gradient_leaves_params():
    for opt in ("adam", "sgd-momentum"):
        cfg = TrainConfig(optimizer=opt)
        state = OptimizerState.create(3, cfg)
        theta = np.array([0.5, -1.0, 2.0])
        assert np.array_equal(update_vector(theta, np.zeros(3), state, cfg), theta)


def test_adam_first_step():
    cfg = TrainConfig(learning_rate=1e-3)
    state = OptimizerState.create(1, cfg)
    new = update_vector(np.array([0.0]), np.array([0.5]), state, cfg)
    # bias-corrected first step: -lr * g / (|g| + eps)
    assert new[0] == pytest.approx(-1e-3 * 0.5 / (0.5 + 1e-8), rel=1e-12)
    assert state.steps == 1


def test_sgd_momentum_second_step():
    cfg = TrainConfig(optimizer="sgd-momentum", learning_rate=0.1, momentum=0.9)
    state = OptimizerState.create(1, cfg)
    g = np.array([2.0])
    t1 = update_vector(np.array([0.0]), g, state, cfg)
    t2 = update_vector(t1, g, state, cfg)
    assert t1[0] == pytest.approx(-0.2)
    assert t2[0] - t1[0] == pytest.approx(-1.9 * 0.1 * 2.0)


def test_update_shape_mismatch():
    cfg = TrainConfig()
    with pytest.raises(ValueError):
        update_vector(np.zeros(3), np.zeros(2), OptimizerState.create(3, cfg), cfg)


def test_flat_params_roundtrip():
    net = small_net(layers=2, channels=2, amplitude_trainable=True, bias_enabled=True)
    theta = get_flat_params(net)
    assert theta.size == net.num_trainable
    set_flat_params(net, theta * 1.5)
    assert np.array_equal(get_flat_params(net), theta * 1.5)
    # layer 0 holds phase, amplitude, bias -> 514 entries; layer 1 bias follows its two grids
    assert net.layers[1].bias == complex(theta[1026] * 1.5, theta[1027] * 1.5)


def test_amplitude_stays_nonnegative(rng):
    net = small_net(layers=3, channels=2, amplitude_trainable=True)
    grads = NetGradients(
        [ParamGrad(np.full((16, 16), 1e3), np.zeros((16, 16))) for _ in net.layers], np.zeros(2)
    )
    cfg = TrainConfig(optimizer="sgd-momentum", learning_rate=10.0)
    state = OptimizerState.create(net, cfg)
    for _ in range(3):
        step(net, grads, state, cfg)
        assert all(np.all(p.amplitude >= 0) for p in net.layers)
    assert all(np.all(p.amplitude == 0) for p in net.layers)


def _dataset(n, seed, classes=10):
    images, labels = synthetic_images(n, seed, classes)
    return Dataset(images, labels.astype(np.int64), classes)


def _net(seed=0, channels=3):
    return MFDNet.create(MFDNetConfig(wavelengths=tuple(pick_frequencies(0.8, 1.2, channels))), seed)


def test_train_epoch_deterministic():
    data = _dataset(64, 5)
    cfg = TrainConfig(batch_size=16, epochs=1, seed=9)
    runs = []
    for _ in range(2):
        net = _net(seed=1, channels=2)
        m = train_epoch(net, data, cfg, OptimizerState.create(net, cfg), 1, 9, data)
        runs.append((m.train_loss, m.train_acc, m.test_acc, get_flat_params(net).tobytes()))
    assert runs[0] == runs[1]


def test_batch_larger_than_dataset_is_one_step():
    data = _dataset(10, 6)
    cfg = TrainConfig(batch_size=1000)
    net = _net(channels=1)
    state = OptimizerState.create(net, cfg)
    train_epoch(net, data, cfg, state)
    assert state.steps == 1


def test_class_count_mismatch():
    net = _net(channels=1)
    data = Dataset(np.zeros((2, 28, 28), np.uint8), np.array([0, 1]), 47)
    cfg = TrainConfig()
    with pytest.raises(ValueError):
        train_epoch(net, data, cfg, OptimizerState.create(net, cfg))


def test_evaluate_cases():
    data = _dataset(50, 7)
    net = _net(channels=1)
    acc = evaluate(net, data)
    assert 0.0 <= acc <= 1.0
    assert evaluate(net, data) == acc
    with pytest.raises(ValueError):
        evaluate(net, Dataset(np.zeros((0, 28, 28), np.uint8), np.zeros(0, np.int64), 10))


def test_evaluate_single_correct_sample():
    net = _net(channels=1)
    img = synthetic_images(1, 11)[0]
    pred = int(np.argmax(forward_batch(net, encode_images(img, net.config.geometry)).logits[0]))
    assert evaluate(net, Dataset(img, np.array([pred]), 10)) == 1.0


def test_grad_check_cases(rng):
    net = small_net(layers=2, channels=2, amplitude_trainable=True, bias_enabled=True)
    x = rng.uniform(0, 1, (16, 16))
    x /= np.linalg.norm(x)
    worst, details = grad_check(net, x, 1, 20, 1e-6, return_details=True)
    assert worst < 1e-4
    assert {d[1] for d in details} == {"phase", "amplitude", "bias", "weight"}
    assert grad_check(net, x, 1, 20, 1e-6, flip_sign=True) > 1.0
    with pytest.raises(ValueError):
        grad_check(net, x, 1, 20, 0.0)
    with pytest.raises(ValueError):
        grad_check(net, x, 1, 0, 1e-6)


def test_grad_check_zero_input_weights():
    net = small_net(layers=1, channels=2)
    worst, details = grad_check(net, np.zeros((16, 16)), 0, 40, 1e-6, return_details=True)
    weights = [d for d in details if d[1] == "weight"]
    assert weights and all(d[2] == 0 and abs(d[3]) < 1e-12 and d[4] == 0 for d in weights)


def test_grad_check_restores_parameters(rng):
    net = small_net()
    before = get_flat_params(net).copy()
    grad_check(net, rng.uniform(size=(16, 16)), 0, 5, 1e-6)
    assert np.array_equal(get_flat_params(net), before)


def _smoke_data():
    root = os.environ.get("DIFFRACTNET_FASHION_DIR")
    if root:
        r = Path(root)
        return load_dataset(r / "train-images-idx3-ubyte.gz", r / "train-labels-idx1-ubyte.gz", 10).subset(512)
    return _dataset(512, 21)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_smoke_training_loss_decreases(seed):
    # real Fashion-MNIST when DIFFRACTNET_FASHION_DIR is set, else the synthetic stand-in
    data = _smoke_data()
    cfg = TrainConfig(epochs=5, seed=seed)
    net = _net(seed=seed)
    history = fit(net, data, cfg)
    assert history[-1].train_loss < history[0].train_loss
    assert all(np.isfinite(m.train_loss) for m in history)
