import mpmath
import numpy as np
import pytest

from diffractnet.field import ComplexField, GridGeometry, fft2, inner, make_field, total_energy
from diffractnet.propagation import (
    ANGULAR_SPECTRUM,
    METHODS,
    SAMPLED_RS,
    KernelCache,
    build_kernel,
    direct_sum_oracle,
    propagate,
    propagate_adjoint,
    rs_impulse,
)

from conftest import random_field


def rs_mp(dx, dy, dz, lam):
    mpmath.mp.dps = 40
    dx, dy, dz, lam = map(mpmath.mpf, (dx, dy, dz, lam))
    r = mpmath.sqrt(dx**2 + dy**2 + dz**2)
    return complex(dz / r**2 * (1 / (2 * mpmath.pi * r) + 1 / (1j * lam)) * mpmath.exp(2j * mpmath.pi * r / lam))


# frozen from rs_mp at 40 digits
RS_CASES = [
    ((0, 0, 1, 1), 0.15915494309189535 - 1j),
    ((0, 0, 1, 2), -0.15915494309189535 + 0.5j),
    ((3, 4, 12, 1.3), 0.0008693032849806493 - 0.05461993627674101j),
    ((1, -2, 5, 0.7), -0.2102220159841153 - 0.11189057322624407j),
]


@pytest.mark.parametrize("args,expected", RS_CASES)
def test_rs_impulse_matches_high_precision(args, expected):
    assert rs_mp(*args) == pytest.approx(expected, abs=1e-15)
    assert rs_impulse(*args) == pytest.approx(expected, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("dz", [0.0, -1.0])
def test_rs_impulse_rejects_nonpositive_dz(dz):
    with pytest.raises(ValueError):
        rs_impulse(0.0, 0.0, dz, 1.0)


@pytest.mark.parametrize("method", METHODS)
def test_build_kernel_is_deterministic(method):
    g = GridGeometry(12, 10, 0.7)
    a = build_kernel(g, 1.1, 9.0, method)
    b = build_kernel(g, 1.1, 9.0, method)
    assert a.transfer.tobytes() == b.transfer.tobytes()
    assert np.all(np.isfinite(a.transfer))
    expected = (20, 24) if method == SAMPLED_RS else (10, 12)
    assert a.transfer.shape == expected


@pytest.mark.parametrize("distance,wavelength", [(0.0, 1.0), (-1.0, 1.0), (5.0, 0.0)])
def test_build_kernel_rejects_bad_arguments(distance, wavelength):
    with pytest.raises(ValueError):
        build_kernel(GridGeometry(8, 8, 1.0), wavelength, distance)
    with pytest.raises(ValueError):
        build_kernel(GridGeometry(8, 8, 1.0), 1.0, 5.0, "fresnel")


def test_angular_spectrum_transfer_bounded():
    k = build_kernel(GridGeometry(32, 32, 0.4), 1.0, 3.0, ANGULAR_SPECTRUM)
    assert np.max(np.abs(k.transfer)) <= 1.0 + 1e-15
    # pitch 0.4 puts part of the band beyond 1/lambda
    assert np.any(k.transfer == 0)


@pytest.mark.parametrize("n", [8, 16])
def test_sampled_rs_matches_direct_sum(n, rng):
    g = GridGeometry(n, n, 0.8)
    k = build_kernel(g, 1.0, 6.0)
    u = random_field(g, rng)
    diff = propagate(u, k).values - direct_sum_oracle(u, 1.0, 6.0).values
    assert np.max(np.abs(diff)) < 1e-10


def test_non_square_grid_matches_direct_sum(rng):
    g = GridGeometry(9, 6, 1.0)
    u = random_field(g, rng)
    diff = propagate(u, build_kernel(g, 0.9, 4.0)).values - direct_sum_oracle(u, 0.9, 4.0).values
    assert np.max(np.abs(diff)) < 1e-10


def test_impulse_response():
    g = GridGeometry(8, 8, 0.5)
    z, lam = 3.0, 0.9
    i, j = 2, 5  # (y, x) of the source pixel
    v = np.zeros(g.shape, complex)
    v[i, j] = 1.0
    out = propagate(ComplexField(g, v), build_kernel(g, lam, z)).values
    ky, kx = np.indices(g.shape)
    expected = g.pitch**2 * rs_impulse((kx - j) * g.pitch, (ky - i) * g.pitch, z, lam)
    assert np.max(np.abs(out - expected)) < 1e-10
    oracle = direct_sum_oracle(ComplexField(g, v), lam, z).values
    assert np.max(np.abs(oracle - expected)) < 1e-15


def test_direct_sum_guards_size():
    with pytest.raises(ValueError):
        direct_sum_oracle(make_field(GridGeometry(65, 64, 1.0)), 1.0, 1.0)
    assert np.all(direct_sum_oracle(make_field(GridGeometry(4, 4, 1.0)), 1.0, 1.0).values == 0)


@pytest.mark.parametrize("method", METHODS)
def test_linearity(method, rng):
    g = GridGeometry(16, 16, 1.0)
    k = build_kernel(g, 1.0, 10.0, method)
    u, v = random_field(g, rng), random_field(g, rng)
    lhs = propagate(u * 2 + v * 3, k).values
    rhs = 2 * propagate(u, k).values + 3 * propagate(v, k).values
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    assert np.all(propagate(make_field(g), k).values == 0)


@pytest.mark.parametrize("method", METHODS)
def test_adjoint_identity(method, rng):
    g = GridGeometry(16, 12, 0.9)
    k = build_kernel(g, 1.0, 7.0, method)
    for _ in range(5):
        u, v = random_field(g, rng), random_field(g, rng)
        lhs = inner(propagate(u, k), v)
        rhs = inner(u, propagate_adjoint(v, k))
        assert abs(lhs - rhs) / abs(lhs) < 1e-10
    assert np.all(propagate_adjoint(make_field(g), k).values == 0)


@pytest.mark.parametrize("method", METHODS)
def test_adjoint_of_adjoint_is_forward(method, rng):
    # (K^H)^H: conj-transpose the adjoint's matrix built column by column
    g = GridGeometry(6, 5, 1.0)
    k = build_kernel(g, 1.0, 4.0, method)
    basis = np.eye(g.size).reshape(g.size, *g.shape)
    adj = np.stack([propagate_adjoint(ComplexField(g, e), k).values.ravel() for e in basis], axis=1)
    u = random_field(g, rng)
    via_adjoint = (adj.conj().T @ u.values.ravel()).reshape(g.shape)
    assert np.max(np.abs(via_adjoint - propagate(u, k).values)) < 1e-12


def test_geometry_mismatch(rng):
    k = build_kernel(GridGeometry(8, 8, 1.0), 1.0, 5.0)
    u = random_field(GridGeometry(8, 8, 0.5), rng)
    with pytest.raises(ValueError):
        propagate(u, k)
    with pytest.raises(ValueError):
        propagate_adjoint(u, k)


def test_angular_spectrum_energy(rng):
    g = GridGeometry(32, 32, 0.4)
    k = build_kernel(g, 1.0, 3.0, ANGULAR_SPECTRUM)
    for _ in range(5):
        u = random_field(g, rng)
        assert total_energy(propagate(u, k)) <= total_energy(u) * (1 + 1e-12)
    # band-limited input: keep only propagating frequencies
    spec = fft2(random_field(g, rng)).values * (k.transfer != 0)
    u = ComplexField(g, np.fft.ifft2(spec))
    e_in, e_out = total_energy(u), total_energy(propagate(u, k))
    assert abs(e_out - e_in) / e_in < 1e-9


def test_kernel_cache_reuses():
    cache = KernelCache()
    g = GridGeometry(8, 8, 1.0)
    a = cache.get(g, 1.0, 5.0)
    assert cache.get(g, 1.0, 5.0) is a
    assert cache.get(g, 1.2, 5.0) is not a
    assert len(cache) == 2
