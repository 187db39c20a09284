"""Free-space propagation between parallel planes.

Two methods are provided:

``sampled-rs``
    The Rayleigh-Sommerfeld impulse response sampled on the pixel grid and
    applied as a zero-padded (linear, wraparound-free) FFT convolution. The
    vector factor ``(p - p_i) / r**2`` is taken as its axial component
    ``dz / r**2``, i.e. the usual inclination factor. This choice changes
    off-axis amplitudes and is the one every test in this package assumes.

``angular-spectrum``
    Multiplication of the unpadded spectrum by ``exp(2j*pi*z*kz)`` on the
    propagating band, with evanescent components set to exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from diffractnet.field import (
    ComplexField,
    GridGeometry,
    fft2_array,
    ifft2_array,
)

SAMPLED_RS = "sampled-rs"
ANGULAR_SPECTRUM = "angular-spectrum"
METHODS = (SAMPLED_RS, ANGULAR_SPECTRUM)

ORACLE_MAX_PIXELS = 4096


def rs_impulse(dx, dy, dz, wavelength):
    """Rayleigh-Sommerfeld point response at displacement ``(dx, dy, dz)``.

    Accepts scalars or broadcastable arrays for the displacements.

    >>> complex(rs_impulse(0.0, 0.0, 1.0, 1.0))  # doctest: +ELLIPSIS
    (0.159...-1...j)
    """
    dz_arr = np.asarray(dz, dtype=np.float64)
    if np.any(dz_arr <= 0):
        raise ValueError("rs_impulse requires dz > 0")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    r = np.sqrt(dx * dx + dy * dy + dz_arr * dz_arr)
    out = (dz_arr / r**2) * (1.0 / (2 * np.pi * r) + 1.0 / (1j * wavelength))
    out = out * np.exp(2j * np.pi * r / wavelength)
    if out.ndim == 0:
        return complex(out)
    return out


@dataclass(frozen=True, eq=False)
class PropagationKernel:
    geometry: GridGeometry
    wavelength: float
    distance: float
    method: str
    transfer: np.ndarray = field(repr=False)

    @property
    def padded(self) -> bool:
        return self.method == SAMPLED_RS


def _rs_transfer(geometry: GridGeometry, wavelength: float, distance: float) -> np.ndarray:
    ny, nx = geometry.shape
    # circular index layout: 0..n-1 then -n..-1, so all |shift| < n are unaliased
    my = np.fft.fftfreq(2 * ny, d=1.0 / (2 * ny))
    mx = np.fft.fftfreq(2 * nx, d=1.0 / (2 * nx))
    dy = my[:, None] * geometry.pitch
    dx = mx[None, :] * geometry.pitch
    h = rs_impulse(dx, dy, distance, wavelength) * geometry.pitch**2
    return fft2_array(h)


def _as_transfer(geometry: GridGeometry, wavelength: float, distance: float) -> np.ndarray:
    ny, nx = geometry.shape
    fy = np.fft.fftfreq(ny, d=geometry.pitch)[:, None]
    fx = np.fft.fftfreq(nx, d=geometry.pitch)[None, :]
    arg = 1.0 / wavelength**2 - fx**2 - fy**2
    propagating = arg >= 0
    kz = np.sqrt(np.where(propagating, arg, 0.0))
    return np.where(propagating, np.exp(2j * np.pi * distance * kz), 0.0).astype(np.complex128)


def build_kernel(
    geometry: GridGeometry, wavelength: float, distance: float, method: str = SAMPLED_RS
) -> PropagationKernel:
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance}")
    if not wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    if method == SAMPLED_RS:
        transfer = _rs_transfer(geometry, wavelength, distance)
    elif method == ANGULAR_SPECTRUM:
        transfer = _as_transfer(geometry, wavelength, distance)
    else:
        raise ValueError(f"unknown propagation method {method!r}; expected one of {METHODS}")
    if not np.all(np.isfinite(transfer)):
        raise ValueError("kernel transfer function is not finite")
    transfer.flags.writeable = False
    return PropagationKernel(geometry, float(wavelength), float(distance), method, transfer)


def apply_kernel(values: np.ndarray, kernel: PropagationKernel, adjoint: bool = False) -> np.ndarray:
    """Propagate an array of shape ``(..., ny, nx)``; the batched workhorse."""
    ny, nx = kernel.geometry.shape
    if values.shape[-2:] != (ny, nx):
        raise ValueError(f"array shape {values.shape[-2:]} does not match kernel grid {(ny, nx)}")
    transfer = np.conj(kernel.transfer) if adjoint else kernel.transfer
    if kernel.padded:
        out = ifft2_array(fft2_array(values, s=(2 * ny, 2 * nx)) * transfer)
        return np.ascontiguousarray(out[..., :ny, :nx])
    return ifft2_array(fft2_array(values) * transfer)


def _check(field: ComplexField, kernel: PropagationKernel) -> None:
    if field.geometry != kernel.geometry:
        raise ValueError(f"field geometry {field.geometry} does not match kernel {kernel.geometry}")


def propagate(field: ComplexField, kernel: PropagationKernel) -> ComplexField:
    _check(field, kernel)
    return ComplexField(field.geometry, apply_kernel(field.values, kernel))


def propagate_adjoint(grad: ComplexField, kernel: PropagationKernel) -> ComplexField:
    """Conjugate transpose of :func:`propagate` for the same kernel."""
    _check(grad, kernel)
    return ComplexField(grad.geometry, apply_kernel(grad.values, kernel, adjoint=True))


def direct_sum_oracle(field: ComplexField, wavelength: float, distance: float) -> ComplexField:
    """Literal pixel-by-pixel superposition of point responses. O(N^2) in pixel count."""
    g = field.geometry
    if g.size > ORACLE_MAX_PIXELS:
        raise ValueError(f"direct_sum_oracle limited to {ORACLE_MAX_PIXELS} pixels, got {g.size}")
    ys, xs = np.indices(g.shape)
    src_x = xs.ravel() * g.pitch
    src_y = ys.ravel() * g.pitch
    src = field.values.ravel()
    out = np.zeros(g.size, dtype=np.complex128)
    for p, (px, py) in enumerate(zip(src_x, src_y)):
        w = rs_impulse(px - src_x, py - src_y, distance, wavelength)
        out[p] = np.sum(g.pitch**2 * w * src)
    return ComplexField(g, out.reshape(g.shape))


class KernelCache:
    """Kernels keyed by ``(geometry, wavelength, distance, method)``."""

    def __init__(self):
        self._store: dict[tuple, PropagationKernel] = {}

    def get(self, geometry, wavelength, distance, method=SAMPLED_RS) -> PropagationKernel:
        key = (geometry, float(wavelength), float(distance), method)
        kernel = self._store.get(key)
        if kernel is None:
            kernel = build_kernel(geometry, wavelength, distance, method)
            self._store[key] = kernel
        return kernel

    def __len__(self):
        return len(self._store)
