"""Complex 2D fields on a uniform pixel grid.

Arrays are stored with shape ``(ny, nx)`` in C order, so ``x`` is the fastest
varying index. Every public function returns a new object; inputs are never
modified.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.fft


def fft_workers() -> int:
    """Worker count for batched FFTs, capped by ``DIFFRACTNET_THREADS``."""
    value = os.environ.get("DIFFRACTNET_THREADS")
    if not value:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"DIFFRACTNET_THREADS must be an integer, got {value!r}")
    return max(1, n)


def _load_torch():
    if os.environ.get("DIFFRACTNET_FFT", "").lower() == "scipy":
        return None
    try:
        import torch
    except ImportError:
        return None
    return torch


_torch = _load_torch()
FFT_BACKEND = "torch" if _torch is not None else "scipy"


def _tensor(a: np.ndarray):
    a = np.asarray(a, dtype=np.complex128)
    if not a.flags.writeable:
        a = a.copy()
    return _torch.from_numpy(a)


def fft2_array(a: np.ndarray, s: tuple[int, int] | None = None) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes, zero-padding to ``s`` if given."""
    if _torch is not None:
        _torch.set_num_threads(fft_workers())
        return _torch.fft.fft2(_tensor(a), s=s).numpy()
    return scipy.fft.fft2(a, s=s, axes=(-2, -1), workers=fft_workers())


def ifft2_array(a: np.ndarray) -> np.ndarray:
    if _torch is not None:
        _torch.set_num_threads(fft_workers())
        return _torch.fft.ifft2(_tensor(a)).numpy()
    return scipy.fft.ifft2(a, axes=(-2, -1), workers=fft_workers())


@dataclass(frozen=True)
class GridGeometry:
    nx: int
    ny: int
    pitch: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("grid sizes must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if not (np.isfinite(self.pitch) and self.pitch > 0):
            raise ValueError(f"pitch must be positive, got {self.pitch}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny


def _check_geometry(a: GridGeometry, b: GridGeometry) -> None:
    if a != b:
        raise ValueError(f"geometry mismatch: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class ComplexField:
    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128, copy=True)
        if values.shape != self.geometry.shape:
            raise ValueError(
                f"values shape {values.shape} does not match geometry {self.geometry.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __mul__(self, other):
        if isinstance(other, ComplexField):
            return elementwise_mul(self, other)
        return ComplexField(self.geometry, self.values * complex(other))

    __rmul__ = __mul__

    def __add__(self, other: ComplexField) -> ComplexField:
        _check_geometry(self.geometry, other.geometry)
        return ComplexField(self.geometry, self.values + other.values)

    def __sub__(self, other: ComplexField) -> ComplexField:
        _check_geometry(self.geometry, other.geometry)
        return ComplexField(self.geometry, self.values - other.values)


@dataclass(frozen=True, eq=False)
class RealMap:
    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != self.geometry.shape:
            raise ValueError(
                f"values shape {values.shape} does not match geometry {self.geometry.shape}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("real map entries must be finite and nonnegative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def make_field(geometry: GridGeometry, fill: complex = 0.0) -> ComplexField:
    return ComplexField(geometry, np.full(geometry.shape, fill, dtype=np.complex128))


def fft2(field: ComplexField) -> ComplexField:
    """Unnormalized forward 2D DFT."""
    return ComplexField(field.geometry, fft2_array(field.values))


def ifft2(spectrum: ComplexField) -> ComplexField:
    """Inverse 2D DFT scaled by ``1/(nx*ny)``, the exact inverse of :func:`fft2`."""
    return ComplexField(spectrum.geometry, ifft2_array(spectrum.values))


def elementwise_mul(a: ComplexField, b: ComplexField) -> ComplexField:
    _check_geometry(a.geometry, b.geometry)
    return ComplexField(a.geometry, a.values * b.values)


def total_energy(field: ComplexField) -> float:
    v = field.values
    return float(np.sum(v.real**2 + v.imag**2))


def modulus(field: ComplexField) -> RealMap:
    return RealMap(field.geometry, np.abs(field.values))


def inner(a: ComplexField, b: ComplexField) -> complex:
    """Hermitian inner product ``sum(a * conj(b))``."""
    _check_geometry(a.geometry, b.geometry)
    return complex(np.vdot(b.values, a.values))
