"""Learnable per-pixel modulation ``h = a * exp(j*phi) * z (+ b)``.

Gradients follow one convention throughout the package: for a real loss ``L``
and complex intermediate ``u``, the carried gradient is
``dL/dRe(u) + 1j * dL/dIm(u)``. With it, a holomorphic map ``h = t * z``
backpropagates as ``grad_z = conj(t) * grad_h`` and a real parameter ``theta``
receives ``Re(conj(grad_h) * dh/dtheta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from diffractnet.field import ComplexField, GridGeometry


@dataclass(eq=False)
class ModulationParams:
    geometry: GridGeometry
    amplitude: np.ndarray
    phase: np.ndarray
    bias: complex | None = None
    amplitude_trainable: bool = False

    def __post_init__(self):
        self.amplitude = np.array(self.amplitude, dtype=np.float64)
        self.phase = np.array(self.phase, dtype=np.float64)
        for name, arr in (("amplitude", self.amplitude), ("phase", self.phase)):
            if arr.shape != self.geometry.shape:
                raise ValueError(f"{name} shape {arr.shape} does not match {self.geometry.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(self.amplitude < 0):
            raise ValueError("amplitude must be nonnegative")
        if not self.amplitude_trainable and not np.all(self.amplitude == 1.0):
            raise ValueError("amplitude must be identically 1 when it is not trainable")
        if self.bias is not None:
            self.bias = complex(self.bias)

    @classmethod
    def initial(
        cls,
        geometry: GridGeometry,
        rng: np.random.Generator,
        amplitude_trainable: bool = False,
        bias: bool = False,
    ) -> ModulationParams:
        """Uniform random phase in ``[0, 2*pi)``, unit amplitude, zero bias."""
        phase = rng.uniform(0.0, 2 * np.pi, size=geometry.shape)
        return cls(
            geometry,
            np.ones(geometry.shape),
            phase,
            0j if bias else None,
            amplitude_trainable,
        )

    @property
    def num_trainable(self) -> int:
        n = self.phase.size
        if self.amplitude_trainable:
            n += self.amplitude.size
        if self.bias is not None:
            n += 2
        return n

    def transmission(self, phase_scale: float = 1.0) -> np.ndarray:
        return self.amplitude * np.exp(1j * (self.phase * phase_scale))

    def copy(self) -> ModulationParams:
        return ModulationParams(
            self.geometry,
            self.amplitude.copy(),
            self.phase.copy(),
            self.bias,
            self.amplitude_trainable,
        )


@dataclass
class ParamGrad:
    d_amplitude: np.ndarray
    d_phase: np.ndarray
    d_bias: complex | None = None

    @classmethod
    def zeros_like(cls, params: ModulationParams) -> ParamGrad:
        return cls(
            np.zeros(params.geometry.shape),
            np.zeros(params.geometry.shape),
            0j if params.bias is not None else None,
        )

    def __iadd__(self, other: ParamGrad) -> ParamGrad:
        self.d_amplitude = self.d_amplitude + other.d_amplitude
        self.d_phase = self.d_phase + other.d_phase
        if self.d_bias is not None:
            self.d_bias = self.d_bias + other.d_bias
        return self

    def scaled(self, factor: float) -> ParamGrad:
        return ParamGrad(
            self.d_amplitude * factor,
            self.d_phase * factor,
            None if self.d_bias is None else self.d_bias * factor,
        )


def modulate_array(z: np.ndarray, params: ModulationParams, phase_scale: float = 1.0) -> np.ndarray:
    h = params.transmission(phase_scale) * z
    if params.bias is not None:
        h = h + params.bias
    return h


def modulate_backward_array(
    grad_h: np.ndarray,
    z: np.ndarray,
    params: ModulationParams,
    phase_scale: float = 1.0,
) -> tuple[np.ndarray, ParamGrad]:
    """Backward pass over a batch ``(..., ny, nx)``; parameter grads are summed over the batch."""
    if grad_h.shape != z.shape or grad_h.shape[-2:] != params.geometry.shape:
        raise ValueError(f"shape mismatch: grad {grad_h.shape}, z {z.shape}, params {params.geometry.shape}")
    rotor = np.exp(1j * (params.phase * phase_scale))
    t = params.amplitude * rotor
    grad_z = np.conj(t) * grad_h
    batch_axes = tuple(range(grad_h.ndim - 2))
    cg = np.conj(grad_h)
    # dh/dphi = j*t*z*phase_scale, dh/da = rotor*z
    d_phase = np.sum(np.real(cg * (1j * t * z)), axis=batch_axes) * phase_scale
    d_amplitude = np.sum(np.real(cg * (rotor * z)), axis=batch_axes)
    d_bias = complex(np.sum(grad_h)) if params.bias is not None else None
    return grad_z, ParamGrad(d_amplitude, d_phase, d_bias)


def _check(field: ComplexField, params: ModulationParams) -> None:
    if field.geometry != params.geometry:
        raise ValueError(f"geometry mismatch: {field.geometry} vs {params.geometry}")


def modulate(z: ComplexField, params: ModulationParams, phase_scale: float = 1.0) -> ComplexField:
    _check(z, params)
    return ComplexField(z.geometry, modulate_array(z.values, params, phase_scale))


def modulate_backward(
    grad_h: ComplexField,
    z_cached: ComplexField,
    params: ModulationParams,
    phase_scale: float = 1.0,
) -> tuple[ComplexField, ParamGrad]:
    _check(grad_h, params)
    _check(z_cached, params)
    grad_z, grads = modulate_backward_array(grad_h.values, z_cached.values, params, phase_scale)
    return ComplexField(grad_h.geometry, grad_z), grads
