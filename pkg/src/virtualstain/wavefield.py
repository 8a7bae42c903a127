"""Complex optical fields and angular-spectrum free-space propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ComplexField:
    """A sampled scalar wave on a regular grid.

    Attributes:
        data: (height, width) complex amplitudes.
        pitch: sampling interval in micrometres.
        wavelength: illumination wavelength in micrometres.
    """

    data: np.ndarray
    pitch: float
    wavelength: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"field must be 2-D, got shape {data.shape}")
        if data.shape[0] % 2 or data.shape[1] % 2:
            raise ValueError(f"field dimensions must be even, got {data.shape}")
        if not self.pitch > 0 or not self.wavelength > 0:
            raise ValueError("pitch and wavelength must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "data", data.astype(np.complex128, copy=False))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.data)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.data)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.data) ** 2

    def with_data(self, data: np.ndarray) -> "ComplexField":
        return ComplexField(data, self.pitch, self.wavelength)


@dataclass(frozen=True)
class ImagingGeometry:
    """Lensfree in-line geometry. Distances and pitches in micrometres."""

    z2_list: tuple
    z1: float = 75_000.0
    sensor_pitch: float = 1.11
    recon_pitch: float = 0.37
    wavelength: float = 0.55

    def __post_init__(self):
        z2 = tuple(float(z) for z in self.z2_list)
        object.__setattr__(self, "z2_list", z2)
        if not z2:
            raise ValueError("z2_list must not be empty")
        if any(z <= 0 for z in z2) or self.z1 <= 0:
            raise ValueError("all distances must be positive")
        if any(b <= a for a, b in zip(z2, z2[1:])):
            raise ValueError("z2_list must be strictly increasing")
        if not self.recon_pitch > 0 or not self.wavelength > 0:
            raise ValueError("pitches and wavelength must be positive")
        if not self.sensor_pitch / self.recon_pitch > 1:
            raise ValueError("sensor_pitch must exceed recon_pitch")

    @property
    def factor(self) -> float:
        """Super-resolution factor sensor_pitch / recon_pitch."""
        return self.sensor_pitch / self.recon_pitch

    @classmethod
    def multi_height(cls, z_start=1000.0, step=15.0, count=8, **kwargs) -> "ImagingGeometry":
        return cls(tuple(z_start + step * k for k in range(count)), **kwargs)


def frequency_grid(shape, pitch):
    """Centered-convention spatial frequencies (fx, fy) in cycles per micrometre.

    Frequencies run over [-1/(2 pitch), 1/(2 pitch)) and are returned in
    FFT order so they can multiply an unshifted spectrum directly.
    """
    ny, nx = shape
    fy = np.fft.fftfreq(ny, d=pitch)
    fx = np.fft.fftfreq(nx, d=pitch)
    return np.meshgrid(fx, fy, indexing="xy")


def transfer_function(shape, pitch, wavelength, distance):
    """Free-space transfer function with evanescent components zeroed."""
    fx, fy = frequency_grid(shape, pitch)
    radicand = 1.0 / wavelength**2 - fx**2 - fy**2
    propagating = radicand >= 0
    kz = np.sqrt(np.where(propagating, radicand, 0.0))
    return np.where(propagating, np.exp(2j * np.pi * distance * kz), 0.0)


def propagating_mask(shape, pitch, wavelength):
    fx, fy = frequency_grid(shape, pitch)
    return fx**2 + fy**2 <= 1.0 / wavelength**2


def propagate(field: ComplexField, distance: float) -> ComplexField:
    """Propagate a field by a signed distance with the angular-spectrum method.

    No padding is applied here; callers pad panels before propagating.
    """
    if not np.isfinite(distance):
        raise ValueError(f"propagation distance must be finite, got {distance}")
    if distance == 0:
        return field.with_data(np.fft.ifft2(np.fft.fft2(field.data)))
    h = transfer_function(field.data.shape, field.pitch, field.wavelength, distance)
    return field.with_data(np.fft.ifft2(np.fft.fft2(field.data) * h))


def apply_object(phase, amplitude=None, pitch=0.37, wavelength=0.55) -> ComplexField:
    """Thin-object transmission a * exp(i phase) under unit plane-wave illumination."""
    pitch = getattr(phase, "pitch", pitch)
    phase = np.asarray(getattr(phase, "values", phase), dtype=float)
    if amplitude is None:
        amplitude = np.ones_like(phase)
    amplitude = np.asarray(amplitude, dtype=float)
    if amplitude.shape != phase.shape:
        raise ValueError(f"phase {phase.shape} and amplitude {amplitude.shape} differ in shape")
    if np.any(amplitude < 0) or np.any(amplitude > 1):
        raise ValueError("amplitude must lie in [0, 1]")
    return ComplexField(amplitude * np.exp(1j * phase), pitch, wavelength)
