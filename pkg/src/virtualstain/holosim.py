"""Synthetic phase/colour phantoms and the lensfree measurement chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .recon import HologramStack, PhaseImage
from .wavefield import ImagingGeometry, apply_object, propagate

BACKGROUND, CYTOPLASM, NUCLEUS = 0, 1, 2

# optical path delay per class, radians
CLASS_PHASE = {BACKGROUND: 0.0, CYTOPLASM: 0.9, NUCLEUS: 1.8}

# staining lookup (RGB); loosely H&E-like
CLASS_COLOR = np.array([
    [0.95, 0.93, 0.96],
    [0.91, 0.56, 0.72],
    [0.36, 0.22, 0.58],
])

EDGE_DARKENING = 0.45


@dataclass(frozen=True)
class Phantom:
    phase: PhaseImage
    truth_color: np.ndarray  # (H, W, 3) RGB in [0, 1]
    labels: np.ndarray  # (H, W) class index
    seed: int

    @property
    def background_fraction(self) -> float:
        return float(np.mean(self.labels == BACKGROUND))


@dataclass(frozen=True)
class LowResFrame:
    intensity: np.ndarray
    shift: tuple  # (dx, dy) micrometres


def _smooth_noise(rng, shape, sigma):
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (field - field.mean()) / field.std()


def _bandpass_noise(rng, shape, sigma, sigma_wide):
    noise = rng.standard_normal(shape)
    field = (ndimage.gaussian_filter(noise, sigma, mode="wrap")
             - ndimage.gaussian_filter(noise, sigma_wide, mode="wrap"))
    return (field - field.mean()) / field.std()


def _soft_step(x, center, width):
    return 0.5 * (1.0 + np.tanh((x - center) / width))


def stain(phase) -> np.ndarray:
    """Fixed staining rule mapping a phantom phase map to its RGB ground truth.

    Class membership is a smooth function of the phase; boundaries (phase
    gradients) are darkened so that the colour depends on local structure
    and not only on the pixel value.
    """
    phi = np.asarray(phase, dtype=float)
    w_nuc = _soft_step(phi, 1.35, 0.12)
    w_tissue = _soft_step(phi, 0.45, 0.12)
    weights = np.stack([1.0 - w_tissue, w_tissue - w_nuc, w_nuc], axis=-1)
    color = weights @ CLASS_COLOR
    # stain density tracks the optical path delay within cytoplasm/nucleus
    color *= 1.0 - 0.18 * np.clip(phi - 0.9, -0.9, 1.2)[..., None] * w_tissue[..., None]
    gy, gx = np.gradient(ndimage.gaussian_filter(phi, 1.0, mode="wrap"))
    edge = np.clip(np.hypot(gx, gy) / 0.35, 0.0, 1.0)
    color *= (1.0 - EDGE_DARKENING * edge)[..., None]
    return np.clip(color, 0.0, 1.0)


def make_phantom(seed: int, width: int = 256, height: int = 256, pitch: float = 0.37) -> Phantom:
    """Procedurally generate a tissue-like phase phantom and its stained colour image.

    Tissue regions come from a thresholded smooth random field (the threshold
    quantile is drawn so that 30-70% of the field is background); nuclei are
    random ellipses inside tissue; fibres are thin bright ridges in cytoplasm.
    """
    if width < 64 or height < 64 or width % 2 or height % 2:
        raise ValueError(f"phantom size must be even and >= 64, got {width}x{height}")
    rng = np.random.default_rng(seed)
    shape = (height, width)
    scale = min(shape) / 256.0

    # band-pass keeps the coarsest modes out; in-line holograms barely encode them
    tissue_field = _bandpass_noise(rng, shape, 5.0 * scale, 15.0 * scale)
    bg_fraction = rng.uniform(0.3, 0.7)
    tissue = tissue_field > np.quantile(tissue_field, bg_fraction)

    labels = np.where(tissue, CYTOPLASM, BACKGROUND)
    yy, xx = np.mgrid[:height, :width]
    n_nuclei = int(rng.integers(12, 24) * (width * height) / 256**2)
    ty, tx = np.nonzero(tissue)
    for _ in range(n_nuclei):
        k = rng.integers(len(ty))
        cy, cx = ty[k], tx[k]
        a, b = rng.uniform(3.0, 7.0, size=2) * max(scale, 0.5)
        theta = rng.uniform(0, np.pi)
        dy = (yy - cy + height / 2) % height - height / 2
        dx = (xx - cx + width / 2) % width - width / 2
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        labels[((u / a) ** 2 + (v / b) ** 2 <= 1.0) & tissue] = NUCLEUS

    phase = np.zeros(shape)
    for cls, value in CLASS_PHASE.items():
        phase[labels == cls] = value
    texture = _smooth_noise(rng, shape, 2.5)
    phase += np.where(labels != BACKGROUND, 0.12 * texture, 0.0)
    fibres = np.abs(_smooth_noise(rng, shape, 4.0)) < 0.08
    phase += np.where((labels == CYTOPLASM) & fibres, 0.35, 0.0)
    phase = ndimage.gaussian_filter(phase, 1.0, mode="wrap")
    phase = np.clip(phase, 0.0, 2.8)

    return Phantom(PhaseImage(phase, pitch), stain(phase), labels, int(seed))


def simulate_stack(phantom, geometry: ImagingGeometry, noise_std: float = 0.0,
                   seed: int = 0) -> HologramStack:
    """In-line hologram intensities at every z2 of ``geometry`` (at the phantom pitch).

    ``phantom`` may be a Phantom or a bare PhaseImage.
    """
    phase = getattr(phantom, "phase", phantom)
    if not isinstance(phase, PhaseImage):
        raise TypeError("expected a Phantom or PhaseImage")
    field = apply_object(phase, pitch=phase.pitch, wavelength=geometry.wavelength)
    rng = np.random.default_rng(seed)
    planes = []
    for z in geometry.z2_list:
        intensity = propagate(field, z).intensity
        if noise_std > 0:
            intensity = np.clip(intensity + noise_std * rng.standard_normal(intensity.shape), 0, None)
        planes.append((intensity, z))
    return HologramStack(tuple(planes), phase.pitch, geometry.wavelength)


def integer_factor(geometry_or_factor) -> int:
    factor = getattr(geometry_or_factor, "factor", geometry_or_factor)
    rounded = int(round(factor))
    if rounded < 1 or abs(factor - rounded) > 1e-6:
        raise ValueError(f"super-resolution factor must be an integer, got {factor}")
    return rounded


def sensor_sample(intensity_highres, geometry_or_factor, shift=(0, 0), pitch=None) -> LowResFrame:
    """Shift the high-resolution intensity and box-integrate sensor-pixel blocks.

    Args:
        intensity_highres: (H, W) intensity at the reconstruction pitch, with
            H and W multiples of the factor.
        geometry_or_factor: an ImagingGeometry or an integer factor.
        shift: (dx, dy) in whole high-resolution pixels; content moves by +shift
            (circularly).
        pitch: high-resolution pitch used to express the recorded shift in
            micrometres; defaults to ``geometry.recon_pitch`` or 1.

    Returns:
        A LowResFrame holding the block means (one G1 sample per sensor pixel).
    """
    f = integer_factor(geometry_or_factor)
    image = np.asarray(intensity_highres, dtype=float)
    h, w = image.shape
    if h % f or w % f:
        raise ValueError(f"image size {image.shape} not divisible by factor {f}")
    dx, dy = (int(round(s)) for s in shift)
    if abs(dx) >= f or abs(dy) >= f:
        raise ValueError(f"shift {shift} exceeds one sensor pixel")
    shifted = np.roll(image, (dy, dx), axis=(0, 1))
    low = shifted.reshape(h // f, f, w // f, f).mean(axis=(1, 3))
    if pitch is None:
        pitch = getattr(geometry_or_factor, "recon_pitch", 1.0)
    return LowResFrame(low, (dx * pitch, dy * pitch))
