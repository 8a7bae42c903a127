"""Multi-height iterative phase recovery and Tamura-of-gradient autofocus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .wavefield import ComplexField, propagate, transfer_function


@dataclass(frozen=True)
class PhaseImage:
    """Real phase map in radians sampled at ``pitch`` micrometres."""

    values: np.ndarray
    pitch: float = 0.37

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"phase image must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("phase image contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class HologramStack:
    """Intensity measurements at increasing sample-to-sensor distances."""

    planes: tuple  # of (intensity, z2) pairs
    pitch: float
    wavelength: float

    def __post_init__(self):
        planes = tuple((np.asarray(i, dtype=float), float(z)) for i, z in self.planes)
        object.__setattr__(self, "planes", planes)
        if not planes:
            raise ValueError("hologram stack is empty")
        shape = planes[0][0].shape
        for intensity, _ in planes:
            if intensity.shape != shape:
                raise ValueError(f"plane shapes differ: {intensity.shape} vs {shape}")
            if np.any(intensity < 0):
                raise ValueError("intensities must be nonnegative")
        zs = [z for _, z in planes]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError("z2 values must be strictly increasing")

    @property
    def z2(self):
        return [z for _, z in self.planes]

    @property
    def intensities(self):
        return [i for i, _ in self.planes]

    def __len__(self):
        return len(self.planes)


def gradient_magnitude(image):
    """Centered finite-difference gradient magnitude (one-sided at the borders)."""
    gy, gx = np.gradient(np.asarray(image))
    return np.sqrt(np.abs(gx) ** 2 + np.abs(gy) ** 2)


def tamura_of_gradient(image) -> float:
    """Edge-sparsity focus score sqrt(std(g) / mean(g)) of the gradient magnitude g."""
    image = np.asarray(image)
    if image.ndim != 2 or min(image.shape) < 3:
        raise ValueError("tamura_of_gradient needs a 2-D grid of at least 3x3")
    g = gradient_magnitude(image)
    mean = g.mean()
    if mean <= 0:
        return 0.0
    return float(np.sqrt(g.std() / mean))


def focus_curve(intensity, z_candidates, pitch, wavelength, criterion="complex"):
    """ToG score of the back-propagated hologram at each candidate distance.

    ``criterion="complex"`` takes the gradient of the complex field, which
    also sharpens for pure phase objects; ``"amplitude"`` uses |field| only.
    """
    if criterion not in ("complex", "amplitude"):
        raise ValueError(f"unknown focus criterion {criterion!r}")
    field = ComplexField(np.sqrt(np.asarray(intensity, dtype=float)), pitch, wavelength)
    spectrum = np.fft.fft2(field.data)
    scores = []
    for z in z_candidates:
        h = transfer_function(field.data.shape, pitch, wavelength, -z)
        u = np.fft.ifft2(spectrum * h)
        scores.append(tamura_of_gradient(u if criterion == "complex" else np.abs(u)))
    return np.array(scores)


def autofocus(intensity, z_range, z_step=None, pitch=0.37, wavelength=0.55,
              criterion="complex") -> float:
    """Estimate the sample-to-sensor distance of one hologram plane.

    Args:
        intensity: hologram intensity at ``pitch``.
        z_range: either an explicit sequence of candidate distances, or a
            (z_min, z_max) pair scanned with ``z_step``.
        z_step: scan step in micrometres when ``z_range`` is a pair.
        criterion: see :func:`focus_curve`.

    Returns:
        The candidate with the highest ToG score; ties go to the smaller z.
    """
    if z_step is not None:
        z_min, z_max = z_range
        if z_step <= 0:
            raise ValueError("z_step must be positive")
        candidates = np.arange(z_min, z_max + z_step / 2, z_step)
    else:
        candidates = np.asarray(z_range, dtype=float)
    if candidates.size == 0:
        raise ValueError("empty autofocus range")
    if candidates.size < 3:
        raise ValueError(f"autofocus needs at least 3 candidate distances, got {candidates.size}")
    candidates = np.sort(candidates)
    scores = focus_curve(intensity, candidates, pitch, wavelength, criterion)
    # argmax returns the first maximum, i.e. the smallest z on ties
    return float(candidates[int(np.argmax(scores))])


def amplitude_residual(field: ComplexField, stack: HologramStack) -> float:
    """RMS of |field| - sqrt(measured) over all planes, for a field at the last plane."""
    z_ref = stack.z2[-1]
    sq = 0.0
    for intensity, z in stack.planes:
        u = propagate(field, z - z_ref).data
        sq += np.mean((np.abs(u) - np.sqrt(intensity)) ** 2)
    return float(np.sqrt(sq / len(stack)))


def multiheight_recover(stack: HologramStack, iterations: int = 30, callback=None) -> ComplexField:
    """Alternating-projection phase recovery across all hologram heights.

    The zero-phase estimate starts at the farthest plane. One iteration
    sweeps down to the nearest plane and back up, replacing the amplitude
    with the measured one at every plane while keeping the propagated phase.

    Args:
        stack: at least two planes.
        iterations: number of full down-and-up sweeps.
        callback: optional ``callback(iteration, field)`` called after each sweep
            with the field at the farthest plane.

    Returns:
        The complex field at the farthest plane.
    """
    if len(stack) < 2:
        raise ValueError("multi-height recovery needs at least two planes")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    amplitudes = [np.sqrt(i) for i in stack.intensities]
    zs = stack.z2
    n = len(zs)
    shape = amplitudes[0].shape
    # transfer functions between neighbouring planes, both directions
    down = [transfer_function(shape, stack.pitch, stack.wavelength, zs[k] - zs[k + 1]) for k in range(n - 1)]
    up = [np.conj(h) for h in down]

    u = amplitudes[-1].astype(complex)
    for it in range(iterations):
        for k in range(n - 2, -1, -1):
            u = np.fft.ifft2(np.fft.fft2(u) * down[k])
            u = amplitudes[k] * np.exp(1j * np.angle(u))
        for k in range(n - 1):
            u = np.fft.ifft2(np.fft.fft2(u) * up[k])
            u = amplitudes[k + 1] * np.exp(1j * np.angle(u))
        if callback is not None:
            callback(it + 1, ComplexField(u, stack.pitch, stack.wavelength))
    return ComplexField(u, stack.pitch, stack.wavelength)


def extract_object_phase(field: ComplexField, z2: float) -> PhaseImage:
    """Back-propagate to the object plane and return the wrapped phase in (-pi, pi]."""
    obj = propagate(field, -z2).data
    phase = np.angle(obj)
    phase = np.where(phase <= -np.pi, phase + 2 * np.pi, phase)
    return PhaseImage(phase, field.pitch)


def align_global_phase(estimate, reference):
    """Remove the constant phase offset between two maps (least squares on the circle)."""
    estimate = np.asarray(estimate, dtype=float)
    offset = np.angle(np.sum(np.exp(1j * (np.asarray(reference) - estimate))))
    return np.angle(np.exp(1j * (estimate + offset)))


def phase_rms_error(estimate, reference) -> float:
    """RMS of the wrapped difference after removing the global phase offset."""
    aligned = align_global_phase(estimate, reference)
    diff = np.angle(np.exp(1j * (aligned - np.asarray(reference))))
    return float(np.sqrt(np.mean(diff**2)))


def background_reference(phase, bins=512) -> float:
    """Phase value of the dominant histogram mode, used as the zero-phase background."""
    values = np.asarray(phase, dtype=float).ravel()
    hist, edges = np.histogram(values, bins=bins, range=(-np.pi, np.pi))
    k = int(np.argmax(hist))
    lo, hi = edges[max(k - 1, 0)], edges[min(k + 2, bins)]
    sel = values[(values >= lo) & (values <= hi)]
    return float(np.median(sel))


def reconstruct_phase(stack: HologramStack, iterations=30, pad_to=None, crop=0,
                      reference_background=True, callback=None) -> PhaseImage:
    """Full phase-recovery chain: optional padding, recovery, extraction, crop.

    Args:
        stack: measured hologram stack.
        iterations: recovery sweeps.
        pad_to: pad every plane (edge values) to this square size before recovery.
        crop: pixels removed from every side of the padded result's original window.
        reference_background: shift the phase so the dominant background mode is 0.
        callback: passed through to ``multiheight_recover``.
    """
    planes = stack.planes
    h, w = planes[0][0].shape
    if pad_to is not None:
        if pad_to < max(h, w):
            raise ValueError(f"pad_to={pad_to} smaller than panel {h}x{w}")
        py, px = pad_to - h, pad_to - w
        pads = ((py // 2, py - py // 2), (px // 2, px - px // 2))
        planes = tuple((np.pad(i, pads, mode="edge"), z) for i, z in planes)
        stack = HologramStack(planes, stack.pitch, stack.wavelength)
    field = multiheight_recover(stack, iterations, callback)
    phase = extract_object_phase(field, stack.z2[-1]).values
    if pad_to is not None:
        phase = phase[pads[0][0]:pads[0][0] + h, pads[1][0]:pads[1][0] + w]
    if crop:
        phase = phase[crop:-crop, crop:-crop]
    if reference_background:
        phase = np.angle(np.exp(1j * (phase - background_reference(phase))))
    return PhaseImage(phase, stack.pitch)
