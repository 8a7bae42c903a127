"""Whole-image SSIM and the smoothed phase-noise robustness experiment."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

C1 = 0.01**2
C2 = 0.03**2


def ssim(u1, u2, c1: float = C1, c2: float = C2) -> float:
    """Structural similarity from global per-channel statistics, averaged over channels.

    Both images are (H, W, 3) with values in [0, 1]. No sliding window is used:
    means, variances and the cross-covariance are taken over the whole image.
    """
    a = np.asarray(u1, dtype=float)
    b = np.asarray(u2, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) images, got {a.shape}")
    if a is b or np.array_equal(a, b):
        return 1.0
    a = a.reshape(-1, 3)
    b = b.reshape(-1, 3)
    mu1, mu2 = a.mean(axis=0), b.mean(axis=0)
    var1, var2 = a.var(axis=0), b.var(axis=0)
    cov = ((a - mu1) * (b - mu2)).mean(axis=0)
    per_channel = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / ((mu1**2 + mu2**2 + c1) * (var1 + var2 + c2))
    return float(per_channel.mean())


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of a smoothed Gaussian phase perturbation.

    Attributes:
        beta: perturbation coefficient (radians).
        L: Gaussian filter width in pixels (standard deviation L * pitch).
        pitch: pixel size in micrometres.
        seed: RNG seed for the white-noise field.
        target_snr: if set, rescale the perturbation so that
            20 log10(std(phase) / std(noise)) equals this value in dB.
    """

    beta: float
    L: float = 1.0
    pitch: float = 0.37
    seed: int = 0
    target_snr: float | None = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.L < 1:
            raise ValueError("L must be >= 1 pixel")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")


def gaussian_kernel(L: float, pitch: float, normalize: bool = True) -> np.ndarray:
    """Sampled exp(-(m^2 + n^2) pitch^2 / (2 (L pitch)^2)), truncated at 4 L.

    With ``normalize`` the kernel sums to 1; otherwise it carries the
    continuous prefactor 1 / (2 pi L^2).
    """
    radius = int(np.ceil(4 * L))
    m = np.arange(-radius, radius + 1)
    mm, nn = np.meshgrid(m, m, indexing="ij")
    k = np.exp(-((mm**2 + nn**2) * pitch**2) / (2 * (L * pitch) ** 2))
    if normalize:
        return k / k.sum()
    return k / (2 * np.pi * L**2)


def phase_noise(shape, spec: NoiseSpec, reference=None) -> np.ndarray:
    """The perturbation field beta * (r convolved with the Gaussian kernel).

    With ``spec.target_snr`` and a ``reference`` phase, the field is rescaled
    so its standard deviation hits the SNR target exactly.
    """
    rng = np.random.default_rng(spec.seed)
    r = rng.standard_normal(shape)
    smooth = ndimage.convolve(r, gaussian_kernel(spec.L, spec.pitch), mode="wrap")
    delta = spec.beta * smooth
    if spec.target_snr is not None and spec.beta > 0:
        if reference is None:
            raise ValueError("target_snr needs the reference phase")
        target_std = np.std(reference) / 10 ** (spec.target_snr / 20.0)
        delta = smooth * (target_std / smooth.std())
    return delta


def perturb_phase(phase, spec: NoiseSpec, max_abs: float = np.pi):
    """Add smoothed Gaussian phase noise; refuses results that would wrap.

    Returns an array (or PhaseImage if one was passed).
    """
    values = np.asarray(getattr(phase, "values", phase), dtype=float)
    if spec.beta == 0:
        noisy = values.copy()
    else:
        noisy = values + phase_noise(values.shape, spec, reference=values)
    peak = float(np.max(np.abs(noisy)))
    if peak >= max_abs:
        raise ValueError(f"perturbed phase reaches |phi| = {peak:.4f} >= {max_abs:.4f} (would wrap)")
    if hasattr(phase, "values"):
        return type(phase)(noisy, getattr(phase, "pitch", spec.pitch))
    return noisy


@dataclass
class RobustnessRow:
    beta: float
    L: float
    trial_count: int
    mean_ssim: float
    std_ssim: float


def noise_robustness_curve(infer_fn, phase, beta_list, L_list, trials: int = 10, seed: int = 0,
                           fixed_snr: bool = True, pitch: float = 0.37):
    """Mean SSIM of perturbed-input inference against clean-input inference.

    Args:
        infer_fn: callable mapping a phase array to an (H, W, 3) RGB image.
        phase: clean phase map.
        beta_list: perturbation coefficients. With ``fixed_snr`` each beta is
            the noise standard deviation in radians, identical for every L,
            so the SNR depends on beta only.
        L_list: Gaussian widths in pixels.
        trials: seeded realizations per (beta, L).
        seed: root seed; trial t uses seed + t for every (beta, L).

    Returns:
        A list of RobustnessRow, beta-major.
    """
    values = np.asarray(getattr(phase, "values", phase), dtype=float)
    reference = infer_fn(values)
    phase_std = float(np.std(values))
    rows = []
    for beta in beta_list:
        for L in L_list:
            scores = []
            for t in range(trials):
                spec = NoiseSpec(beta=beta, L=L, pitch=pitch, seed=seed + t)
                if fixed_snr and beta > 0:
                    spec = replace(spec, target_snr=20 * np.log10(phase_std / beta))
                noisy = perturb_phase(values, spec)
                scores.append(ssim(infer_fn(noisy), reference))
            rows.append(RobustnessRow(float(beta), float(L), trials, float(np.mean(scores)),
                                      float(np.std(scores))))
    return rows


ROBUSTNESS_COLUMNS = ("beta", "L", "trial_count", "mean_ssim", "std_ssim")


def write_robustness_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROBUSTNESS_COLUMNS)
        for row in rows:
            writer.writerow([row.beta, row.L, row.trial_count, repr(row.mean_ssim), repr(row.std_ssim)])
