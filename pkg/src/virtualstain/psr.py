"""Pixel super-resolution: sub-pixel shift estimation and shift-and-add fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import interpolate


@dataclass(frozen=True)
class ShiftGrid:
    """Frame shifts (dx, dy) in high-resolution pixels, relative to frame 0."""

    shifts: tuple
    factor: int = 3

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple((float(dx), float(dy)) for dx, dy in self.shifts))

    @property
    def count(self) -> int:
        return len(self.shifts)

    @classmethod
    def uniform(cls, factor=3, steps=6):
        """A steps x steps raster with spacing factor/steps (one sensor pixel in total)."""
        offsets = np.arange(steps) * factor / steps
        return cls(tuple((dx, dy) for dy in offsets for dx in offsets), factor)


def _frames_array(frames):
    arrays = [np.asarray(getattr(f, "intensity", f), dtype=float) for f in frames]
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise ValueError(f"frame shapes differ: {a.shape} vs {shape}")
    return np.stack(arrays)


def _parabolic_offset(left, center, right):
    denom = left - 2.0 * center + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def phase_correlation_shift(reference, moving, sigma=0.25):
    """Translation (dx, dy) of ``moving`` relative to ``reference`` in pixels.

    The normalized cross-power spectrum is apodized with a Gaussian of width
    ``sigma`` (in cycles/pixel) so the correlation peak is locally Gaussian;
    a parabola through the log of the peak and its neighbours gives the
    sub-pixel position.
    """
    a = np.fft.fft2(reference - reference.mean())
    b = np.fft.fft2(moving - moving.mean())
    cross = b * np.conj(a)
    mag = np.abs(cross)
    if not np.any(mag > 0):
        raise ValueError("frames carry no correlation signal")
    cross = np.where(mag > 1e-12 * mag.max(), cross / np.maximum(mag, 1e-300), 0.0)
    fy = np.fft.fftfreq(reference.shape[0])[:, None]
    fx = np.fft.fftfreq(reference.shape[1])[None, :]
    cross *= np.exp(-(fx**2 + fy**2) / (2 * sigma**2))
    corr = np.fft.ifft2(cross).real
    ny, nx = corr.shape
    py, px = np.unravel_index(int(np.argmax(corr)), corr.shape)
    peak = corr[py, px]
    if peak <= 0:
        raise ValueError("correlation peak is not positive")

    def logv(v):
        return np.log(max(v, peak * 1e-12))

    oy = _parabolic_offset(logv(corr[(py - 1) % ny, px]), logv(peak), logv(corr[(py + 1) % ny, px]))
    ox = _parabolic_offset(logv(corr[py, (px - 1) % nx]), logv(peak), logv(corr[py, (px + 1) % nx]))
    dy = (py + ny // 2) % ny - ny // 2 + oy
    dx = (px + nx // 2) % nx - nx // 2 + ox
    return float(dx), float(dy)


def estimate_shifts(frames, factor: int = 3) -> ShiftGrid:
    """Shift of every low-resolution frame relative to the first one.

    Returns shifts in high-resolution pixels (low-resolution shift x factor).
    """
    stack = _frames_array(frames)
    if len(stack) < 2:
        raise ValueError("need at least two frames")
    if not np.any(stack):
        raise ValueError("all frames are zero")
    shifts = [(0.0, 0.0)]
    for frame in stack[1:]:
        dx, dy = phase_correlation_shift(stack[0], frame)
        shifts.append((dx * factor, dy * factor))
    return ShiftGrid(tuple(shifts), factor)


def _fill_gaps(values, filled):
    """Bilinear (triangulated) interpolation of unfilled pixels on a periodic grid."""
    h, w = values.shape
    # tile 3x3 so interpolation wraps across edges
    tiled_v = np.tile(values, (3, 3))
    tiled_m = np.tile(filled, (3, 3))
    yy, xx = np.nonzero(tiled_m)
    interp = interpolate.LinearNDInterpolator(np.column_stack([yy, xx]), tiled_v[yy, xx])
    gy, gx = np.nonzero(~filled)
    out = values.copy()
    out[gy, gx] = interp(gy + h, gx + w)
    return out


def box_deconvolve(image, factor: int, floor: float = 1e-8):
    """Undo the factor x factor centred box average on a periodic grid.

    Frequencies where the box response is below ``floor`` are left at zero,
    which is exact for data that was produced by the box average.
    """
    if factor == 1:
        return image.copy()
    h, w = image.shape

    def response(n):
        k = np.fft.fftfreq(n)
        offsets = np.arange(factor) - (factor - 1) / 2.0
        return np.exp(-2j * np.pi * k[:, None] * offsets[None, :]).mean(axis=1)

    r = response(h)[:, None] * response(w)[None, :]
    keep = np.abs(r) > floor
    spectrum = np.fft.fft2(image)
    out = np.where(keep, spectrum / np.where(keep, r, 1.0), 0.0)
    return np.fft.ifft2(out).real


def shift_and_add(frames, shifts, factor: int, deconvolve: bool = True) -> np.ndarray:
    """Fuse shifted low-resolution frames onto the high-resolution grid.

    Each sensor sample is the box mean of a factor x factor high-resolution
    block; the sample is deposited at the centre of its (shifted) block,
    rounded to the nearest high-resolution pixel. Deposits are averaged by
    hit count and empty pixels are interpolated from filled neighbours. The
    result is a map of box means; with ``deconvolve`` the box blur is then
    inverted so that re-sampling the output reproduces the frames.

    Args:
        frames: low-resolution frames (arrays or LowResFrame).
        shifts: (dx, dy) per frame in high-resolution pixels, or a ShiftGrid.
        factor: integer super-resolution factor.
        deconvolve: invert the sensor box average after accumulation.

    Returns:
        (H * factor, W * factor) intensity at the reconstruction pitch.
    """
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    shifts = list(getattr(shifts, "shifts", shifts))
    stack = _frames_array(frames)
    if len(shifts) != len(stack):
        raise ValueError(f"{len(stack)} frames but {len(shifts)} shifts")
    n, h, w = stack.shape
    H, W = h * factor, w * factor
    acc = np.zeros((H, W))
    hits = np.zeros((H, W))
    center = (factor - 1) // 2
    rows = np.arange(h) * factor + center
    cols = np.arange(w) * factor + center
    for frame, (dx, dy) in zip(stack, shifts):
        r = (rows - int(np.round(dy))) % H
        c = (cols - int(np.round(dx))) % W
        acc[np.ix_(r, c)] += frame
        hits[np.ix_(r, c)] += 1
    filled = hits > 0
    means = np.where(filled, acc / np.maximum(hits, 1), 0.0)
    if not filled.all():
        means = _fill_gaps(means, filled)
    if factor % 2 == 0 and deconvolve:
        raise ValueError("box deconvolution needs an odd factor (centred blocks)")
    return box_deconvolve(means, factor) if deconvolve else means
