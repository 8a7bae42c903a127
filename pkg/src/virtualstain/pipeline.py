"""End-to-end desk workflow on phantoms: acquisition, phase recovery, registration, training.

A *scene* is one large phantom standing in for a stained slide. The phase
field of view is a window of the phantom; the brightfield slide image is
the phantom colour seen through a known similarity transform plus a smooth
random warp, so the correct phase-to-slide correspondence is known exactly
and registration error can be measured in pixels.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .color import luminance
from .holosim import Phantom, integer_factor, make_phantom, sensor_sample, simulate_stack
from .metrics import ssim
from .neural import Generator, TrainConfig, infer, train
from .psr import estimate_shifts, shift_and_add
from .recon import HologramStack, PhaseImage, reconstruct_phase
from .register import (AffineTransform, DisplacementField, canny_edges, compose_field_with_affine,
                       elastic_register, match_fov, ncc, normalize_minmax, phase_to_uint8,
                       warp_affine, affine_register)
from .tiling import extract_patches
from .wavefield import ImagingGeometry

log = logging.getLogger(__name__)


@dataclass
class Scene:
    phantom: Phantom  # slide-sized phantom (the undistorted tissue)
    offset: tuple  # (row, col) of the phase field of view inside the phantom
    fov: int
    slide_color: np.ndarray  # distorted slide image (S, S, 3)
    distortion: AffineTransform  # slide pixel -> phantom coordinates (before the warp)
    warp_dy: np.ndarray
    warp_dx: np.ndarray

    @property
    def phase(self) -> PhaseImage:
        r, c = self.offset
        values = self.phantom.phase.values[r:r + self.fov, c:c + self.fov]
        return PhaseImage(values.copy(), self.phantom.phase.pitch)

    @property
    def color(self) -> np.ndarray:
        """Ground-truth colour registered to the phase field of view."""
        r, c = self.offset
        return self.phantom.truth_color[r:r + self.fov, c:c + self.fov]

    def slide_coords(self, iterations: int = 30):
        """Slide-image (row, col) showing each phase pixel, by fixed-point inversion.

        The slide pixel q shows phantom point A q + u(q); for phase pixel p we
        solve A q + u(q) = p + offset.
        """
        rr, cc = np.mgrid[:self.fov, :self.fov].astype(float)
        pr, pc = rr + self.offset[0], cc + self.offset[1]
        inv = self.distortion.inverse()
        qr, qc = inv.map_coords(pr, pc)
        for _ in range(iterations):
            ur = ndimage.map_coordinates(self.warp_dy, [qr, qc], order=1, mode="nearest")
            uc = ndimage.map_coordinates(self.warp_dx, [qr, qc], order=1, mode="nearest")
            qr, qc = inv.map_coords(pr - ur, pc - uc)
        return qr, qc


def smooth_warp(rng, shape, amplitude, sigma=40.0):
    """Random smooth displacement pair whose largest magnitude equals ``amplitude``."""
    dy = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    dx = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    peak = np.max(np.hypot(dy, dx))
    if amplitude == 0 or peak == 0:
        return np.zeros(shape), np.zeros(shape)
    return dy * amplitude / peak, dx * amplitude / peak


def make_scene(seed: int, fov: int = 264, slide: int = 384, rotation_deg: float = 4.0,
               warp_amplitude: float = 3.0, shift: float = 4.0) -> Scene:
    """Phantom slide with a misregistered brightfield image of it."""
    if slide < fov + 32:
        raise ValueError("slide must exceed the field of view by at least 32 px")
    phantom = make_phantom(seed, slide, slide)
    rng = np.random.default_rng([seed, 1])
    lo, hi = 16, slide - fov - 16
    offset = (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
    theta = rotation_deg * rng.choice([-1.0, 1.0])
    ty, tx = rng.uniform(-shift, shift, size=2)
    center = ((slide - 1) / 2, (slide - 1) / 2)
    distortion = AffineTransform.similarity(theta, 1.0, ty, tx, center)
    warp_dy, warp_dx = smooth_warp(rng, (slide, slide), warp_amplitude)
    rr, cc = np.mgrid[:slide, :slide].astype(float)
    sr, sc = distortion.map_coords(rr, cc)
    coords = [sr + warp_dy, sc + warp_dx]
    color = np.stack([ndimage.map_coordinates(phantom.truth_color[..., k], coords, order=3,
                                              mode="grid-wrap") for k in range(3)], axis=-1)
    return Scene(phantom, offset, fov, np.clip(color, 0, 1), distortion, warp_dy, warp_dx)


# -- acquisition and phase recovery ------------------------------------------

def super_resolve(intensity, factor: int, steps: int | None = None) -> np.ndarray:
    """Sample ``intensity`` on a sub-pixel shifted sensor lattice, then fuse it back.

    Shifts are estimated from the frames themselves rather than taken from
    the simulation.
    """
    steps = factor if steps is None else steps
    shifts = [(int(round(dx * factor / steps)), int(round(dy * factor / steps)))
              for dy in range(steps) for dx in range(steps)]
    frames = [sensor_sample(intensity, factor, s) for s in shifts]
    estimated = estimate_shifts(frames, factor)
    # deconvolution round-off can dip a hair below zero
    return np.clip(shift_and_add(frames, estimated, factor), 0.0, None)


def acquire(phase: PhaseImage, geometry: ImagingGeometry, noise_std=0.0, seed=0,
            use_psr=True, psr_steps=None) -> HologramStack:
    """Hologram stack as seen through the sensor (optionally via pixel super-resolution)."""
    stack = simulate_stack(phase, geometry, noise_std, seed)
    if not use_psr:
        return stack
    factor = integer_factor(geometry)
    planes = tuple((super_resolve(i, factor, psr_steps), z) for i, z in stack.planes)
    return HologramStack(planes, stack.pitch, stack.wavelength)


def geometry_from(cfg) -> ImagingGeometry:
    return ImagingGeometry.multi_height(cfg.z_start, cfg.z_step, cfg.heights, z1=cfg.z1,
                                        sensor_pitch=cfg.sensor_pitch, recon_pitch=cfg.recon_pitch,
                                        wavelength=cfg.wavelength)


# -- registration -------------------------------------------------------------

@dataclass
class GlobalAlignment:
    fov_offset: tuple  # step-1 crop offset in the slide
    fov_score: float
    transform: AffineTransform  # phase pixel -> slide coordinates
    affine_score: float
    inverted: bool  # luminance polarity was flipped for matching
    color: np.ndarray  # slide colour resampled onto the phase grid (NaN outside)


@dataclass
class Registration:
    alignment: GlobalAlignment
    field: DisplacementField
    rows: np.ndarray  # slide coordinates of each phase pixel
    cols: np.ndarray
    color: np.ndarray
    valid: np.ndarray


def _translation(dr, dc):
    return AffineTransform(np.array([[1.0, 0.0, dr], [0.0, 1.0, dc]]))


def global_align(phase, slide_color) -> GlobalAlignment:
    """Steps 1-2: edge-based field-of-view search, then a similarity transform by NCC."""
    phase = np.asarray(getattr(phase, "values", phase), dtype=float)
    h, w = phase.shape
    slide_lum = luminance(slide_color)
    match = match_fov(canny_edges(phase_to_uint8(phase)), canny_edges(np.round(slide_lum * 255)))
    r, c = match.row, match.col
    fixed = normalize_minmax(phase)
    moving = normalize_minmax(slide_lum[r:r + h, c:c + w])
    # stained tissue is darker where the optical path is longer
    inverted = ncc(moving, fixed) < 0
    if inverted:
        moving = 1.0 - moving
    result = affine_register(moving, fixed)
    transform = result.transform.compose(_translation(r, c))
    color = warp_affine(slide_color, transform, output_shape=(h, w))
    return GlobalAlignment((r, c), match.score, transform, result.score, bool(inverted), color)


def elastic_align(phase, slide_color, alignment: GlobalAlignment, rough: Generator | None,
                  block=32, radius=10, margin=16) -> Registration:
    """Step 4: block matching of the rough-network rendering against the aligned colour.

    Without a rough network the inverted normalized phase serves as the
    rendering (luminance only).
    """
    values = np.asarray(getattr(phase, "values", phase), dtype=float)
    if rough is not None:
        rendered = infer(rough, values)
    else:
        rendered = np.repeat((1.0 - normalize_minmax(values))[..., None], 3, axis=-1)
    field = elastic_register(rendered, alignment.color, block=block, radius=radius)
    rows, cols = compose_field_with_affine(field, alignment.transform)
    color = np.stack([ndimage.map_coordinates(slide_color[..., k], [rows, cols], order=1,
                                              mode="constant", cval=np.nan) for k in range(3)], axis=-1)
    valid = np.all(np.isfinite(color), axis=-1)
    if margin:
        valid[:margin] = valid[-margin:] = False
        valid[:, :margin] = valid[:, -margin:] = False
    return Registration(alignment, field, rows, cols, color, valid)


def registration_error(rows, cols, scene: Scene, margin: int = 16) -> float:
    """Mean distance (px) between estimated and true slide coordinates, inside a margin."""
    tr, tc = scene.slide_coords()
    err = np.hypot(np.asarray(rows) - tr, np.asarray(cols) - tc)
    if margin:
        err = err[margin:-margin, margin:-margin]
    return float(np.mean(err))


def fov_registration_error(alignment: GlobalAlignment, scene: Scene, margin: int = 16) -> float:
    """Misalignment left after step 1 alone (pure crop at the matched offset)."""
    rr, cc = np.mgrid[:scene.fov, :scene.fov].astype(float)
    return registration_error(rr + alignment.fov_offset[0], cc + alignment.fov_offset[1], scene, margin)


def train_rough_network(pairs, config: TrainConfig, cap: int, patch: int | None = None, arch=None):
    """Step 3: the standard GAN training stopped after ``cap`` generator iterations.

    Args:
        pairs: iterable of (phase, colour, valid) after global alignment.
    """
    patch = patch or config.patch
    inputs, targets = [], []
    for phase, color, valid in pairs:
        ps = extract_patches(phase, np.nan_to_num(color), patch, config.overlap, valid)
        inputs.append(ps.inputs)
        targets.append(ps.targets)
    inputs, targets = np.concatenate(inputs), np.concatenate(targets)
    cfg = replace(config, max_iterations=min(cap, config.max_iterations))
    return train(inputs, targets, cfg, arch=arch)


# -- whole desk run -------------------------------------------------------------

@dataclass
class FieldRecord:
    seed: int
    phase: np.ndarray  # reconstructed phase
    scene: Scene
    alignment: GlobalAlignment | None = None
    registration: Registration | None = None
    initial_error: float = float("nan")
    final_error: float = float("nan")


def reconstruct_scene(scene: Scene, cfg, seed=0) -> np.ndarray:
    stack = acquire(scene.phase, geometry_from(cfg), cfg.noise_std, seed, use_psr=True,
                    psr_steps=cfg.psr_steps)
    return reconstruct_phase(stack, cfg.iterations).values


def desk_run(cfg, train_config: TrainConfig | None = None, progress=None):
    """simulate -> reconstruct -> register -> train -> infer -> evaluate on phantoms.

    Args:
        cfg: a RunConfig (desk profile).
        train_config: overrides ``cfg.train_config()``.
        progress: optional ``fn(message)``.

    Returns:
        (report dict, TrainResult, list of held-out (phase, prediction, truth)).
    """
    say = progress or (lambda msg: log.info(msg))
    tcfg = train_config or cfg.train_config()
    t0 = time.perf_counter()
    fields = []
    for seed in cfg.train_seeds:
        scene = make_scene(seed, cfg.fov, cfg.slide, cfg.rotation_deg, cfg.warp_amplitude)
        rec = FieldRecord(seed, reconstruct_scene(scene, cfg, seed), scene)
        rec.alignment = global_align(rec.phase, scene.slide_color)
        rec.initial_error = fov_registration_error(rec.alignment, scene, cfg.margin)
        fields.append(rec)
        say(f"field {seed}: reconstructed and globally aligned")
    t_align = time.perf_counter()

    rough = train_rough_network(
        [(f.phase, f.alignment.color, np.all(np.isfinite(f.alignment.color), axis=-1)) for f in fields],
        tcfg, cfg.rough_cap)
    say(f"rough network: {rough.iterations} iterations")
    inputs, targets = [], []
    for f in fields:
        f.registration = elastic_align(f.phase, f.scene.slide_color, f.alignment, rough.generator,
                                       cfg.block, cfg.search_radius, cfg.margin)
        f.final_error = registration_error(f.registration.rows, f.registration.cols, f.scene, cfg.margin)
        ps = extract_patches(f.phase, np.nan_to_num(f.registration.color), tcfg.patch, tcfg.overlap,
                             f.registration.valid)
        inputs.append(ps.inputs)
        targets.append(ps.targets)
    inputs, targets = np.concatenate(inputs), np.concatenate(targets)
    t_reg = time.perf_counter()
    say(f"registered; {len(inputs)} training patches")

    result = train(inputs, targets, tcfg)
    t_train = time.perf_counter()
    say(f"trained {result.iterations} iterations, val L1 {result.initial_val_l1:.4f} -> {result.best_val_l1:.4f}")

    held_out = []
    for seed in cfg.test_seeds:
        scene = make_scene(seed, cfg.fov, cfg.slide, cfg.rotation_deg, cfg.warp_amplitude)
        phase = reconstruct_scene(scene, cfg, seed)
        pred = infer(result.generator, phase)
        held_out.append((phase, pred, scene.color))
    scores = [ssim(pred, truth) for _, pred, truth in held_out]
    report = {
        "training_patches": int(len(inputs)),
        "registration_error_initial": [f.initial_error for f in fields],
        "registration_error_final": [f.final_error for f in fields],
        "rough_iterations": rough.iterations,
        "rough_initial_val_l1": rough.initial_val_l1,
        "rough_final_val_l1": rough.validation[-1][1],
        "iterations": result.iterations,
        "best_iteration": result.best_iteration,
        "initial_val_l1": result.initial_val_l1,
        "best_val_l1": result.best_val_l1,
        "validation_curve": result.validation,
        "heldout_seeds": list(cfg.test_seeds),
        "heldout_ssim": scores,
        "seconds": {"acquire_align": t_align - t0, "register": t_reg - t_align,
                    "train": t_train - t_reg, "total": time.perf_counter() - t0},
    }
    return report, result, held_out
