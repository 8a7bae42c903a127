"""Command-line front end: one subcommand per stage of the workflow.

Every subcommand reads the (strict) JSON config plus flags, writes its
outputs into ``--out`` and a ``<command>_report.json`` run report. Exit
codes: 0 success, 2 invalid input or configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import io
from .config import ConfigError, RunConfig, load_config
from .holosim import integer_factor, sensor_sample, simulate_stack
from .metrics import noise_robustness_curve, ssim, write_robustness_csv
from .neural import infer
from .pipeline import desk_run, elastic_align, geometry_from, global_align, make_scene
from .psr import estimate_shifts, shift_and_add
from .recon import HologramStack, amplitude_residual, autofocus, reconstruct_phase
from .tiling import tile_grid

log = logging.getLogger("virtualstain")

REPORT_SCHEMA = 1
VALIDATION_EXIT, RUNTIME_EXIT = 2, 1


class Run:
    """Collects the run report and writes it next to the outputs."""

    def __init__(self, command, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.t0 = time.perf_counter()
        self.report = {
            "schema": REPORT_SCHEMA,
            "command": command,
            "versions": _versions(),
            "seed": cfg.seed,
            "profile": cfg.profile,
            "config": cfg.to_dict(),
            "inputs": {},
            "outputs": {},
            "metrics": {},
        }

    def input(self, name, path):
        self.report["inputs"][name] = str(path)

    def output(self, name, path):
        self.report["outputs"][name] = str(path)
        return path

    def metric(self, **values):
        self.report["metrics"].update(values)

    def finish(self):
        self.report["wall_time_s"] = time.perf_counter() - self.t0
        path = self.out / f"{self.command}_report.json"
        path.write_text(json.dumps(self.report, indent=2, default=_jsonable))
        return path


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"artifact": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _require(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _stack_meta_path(path):
    return Path(path).with_suffix(".json")


def _load_stack(path, cfg) -> HologramStack:
    """Hologram planes (P, H, W) plus z2 list from the sidecar (or the config geometry)."""
    data = io.read_tensor(_require(path)).astype(np.float64)
    if data.ndim == 2:
        data = data[None]
    meta_path = _stack_meta_path(path)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        z2, pitch, wavelength = meta["z2"], meta["pitch"], meta["wavelength"]
    else:
        geometry = geometry_from(cfg)
        z2, pitch, wavelength = geometry.z2_list, cfg.recon_pitch, cfg.wavelength
    if len(z2) != len(data):
        raise ValueError(f"{path}: {len(data)} planes but {len(z2)} heights")
    return HologramStack(tuple(zip(data, z2)), pitch, wavelength)


def _write_stack(path, planes, z2, pitch, wavelength):
    io.write_tensor(path, np.asarray(planes, dtype=np.float32))
    _stack_meta_path(path).write_text(json.dumps({"z2": list(z2), "pitch": pitch, "wavelength": wavelength}))


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args, run: Run):
    cfg = run.cfg
    scene = make_scene(cfg.seed, cfg.fov, cfg.slide, cfg.rotation_deg, cfg.warp_amplitude)
    geometry = geometry_from(cfg)
    stack = simulate_stack(scene.phase, geometry, cfg.noise_std, cfg.seed)
    out = run.out
    io.write_tensor(run.output("phase", out / "phase_true.pstn"), scene.phase.values.astype(np.float32))
    io.save_phase_png(run.output("phase_png", out / "phase_true.png"), scene.phase.values)
    io.save_rgb_png(run.output("color", out / "color_true.png"), scene.color)
    io.save_rgb_png(run.output("slide", out / "slide.png"), scene.slide_color)
    _write_stack(run.output("holograms", out / "holograms.pstn"), stack.intensities, stack.z2,
                 stack.pitch, stack.wavelength)
    factor = integer_factor(geometry)
    frames = [[sensor_sample(i, factor, (dx, dy)).intensity for dy in range(factor) for dx in range(factor)]
              for i in stack.intensities]
    io.write_tensor(run.output("frames", out / "frames.pstn"), np.asarray(frames, dtype=np.float32))
    _stack_meta_path(out / "frames.pstn").write_text(json.dumps(
        {"z2": list(stack.z2), "pitch": stack.pitch, "wavelength": stack.wavelength, "factor": factor}))
    run.metric(fov=cfg.fov, planes=len(stack), fov_offset=list(scene.offset),
               background_fraction=scene.phantom.background_fraction)


def cmd_psr(args, run: Run):
    path = _require(args.input)
    run.input("frames", path)
    frames = io.read_tensor(path).astype(np.float64)
    meta_path = _stack_meta_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    factor = int(meta.get("factor", integer_factor(geometry_from(run.cfg))))
    if frames.ndim == 3:
        frames = frames[None]
    if frames.ndim != 4:
        raise ValueError(f"expected frames shaped (planes, frames, h, w), got {frames.shape}")
    fused, shifts = [], []
    for plane in frames:
        grid = estimate_shifts(list(plane), factor)
        shifts.append(grid.shifts)
        fused.append(np.clip(shift_and_add(list(plane), grid, factor), 0.0, None))
    z2 = meta.get("z2", list(geometry_from(run.cfg).z2_list)[:len(fused)])
    _write_stack(run.output("holograms", run.out / "holograms_psr.pstn"), fused, z2,
                 meta.get("pitch", run.cfg.recon_pitch), meta.get("wavelength", run.cfg.wavelength))
    run.metric(factor=factor, frames_per_plane=frames.shape[1], shifts=shifts)


def cmd_autofocus(args, run: Run):
    cfg = run.cfg
    stack = _load_stack(args.input, cfg)
    run.input("holograms", args.input)
    z_range = (cfg.focus_min, cfg.focus_max)
    found = [autofocus(i, z_range, cfg.focus_step, stack.pitch, stack.wavelength) for i in stack.intensities]
    run.metric(z_range=list(z_range), z_step=cfg.focus_step, z_found=found, z_nominal=list(stack.z2))
    print(" ".join(f"{z:.1f}" for z in found))


def cmd_reconstruct(args, run: Run):
    cfg = run.cfg
    stack = _load_stack(args.input, cfg)
    run.input("holograms", args.input)
    residuals = []
    phase = reconstruct_phase(stack, cfg.iterations,
                              callback=lambda k, f: residuals.append(amplitude_residual(f, stack))).values
    io.write_tensor(run.output("phase", run.out / "phase.pstn"), phase.astype(np.float32))
    io.save_phase_png(run.output("phase_png", run.out / "phase.png"), phase)
    run.metric(iterations=cfg.iterations, amplitude_residual=residuals, final_residual=residuals[-1])


def cmd_register(args, run: Run):
    cfg = run.cfg
    phase = io.load_image(_require(args.phase))
    slide = io.load_image(_require(args.color))
    run.input("phase", args.phase)
    run.input("color", args.color)
    if slide.ndim != 3:
        raise ValueError(f"{args.color}: expected an RGB image")
    rough = None
    if args.rough_model:
        rough, _ = io.load_model(_require(args.rough_model))
        run.input("rough_model", args.rough_model)
    alignment = global_align(phase, slide)
    reg = elastic_align(phase, slide, alignment, rough, cfg.block, cfg.search_radius, cfg.margin)
    io.save_rgb_png(run.output("color", run.out / "registered.png"), np.nan_to_num(reg.color))
    io.write_tensor(run.output("valid", run.out / "valid.pstn"), reg.valid.astype(np.uint8))
    run.metric(fov_offset=list(alignment.fov_offset), fov_score=alignment.fov_score,
               affine=alignment.transform.matrix, affine_score=alignment.affine_score,
               polarity_inverted=alignment.inverted, rendering="rough network" if rough else "phase",
               max_displacement=float(np.max(np.hypot(reg.field.dy, reg.field.dx))),
               valid_fraction=float(reg.valid.mean()))


def cmd_train(args, run: Run):
    cfg = run.cfg
    # the paper profile runs the same data path with full-size networks and patches
    report, result, _ = desk_run(cfg, progress=log.info)
    run.metric(**report)
    io.save_model(run.output("model", run.out / "model.pstm"), result.generator,
                  extra={"seed": cfg.seed, "profile": cfg.profile, "best_iteration": result.best_iteration})
    curve = run.out / "validation_l1.csv"
    curve.write_text("iteration,val_l1\n" + "".join(f"{i},{v:.8f}\n" for i, v in result.validation))
    run.output("validation_curve", curve)


def cmd_infer(args, run: Run):
    cfg = run.cfg
    gen, header = io.load_model(_require(args.model))
    phase = io.load_image(_require(args.input))
    run.input("model", args.model)
    run.input("phase", args.input)
    if phase.ndim != 2:
        raise ValueError(f"{args.input}: expected a 2-D phase map")
    h, w = phase.shape
    if max(h, w) > cfg.tile:
        rgb = infer(gen, phase, tile=cfg.tile, overlap=cfg.tile_overlap)
        tiles = tile_grid((h, w), cfg.tile, cfg.tile_overlap)
    else:
        rgb = infer(gen, phase)
        tiles = [(0, 0)]
    io.save_rgb_png(run.output("color", run.out / "virtual_stain.png"), rgb)
    run.metric(shape=[h, w], tiles=len(tiles), tile_positions=tiles, tile=cfg.tile,
               overlap=cfg.tile_overlap)


def cmd_evaluate(args, run: Run):
    pred = io.load_image(_require(args.prediction))
    ref = io.load_image(_require(args.reference))
    run.input("prediction", args.prediction)
    run.input("reference", args.reference)
    score = ssim(pred, ref)
    run.metric(ssim=score)
    print(f"SSIM {score:.6f}")


def cmd_robustness(args, run: Run):
    cfg = run.cfg
    gen, _ = io.load_model(_require(args.model))
    phase = io.load_image(_require(args.input))
    run.input("model", args.model)
    run.input("phase", args.input)
    rows = noise_robustness_curve(lambda p: infer(gen, p), phase, cfg.noise_betas, cfg.noise_lengths,
                                  trials=cfg.noise_trials, seed=cfg.seed, fixed_snr=True,
                                  pitch=cfg.recon_pitch)
    csv = write_robustness_csv(rows, run.output("csv", run.out / "robustness.csv"))
    run.metric(rows=[r.__dict__ for r in rows])
    return csv


COMMANDS = {
    "simulate": (cmd_simulate, "phantom scene, hologram stack and sensor frames"),
    "psr": (cmd_psr, "pixel super-resolution of sub-pixel shifted frames"),
    "autofocus": (cmd_autofocus, "sample-to-sensor distance of each hologram"),
    "reconstruct": (cmd_reconstruct, "multi-height phase recovery"),
    "register": (cmd_register, "align a stained image to a phase image"),
    "train": (cmd_train, "simulate, register and train the staining network"),
    "infer": (cmd_infer, "virtually stain a phase image"),
    "evaluate": (cmd_evaluate, "SSIM between two images"),
    "robustness": (cmd_robustness, "SSIM under smoothed phase noise"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (unknown keys are rejected)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--profile", choices=("paper", "desk"), help="network/training profile")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="virtualstain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    for name in ("psr", "autofocus", "reconstruct", "infer", "robustness"):
        parsers[name].add_argument("--input", required=True, type=Path)
    for name in ("infer", "robustness"):
        parsers[name].add_argument("--model", required=True, type=Path)
    parsers["register"].add_argument("--phase", required=True, type=Path)
    parsers["register"].add_argument("--color", required=True, type=Path)
    parsers["register"].add_argument("--rough-model", type=Path)
    parsers["evaluate"].add_argument("--prediction", required=True, type=Path)
    parsers["evaluate"].add_argument("--reference", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, profile=args.profile)
        args.out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, args.out)
        if args.config:
            run.input("config", args.config)
        COMMANDS[args.command][0](args, run)
        path = run.finish()
    except (ConfigError, io.FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    except Exception as exc:  # anything else is a runtime failure, not bad input
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    print(f"report: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
