"""Strict JSON run configuration shared by the command-line tools.

Every key must be known; a typo is an error rather than a silently ignored
setting. Training overrides live in a nested ``"train"`` object whose keys
are the fields of :class:`virtualstain.neural.TrainConfig`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .neural.train import DESK_CONFIG, TrainConfig

PROFILE_NAMES = ("paper", "desk")
# rough-network cap; the desk networks reach a usable rendering much sooner
ROUGH_ITERATIONS = {"paper": 2000, "desk": 300}


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration entries."""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    profile: str = "desk"
    # optics (micrometres)
    z1: float = 75000.0
    sensor_pitch: float = 1.11
    recon_pitch: float = 0.37
    wavelength: float = 0.55
    z_start: float = 1000.0
    z_step: float = 15.0
    heights: int = 8
    noise_std: float = 0.0
    # phase recovery and super-resolution
    iterations: int = 30
    psr_steps: int = 3
    # phantoms / scenes
    fov: int = 264
    slide: int = 384
    train_seeds: tuple = (0, 1, 2, 3, 4, 5)
    test_seeds: tuple = (100, 101)
    # autofocus scan
    focus_min: float = 800.0
    focus_max: float = 1200.0
    focus_step: float = 15.0
    # registration
    rotation_deg: float = 4.0
    warp_amplitude: float = 3.0
    block: int = 32
    search_radius: int = 10
    margin: int = 16
    rough_iterations: int | None = None  # None: 2000 for the paper profile, 300 for desk
    # inference tiling
    tile: int = 1792
    tile_overlap: int = 128
    # robustness sweep
    noise_betas: tuple = (0.0, 0.1)  # noise std in radians (fixed SNR per beta)
    noise_lengths: tuple = (1.0, 2.0, 4.0, 8.0)
    noise_trials: int = 10
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.profile not in PROFILE_NAMES:
            raise ConfigError(f"profile must be one of {PROFILE_NAMES}, got {self.profile!r}")
        for name in ("heights", "iterations", "psr_steps", "fov", "slide", "block", "noise_trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.slide < self.fov:
            raise ConfigError("slide must be at least as large as fov")
        if self.focus_max <= self.focus_min or self.focus_step <= 0:
            raise ConfigError("autofocus scan range is empty")
        if self.rough_iterations is not None and self.rough_iterations < 1:
            raise ConfigError("rough_iterations must be >= 1")
        unknown = set(self.train) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")

    @property
    def rough_cap(self) -> int:
        if self.rough_iterations is not None:
            return self.rough_iterations
        return ROUGH_ITERATIONS[self.profile]

    def train_config(self) -> TrainConfig:
        """The training preset for the profile with this config's overrides applied."""
        base = DESK_CONFIG if self.profile == "desk" else TrainConfig()
        try:
            return replace(base, seed=self.seed, **self.train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train settings: {exc}") from exc

    def to_dict(self):
        return asdict(self)


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {unknown}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(RunConfig, key, None)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{key} must be a list")
            value = tuple(value)
        elif key == "rough_iterations":
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f"{key} must be an integer")
        elif key == "train":
            if not isinstance(value, dict):
                raise ConfigError("train must be an object")
        elif isinstance(default, bool) or isinstance(default, str):
            if not isinstance(value, type(default)):
                raise ConfigError(f"{key} must be a {type(default).__name__}")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{key} must be a number")
            value = float(value)
        kwargs[key] = value
    return RunConfig(**kwargs)


def load_config(path=None, **overrides) -> RunConfig:
    """Read a JSON config (or defaults when ``path`` is None) then apply flag overrides."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(data)
