"""Latent scene model for simulated fiber-placement surfaces.

A scene is sampled in layers: a jittered control grid describing tow
geometry (with at most one column given a larger lateral shift, which is
what produces a gap/overlap pair), an optional fuzzball defect built from
straight fibers scattered around a centre point, and nuisance parameters
(surface ramp, texture selection, sensor noise seed) that perturb the
rendered depth image without changing ground-truth labels.

All sampling is driven by a counter-based generator (Philox) keyed on the
scene seed plus a per-component stream tag, so identical (config, seed)
pairs reproduce bit-identical scenes on any platform.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "GeneratorConfig",
    "ControlGrid",
    "FuzzballGeometry",
    "NuisanceParams",
    "SceneSample",
    "component_rng",
    "sample_control_grid",
    "sample_fuzzball",
    "sample_nuisance",
    "sample_scene",
]

_SEED_MASK = (1 << 64) - 1

# Stream tags keep the per-component generators independent of each other.
_STREAM_GRID = 1
_STREAM_FUZZBALL = 2
_STREAM_NUISANCE = 3
_STREAM_PRESENCE = 4


def component_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one scene component.

    Philox is keyed with (seed, stream) so every component draws from its
    own stream; adding draws to one sampler never disturbs the others.
    """
    key = np.array([seed & _SEED_MASK, stream & _SEED_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class GeneratorConfig:
    """Scene generator parameters.

    Lengths are in pixels; ``jitter_rel_sigma`` and ``shift_rel_range``
    are fractions of the tow width.
    """

    height_px: int = 200
    width_px: int = 300
    tow_width_px: float = 36.0
    jitter_rel_sigma: float = 0.03
    shift_rel_range: tuple[float, float] = (0.05, 0.5)
    fuzzball_scale_px: float = 30.0
    # Calibrated so fuzzball pixels average about 5% of a default scene.
    fuzzball_fiber_count_range: tuple[int, int] = (100, 155)
    shift_probability: float = 1.0
    fuzzball_probability: float = 1.0
    ramp_edge_sigma: float = 0.3
    texture_alpha: float = 0.25
    noise_sigma: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "shift_rel_range", tuple(self.shift_rel_range))
        object.__setattr__(
            self, "fuzzball_fiber_count_range", tuple(self.fuzzball_fiber_count_range)
        )
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.height_px, int) or not isinstance(self.width_px, int):
            raise ConfigurationError("height_px and width_px must be integers")
        if self.height_px <= 0 or self.width_px <= 0:
            raise ConfigurationError("image extents must be positive")
        t = self.tow_width_px
        if not math.isfinite(t) or t <= 0:
            raise ConfigurationError("tow_width_px must be positive")
        if self.height_px < 2 * t:
            raise ConfigurationError(
                f"height_px must be at least twice the tow width "
                f"(got {self.height_px} < 2 * {t})"
            )
        if self.jitter_rel_sigma < 0:
            raise ConfigurationError("jitter_rel_sigma must be >= 0")
        lo, hi = self.shift_rel_range
        if not (0 < lo < hi <= 0.5):
            raise ConfigurationError(
                f"shift_rel_range must satisfy 0 < low < high <= 0.5, got ({lo}, {hi})"
            )
        if self.fuzzball_scale_px <= 0:
            raise ConfigurationError("fuzzball_scale_px must be positive")
        clo, chi = self.fuzzball_fiber_count_range
        if not (isinstance(clo, int) and isinstance(chi, int)):
            raise ConfigurationError("fuzzball_fiber_count_range must hold integers")
        if not (0 <= clo <= chi):
            raise ConfigurationError("fuzzball_fiber_count_range must satisfy 0 <= low <= high")
        for name in ("shift_probability", "fuzzball_probability"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if self.ramp_edge_sigma < 0:
            raise ConfigurationError("ramp_edge_sigma must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if not math.isfinite(self.texture_alpha):
            raise ConfigurationError("texture_alpha must be finite")

    # -- derived geometry -------------------------------------------------

    @property
    def grid_columns(self) -> int:
        return math.ceil(self.width_px / self.tow_width_px) + 1

    @property
    def grid_rows(self) -> int:
        return math.ceil(self.height_px / self.tow_width_px) + 1

    # -- presets -----------------------------------------------------------

    @classmethod
    def full_scale(cls) -> "GeneratorConfig":
        """Production-sized scenes (the defaults)."""
        return cls()

    @classmethod
    def desk_scale(cls) -> "GeneratorConfig":
        """Small scenes for fast experiments and CI runs."""
        return cls(
            height_px=64,
            width_px=96,
            tow_width_px=12.0,
            fuzzball_scale_px=10.0,
            fuzzball_fiber_count_range=(20, 40),
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shift_rel_range"] = list(self.shift_rel_range)
        d["fuzzball_fiber_count_range"] = list(self.fuzzball_fiber_count_range)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("generator config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                "unknown generator config keys: " + ", ".join(sorted(unknown))
            )
        kwargs = dict(data)
        for key in ("shift_rel_range", "fuzzball_fiber_count_range"):
            if key in kwargs:
                value = kwargs[key]
                if not (isinstance(value, (list, tuple)) and len(value) == 2):
                    raise ConfigurationError(f"{key} must be a pair")
                kwargs[key] = tuple(value)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class ControlGrid:
    """Jittered tow control points plus the optional shifted column."""

    columns: int
    rows: int
    points: np.ndarray  # (rows, columns, 2) float64, (x, y) in px
    shifted_column: int | None
    shift_px: float | None

    def __eq__(self, other):
        if not isinstance(other, ControlGrid):
            return NotImplemented
        return (
            self.columns == other.columns
            and self.rows == other.rows
            and np.array_equal(self.points, other.points)
            and self.shifted_column == other.shifted_column
            and self.shift_px == other.shift_px
        )


@dataclass
class FuzzballGeometry:
    """Fiber tangle: all segments start near the centre point."""

    center: np.ndarray  # (2,) float64, (x, y)
    fibers: np.ndarray  # (n, 2, 2) float64, endpoints [(x0, y0), (x1, y1)]

    def __eq__(self, other):
        if not isinstance(other, FuzzballGeometry):
            return NotImplemented
        return np.array_equal(self.center, other.center) and np.array_equal(
            self.fibers, other.fibers
        )


@dataclass(frozen=True)
class NuisanceParams:
    """Label-preserving perturbations applied to the rendered depth image.

    Texture ids are raw 63-bit integers; a texture source maps them onto
    its own index space, so the sampler stays independent of how many
    textures are registered.  Crop offsets are relative in [0, 1).
    """

    ramp_slope: float
    texture_top_id: int
    texture_bottom_id: int
    texture_top_offset: tuple[float, float]
    texture_bottom_offset: tuple[float, float]
    noise_seed: int


@dataclass
class SceneSample:
    """Complete latent description of one scene."""

    config: GeneratorConfig
    grid: ControlGrid
    fuzzball: FuzzballGeometry | None
    nuisance: NuisanceParams
    seed: int


def base_lattice(config: GeneratorConfig) -> np.ndarray:
    """Undisplaced control points, shape (rows, columns, 2).

    The lattice has spacing ``tow_width_px`` on both axes and is centred
    on the canvas, so the outermost tows straddle the image borders
    symmetrically and every column stays at least partially in view.
    """
    t = config.tow_width_px
    cols = config.grid_columns
    rows = config.grid_rows
    x0 = 0.5 * (config.width_px - (cols - 1) * t)
    y0 = 0.5 * (config.height_px - (rows - 1) * t)
    xs = x0 + t * np.arange(cols, dtype=np.float64)
    ys = y0 + t * np.arange(rows, dtype=np.float64)
    points = np.empty((rows, cols, 2), dtype=np.float64)
    points[..., 0] = xs[np.newaxis, :]
    points[..., 1] = ys[:, np.newaxis]
    return points


def sample_control_grid(config: GeneratorConfig, rng: np.random.Generator) -> ControlGrid:
    """Draw the tow control grid: base lattice + jitter (+ column shift).

    Every point is displaced per axis by N(0, (jitter_rel_sigma * t)^2).
    With probability ``shift_probability`` a single column (any column,
    including the outermost ones) is additionally shifted horizontally by
    sign * |S| with |S| ~ U[low * t, high * t] and an equiprobable sign.
    """
    t = config.tow_width_px
    points = base_lattice(config)
    rows, cols = points.shape[:2]
    sigma = config.jitter_rel_sigma * t
    points = points + sigma * rng.standard_normal(points.shape)

    shifted_column = None
    shift_px = None
    if rng.random() < config.shift_probability:
        shifted_column = int(rng.integers(0, cols))
        lo, hi = config.shift_rel_range
        magnitude = rng.uniform(lo * t, hi * t)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        shift_px = float(sign * magnitude)
        points[:, shifted_column, 0] += shift_px

    return ControlGrid(
        columns=cols,
        rows=rows,
        points=points,
        shifted_column=shifted_column,
        shift_px=shift_px,
    )


def sample_fuzzball(config: GeneratorConfig, rng: np.random.Generator) -> FuzzballGeometry:
    """Draw a fuzzball: fibers fanning out from a random centre.

    Fiber start points are uniform in the disk of radius v/2 around the
    centre; each fiber extends by length L ~ U[v, 2v] at a uniform angle.
    """
    v = config.fuzzball_scale_px
    center = np.array(
        [rng.uniform(0.0, config.width_px), rng.uniform(0.0, config.height_px)],
        dtype=np.float64,
    )
    lo, hi = config.fuzzball_fiber_count_range
    count = int(rng.integers(lo, hi, endpoint=True))

    # Uniform in the disk: radius scales with sqrt of a uniform draw.
    radius = 0.5 * v * np.sqrt(rng.random(count))
    start_angle = rng.uniform(-np.pi, np.pi, count)
    p0 = center[np.newaxis, :] + radius[:, np.newaxis] * np.stack(
        [np.cos(start_angle), np.sin(start_angle)], axis=1
    )
    theta = rng.uniform(-np.pi, np.pi, count)
    length = rng.uniform(v, 2.0 * v, count)
    p1 = p0 + length[:, np.newaxis] * np.stack([np.cos(theta), np.sin(theta)], axis=1)

    fibers = np.stack([p0, p1], axis=1)
    return FuzzballGeometry(center=center, fibers=fibers)


def sample_nuisance(config: GeneratorConfig, rng: np.random.Generator) -> NuisanceParams:
    """Draw nuisance parameters: ramp slope, texture picks, noise seed.

    The ramp slope has standard deviation ramp_edge_sigma / (width / 2),
    i.e. the ramp reaches about +-ramp_edge_sigma at the image sides.
    """
    sigma_r = config.ramp_edge_sigma / (config.width_px / 2.0)
    ramp_slope = float(sigma_r * rng.standard_normal())
    texture_top_id = int(rng.integers(0, 1 << 63))
    texture_bottom_id = int(rng.integers(0, 1 << 63))
    top_offset = tuple(float(u) for u in rng.random(2))
    bottom_offset = tuple(float(u) for u in rng.random(2))
    noise_seed = int(rng.integers(0, 1 << 63))
    return NuisanceParams(
        ramp_slope=ramp_slope,
        texture_top_id=texture_top_id,
        texture_bottom_id=texture_bottom_id,
        texture_top_offset=top_offset,
        texture_bottom_offset=bottom_offset,
        noise_seed=noise_seed,
    )


def sample_scene(config: GeneratorConfig, seed: int) -> SceneSample:
    """Sample the full latent scene for one seed.

    Component samplers run on independent streams derived from the seed,
    so the fuzzball draw (for example) never changes the grid.
    """
    grid = sample_control_grid(config, component_rng(seed, _STREAM_GRID))
    fuzzball = None
    if component_rng(seed, _STREAM_PRESENCE).random() < config.fuzzball_probability:
        fuzzball = sample_fuzzball(config, component_rng(seed, _STREAM_FUZZBALL))
    nuisance = sample_nuisance(config, component_rng(seed, _STREAM_NUISANCE))
    return SceneSample(config=config, grid=grid, fuzzball=fuzzball, nuisance=nuisance, seed=seed)
