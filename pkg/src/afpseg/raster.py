"""Rasterization of latent scenes into depth and label images.

The renderer owns the geometry-to-pixels rules:

* a pixel is covered by a polygon iff its centre (col + 0.5, row + 0.5)
  lies inside under the even-odd rule, with half-open boundary handling
  so abutting tows tile the canvas exactly;
* pixels covered by a single tow sit at depth 1.0, uncovered pixels at
  0.0, and where two tows overlap the depth climbs from 1.0 to 2.0 along
  a sigmoid of the distance into the overlap from the buried tow's edge,
  while the top tow's boundary stays a sharp step;
* fuzzball fibers are one-pixel Bresenham lines that each raise the
  depth by a fixed increment and override the class label.

Ground-truth labels are purely geometric; the nuisance stage (ramp,
texture, sensor noise) only ever touches the observed depth image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, GeometryError, ShapeError
from .scene import ControlGrid, FuzzballGeometry, GeneratorConfig, NuisanceParams, SceneSample
from .textures import NoiseDescriptor, ProceduralTextureSource, TextureSource, crop_texture

__all__ = [
    "GAP",
    "TOW",
    "OVERLAP",
    "FUZZBALL",
    "NUM_CLASSES",
    "CLASS_NAMES",
    "LABEL_PALETTE",
    "DEFAULT_TRANSITION_PX",
    "FIBER_DEPTH",
    "TrainingExample",
    "polygon_mask",
    "fill_polygon",
    "one_sided_distance_transform",
    "sigmoid_profile",
    "tow_polygon",
    "rasterize_tows",
    "render_fuzzball",
    "apply_nuisance",
    "render_scene",
    "default_texture_source",
    "write_depth_png",
    "write_labels_png",
    "read_labels_png",
    "read_depth_png",
]

GAP = 0
TOW = 1
OVERLAP = 2
FUZZBALL = 3
NUM_CLASSES = 4
CLASS_NAMES = ("gap", "tow", "overlap", "fuzzball")

# Preview colours: gap red, tow green, overlap blue, fuzzball yellow.
LABEL_PALETTE = np.array(
    [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]], dtype=np.uint8
)

DEFAULT_TRANSITION_PX = 6.0
FIBER_DEPTH = 0.15


@dataclass
class TrainingExample:
    """Rendered sample: observed depth x, labels y, clean depth z."""

    x: np.ndarray  # (h, w) float64, depth with nuisance applied
    y: np.ndarray  # (h, w) uint8, class ids
    z: np.ndarray  # (h, w) float64, nuisance-free depth

    def __eq__(self, other):
        if not isinstance(other, TrainingExample):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.z, other.z)
        )


# ---------------------------------------------------------------------------
# polygon scan conversion
# ---------------------------------------------------------------------------


def _check_vertices(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2:
        raise GeometryError("vertices must be an (n, 2) array of (x, y) pairs")
    if v.shape[0] < 3:
        raise GeometryError(f"a polygon needs at least 3 vertices, got {v.shape[0]}")
    if not np.isfinite(v).all():
        raise GeometryError("polygon vertices must be finite")
    return v


def polygon_mask(vertices, height: int, width: int) -> np.ndarray:
    """Boolean coverage mask of a simple polygon on an integer raster.

    Scanline even-odd fill at pixel centres.  Span ends are half-open
    (a centre exactly on a shared edge belongs to the polygon on the
    right/below), which makes abutting polygons tile without holes or
    double coverage.
    """
    v = _check_vertices(vertices)
    mask = np.zeros((height, width), dtype=bool)

    x1 = v[:, 0]
    y1 = v[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)

    row_lo = max(0, math.ceil(v[:, 1].min() - 0.5))
    row_hi = min(height, math.ceil(v[:, 1].max() - 0.5))
    for row in range(row_lo, row_hi):
        yc = row + 0.5
        crosses = (y1 <= yc) != (y2 <= yc)  # horizontal edges never cross
        if not crosses.any():
            continue
        xs = x1[crosses] + (yc - y1[crosses]) * (x2[crosses] - x1[crosses]) / (
            y2[crosses] - y1[crosses]
        )
        xs.sort()
        for i in range(0, len(xs) - 1, 2):
            lo = max(0, math.ceil(xs[i] - 0.5))
            hi = min(width, math.ceil(xs[i + 1] - 0.5))
            if lo < hi:
                mask[row, lo:hi] = True
    return mask


def fill_polygon(vertices, canvas: np.ndarray, value) -> np.ndarray:
    """Write ``value`` into every canvas cell covered by the polygon."""
    if canvas.ndim != 2:
        raise ShapeError("canvas must be 2-D")
    canvas[polygon_mask(vertices, canvas.shape[0], canvas.shape[1])] = value
    return canvas


# ---------------------------------------------------------------------------
# exact Euclidean distance transform
# ---------------------------------------------------------------------------


def _edt_exact(inside: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest False cell.

    Two-pass squared-distance transform: a linear sweep down/up each
    column, then a lower-envelope-of-parabolas pass along each row.
    Cells that are False get distance 0.  The array border is treated as
    a hard boundary (no implicit outside); callers pad to choose the
    border convention.
    """
    h, w = inside.shape
    big = float(h + w + 1)

    # Column pass: 1-D distance to the nearest seed in the same column.
    g = np.where(inside, big, 0.0)
    for r in range(1, h):
        np.minimum(g[r], g[r - 1] + 1.0, out=g[r])
    for r in range(h - 2, -1, -1):
        np.minimum(g[r], g[r + 1] + 1.0, out=g[r])

    # Row pass: d^2(x) = min_x' ((x - x')^2 + g(x')^2).
    f = g * g
    out = np.empty((h, w), dtype=np.float64)
    qs = np.arange(w)
    qs2 = qs.astype(np.float64) ** 2
    v = np.empty(w, dtype=np.intp)
    z = np.empty(w + 1, dtype=np.float64)
    for r in range(h):
        fr = f[r]
        fq = fr + qs2  # parabola heights shifted to a common origin
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, w):
            vk = v[k]
            s = (fq[q] - fq[vk]) / (2.0 * (q - vk))
            while s <= z[k]:
                k -= 1
                vk = v[k]
                s = (fq[q] - fq[vk]) / (2.0 * (q - vk))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        idx = np.searchsorted(z[1 : k + 1], qs, side="right")
        near = v[idx]
        out[r] = (qs - near) ** 2 + fr[near]

    return np.sqrt(out)


def one_sided_distance_transform(mask) -> np.ndarray:
    """Distance from each True pixel to the nearest outside pixel.

    Outside means a False pixel or the ring just beyond the raster, i.e.
    the border counts as outside: a lone True pixel gets distance 1.0.
    False pixels map to 0.0.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError("mask must be 2-D")
    if m.size == 0:
        return np.zeros(m.shape, dtype=np.float64)
    m = m.astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    return _edt_exact(padded)[1:-1, 1:-1]


def sigmoid_profile(d, transition_px: float = DEFAULT_TRANSITION_PX):
    """Rising sigmoid used for the buried-edge depth ramp.

    Value 0.5 at transition_px / 2; steepness k = 8 / transition_px, so
    the profile covers roughly [0.018, 0.982] over [0, transition_px].
    """
    if not transition_px > 0:
        raise ConfigurationError("transition_px must be positive")
    k = 8.0 / transition_px
    z = k * (np.asarray(d, dtype=np.float64) - transition_px / 2.0)
    # Evaluate each branch only where it is numerically safe.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if np.isscalar(d) or np.ndim(d) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# tow field rendering
# ---------------------------------------------------------------------------


def tow_polygon(grid: ControlGrid, column: int, tow_width_px: float) -> np.ndarray:
    """Quad-strip outline of one tow: its column polyline offset by +-t/2."""
    pts = grid.points[:, column, :]
    half = np.array([tow_width_px / 2.0, 0.0])
    left = pts - half
    right = pts + half
    return np.concatenate([left, right[::-1]], axis=0)


def _buried_ramp_distance(
    tow_mask: np.ndarray, select: np.ndarray, transition_px: float
) -> np.ndarray:
    """Distance into the overlap from the buried tow's edge, for ``select`` pixels.

    Computed as the buried tow's own distance transform minus one, so the
    covered pixel right at the edge starts the ramp at d = 0.  The
    transform runs on a crop around the selected pixels with the crop
    border treated as inside (tows continue past the canvas); beyond the
    crop margin the sigmoid is saturated anyway.
    """
    margin = int(math.ceil(transition_px)) + 3
    ys, xs = np.nonzero(select)
    y0 = max(int(ys.min()) - margin, 0)
    y1 = min(int(ys.max()) + margin + 1, tow_mask.shape[0])
    x0 = max(int(xs.min()) - margin, 0)
    x1 = min(int(xs.max()) + margin + 1, tow_mask.shape[1])
    crop = np.pad(tow_mask[y0:y1, x0:x1], 1, constant_values=True)
    if crop.shape[0] > crop.shape[1]:
        # The transform is isotropic; run the sequential pass along the
        # short axis (overlap bands are tall and narrow).
        dist = _edt_exact(crop.T).T[1:-1, 1:-1]
    else:
        dist = _edt_exact(crop)[1:-1, 1:-1]
    return np.maximum(dist[ys - y0, xs - x0] - 1.0, 0.0)


def rasterize_tows(
    grid: ControlGrid,
    config: GeneratorConfig,
    transition_px: float = DEFAULT_TRANSITION_PX,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render the tow field to (depth z, labels y, top_mask).

    Tows are drawn buried-first: the shifted column (if any) goes down
    before its neighbours, the rest follow left to right.  Overlap depth
    ramps smoothly from the buried tow's covered edge and steps sharply
    at the top tow's boundary.  ``top_mask`` marks overlap pixels, where
    the visible surface belongs to the later-drawn tow.
    """
    h, w = config.height_px, config.width_px
    t = config.tow_width_px

    order = list(range(grid.columns))
    if grid.shifted_column is not None:
        order.remove(grid.shifted_column)
        order.insert(0, grid.shifted_column)

    cover = np.zeros((h, w), dtype=np.uint8)
    first_cover = np.full((h, w), -1, dtype=np.int16)
    masks: dict[int, np.ndarray] = {}
    for column in order:
        m = polygon_mask(tow_polygon(grid, column, t), h, w)
        masks[column] = m
        np.copyto(first_cover, column, where=m & (first_cover < 0))
        cover[m] += 1

    z = np.zeros((h, w), dtype=np.float64)
    y = np.full((h, w), GAP, dtype=np.uint8)
    single = cover == 1
    z[single] = 1.0
    y[single] = TOW

    top_mask = cover >= 2
    y[top_mask] = OVERLAP
    for buried in np.unique(first_cover[top_mask]):
        select = top_mask & (first_cover == buried)
        d = _buried_ramp_distance(masks[int(buried)], select, transition_px)
        z[select] = 1.0 + sigmoid_profile(d, transition_px)

    return z, y, top_mask


# ---------------------------------------------------------------------------
# fuzzball rendering
# ---------------------------------------------------------------------------


def _bresenham(x0: int, y0: int, x1: int, y1: int):
    """Integer line cells from (x0, y0) to (x1, y1), endpoints inclusive."""
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    cells = []
    while True:
        cells.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return cells


def render_fuzzball(
    geometry: FuzzballGeometry,
    z: np.ndarray,
    y: np.ndarray,
    fiber_depth: float = FIBER_DEPTH,
) -> None:
    """Draw fuzzball fibers into depth and label images in place.

    Each fiber is a one-pixel line adding ``fiber_depth`` to every cell
    it crosses; crossings of several fibers accumulate.  The fuzzball
    label overrides whatever lies underneath.
    """
    h, w = z.shape
    for p0, p1 in geometry.fibers:
        cells = _bresenham(
            int(math.floor(p0[0])),
            int(math.floor(p0[1])),
            int(math.floor(p1[0])),
            int(math.floor(p1[1])),
        )
        for cx, cy in cells:
            if 0 <= cx < w and 0 <= cy < h:
                z[cy, cx] += fiber_depth
                y[cy, cx] = FUZZBALL


# ---------------------------------------------------------------------------
# nuisance stage
# ---------------------------------------------------------------------------

_STREAM_NOISE = 7


def apply_nuisance(
    z: np.ndarray,
    top_mask: np.ndarray,
    nuisance: NuisanceParams,
    textures: TextureSource,
    config: GeneratorConfig,
) -> np.ndarray:
    """Observed depth: x = z + ramp + texture modulation + sensor noise.

    The ramp is linear across columns and zero at the image centre line.
    The top texture is blended over ``top_mask`` (overlap surfaces), the
    bottom texture everywhere else; both enter as alpha * (T - 0.5).
    Labels are not an input here by design: nuisance cannot change them.
    """
    h, w = z.shape
    x = z.astype(np.float64, copy=True)

    cols = np.arange(w, dtype=np.float64) - w / 2.0
    x += nuisance.ramp_slope * cols[np.newaxis, :]

    if config.texture_alpha != 0.0:
        tex_top = crop_texture(
            textures.pick(nuisance.texture_top_id), h, w, nuisance.texture_top_offset
        )
        tex_bottom = crop_texture(
            textures.pick(nuisance.texture_bottom_id), h, w, nuisance.texture_bottom_offset
        )
        tex = np.where(top_mask, tex_top, tex_bottom)
        x += config.texture_alpha * (tex - 0.5)

    if config.noise_sigma > 0.0:
        key = np.array([nuisance.noise_seed, _STREAM_NOISE], dtype=np.uint64)
        noise_rng = np.random.Generator(np.random.Philox(key=key))
        x += config.noise_sigma * noise_rng.standard_normal((h, w))

    return x


def default_texture_source(config: GeneratorConfig) -> TextureSource:
    """Procedural fallback source sized with slack for random crops."""
    return ProceduralTextureSource(
        height=config.height_px + 64,
        width=config.width_px + 64,
        descriptor=NoiseDescriptor(),
        count=64,
    )


def render_scene(scene: SceneSample, textures: TextureSource | None = None) -> TrainingExample:
    """Rasterize a latent scene into a full training example."""
    config = scene.config
    z, y, top_mask = rasterize_tows(scene.grid, config)
    if scene.fuzzball is not None:
        render_fuzzball(scene.fuzzball, z, y)
    if textures is None:
        textures = default_texture_source(config)
    x = apply_nuisance(z, top_mask, scene.nuisance, textures, config)
    return TrainingExample(x=x, y=y, z=z)


# ---------------------------------------------------------------------------
# PNG export
# ---------------------------------------------------------------------------


def write_depth_png(path, depth: np.ndarray) -> None:
    """8-bit grayscale PNG; the depth range is min-max scaled per image."""
    from PIL import Image

    d = np.asarray(depth, dtype=np.float64)
    lo = float(d.min())
    hi = float(d.max())
    if hi - lo < 1e-12:
        scaled = np.zeros(d.shape, dtype=np.uint8)
    else:
        scaled = np.clip(np.rint((d - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(scaled, mode="L").save(path)


def write_labels_png(path, labels: np.ndarray) -> None:
    """Colour-coded label PNG using the class palette."""
    from PIL import Image

    lab = np.asarray(labels)
    if lab.min() < 0 or lab.max() >= NUM_CLASSES:
        raise DataError("labels out of range for the class palette")
    Image.fromarray(LABEL_PALETTE[lab.astype(np.intp)], mode="RGB").save(path)


def read_labels_png(path) -> np.ndarray:
    """Inverse of :func:`write_labels_png`; unknown colours are rejected."""
    from PIL import Image

    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    labels = np.full(rgb.shape[:2], -1, dtype=np.int16)
    for class_id, colour in enumerate(LABEL_PALETTE):
        labels[(rgb == colour).all(axis=-1)] = class_id
    if (labels < 0).any():
        raise DataError(f"unrecognised label colours in {path}")
    return labels.astype(np.uint8)


def read_depth_png(path) -> np.ndarray:
    """Grayscale PNG to float depth in [0, 1] (8- or 16-bit)."""
    from PIL import Image

    with Image.open(path) as img:
        if img.mode == "I;16":
            return np.asarray(img, dtype=np.float64) / 65535.0
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
