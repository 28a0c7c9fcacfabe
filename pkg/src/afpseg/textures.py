"""Texture sources used to modulate rendered depth images.

Real deployments can point a :class:`DirectoryTextureSource` at a folder
of grayscale photographs; everything else (tests, CLI defaults) uses
:class:`ProceduralTextureSource`, which synthesises multi-octave value
noise deterministically from a descriptor, so no image assets need to
ship with the package.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "NoiseDescriptor",
    "procedural_texture",
    "TextureSource",
    "ProceduralTextureSource",
    "DirectoryTextureSource",
    "crop_texture",
]


@dataclass(frozen=True)
class NoiseDescriptor:
    """Recipe for procedural value noise.

    base_frequency is in lattice cells per pixel (the first octave has
    cells of 1/base_frequency pixels); each further octave doubles the
    frequency and halves the amplitude.
    """

    octaves: int = 4
    base_frequency: float = 1.0 / 48.0
    seed: int = 0

    def __post_init__(self):
        if self.octaves < 1:
            raise ConfigurationError("octaves must be >= 1")
        if not self.base_frequency > 0:
            raise ConfigurationError("base_frequency must be positive")


def _fade(t):
    # Smoothstep curve 6t^5 - 15t^4 + 10t^3; zero first/second derivative
    # at the lattice points, which hides cell seams.
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _value_noise_octave(height, width, frequency, rng):
    """One octave of value noise in [0, 1], bilinear with smoothstep fade."""
    cells_y = int(np.ceil(height * frequency)) + 1
    cells_x = int(np.ceil(width * frequency)) + 1
    lattice = rng.random((cells_y + 1, cells_x + 1))

    ys = np.arange(height, dtype=np.float64) * frequency
    xs = np.arange(width, dtype=np.float64) * frequency
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    ty = _fade(ys - y0)[:, np.newaxis]
    tx = _fade(xs - x0)[np.newaxis, :]

    v00 = lattice[np.ix_(y0, x0)]
    v01 = lattice[np.ix_(y0, x0 + 1)]
    v10 = lattice[np.ix_(y0 + 1, x0)]
    v11 = lattice[np.ix_(y0 + 1, x0 + 1)]

    top = v00 + (v01 - v00) * tx
    bottom = v10 + (v11 - v10) * tx
    return top + (bottom - top) * ty


def procedural_texture(
    height: int, width: int, descriptor: NoiseDescriptor, rng: np.random.Generator
) -> np.ndarray:
    """Multi-octave value noise image, float64 in [0, 1].

    Octaves are combined with amplitude weights 1, 1/2, 1/4, ... and the
    weighted average keeps the result inside [0, 1] without any per-image
    rescaling, so a vanishing base frequency genuinely yields a
    near-constant image instead of stretched residual noise.
    """
    total = np.zeros((height, width), dtype=np.float64)
    weight_sum = 0.0
    for octave in range(descriptor.octaves):
        frequency = descriptor.base_frequency * (2.0**octave)
        amplitude = 0.5**octave
        total += amplitude * _value_noise_octave(height, width, frequency, rng)
        weight_sum += amplitude
    return total / weight_sum


class TextureSource:
    """Indexed collection of grayscale textures in [0, 1]."""

    def __len__(self) -> int:  # pragma: no cover - interface stub
        raise NotImplementedError

    def get(self, index: int) -> np.ndarray:  # pragma: no cover - interface stub
        raise NotImplementedError

    def pick(self, texture_id: int) -> np.ndarray:
        """Map a raw sampler id onto this source's index space."""
        n = len(self)
        if n <= 0:
            raise ConfigurationError("texture source is empty")
        return self.get(int(texture_id) % n)


class ProceduralTextureSource(TextureSource):
    """Deterministic procedural textures; index i always yields the same image.

    Images are memoised after first use — each index is pure function of
    (descriptor, index), so the cache never changes what callers observe,
    it only avoids regenerating noise for every scene in a large dataset.
    """

    def __init__(self, height: int, width: int, descriptor: NoiseDescriptor | None = None,
                 count: int = 64):
        if count < 1:
            raise ConfigurationError("texture count must be >= 1")
        self.height = int(height)
        self.width = int(width)
        self.descriptor = descriptor or NoiseDescriptor()
        self.count = int(count)
        self._generate = functools.lru_cache(maxsize=self.count)(self._generate_uncached)

    def __len__(self):
        return self.count

    def _generate_uncached(self, index: int) -> np.ndarray:
        key = np.array([self.descriptor.seed & ((1 << 64) - 1), index], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        return procedural_texture(self.height, self.width, self.descriptor, rng)

    def get(self, index):
        if not 0 <= index < self.count:
            raise ConfigurationError(f"texture index {index} out of range [0, {self.count})")
        return self._generate(int(index))


class DirectoryTextureSource(TextureSource):
    """Grayscale images from a directory, sorted by filename.

    Accepts 8-bit and 16-bit grayscale (colour inputs are converted);
    values are scaled to [0, 1].
    """

    _SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")

    def __init__(self, directory: str | Path):
        directory = Path(directory)
        if not directory.is_dir():
            raise ConfigurationError(f"texture directory not found: {directory}")
        self.paths = sorted(
            p for p in directory.iterdir() if p.suffix.lower() in self._SUFFIXES
        )
        if not self.paths:
            raise ConfigurationError(f"no texture images in {directory}")

    def __len__(self):
        return len(self.paths)

    def get(self, index):
        from PIL import Image

        with Image.open(self.paths[index]) as img:
            if img.mode == "I;16":
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        return arr


def crop_texture(texture: np.ndarray, height: int, width: int,
                 offset: tuple[float, float]) -> np.ndarray:
    """Cut a (height, width) window out of a texture.

    ``offset`` is relative in [0, 1) per axis and is scaled onto the
    available slack, so the same latent offset works with any texture
    size that is at least as large as the canvas.
    """
    th, tw = texture.shape
    if th < height or tw < width:
        raise ConfigurationError(
            f"texture {th}x{tw} is smaller than the {height}x{width} canvas"
        )
    oy = int(offset[1] * (th - height + 1))
    ox = int(offset[0] * (tw - width + 1))
    oy = min(oy, th - height)
    ox = min(ox, tw - width)
    return texture[oy : oy + height, ox : ox + width]
