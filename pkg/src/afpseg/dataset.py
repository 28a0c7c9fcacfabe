"""AFPD sample containers and deterministic dataset production.

An AFPD file stores rendered training pairs — the nuisance-affected depth
image and its per-pixel class labels — together with the provenance
(generator config, base seed, count) needed to regenerate the same bytes
from scratch.  Layout, all integers little-endian:

    magic   4 bytes  b"AFPD"
    u16     container version (currently 1)
    u16     endianness tag (0x0001, written little-endian)
    u32     sample count
    u32     image height
    u32     image width
    u32     provenance length, then that many bytes of UTF-8 JSON
    per sample: height*width float32 depth values, row-major,
                then height*width uint8 labels

Fixed-size records make the reader random-access: sample ``i`` lives at a
computable offset, so evaluation and preview never load the whole file.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ConfigurationError, FileFormatError
from .raster import TrainingExample, default_texture_source, render_scene
from .scene import GeneratorConfig, sample_scene
from .textures import TextureSource

__all__ = [
    "DATASET_MAGIC",
    "DATASET_VERSION",
    "Dataset",
    "generate_dataset",
    "normalize_depth",
    "sample_example",
]

DATASET_MAGIC = b"AFPD"
DATASET_VERSION = 1
_ENDIAN_TAG = 0x0001
_HEADER = struct.Struct("<4sHHIII")


def sample_example(
    config: GeneratorConfig,
    seed: int,
    index: int,
    textures: TextureSource | None = None,
) -> TrainingExample:
    """Render sample ``index`` of the dataset rooted at ``seed``.

    Each sample draws from its own generator keyed by ``seed XOR index``,
    so any one sample can be regenerated without rendering its
    predecessors.
    """
    scene = sample_scene(config, int(seed) ^ int(index))
    return render_scene(scene, textures)


def normalize_depth(x: np.ndarray) -> np.ndarray:
    """Standardize one depth image: zero mean, unit deviation.

    The additive ramp and texture nuisances shift each image's depth range
    independently, so normalization is per image.  A (near-)constant image
    has no scale to recover and maps to all zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    std = float(x.std())
    if std < 1e-8:
        return np.zeros_like(x)
    return (x - float(x.mean())) / std


def _pack_header(count: int, height: int, width: int, provenance: dict) -> bytes:
    blob = json.dumps(provenance, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, _ENDIAN_TAG, count, height, width)
    return head + struct.pack("<I", len(blob)) + blob


def generate_dataset(
    config: GeneratorConfig,
    count: int,
    seed: int,
    path: str | os.PathLike,
    textures: TextureSource | None = None,
    threads: int = 1,
) -> str:
    """Render ``count`` samples and stream them to an AFPD file.

    Output bytes depend only on (config, count, seed, textures): samples
    are written in index order even when rendered by a thread pool.
    Returns the path written.
    """
    config.validate()
    count = int(count)
    if count < 0:
        raise ConfigurationError(f"sample count must be >= 0, got {count}")
    if threads < 1:
        raise ConfigurationError(f"threads must be >= 1, got {threads}")
    if textures is None:
        textures = default_texture_source(config)

    provenance = {"generator": config.to_dict(), "seed": int(seed), "count": count}
    path = os.fspath(path)

    def render(index: int) -> TrainingExample:
        return sample_example(config, seed, index, textures)

    with open(path, "wb") as fh:
        fh.write(_pack_header(count, config.height_px, config.width_px, provenance))
        if threads == 1 or count == 0:
            examples = map(render, range(count))
        else:
            pool = ThreadPoolExecutor(max_workers=threads)
            examples = pool.map(render, range(count))
        for example in examples:
            fh.write(np.ascontiguousarray(example.x, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(example.y, dtype=np.uint8).tobytes())
        if threads > 1 and count > 0:
            pool.shutdown()
    return path


class Dataset:
    """Random-access reader for AFPD files.

    Samples are returned as ``(depth float32, labels uint8)`` arrays of
    shape (height, width).  Reads re-open the file per access, so one
    Dataset may be shared freely across threads.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        with open(self.path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise FileFormatError(f"{self.path}: truncated dataset header")
            magic, version, endian, count, height, width = _HEADER.unpack(head)
            if magic != DATASET_MAGIC:
                raise FileFormatError(f"{self.path}: not an AFPD dataset (magic {magic!r})")
            if version != DATASET_VERSION:
                raise FileFormatError(
                    f"{self.path}: unsupported dataset version {version} "
                    f"(reader supports {DATASET_VERSION})"
                )
            if endian != _ENDIAN_TAG:
                raise FileFormatError(f"{self.path}: unsupported endianness tag {endian:#06x}")
            raw = fh.read(4)
            if len(raw) < 4:
                raise FileFormatError(f"{self.path}: truncated provenance block")
            (prov_len,) = struct.unpack("<I", raw)
            blob = fh.read(prov_len)
            if len(blob) < prov_len:
                raise FileFormatError(f"{self.path}: truncated provenance block")
            try:
                self.provenance = json.loads(blob.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FileFormatError(f"{self.path}: provenance is not valid JSON: {exc}")
            self._data_offset = fh.tell()
        self.count = int(count)
        self.height = int(height)
        self.width = int(width)
        pixels = self.height * self.width
        self._depth_bytes = pixels * 4
        self._record_bytes = pixels * 5
        expected = self._data_offset + self.count * self._record_bytes
        actual = os.path.getsize(self.path)
        if actual != expected:
            raise FileFormatError(
                f"{self.path}: file is {actual} bytes, expected {expected} "
                f"for {self.count} samples of {self.height}x{self.width}"
            )

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        index = int(index)
        if index < 0:
            index += self.count
        if not 0 <= index < self.count:
            raise IndexError(f"sample index {index} out of range [0, {self.count})")
        shape = (self.height, self.width)
        with open(self.path, "rb") as fh:
            fh.seek(self._data_offset + index * self._record_bytes)
            record = fh.read(self._record_bytes)
        depth = np.frombuffer(record, dtype="<f4", count=shape[0] * shape[1])
        labels = np.frombuffer(record, dtype=np.uint8, offset=self._depth_bytes)
        return depth.reshape(shape).copy(), labels.reshape(shape).copy()

    def __iter__(self):
        for index in range(self.count):
            yield self[index]

    def generator_config(self) -> GeneratorConfig:
        """The generator settings recorded at write time."""
        try:
            block = self.provenance["generator"]
        except (TypeError, KeyError):
            raise FileFormatError(f"{self.path}: provenance lacks a generator block")
        return GeneratorConfig.from_dict(block)
