"""afpseg: synthetic fiber-placement depth maps and defect segmentation.

The package covers the full loop for automated-fiber-placement inspection
research without any real sensor data:

* :mod:`afpseg.scene` — a layered probabilistic model of a tow layup
  (control-point grid, lateral shifts, fuzzball fiber wads, nuisance
  parameters), sampled reproducibly from counter-based streams.
* :mod:`afpseg.raster` — scanline rasterization of scenes into depth maps
  with exact per-pixel class labels (gap / tow / overlap / fuzzball).
* :mod:`afpseg.dataset` — the AFPD sample container and deterministic
  dataset generation.
* :mod:`afpseg.net` — dense tensor kernels with hand-derived backward
  passes, an encoder/decoder segmentation network, optimizers, AFPW
  checkpoints, and a finite-difference gradient checker.
* :mod:`afpseg.pipeline` — training orchestration, confusion-matrix
  evaluation, and padded fully-convolutional inference.
* :mod:`afpseg.report` — CSV and matplotlib renderings of results.
* :mod:`afpseg.cli` — the ``afpseg`` command-line entry point.
"""

from .errors import (
    AfpsegError,
    ConfigurationError,
    DataError,
    FileFormatError,
    GeometryError,
    ShapeError,
)
from .scene import (
    ControlGrid,
    FuzzballGeometry,
    GeneratorConfig,
    NuisanceParams,
    SceneSample,
    sample_scene,
)
from .raster import (
    CLASS_NAMES,
    FUZZBALL,
    GAP,
    LABEL_PALETTE,
    NUM_CLASSES,
    OVERLAP,
    TOW,
    TrainingExample,
    fill_polygon,
    one_sided_distance_transform,
    polygon_mask,
    read_depth_png,
    read_labels_png,
    render_scene,
    sigmoid_profile,
    write_depth_png,
    write_labels_png,
)
from .textures import (
    DirectoryTextureSource,
    NoiseDescriptor,
    ProceduralTextureSource,
    TextureSource,
    procedural_texture,
)
from .dataset import Dataset, generate_dataset, normalize_depth, sample_example
from .net import (
    Network,
    NetworkConfig,
    forward,
    gradient_check,
    init_optimizer,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .pipeline import (
    EvalReport,
    TrainConfig,
    TrainResult,
    confusion_counts,
    evaluate,
    infer,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AfpsegError",
    "CLASS_NAMES",
    "ConfigurationError",
    "ControlGrid",
    "DataError",
    "Dataset",
    "DirectoryTextureSource",
    "EvalReport",
    "FUZZBALL",
    "FileFormatError",
    "FuzzballGeometry",
    "GAP",
    "GeneratorConfig",
    "GeometryError",
    "LABEL_PALETTE",
    "NUM_CLASSES",
    "Network",
    "NetworkConfig",
    "NoiseDescriptor",
    "NuisanceParams",
    "OVERLAP",
    "ProceduralTextureSource",
    "SceneSample",
    "ShapeError",
    "TOW",
    "TextureSource",
    "TrainConfig",
    "TrainResult",
    "TrainingExample",
    "confusion_counts",
    "evaluate",
    "fill_polygon",
    "forward",
    "generate_dataset",
    "gradient_check",
    "infer",
    "init_optimizer",
    "load_checkpoint",
    "normalize_depth",
    "one_sided_distance_transform",
    "polygon_mask",
    "procedural_texture",
    "read_depth_png",
    "read_labels_png",
    "render_scene",
    "sample_example",
    "sample_scene",
    "save_checkpoint",
    "sigmoid_profile",
    "train",
    "train_step",
    "write_depth_png",
    "write_labels_png",
    "__version__",
]
