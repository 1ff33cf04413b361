"""
Image grids as binary PGM and minimum-perturbation histograms as CSV.

Grid layout: tiles row-major, ``width = cols*w + (cols-1)*padding`` and
``height = rows*h + (rows-1)*padding``; padding and empty slots are white.
Values map to ``round(clamp(v, 0, 1) * 255)``. Signed perturbations render as
``0.5 + magnify*eps`` so zero is mid-gray.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from gradreg.dataio import Dataset
from gradreg.errors import InvalidParameterError, ShapeError
from gradreg.model import MlpModel
from gradreg.numcore import histogram_counts
from gradreg.perturb import PerturbSpec, perturb_rows

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
WHITE = 255


@dataclass(frozen=True)
class ImageGrid:
    images: Tuple[np.ndarray, ...]
    cols: int
    padding: int = 1

    def __post_init__(self):
        tiles = tuple(np.asarray(img, dtype=np.float64) for img in self.images)
        if not tiles:
            raise InvalidParameterError("an image grid needs at least one tile")
        if self.cols < 1:
            raise InvalidParameterError(f"cols must be at least 1, got {self.cols}")
        if self.padding < 0:
            raise InvalidParameterError(f"padding must be non-negative, got {self.padding}")
        shape = tiles[0].shape
        if len(shape) != 2 or any(t.shape != shape for t in tiles):
            raise ShapeError("grid tiles must be 2-D arrays of one shape")
        object.__setattr__(self, "images", tiles)

    @property
    def rows(self) -> int:
        return math.ceil(len(self.images) / self.cols)

    @property
    def tile_shape(self) -> Tuple[int, int]:
        return self.images[0].shape

    @classmethod
    def from_rows(cls, rows: np.ndarray, cols: int, padding: int = 1) -> "ImageGrid":
        shape = tile_shape_for(rows.shape[1])
        return cls(tuple(r.reshape(shape) for r in rows), min(cols, max(len(rows), 1)), padding)


def tile_shape_for(d: int) -> Tuple[int, int]:
    """Square tiles when d is a perfect square, else a single row."""
    side = math.isqrt(d)
    return (side, side) if side * side == d else (1, d)


def to_bytes(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def compose(grid: ImageGrid) -> np.ndarray:
    h, w = grid.tile_shape
    pad = grid.padding
    canvas = np.full((grid.rows * h + (grid.rows - 1) * pad, grid.cols * w + (grid.cols - 1) * pad), WHITE, np.uint8)
    for k, tile in enumerate(grid.images):
        r, c = divmod(k, grid.cols)
        top, left = r * (h + pad), c * (w + pad)
        canvas[top : top + h, left : left + w] = to_bytes(tile)
    return canvas


def write_pgm_grid(grid: ImageGrid, path: PathLike) -> None:
    canvas = compose(grid)
    height, width = canvas.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + canvas.tobytes())
    logger.debug("Wrote %dx%d grid of %d tiles to %s", width, height, len(grid.images), path)


def render_perturbation_panel(
    model: MlpModel,
    data: Dataset,
    spec: PerturbSpec,
    magnify: float,
    out_dir: PathLike,
    cols: int = 10,
) -> List[Path]:
    """Write originals.pgm, perturbed.pgm and perturbation.pgm for every row of ``data``."""
    if len(data) == 0:
        raise InvalidParameterError("cannot render a panel of an empty dataset")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eps = perturb_rows(model, data.inputs, data.targets, spec)
    panels = {
        "originals.pgm": data.inputs,
        "perturbed.pgm": data.inputs + eps,
        "perturbation.pgm": 0.5 + magnify * eps,
    }
    paths = []
    for name, rows in panels.items():
        path = out / name
        write_pgm_grid(ImageGrid.from_rows(rows, cols), path)
        paths.append(path)
    logger.info("Rendered %d examples (p=%s, sigma=%g) into %s", len(data), spec.p, spec.sigma, out)
    return paths


def render_noise_panel(
    data: Dataset, sigma_noise: float, rng: np.random.Generator, out_dir: PathLike, cols: int = 10
) -> Path:
    if sigma_noise < 0:
        raise InvalidParameterError(f"sigma_noise must be non-negative, got {sigma_noise}")
    if len(data) == 0:
        raise InvalidParameterError("cannot render a panel of an empty dataset")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    noisy = data.inputs + rng.normal(0.0, sigma_noise, size=data.inputs.shape)
    path = out / f"noise_{sigma_noise:g}.pgm"
    write_pgm_grid(ImageGrid.from_rows(noisy, cols), path)
    return path


def write_histogram_csv(values: Sequence[float], bin_width: float, path: PathLike) -> None:
    counts = histogram_counts(values, bin_width)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("bin_lower", "bin_upper", "count"))
        for k, count in enumerate(counts):
            writer.writerow((f"{k * bin_width:.10g}", f"{(k + 1) * bin_width:.10g}", int(count)))
