"""
Collages: the M temporal images of a location pasted into one raster so that
single-image VLM endpoints see the whole time series.

Placement is row-major chronological: source ``t_k`` occupies cell
``(k // cols, k % cols)``. Unused cells and separators are black.
"""
import base64
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .dataset import Location
from .errors import DimensionMismatchError, GridTooSmallError
from .settings import Settings

Grid = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class Collage:
    pixels: np.ndarray          # (height, width, 3) uint8
    grid: Grid                  # (rows, cols)
    tile_size: Tuple[int, int]  # (width, height)
    order: Tuple[int, ...]
    separator: int = 0

    @property
    def size(self) -> Tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Collage):
            return NotImplemented
        return (self.grid == other.grid and self.tile_size == other.tile_size
                and self.order == other.order and self.separator == other.separator
                and np.array_equal(self.pixels, other.pixels))


def load_rgb(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def compose(images: Sequence[np.ndarray], grid: Grid = Settings.GRID,
            separator: int = Settings.SEPARATOR_WIDTH) -> Collage:
    rows, cols = grid
    if not images:
        raise ValueError("compose() needs at least one image")
    if rows < 1 or cols < 1 or rows * cols < len(images):
        raise GridTooSmallError(f"Grid {rows}x{cols} cannot hold {len(images)} images")
    if separator < 0:
        raise ValueError("separator width must be >= 0")
    shape = images[0].shape
    for k, img in enumerate(images):
        if img.shape != shape:
            raise DimensionMismatchError(f"Image t{k} has shape {img.shape}, expected {shape}")

    h, w = shape[:2]
    canvas = np.zeros((rows * h + (rows - 1) * separator,
                       cols * w + (cols - 1) * separator, 3), dtype=np.uint8)
    for k, img in enumerate(images):
        r, c = divmod(k, cols)
        y0, x0 = r * (h + separator), c * (w + separator)
        canvas[y0:y0 + h, x0:x0 + w] = img
    return Collage(canvas, (rows, cols), (w, h), tuple(range(len(images))), separator)


def build_collage(loc: Location, grid: Grid = Settings.GRID,
                  separator: int = Settings.SEPARATOR_WIDTH) -> Collage:
    try:
        return compose([load_rgb(p) for p in loc.images], grid, separator)
    except DimensionMismatchError as e:
        raise DimensionMismatchError(f"Location {loc.id}: {e}") from e


def tile(c: Collage, k: int) -> np.ndarray:
    """Recover source image ``t_k`` from the collage."""
    if not 0 <= k < len(c.order):
        raise IndexError(k)
    w, h = c.tile_size
    r, col = divmod(k, c.grid[1])
    y0, x0 = r * (h + c.separator), col * (w + c.separator)
    return c.pixels[y0:y0 + h, x0:x0 + w].copy()


def collage_digest(c: Collage) -> str:
    sha256_hash = hashlib.sha256()
    header = {
        "grid": list(c.grid),
        "tile_size": list(c.tile_size),
        "separator": c.separator,
        "order": list(c.order),
        "shape": list(c.pixels.shape),
    }
    sha256_hash.update(json.dumps(header, sort_keys=True).encode("utf-8"))
    sha256_hash.update(np.ascontiguousarray(c.pixels).tobytes())
    return sha256_hash.hexdigest()


def to_png_bytes(c: Collage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(c.pixels).save(buf, format="PNG")
    return buf.getvalue()


def to_base64(c: Collage) -> str:
    return base64.b64encode(to_png_bytes(c)).decode("ascii")


def save_png(c: Collage, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_png_bytes(c))
    return path
