"""Deterministic synthetic datasets in the on-disk layout read by ``ingest``."""
import logging
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from PIL import Image

from .dataset import Label, Split
from .settings import Settings

logger = logging.getLogger(__name__)


def _field(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.integers(90, 160, size=3)
    noise = rng.integers(-18, 19, size=(size, size, 3))
    rows = (np.arange(size) // 8 % 2 * 10)[:, None, None]  # tillage stripes
    return np.clip(base + noise + rows, 0, 255).astype(np.uint8)


def _draw_channel(tile: np.ndarray, phase: float, width: int = 2) -> None:
    size = tile.shape[0]
    centre = size / 2
    for y in range(size):
        x = int(centre + size / 5 * np.sin(y / size * 3 * np.pi + phase))
        tile[y, max(0, x - width):min(size, x + width)] = (48, 38, 30)


def make_location(rng: np.random.Generator, positive: bool, count: int,
                  size: int) -> list:
    phase = float(rng.uniform(0, 2 * np.pi))
    tiles = []
    for _ in range(count):
        tile = _field(rng, size)
        # gullies recur in most, not all, seasons
        if positive and rng.random() < 0.8:
            _draw_channel(tile, phase)
        tiles.append(tile)
    return tiles


def make_fixture(root: Union[str, Path], dev: int = 10, test: int = 11,
                 positive_fraction: float = 177 / 310,
                 images_per_location: int = Settings.IMAGES_PER_LOCATION,
                 size: int = 32, seed: int = Settings.SEED) -> Path:
    """
    Write a synthetic dataset under ``root`` and return the manifest path.

    Each split gets ``round(positive_fraction * n)`` positive locations.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    rows = []
    for split, n in ((Split.DEV, dev), (Split.TEST, test)):
        n_pos = int(round(positive_fraction * n))
        positives = set(rng.permutation(n)[:n_pos].tolist())
        for i in range(n):
            location_id = f"{split.value}-{i:04d}"
            positive = i in positives
            folder = root / split.value / location_id
            folder.mkdir(parents=True, exist_ok=True)
            for k, tile in enumerate(make_location(rng, positive, images_per_location, size)):
                Image.fromarray(tile).save(folder / f"t{k}.png")
            label = Label.GULLY_POSITIVE if positive else Label.GULLY_NEGATIVE
            rows.append((location_id, split.value, label.value))

    manifest = root / "manifest.csv"
    pd.DataFrame(rows, columns=list(Settings.MANIFEST_COLUMNS)).to_csv(
        manifest, index=False, lineterminator="\n", encoding="utf-8")
    logger.info(f"Wrote {len(rows)} synthetic locations to {root}")
    return manifest
