"""
Evaluation dataset: labeled temporal image stacks laid out on disk as

    <root>/<split>/<location_id>/t0.png ... t{M-1}.png

plus one CSV manifest with header ``location_id,split,label``.
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple, Union

import pandas as pd
from PIL import Image, UnidentifiedImageError

from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    InvalidValueError,
    ManifestFormatError,
    MissingImageError,
    UnknownLabelTokenError,
    UnreadableImageError,
)
from .settings import Settings

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class Split(Enum):
    DEV = "dev"
    TEST = "test"


class Label(Enum):
    GULLY_POSITIVE = "positive"
    GULLY_NEGATIVE = "negative"
    UNLABELED = "unlabeled"

    @property
    def is_labeled(self) -> bool:
        return self is not Label.UNLABELED


@dataclass(frozen=True)
class Location:
    id: str
    split: Split
    images: Tuple[Path, ...]
    label: Label


class SplitCounts(NamedTuple):
    total: int
    positive: int
    negative: int
    unlabeled: int = 0


@dataclass(frozen=True)
class Dataset:
    locations: Tuple[Location, ...]
    manifest_path: Optional[Path] = None
    images_per_location: int = Settings.IMAGES_PER_LOCATION

    def __len__(self) -> int:
        return len(self.locations)

    def __iter__(self) -> Iterator[Location]:
        return iter(self.locations)

    def split(self, split: Split) -> List[Location]:
        return [loc for loc in self.locations if loc.split is split]

    def get(self, location_id: str) -> Location:
        for loc in self.locations:
            if loc.id == location_id:
                return loc
        raise KeyError(location_id)


def _parse_label(location_id: str, token: str) -> Label:
    try:
        return Label(token.strip().lower())
    except ValueError:
        raise UnknownLabelTokenError(location_id, token) from None


def _parse_split(location_id: str, token: str) -> Split:
    try:
        return Split(token.strip().lower())
    except ValueError:
        raise ManifestFormatError(
            f"Location {location_id}: unknown split {token!r} (expected dev or test)"
        ) from None


def _read_manifest(manifest: Path) -> pd.DataFrame:
    if not manifest.is_file():
        raise FileNotFoundError(f"Manifest not found: {manifest}")
    try:
        frame = pd.read_csv(manifest, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ManifestFormatError(f"Manifest is empty: {manifest}") from None
    if tuple(frame.columns) != Settings.MANIFEST_COLUMNS:
        raise ManifestFormatError(
            f"Manifest header must be {','.join(Settings.MANIFEST_COLUMNS)}, "
            f"got {','.join(map(str, frame.columns))}"
        )
    return frame


def _resolve_images(folder: Path, location_id: str, count: int) -> Tuple[Path, ...]:
    images = []
    for k in range(count):
        found = None
        for ext in Settings.IMAGE_EXTENSIONS:
            candidate = folder / f"t{k}{ext}"
            if candidate.is_file():
                found = candidate
                break
        if found is None:
            raise MissingImageError(location_id, folder / f"t{k}.png")
        images.append(found)
    return tuple(images)


def _check_dimensions(location_id: str, images: Tuple[Path, ...]) -> None:
    sizes = set()
    for path in images:
        try:
            with Image.open(path) as im:
                sizes.add(im.size)
        except (OSError, UnidentifiedImageError) as e:
            raise UnreadableImageError(location_id, path, str(e)) from e
    if len(sizes) > 1:
        raise DimensionMismatchError(
            f"Location {location_id}: images differ in size {sorted(sizes)}"
        )


def read_manifest_labels(manifest: PathLike) -> Dict[str, Label]:
    """Labels keyed by location id, read from the manifest alone (no images)."""
    frame = _read_manifest(Path(manifest))
    labels: Dict[str, Label] = {}
    for row in frame.itertuples(index=False):
        location_id = row.location_id.strip()
        if location_id in labels:
            raise DuplicateIdError(location_id)
        _parse_split(location_id, row.split)
        labels[location_id] = _parse_label(location_id, row.label)
    return labels


def ingest(root: PathLike, manifest: PathLike,
           images_per_location: int = Settings.IMAGES_PER_LOCATION) -> Dataset:
    """
    Load and validate a dataset.

    Locations keep manifest order. Every location must provide
    ``images_per_location`` readable images of identical size.
    """
    root = Path(root)
    manifest = Path(manifest)
    if images_per_location < 1:
        raise InvalidValueError("images_per_location", images_per_location, "must be >= 1")
    if not root.is_dir():
        raise FileNotFoundError(f"Dataset root not found: {root}")

    frame = _read_manifest(manifest)
    seen = set()
    locations = []
    for row in frame.itertuples(index=False):
        location_id = row.location_id.strip()
        if not location_id:
            raise ManifestFormatError(f"Empty location_id in {manifest}")
        if location_id in seen:
            raise DuplicateIdError(location_id)
        seen.add(location_id)

        label = _parse_label(location_id, row.label)
        split = _parse_split(location_id, row.split)
        images = _resolve_images(root / split.value / location_id, location_id,
                                 images_per_location)
        _check_dimensions(location_id, images)
        locations.append(Location(location_id, split, images, label))

    dataset = Dataset(tuple(locations), manifest, images_per_location)
    for split, counts in split_counts(dataset).items():
        logger.info(f"{split.value}: {counts.total} locations "
                    f"({counts.positive} positive / {counts.negative} negative / "
                    f"{counts.unlabeled} unlabeled)")
    return dataset


def split_counts(d: Dataset) -> Dict[Split, SplitCounts]:
    tally = {split: [0, 0, 0, 0] for split in Split}
    for loc in d.locations:
        row = tally[loc.split]
        row[0] += 1
        if loc.label is Label.GULLY_POSITIVE:
            row[1] += 1
        elif loc.label is Label.GULLY_NEGATIVE:
            row[2] += 1
        else:
            row[3] += 1
    return {split: SplitCounts(*row) for split, row in tally.items()}


def counts_frame(counts: Dict[Split, SplitCounts]) -> pd.DataFrame:
    """Per-split count table for display."""
    frame = pd.DataFrame(
        [counts[split] for split in Split],
        index=[split.value for split in Split],
        columns=list(SplitCounts._fields),
    )
    frame.index.name = "split"
    return frame


def dataset_to_json(d: Dataset) -> str:
    payload = {
        "manifest": str(d.manifest_path) if d.manifest_path else None,
        "images_per_location": d.images_per_location,
        "locations": [
            {
                "id": loc.id,
                "split": loc.split.value,
                "label": loc.label.value,
                "images": [str(p) for p in loc.images],
            }
            for loc in d.locations
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2)
