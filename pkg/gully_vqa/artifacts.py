"""JSON artifacts: prediction and answer-vector files with provenance."""
import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .dataset import Label
from .errors import ArtifactFormatError
from .pipeline import AnswerVector, Prediction
from .settings import Settings

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PREDICTIONS_KIND = "predictions"
ANSWERS_KIND = "answers"


def _document(kind: str, records: list, labels: Optional[Mapping[str, Label]],
              config: Optional[Mapping]) -> dict:
    doc = {
        "schema_version": Settings.SCHEMA_VERSION,
        "kind": kind,
        "config": dict(config or {}),
        "records": records,
    }
    if labels is not None:
        doc["labels"] = {k: labels[k].value for k in sorted(labels)}
    return doc


def dump_json(doc: Mapping, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load(path: PathLike, kind: str) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactFormatError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise ArtifactFormatError(f"{path}: expected a {kind} artifact")
    version = doc.get("schema_version")
    if version != Settings.SCHEMA_VERSION:
        raise ArtifactFormatError(f"{path}: unsupported schema_version {version!r}")
    return doc


def _records(path: PathLike, doc: dict, parse) -> list:
    try:
        return [parse(r) for r in doc["records"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactFormatError(f"{path}: malformed record ({e})") from e


def _labels(doc: dict) -> Dict[str, Label]:
    try:
        return {k: Label(v) for k, v in doc.get("labels", {}).items()}
    except (AttributeError, ValueError) as e:
        raise ArtifactFormatError(f"malformed labels ({e})") from e


def write_predictions(path: PathLike, predictions: Sequence[Prediction],
                      labels: Optional[Mapping[str, Label]] = None,
                      config: Optional[Mapping] = None) -> Path:
    doc = _document(PREDICTIONS_KIND, [p.to_dict() for p in predictions], labels, config)
    logger.info(f"Writing {len(predictions)} predictions to {path}")
    return dump_json(doc, path)


def read_predictions(path: PathLike) -> Tuple[List[Prediction], Dict[str, Label], dict]:
    doc = _load(path, PREDICTIONS_KIND)
    return _records(path, doc, Prediction.from_dict), _labels(doc), doc.get("config", {})


def write_answers(path: PathLike, answers: Sequence[AnswerVector],
                  labels: Optional[Mapping[str, Label]] = None,
                  config: Optional[Mapping] = None) -> Path:
    doc = _document(ANSWERS_KIND, [a.to_dict() for a in answers], labels, config)
    logger.info(f"Writing {len(answers)} answer vectors to {path}")
    return dump_json(doc, path)


def read_answers(path: PathLike) -> Tuple[List[AnswerVector], Dict[str, Label], dict]:
    doc = _load(path, ANSWERS_KIND)
    return _records(path, doc, AnswerVector.from_dict), _labels(doc), doc.get("config", {})


def write_sidecar(out: PathLike, config: Mapping) -> Path:
    """``<out>.config.json`` next to markdown/CSV outputs."""
    out = Path(out)
    return dump_json({"schema_version": Settings.SCHEMA_VERSION, "config": dict(config)},
                     out.with_name(out.name + ".config.json"))
