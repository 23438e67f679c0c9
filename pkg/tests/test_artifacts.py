import json

import pytest

from gully_vqa.artifacts import (
    read_answers,
    read_predictions,
    write_answers,
    write_predictions,
    write_sidecar,
)
from gully_vqa.dataset import Label
from gully_vqa.errors import ArtifactFormatError
from gully_vqa.pipeline import AnswerVector, PipelineKind, Prediction, Verdict

LABELS = {"b": Label.GULLY_NEGATIVE, "a": Label.GULLY_POSITIVE}


def _predictions():
    return [
        Prediction("a", PipelineKind.B, Label.GULLY_POSITIVE, "yes", "vlm", "llm"),
        Prediction("b", PipelineKind.C, Label.GULLY_NEGATIVE, "hmm", "vlm", "llm",
                   warning=True, reasoning="flat field"),
        Prediction("c", PipelineKind.TL, Label.GULLY_POSITIVE, "score=0.9", "vlm", "mlp.json",
                   score=0.9),
    ]


def test_predictions_round_trip_with_labels_and_config(tmp_path):
    path = write_predictions(tmp_path / "p.json", _predictions(), LABELS, {"seed": 17})
    records, labels, config = read_predictions(path)
    assert records == _predictions()
    assert labels == LABELS
    assert config == {"seed": 17}
    doc = json.loads(path.read_text(encoding="utf-8"))
    assert (doc["schema_version"], doc["kind"]) == (1, "predictions")
    assert list(doc["labels"]) == ["a", "b"]


def test_labels_are_optional(tmp_path):
    path = write_predictions(tmp_path / "p.json", _predictions()[:1])
    _, labels, config = read_predictions(path)
    assert labels == {} and config == {}
    assert "labels" not in json.loads(path.read_text(encoding="utf-8"))


def test_answers_round_trip(tmp_path):
    answers = [AnswerVector("a", (3, 6), (Verdict.YES, Verdict.UNPARSEABLE), ("Yes.", ""), "vlm")]
    records, labels, _ = read_answers(write_answers(tmp_path / "a.json", answers, LABELS))
    assert records == answers
    assert labels == LABELS


def test_kind_mismatch_is_rejected(tmp_path):
    path = write_predictions(tmp_path / "p.json", _predictions())
    with pytest.raises(ArtifactFormatError, match="answers"):
        read_answers(path)


def test_unknown_schema_version_is_rejected(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"schema_version": 99, "kind": "predictions", "config": {},
                                "records": []}), encoding="utf-8")
    with pytest.raises(ArtifactFormatError, match="schema_version"):
        read_predictions(path)


def test_malformed_records_and_labels_are_rejected(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"schema_version": 1, "kind": "predictions", "config": {},
                                "records": [{"location_id": "a"}]}), encoding="utf-8")
    with pytest.raises(ArtifactFormatError, match="malformed record"):
        read_predictions(path)

    path = write_answers(tmp_path / "a.json", [], {"a": Label.GULLY_POSITIVE})
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc["labels"]["a"] = "maybe"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(ArtifactFormatError, match="malformed labels"):
        read_answers(path)


def test_invalid_json_is_rejected(tmp_path):
    path = tmp_path / "p.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ArtifactFormatError):
        read_predictions(path)


def test_sidecar_sits_next_to_output(tmp_path):
    sidecar = write_sidecar(tmp_path / "report.md", {"predictions": "p.json"})
    assert sidecar.name == "report.md.config.json"
    assert json.loads(sidecar.read_text(encoding="utf-8"))["config"] == {"predictions": "p.json"}
