import json

import numpy as np
import pytest

from gully_vqa.dataset import Label
from gully_vqa.errors import InconsistentQuestionSetsError, MissingLabelError
from gully_vqa.evaluation import (
    ConfusionMatrix,
    ReportFormat,
    YesHistogram,
    confusion,
    emit_report,
    histogram_chart,
    metrics,
    reports_from_json,
    yes_histogram,
)
from gully_vqa.pipeline import AnswerVector, PipelineKind, Prediction, Verdict

POS, NEG = Label.GULLY_POSITIVE, Label.GULLY_NEGATIVE

# (tp, fp, fn, tn) -> precision, recall, accuracy, F1 gully, F1 not gully, macro F1
PUBLISHED = [
    ((9, 4, 168, 130), (0.692, 0.051, 0.447, 0.095, 0.602, 0.348)),
    ((134, 90, 43, 44), (0.598, 0.757, 0.572, 0.668, 0.398, 0.533)),
    ((22, 20, 155, 114), (0.524, 0.124, 0.437, 0.201, 0.566, 0.383)),
    ((146, 103, 31, 31), (0.586, 0.825, 0.569, 0.685, 0.316, 0.501)),
    ((167, 79, 10, 55), (0.679, 0.944, 0.714, 0.790, 0.553, 0.671)),
    ((177, 134, 0, 0), (0.569, 1.000, 0.569, 0.725, 0.000, 0.363)),
    ((173, 103, 4, 31), (0.627, 0.977, 0.656, 0.764, 0.367, 0.565)),
    ((25, 7, 152, 127), (0.781, 0.141, 0.489, 0.239, 0.615, 0.427)),
    ((110, 44, 67, 90), (0.714, 0.621, 0.643, 0.665, 0.619, 0.642)),
    ((130, 101, 47, 33), (0.563, 0.734, 0.524, 0.637, 0.308, 0.473)),
    ((117, 50, 60, 84), (0.701, 0.661, 0.646, 0.680, 0.604, 0.642)),
    ((29, 3, 148, 131), (0.906, 0.164, 0.514, 0.278, 0.634, 0.456)),
    ((40, 9, 137, 125), (0.816, 0.226, 0.531, 0.354, 0.631, 0.493)),
    ((37, 9, 140, 125), (0.804, 0.209, 0.521, 0.332, 0.627, 0.479)),
    ((111, 44, 66, 90), (0.716, 0.627, 0.646, 0.669, 0.621, 0.645)),
    ((37, 10, 140, 124), (0.787, 0.209, 0.518, 0.330, 0.623, 0.477)),
]


def _pred(lid, label, pipeline=PipelineKind.A):
    return Prediction(lid, pipeline, label, "", "vlm", None if pipeline is PipelineKind.A else "llm")


@pytest.mark.parametrize("cm,expected", PUBLISHED)
def test_published_rows(cm, expected):
    r = metrics(ConfusionMatrix(*cm))
    assert r.values() == pytest.approx(expected, abs=5e-4)
    assert r.macro_f1 == (r.f1_gully + r.f1_not_gully) / 2
    assert r.cm.total == 311


@pytest.mark.parametrize("cm,_", PUBLISHED)
def test_swapping_classes_keeps_macro_and_accuracy(cm, _):
    a = metrics(ConfusionMatrix(*cm))
    b = metrics(ConfusionMatrix(*cm).swapped())
    assert (b.f1_gully, b.f1_not_gully) == pytest.approx((a.f1_not_gully, a.f1_gully))
    assert b.macro_f1 == pytest.approx(a.macro_f1)
    assert b.accuracy == a.accuracy


def test_empty_matrix_is_all_zero():
    assert metrics(ConfusionMatrix()).values() == (0.0,) * 6


def test_confusion_tallies():
    labels = {f"p{i}": POS for i in range(5)}
    labels.update({f"n{i}": NEG for i in range(5)})
    correct = [_pred(lid, label) for lid, label in labels.items()]
    assert confusion(correct, labels) == ConfusionMatrix(5, 0, 0, 5)
    assert confusion([], labels) == ConfusionMatrix(0, 0, 0, 0)


def test_all_positive_predictor_on_published_test_split():
    labels = {f"p{i}": POS for i in range(177)}
    labels.update({f"n{i}": NEG for i in range(134)})
    preds = [_pred(lid, POS, PipelineKind.B) for lid in labels]
    cm = confusion(preds, labels)
    assert cm == ConfusionMatrix(177, 134, 0, 0)
    assert metrics(cm).macro_f1 == pytest.approx(0.363, abs=5e-4)


def test_confusion_is_order_invariant_and_excludes_unlabeled():
    labels = {"a": POS, "b": NEG, "c": Label.UNLABELED, "d": POS}
    preds = [_pred("a", POS), _pred("b", POS), _pred("c", POS), _pred("d", NEG)]
    cm = confusion(preds, labels)
    assert cm == confusion(list(reversed(preds)), labels)
    assert (cm.tp, cm.fp, cm.fn, cm.tn, cm.excluded) == (1, 1, 1, 0, 1)


def test_unknown_location_is_missing_label():
    with pytest.raises(MissingLabelError):
        confusion([_pred("ghost", POS)], {"a": POS})


# REPORTS
# ///////////////////////////////////////////////////////////////
def test_markdown_row_matches_published_precision():
    md = emit_report(metrics(ConfusionMatrix(167, 79, 10, 55)), ReportFormat.MARKDOWN)
    assert "0.679 | 0.944 | 0.714 | 0.790 | 0.553 | 0.671" in md
    assert md.splitlines()[0].startswith("| P# | VLM | LLM | Experiment | TP | FP | FN | TN")


def test_csv_report_rounds_to_three_decimals():
    csv = emit_report(metrics(ConfusionMatrix(110, 44, 67, 90), {"pipeline": "B"}),
                      ReportFormat.CSV)
    header, row = csv.splitlines()
    assert header == "P#,VLM,LLM,Experiment,TP,FP,FN,TN,Prec.,Rec.,Acc.,F1 (G),F1 (NG),Macro F1"
    assert row.endswith("110,44,67,90,0.714,0.621,0.643,0.665,0.619,0.642")
    assert row.startswith("B,")


def test_json_report_round_trips_exactly():
    reports = [metrics(ConfusionMatrix(*cm), {"pipeline": "A"}) for cm, _ in PUBLISHED[:3]]
    text = emit_report(reports, ReportFormat.JSON)
    assert json.loads(text)["schema_version"] == 1
    assert reports_from_json(text) == reports


def test_format_from_path():
    assert ReportFormat.from_path("r.md") is ReportFormat.MARKDOWN
    assert ReportFormat.from_path("r.CSV") is ReportFormat.CSV
    assert ReportFormat.from_path("r.json") is ReportFormat.JSON


# HISTOGRAMS
# ///////////////////////////////////////////////////////////////
def _av(lid, *verdicts, indices=None):
    indices = indices or tuple(range(1, len(verdicts) + 1))
    return AnswerVector(lid, indices, verdicts, ("",) * len(verdicts))


def test_yes_counts_per_class():
    Y, N, U = Verdict.YES, Verdict.NO, Verdict.UNPARSEABLE
    answers = [_av("p1", N, Y), _av("p2", U, Y), _av("n1", Y, U)]
    h = yes_histogram(answers, {"p1": POS, "p2": POS, "n1": NEG})
    assert h.counts()[2][POS] == 2
    assert h.counts()[1] == {POS: 0, NEG: 1}
    assert (h.positive_total, h.negative_total) == (2, 1)


def test_histogram_matches_nested_loop_recount():
    rng = np.random.default_rng(17)
    indices = tuple(range(1, 20))
    choices = [Verdict.YES, Verdict.NO, Verdict.UNPARSEABLE]
    answers, labels = [], {}
    for i in range(50):
        lid = f"loc{i}"
        labels[lid] = POS if rng.random() < 0.57 else NEG
        answers.append(_av(lid, *(choices[j] for j in rng.integers(0, 3, size=19)),
                           indices=indices))
    h = yes_histogram(answers, labels)
    for q_pos, q in enumerate(indices):
        for cls in (POS, NEG):
            expected = 0
            for av in answers:
                if labels[av.location_id] is cls and av.verdicts[q_pos] is Verdict.YES:
                    expected += 1
            assert h.counts()[q][cls] == expected
    assert all(p <= h.positive_total for p in h.yes_positive)
    assert all(n <= h.negative_total for n in h.yes_negative)


def test_histogram_needs_one_question_set():
    with pytest.raises(InconsistentQuestionSetsError):
        yes_histogram([_av("a", Verdict.YES), _av("b", Verdict.YES, Verdict.NO)],
                      {"a": POS, "b": NEG})


def test_empty_histogram_is_header_only_csv():
    h = yes_histogram([], {})
    assert emit_report(h, ReportFormat.CSV) == \
        "question,yes_positive,yes_negative,positive_total,negative_total\n"


def test_histogram_json_round_trip():
    h = YesHistogram((2, 3), (4, 1), (0, 2), 5, 3)
    doc = json.loads(emit_report(h, ReportFormat.JSON))
    assert YesHistogram.from_dict(doc["histogram"]) == h


def test_histogram_chart_writes_html(tmp_path):
    h = YesHistogram((2, 3), (4, 1), (0, 2), 5, 3)
    path = histogram_chart(h, tmp_path / "chart.html")
    assert "<html>" in path.read_text(encoding="utf-8").lower()
