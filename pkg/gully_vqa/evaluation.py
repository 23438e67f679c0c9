"""
Scoring: confusion matrices, the six-metric suite, Yes-frequency histograms
and report emission (markdown, CSV, JSON).

The positive class is ``Label.GULLY_POSITIVE``. Any ratio with a zero
denominator is 0.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from .dataset import Label
from .errors import InconsistentQuestionSetsError, MissingLabelError
from .pipeline import AnswerVector, Prediction, Verdict
from .settings import Settings

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("precision", "recall", "accuracy", "f1_gully", "f1_not_gully", "macro_f1")
METRIC_HEADERS = ("Prec.", "Rec.", "Acc.", "F1 (G)", "F1 (NG)", "Macro F1")
RUN_HEADERS = ("P#", "VLM", "LLM", "Experiment")
CM_HEADERS = ("TP", "FP", "FN", "TN")


class ReportFormat(Enum):
    MARKDOWN = "markdown"
    CSV = "csv"
    JSON = "json"

    @classmethod
    def from_path(cls, path: Union[str, Path]) -> "ReportFormat":
        suffix = Path(path).suffix.lower()
        return {".md": cls.MARKDOWN, ".csv": cls.CSV}.get(suffix, cls.JSON)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    excluded: int = field(default=0, compare=False)

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn, self.excluded) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """Same tally with the negative class treated as positive."""
        return ConfusionMatrix(self.tn, self.fn, self.fp, self.tp, self.excluded)


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    accuracy: float
    f1_gully: float
    f1_not_gully: float
    macro_f1: float
    cm: ConfusionMatrix
    meta: Dict[str, str] = field(default_factory=dict, compare=False)

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, f) for f in METRIC_FIELDS)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in METRIC_FIELDS}
        d["cm"] = asdict(self.cm)
        d["meta"] = dict(self.meta)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls(*(float(d[f]) for f in METRIC_FIELDS), ConfusionMatrix(**d["cm"]),
                   dict(d.get("meta", {})))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def confusion(preds: Sequence[Prediction], labels: Mapping[str, Label]) -> ConfusionMatrix:
    tp = fp = fn = tn = excluded = 0
    for p in preds:
        if p.location_id not in labels:
            raise MissingLabelError(p.location_id)
        truth = labels[p.location_id]
        if not truth.is_labeled:
            excluded += 1
            continue
        positive = p.label is Label.GULLY_POSITIVE
        if truth is Label.GULLY_POSITIVE:
            tp, fn = (tp + 1, fn) if positive else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if positive else (fp, tn + 1)
    if excluded:
        logger.info(f"Excluded {excluded} unlabeled locations from scoring")
    return ConfusionMatrix(tp, fp, fn, tn, excluded)


def metrics(cm: ConfusionMatrix, meta: Optional[Mapping[str, str]] = None) -> MetricsReport:
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    npv = _ratio(cm.tn, cm.tn + cm.fn)
    specificity = _ratio(cm.tn, cm.tn + cm.fp)
    f1_g = _f1(precision, recall)
    f1_ng = _f1(npv, specificity)
    return MetricsReport(
        precision=precision,
        recall=recall,
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
        f1_gully=f1_g,
        f1_not_gully=f1_ng,
        macro_f1=(f1_g + f1_ng) / 2,
        cm=cm,
        meta=dict(meta or {}),
    )


# HISTOGRAMS
# ///////////////////////////////////////////////////////////////
@dataclass(frozen=True)
class YesHistogram:
    question_indices: Tuple[int, ...]
    yes_positive: Tuple[int, ...]
    yes_negative: Tuple[int, ...]
    positive_total: int
    negative_total: int

    def counts(self) -> Dict[int, Dict[Label, int]]:
        return {q: {Label.GULLY_POSITIVE: p, Label.GULLY_NEGATIVE: n}
                for q, p, n in zip(self.question_indices, self.yes_positive, self.yes_negative)}

    def to_dict(self) -> dict:
        return {
            "question_indices": list(self.question_indices),
            "yes_positive": list(self.yes_positive),
            "yes_negative": list(self.yes_negative),
            "positive_total": self.positive_total,
            "negative_total": self.negative_total,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "YesHistogram":
        return cls(tuple(d["question_indices"]), tuple(d["yes_positive"]),
                   tuple(d["yes_negative"]), d["positive_total"], d["negative_total"])


def yes_histogram(answers: Sequence[AnswerVector], labels: Mapping[str, Label]) -> YesHistogram:
    if not answers:
        return YesHistogram((), (), (), 0, 0)
    indices = answers[0].question_indices
    for av in answers:
        if av.question_indices != indices:
            raise InconsistentQuestionSetsError(
                f"{av.location_id} answers {av.question_indices}, expected {indices}")
    yes_pos = [0] * len(indices)
    yes_neg = [0] * len(indices)
    pos_total = neg_total = 0
    for av in answers:
        if av.location_id not in labels:
            raise MissingLabelError(av.location_id)
        truth = labels[av.location_id]
        if not truth.is_labeled:
            continue
        counts = yes_pos if truth is Label.GULLY_POSITIVE else yes_neg
        if truth is Label.GULLY_POSITIVE:
            pos_total += 1
        else:
            neg_total += 1
        for j, v in enumerate(av.verdicts):
            if v is Verdict.YES:
                counts[j] += 1
    return YesHistogram(indices, tuple(yes_pos), tuple(yes_neg), pos_total, neg_total)


# REPORTS
# ///////////////////////////////////////////////////////////////
def comparison_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """One row per run in the published column order."""
    rows = []
    for r in reports:
        row = {h: r.meta.get(k, "") for h, k in zip(
            RUN_HEADERS, ("pipeline", "vlm", "llm", "experiment"))}
        row.update(zip(CM_HEADERS, (r.cm.tp, r.cm.fp, r.cm.fn, r.cm.tn)))
        row.update(zip(METRIC_HEADERS, r.values()))
        rows.append(row)
    return pd.DataFrame(rows, columns=list(RUN_HEADERS + CM_HEADERS + METRIC_HEADERS))


def histogram_frame(h: YesHistogram) -> pd.DataFrame:
    return pd.DataFrame({
        "question": list(h.question_indices),
        "yes_positive": list(h.yes_positive),
        "yes_negative": list(h.yes_negative),
        "positive_total": [h.positive_total] * len(h.question_indices),
        "negative_total": [h.negative_total] * len(h.question_indices),
    }, columns=["question", "yes_positive", "yes_negative", "positive_total",
                "negative_total"])


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def frame_to_markdown(frame: pd.DataFrame) -> str:
    lines = ["| " + " | ".join(map(str, frame.columns)) + " |",
             "|" + "|".join("---" for _ in frame.columns) + "|"]
    for row in frame.itertuples(index=False):
        lines.append("| " + " | ".join(_cell(v) for v in row) + " |")
    return "\n".join(lines) + "\n"


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n", float_format="%.3f")


def emit_report(r: Union[MetricsReport, YesHistogram, Sequence[MetricsReport]],
                fmt: ReportFormat) -> str:
    """Render a metrics report, a list of them, or a histogram."""
    if isinstance(r, YesHistogram):
        if fmt is ReportFormat.JSON:
            doc = {"schema_version": Settings.SCHEMA_VERSION, "kind": "histogram",
                   "histogram": r.to_dict()}
            return json.dumps(doc, indent=2, sort_keys=True) + "\n"
        frame = histogram_frame(r)
    else:
        reports = [r] if isinstance(r, MetricsReport) else list(r)
        if fmt is ReportFormat.JSON:
            doc = {"schema_version": Settings.SCHEMA_VERSION, "kind": "metrics",
                   "reports": [x.to_dict() for x in reports]}
            return json.dumps(doc, indent=2, sort_keys=True) + "\n"
        frame = comparison_frame(reports)
    if fmt is ReportFormat.MARKDOWN:
        return frame_to_markdown(frame)
    return frame_to_csv(frame)


def reports_from_json(text: str) -> List[MetricsReport]:
    doc = json.loads(text)
    return [MetricsReport.from_dict(d) for d in doc["reports"]]


def histogram_chart(h: YesHistogram, path: Union[str, Path], title: str = "") -> Path:
    """Grouped bar chart of Yes counts per question, positive vs negative."""
    import plotly.graph_objects as go

    x = [f"Q{q}" for q in h.question_indices]
    fig = go.Figure(data=[
        go.Bar(name=f"Gully (n={h.positive_total})", x=x, y=list(h.yes_positive)),
        go.Bar(name=f"No gully (n={h.negative_total})", x=x, y=list(h.yes_negative)),
    ])
    fig.update_layout(barmode="group", title=title or "Yes answers per question",
                      xaxis_title="Question", yaxis_title="Yes count")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    return path
