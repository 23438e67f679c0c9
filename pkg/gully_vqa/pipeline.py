"""
Pipelines over one location:

  A   collage + direct prompt -> VLM -> verdict
  B   collage + each bank question -> VLM -> answer vector -> LLM aggregation
  C   collage + descriptive prompt -> VLM reasoning -> LLM adjudication
  TL  answer vector -> trained MLP (see ``mlp``)
"""
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from . import prompts
from .backend import (
    ChatClient,
    DecodingParams,
    MockScript,
    image_digest,
    user_request,
)
from .collage import Collage, Grid, build_collage, to_base64
from .dataset import Label, Location
from .errors import (
    BackendError,
    EmptySubsetError,
    GullyError,
    MissingAnswerError,
    UnparseableVerdictError,
)
from .questions import QuestionSet
from .settings import Settings

logger = logging.getLogger(__name__)


class PipelineKind(Enum):
    A = "A"
    B = "B"
    C = "C"
    TL = "TL"


class Verdict(Enum):
    YES = "Yes"
    NO = "No"
    UNPARSEABLE = "Unparseable"


class UnparseablePolicy(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    ERROR = "error"


_VERDICT_TOKEN = re.compile(r"\b(yes|no)\b")


def parse_verdict(text: str) -> Verdict:
    """Last whole-word yes/no wins; models are asked to conclude at the end."""
    tokens = _VERDICT_TOKEN.findall(text.casefold())
    if not tokens:
        return Verdict.UNPARSEABLE
    return Verdict.YES if tokens[-1] == "yes" else Verdict.NO


@dataclass(frozen=True)
class AnswerVector:
    location_id: str
    question_indices: Tuple[int, ...]
    verdicts: Tuple[Verdict, ...]
    raw_texts: Tuple[str, ...]
    vlm_id: str = ""

    def __post_init__(self):
        for name in ("question_indices", "verdicts", "raw_texts"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not len(self.question_indices) == len(self.verdicts) == len(self.raw_texts):
            raise ValueError(f"AnswerVector {self.location_id}: field lengths differ")

    def restrict(self, indices: Sequence[int]) -> "AnswerVector":
        missing = [i for i in indices if i not in self.question_indices]
        if missing:
            raise MissingAnswerError(f"{self.location_id} has no answers for question(s) {missing}")
        positions = [self.question_indices.index(i) for i in indices]
        return AnswerVector(
            self.location_id,
            tuple(indices),
            tuple(self.verdicts[p] for p in positions),
            tuple(self.raw_texts[p] for p in positions),
            self.vlm_id,
        )

    def to_dict(self) -> dict:
        return {
            "location_id": self.location_id,
            "question_indices": list(self.question_indices),
            "verdicts": [v.value for v in self.verdicts],
            "raw_texts": list(self.raw_texts),
            "vlm_id": self.vlm_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerVector":
        return cls(d["location_id"], tuple(d["question_indices"]),
                   tuple(Verdict(v) for v in d["verdicts"]), tuple(d["raw_texts"]),
                   d.get("vlm_id", ""))


@dataclass(frozen=True)
class Prediction:
    location_id: str
    pipeline: PipelineKind
    label: Label
    raw_text: str
    vlm_id: str
    llm_id: Optional[str] = None
    warning: bool = False
    reasoning: str = ""
    score: Optional[float] = None

    def __post_init__(self):
        if self.label not in (Label.GULLY_POSITIVE, Label.GULLY_NEGATIVE):
            raise ValueError("Predictions carry a binary label")
        if self.pipeline is not PipelineKind.A and not self.llm_id:
            raise ValueError(f"Pipeline {self.pipeline.value} prediction needs an aggregator id")

    def to_dict(self) -> dict:
        return {
            "location_id": self.location_id,
            "pipeline": self.pipeline.value,
            "label": self.label.value,
            "raw_text": self.raw_text,
            "vlm_id": self.vlm_id,
            "llm_id": self.llm_id,
            "warning": self.warning,
            "reasoning": self.reasoning,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(d["location_id"], PipelineKind(d["pipeline"]), Label(d["label"]),
                   d["raw_text"], d["vlm_id"], d.get("llm_id"), d.get("warning", False),
                   d.get("reasoning", ""), d.get("score"))


@dataclass(frozen=True)
class ModelHandle:
    client: ChatClient
    model_id: str


@dataclass(frozen=True)
class PipelineOptions:
    grid: Grid = Settings.GRID
    separator: int = Settings.SEPARATOR_WIDTH
    params: DecodingParams = DecodingParams()
    unparseable: UnparseablePolicy = UnparseablePolicy(Settings.UNPARSEABLE)
    question_jobs: int = 1


DEFAULT_OPTIONS = PipelineOptions()


def resolve_verdict(verdict: Verdict, policy: UnparseablePolicy, location_id: str,
                    text: str) -> Tuple[Label, bool]:
    """Binary label plus a warning flag set when the policy had to decide."""
    if verdict is Verdict.YES:
        return Label.GULLY_POSITIVE, False
    if verdict is Verdict.NO:
        return Label.GULLY_NEGATIVE, False
    if policy is UnparseablePolicy.ERROR:
        raise UnparseableVerdictError(location_id, text)
    label = Label.GULLY_POSITIVE if policy is UnparseablePolicy.POSITIVE else Label.GULLY_NEGATIVE
    logger.warning(f"Location {location_id}: unparseable verdict {text[:60]!r}, "
                   f"defaulting to {label.value}")
    return label, True


def _collage_payload(loc: Location, options: PipelineOptions,
                     collage: Optional[Collage] = None) -> str:
    return to_base64(collage or build_collage(loc, options.grid, options.separator))


def run_pipeline_a(loc: Location, vlm: ModelHandle,
                   options: PipelineOptions = DEFAULT_OPTIONS) -> Prediction:
    payload = _collage_payload(loc, options)
    req = user_request(vlm.model_id, prompts.DIRECT.render(), (payload,), options.params)
    text = vlm.client.send(req).text
    label, warning = resolve_verdict(parse_verdict(text), options.unparseable, loc.id, text)
    return Prediction(loc.id, PipelineKind.A, label, text, vlm.model_id, None, warning)


def run_vqa(loc: Location, qs: QuestionSet, vlm: ModelHandle,
            options: PipelineOptions = DEFAULT_OPTIONS) -> AnswerVector:
    """One request per question; a failed question is recorded as Unparseable."""
    if not len(qs):
        raise EmptySubsetError("run_vqa needs at least one question")
    payload = _collage_payload(loc, options)

    def ask(q) -> Tuple[Verdict, str]:
        text = prompts.vqa_prompt(q)
        req = user_request(vlm.model_id, text, (payload,), options.params)
        try:
            answer = vlm.client.send(req).text
        except BackendError as e:
            logger.error(f"Location {loc.id}, question {q.index}: {e}")
            return Verdict.UNPARSEABLE, ""
        return parse_verdict(answer), answer

    if options.question_jobs > 1:
        with ThreadPoolExecutor(max_workers=options.question_jobs) as executor:
            results = list(executor.map(ask, qs.questions()))
    else:
        results = [ask(q) for q in qs.questions()]
    return AnswerVector(loc.id, qs.indices, tuple(v for v, _ in results),
                        tuple(t for _, t in results), vlm.model_id)


def _answer_word(verdict: Verdict) -> str:
    return prompts.NO_ANSWER if verdict is Verdict.UNPARSEABLE else verdict.value


def aggregation_prompt(av: AnswerVector, qs: QuestionSet) -> str:
    if av.question_indices != qs.indices:
        raise ValueError(f"Answers for {av.location_id} do not match question set {qs.name}")
    pairs = [(q, _answer_word(v)) for q, v in zip(qs.questions(), av.verdicts)]
    return prompts.AGGREGATION.render(QA_BLOCK=prompts.format_qa_block(pairs))


def aggregate_llm(av: AnswerVector, qs: QuestionSet, llm: ModelHandle,
                  options: PipelineOptions = DEFAULT_OPTIONS) -> Prediction:
    req = user_request(llm.model_id, aggregation_prompt(av, qs), (), options.params)
    text = llm.client.send(req).text
    label, warning = resolve_verdict(parse_verdict(text), options.unparseable,
                                     av.location_id, text)
    return Prediction(av.location_id, PipelineKind.B, label, text, av.vlm_id,
                      llm.model_id, warning)


def run_pipeline_c(loc: Location, vlm: ModelHandle, llm: ModelHandle,
                   options: PipelineOptions = DEFAULT_OPTIONS) -> Prediction:
    payload = _collage_payload(loc, options)
    describe = user_request(vlm.model_id, prompts.DESCRIPTIVE.render(), (payload,),
                            options.params)
    reasoning = vlm.client.send(describe).text
    adjudicate = user_request(llm.model_id, prompts.ADJUDICATION.render(REASONING=reasoning),
                              (), options.params)
    text = llm.client.send(adjudicate).text
    label, warning = resolve_verdict(parse_verdict(text), options.unparseable, loc.id, text)
    return Prediction(loc.id, PipelineKind.C, label, text, vlm.model_id, llm.model_id,
                      warning, reasoning)


# AGGREGATORS FOR SUBSET SEARCH
# ///////////////////////////////////////////////////////////////
Aggregator = Callable[[AnswerVector], Label]


def majority_vote(av: AnswerVector) -> Label:
    """Positive iff a strict majority of verdicts is Yes."""
    yes = sum(1 for v in av.verdicts if v is Verdict.YES)
    return Label.GULLY_POSITIVE if 2 * yes > len(av.verdicts) else Label.GULLY_NEGATIVE


def llm_aggregator(llm: ModelHandle, options: PipelineOptions = DEFAULT_OPTIONS) -> Aggregator:
    def aggregate(av: AnswerVector) -> Label:
        qs = QuestionSet("subset", av.question_indices)
        return aggregate_llm(av, qs, llm, options).label
    return aggregate


def mock_script_for(locations: Sequence[Location], options: PipelineOptions = DEFAULT_OPTIONS,
                    positive_bias: float = Settings.MOCK_POSITIVE_BIAS,
                    negative_bias: float = Settings.MOCK_NEGATIVE_BIAS,
                    question_bias: Optional[Dict[int, Tuple[float, float]]] = None) -> MockScript:
    """Mock script whose Yes rates depend on each location's true label."""
    truth = {}
    for loc in locations:
        if loc.label.is_labeled:
            digest = image_digest(_collage_payload(loc, options))
            truth[digest] = loc.label is Label.GULLY_POSITIVE
    return MockScript(truth=truth, positive_bias=positive_bias, negative_bias=negative_bias,
                      question_bias=dict(question_bias or {}))


# RUNNER
# ///////////////////////////////////////////////////////////////
@dataclass
class RunStats:
    locations: int = 0
    start_time: float = 0.0
    end_time: float = 0.0
    warnings: int = 0
    errors: List[str] = field(default_factory=list)

    @property
    def elapsed(self) -> float:
        return self.end_time - self.start_time


@dataclass
class RunResult:
    predictions: List[Prediction]
    answers: List[AnswerVector]
    stats: RunStats


class PipelineRunner:
    def __init__(self,
                 kind: PipelineKind,
                 vlm: ModelHandle,
                 llm: Optional[ModelHandle] = None,
                 questions: Optional[QuestionSet] = None,
                 options: PipelineOptions = DEFAULT_OPTIONS,
                 jobs: int = Settings.JOBS,
                 answers_only: bool = False,
                 progress: bool = True):
        self.kind = kind
        self.vlm = vlm
        self.llm = llm
        self.questions = questions
        self.options = options
        self.jobs = max(1, min(jobs, 32))  # Limit workers between 1 and 32
        self.answers_only = answers_only
        self.progress = progress
        self.stats = RunStats()
        self._validate_inputs()

    def _validate_inputs(self) -> None:
        """Validate pipeline wiring"""
        if self.kind is PipelineKind.TL:
            raise ValueError("Pipeline TL runs from answer vectors; use mlp.predict_answers")
        if self.answers_only and self.kind is not PipelineKind.B:
            raise ValueError("answers_only applies to pipeline B")
        if self.kind is PipelineKind.B and not self.questions:
            raise ValueError("Pipeline B needs a question set")
        if self.kind in (PipelineKind.B, PipelineKind.C) and self.llm is None \
                and not self.answers_only:
            raise ValueError(f"Pipeline {self.kind.value} needs an LLM")

    def _process(self, loc: Location) -> Tuple[Optional[Prediction], Optional[AnswerVector]]:
        if self.kind is PipelineKind.A:
            return run_pipeline_a(loc, self.vlm, self.options), None
        if self.kind is PipelineKind.C:
            return run_pipeline_c(loc, self.vlm, self.llm, self.options), None
        av = run_vqa(loc, self.questions, self.vlm, self.options)
        if self.answers_only:
            return None, av
        return aggregate_llm(av, self.questions, self.llm, self.options), av

    def _worker(self, loc: Location, progress: tqdm,
                results: Dict[str, tuple], lock) -> None:
        """Worker thread for one location"""
        try:
            prediction, answers = self._process(loc)
        except GullyError as e:
            logger.error(f"Location {loc.id} failed: {e}")
            with lock:
                self.stats.errors.append(f"{loc.id}: {e}")
                progress.update(1)
            return
        with lock:
            results[loc.id] = (prediction, answers)
            self.stats.locations += 1
            if prediction is not None and prediction.warning:
                self.stats.warnings += 1
            progress.update(1)

    def run(self, locations: Sequence[Location]) -> RunResult:
        """
        Run the pipeline over ``locations`` with a bounded worker pool.

        Returns:
            RunResult with predictions and answer vectors in input order.
        """
        self.stats = RunStats()
        self.stats.start_time = time.time()
        results: Dict[str, tuple] = {}
        lock = threading.Lock()
        logger.info(f"Running pipeline {self.kind.value} over {len(locations)} locations "
                    f"with {self.jobs} workers")

        with tqdm(total=len(locations), desc=f"Pipeline {self.kind.value}",
                  disable=not self.progress) as progress:
            if self.jobs == 1:
                for loc in locations:
                    self._worker(loc, progress, results, lock)
            else:
                with ThreadPoolExecutor(max_workers=self.jobs) as executor:
                    futures = [executor.submit(self._worker, loc, progress, results, lock)
                               for loc in locations]
                    for future in futures:
                        future.result()

        self.stats.end_time = time.time()
        predictions, answers = [], []
        for loc in locations:
            if loc.id not in results:
                continue
            prediction, av = results[loc.id]
            if prediction is not None:
                predictions.append(prediction)
            if av is not None:
                answers.append(av)
        return RunResult(predictions, answers, self.stats)
