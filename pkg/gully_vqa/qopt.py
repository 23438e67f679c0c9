"""
Question-subset search on Dev answers.

Every strategy compares trials on ``(objective value, subset)``: higher value
wins, ties go to the lexicographically smallest sorted subset.
"""
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import Label
from .errors import (
    EmptySubsetError,
    InvalidValueError,
    MissingAnswerError,
    TooManyQuestionsError,
)
from .evaluation import ConfusionMatrix, metrics
from .pipeline import Aggregator, AnswerVector, Verdict
from .questions import QuestionSet
from .settings import Settings

logger = logging.getLogger(__name__)

# verdict codes in the answer matrix
_YES, _NO, _UNPARSEABLE, _MISSING = 1, 0, -1, -2
_CODES = {Verdict.YES: _YES, Verdict.NO: _NO, Verdict.UNPARSEABLE: _UNPARSEABLE}
_VERDICTS = {v: k for k, v in _CODES.items()}


class ObjectiveName(Enum):
    MACRO_F1 = "macro_f1"
    F1_GULLY = "f1_gully"
    ACCURACY = "accuracy"


class Strategy(Enum):
    EXHAUSTIVE = "exhaustive"
    GREEDY_FORWARD = "greedy"
    RANDOM_SEARCH = "random"


@dataclass(frozen=True)
class AnswerTable:
    """Verdict matrix (locations x questions) over labeled locations."""
    location_ids: Tuple[str, ...]
    question_indices: Tuple[int, ...]
    verdicts: np.ndarray  # int8 codes
    positive: np.ndarray  # bool per location

    @classmethod
    def from_answers(cls, answers: Sequence[AnswerVector],
                     labels: Mapping[str, Label]) -> "AnswerTable":
        labeled = [av for av in answers
                   if av.location_id in labels and labels[av.location_id].is_labeled]
        indices = tuple(sorted({i for av in labeled for i in av.question_indices}))
        column = {q: j for j, q in enumerate(indices)}
        matrix = np.full((len(labeled), len(indices)), _MISSING, dtype=np.int8)
        for r, av in enumerate(labeled):
            for q, v in zip(av.question_indices, av.verdicts):
                matrix[r, column[q]] = _CODES[v]
        positive = np.array([labels[av.location_id] is Label.GULLY_POSITIVE for av in labeled],
                            dtype=bool)
        skipped = len(answers) - len(labeled)
        if skipped:
            logger.info(f"Answer table skips {skipped} unlabeled locations")
        return cls(tuple(av.location_id for av in labeled), indices, matrix, positive)

    def __len__(self) -> int:
        return len(self.location_ids)

    def columns(self, subset: Sequence[int]) -> np.ndarray:
        try:
            cols = [self.question_indices.index(q) for q in subset]
        except ValueError:
            missing = sorted(set(subset) - set(self.question_indices))
            raise MissingAnswerError(f"no answers for question(s) {missing}") from None
        block = self.verdicts[:, cols]
        if np.any(block == _MISSING):
            row = int(np.argwhere(block == _MISSING)[0][0])
            raise MissingAnswerError(f"{self.location_ids[row]} lacks answers for {list(subset)}")
        return block

    def answer_vector(self, row: int, subset: Sequence[int]) -> AnswerVector:
        codes = self.columns(subset)[row]
        return AnswerVector(self.location_ids[row], tuple(subset),
                            tuple(_VERDICTS[int(c)] for c in codes), ("",) * len(subset))


@dataclass(frozen=True)
class Trial:
    subset: QuestionSet
    objective_name: ObjectiveName
    objective_value: float
    strategy: Strategy
    seed: Optional[int] = None

    def key(self) -> Tuple[float, Tuple[int, ...]]:
        return self.objective_value, tuple(sorted(self.subset.indices))

    def beats(self, other: Optional["Trial"]) -> bool:
        if other is None:
            return True
        if self.objective_value != other.objective_value:
            return self.objective_value > other.objective_value
        return self.key()[1] < other.key()[1]

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset.indices),
            "objective": self.objective_name.value,
            "value": self.objective_value,
            "strategy": self.strategy.value,
            "seed": self.seed,
        }


def _objective(cm: ConfusionMatrix, objective: ObjectiveName) -> float:
    return getattr(metrics(cm), objective.value)


def _majority(block: np.ndarray) -> np.ndarray:
    return 2 * (block == _YES).sum(axis=1) > block.shape[1]


def score_subset(subset: Sequence[int], table: AnswerTable,
                 objective: ObjectiveName = ObjectiveName(Settings.OBJECTIVE),
                 aggregator: Optional[Aggregator] = None) -> float:
    """
    Objective of ``subset`` on the table's labeled locations.

    Majority vote runs vectorised; any other aggregator is called once per
    location with the restricted answer vector.
    """
    subset = tuple(subset)
    if not subset:
        raise EmptySubsetError("score_subset needs at least one question")
    block = table.columns(subset)
    if aggregator is None:
        predicted = _majority(block)
    else:
        predicted = np.array([aggregator(table.answer_vector(r, subset)) is Label.GULLY_POSITIVE
                              for r in range(len(table))], dtype=bool)
    truth = table.positive
    cm = ConfusionMatrix(
        tp=int(np.sum(predicted & truth)),
        fp=int(np.sum(predicted & ~truth)),
        fn=int(np.sum(~predicted & truth)),
        tn=int(np.sum(~predicted & ~truth)),
    )
    return _objective(cm, objective)


def _trial(subset: Sequence[int], table: AnswerTable, objective: ObjectiveName,
           strategy: Strategy, aggregator: Optional[Aggregator],
           seed: Optional[int] = None) -> Trial:
    subset = tuple(sorted(subset))
    qs = QuestionSet(f"{strategy.value}:{','.join(map(str, subset))}", subset)
    return Trial(qs, objective, score_subset(subset, table, objective, aggregator),
                 strategy, seed)


def best_of(trials: Sequence[Trial]) -> Trial:
    best = None
    for t in trials:
        if t.beats(best):
            best = t
    if best is None:
        raise EmptySubsetError("no trials to choose from")
    return best


def exhaustive(table: AnswerTable, max_k: Optional[int] = None,
               objective: ObjectiveName = ObjectiveName(Settings.OBJECTIVE),
               aggregator: Optional[Aggregator] = None) -> Trial:
    if max_k is not None and max_k < 1:
        raise EmptySubsetError("max_k must be >= 1")
    n = len(table.question_indices)
    if n > Settings.MAX_EXHAUSTIVE_QUESTIONS:
        raise TooManyQuestionsError(
            f"exhaustive search over {n} questions; limit is {Settings.MAX_EXHAUSTIVE_QUESTIONS}")
    if n == 0:
        raise EmptySubsetError("answer table has no questions")
    max_k = n if max_k is None else min(max_k, n)
    best = None
    for k in range(1, max_k + 1):
        for subset in itertools.combinations(table.question_indices, k):
            t = _trial(subset, table, objective, Strategy.EXHAUSTIVE, aggregator)
            if t.beats(best):
                best = t
    logger.info(f"Exhaustive best {best.subset.label()} = {best.objective_value:.4f}")
    return best


def greedy_forward(table: AnswerTable, max_k: Optional[int] = None,
                   objective: ObjectiveName = ObjectiveName(Settings.OBJECTIVE),
                   aggregator: Optional[Aggregator] = None) -> List[Trial]:
    """Trials after each pick; stops at ``max_k`` or when no question improves."""
    if max_k is not None and max_k < 1:
        raise EmptySubsetError("max_k must be >= 1")
    n = len(table.question_indices)
    if n == 0:
        raise EmptySubsetError("answer table has no questions")
    max_k = n if max_k is None else min(max_k, n)
    chosen: Tuple[int, ...] = ()
    trials: List[Trial] = []
    while len(chosen) < max_k:
        candidates = [_trial(chosen + (q,), table, objective, Strategy.GREEDY_FORWARD, aggregator)
                      for q in table.question_indices if q not in chosen]
        step = best_of(candidates)
        if trials and step.objective_value <= trials[-1].objective_value:
            break
        trials.append(step)
        chosen = step.subset.indices
        logger.debug(f"Greedy pick -> {step.subset.label()} = {step.objective_value:.4f}")
    return trials


def random_subsets(n: int, budget: int, seed: int = Settings.SEED) -> Iterator[Tuple[int, ...]]:
    """
    Column positions of ``budget`` subsets, each position included with
    probability 0.5; empty draws are redrawn.
    """
    if budget < 1:
        raise InvalidValueError("budget", budget, "must be >= 1")
    if n < 1:
        raise EmptySubsetError("no questions to draw from")
    rng = np.random.default_rng(seed)
    for _ in range(budget):
        mask = rng.random(n) < 0.5
        while not mask.any():
            mask = rng.random(n) < 0.5
        yield tuple(int(i) for i in np.flatnonzero(mask))


def random_trials(table: AnswerTable, budget: int = Settings.SEARCH_BUDGET,
                  seed: int = Settings.SEED,
                  objective: ObjectiveName = ObjectiveName(Settings.OBJECTIVE),
                  aggregator: Optional[Aggregator] = None) -> List[Trial]:
    return [_trial([table.question_indices[i] for i in positions], table, objective,
                   Strategy.RANDOM_SEARCH, aggregator, seed)
            for positions in random_subsets(len(table.question_indices), budget, seed)]


def random_search(table: AnswerTable, budget: int = Settings.SEARCH_BUDGET,
                  seed: int = Settings.SEED,
                  objective: ObjectiveName = ObjectiveName(Settings.OBJECTIVE),
                  aggregator: Optional[Aggregator] = None) -> Trial:
    best = best_of(random_trials(table, budget, seed, objective, aggregator))
    logger.info(f"Random search best {best.subset.label()} = {best.objective_value:.4f}")
    return best


def rescore(trial: Trial, table: AnswerTable, aggregator: Aggregator) -> Trial:
    """Re-evaluate a chosen subset with a different aggregator (e.g. the LLM)."""
    value = score_subset(trial.subset.indices, table, trial.objective_name, aggregator)
    return Trial(trial.subset, trial.objective_name, value, trial.strategy, trial.seed)
