"""The fixed bank of 19 yes/no questions about ephemeral gully attributes."""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .errors import OutOfRangeError, UnknownPresetError

PREAMBLE = ("Given these six images of the exact same area and collected "
            "over a period of 10 years ...")


@dataclass(frozen=True)
class Question:
    index: int
    text: str
    expert_rank: Optional[int]  # None: unranked


_TEXTS = (
    "Do you see a low point in the terrain?",
    "Do narrow, winding paths or channels appear?",
    "Are there winding paths that become intermittent recurrent?",
    "Are there any linear depressions or ruts which appear more pronounced along natural drainage lines or slopes?",
    "Are there narrow and shallow channels which appear intermittently deeper or more indented into the soil?",
    "Are there areas where soil appears disturbed or vegetation is removed?",
    "Does a specific path lack vegetation, suggesting an evolving or emerging channel?",
    "Are there varying types and levels of coarseness in the texture of the soil?",
    "Are there clear starting and ending points of potential channels?",
    "Are there small rills or grooves indicating water flow?",
    "Is there a varying exposure of lighter or darker colored soil?",
    "Are there sediment accumulations forming?",
    "Are there signs of water activity, like soil clumps or crusting, that appear or intensify in specific areas?",
    "Are there any branching patterns that resemble temporary streams?",
    "Are there indications of nearby human activity, such as tillage or machinery tracks?",
    "Do you see any sign of water flow patterns across the field in multiple images?",
    "Do you see any edges in the images indicating removal of soil along the water pathway?",
    "Do you see any cuts in the soil associated with water flow across the field?",
    "Do you see any indication of human activity such as tillage that is not naturally happened in the field?",
)

# Most to least relevant; question 19 is unranked.
EXPERT_RANKING = (2, 3, 14, 5, 4, 6, 9, 11, 13, 8, 10, 7, 1, 12, 15, 16, 17, 18)

BANK: Tuple[Question, ...] = tuple(
    Question(i, text, EXPERT_RANKING.index(i) + 1 if i in EXPERT_RANKING else None)
    for i, text in enumerate(_TEXTS, start=1)
)
BANK_SIZE = len(BANK)


def question(index: int) -> Question:
    if not 1 <= index <= BANK_SIZE:
        raise OutOfRangeError(f"Question index {index} outside 1..{BANK_SIZE}")
    return BANK[index - 1]


def render_question(q: Question) -> str:
    return f"{PREAMBLE} {q.text}"


@dataclass(frozen=True)
class QuestionSet:
    name: str
    indices: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(set(self.indices)) != len(self.indices):
            raise OutOfRangeError(f"Question set {self.name!r} repeats an index")
        for i in self.indices:
            if not 1 <= i <= BANK_SIZE:
                raise OutOfRangeError(f"Question index {i} outside 1..{BANK_SIZE}")

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def questions(self) -> Tuple[Question, ...]:
        return tuple(BANK[i - 1] for i in self.indices)

    def label(self) -> str:
        return ",".join(map(str, self.indices))


def top_k(k: int) -> QuestionSet:
    if not 1 <= k <= len(EXPERT_RANKING):
        raise OutOfRangeError(f"top_k expects 1..{len(EXPERT_RANKING)}, got {k}")
    return QuestionSet(f"top{k}", EXPERT_RANKING[:k])


PRESETS: Dict[str, Tuple[int, ...]] = {
    **{f"q{k}": EXPERT_RANKING[:k] for k in (3, 6, 9, 12, 15, 18)},
    "optuna4": (3, 6, 7, 12),
    "full19": tuple(range(1, BANK_SIZE + 1)),
}


def preset(name: str) -> QuestionSet:
    try:
        return QuestionSet(name, PRESETS[name])
    except KeyError:
        raise UnknownPresetError(
            f"Unknown question preset {name!r}; choose from {', '.join(PRESETS)}") from None


def parse_question_set(text: str) -> QuestionSet:
    """A preset name (``q15``) or a comma-separated index list (``3,6,7,12``)."""
    text = text.strip()
    if text in PRESETS:
        return preset(text)
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts or not all(p.isdigit() for p in parts):
        raise UnknownPresetError(
            f"{text!r} is neither a preset ({', '.join(PRESETS)}) nor an index list")
    return QuestionSet("custom", tuple(int(p) for p in parts))
