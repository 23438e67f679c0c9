"""Prompt templates sent to the VLM and LLM backends."""
import re
from dataclasses import dataclass
from typing import Iterable, Tuple

from .errors import TemplateError
from .questions import Question, render_question

_PLACEHOLDER = re.compile(r"\{[A-Z_]+\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    def render(self, **values: str) -> str:
        out = self.text
        for key, value in values.items():
            out = out.replace("{" + key + "}", value)
        # only check the template's own text for leftovers, values may contain braces
        unresolved = [m for m in _PLACEHOLDER.findall(self.text)
                      if m[1:-1] not in values]
        if unresolved:
            raise TemplateError(f"Template {self.name!r} left {', '.join(unresolved)} unresolved")
        return out


DIRECT = PromptTemplate(
    "direct",
    "Given this collage of six images of the exact same area and collected over a "
    "period of 10 years. Are there any ephemeral gully appearances by looking at all "
    "of them together? Reason and conclude with only yes or no.",
)

DESCRIPTIVE = PromptTemplate(
    "descriptive",
    "Given this collage of six images of the exact same area and collected over a "
    "period of 10 years. Are there any ephemeral gully appearances by looking at all "
    "of them together?. Provide the reasons for your answer.",
)

VQA = PromptTemplate(
    "vqa",
    "{QUESTION} Answer with only yes or no.",
)

AGGREGATION = PromptTemplate(
    "aggregation",
    "The following are yes/no answers to questions about visual attributes of "
    "ephemeral gullies observed in aerial images of one field over 10 years. "
    "{QA_BLOCK} Based only on these answers, does this field show signs of ephemeral "
    "gully formation? Conclude with only yes or no.",
)

ADJUDICATION = PromptTemplate(
    "adjudication",
    "An analyst looked at a collage of six aerial images of the exact same area "
    "collected over a period of 10 years and was asked whether any ephemeral gully "
    "appears. Their reasoning was:\n\"{REASONING}\"\n"
    "Evaluate whether this reasoning is valid. Based on it, does this field show "
    "signs of ephemeral gully formation? Conclude with only yes or no.",
)

# Markers the mock backend uses to tell prompts apart.
DIRECT_MARKER = "Reason and conclude with only yes or no"
DESCRIPTIVE_MARKER = "Provide the reasons for your answer"
AGGREGATION_MARKER = "Based only on these answers"
ADJUDICATION_MARKER = "Evaluate whether this reasoning is valid"

NO_ANSWER = "No answer"


def format_qa_block(pairs: Iterable[Tuple[Question, str]]) -> str:
    """Numbered question/answer lines; answers are Yes, No or "No answer"."""
    lines = [f"\n{n}. {q.text}\n   Answer: {answer}"
             for n, (q, answer) in enumerate(pairs, start=1)]
    return "".join(lines) + "\n"


def vqa_prompt(q: Question) -> str:
    """Preamble, the question and the yes/no instruction."""
    return VQA.render(QUESTION=render_question(q))
