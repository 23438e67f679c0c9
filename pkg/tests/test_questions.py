import pytest

from gully_vqa import prompts
from gully_vqa.errors import OutOfRangeError, TemplateError, UnknownPresetError
from gully_vqa.questions import (
    BANK,
    BANK_SIZE,
    EXPERT_RANKING,
    PREAMBLE,
    QuestionSet,
    parse_question_set,
    preset,
    question,
    render_question,
    top_k,
)


def test_bank_has_nineteen_questions_with_one_unranked():
    assert BANK_SIZE == 19
    assert [q.index for q in BANK] == list(range(1, 20))
    assert question(19).expert_rank is None
    assert question(2).expert_rank == 1
    assert question(18).expert_rank == 18
    assert sorted(EXPERT_RANKING) == list(range(1, 19))


def test_question_texts_are_verbatim():
    assert question(1).text == "Do you see a low point in the terrain?"
    assert question(3).text == "Are there winding paths that become intermittent recurrent?"
    assert question(19).text == ("Do you see any indication of human activity such as tillage "
                                 "that is not naturally happened in the field?")


@pytest.mark.parametrize("name,indices", [
    ("q3", (2, 3, 14)),
    ("q6", (2, 3, 14, 5, 4, 6)),
    ("q9", (2, 3, 14, 5, 4, 6, 9, 11, 13)),
    ("q12", (2, 3, 14, 5, 4, 6, 9, 11, 13, 8, 10, 7)),
    ("q15", (2, 3, 14, 5, 4, 6, 9, 11, 13, 8, 10, 7, 1, 12, 15)),
    ("q18", (2, 3, 14, 5, 4, 6, 9, 11, 13, 8, 10, 7, 1, 12, 15, 16, 17, 18)),
    ("optuna4", (3, 6, 7, 12)),
    ("full19", tuple(range(1, 20))),
])
def test_presets(name, indices):
    assert preset(name).indices == indices


def test_top_k_matches_presets_and_bounds():
    assert top_k(9).indices == preset("q9").indices
    for k in (0, 19):
        with pytest.raises(OutOfRangeError):
            top_k(k)


def test_unknown_preset():
    with pytest.raises(UnknownPresetError) as info:
        preset("q7")
    assert "q7" in str(info.value)
    assert isinstance(info.value, KeyError)


def test_parse_question_set():
    assert parse_question_set("q15").name == "q15"
    custom = parse_question_set(" 3, 6,7 ,12 ")
    assert custom.indices == (3, 6, 7, 12)
    assert custom.label() == "3,6,7,12"
    with pytest.raises(UnknownPresetError):
        parse_question_set("three")
    with pytest.raises(OutOfRangeError):
        parse_question_set("0,4")


def test_question_sets_reject_repeats_and_keep_order():
    with pytest.raises(OutOfRangeError):
        QuestionSet("dup", (2, 2))
    qs = QuestionSet("x", (7, 1))
    assert [q.index for q in qs.questions()] == [7, 1]
    assert len(qs) == 2


def test_rendering():
    assert render_question(question(2)) == f"{PREAMBLE} {question(2).text}"
    vqa = prompts.vqa_prompt(question(2))
    assert vqa == f"{render_question(question(2))} Answer with only yes or no."
    assert vqa.startswith(PREAMBLE)
    assert prompts.DIRECT_MARKER in prompts.DIRECT.render()
    assert prompts.DESCRIPTIVE_MARKER in prompts.DESCRIPTIVE.render()


def test_unresolved_placeholder_is_an_error():
    with pytest.raises(TemplateError):
        prompts.AGGREGATION.render()
    # values may themselves contain braces
    text = prompts.ADJUDICATION.render(REASONING="a {QA_BLOCK} b")
    assert "a {QA_BLOCK} b" in text


def test_qa_block_numbering():
    block = prompts.format_qa_block([(question(3), "Yes"), (question(6), prompts.NO_ANSWER)])
    assert block == (f"\n1. {question(3).text}\n   Answer: Yes"
                     f"\n2. {question(6).text}\n   Answer: No answer\n")
