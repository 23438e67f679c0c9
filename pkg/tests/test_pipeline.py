import pytest

from conftest import mock_handle
from gully_vqa.backend import MockRule, MockScript, SendPolicy
from gully_vqa.dataset import Label, Split
from gully_vqa.errors import EmptySubsetError, MissingAnswerError, UnparseableVerdictError
from gully_vqa.pipeline import (
    AnswerVector,
    PipelineKind,
    PipelineOptions,
    PipelineRunner,
    Prediction,
    UnparseablePolicy,
    Verdict,
    aggregate_llm,
    aggregation_prompt,
    llm_aggregator,
    majority_vote,
    mock_script_for,
    run_pipeline_a,
    run_pipeline_c,
    run_vqa,
)
from gully_vqa.questions import QuestionSet, preset, question

Y, N, U = Verdict.YES, Verdict.NO, Verdict.UNPARSEABLE


def _always(reply):
    return MockScript(rules=(MockRule(".", reply),))


def _vector(*verdicts, indices=None):
    indices = indices or tuple(range(1, len(verdicts) + 1))
    return AnswerVector("loc", indices, verdicts, ("",) * len(verdicts), "vlm")


# PIPELINE A
# ///////////////////////////////////////////////////////////////
@pytest.mark.parametrize("reply,label,warning", [
    ("Several channels recur... conclusion: yes", Label.GULLY_POSITIVE, False),
    ("No.", Label.GULLY_NEGATIVE, False),
    ("It is unclear.", Label.GULLY_NEGATIVE, True),
])
def test_pipeline_a_labels(dataset, reply, label, warning):
    p = run_pipeline_a(dataset.locations[0], mock_handle(_always(reply)))
    assert (p.label, p.warning, p.raw_text) == (label, warning, reply)
    assert p.pipeline is PipelineKind.A and p.llm_id is None


def test_unparseable_policies(dataset):
    loc = dataset.locations[0]
    vlm = mock_handle(_always("maybe"))
    positive = PipelineOptions(unparseable=UnparseablePolicy.POSITIVE)
    assert run_pipeline_a(loc, vlm, positive).label is Label.GULLY_POSITIVE
    with pytest.raises(UnparseableVerdictError):
        run_pipeline_a(loc, vlm, PipelineOptions(unparseable=UnparseablePolicy.ERROR))


# PIPELINE B
# ///////////////////////////////////////////////////////////////
def test_vqa_shape_follows_question_set(dataset):
    qs = QuestionSet("three", (14, 2, 3))
    av = run_vqa(dataset.locations[0], qs, mock_handle())
    assert av.question_indices == (14, 2, 3)
    assert len(av.verdicts) == len(av.raw_texts) == 3
    assert all(v in (Y, N) for v in av.verdicts)


def test_vqa_is_deterministic(dataset):
    loc, qs = dataset.locations[3], preset("q6")
    script = mock_script_for(dataset.locations)
    assert run_vqa(loc, qs, mock_handle(script)) == run_vqa(loc, qs, mock_handle(script))


def test_vqa_failed_question_is_isolated(dataset):
    failing = question(3).text
    vlm = mock_handle(_always("Yes."), policy=SendPolicy(retries=2),
                      fail_when=lambda req: failing in req.text)
    av = run_vqa(dataset.locations[0], QuestionSet("s", (2, 3, 14)), vlm)
    assert av.verdicts == (Y, U, Y)
    assert av.raw_texts == ("Yes.", "", "Yes.")
    assert vlm.client.transport.calls == 4


def test_vqa_cache_contract(dataset):
    vlm = mock_handle()
    qs = preset("q6")
    run_vqa(dataset.locations[0], qs, vlm)
    assert vlm.client.upstream_calls == 6
    run_vqa(dataset.locations[0], qs, vlm)
    assert vlm.client.upstream_calls == 6
    assert vlm.client.cache_hits == 6


def test_vqa_needs_questions(dataset):
    with pytest.raises(EmptySubsetError):
        run_vqa(dataset.locations[0], QuestionSet("empty", ()), mock_handle())


@pytest.mark.parametrize("verdicts,label", [
    ((Y, Y, N), Label.GULLY_POSITIVE),
    ((Y, N), Label.GULLY_NEGATIVE),
    ((U, U, U), Label.GULLY_NEGATIVE),
])
def test_llm_aggregation_under_majority_mock(verdicts, label):
    av = _vector(*verdicts)
    qs = QuestionSet("s", av.question_indices)
    p = aggregate_llm(av, qs, mock_handle(model_id="llm"))
    assert p.label is label
    assert p.pipeline is PipelineKind.B and p.llm_id == "llm" and p.vlm_id == "vlm"


def test_aggregation_prompt_renders_no_answer():
    av = _vector(U, Y)
    prompt = aggregation_prompt(av, QuestionSet("s", (1, 2)))
    assert f"1. {question(1).text}\n   Answer: No answer" in prompt
    assert f"2. {question(2).text}\n   Answer: Yes" in prompt
    with pytest.raises(ValueError):
        aggregation_prompt(av, QuestionSet("s", (2, 1)))


def test_majority_vote():
    assert majority_vote(_vector(Y, Y, N)) is Label.GULLY_POSITIVE
    assert majority_vote(_vector(Y, N)) is Label.GULLY_NEGATIVE
    assert majority_vote(_vector(Y, U, U)) is Label.GULLY_NEGATIVE


def test_llm_aggregator_agrees_with_majority_mock():
    aggregate = llm_aggregator(mock_handle())
    for verdicts in [(Y, Y, N), (N, N, Y), (Y, N), (U, Y, Y)]:
        assert aggregate(_vector(*verdicts)) is majority_vote(_vector(*verdicts))


# PIPELINE C
# ///////////////////////////////////////////////////////////////
def test_pipeline_c_positive_reasoning(dataset):
    loc = next(l for l in dataset.locations if l.label is Label.GULLY_POSITIVE)
    script = mock_script_for(dataset.locations, positive_bias=1.0, negative_bias=0.0)
    p = run_pipeline_c(loc, mock_handle(script), mock_handle(model_id="judge"))
    assert "clear channel formation" in p.reasoning
    assert p.label is Label.GULLY_POSITIVE and p.llm_id == "judge"


def test_pipeline_c_empty_reasoning_still_adjudicated(dataset):
    llm = mock_handle()
    p = run_pipeline_c(dataset.locations[0], mock_handle(_always("")), llm)
    assert p.reasoning == ""
    assert p.label is Label.GULLY_NEGATIVE
    assert llm.client.upstream_calls == 1


def test_pipeline_c_adjudicator_text(dataset):
    llm = mock_handle(_always("Yes — the reasoning is valid."))
    p = run_pipeline_c(dataset.locations[0], mock_handle(), llm)
    assert p.label is Label.GULLY_POSITIVE


# RECORDS
# ///////////////////////////////////////////////////////////////
def test_answer_vector_restrict_and_dict():
    av = AnswerVector("a", (2, 3, 14), (Y, N, U), ("Yes", "No", "?"), "v")
    sub = av.restrict((14, 2))
    assert sub.question_indices == (14, 2) and sub.verdicts == (U, Y)
    with pytest.raises(MissingAnswerError):
        av.restrict((2, 5))
    assert AnswerVector.from_dict(av.to_dict()) == av
    with pytest.raises(ValueError):
        AnswerVector("a", (1, 2), (Y,), ("Yes",))


def test_prediction_requires_aggregator_id():
    with pytest.raises(ValueError):
        Prediction("a", PipelineKind.B, Label.GULLY_POSITIVE, "yes", "vlm")
    with pytest.raises(ValueError):
        Prediction("a", PipelineKind.A, Label.UNLABELED, "yes", "vlm")
    p = Prediction("a", PipelineKind.TL, Label.GULLY_NEGATIVE, "score", "vlm", "mlp", score=0.2)
    assert Prediction.from_dict(p.to_dict()) == p


# RUNNER
# ///////////////////////////////////////////////////////////////
def _runner(dataset, script, **kwargs):
    return PipelineRunner(PipelineKind.B, mock_handle(script), mock_handle(script),
                          preset("q6"), jobs=4, progress=False, **kwargs)


def test_runner_is_deterministic_and_ordered(dataset):
    script = mock_script_for(dataset.locations)
    first = _runner(dataset, script).run(dataset.locations)
    second = _runner(dataset, script).run(dataset.locations)
    assert [p.location_id for p in first.predictions] == [l.id for l in dataset.locations]
    assert [p.to_dict() for p in first.predictions] == [p.to_dict() for p in second.predictions]
    assert first.answers == second.answers
    assert first.stats.locations == 21 and not first.stats.errors


def test_runner_with_noiseless_mock_is_exact(dataset):
    script = mock_script_for(dataset.locations, positive_bias=1.0, negative_bias=0.0)
    result = _runner(dataset, script).run(dataset.split(Split.TEST))
    assert all(p.label is dataset.get(p.location_id).label for p in result.predictions)


def test_runner_answers_only(dataset):
    result = _runner(dataset, mock_script_for(dataset.locations), answers_only=True) \
        .run(dataset.split(Split.DEV))
    assert result.predictions == []
    assert len(result.answers) == 10


def test_runner_collects_errors(dataset):
    runner = PipelineRunner(PipelineKind.A, mock_handle(_always("maybe")),
                            options=PipelineOptions(unparseable=UnparseablePolicy.ERROR),
                            jobs=2, progress=False)
    result = runner.run(dataset.locations[:5])
    assert result.predictions == []
    assert len(result.stats.errors) == 5
    assert result.stats.locations == 0


def test_runner_counts_warnings(dataset):
    runner = PipelineRunner(PipelineKind.A, mock_handle(_always("maybe")), jobs=2,
                            progress=False)
    result = runner.run(dataset.locations[:4])
    assert result.stats.warnings == 4
    assert all(p.label is Label.GULLY_NEGATIVE for p in result.predictions)


def test_runner_wiring_is_validated():
    with pytest.raises(ValueError):
        PipelineRunner(PipelineKind.B, mock_handle(), mock_handle(), None)
    with pytest.raises(ValueError):
        PipelineRunner(PipelineKind.C, mock_handle())
    with pytest.raises(ValueError):
        PipelineRunner(PipelineKind.TL, mock_handle())
