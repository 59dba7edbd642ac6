from __future__ import annotations

import json

import pytest

from helpers import CHALLENGER_MATCH, MODERATOR_MATCH, scripted_gateway
from sumassess.debate import (
    AgentSpec,
    DebateFailedError,
    DiscussionTranscript,
    default_rosters,
    run_debate,
)
from sumassess.gateway import Fixture

TASK = "Step 3 style task: rate the thing."
SCORE = '{"reasoning": "synthesized", "confidence": 9, "rating": 2}'


def _debate_fixtures(final: str = SCORE) -> list[Fixture]:
    return [
        Fixture(CHALLENGER_MATCH, "critique text"),
        Fixture(MODERATOR_MATCH, final),
        Fixture(TASK, "draft text"),  # bare task prompt: the draft call
    ]


def test_full_flow_records_everything() -> None:
    gateway = scripted_gateway(_debate_fixtures())
    agents = default_rosters("single_model", "gpt-x")
    value, transcript = run_debate(TASK, "step3", agents, gateway)
    assert value.rating == 2 and value.reasoning == "synthesized"
    assert transcript.task_prompt == TASK
    assert transcript.draft_output == "draft text"
    assert [index for index, _ in transcript.challenges] == [1, 2, 3]
    assert transcript.synthesis_output == SCORE


def test_call_count_is_draft_plus_challengers_plus_moderator() -> None:
    gateway = scripted_gateway(_debate_fixtures())
    run_debate(TASK, "step3", default_rosters("single_model", "gpt-x", challenger_count=3), gateway)
    assert len(gateway.request_log) == 5  # 1 draft + 3 challengers + 1 synthesis


def test_single_challenger() -> None:
    gateway = scripted_gateway(_debate_fixtures())
    _, transcript = run_debate(
        TASK, "step3", default_rosters("single_model", "gpt-x", challenger_count=1), gateway
    )
    assert len(transcript.challenges) == 1


def test_challenger_prompts_contain_draft_but_not_sibling_critiques() -> None:
    responses = iter(["first critique", "second critique", "third critique"])

    # stateful scripted behavior: a distinct critique per challenger call
    class Backend:
        kind = "scripted"

        def send(self, request):
            from sumassess.gateway import CompletionResponse, TokenUsage

            prompt = request.prompt_text()
            if prompt == TASK:
                return CompletionResponse("the draft", request.model_id, TokenUsage())
            if prompt.startswith(CHALLENGER_MATCH):
                return CompletionResponse(next(responses), request.model_id, TokenUsage())
            return CompletionResponse(SCORE, request.model_id, TokenUsage())

    from sumassess.gateway import Gateway

    gateway = Gateway(Backend())
    _, transcript = run_debate(TASK, "step3", default_rosters("single_model", "gpt-x"), gateway)
    assert [text for _, text in transcript.challenges] == [
        "first critique",
        "second critique",
        "third critique",
    ]
    challenger_prompts = [
        request.prompt_text()
        for request in gateway.request_log
        if request.prompt_text().startswith(CHALLENGER_MATCH)
    ]
    assert len(challenger_prompts) == 3
    for prompt in challenger_prompts:
        assert "the draft" in prompt
        for critique in ("first critique", "second critique", "third critique"):
            assert critique not in prompt  # no sibling critique leaked
    moderator_prompts = [
        request.prompt_text()
        for request in gateway.request_log
        if request.prompt_text().startswith(MODERATOR_MATCH)
    ]
    assert len(moderator_prompts) == 1
    for critique in ("first critique", "second critique", "third critique"):
        assert critique in moderator_prompts[0]


def test_multi_model_roster_routes_each_challenger() -> None:
    gateway = scripted_gateway(_debate_fixtures())
    agents = default_rosters("multi_model", "primary", alternates=("alt-1", "alt-2", "alt-3"))
    run_debate(TASK, "step3", agents, gateway)
    challenger_models = [
        request.model_id
        for request in gateway.request_log
        if request.prompt_text().startswith(CHALLENGER_MATCH)
    ]
    assert challenger_models == ["alt-1", "alt-2", "alt-3"]
    draft_and_moderator = [
        request.model_id
        for request in gateway.request_log
        if not request.prompt_text().startswith(CHALLENGER_MATCH)
    ]
    assert set(draft_and_moderator) == {"primary"}


def test_default_rosters_single_model_has_five_identical_ids() -> None:
    agents = default_rosters("single_model", "gpt-x")
    assert len(agents) == 5
    assert {a.model_id for a in agents} == {"gpt-x"}


def test_default_rosters_multi_model_orders_alternates() -> None:
    agents = default_rosters("multi_model", "p", alternates=("a", "b", "c"))
    challengers = [a for a in agents if a.role == "challenger"]
    assert [c.model_id for c in challengers] == ["a", "b", "c"]
    assert [c.index for c in challengers] == [1, 2, 3]


def test_default_rosters_insufficient_alternates() -> None:
    with pytest.raises(ValueError, match="alternate"):
        default_rosters("multi_model", "p", alternates=("a", "b"))


def test_roster_validation() -> None:
    gateway = scripted_gateway(_debate_fixtures())
    no_moderator = [AgentSpec("draft", "m"), AgentSpec("challenger", "m", 1)]
    with pytest.raises(ValueError, match="moderator"):
        run_debate(TASK, "step3", no_moderator, gateway)
    no_challengers = [AgentSpec("draft", "m"), AgentSpec("moderator", "m")]
    with pytest.raises(ValueError, match="challenger"):
        run_debate(TASK, "step3", no_challengers, gateway)
    with pytest.raises(ValueError, match="role"):
        AgentSpec("referee", "m")


def test_moderator_parse_failure_attaches_transcript() -> None:
    gateway = scripted_gateway(
        [
            Fixture(CHALLENGER_MATCH, "critique"),
            Fixture(MODERATOR_MATCH, "not json at all"),
            Fixture(TASK, "draft"),
        ]
    )
    with pytest.raises(DebateFailedError) as excinfo:
        run_debate(TASK, "step3", default_rosters("single_model", "m"), gateway)
    transcript = excinfo.value.transcript
    assert transcript.draft_output == "draft"
    assert len(transcript.challenges) == 3
    assert transcript.synthesis_output is None
    # initial ask + 2 re-asks for the moderator
    moderator_calls = [
        request for request in gateway.request_log if request.prompt_text().startswith(MODERATOR_MATCH)
    ]
    assert len(moderator_calls) == 3


def test_transcript_round_trips_through_json() -> None:
    transcript = DiscussionTranscript(
        task_prompt="t", draft_output="d", challenges=[(1, "c1"), (2, "c2")], synthesis_output="s"
    )
    payload = json.loads(json.dumps(transcript.to_dict()))
    assert DiscussionTranscript.from_dict(payload) == transcript
