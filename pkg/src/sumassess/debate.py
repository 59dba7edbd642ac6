"""Draft / challenge / synthesize discussion around a single task prompt.

One draft agent answers the task, a fixed number of challengers critique the
draft independently (none of them sees another challenger's text), and a
moderator synthesizes everything into a final answer that must conform to the
step's output schema. Exactly one round.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

from .errors import SumassessError
from .gateway import Gateway, make_request
from .prompt_kit import (
    ParseError,
    ValidationError,
    query_structured,
    render_challenger,
    render_moderator,
)

ROLES = ("draft", "challenger", "moderator")


@dataclass(frozen=True)
class AgentSpec:
    role: str
    model_id: str
    index: int = 0

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"invalid agent role {self.role!r}")


@dataclass
class DiscussionTranscript:
    task_prompt: str
    draft_output: str = ""
    challenges: list[tuple[int, str]] = field(default_factory=list)
    synthesis_output: str | None = None

    def to_dict(self) -> dict:
        return {
            "task_prompt": self.task_prompt,
            "draft_output": self.draft_output,
            "challenges": [{"agent_index": index, "critique": text} for index, text in self.challenges],
            "synthesis_output": self.synthesis_output,
        }

    @classmethod
    def from_dict(cls, entry: dict) -> "DiscussionTranscript":
        return cls(
            task_prompt=entry["task_prompt"],
            draft_output=entry["draft_output"],
            challenges=[(c["agent_index"], c["critique"]) for c in entry["challenges"]],
            synthesis_output=entry.get("synthesis_output"),
        )


class DebateFailedError(SumassessError):
    """Moderator output stayed unparseable; the partial transcript is attached."""

    def __init__(self, message: str, transcript: DiscussionTranscript):
        super().__init__(message)
        self.transcript = transcript


def default_rosters(
    kind: str,
    primary_model: str,
    alternates: Sequence[str] = (),
    challenger_count: int = 3,
) -> list[AgentSpec]:
    """Standard agent assignment.

    single_model puts the primary model in every seat. multi_model keeps the
    primary model as draft and moderator and hands the challenger seats to the
    alternates in their listed order.
    """
    if challenger_count < 1:
        raise ValueError("challenger_count must be >= 1")
    if kind == "single_model":
        challengers = [AgentSpec("challenger", primary_model, i + 1) for i in range(challenger_count)]
    elif kind == "multi_model":
        if len(alternates) < challenger_count:
            raise ValueError(
                f"multi_model debate needs at least {challenger_count} alternate models, got {len(alternates)}"
            )
        challengers = [AgentSpec("challenger", alternates[i], i + 1) for i in range(challenger_count)]
    else:
        raise ValueError(f"unknown roster kind {kind!r}")
    return [AgentSpec("draft", primary_model, 0), *challengers, AgentSpec("moderator", primary_model, 0)]


def _split_roles(agents: Sequence[AgentSpec]) -> tuple[AgentSpec, list[AgentSpec], AgentSpec]:
    drafts = [a for a in agents if a.role == "draft"]
    challengers = [a for a in agents if a.role == "challenger"]
    moderators = [a for a in agents if a.role == "moderator"]
    if len(drafts) != 1 or len(moderators) != 1:
        raise ValueError("a debate needs exactly one draft agent and one moderator")
    if not challengers:
        raise ValueError("a debate needs at least one challenger")
    indices = [c.index for c in challengers]
    if len(set(indices)) != len(indices):
        raise ValueError("challenger indices must be unique")
    return drafts[0], sorted(challengers, key=lambda c: c.index), moderators[0]


def run_debate(
    task_prompt: str,
    output_schema: str,
    agents: Sequence[AgentSpec],
    gateway: Gateway,
    *,
    parse_retries: int = 2,
    temperature: float = 0.0,
    max_tokens: int = 2048,
    seed: int | None = None,
) -> tuple[Any, DiscussionTranscript]:
    """Run one draft -> challenge -> synthesize pass.

    The final value is the moderator's output parsed against ``output_schema``.
    Challenges are recorded in agent-index order.
    """
    draft, challengers, moderator = _split_roles(agents)
    transcript = DiscussionTranscript(task_prompt=task_prompt)

    draft_response = gateway.complete(
        make_request(draft.model_id, task_prompt, temperature=temperature, max_tokens=max_tokens, seed=seed)
    )
    transcript.draft_output = draft_response.text

    for challenger in challengers:
        prompt = render_challenger(task_prompt, transcript.draft_output)
        response = gateway.complete(
            make_request(challenger.model_id, prompt, temperature=temperature, max_tokens=max_tokens, seed=seed)
        )
        transcript.challenges.append((challenger.index, response.text))

    moderator_prompt = render_moderator(
        task_prompt, transcript.draft_output, [text for _, text in transcript.challenges]
    )
    try:
        value, raw = query_structured(
            gateway,
            moderator.model_id,
            moderator_prompt,
            output_schema,
            retries=parse_retries,
            temperature=temperature,
            max_tokens=max_tokens,
            seed=seed,
        )
    except (ParseError, ValidationError) as exc:
        raise DebateFailedError(f"moderator output failed to parse: {exc}", transcript) from exc
    transcript.synthesis_output = raw
    return value, transcript
