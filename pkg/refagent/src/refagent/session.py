"""The agent session: message validation, round budget, reply choice.

``serve`` is the process entry point: one JSON object per stdin line in,
one JSON object per stdout line out, flushed immediately so the
orchestrator's read never stalls.  A malformed message produces one
``{"error": ...}`` reply and a nonzero exit; well-formed traffic can
never crash the process.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Any, Callable, Mapping, TextIO

from .proposals import eligible_categories, propose
from .survey import survey_design

ProposalHook = Callable[[str], "list[dict[str, Any]] | None"]


class ProtocolError(ValueError):
    """The incoming message does not follow the protocol schema."""


def _validate(message: Any) -> Mapping[str, Any]:
    if not isinstance(message, Mapping):
        raise ProtocolError("message must be a JSON object")
    for key in ("design", "metrics", "budget", "history"):
        if key not in message:
            raise ProtocolError(f"message lacks required field '{key}'")
    if not isinstance(message["design"], Mapping):
        raise ProtocolError("'design' must be an object")
    if not isinstance(message["metrics"], Mapping):
        raise ProtocolError("'metrics' must be an object")
    if isinstance(message["budget"], bool) or not isinstance(message["budget"], int):
        raise ProtocolError("'budget' must be an integer")
    if not isinstance(message["history"], list):
        raise ProtocolError("'history' must be a list")
    return message


@dataclass
class AgentSession:
    """State carried across one orchestrator conversation.

    ``hook`` is the attachment point for a model-backed proposer: it
    receives the current design as canonical JSON text and may return a
    transform batch, or ``None`` to fall back to the seeded generator.
    No backend is bundled; the default is always the seeded generator.
    """

    rng: random.Random
    max_rounds: int
    hook: ProposalHook | None = None
    rounds_used: int = 0
    design: Mapping[str, Any] | None = None
    metrics: Mapping[str, Any] | None = None
    budget: int | None = None
    history: tuple = ()

    def handle(self, message: Any) -> dict[str, Any]:
        """Reply to one orchestrator message."""
        message = _validate(message)
        self.design = message["design"]
        self.metrics = message["metrics"]
        self.budget = message["budget"]
        self.history = tuple(message["history"])

        if self.rounds_used >= self.max_rounds:
            return {"done": True}

        try:
            survey = survey_design(self.design)
        except (ValueError, TypeError, KeyError, AttributeError) as exc:
            raise ProtocolError(f"unreadable design document: {exc}") from None

        if self.hook is not None:
            batch = self.hook(json.dumps(self.design, sort_keys=True))
            if batch is not None:
                self.rounds_used += 1
                return {"transforms": batch}

        categories = eligible_categories(survey)
        if not categories:
            return {"done": True}
        category = self.rng.choice(categories)
        batch = propose(category, survey, self.rng)
        self.rounds_used += 1
        return {"transforms": batch}


def serve(
    stdin: TextIO,
    stdout: TextIO,
    *,
    seed: int = 0,
    max_rounds: int = 25,
    hook: ProposalHook | None = None,
) -> int:
    """Run one session over text streams; returns the process exit status
    (0 for a clean session, 2 after a malformed message)."""
    session = AgentSession(rng=random.Random(seed), max_rounds=max_rounds, hook=hook)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            _reply(stdout, {"error": f"invalid JSON: {exc}"})
            return 2
        try:
            reply = session.handle(message)
        except ProtocolError as exc:
            _reply(stdout, {"error": str(exc)})
            return 2
        _reply(stdout, reply)
    return 0


def _reply(stdout: TextIO, doc: Mapping[str, Any]) -> None:
    stdout.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    stdout.flush()
