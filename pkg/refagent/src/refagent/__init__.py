"""Reference exploration-agent client.

Speaks the orchestrator's JSON-lines stdio protocol: each incoming line
carries ``{"design", "metrics", "budget", "history"}``; each reply line
is ``{"transforms": [...]}`` or ``{"done": true}``.  Proposals are
drawn with a seeded generator from the identifiers present in the
received design, so a fixed seed reproduces a session byte for byte.
"""

from .session import AgentSession, ProposalHook, ProtocolError, serve
from .survey import Survey, survey_design

__all__ = [
    "AgentSession",
    "ProposalHook",
    "ProtocolError",
    "Survey",
    "serve",
    "survey_design",
]
