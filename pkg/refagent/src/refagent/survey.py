"""Extract proposal targets from a design document.

The agent never applies or scores anything itself; it only needs to
know which identifiers exist — loops with their trip counts, call
sites, arrays with their lengths — and which structural opportunities
(adjacent same-trip loops, perfect nests, closed-form annotations) are
present.  Everything is read straight off the JSON document the
orchestrator sent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterator, Mapping, Sequence


@dataclass(frozen=True)
class LoopSeen:
    """One loop somewhere in a function body."""

    function: str
    loop_id: str
    trip_count: int
    carried: int
    has_closed_form: bool


@dataclass(frozen=True)
class Survey:
    """Every identifier a proposal may legitimately reference."""

    top: str
    functions: tuple[str, ...]
    loops: tuple[LoopSeen, ...]
    calls: tuple[tuple[str, str], ...]  # (function, call id)
    global_arrays: tuple[tuple[str, int], ...]  # (name, length)
    local_arrays: tuple[tuple[str, str, int], ...]  # (function, name, length)
    fuse_pairs: tuple[tuple[str, str, str], ...]  # (function, first, second)
    reorder_nests: tuple[tuple[str, str], ...]  # (function, outer loop id)

    def loops_of(self, function: str) -> tuple[LoopSeen, ...]:
        return tuple(l for l in self.loops if l.function == function)

    def closed_form_loops(self) -> tuple[tuple[str, str], ...]:
        return tuple(
            (l.function, l.loop_id) for l in self.loops if l.has_closed_form
        )


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def _iter_stmts(body: Sequence[Any]) -> Iterator[Mapping[str, Any]]:
    """All statements in a body, depth first, crossing loop bodies and
    parallel branches."""
    for stmt in body:
        yield stmt
        kind = stmt.get("kind")
        if kind == "loop":
            yield from _iter_stmts(stmt.get("body", ()))
        elif kind == "parallel":
            for branch in stmt.get("branches", ()):
                yield from _iter_stmts(branch)


def _blocks(body: Sequence[Any]) -> Iterator[Sequence[Any]]:
    """Every statement list in a body: the body itself, loop bodies, and
    parallel branches."""
    yield body
    for stmt in body:
        kind = stmt.get("kind")
        if kind == "loop":
            yield from _blocks(stmt.get("body", ()))
        elif kind == "parallel":
            for branch in stmt.get("branches", ()):
                yield from _blocks(branch)


def survey_design(doc: Mapping[str, Any]) -> Survey:
    """Read the proposal targets out of a design document.

    Raises ``ValueError`` when the document lacks the fields the
    protocol guarantees.
    """
    _require(isinstance(doc, Mapping), "design must be an object")
    functions = doc.get("functions")
    _require(isinstance(functions, list) and functions, "design needs functions")
    top = doc.get("top")
    _require(isinstance(top, str), "design needs a top function name")

    names: list[str] = []
    loops: list[LoopSeen] = []
    calls: list[tuple[str, str]] = []
    local_arrays: list[tuple[str, str, int]] = []
    fuse_pairs: list[tuple[str, str, str]] = []
    reorder_nests: list[tuple[str, str]] = []

    for fn in functions:
        _require(isinstance(fn, Mapping), "function entries must be objects")
        name = fn.get("name")
        _require(isinstance(name, str), "functions need names")
        names.append(name)
        body = fn.get("body", [])
        _require(isinstance(body, list), f"function '{name}' body must be a list")

        for stmt in _iter_stmts(body):
            _require(isinstance(stmt, Mapping), f"'{name}': statements must be objects")
            kind = stmt.get("kind")
            if kind == "loop":
                loops.append(
                    LoopSeen(
                        function=name,
                        loop_id=str(stmt.get("id")),
                        trip_count=int(stmt.get("trip_count", 0)),
                        carried=int(stmt.get("carried_dep_latency") or 0),
                        has_closed_form=stmt.get("closed_form") is not None,
                    )
                )
            elif kind == "call":
                calls.append((name, str(stmt.get("id"))))

        for block in _blocks(body):
            for first, second in zip(block, block[1:]):
                if (
                    first.get("kind") == "loop"
                    and second.get("kind") == "loop"
                    and first.get("trip_count") == second.get("trip_count")
                ):
                    fuse_pairs.append((name, str(first["id"]), str(second["id"])))

        for stmt in _iter_stmts(body):
            if stmt.get("kind") != "loop":
                continue
            inner = stmt.get("body", [])
            if (
                len(inner) == 1
                and inner[0].get("kind") == "loop"
                and not stmt.get("carried_dep_latency")
                and not inner[0].get("carried_dep_latency")
            ):
                reorder_nests.append((name, str(stmt["id"])))

        for decl in fn.get("local_arrays") or ():
            local_arrays.append((name, str(decl["name"]), int(decl["length"])))

    global_arrays = [
        (str(decl["name"]), int(decl["length"])) for decl in doc.get("arrays") or ()
    ]

    return Survey(
        top=top,
        functions=tuple(names),
        loops=tuple(loops),
        calls=tuple(calls),
        global_arrays=tuple(global_arrays),
        local_arrays=tuple(local_arrays),
        fuse_pairs=tuple(fuse_pairs),
        reorder_nests=tuple(reorder_nests),
    )
