"""Seeded proposal generator over the four exploration categories.

Each proposal is one transform batch (a list of transform documents in
the orchestrator's tagged-union schema) referencing only identifiers
the survey found in the received design.  The generator is a pure
function of (survey, rng state), which is what makes whole sessions
reproducible from a seed.
"""

from __future__ import annotations

import random
from typing import Any

from .survey import Survey

CATEGORIES = (
    "pragma_composition",
    "code_restructuring",
    "memory_optimization",
    "compute_optimization",
)

_PIPELINE_CHOICES = (None, 1, 2, 4)


def _unroll_choices(trip_count: int) -> tuple[int | None, ...]:
    """Legal unroll factors: divisors of the trip count (full unroll
    included), or no unroll at all."""
    return (None,) + tuple(
        f for f in range(2, trip_count + 1) if trip_count % f == 0
    )


def _partition_menu(length: int) -> tuple[dict[str, Any] | None, ...]:
    menu: list[dict[str, Any] | None] = [None, {"mode": "complete"}]
    for mode in ("cyclic", "block"):
        for factor in (2, 4):
            if factor < length and length % factor == 0:
                menu.append({"mode": mode, "factor": factor})
    return tuple(menu)


def _propose_pragmas(survey: Survey, rng: random.Random) -> list[dict[str, Any]]:
    functions = sorted({l.function for l in survey.loops})
    function = rng.choice(functions)
    loops_cfg: dict[str, dict[str, int]] = {}
    for loop in survey.loops_of(function):
        settings: dict[str, int] = {}
        ii = rng.choice(_PIPELINE_CHOICES)
        if ii is not None:
            settings["pipeline_ii"] = ii
        unroll = rng.choice(_unroll_choices(loop.trip_count))
        if unroll is not None:
            settings["unroll"] = unroll
        if settings:
            loops_cfg[loop.loop_id] = settings
    return [
        {"kind": "apply_pragmas", "function": function, "config": {"loops": loops_cfg}}
    ]


def _propose_restructuring(survey: Survey, rng: random.Random) -> list[dict[str, Any]]:
    options: list[dict[str, Any]] = []
    for function, first, second in survey.fuse_pairs:
        options.append(
            {"kind": "loop_fuse", "function": function, "first": first, "second": second}
        )
    for function, outer in survey.reorder_nests:
        options.append({"kind": "loop_reorder", "function": function, "outer": outer})
    for function, call_id in survey.calls:
        options.append({"kind": "inline_call", "function": function, "call": call_id})
    return [rng.choice(options)]


def _propose_memory(survey: Survey, rng: random.Random) -> list[dict[str, Any]]:
    targets: list[tuple[str, str | None, int]] = [
        (name, None, length) for name, length in survey.global_arrays
    ] + [(name, owner, length) for owner, name, length in survey.local_arrays]
    name, owner, length = rng.choice(targets)
    partition = rng.choice(_partition_menu(length))
    if owner is None:
        return [{"kind": "repartition_array", "array": name, "partition": partition}]
    # Local arrays are rebanked through their owning function's config.
    return [
        {
            "kind": "apply_pragmas",
            "function": owner,
            "config": {"arrays": {name: partition}},
        }
    ]


def _propose_compute(survey: Survey, rng: random.Random) -> list[dict[str, Any]]:
    function, loop_id = rng.choice(survey.closed_form_loops())
    return [{"kind": "closed_form_rewrite", "function": function, "loop": loop_id}]


_PROPOSERS = {
    "pragma_composition": _propose_pragmas,
    "code_restructuring": _propose_restructuring,
    "memory_optimization": _propose_memory,
    "compute_optimization": _propose_compute,
}


def eligible_categories(survey: Survey) -> tuple[str, ...]:
    out = []
    if survey.loops:
        out.append("pragma_composition")
    if survey.fuse_pairs or survey.reorder_nests or survey.calls:
        out.append("code_restructuring")
    if survey.global_arrays or survey.local_arrays:
        out.append("memory_optimization")
    if survey.closed_form_loops():
        out.append("compute_optimization")
    return tuple(out)


def propose(category: str, survey: Survey, rng: random.Random) -> list[dict[str, Any]]:
    """One transform batch from ``category``; the category must be
    eligible for this survey."""
    return _PROPOSERS[category](survey, rng)
