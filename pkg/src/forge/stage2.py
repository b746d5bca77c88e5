"""Whole-design refinement by a fleet of seeded exploration agents.

Variant search scores each function with the rest of the design frozen,
and the selector only recombines those per-function menus.  The joint
optimum can still lie off that grid: a banking change may pay for
itself only after an inlining in another function, or budget freed by
one choice may be better spent elsewhere.  This stage instantiates each
selected configuration as a concrete design and hands it to an
exploration agent that mutates the whole design — schedule swaps, loop
restructuring, memory banking, closed-form compute rewrites —
re-scoring and re-checking behavior after every step.

Agents are independent and deterministic: agent ``i`` draws from a
private ``random.Random(base_seed + i)`` and refines the
``((i - 1) mod K) + 1``-th best starting point, so growing the fleet
never perturbs existing trajectories and the union of records can only
improve.  Every record names a design by content hash plus the full
transform list that rebuilds it from the original, has passed the
behavioral filter, and fits the area budget.  The final answer is the
recorded state with the lowest latency (ties: smaller area, earlier
agent, earlier step).

An external explorer can drive an agent's moves over a line-oriented
stdio session: the orchestrator sends ``{"design", "metrics",
"budget", "history"}`` and reads ``{"transforms": [...]}`` or
``{"done": true}``.  A reply that fails to arrive, parse, or make sense
counts as a protocol error and permanently degrades that agent to the
builtin proposers.
"""

from __future__ import annotations

import json
import logging
import queue
import random
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .costmodel import BuiltinEvaluator, Metrics, adapter_timeout
from .ir import (
    Call,
    Design,
    DesignError,
    Function,
    Loop,
    ParallelRegion,
    Stmt,
    design_fingerprint,
    design_to_doc,
    walk,
)
from .stage1 import FunctionVariants
from .transforms import TransformError, apply_transforms, check_equivalence

logger = logging.getLogger(__name__)

PATHS = (
    "pragma_composition",
    "code_restructuring",
    "memory_optimization",
    "compute_optimization",
)
DEFAULT_WEIGHTS = (1, 1, 1, 1)
DEFAULT_MAX_STEPS = 25
ACCEPT_RULES = ("pareto-add", "strict-improve")


# --------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class ExplorationRecord:
    """One valid design found during refinement (step 0 is the seed).

    The design itself is named by content hash; ``transforms_applied``
    is the complete replay recipe from the *original* design, so any
    record can be re-materialized and re-audited independently.
    """

    agent_index: int
    step: int
    seeded_from: int
    path: str
    transforms_applied: tuple[dict[str, Any], ...]
    latency: int
    area: int
    design_ref: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "agent_index": self.agent_index,
            "step": self.step,
            "seeded_from": self.seeded_from,
            "path": self.path,
            "transforms_applied": list(self.transforms_applied),
            "latency": self.latency,
            "area": self.area,
            "design_ref": self.design_ref,
        }


def record_from_doc(doc: Mapping[str, Any]) -> ExplorationRecord:
    return ExplorationRecord(
        agent_index=doc["agent_index"],
        step=doc["step"],
        seeded_from=doc["seeded_from"],
        path=doc["path"],
        transforms_applied=tuple(doc["transforms_applied"]),
        latency=doc["latency"],
        area=doc["area"],
        design_ref=doc["design_ref"],
    )


def materialize(original: Design, record: ExplorationRecord) -> Design:
    """Rebuild a record's design from the original via its replay recipe."""
    built = apply_transforms(original, list(record.transforms_applied))
    ref = design_fingerprint(built)
    if ref != record.design_ref:
        raise DesignError(
            f"replay of agent {record.agent_index} step {record.step} "
            f"produced {ref[:12]}…, record names {record.design_ref[:12]}…"
        )
    return built


@dataclass(frozen=True)
class AgentTrace:
    """Everything one agent did: valid records plus rejection tallies."""

    agent_index: int
    seed: int
    seeded_from: int
    records: tuple[ExplorationRecord, ...]
    attempts: int
    rejections: tuple[tuple[str, int], ...]
    protocol_errors: int = 0

    def to_doc(self) -> dict[str, Any]:
        return {
            "agent_index": self.agent_index,
            "seed": self.seed,
            "seeded_from": self.seeded_from,
            "attempts": self.attempts,
            "rejections": dict(self.rejections),
            "protocol_errors": self.protocol_errors,
            "records": [r.to_doc() for r in self.records],
        }


def merged_records(traces: Sequence[AgentTrace]) -> list[ExplorationRecord]:
    """All records across the fleet in canonical (agent, step) order, so
    downstream choices are independent of scheduling."""
    return sorted(
        (r for t in traces for r in t.records),
        key=lambda r: (r.agent_index, r.step),
    )


def select_final(
    records: Sequence[ExplorationRecord], budget: int
) -> ExplorationRecord:
    """The lowest-latency feasible record; ties fall to smaller area,
    then to the earlier agent and step."""
    feasible = [r for r in records if r.area <= budget]
    if not feasible:
        raise DesignError("no feasible design was recorded")
    return min(feasible, key=lambda r: (r.latency, r.area, r.agent_index, r.step))


# --------------------------------------------------------------------------
# Seeding


def instantiate_solution(
    design: Design, tables: Sequence[FunctionVariants], choice: Sequence[int]
) -> tuple[Design, list[dict[str, Any]]]:
    """Materialize one selector choice by applying each chosen variant's
    transforms, in table order. Returns the design and the transform
    docs that rebuild it."""
    docs: list[dict[str, Any]] = []
    for table, idx in zip(tables, choice):
        if not 0 <= idx < len(table.variants):
            raise DesignError(
                f"function '{table.function}' has no variant index {idx}"
            )
        docs.extend(table.variants[idx].transforms)
    return (apply_transforms(design, docs) if docs else design), docs


# --------------------------------------------------------------------------
# Builtin proposers
#
# Each path enumerates every applicable move on the current design in
# deterministic order; the agent's RNG picks one.  A move is a list of
# transform docs applied as a single step.


def _clear_pragmas_doc(function: str) -> dict[str, Any]:
    return {"kind": "apply_pragmas", "function": function, "config": {"loops": {}}}


def _pragma_swap_moves(
    d: Design, tables: Sequence[FunctionVariants]
) -> list[list[dict[str, Any]]]:
    """Swap one function's schedule for another surviving variant's."""
    moves = []
    for table in tables:
        for variant in table.variants:
            docs = list(variant.transforms)
            moves.append(docs if docs else [_clear_pragmas_doc(table.function)])
    return moves


def _stmt_lists(stmts: Sequence[Stmt]):
    yield stmts
    for s in stmts:
        if isinstance(s, Loop):
            yield from _stmt_lists(s.body)
        elif isinstance(s, ParallelRegion):
            for branch in s.branches:
                yield from _stmt_lists(branch)


def _restructure_moves(d: Design) -> list[list[dict[str, Any]]]:
    """Fusion, interchange, and inlining on every eligible site."""
    moves: list[list[dict[str, Any]]] = []
    for fn in d.functions:
        for siblings in _stmt_lists(fn.body):
            for a, b in zip(siblings, siblings[1:]):
                if (
                    isinstance(a, Loop)
                    and isinstance(b, Loop)
                    and a.trip_count == b.trip_count
                ):
                    moves.append(
                        [
                            {
                                "kind": "loop_fuse",
                                "function": fn.name,
                                "first": a.id,
                                "second": b.id,
                            }
                        ]
                    )
        for s in walk(fn.body):
            if isinstance(s, Loop):
                inner = s.body[0] if len(s.body) == 1 else None
                if (
                    isinstance(inner, Loop)
                    and s.carried_dep_latency == 0
                    and inner.carried_dep_latency == 0
                ):
                    moves.append(
                        [{"kind": "loop_reorder", "function": fn.name, "outer": s.id}]
                    )
            elif isinstance(s, Call):
                moves.append(
                    [{"kind": "inline_call", "function": fn.name, "call": s.id}]
                )
    return moves


_PARTITION_MENU = (None, ("cyclic", 2), ("cyclic", 4), ("block", 2), ("block", 4))


def _partition_options(length: int, current) -> list[dict[str, Any] | None]:
    cur_doc = (
        None if current is None else {"mode": current.mode, "factor": current.factor}
    )
    options: list[dict[str, Any] | None] = []
    for entry in _PARTITION_MENU:
        doc = None if entry is None else {"mode": entry[0], "factor": entry[1]}
        if doc is not None and doc["factor"] > length:
            continue
        if doc != cur_doc:
            options.append(doc)
    complete = {"mode": "complete", "factor": None}
    if length >= 2 and cur_doc != complete:
        options.append(complete)
    return options


def _loop_settings(fn: Function) -> dict[str, dict[str, int]]:
    cfg: dict[str, dict[str, int]] = {}
    for s in walk(fn.body):
        if isinstance(s, Loop):
            entry: dict[str, int] = {}
            if s.pipeline_ii is not None:
                entry["pipeline_ii"] = s.pipeline_ii
            if s.unroll is not None:
                entry["unroll"] = s.unroll
            if entry:
                cfg[s.id] = entry
    return cfg


def _memory_moves(d: Design) -> list[list[dict[str, Any]]]:
    """Rebank shared (global) arrays, plus each function's scratch arrays.

    A global repartition is cross-function consistent by construction:
    there is one declaration, so every user sees the new banking.
    """
    moves: list[list[dict[str, Any]]] = []
    for decl in d.arrays:
        for doc in _partition_options(decl.length, decl.partition):
            moves.append(
                [{"kind": "repartition_array", "array": decl.name, "partition": doc}]
            )
    for fn in d.functions:
        base = _loop_settings(fn)
        for decl in fn.local_arrays:
            for doc in _partition_options(decl.length, decl.partition):
                moves.append(
                    [
                        {
                            "kind": "apply_pragmas",
                            "function": fn.name,
                            "config": {
                                "loops": {k: dict(v) for k, v in base.items()},
                                "arrays": {decl.name: doc},
                            },
                        }
                    ]
                )
    return moves


def _compute_moves(d: Design) -> list[list[dict[str, Any]]]:
    """Apply any available closed-form rewrite."""
    moves = []
    for fn in d.functions:
        for s in walk(fn.body):
            if isinstance(s, Loop) and s.closed_form is not None:
                moves.append(
                    [
                        {
                            "kind": "closed_form_rewrite",
                            "function": fn.name,
                            "loop": s.id,
                        }
                    ]
                )
    return moves


def _builtin_moves(
    path: str, d: Design, tables: Sequence[FunctionVariants]
) -> list[list[dict[str, Any]]]:
    if path == "pragma_composition":
        return _pragma_swap_moves(d, tables)
    if path == "code_restructuring":
        return _restructure_moves(d)
    if path == "memory_optimization":
        return _memory_moves(d)
    return _compute_moves(d)


# --------------------------------------------------------------------------
# External explorer sessions


class ExternalExplorer:
    """Factory for per-agent stdio exploration sessions."""

    def __init__(self, command: str):
        self.command = command

    def open(self) -> "_ExplorerSession | None":
        try:
            proc = subprocess.Popen(
                self.command,
                shell=True,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            logger.warning("explorer %r failed to launch: %s", self.command, exc)
            return None
        return _ExplorerSession(proc, adapter_timeout())


class _ExplorerSession:
    """One live explorer process; replies are read with a hard timeout."""

    def __init__(self, proc: subprocess.Popen, timeout: float):
        self._proc = proc
        self._timeout = timeout
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def step(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        """Send one request line and return the parsed reply.

        Raises TransformError on any protocol failure so the agent can
        count it and degrade.
        """
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise TransformError(f"explorer write failed: {exc}")
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            raise TransformError(f"explorer reply timed out after {self._timeout}s")
        if line is None:
            raise TransformError("explorer closed its output")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TransformError(f"explorer reply is not JSON: {exc}")
        if not isinstance(reply, dict):
            raise TransformError("explorer reply is not an object")
        return reply

    def close(self) -> None:
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            self._proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self._proc.kill()


# --------------------------------------------------------------------------
# The agent loop


@dataclass(frozen=True)
class AgentConfig:
    index: int
    seed: int
    seeded_from: int = 1
    max_steps: int = DEFAULT_MAX_STEPS
    accept_rule: str = "pareto-add"
    path_weights: tuple[int, ...] = DEFAULT_WEIGHTS

    def __post_init__(self) -> None:
        if self.accept_rule not in ACCEPT_RULES:
            raise ValueError(f"unknown accept rule {self.accept_rule!r}")
        if len(self.path_weights) != len(PATHS):
            raise ValueError("one weight per exploration path required")
        if any(w < 0 for w in self.path_weights) or not any(self.path_weights):
            raise ValueError("path weights must be non-negative with one positive")


def _advances(cand: Metrics, cur: Metrics) -> bool:
    return cand.latency < cur.latency or (
        cand.latency == cur.latency and cand.area < cur.area
    )


def run_agent(
    original: Design,
    tables: Sequence[FunctionVariants],
    seed_design: Design,
    seed_docs: Sequence[dict[str, Any]],
    config: AgentConfig,
    *,
    budget: int,
    evaluator: BuiltinEvaluator | None = None,
    explorer: ExternalExplorer | None = None,
) -> AgentTrace:
    """Walk one seeded trajectory, recording every valid design found.

    Under the default ``pareto-add`` rule every candidate that passes
    the behavior check and the budget is recorded (the record set is a
    set of valid designs, deduplicated by content hash), and the
    working design advances on (latency, area) improvement.  Under
    ``strict-improve`` only strictly faster candidates are recorded and
    adopted.
    """
    evaluator = evaluator or BuiltinEvaluator()
    rng = random.Random(config.seed)
    records: list[ExplorationRecord] = []
    rejections: dict[str, int] = {}
    attempts = 0
    protocol_errors = 0
    seen: set[str] = set()

    def reject(reason: str) -> None:
        rejections[reason] = rejections.get(reason, 0) + 1

    def record(step: int, path: str, docs: Sequence[dict[str, Any]],
               metrics: Metrics, ref: str) -> None:
        records.append(
            ExplorationRecord(
                agent_index=config.index,
                step=step,
                seeded_from=config.seeded_from,
                path=path,
                transforms_applied=tuple(docs),
                latency=metrics.latency,
                area=metrics.area,
                design_ref=ref,
            )
        )
        seen.add(ref)

    current = seed_design
    current_docs = list(seed_docs)
    metrics = evaluator.design_metrics(current)
    seed_check = check_equivalence(original, current)
    if not seed_check.equivalent:
        reject(f"seed: behavior changed: {seed_check.detail}")
    elif metrics.area > budget:
        reject(f"seed: area {metrics.area} over budget {budget}")
    else:
        record(0, "seed", current_docs, metrics, design_fingerprint(current))

    session = explorer.open() if explorer is not None else None
    try:
        for step in range(1, config.max_steps + 1):
            path = "external"
            docs: list[dict[str, Any]] | None = None
            if session is not None:
                payload = {
                    "design": design_to_doc(current),
                    "metrics": metrics.to_doc(),
                    "budget": budget,
                    "history": [r.to_doc() for r in records],
                }
                try:
                    reply = session.step(payload)
                    if reply.get("done"):
                        break
                    docs = reply["transforms"]
                    if not isinstance(docs, list):
                        raise TransformError("'transforms' must be a list")
                except (TransformError, KeyError) as exc:
                    protocol_errors += 1
                    docs = None
                    logger.warning(
                        "agent %d: explorer protocol error (%s); "
                        "degrading to builtin proposers",
                        config.index,
                        exc,
                    )
                    session.close()
                    session = None
            if session is None and docs is None:
                path = rng.choices(PATHS, weights=config.path_weights)[0]
                moves = _builtin_moves(path, current, tables)
                if not moves:
                    reject(f"{path}: no applicable move")
                    continue
                docs = rng.choice(moves)
            if not docs:
                continue  # explorer passed on this step

            attempts += 1
            try:
                candidate = apply_transforms(current, docs)
            except (TransformError, DesignError) as exc:
                reject(f"{path}: inapplicable: {exc}")
                continue
            ref = design_fingerprint(candidate)
            if ref in seen:
                reject(f"{path}: already recorded")
                continue
            verdict = check_equivalence(original, candidate)
            if not verdict.equivalent:
                reject(f"{path}: behavior changed: {verdict.detail}")
                continue
            cand_metrics = evaluator.design_metrics(candidate)
            if cand_metrics.area > budget:
                reject(f"{path}: over budget")
                continue
            improved = _advances(cand_metrics, metrics)
            if config.accept_rule == "strict-improve" and not (
                cand_metrics.latency < metrics.latency
            ):
                reject(f"{path}: not a strict improvement")
                continue

            record(step, path, current_docs + list(docs), cand_metrics, ref)
            if config.accept_rule == "strict-improve" or improved:
                current = candidate
                current_docs = current_docs + list(docs)
                metrics = cand_metrics
    finally:
        if session is not None:
            session.close()

    trace = AgentTrace(
        agent_index=config.index,
        seed=config.seed,
        seeded_from=config.seeded_from,
        records=tuple(records),
        attempts=attempts,
        rejections=tuple(sorted(rejections.items())),
        protocol_errors=protocol_errors,
    )
    best = min((r.latency for r in records), default=None)
    logger.info(
        "agent %d: %d records from %d attempts, best latency %s",
        config.index,
        len(records),
        attempts,
        "n/a" if best is None else best,
    )
    return trace


def run_stage2(
    original: Design,
    tables: Sequence[FunctionVariants],
    choices: Sequence[Sequence[int]],
    *,
    agents: int,
    base_seed: int,
    budget: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    accept_rule: str = "pareto-add",
    path_weights: tuple[int, ...] = DEFAULT_WEIGHTS,
    evaluator: BuiltinEvaluator | None = None,
    explorer: ExternalExplorer | None = None,
) -> tuple[AgentTrace, ...]:
    """Run ``agents`` independent trajectories over the selector's top
    choices.

    Agent ``i`` (1-based) is seeded with ``base_seed + i`` and refines
    ``choices[(i - 1) % len(choices)]``, so adding agents never
    perturbs the trajectories of existing ones.
    """
    if not choices:
        raise ValueError("at least one selector choice is required")
    if agents < 1:
        raise ValueError("at least one agent is required")
    configs = []
    for i in range(1, agents + 1):
        rank = (i - 1) % len(choices) + 1
        configs.append(
            AgentConfig(
                index=i,
                seed=base_seed + i,
                seeded_from=rank,
                max_steps=max_steps,
                accept_rule=accept_rule,
                path_weights=path_weights,
            )
        )
    seeds = [
        instantiate_solution(original, tables, choices[c.seeded_from - 1])
        for c in configs
    ]
    with ThreadPoolExecutor(max_workers=min(8, agents)) as pool:
        futures = [
            pool.submit(
                run_agent,
                original,
                tables,
                seed_design,
                seed_docs,
                cfg,
                budget=budget,
                evaluator=evaluator,
                explorer=explorer,
            )
            for cfg, (seed_design, seed_docs) in zip(configs, seeds)
        ]
        return tuple(f.result() for f in futures)
