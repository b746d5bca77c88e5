"""Per-function variant search: generate, verify, measure, deduplicate.

For every function the global selector will choose over, this stage builds
a ladder of scheduling variants, filters out any whose rewritten design no
longer reproduces the original's test vectors, and measures the survivors.
The baseline (no transforms) always survives, so downstream selection is
never left without a choice.

The builtin ladder:

    v0  baseline, untouched
    v1  conservative: pipeline the outermost loops at II=4
    v2  pipeline every loop at II=1
    v3  pipeline every loop at II=2
    v4  v2 plus modest unrolling of innermost loops (x2 when the trip count
        is even, full when it is at most 4, none when odd and larger)
    v5  v2 plus full unrolling of innermost loops
    v6  restructure: completely partition the function's most contended
        array, inline all of its calls, and apply recorded closed forms

An external optimizer can replace the ladder: it receives
``{"design", "function", "max_variants"}`` on stdin and answers with one
line ``{"variants": [[transform-doc, ...], ...]}``. If it fails, the
builtin ladder is used and a warning logged.

A variant's cost attribution: its latency is one activation of the
function; its area is the function subtree's own area plus however much
the variant changed global-array banking. Summing attributed areas over
all functions plus the selection-independent remainder reproduces the full
design area for the baseline combination.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

from .callgraph import subtree_functions
from .costmodel import (
    AdapterError,
    BuiltinEvaluator,
    CostModel,
    Evaluator,
    Metrics,
    global_partition_extra,
    ports,
    run_adapter_once,
)
from .ilp.model import ModelNode, flatten_model, model_leaves
from .ilp.solver import Problem
from .ir import (
    Access,
    Call,
    Design,
    Loop,
    Stmt,
    ValidationError,
    design_fingerprint,
    visible_arrays,
    walk,
)
from .transforms import TransformError, apply_transforms, check_equivalence

logger = logging.getLogger(__name__)

MAX_VARIANTS = 7


@dataclass(frozen=True)
class Variant:
    label: str
    transforms: tuple[Mapping[str, Any], ...]
    metrics: Metrics
    design_ref: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "transforms": [dict(t) for t in self.transforms],
            "metrics": self.metrics.to_doc(),
            "design_ref": self.design_ref,
        }


@dataclass(frozen=True)
class FunctionVariants:
    function: str
    variants: tuple[Variant, ...]
    rejected: tuple[tuple[str, str], ...] = ()  # (label, reason)

    def to_doc(self) -> dict[str, Any]:
        return {
            "function": self.function,
            "variants": [v.to_doc() for v in self.variants],
            "rejected": [list(r) for r in self.rejected],
        }


# ---------------------------------------------------------------------------
# Builtin variant ladder
# ---------------------------------------------------------------------------


def _loops_of(fn_body: tuple[Stmt, ...]) -> list[Loop]:
    return [s for s in walk(fn_body) if isinstance(s, Loop)]


def _outermost_loops(body: tuple[Stmt, ...]) -> list[Loop]:
    """Loops not nested inside another loop (parallel branches included)."""
    from .ir import ParallelRegion

    out: list[Loop] = []
    for s in body:
        if isinstance(s, Loop):
            out.append(s)
        elif isinstance(s, ParallelRegion):
            for br in s.branches:
                out.extend(_outermost_loops(br))
    return out


def _innermost_loops(body: tuple[Stmt, ...]) -> list[Loop]:
    return [lp for lp in _loops_of(body) if not _loops_of(lp.body)]


def _pragma_variant(function: str, loops_cfg: dict, arrays_cfg: dict | None = None,
                    inline: bool = False) -> list[dict]:
    config: dict[str, Any] = {"loops": loops_cfg}
    if arrays_cfg:
        config["arrays"] = arrays_cfg
    if inline:
        config["inline_calls"] = True
    return [{"kind": "apply_pragmas", "function": function, "config": config}]


def _most_contended_array(d: Design, function: str) -> str | None:
    """The array with the highest access traffic per port in the function's
    own body; declaration order breaks ties."""
    fn = d.function(function)
    scope = visible_arrays(d, fn)
    traffic: dict[str, int] = {}

    def visit(body: tuple[Stmt, ...], weight: int) -> None:
        from .ir import ParallelRegion

        for s in body:
            if isinstance(s, Access):
                traffic[s.array] = traffic.get(s.array, 0) + weight * (
                    s.reads_per_iter + s.writes_per_iter
                )
            elif isinstance(s, Loop):
                visit(s.body, weight * s.trip_count)
            elif isinstance(s, ParallelRegion):
                for br in s.branches:
                    visit(br, weight)

    visit(fn.body, 1)
    if not traffic:
        return None
    ordered = [a.name for a in d.arrays] + [a.name for a in fn.local_arrays]
    best, best_score = None, Fraction(-1)
    for name in ordered:
        if name not in traffic:
            continue
        score = Fraction(traffic[name], ports(scope[name]))
        if score > best_score:
            best, best_score = name, score
    return best


def generate_builtin_variants(d: Design, function: str) -> list[tuple[str, list[dict]]]:
    """The (label, transform docs) ladder for one function."""
    fn = d.function(function)
    loops = _loops_of(fn.body)
    out: list[tuple[str, list[dict]]] = [("v0", [])]

    outer = _outermost_loops(fn.body)
    out.append(
        ("v1", _pragma_variant(function, {lp.id: {"pipeline_ii": 4} for lp in outer}))
    )
    out.append(
        ("v2", _pragma_variant(function, {lp.id: {"pipeline_ii": 1} for lp in loops}))
    )
    out.append(
        ("v3", _pragma_variant(function, {lp.id: {"pipeline_ii": 2} for lp in loops}))
    )

    inner = {lp.id for lp in _innermost_loops(fn.body)}
    v4_cfg: dict[str, dict] = {}
    v5_cfg: dict[str, dict] = {}
    for lp in loops:
        v4_cfg[lp.id] = {"pipeline_ii": 1}
        v5_cfg[lp.id] = {"pipeline_ii": 1}
        if lp.id in inner and lp.trip_count > 1:
            if lp.trip_count <= 4:
                v4_cfg[lp.id]["unroll"] = lp.trip_count
            elif lp.trip_count % 2 == 0:
                v4_cfg[lp.id]["unroll"] = 2
            v5_cfg[lp.id]["unroll"] = lp.trip_count
    out.append(("v4", _pragma_variant(function, v4_cfg)))
    out.append(("v5", _pragma_variant(function, v5_cfg)))

    # v6: restructure. Complete-partition the hottest array, inline calls,
    # and replace reducible loops that carry closed forms.
    v6: list[dict] = []
    target = _most_contended_array(d, function)
    arrays_cfg = None
    repartition: list[dict] = []
    if target is not None:
        spec = {"mode": "complete", "factor": None}
        if any(a.name == target for a in fn.local_arrays):
            arrays_cfg = {target: spec}
        else:
            repartition = [
                {"kind": "repartition_array", "array": target, "partition": spec}
            ]
    has_calls = any(isinstance(s, Call) for s in walk(fn.body))
    v6 += _pragma_variant(function, {}, arrays_cfg, inline=has_calls)
    v6 += repartition
    for lp in loops:
        if lp.closed_form is not None:
            v6.append({"kind": "closed_form_rewrite", "function": function, "loop": lp.id})
    out.append(("v6", v6))
    return out[:MAX_VARIANTS]


# ---------------------------------------------------------------------------
# External optimizer
# ---------------------------------------------------------------------------


class ExternalOptimizer:
    """One-shot variant proposer: design + function in, transform lists out."""

    def __init__(self, command: str):
        self.command = command

    def propose(self, d: Design, function: str, max_variants: int) -> list[list[dict]]:
        from .ir import design_to_doc

        payload = {
            "design": design_to_doc(d),
            "function": function,
            "max_variants": max_variants,
        }
        line = run_adapter_once(self.command, payload)
        try:
            doc = json.loads(line)
            variants = doc["variants"]
            if not isinstance(variants, list) or not all(
                isinstance(v, list) for v in variants
            ):
                raise TypeError("variants must be a list of transform lists")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise AdapterError(
                f"optimizer '{self.command}' produced bad variants: {exc}"
            ) from None
        return variants[:max_variants]


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------


def variant_area(
    applied: Design, original: Design, function: str, evaluator: Evaluator
) -> int:
    """Subtree own area plus the variant's change to global banking."""
    base = evaluator.function_metrics(applied, function).area
    return base + global_partition_extra(applied) - global_partition_extra(original)


def search_function(
    d: Design,
    function: str,
    evaluator: Evaluator | None = None,
    optimizer: ExternalOptimizer | None = None,
    max_variants: int = MAX_VARIANTS,
) -> FunctionVariants:
    """Generate, filter, and measure the variant ladder for one function."""
    evaluator = evaluator or BuiltinEvaluator()
    proposals: list[tuple[str, list[dict]]]
    if optimizer is not None:
        try:
            external = optimizer.propose(d, function, max_variants)
            proposals = [("v0", [])] + [
                (f"x{i}", docs) for i, docs in enumerate(external)
            ]
        except AdapterError as exc:
            logger.warning("external optimizer failed (%s); using builtin ladder", exc)
            proposals = generate_builtin_variants(d, function)
    else:
        proposals = generate_builtin_variants(d, function)

    survivors: list[Variant] = []
    rejected: list[tuple[str, str]] = []
    seen: dict[str, str] = {}
    for label, docs in proposals[:max_variants]:
        try:
            applied = apply_transforms(d, docs)
        except (TransformError, ValidationError) as exc:
            rejected.append((label, f"inapplicable: {exc}"))
            continue
        report = check_equivalence(d, applied)
        if not report.equivalent:
            rejected.append((label, report.detail))
            continue
        ref = design_fingerprint(applied)
        if ref in seen:
            rejected.append((label, f"duplicate of {seen[ref]}"))
            continue
        seen[ref] = label
        metrics = Metrics(
            latency=evaluator.function_metrics(applied, function).latency,
            area=variant_area(applied, d, function, evaluator),
        )
        survivors.append(Variant(label, tuple(docs), metrics, ref))
    return FunctionVariants(function, tuple(survivors), tuple(rejected))


def search_all(
    d: Design,
    functions: Sequence[str],
    evaluator: Evaluator | None = None,
    optimizer: ExternalOptimizer | None = None,
    max_variants: int = MAX_VARIANTS,
    parallelism: int | None = None,
) -> tuple[FunctionVariants, ...]:
    """Run the per-function search concurrently; result order follows the
    input order regardless of completion order."""
    evaluator = evaluator or BuiltinEvaluator()
    workers = parallelism or min(8, max(1, len(functions)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(search_function, d, f, evaluator, optimizer, max_variants)
            for f in functions
        ]
        return tuple(f.result() for f in futures)


# ---------------------------------------------------------------------------
# Bridging to the selection problem
# ---------------------------------------------------------------------------


def selection_independent_area(d: Design, leaves: Sequence[str]) -> int:
    """Design area outside the selectable function subtrees.

    The subtrees must be disjoint: a helper shared between two selectable
    functions would be double-counted, so it is an error.
    """
    owner: dict[str, str] = {}
    for leaf in leaves:
        for fname in subtree_functions(d, leaf):
            if fname in owner:
                raise ValidationError(
                    f"function '{fname}' is shared by selectable subtrees "
                    f"'{owner[fname]}' and '{leaf}'; subtrees must be disjoint"
                )
            owner[fname] = leaf
    model = CostModel(d)
    return model.design_area() - sum(model.subtree_own_area(leaf) for leaf in leaves)


def make_selection_problem(
    d: Design,
    model_node: ModelNode,
    tables: Sequence[FunctionVariants],
    budget: int,
) -> tuple[Problem, int]:
    """Assemble the solver instance; returns it plus the constant area that
    was subtracted from the budget."""
    leaves = model_leaves(model_node)
    by_name = {t.function: t for t in tables}
    missing = [f for f in leaves if f not in by_name]
    if missing:
        raise ValidationError(f"no variant table for functions: {', '.join(missing)}")
    const = selection_independent_area(d, leaves)
    problem = Problem(
        functions=leaves,
        variant_latencies=tuple(
            tuple(v.metrics.latency for v in by_name[f].variants) for f in leaves
        ),
        variant_areas=tuple(
            tuple(v.metrics.area for v in by_name[f].variants) for f in leaves
        ),
        program=flatten_model(model_node, leaves),
        budget=budget - const,
    )
    return problem, const
