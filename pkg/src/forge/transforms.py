"""Design transformations and the equivalence filter that gates them.

Every transformation is a small immutable description that rewrites a design
into a new design; none of them mutate their input. Transformations only
promise structural applicability — whether the rewrite preserves behavior is
decided afterwards by :func:`check_equivalence`, which runs both designs on
the original's test vectors. Search layers generate candidates freely and
keep only the ones the interpreter certifies.

Transforms serialize to tagged JSON documents (see each class's ``to_doc``)
so external tools can propose them over the wire::

    {"kind": "apply_pragmas", "function": F, "config": {...}}
    {"kind": "loop_fuse", "function": F, "first": L1, "second": L2}
    {"kind": "loop_reorder", "function": F, "outer": L}
    {"kind": "inline_call", "function": F, "call": C}
    {"kind": "repartition_array", "array": A, "partition": {...} | null}
    {"kind": "closed_form_rewrite", "function": F, "loop": L}

An ``apply_pragmas`` config fully replaces the function's schedule state:
all loop pragmas are cleared first, then the named ones applied, so configs
compose by substitution rather than accumulation::

    {"loops": {L: {"pipeline_ii": int | null, "unroll": int | null}},
     "arrays": {A: {"mode": ..., "factor": ...} | null},
     "inline_calls": bool}
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable, Mapping

from .interp import InterpError, interpret
from .ir import (
    Access,
    ArrayDecl,
    Call,
    Compute,
    Design,
    DesignError,
    Function,
    Loop,
    ParallelRegion,
    Partition,
    Stmt,
    validate_design,
    visible_arrays,
    walk,
)


class TransformError(DesignError):
    """The transformation does not apply to this design."""


# ---------------------------------------------------------------------------
# Rewriting helpers
# ---------------------------------------------------------------------------


def rewrite_sem(sem: Any, scalars: Mapping[str, str], arrays: Mapping[str, str]) -> Any:
    """Rename scalar and array references in a sem action or expression."""
    if sem is None:
        return None

    def expr(e: Any) -> Any:
        if "const" in e:
            return e
        if "var" in e:
            return {"var": scalars.get(e["var"], e["var"])}
        if "load" in e:
            spec = e["load"]
            return {
                "load": {
                    "array": arrays.get(spec["array"], spec["array"]),
                    "index": expr(spec["index"]),
                }
            }
        for op in ("add", "mul", "sub", "floordiv"):
            if op in e:
                return {op: [expr(c) for c in e[op]]}
        raise TransformError(f"malformed expression {e!r}")

    op = sem.get("op")
    if op == "set":
        return {
            "op": "set",
            "dst": scalars.get(sem["dst"], sem["dst"]),
            "expr": expr(sem["expr"]),
        }
    if op == "store":
        return {
            "op": "store",
            "array": arrays.get(sem["array"], sem["array"]),
            "index": expr(sem["index"]),
            "expr": expr(sem["expr"]),
        }
    raise TransformError(f"malformed sem action {sem!r}")


def _rename_stmts(
    stmts: tuple[Stmt, ...],
    rename_id: Callable[[str], str],
    scalars: Mapping[str, str],
    arrays: Mapping[str, str],
) -> tuple[Stmt, ...]:
    out = []
    for s in stmts:
        if isinstance(s, Loop):
            out.append(
                replace(
                    s,
                    id=rename_id(s.id),
                    body=_rename_stmts(s.body, rename_id, scalars, arrays),
                    closed_form=(
                        _rename_stmts(s.closed_form, rename_id, scalars, arrays)
                        if s.closed_form is not None
                        else None
                    ),
                )
            )
        elif isinstance(s, Compute):
            out.append(
                replace(s, id=rename_id(s.id), sem=rewrite_sem(s.sem, scalars, arrays))
            )
        elif isinstance(s, Access):
            out.append(replace(s, id=rename_id(s.id), array=arrays.get(s.array, s.array)))
        elif isinstance(s, Call):
            out.append(replace(s, id=rename_id(s.id)))
        elif isinstance(s, ParallelRegion):
            out.append(
                replace(
                    s,
                    id=rename_id(s.id),
                    branches=tuple(
                        _rename_stmts(br, rename_id, scalars, arrays) for br in s.branches
                    ),
                )
            )
    return tuple(out)


def _splice(
    stmts: tuple[Stmt, ...], target: str, make: Callable[[Stmt], tuple[Stmt, ...]]
) -> tuple[tuple[Stmt, ...], bool]:
    """Replace the statement with id ``target`` by ``make(stmt)``, searching
    loop bodies and parallel branches (not dormant closed forms)."""
    out: list[Stmt] = []
    hit = False
    for s in stmts:
        if s.id == target:
            out.extend(make(s))
            hit = True
            continue
        if isinstance(s, Loop):
            body, found = _splice(s.body, target, make)
            if found:
                s = replace(s, body=body)
                hit = True
        elif isinstance(s, ParallelRegion):
            branches = []
            for br in s.branches:
                new_br, found = _splice(br, target, make)
                branches.append(new_br)
                hit = hit or found
            if hit:
                s = replace(s, branches=tuple(branches))
        out.append(s)
    return tuple(out), hit


def _find_loop(fn: Function, loop_id: str) -> Loop:
    for s in walk(fn.body):
        if isinstance(s, Loop) and s.id == loop_id:
            return s
    raise TransformError(f"{fn.name}: no loop '{loop_id}'")


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ApplyPragmas:
    """Replace a function's schedule directives wholesale.

    Clears pipeline/unroll on every loop of the function (dormant closed
    forms included), then applies the config's per-loop settings, per-array
    partitions, and — when requested — structurally inlines every call in
    the function.
    """

    function: str
    config: Mapping[str, Any]

    def apply(self, d: Design) -> Design:
        if not d.has_function(self.function):
            raise TransformError(f"no function '{self.function}'")
        fn = d.function(self.function)
        loops_cfg = dict(self.config.get("loops", {}))
        known_loops = set()

        def rewrite(stmts: tuple[Stmt, ...]) -> tuple[Stmt, ...]:
            out = []
            for s in stmts:
                if isinstance(s, Loop):
                    known_loops.add(s.id)
                    cfg = loops_cfg.get(s.id, {})
                    s = replace(
                        s,
                        pipeline_ii=cfg.get("pipeline_ii"),
                        unroll=cfg.get("unroll"),
                        body=rewrite(s.body),
                        closed_form=(
                            rewrite(s.closed_form) if s.closed_form is not None else None
                        ),
                    )
                elif isinstance(s, ParallelRegion):
                    s = replace(s, branches=tuple(rewrite(br) for br in s.branches))
                out.append(s)
            return tuple(out)

        fn = replace(fn, body=rewrite(fn.body))
        missing = set(loops_cfg) - known_loops
        if missing:
            raise TransformError(
                f"{self.function}: config names unknown loops {sorted(missing)}"
            )

        d = d.with_function(fn)
        scope = visible_arrays(d, fn)
        for name in sorted(self.config.get("arrays", {})):
            spec = self.config["arrays"][name]
            if name not in scope:
                raise TransformError(f"{self.function}: config names unknown array '{name}'")
            part = Partition(mode=spec["mode"], factor=spec.get("factor")) if spec else None
            local = next((a for a in fn.local_arrays if a.name == name), None)
            if local is not None:
                fn = replace(
                    fn,
                    local_arrays=tuple(
                        replace(a, partition=part) if a.name == name else a
                        for a in fn.local_arrays
                    ),
                )
                d = d.with_function(fn)
            else:
                d = d.with_array(replace(scope[name], partition=part))

        if self.config.get("inline_calls"):
            d = _inline_all_calls(d, self.function)
        validate_design(d)
        return d

    def to_doc(self) -> dict[str, Any]:
        return {"kind": "apply_pragmas", "function": self.function, "config": dict(self.config)}


@dataclass(frozen=True)
class LoopFuse:
    """Merge two adjacent sibling loops with equal trip counts into one.

    The second loop's body is appended to the first's, with its index
    references renamed; carried dependence latency is the max of the pair.
    Closed forms no longer describe the merged loop and are dropped.
    """

    function: str
    first: str
    second: str

    def apply(self, d: Design) -> Design:
        if not d.has_function(self.function):
            raise TransformError(f"no function '{self.function}'")
        fn = d.function(self.function)
        fused: list[Loop] = []

        def fuse_in(stmts: tuple[Stmt, ...]) -> tuple[Stmt, ...]:
            out: list[Stmt] = []
            for s in stmts:
                if isinstance(s, Loop):
                    s = replace(s, body=fuse_in(s.body))
                elif isinstance(s, ParallelRegion):
                    s = replace(s, branches=tuple(fuse_in(br) for br in s.branches))
                if (
                    not fused
                    and out
                    and isinstance(out[-1], Loop)
                    and out[-1].id == self.first
                    and isinstance(s, Loop)
                    and s.id == self.second
                ):
                    a: Loop = out[-1]  # type: ignore[assignment]
                    if a.trip_count != s.trip_count:
                        raise TransformError(
                            f"{self.function}: loops '{self.first}' and '{self.second}' "
                            f"have different trip counts"
                        )
                    moved = _rename_stmts(s.body, lambda i: i, {s.id: a.id}, {})
                    merged = replace(
                        a,
                        body=a.body + moved,
                        carried_dep_latency=max(a.carried_dep_latency, s.carried_dep_latency),
                        reducible=False,
                        closed_form=None,
                    )
                    out[-1] = merged
                    fused.append(merged)
                    continue
                out.append(s)
            return tuple(out)

        fn = replace(fn, body=fuse_in(fn.body))
        if not fused:
            raise TransformError(
                f"{self.function}: '{self.first}' and '{self.second}' are not "
                f"adjacent sibling loops"
            )
        out = d.with_function(fn)
        validate_design(out)
        return out

    def to_doc(self) -> dict[str, Any]:
        return {
            "kind": "loop_fuse",
            "function": self.function,
            "first": self.first,
            "second": self.second,
        }


@dataclass(frozen=True)
class LoopReorder:
    """Swap a perfectly nested loop pair (both free of carried dependences)."""

    function: str
    outer: str

    def apply(self, d: Design) -> Design:
        if not d.has_function(self.function):
            raise TransformError(f"no function '{self.function}'")
        fn = d.function(self.function)
        outer = _find_loop(fn, self.outer)
        if len(outer.body) != 1 or not isinstance(outer.body[0], Loop):
            raise TransformError(f"{self.function}/{self.outer}: not perfectly nested")
        inner = outer.body[0]
        if outer.carried_dep_latency or inner.carried_dep_latency:
            raise TransformError(
                f"{self.function}/{self.outer}: carried dependence forbids reordering"
            )

        def swapped(s: Stmt) -> tuple[Stmt, ...]:
            assert isinstance(s, Loop)
            new_inner = replace(s, body=inner.body, closed_form=None)
            return (replace(inner, body=(new_inner,), closed_form=None),)

        body, hit = _splice(fn.body, self.outer, swapped)
        assert hit
        out = d.with_function(replace(fn, body=body))
        validate_design(out)
        return out

    def to_doc(self) -> dict[str, Any]:
        return {"kind": "loop_reorder", "function": self.function, "outer": self.outer}


@dataclass(frozen=True)
class InlineCall:
    """Splice a callee's body in place of one call site.

    Inlined statement ids and the callee's local arrays get a per-site
    prefix so the result stays well-formed; scalar and global-array names
    are untouched because calls already bind them by reference. The callee
    function itself remains in the design for other callers.
    """

    function: str
    call: str

    def apply(self, d: Design) -> Design:
        if not d.has_function(self.function):
            raise TransformError(f"no function '{self.function}'")
        fn = d.function(self.function)
        moved_locals: list[ArrayDecl] = []

        def inlined(s: Stmt) -> tuple[Stmt, ...]:
            if not isinstance(s, Call):
                raise TransformError(f"{self.function}: '{self.call}' is not a call")
            callee = d.function(s.callee)
            prefix = f"{s.id}__"
            loop_ids = {
                x.id: prefix + x.id
                for x in walk(callee.body)
                if isinstance(x, Loop)
            }
            arrays = {a.name: prefix + a.name for a in callee.local_arrays}
            for a in callee.local_arrays:
                moved_locals.append(replace(a, name=prefix + a.name))
            return _rename_stmts(callee.body, lambda i: prefix + i, loop_ids, arrays)

        body, hit = _splice(fn.body, self.call, inlined)
        if not hit:
            raise TransformError(f"{self.function}: no call site '{self.call}'")
        out = d.with_function(
            replace(fn, body=body, local_arrays=fn.local_arrays + tuple(moved_locals))
        )
        validate_design(out)
        return out

    def to_doc(self) -> dict[str, Any]:
        return {"kind": "inline_call", "function": self.function, "call": self.call}


@dataclass(frozen=True)
class RepartitionArray:
    """Change (or remove) the banking of a global array."""

    array: str
    partition: Partition | None

    def apply(self, d: Design) -> Design:
        decl = d.global_array(self.array)
        if decl is None:
            raise TransformError(f"no global array '{self.array}'")
        out = d.with_array(replace(decl, partition=self.partition))
        validate_design(out)
        return out

    def to_doc(self) -> dict[str, Any]:
        return {
            "kind": "repartition_array",
            "array": self.array,
            "partition": (
                {"mode": self.partition.mode, "factor": self.partition.factor}
                if self.partition
                else None
            ),
        }


@dataclass(frozen=True)
class ClosedFormRewrite:
    """Replace a reducible loop with its closed-form statements."""

    function: str
    loop: str

    def apply(self, d: Design) -> Design:
        if not d.has_function(self.function):
            raise TransformError(f"no function '{self.function}'")
        fn = d.function(self.function)
        target = _find_loop(fn, self.loop)
        if target.closed_form is None:
            raise TransformError(f"{self.function}/{self.loop}: no closed form recorded")

        body, hit = _splice(fn.body, self.loop, lambda s: s.closed_form)  # type: ignore[union-attr]
        assert hit
        out = d.with_function(replace(fn, body=body))
        validate_design(out)
        return out

    def to_doc(self) -> dict[str, Any]:
        return {"kind": "closed_form_rewrite", "function": self.function, "loop": self.loop}


def _inline_all_calls(d: Design, function: str) -> Design:
    """Inline every call in ``function`` to full depth (the call graph is
    acyclic, so this terminates)."""
    while True:
        fn = d.function(function)
        call = next((s for s in walk(fn.body) if isinstance(s, Call)), None)
        if call is None:
            return d
        d = InlineCall(function, call.id).apply(d)


Transform = (
    ApplyPragmas | LoopFuse | LoopReorder | InlineCall | RepartitionArray | ClosedFormRewrite
)

_KINDS: dict[str, Callable[[Mapping[str, Any]], Transform]] = {
    "apply_pragmas": lambda doc: ApplyPragmas(doc["function"], doc["config"]),
    "loop_fuse": lambda doc: LoopFuse(doc["function"], doc["first"], doc["second"]),
    "loop_reorder": lambda doc: LoopReorder(doc["function"], doc["outer"]),
    "inline_call": lambda doc: InlineCall(doc["function"], doc["call"]),
    "repartition_array": lambda doc: RepartitionArray(
        doc["array"],
        (
            Partition(mode=doc["partition"]["mode"], factor=doc["partition"].get("factor"))
            if doc.get("partition")
            else None
        ),
    ),
    "closed_form_rewrite": lambda doc: ClosedFormRewrite(doc["function"], doc["loop"]),
}


def transform_from_doc(doc: Mapping[str, Any]) -> Transform:
    try:
        kind = doc["kind"]
        builder = _KINDS[kind]
    except (KeyError, TypeError):
        raise TransformError(f"unknown transform document {doc!r}") from None
    try:
        return builder(doc)
    except (KeyError, TypeError) as exc:
        raise TransformError(f"malformed '{kind}' document: {exc}") from None


def apply_transforms(d: Design, docs: list[Mapping[str, Any]]) -> Design:
    """Apply a transform sequence left to right, returning the final design."""
    for doc in docs:
        d = transform_from_doc(doc).apply(d)
    return d


# ---------------------------------------------------------------------------
# Equivalence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceReport:
    equivalent: bool
    detail: str = ""


def check_equivalence(original: Design, candidate: Design) -> EquivalenceReport:
    """Run both designs on the original's test vectors and compare every
    output element. A candidate runtime fault counts as non-equivalence.
    """
    for i, tv in enumerate(original.test_vectors):
        expected = interpret(original, tv.inputs)
        try:
            got = interpret(candidate, tv.inputs)
        except InterpError as exc:
            return EquivalenceReport(False, f"vector {i}: candidate fault: {exc}")
        for name in expected:
            if expected[name] == got.get(name):
                continue
            if isinstance(expected[name], list):
                for j, (a, b) in enumerate(zip(expected[name], got.get(name, []))):
                    if a != b:
                        return EquivalenceReport(
                            False, f"vector {i}: '{name}'[{j}] expected {a}, got {b}"
                        )
            return EquivalenceReport(
                False,
                f"vector {i}: '{name}' expected {expected[name]!r}, got {got.get(name)!r}",
            )
    return EquivalenceReport(True)
