"""Kernel intermediate representation: types, validation, serialization.

A design is a set of functions over declared arrays, rooted at a top-level
function. The statement forms capture exactly what the optimization passes
manipulate: counted loops, aggregate compute, array traffic, calls, and
parallel regions. Designs are immutable values; every transformation
produces a new design.

Design document schema (``ir_version`` 1)
-----------------------------------------

A design serializes to a single JSON document::

    {
      "ir_version": 1,
      "name": "<identifier>",
      "top": "<function name>",
      "arrays": [ArrayDecl...],
      "functions": [Function...],
      "test_vectors": [TestVector...]
    }

    ArrayDecl: {"name": str, "length": int >= 1, "base_ports": int >= 1,
                "storage_area": int >= 0,
                "partition": null | {"mode": "cyclic"|"block"|"complete",
                                      "factor": int | null}}
    Function:  {"name": str, "params": [[str, "scalar"|"array"]...],
                "local_arrays": [ArrayDecl...], "body": [Stmt...]}

Statements are tagged unions on ``"kind"``::

    loop:     {"id", "trip_count" >= 1, "carried_dep_latency" >= 0,
               "reducible": bool, "closed_form": null | {"stmts": [Stmt...]},
               "pipeline_ii": null | int >= 1, "unroll": null | int >= 1,
               "body": [Stmt...]}
    compute:  {"id", "op_class": "add"|"mul"|"div"|"logic",
               "count" >= 1, "sem": null | Sem}
    access:   {"id", "array", "reads_per_iter" >= 0, "writes_per_iter" >= 0}
    call:     {"id", "callee", "relation_tag"}
    parallel: {"id", "branches": [[Stmt...], [Stmt...], ...]}  (>= 2 branches)

Executable subset
-----------------

Cycle and area estimation need only the aggregate counts above; functional
correctness needs an executable subset. A ``compute`` statement may carry a
``sem`` action interpreted by :mod:`forge.interp`; everything else is inert
metadata to the interpreter. The action grammar covers copies, affine
updates, and reductions::

    Sem  := {"op": "set",   "dst": NAME, "expr": Expr}
          | {"op": "store", "array": NAME, "index": Expr, "expr": Expr}
    Expr := {"const": int} | {"var": NAME}
          | {"load": {"array": NAME, "index": Expr}}
          | {"add": [Expr...]} | {"mul": [Expr...]}
          | {"sub": [Expr, Expr]} | {"floordiv": [Expr, Expr]}

All values are integers. Scalars live in one flat namespace seeded from the
test vector's inputs; a loop binds its own id as the iteration index (0 to
trip_count - 1) while its body runs. Calls bind callee parameters by name
against the caller's scope, so a callee mutates the very scalars and arrays
the caller sees. Local arrays are zero-initialized per activation.

``closed_form`` gives the replacement statements for a reducible loop; its
actions must not reference the loop's own indices since the rewrite splices
them outside the loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Mapping

OP_CLASSES = ("add", "mul", "div", "logic")
PARTITION_MODES = ("cyclic", "block", "complete")
IR_VERSION = 1


class DesignError(Exception):
    """Base class for IR errors."""


class ParseError(DesignError):
    """Malformed design document; message carries the offending path."""


class ValidationError(DesignError):
    """Structurally well-formed document violating a design invariant."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    mode: str
    factor: int | None = None

    def ways(self, length: int) -> int:
        return length if self.mode == "complete" else int(self.factor or 1)


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    length: int
    base_ports: int = 2
    storage_area: int = 0
    partition: Partition | None = None


@dataclass(frozen=True)
class Stmt:
    id: str


@dataclass(frozen=True)
class Loop(Stmt):
    trip_count: int
    body: tuple[Stmt, ...]
    carried_dep_latency: int = 0
    reducible: bool = False
    closed_form: tuple[Stmt, ...] | None = None
    pipeline_ii: int | None = None
    unroll: int | None = None


@dataclass(frozen=True)
class Compute(Stmt):
    op_class: str
    count: int = 1
    sem: Any = None


@dataclass(frozen=True)
class Access(Stmt):
    array: str
    reads_per_iter: int = 0
    writes_per_iter: int = 0


@dataclass(frozen=True)
class Call(Stmt):
    callee: str
    relation_tag: str = ""


@dataclass(frozen=True)
class ParallelRegion(Stmt):
    branches: tuple[tuple[Stmt, ...], ...]


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[tuple[str, str], ...] = ()
    body: tuple[Stmt, ...] = ()
    local_arrays: tuple[ArrayDecl, ...] = ()


@dataclass(frozen=True)
class TestVector:
    inputs: Mapping[str, Any]
    expected_outputs: Mapping[str, Any]


@dataclass(frozen=True)
class Design:
    name: str
    top: str
    functions: tuple[Function, ...]
    arrays: tuple[ArrayDecl, ...] = ()
    test_vectors: tuple[TestVector, ...] = ()

    def function(self, name: str) -> Function:
        for fn in self.functions:
            if fn.name == name:
                return fn
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(fn.name == name for fn in self.functions)

    def global_array(self, name: str) -> ArrayDecl | None:
        for decl in self.arrays:
            if decl.name == name:
                return decl
        return None

    def with_function(self, fn: Function) -> "Design":
        funcs = tuple(fn if f.name == fn.name else f for f in self.functions)
        return replace(self, functions=funcs)

    def with_array(self, decl: ArrayDecl) -> "Design":
        arrays = tuple(decl if a.name == decl.name else a for a in self.arrays)
        return replace(self, arrays=arrays)


def walk(stmts: tuple[Stmt, ...]) -> Iterator[Stmt]:
    """Yield every statement in execution-structure order, descending into
    loop bodies and parallel branches (closed forms excluded)."""
    for s in stmts:
        yield s
        if isinstance(s, Loop):
            yield from walk(s.body)
        elif isinstance(s, ParallelRegion):
            for br in s.branches:
                yield from walk(br)


def visible_arrays(d: Design, fn: Function) -> dict[str, ArrayDecl]:
    """Arrays a function may reference: globals shadowed by its locals."""
    scope = {a.name: a for a in d.arrays}
    scope.update({a.name: a for a in fn.local_arrays})
    return scope


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise ParseError(f"{where}: missing required field '{key}'")
    return doc[key]


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{where}: expected integer, got {value!r}")
    return value


def _parse_partition(doc: Any, where: str) -> Partition | None:
    if doc is None:
        return None
    mode = _require(doc, "mode", where)
    if mode not in PARTITION_MODES:
        raise ParseError(f"{where}: unknown partition mode {mode!r}")
    factor = doc.get("factor")
    if factor is not None:
        factor = _as_int(factor, f"{where}.factor")
    return Partition(mode=mode, factor=factor)


def _parse_array(doc: Mapping[str, Any], where: str) -> ArrayDecl:
    return ArrayDecl(
        name=_require(doc, "name", where),
        length=_as_int(_require(doc, "length", where), f"{where}.length"),
        base_ports=_as_int(doc.get("base_ports", 2), f"{where}.base_ports"),
        storage_area=_as_int(doc.get("storage_area", 0), f"{where}.storage_area"),
        partition=_parse_partition(doc.get("partition"), f"{where}.partition"),
    )


def _parse_stmt(doc: Mapping[str, Any], where: str) -> Stmt:
    kind = _require(doc, "kind", where)
    sid = _require(doc, "id", where)
    at = f"{where}[{sid}]"
    if kind == "loop":
        closed = doc.get("closed_form")
        return Loop(
            id=sid,
            trip_count=_as_int(_require(doc, "trip_count", at), f"{at}.trip_count"),
            carried_dep_latency=_as_int(
                doc.get("carried_dep_latency", 0), f"{at}.carried_dep_latency"
            ),
            reducible=bool(doc.get("reducible", False)),
            closed_form=(
                _parse_body(_require(closed, "stmts", f"{at}.closed_form"), f"{at}.closed_form")
                if closed is not None
                else None
            ),
            pipeline_ii=(
                _as_int(doc["pipeline_ii"], f"{at}.pipeline_ii")
                if doc.get("pipeline_ii") is not None
                else None
            ),
            unroll=(
                _as_int(doc["unroll"], f"{at}.unroll")
                if doc.get("unroll") is not None
                else None
            ),
            body=_parse_body(_require(doc, "body", at), at),
        )
    if kind == "compute":
        op_class = _require(doc, "op_class", at)
        if op_class not in OP_CLASSES:
            raise ParseError(f"{at}: unknown op_class {op_class!r}")
        return Compute(
            id=sid,
            op_class=op_class,
            count=_as_int(doc.get("count", 1), f"{at}.count"),
            sem=doc.get("sem"),
        )
    if kind == "access":
        return Access(
            id=sid,
            array=_require(doc, "array", at),
            reads_per_iter=_as_int(doc.get("reads_per_iter", 0), f"{at}.reads_per_iter"),
            writes_per_iter=_as_int(doc.get("writes_per_iter", 0), f"{at}.writes_per_iter"),
        )
    if kind == "call":
        return Call(
            id=sid,
            callee=_require(doc, "callee", at),
            relation_tag=doc.get("relation_tag", ""),
        )
    if kind == "parallel":
        branches = _require(doc, "branches", at)
        if not isinstance(branches, list):
            raise ParseError(f"{at}.branches: expected list of branches")
        return ParallelRegion(
            id=sid,
            branches=tuple(
                _parse_body(br, f"{at}.branches[{i}]") for i, br in enumerate(branches)
            ),
        )
    raise ParseError(f"{at}: unknown statement kind {kind!r}")


def _parse_body(doc: Any, where: str) -> tuple[Stmt, ...]:
    if not isinstance(doc, list):
        raise ParseError(f"{where}: expected statement list")
    return tuple(_parse_stmt(s, where) for s in doc)


def _parse_function(doc: Mapping[str, Any], where: str) -> Function:
    name = _require(doc, "name", where)
    at = f"{where}[{name}]"
    params = []
    for p in doc.get("params", ()):
        if not (isinstance(p, (list, tuple)) and len(p) == 2 and p[1] in ("scalar", "array")):
            raise ParseError(f"{at}.params: expected [name, 'scalar'|'array'], got {p!r}")
        params.append((p[0], p[1]))
    return Function(
        name=name,
        params=tuple(params),
        local_arrays=tuple(
            _parse_array(a, f"{at}.local_arrays") for a in doc.get("local_arrays", ())
        ),
        body=_parse_body(doc.get("body", []), at),
    )


def load_design(text: str) -> Design:
    """Parse and validate a serialized design document.

    Raises :class:`ParseError` on malformed input and :class:`ValidationError`
    when the document violates a design invariant.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"design document is not valid JSON: {exc}") from None
    return design_from_doc(doc)


def design_from_doc(doc: Mapping[str, Any]) -> Design:
    if not isinstance(doc, Mapping):
        raise ParseError("design document must be a JSON object")
    version = _require(doc, "ir_version", "design")
    if version != IR_VERSION:
        raise ParseError(f"design: unsupported ir_version {version!r}")
    d = Design(
        name=_require(doc, "name", "design"),
        top=_require(doc, "top", "design"),
        arrays=tuple(_parse_array(a, "arrays") for a in doc.get("arrays", ())),
        functions=tuple(
            _parse_function(f, "functions") for f in _require(doc, "functions", "design")
        ),
        test_vectors=tuple(
            TestVector(
                inputs=dict(_require(tv, "inputs", f"test_vectors[{i}]")),
                expected_outputs=dict(_require(tv, "expected_outputs", f"test_vectors[{i}]")),
            )
            for i, tv in enumerate(doc.get("test_vectors", ()))
        ),
    )
    validate_design(d)
    return d


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _partition_doc(p: Partition | None) -> Any:
    return None if p is None else {"mode": p.mode, "factor": p.factor}


def _array_doc(a: ArrayDecl) -> dict[str, Any]:
    return {
        "name": a.name,
        "length": a.length,
        "base_ports": a.base_ports,
        "storage_area": a.storage_area,
        "partition": _partition_doc(a.partition),
    }


def _stmt_doc(s: Stmt) -> dict[str, Any]:
    if isinstance(s, Loop):
        return {
            "kind": "loop",
            "id": s.id,
            "trip_count": s.trip_count,
            "carried_dep_latency": s.carried_dep_latency,
            "reducible": s.reducible,
            "closed_form": (
                {"stmts": [_stmt_doc(x) for x in s.closed_form]}
                if s.closed_form is not None
                else None
            ),
            "pipeline_ii": s.pipeline_ii,
            "unroll": s.unroll,
            "body": [_stmt_doc(x) for x in s.body],
        }
    if isinstance(s, Compute):
        return {"kind": "compute", "id": s.id, "op_class": s.op_class, "count": s.count, "sem": s.sem}
    if isinstance(s, Access):
        return {
            "kind": "access",
            "id": s.id,
            "array": s.array,
            "reads_per_iter": s.reads_per_iter,
            "writes_per_iter": s.writes_per_iter,
        }
    if isinstance(s, Call):
        return {"kind": "call", "id": s.id, "callee": s.callee, "relation_tag": s.relation_tag}
    if isinstance(s, ParallelRegion):
        return {
            "kind": "parallel",
            "id": s.id,
            "branches": [[_stmt_doc(x) for x in br] for br in s.branches],
        }
    raise TypeError(f"unknown statement type {type(s).__name__}")


def design_to_doc(d: Design) -> dict[str, Any]:
    return {
        "ir_version": IR_VERSION,
        "name": d.name,
        "top": d.top,
        "arrays": [_array_doc(a) for a in d.arrays],
        "functions": [
            {
                "name": f.name,
                "params": [list(p) for p in f.params],
                "local_arrays": [_array_doc(a) for a in f.local_arrays],
                "body": [_stmt_doc(s) for s in f.body],
            }
            for f in d.functions
        ],
        "test_vectors": [
            {"inputs": dict(tv.inputs), "expected_outputs": dict(tv.expected_outputs)}
            for tv in d.test_vectors
        ],
    }


def serialize(d: Design, indent: int | None = None) -> str:
    return json.dumps(design_to_doc(d), indent=indent, sort_keys=True)


def canonical_json(doc: Any) -> str:
    """Canonical rendering used for hashing and structural comparison."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def design_fingerprint(d: Design) -> str:
    import hashlib

    return hashlib.sha256(canonical_json(design_to_doc(d)).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def sem_references(sem: Any) -> tuple[set[str], set[str]]:
    """Collect (scalar names, array names) referenced by a sem action."""
    scalars: set[str] = set()
    arrays: set[str] = set()

    def expr(e: Any) -> None:
        if not isinstance(e, Mapping):
            raise ValidationError(f"malformed expression {e!r}")
        if "const" in e:
            return
        if "var" in e:
            scalars.add(e["var"])
            return
        if "load" in e:
            arrays.add(e["load"]["array"])
            expr(e["load"]["index"])
            return
        for op in ("add", "mul", "sub", "floordiv"):
            if op in e:
                for child in e[op]:
                    expr(child)
                return
        raise ValidationError(f"malformed expression {e!r}")

    if sem is None:
        return scalars, arrays
    op = sem.get("op") if isinstance(sem, Mapping) else None
    if op == "set":
        scalars.add(sem["dst"])
        expr(sem["expr"])
    elif op == "store":
        arrays.add(sem["array"])
        expr(sem["index"])
        expr(sem["expr"])
    else:
        raise ValidationError(f"malformed sem action {sem!r}")
    return scalars, arrays


def _check_stmts(
    d: Design,
    fn: Function,
    stmts: tuple[Stmt, ...],
    seen_ids: set[str],
    arrays: Mapping[str, ArrayDecl],
    enclosing_loops: tuple[str, ...],
) -> None:
    for s in stmts:
        if s.id in seen_ids:
            raise ValidationError(f"{fn.name}: duplicate statement id '{s.id}'")
        seen_ids.add(s.id)
        if isinstance(s, Loop):
            if s.trip_count < 1:
                raise ValidationError(f"{fn.name}/{s.id}: trip_count must be >= 1")
            if s.carried_dep_latency < 0:
                raise ValidationError(f"{fn.name}/{s.id}: carried_dep_latency must be >= 0")
            if s.closed_form is not None and not s.reducible:
                raise ValidationError(
                    f"{fn.name}/{s.id}: closed_form is only allowed on reducible loops"
                )
            if s.pipeline_ii is not None and s.pipeline_ii < 1:
                raise ValidationError(f"{fn.name}/{s.id}: pipeline II must be >= 1")
            if s.unroll is not None and (s.unroll < 1 or s.trip_count % s.unroll != 0):
                raise ValidationError(
                    f"{fn.name}/{s.id}: unroll factor must divide trip_count"
                )
            _check_stmts(d, fn, s.body, seen_ids, arrays, enclosing_loops + (s.id,))
            if s.closed_form is not None:
                # Splices outside the loop on rewrite: ids must stay unique and
                # the replacement may not read the dissolved indices.
                _check_stmts(d, fn, s.closed_form, seen_ids, arrays, enclosing_loops)
                for c in walk(s.closed_form):
                    if isinstance(c, Compute) and c.sem is not None:
                        refs, _ = sem_references(c.sem)
                        if s.id in refs:
                            raise ValidationError(
                                f"{fn.name}/{s.id}: closed_form references the loop index"
                            )
        elif isinstance(s, Compute):
            if s.op_class not in OP_CLASSES:
                raise ValidationError(f"{fn.name}/{s.id}: unknown op_class {s.op_class!r}")
            if s.count < 1:
                raise ValidationError(f"{fn.name}/{s.id}: count must be >= 1")
            _, sem_arrays = sem_references(s.sem)
            for name in sem_arrays:
                if name not in arrays:
                    raise ValidationError(
                        f"{fn.name}/{s.id}: unresolved array reference '{name}'"
                    )
        elif isinstance(s, Access):
            if s.array not in arrays:
                raise ValidationError(f"{fn.name}/{s.id}: unresolved array reference '{s.array}'")
            if s.reads_per_iter < 0 or s.writes_per_iter < 0:
                raise ValidationError(f"{fn.name}/{s.id}: access counts must be >= 0")
        elif isinstance(s, Call):
            if not d.has_function(s.callee):
                raise ValidationError(f"{fn.name}/{s.id}: call targets missing function '{s.callee}'")
        elif isinstance(s, ParallelRegion):
            if len(s.branches) < 2:
                raise ValidationError(f"{fn.name}/{s.id}: parallel region needs >= 2 branches")
            for br in s.branches:
                _check_stmts(d, fn, br, seen_ids, arrays, enclosing_loops)


def _check_array(a: ArrayDecl, where: str) -> None:
    if a.length < 1:
        raise ValidationError(f"{where}/{a.name}: length must be >= 1")
    if a.base_ports < 1:
        raise ValidationError(f"{where}/{a.name}: base_ports must be >= 1")
    if a.storage_area < 0:
        raise ValidationError(f"{where}/{a.name}: storage_area must be >= 0")
    if a.partition is not None:
        p = a.partition
        if p.mode != "complete" and (p.factor is None or p.factor < 2):
            raise ValidationError(
                f"{where}/{a.name}: partition factor must be >= 2 unless complete"
            )


def validate_design(d: Design) -> None:
    """Check every design invariant, raising ValidationError on the first
    violation (the message names the invariant)."""
    names = [f.name for f in d.functions]
    if len(set(names)) != len(names):
        raise ValidationError("function names must be unique")
    if not d.has_function(d.top):
        raise ValidationError(f"top function '{d.top}' does not exist")
    global_names = [a.name for a in d.arrays]
    if len(set(global_names)) != len(global_names):
        raise ValidationError("global array names must be unique")
    for a in d.arrays:
        _check_array(a, "arrays")

    for fn in d.functions:
        local_names = [a.name for a in fn.local_arrays]
        if len(set(local_names)) != len(local_names):
            raise ValidationError(f"{fn.name}: local array names must be unique")
        for a in fn.local_arrays:
            _check_array(a, fn.name)
        for pname, pkind in fn.params:
            if pkind == "array" and d.global_array(pname) is None:
                raise ValidationError(
                    f"{fn.name}: array parameter '{pname}' does not name a global array"
                )
        _check_stmts(d, fn, fn.body, set(), visible_arrays(d, fn), ())

    top = d.function(d.top)
    param_kinds = dict(top.params)
    for i, tv in enumerate(d.test_vectors):
        for name, value in tv.inputs.items():
            if name not in param_kinds:
                raise ValidationError(f"test_vectors[{i}]: '{name}' is not a top parameter")
            _check_vector_value(d, name, param_kinds[name], value, i)
        for name, value in tv.expected_outputs.items():
            if name not in param_kinds:
                raise ValidationError(f"test_vectors[{i}]: '{name}' is not a top parameter")
            _check_vector_value(d, name, param_kinds[name], value, i)


def _check_vector_value(d: Design, name: str, kind: str, value: Any, i: int) -> None:
    if kind == "scalar":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"test_vectors[{i}]: scalar '{name}' must be an integer")
    else:
        decl = d.global_array(name)
        assert decl is not None  # param validation guarantees it
        if not isinstance(value, list) or len(value) != decl.length:
            raise ValidationError(
                f"test_vectors[{i}]: array '{name}' must have length {decl.length}"
            )
