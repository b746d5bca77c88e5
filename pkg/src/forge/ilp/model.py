"""Latency composition model: how per-function latencies combine.

A design's overall latency is a closed-form expression over the latencies
of the top function's direct callees — summed along sequential chains,
maximized across parallel branches, and multiplied through loop nests. The
variant selector optimizes over that expression without re-estimating the
whole design per combination.

Trees are built from four node kinds::

    Leaf(fn)          the latency of one activation of fn
    Scale(k, child)   k * child, k a positive int or Fraction
    Sum(children)     sequential composition
    Max(children)     parallel composition

For the search kernels a tree is *flattened* into a postfix program with
integer coefficients. Scaling distributes over both Sum and Max (the
multipliers are positive), so every Scale can be pushed down onto the
leaves; clearing denominators by the least common multiple ``P`` of the
accumulated per-leaf multipliers then leaves integers. The program computes
``P x`` the modeled latency, and callers divide by ``P`` exactly at the end.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Mapping, Union

from ..callgraph import top_leaves
from ..ir import Call, Design, Loop, ParallelRegion, Stmt, ValidationError

ModelNode = Union["Leaf", "Scale", "Sum", "Max"]

# Postfix opcodes.
OP_PUSH = 0  # operands: (variable index, integer coefficient)
OP_SUM = 1  # operands: (argument count, 0)
OP_MAX = 2  # operands: (argument count, 0)


@dataclass(frozen=True)
class Leaf:
    fn: str


@dataclass(frozen=True)
class Scale:
    k: Fraction
    child: ModelNode

    def __post_init__(self):
        object.__setattr__(self, "k", Fraction(self.k))
        if self.k <= 0:
            raise ValidationError(f"scale multiplier must be positive, got {self.k}")


@dataclass(frozen=True)
class Sum:
    children: tuple[ModelNode, ...]


@dataclass(frozen=True)
class Max:
    children: tuple[ModelNode, ...]


def model_leaves(node: ModelNode) -> tuple[str, ...]:
    """Leaf function names in first-appearance order."""
    out: list[str] = []

    def visit(n: ModelNode) -> None:
        if isinstance(n, Leaf):
            if n.fn not in out:
                out.append(n.fn)
        elif isinstance(n, Scale):
            visit(n.child)
        else:
            for c in n.children:
                visit(c)

    visit(node)
    return tuple(out)


def eval_model(node: ModelNode, latencies: Mapping[str, int]) -> int | Fraction:
    """Evaluate the tree exactly; integral results come back as int."""

    def visit(n: ModelNode) -> Fraction:
        if isinstance(n, Leaf):
            return Fraction(latencies[n.fn])
        if isinstance(n, Scale):
            return n.k * visit(n.child)
        if isinstance(n, Sum):
            return sum((visit(c) for c in n.children), Fraction(0))
        if isinstance(n, Max):
            return max(visit(c) for c in n.children)
        raise TypeError(type(n).__name__)

    value = visit(node)
    return int(value) if value.denominator == 1 else value


# ---------------------------------------------------------------------------
# Building from a design
# ---------------------------------------------------------------------------


def build_latency_model(design: Design) -> ModelNode:
    """Derive the composition model from the top function's body.

    Call statements become leaves; loops scale their bodies by trip count;
    parallel regions take the max across branches; statements without any
    call underneath contribute a constant the selector cannot change and
    drop out. Raises if the top makes no calls at all (there is nothing to
    select over).
    """
    top = design.function(design.top)
    node = _seq_model(top.body)
    if node is None:
        raise ValidationError(
            f"top function '{design.top}' calls nothing; no selection model exists"
        )
    return node


def _seq_model(stmts: tuple[Stmt, ...]) -> ModelNode | None:
    parts: list[ModelNode] = []
    for s in stmts:
        node = _stmt_model(s)
        if node is not None:
            parts.append(node)
    if not parts:
        return None
    return _make_sum(parts)


def _stmt_model(s: Stmt) -> ModelNode | None:
    if isinstance(s, Call):
        return Leaf(s.callee)
    if isinstance(s, Loop):
        child = _seq_model(s.body)
        if child is None:
            return None
        return _scale(s.trip_count, child)
    if isinstance(s, ParallelRegion):
        branches = [m for m in (_seq_model(br) for br in s.branches) if m is not None]
        if not branches:
            return None
        if len(branches) == 1:
            return branches[0]
        return Max(tuple(branches))
    return None


def _scale(k, node: ModelNode) -> ModelNode:
    k = Fraction(k)
    if k == 1:
        return node
    if isinstance(node, Scale):
        return Scale(k * node.k, node.child)
    return Scale(k, node)


def _make_sum(parts: list[ModelNode]) -> ModelNode:
    """Sum with repeated-leaf merging: n occurrences of the same function
    collapse to one scaled term, keeping first-appearance order."""
    merged: list[ModelNode] = []
    coef: dict[str, Fraction] = {}
    slot: dict[str, int] = {}
    for p in parts:
        base, k = (p.child, p.k) if isinstance(p, Scale) else (p, Fraction(1))
        if isinstance(base, Leaf):
            if base.fn in slot:
                coef[base.fn] += k
                continue
            slot[base.fn] = len(merged)
            coef[base.fn] = k
            merged.append(base)  # placeholder; rescaled below
        else:
            merged.append(p)
    out: list[ModelNode] = []
    for i, p in enumerate(merged):
        if isinstance(p, Leaf) and slot.get(p.fn) == i:
            out.append(_scale(coef[p.fn], p))
        else:
            out.append(p)
    if len(out) == 1:
        return out[0]
    return Sum(tuple(out))


# ---------------------------------------------------------------------------
# Flattening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Program:
    """Postfix program computing ``scale * modeled latency`` in integers.

    ``ops`` rows are ``(opcode, a, b)``: PUSH(variable a, coefficient b),
    SUM(a args), MAX(a args). ``variables`` maps operand indices back to
    function names.
    """

    ops: tuple[tuple[int, int, int], ...]
    scale: int
    variables: tuple[str, ...]

    def evaluate(self, latencies: Mapping[str, int]) -> int:
        """Reference evaluation (the search kernels reimplement this loop)."""
        table = [latencies[v] for v in self.variables]
        stack: list[int] = []
        for op, a, b in self.ops:
            if op == OP_PUSH:
                stack.append(b * table[a])
            elif op == OP_SUM:
                args = stack[-a:]
                del stack[-a:]
                stack.append(sum(args))
            else:
                args = stack[-a:]
                del stack[-a:]
                stack.append(max(args))
        (result,) = stack
        return result

    def predicted(self, latencies: Mapping[str, int]) -> int | Fraction:
        value = Fraction(self.evaluate(latencies), self.scale)
        return int(value) if value.denominator == 1 else value


def flatten_model(node: ModelNode, variables: tuple[str, ...] | None = None) -> Program:
    """Push every multiplier onto the leaves, clear denominators, and emit
    the postfix form. ``variables`` fixes the operand order (defaults to
    first-appearance order); leaves naming functions outside it are an
    error.
    """
    if variables is None:
        variables = model_leaves(node)
    index = {fn: i for i, fn in enumerate(variables)}

    leaf_mults: list[Fraction] = []

    def collect(n: ModelNode, mult: Fraction) -> None:
        if isinstance(n, Leaf):
            if n.fn not in index:
                raise ValidationError(f"model leaf '{n.fn}' is not a problem variable")
            leaf_mults.append(mult)
        elif isinstance(n, Scale):
            collect(n.child, mult * n.k)
        else:
            for c in n.children:
                collect(c, mult)

    collect(node, Fraction(1))
    scale = lcm(*(m.denominator for m in leaf_mults)) if leaf_mults else 1

    ops: list[tuple[int, int, int]] = []

    def emit(n: ModelNode, mult: Fraction) -> None:
        if isinstance(n, Leaf):
            coef = mult * scale
            assert coef.denominator == 1
            ops.append((OP_PUSH, index[n.fn], int(coef)))
        elif isinstance(n, Scale):
            emit(n.child, mult * n.k)
        elif isinstance(n, Sum):
            for c in n.children:
                emit(c, mult)
            ops.append((OP_SUM, len(n.children), 0))
        else:
            for c in n.children:
                emit(c, mult)
            ops.append((OP_MAX, len(n.children), 0))

    emit(node, Fraction(1))
    return Program(ops=tuple(ops), scale=scale, variables=variables)


def model_to_doc(node: ModelNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.fn}
    if isinstance(node, Scale):
        return {"scale": [node.k.numerator, node.k.denominator], "child": model_to_doc(node.child)}
    if isinstance(node, Sum):
        return {"sum": [model_to_doc(c) for c in node.children]}
    return {"max": [model_to_doc(c) for c in node.children]}


def model_from_doc(doc: Mapping) -> ModelNode:
    if "leaf" in doc:
        return Leaf(doc["leaf"])
    if "scale" in doc:
        num, den = doc["scale"]
        return Scale(Fraction(num, den), model_from_doc(doc["child"]))
    if "sum" in doc:
        return Sum(tuple(model_from_doc(c) for c in doc["sum"]))
    if "max" in doc:
        return Max(tuple(model_from_doc(c) for c in doc["max"]))
    raise ValidationError(f"malformed model document {doc!r}")
