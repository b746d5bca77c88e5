"""Call-graph extraction with loop-aware invocation multiplicities.

Each edge caller→callee carries how many times the callee runs per caller
activation (call sites weighted by the product of enclosing trip counts) and
whether any site sits directly inside a parallel-region branch, which the
latency model turns into a max instead of a sum.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import Call, Design, Function, Loop, ParallelRegion, Stmt, ValidationError


@dataclass(frozen=True)
class CallEdge:
    caller: str
    callee: str
    multiplier: int
    kind: str  # "sequential" | "parallel"


@dataclass(frozen=True)
class CallGraph:
    edges: tuple[CallEdge, ...]
    order: tuple[str, ...]  # reverse topological: callees before callers

    def callees(self, caller: str) -> tuple[CallEdge, ...]:
        return tuple(e for e in self.edges if e.caller == caller)


def _collect_sites(
    stmts: tuple[Stmt, ...], weight: int, in_parallel: bool, out: list[tuple[str, int, bool]]
) -> None:
    for s in stmts:
        if isinstance(s, Call):
            out.append((s.callee, weight, in_parallel))
        elif isinstance(s, Loop):
            _collect_sites(s.body, weight * s.trip_count, in_parallel, out)
        elif isinstance(s, ParallelRegion):
            for br in s.branches:
                _collect_sites(br, weight, True, out)


def extract_call_graph(design: Design) -> CallGraph:
    """Build the call graph rooted at the top function.

    Raises :class:`ValidationError` on recursion (the cost model needs an
    evaluation order) and on functions unreachable from the top.
    """
    sites: dict[str, list[tuple[str, int, bool]]] = {}
    for fn in design.functions:
        found: list[tuple[str, int, bool]] = []
        _collect_sites(fn.body, 1, False, found)
        sites[fn.name] = found

    edges: list[CallEdge] = []
    for caller in design.functions:
        per_callee: dict[str, tuple[int, bool]] = {}
        for callee, weight, parallel in sites[caller.name]:
            mult, par = per_callee.get(callee, (0, False))
            per_callee[callee] = (mult + weight, par or parallel)
        for callee, (mult, par) in per_callee.items():
            edges.append(
                CallEdge(caller.name, callee, mult, "parallel" if par else "sequential")
            )

    # Reachability from top.
    adjacency = {fn.name: [c for c, _, _ in sites[fn.name]] for fn in design.functions}
    reachable: set[str] = set()
    stack = [design.top]
    while stack:
        name = stack.pop()
        if name in reachable:
            continue
        reachable.add(name)
        stack.extend(adjacency[name])
    unreachable = sorted(fn.name for fn in design.functions if fn.name not in reachable)
    if unreachable:
        raise ValidationError(f"functions unreachable from top: {', '.join(unreachable)}")

    # Reverse topological order via DFS; a back edge means recursion.
    order: list[str] = []
    state: dict[str, int] = {}  # 1 = in progress, 2 = done

    def visit(name: str, trail: tuple[str, ...]) -> None:
        mark = state.get(name)
        if mark == 2:
            return
        if mark == 1:
            cycle = trail[trail.index(name):] + (name,)
            raise ValidationError(f"recursive call chain: {' -> '.join(cycle)}")
        state[name] = 1
        for callee in adjacency[name]:
            visit(callee, trail + (name,))
        state[name] = 2
        order.append(name)

    visit(design.top, ())
    return CallGraph(edges=tuple(edges), order=tuple(order))


def top_leaves(design: Design, graph: CallGraph) -> tuple[str, ...]:
    """Direct callees of the top function, in first-appearance order.

    These are the units the variant search optimizes independently; anything
    they call is folded into their own subtree metrics.
    """
    seen: list[str] = []
    for edge in graph.edges:
        if edge.caller == design.top and edge.callee not in seen:
            seen.append(edge.callee)
    return tuple(seen)


def subtree_functions(design: Design, root: str) -> tuple[str, ...]:
    """``root`` plus everything transitively reachable from it."""
    fn_sites: dict[str, list[str]] = {}
    for fn in design.functions:
        found: list[tuple[str, int, bool]] = []
        _collect_sites(fn.body, 1, False, found)
        fn_sites[fn.name] = [c for c, _, _ in found]
    out: list[str] = []
    stack = [root]
    while stack:
        name = stack.pop()
        if name in out:
            continue
        out.append(name)
        stack.extend(fn_sites[name])
    return tuple(sorted(out, key=lambda n: (n != root, n)))
