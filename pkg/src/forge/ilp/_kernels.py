"""Pure-Python search kernels: exact top-N selection and brute force.

These are the fallback twins of the compiled kernels in ``_speedups``; both
implement the same contract and the solver front end picks one at import.
Keeping the Python versions authoritative (unbounded integers, no overflow)
also gives the compiled path something to be checked against.

Kernel contract
---------------

Inputs are the flattened postfix program (rows of ``(opcode, a, b)``), the
per-function variant latency and area tables, and the area budget. A
*choice* assigns one variant index per function. Feasible choices satisfy
``sum(area) <= budget``; they are ranked by the scaled objective (the
program's value, which is the modeled latency times a constant), then by
total area, then by the choice vector itself. Both kernels return the
first ``n`` choices of that total order as ``(objective, area, choice)``
tuples — the same order brute-force enumeration produces, which is exactly
what the tests assert.

The branch-and-bound search is exact: coefficients are nonnegative and sum
and max are monotone, so evaluating the program with every unassigned
function at its minimum latency is a true lower bound, and a subtree is
discarded only when that bound is strictly worse than the current n-th
best objective (ties must survive for the secondary keys to decide).
"""

from __future__ import annotations

from itertools import product
from typing import Sequence

OP_PUSH = 0
OP_SUM = 1
OP_MAX = 2

BRUTE_FORCE_LIMIT = 1_000_000


def _evaluate(
    ops: Sequence[tuple[int, int, int]],
    lats: Sequence[Sequence[int]],
    choice: Sequence[int],
    min_lat: Sequence[int],
    assigned: int,
) -> int:
    """Run the postfix program; variables at index >= ``assigned`` read
    their minimum variant latency."""
    stack: list[int] = []
    for op, a, b in ops:
        if op == OP_PUSH:
            lat = lats[a][choice[a]] if a < assigned else min_lat[a]
            stack.append(b * lat)
        elif op == OP_SUM:
            args = stack[-a:]
            del stack[-a:]
            stack.append(sum(args))
        else:
            args = stack[-a:]
            del stack[-a:]
            stack.append(max(args))
    return stack[0] if stack else 0


def solve_top_n(
    ops: Sequence[tuple[int, int, int]],
    lats: Sequence[Sequence[int]],
    areas: Sequence[Sequence[int]],
    budget: int,
    n: int,
) -> list[tuple[int, int, tuple[int, ...]]]:
    """Exact top-``n`` feasible choices by (objective, area, choice)."""
    k = len(lats)
    if n <= 0:
        return []
    min_lat = [min(row) for row in lats]
    min_area = [min(row) for row in areas]
    suffix_area = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix_area[i] = suffix_area[i + 1] + min_area[i]

    best: list[tuple[int, int, tuple[int, ...]]] = []
    choice = [0] * k

    def insert(entry: tuple[int, int, tuple[int, ...]]) -> None:
        lo, hi = 0, len(best)
        while lo < hi:
            mid = (lo + hi) // 2
            if best[mid] < entry:
                lo = mid + 1
            else:
                hi = mid
        best.insert(lo, entry)
        if len(best) > n:
            best.pop()

    def dfs(depth: int, area: int) -> None:
        if area + suffix_area[depth] > budget:
            return
        if len(best) == n:
            bound = _evaluate(ops, lats, choice, min_lat, depth)
            if bound > best[-1][0]:
                return
        if depth == k:
            insert((_evaluate(ops, lats, choice, min_lat, k), area, tuple(choice)))
            return
        for v in range(len(lats[depth])):
            choice[depth] = v
            dfs(depth + 1, area + areas[depth][v])
        choice[depth] = 0

    dfs(0, 0)
    return best


def brute_force(
    ops: Sequence[tuple[int, int, int]],
    lats: Sequence[Sequence[int]],
    areas: Sequence[Sequence[int]],
    budget: int,
    n: int,
) -> list[tuple[int, int, tuple[int, ...]]]:
    """Full enumeration; the oracle the search is judged against."""
    if n <= 0:
        return []
    space = 1
    for row in lats:
        space *= len(row)
        if space > BRUTE_FORCE_LIMIT:
            raise ValueError(
                f"search space exceeds brute-force limit ({BRUTE_FORCE_LIMIT})"
            )
    min_lat = [min(row) for row in lats] if lats else []
    out = []
    for choice in product(*(range(len(row)) for row in lats)):
        area = sum(areas[i][v] for i, v in enumerate(choice))
        if area > budget:
            continue
        value = _evaluate(ops, lats, choice, min_lat, len(choice))
        out.append((value, area, choice))
    out.sort()
    return out[:n]
