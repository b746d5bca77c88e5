"""Exact top-N variant selection under an area budget.

Given one variant list per function (each variant a latency/area pair) and
the flattened latency-composition program, the solver returns the ``n``
globally best variant combinations: feasible (total area within budget),
ranked by modeled latency with ties broken by smaller area and then by the
choice vector itself. The result is exact — branch-and-bound with true
lower bounds, matched bit-for-bit by brute-force enumeration.

Two kernel backends implement the search: a compiled extension
(``forge.ilp._speedups``) running on 64-bit integers, and a pure-Python
twin with unbounded integers. The compiled one is used when it imported
successfully, ``FORGE_PURE_PYTHON`` is unset, and a conservative bound
shows no intermediate value can overflow; otherwise the pure kernels run.
:func:`brute_force_oracle` always runs the pure enumeration so tests have
an independent reference.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

from ..ir import DesignError
from . import _kernels
from .model import OP_PUSH, Program

try:  # pragma: no cover - exercised only where the extension built
    from . import _speedups  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover
    _speedups = None

_I64_SAFE = 2**62


class InfeasibleError(DesignError):
    """No variant combination fits the area budget."""


@dataclass(frozen=True)
class Problem:
    """One selection instance: variants per function plus the composition
    program whose variables are exactly ``functions`` in order."""

    functions: tuple[str, ...]
    variant_latencies: tuple[tuple[int, ...], ...]
    variant_areas: tuple[tuple[int, ...], ...]
    program: Program
    budget: int

    def __post_init__(self):
        if self.program.variables != self.functions:
            raise ValueError("program variables must match problem functions")
        if len(self.variant_latencies) != len(self.functions) or len(
            self.variant_areas
        ) != len(self.functions):
            raise ValueError("one variant table row per function required")
        for fn, lats, areas in zip(
            self.functions, self.variant_latencies, self.variant_areas
        ):
            if not lats or len(lats) != len(areas):
                raise ValueError(f"function '{fn}' needs a nonempty variant list")


@dataclass(frozen=True)
class Solution:
    choice: tuple[int, ...]
    latency: int | Fraction
    area: int
    objective: int  # scaled integer the kernels rank by


def backend_name() -> str:
    """Which kernel backend a bound-safe problem would use right now."""
    if _speedups is None or os.environ.get("FORGE_PURE_PYTHON"):
        return "pure"
    return "compiled"


def _fits_int64(p: Problem) -> bool:
    max_abs_lat = max(
        (abs(lat) for row in p.variant_latencies for lat in row), default=0
    )
    value_bound = sum(
        abs(b) * max_abs_lat for op, _, b in p.program.ops if op == OP_PUSH
    )
    area_bound = sum(max(abs(a) for a in row) for row in p.variant_areas)
    return (
        value_bound < _I64_SAFE and area_bound < _I64_SAFE and abs(p.budget) < _I64_SAFE
    )


def _kernel_module(p: Problem):
    if backend_name() == "compiled" and _fits_int64(p):
        return _speedups
    return _kernels


def _wrap(p: Problem, rows) -> list[Solution]:
    out = []
    for value, area, choice in rows:
        latency = Fraction(value, p.program.scale)
        out.append(
            Solution(
                choice=tuple(choice),
                latency=int(latency) if latency.denominator == 1 else latency,
                area=area,
                objective=value,
            )
        )
    return out


def solve_top_n(p: Problem, n: int) -> list[Solution]:
    """The ``n`` best feasible choices in (latency, area, choice) order;
    fewer if the feasible set is smaller, empty if nothing fits."""
    kernel = _kernel_module(p)
    rows = kernel.solve_top_n(
        p.program.ops, p.variant_latencies, p.variant_areas, p.budget, n
    )
    return _wrap(p, rows)


def brute_force_oracle(p: Problem, n: int) -> list[Solution]:
    """Reference answer by full enumeration — always the pure kernels,
    independent of backend selection. Refuses spaces beyond
    ``BRUTE_FORCE_LIMIT`` combinations."""
    rows = _kernels.brute_force(
        p.program.ops, p.variant_latencies, p.variant_areas, p.budget, n
    )
    return _wrap(p, rows)


def min_feasible_area(p: Problem) -> int:
    return sum(min(row) for row in p.variant_areas)


def infeasibility_report(p: Problem) -> str:
    floor = min_feasible_area(p)
    return (
        f"budget {p.budget} is below the minimum achievable area {floor} "
        f"(shortfall {floor - p.budget})"
    )
