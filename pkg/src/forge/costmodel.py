"""Analytical latency/area estimation and pluggable design evaluators.

The model walks the statement structure and charges:

* one op-class latency per compute statement (replication under unroll
  costs area, not depth);
* ``ceil(u * (reads + writes) / ports)`` cycles per access statement, so
  memory traffic serializes on the array's ports and partitioning widens
  them;
* the callee's full latency per call (functions are single shared hardware
  instances, so unrolled call sites serialize);
* the longest branch for a parallel region.

A loop body's depth is the sum of its statement depths plus
``(u - 1) * carried_dep_latency`` for the dependence chain threaded through
the unrolled copies. Without pipelining a loop costs
``ceil(trip / u) * depth``; with pipelining it costs
``depth + (ceil(trip / u) - 1) * II`` where the achieved initiation
interval is pushed up by carried dependences, port contention over the
whole loop subtree, and serialized callee/inner-loop instances.

Area sums per-function compute area (scaled by unrolled replication),
array storage plus banking overhead proportional to partition ways, and
pipeline registers proportional to staged depth. Each function is one
instance: call multiplicity never multiplies area.

Evaluators wrap this model behind a two-method interface so an external
tool (anything that reads a design document on stdin and prints one metrics
line) can stand in for it.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import subprocess
import threading
from dataclasses import dataclass, replace
from importlib import resources
from typing import Any, Mapping

from .callgraph import subtree_functions
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
    Stmt,
    ValidationError,
    design_to_doc,
    sem_references,
    visible_arrays,
    walk,
)


class AdapterError(DesignError):
    """An external evaluator failed: bad exit, bad output, or timeout."""


DEFAULT_ADAPTER_TIMEOUT = 600.0
_ADAPTER_SLOTS = threading.Semaphore(4)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostParams:
    op_latency: Mapping[str, int]
    op_area: Mapping[str, int]
    pipeline_reg_area_per_stage: int
    partition_area_per_way: int
    port_multiplier_per_partition_way: int

    @staticmethod
    def from_doc(doc: Mapping[str, Any]) -> "CostParams":
        return CostParams(
            op_latency=dict(doc["op_latency"]),
            op_area=dict(doc["op_area"]),
            pipeline_reg_area_per_stage=int(doc["pipeline_reg_area_per_stage"]),
            partition_area_per_way=int(doc["partition_area_per_way"]),
            port_multiplier_per_partition_way=int(doc["port_multiplier_per_partition_way"]),
        )

    @staticmethod
    def default() -> "CostParams":
        return _default_params()


_DEFAULT: CostParams | None = None


def _default_params() -> CostParams:
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("forge").joinpath("data/cost_params_v1.json").read_text()
        _DEFAULT = CostParams.from_doc(json.loads(text))
    return _DEFAULT


@dataclass(frozen=True)
class Metrics:
    latency: int
    area: int

    def to_doc(self) -> dict[str, int]:
        return {"latency": self.latency, "area": self.area}


def ports(decl: ArrayDecl, params: CostParams | None = None) -> int:
    p = params or CostParams.default()
    ways = decl.partition.ways(decl.length) if decl.partition else 1
    return decl.base_ports * (1 + p.port_multiplier_per_partition_way * (ways - 1))


def partition_extra(decl: ArrayDecl, params: CostParams | None = None) -> int:
    p = params or CostParams.default()
    if decl.partition is None:
        return 0
    return p.partition_area_per_way * decl.partition.ways(decl.length)


def array_area(decl: ArrayDecl, params: CostParams | None = None) -> int:
    return decl.storage_area + partition_extra(decl, params)


def global_partition_extra(d: Design, params: CostParams | None = None) -> int:
    return sum(partition_extra(a, params) for a in d.arrays)


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------


class CostModel:
    """Memoized latency/area walker for one design."""

    def __init__(self, design: Design, params: CostParams | None = None):
        self.design = design
        self.params = params or CostParams.default()
        self._latency: dict[str, int] = {}
        self._own_area: dict[str, int] = {}
        self._in_progress: set[str] = set()

    # -- latency ---------------------------------------------------------

    def function_latency(self, name: str) -> int:
        if name in self._latency:
            return self._latency[name]
        if name in self._in_progress:
            raise ValidationError(f"recursive call chain through '{name}'")
        self._in_progress.add(name)
        fn = self.design.function(name)
        value = self._stmts_depth(fn.body, 1, fn)
        self._in_progress.discard(name)
        self._latency[name] = value
        return value

    def _stmts_depth(self, stmts: tuple[Stmt, ...], u: int, fn: Function) -> int:
        return sum(self._stmt_depth(s, u, fn) for s in stmts)

    def _stmt_depth(self, s: Stmt, u: int, fn: Function) -> int:
        if isinstance(s, Compute):
            return self.params.op_latency[s.op_class]
        if isinstance(s, Access):
            decl = visible_arrays(self.design, fn)[s.array]
            traffic = s.reads_per_iter + s.writes_per_iter
            return math.ceil(u * traffic / ports(decl, self.params))
        if isinstance(s, Call):
            return u * self.function_latency(s.callee)
        if isinstance(s, Loop):
            return u * self._loop_latency(s, fn)
        if isinstance(s, ParallelRegion):
            return max(self._stmts_depth(br, u, fn) for br in s.branches)
        raise TypeError(type(s).__name__)

    def _loop_latency(self, loop: Loop, fn: Function) -> int:
        u = loop.unroll or 1
        depth = self._stmts_depth(loop.body, u, fn) + (u - 1) * loop.carried_dep_latency
        iters = math.ceil(loop.trip_count / u)
        if loop.pipeline_ii is None:
            return iters * depth
        return depth + (iters - 1) * self._achieved_ii(loop, u, fn)

    def _achieved_ii(self, loop: Loop, u: int, fn: Function) -> int:
        ii = max(loop.pipeline_ii or 1, loop.carried_dep_latency, 1)
        for name, traffic in self._subtree_traffic(loop.body, fn).items():
            decl = visible_arrays(self.design, fn)[name]
            ii = max(ii, math.ceil(u * traffic / ports(decl, self.params)))
        busy = 0
        for s in self._direct_resources(loop.body):
            if isinstance(s, Call):
                busy += u * self.function_latency(s.callee)
            else:
                assert isinstance(s, Loop)
                busy += u * self._loop_latency(s, fn)
        return max(ii, busy)

    def _direct_resources(self, stmts: tuple[Stmt, ...]) -> list[Stmt]:
        """Calls and nested loops one level down (through parallel branches
        but not through further loops): each is a serialized instance."""
        out: list[Stmt] = []
        for s in stmts:
            if isinstance(s, (Call, Loop)):
                out.append(s)
            elif isinstance(s, ParallelRegion):
                for br in s.branches:
                    out.extend(self._direct_resources(br))
        return out

    def _subtree_traffic(self, stmts: tuple[Stmt, ...], fn: Function) -> dict[str, int]:
        """Per-iteration access counts per array across the whole loop
        subtree, inner trip counts multiplied through."""
        out: dict[str, int] = {}

        def visit(body: tuple[Stmt, ...], weight: int) -> None:
            for s in body:
                if isinstance(s, Access):
                    out[s.array] = out.get(s.array, 0) + weight * (
                        s.reads_per_iter + s.writes_per_iter
                    )
                elif isinstance(s, Loop):
                    visit(s.body, weight * s.trip_count)
                elif isinstance(s, ParallelRegion):
                    for br in s.branches:
                        visit(br, weight)

        visit(stmts, 1)
        return out

    # -- area --------------------------------------------------------------

    def own_area(self, name: str) -> int:
        if name in self._own_area:
            return self._own_area[name]
        fn = self.design.function(name)
        total = sum(array_area(a, self.params) for a in fn.local_arrays)
        total += self._stmts_area(fn.body, 1, fn)
        self._own_area[name] = total
        return total

    def _stmts_area(self, stmts: tuple[Stmt, ...], replication: int, fn: Function) -> int:
        total = 0
        for s in stmts:
            if isinstance(s, Compute):
                total += replication * s.count * self.params.op_area[s.op_class]
            elif isinstance(s, Loop):
                u = s.unroll or 1
                total += self._stmts_area(s.body, replication * u, fn)
                if s.pipeline_ii is not None:
                    depth = self._stmts_depth(s.body, u, fn) + (u - 1) * s.carried_dep_latency
                    total += self.params.pipeline_reg_area_per_stage * depth
            elif isinstance(s, ParallelRegion):
                for br in s.branches:
                    total += self._stmts_area(br, replication, fn)
        return total

    def subtree_own_area(self, name: str) -> int:
        return sum(self.own_area(f) for f in subtree_functions(self.design, name))

    def design_area(self) -> int:
        total = sum(array_area(a, self.params) for a in self.design.arrays)
        total += sum(self.own_area(fn.name) for fn in self.design.functions)
        return total

    def estimate(self) -> Metrics:
        return Metrics(self.function_latency(self.design.top), self.design_area())


def estimate(design: Design, params: CostParams | None = None) -> Metrics:
    return CostModel(design, params).estimate()


def function_latency(design: Design, name: str, params: CostParams | None = None) -> int:
    return CostModel(design, params).function_latency(name)


def subtree_metrics(design: Design, name: str, params: CostParams | None = None) -> Metrics:
    """Latency of one activation of ``name`` plus the area of its whole
    function subtree (the unit the variant search optimizes)."""
    model = CostModel(design, params)
    return Metrics(model.function_latency(name), model.subtree_own_area(name))


# ---------------------------------------------------------------------------
# Sub-design extraction (payload for per-function external evaluation)
# ---------------------------------------------------------------------------


def extract_subdesign(d: Design, root: str) -> Design:
    """A standalone design whose top is ``root``: its subtree functions plus
    the global arrays they mention. Test vectors do not transfer."""
    keep = subtree_functions(d, root)
    functions = tuple(d.function(name) for name in keep)
    referenced: set[str] = set()
    for fn in functions:
        local = {a.name for a in fn.local_arrays}
        for pname, pkind in fn.params:
            if pkind == "array":
                referenced.add(pname)
        for s in walk(fn.body):
            if isinstance(s, Access) and s.array not in local:
                referenced.add(s.array)
            elif isinstance(s, Compute) and s.sem is not None:
                _, arrs = sem_references(s.sem)
                referenced.update(a for a in arrs if a not in local)
    arrays = tuple(a for a in d.arrays if a.name in referenced)
    return replace(
        d, name=f"{d.name}.{root}", top=root, functions=functions, arrays=arrays, test_vectors=()
    )


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------


class BuiltinEvaluator:
    """Evaluate designs with the analytical model in-process."""

    def __init__(self, params: CostParams | None = None):
        self.params = params or CostParams.default()

    def design_metrics(self, d: Design) -> Metrics:
        return estimate(d, self.params)

    def function_metrics(self, d: Design, name: str) -> Metrics:
        return subtree_metrics(d, name, self.params)


def adapter_timeout() -> float:
    """Seconds before an external adapter is killed (env-overridable)."""
    raw = os.environ.get("FORGE_ADAPTER_TIMEOUT")
    if raw is None:
        return DEFAULT_ADAPTER_TIMEOUT
    try:
        return float(raw)
    except ValueError:
        raise AdapterError(f"bad FORGE_ADAPTER_TIMEOUT value {raw!r}") from None


def run_adapter_once(command: str, payload: Mapping[str, Any]) -> str:
    """Run a one-shot adapter: payload JSON on stdin, last stdout line back.

    Raises :class:`AdapterError` on launch failure, nonzero exit, timeout,
    or empty output. Concurrent invocations are throttled.
    """
    argv = shlex.split(command)
    if not argv:
        raise AdapterError("empty adapter command")
    with _ADAPTER_SLOTS:
        try:
            proc = subprocess.run(
                argv,
                input=json.dumps(payload, sort_keys=True),
                capture_output=True,
                text=True,
                timeout=adapter_timeout(),
            )
        except subprocess.TimeoutExpired:
            raise AdapterError(f"adapter '{command}' timed out") from None
        except OSError as exc:
            raise AdapterError(f"adapter '{command}' failed to start: {exc}") from None
    if proc.returncode != 0:
        raise AdapterError(
            f"adapter '{command}' exited {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    lines = proc.stdout.strip().splitlines()
    if not lines:
        raise AdapterError(f"adapter '{command}' produced no output")
    return lines[-1]


class ExternalEvaluator:
    """Evaluate designs by piping them to an external command.

    The command receives one design document on stdin and must print a
    single JSON line ``{"latency": int, "area": int}``. Per-function
    queries send the function's extracted sub-design. Concurrent calls are
    throttled; slow adapters are killed after the timeout
    (``FORGE_ADAPTER_TIMEOUT`` seconds, default 600).
    """

    def __init__(self, command: str):
        self.command = command
        if not shlex.split(command):
            raise AdapterError("empty evaluator command")

    def _invoke(self, payload: Mapping[str, Any]) -> Metrics:
        line = run_adapter_once(self.command, payload)
        try:
            doc = json.loads(line)
            return Metrics(latency=int(doc["latency"]), area=int(doc["area"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise AdapterError(
                f"evaluator '{self.command}' produced bad metrics: {exc}"
            ) from None

    def design_metrics(self, d: Design) -> Metrics:
        return self._invoke(design_to_doc(d))

    def function_metrics(self, d: Design, name: str) -> Metrics:
        return self._invoke(design_to_doc(extract_subdesign(d, name)))


Evaluator = BuiltinEvaluator | ExternalEvaluator


def make_evaluator(spec: str, params: CostParams | None = None) -> Evaluator:
    """``"builtin"`` or ``"cmd:<command line>"``."""
    if spec == "builtin":
        return BuiltinEvaluator(params)
    if spec.startswith("cmd:"):
        return ExternalEvaluator(spec[4:])
    raise ValueError(f"unknown evaluator spec {spec!r} (use 'builtin' or 'cmd:...')")
