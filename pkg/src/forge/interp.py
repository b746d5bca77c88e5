"""Reference interpreter for the executable subset of the IR.

Runs a design's top function on concrete integer inputs, producing the final
value of every top-level parameter. The interpreter is the ground truth that
transformation passes are checked against: a rewrite is accepted only if the
rewritten design computes identical outputs on every test vector.

Execution model:

* Scalars live in a single flat namespace per run. Callee scalar parameters
  alias the caller's scalars of the same name, so writes propagate back.
* Global arrays are shared state; function-local arrays are zero-initialized
  fresh on every activation of their owning function.
* A loop binds its own id as the iteration index while its body executes,
  restoring any shadowed binding afterwards.
* Parallel regions are a scheduling annotation; branches run in order.
* ``closed_form`` bodies never execute here — they replace the loop only
  after an explicit rewrite.
"""

from __future__ import annotations

from typing import Any, Mapping

from .ir import (
    Access,
    Call,
    Compute,
    Design,
    Function,
    Loop,
    ParallelRegion,
    Stmt,
    visible_arrays,
)


class InterpError(Exception):
    """Runtime failure: unbound name, bad index, or division by zero."""


_STEP_LIMIT = 2_000_000


class _Machine:
    def __init__(self, design: Design):
        self.design = design
        self.scalars: dict[str, int] = {}
        self.arrays: dict[str, list[int]] = {}
        self.steps = 0

    # -- expression evaluation ------------------------------------------

    def eval(self, expr: Any) -> int:
        if not isinstance(expr, Mapping):
            raise InterpError(f"malformed expression {expr!r}")
        if "const" in expr:
            return int(expr["const"])
        if "var" in expr:
            name = expr["var"]
            if name not in self.scalars:
                raise InterpError(f"unbound scalar '{name}'")
            return self.scalars[name]
        if "load" in expr:
            spec = expr["load"]
            return self._index(spec["array"], self.eval(spec["index"]), "load")[0]
        if "add" in expr:
            return sum(self.eval(e) for e in expr["add"])
        if "mul" in expr:
            out = 1
            for e in expr["mul"]:
                out *= self.eval(e)
            return out
        if "sub" in expr:
            a, b = expr["sub"]
            return self.eval(a) - self.eval(b)
        if "floordiv" in expr:
            a, b = expr["floordiv"]
            divisor = self.eval(b)
            if divisor == 0:
                raise InterpError("division by zero")
            return self.eval(a) // divisor
        raise InterpError(f"malformed expression {expr!r}")

    def _index(self, name: str, idx: int, what: str) -> tuple[int, list[int], int]:
        if name not in self.arrays:
            raise InterpError(f"unbound array '{name}'")
        store = self.arrays[name]
        if not 0 <= idx < len(store):
            raise InterpError(f"{what} index {idx} out of bounds for '{name}'[{len(store)}]")
        return store[idx], store, idx

    # -- statement execution --------------------------------------------

    def run_sem(self, sem: Any) -> None:
        if sem is None:
            return
        op = sem.get("op")
        if op == "set":
            self.scalars[sem["dst"]] = self.eval(sem["expr"])
        elif op == "store":
            value = self.eval(sem["expr"])
            _, store, idx = self._index(sem["array"], self.eval(sem["index"]), "store")
            store[idx] = value
        else:
            raise InterpError(f"malformed sem action {sem!r}")

    def run_stmts(self, stmts: tuple[Stmt, ...]) -> None:
        for s in stmts:
            self.steps += 1
            if self.steps > _STEP_LIMIT:
                raise InterpError("step limit exceeded")
            if isinstance(s, Loop):
                saved = self.scalars.get(s.id)
                had = s.id in self.scalars
                for i in range(s.trip_count):
                    self.scalars[s.id] = i
                    self.run_stmts(s.body)
                if had:
                    self.scalars[s.id] = saved  # type: ignore[assignment]
                else:
                    self.scalars.pop(s.id, None)
            elif isinstance(s, Compute):
                self.run_sem(s.sem)
            elif isinstance(s, Access):
                pass  # traffic annotation only
            elif isinstance(s, Call):
                self.run_function(self.design.function(s.callee))
            elif isinstance(s, ParallelRegion):
                for br in s.branches:
                    self.run_stmts(br)

    def run_function(self, fn: Function) -> None:
        saved_locals = {}
        for decl in fn.local_arrays:
            if decl.name in self.arrays:
                saved_locals[decl.name] = self.arrays[decl.name]
            self.arrays[decl.name] = [0] * decl.length
        for pname, pkind in fn.params:
            if pkind == "scalar" and pname not in self.scalars:
                raise InterpError(f"{fn.name}: unbound scalar parameter '{pname}'")
            if pkind == "array" and pname not in self.arrays:
                raise InterpError(f"{fn.name}: unbound array parameter '{pname}'")
        self.run_stmts(fn.body)
        for decl in fn.local_arrays:
            if decl.name in saved_locals:
                self.arrays[decl.name] = saved_locals[decl.name]
            else:
                del self.arrays[decl.name]


def interpret(design: Design, inputs: Mapping[str, Any]) -> dict[str, Any]:
    """Run the top function on ``inputs`` and return the final value of every
    top-level parameter (scalars as ints, arrays as lists).

    Raises :class:`InterpError` on any runtime fault.
    """
    top = design.function(design.top)
    m = _Machine(design)
    for decl in design.arrays:
        m.arrays[decl.name] = [0] * decl.length
    for pname, pkind in top.params:
        value = inputs.get(pname)
        if pkind == "scalar":
            m.scalars[pname] = int(value) if value is not None else 0
        else:
            if value is not None:
                m.arrays[pname] = [int(v) for v in value]
    m.run_function(top)
    out: dict[str, Any] = {}
    for pname, pkind in top.params:
        out[pname] = m.scalars[pname] if pkind == "scalar" else list(m.arrays[pname])
    return out


def run_test_vectors(design: Design) -> None:
    """Assert the design reproduces all of its own test vectors.

    Raises :class:`InterpError` describing the first mismatch.
    """
    for i, tv in enumerate(design.test_vectors):
        got = interpret(design, tv.inputs)
        for name, expected in tv.expected_outputs.items():
            if got.get(name) != expected:
                raise InterpError(
                    f"test vector {i}: '{name}' expected {expected!r}, got {got.get(name)!r}"
                )
