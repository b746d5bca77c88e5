"""Bundled example designs.

Each fixture is a complete design document with test vectors whose
expected outputs were computed by hand from the statement semantics and
frozen here; ``run_test_vectors`` re-derives them on every test run.
The suite spans the structural range the pipeline must handle:

- ``syn5`` — a 5-iteration loop over three parallel branches with a
  repeated callee, so the latency model mixes sums, maxima, and merged
  coefficients.
- ``syn6`` — a parallel pair followed by a twice-called tail inside a
  loop: max-plus-sum composition.
- ``nw`` — three sequential phases; the fill phase carries a dependence
  and over-subscribes its array ports (full unroll makes it slower, not
  faster), and the emit phase ends in a loop with a closed form.
- ``aes`` — a round-structured cipher shape whose call multipliers are
  11/10/10/9/1/1 across six functions.
- ``kmeans`` — two phases sharing under-banked global arrays plus a
  local histogram; rebanking the shared arrays is worth more than any
  single-function tuning.
- ``stream`` — a parallel gather/scatter pair over single-port arrays
  followed by a normalization pass.
"""

from __future__ import annotations

from importlib import resources

from ..ir import Design, load_design


def fixture_names() -> tuple[str, ...]:
    """Names of all bundled designs, sorted."""
    root = resources.files(__package__)
    return tuple(
        sorted(
            entry.name[: -len(".json")]
            for entry in root.iterdir()
            if entry.name.endswith(".json")
        )
    )


def load_fixture(name: str) -> Design:
    """Load a bundled design by name."""
    entry = resources.files(__package__) / f"{name}.json"
    if not entry.is_file():
        known = ", ".join(fixture_names())
        raise FileNotFoundError(f"no bundled design named '{name}' (have: {known})")
    return load_design(entry.read_text())
