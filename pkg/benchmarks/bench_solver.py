"""Time the selection solver's compiled kernels against the pure-Python twin.

Both backends produce identical results (the test suite checks this
exactly); this script only measures how much the compiled extension
buys on realistic instance shapes:

    python3 benchmarks/bench_solver.py
    python3 benchmarks/bench_solver.py --instances 200 --top 5 --seed 1
"""

from __future__ import annotations

import argparse
import os
import random
import time
from fractions import Fraction

from forge.ilp.model import Leaf, Max, Scale, Sum, flatten_model, model_leaves
from forge.ilp.solver import Problem, backend_name, solve_top_n


def random_model(rng: random.Random, slots: tuple[str, ...]):
    if len(slots) == 1:
        node = Leaf(slots[0])
    else:
        cut = rng.randrange(1, len(slots))
        parts = (random_model(rng, slots[:cut]), random_model(rng, slots[cut:]))
        node = Sum(parts) if rng.random() < 0.5 else Max(parts)
    if rng.random() < 0.3:
        node = Scale(rng.choice((2, 3, 5, Fraction(1, 2), Fraction(3, 2))), node)
    return node


def random_problem(rng: random.Random, k: int, variants: int) -> Problem:
    names = tuple(f"f{i}" for i in range(k))
    slots = list(names) + [rng.choice(names) for _ in range(rng.randrange(0, 3))]
    rng.shuffle(slots)
    node = random_model(rng, tuple(slots))
    leaves = model_leaves(node)
    lats = tuple(
        tuple(rng.randrange(1, 1000) for _ in range(variants)) for _ in leaves
    )
    areas = tuple(
        tuple(rng.randrange(1, 200) for _ in range(variants)) for _ in leaves
    )
    low = sum(min(row) for row in areas)
    high = sum(max(row) for row in areas)
    budget = rng.randrange(low, high + 1)
    return Problem(
        functions=leaves,
        variant_latencies=lats,
        variant_areas=areas,
        program=flatten_model(node, leaves),
        budget=budget,
    )


def time_batch(problems, n: int, pure: bool) -> float:
    if pure:
        os.environ["FORGE_PURE_PYTHON"] = "1"
    try:
        started = time.perf_counter()
        for p in problems:
            solve_top_n(p, n)
        return time.perf_counter() - started
    finally:
        os.environ.pop("FORGE_PURE_PYTHON", None)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--instances", type=int, default=100, help="problems per shape")
    parser.add_argument("--top", type=int, default=5, help="solutions requested per problem")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repeats", type=int, default=3, help="timing repetitions per backend")
    args = parser.parse_args()

    have_compiled = backend_name() == "compiled"
    if not have_compiled:
        print("note: compiled kernels unavailable; timing the pure backend only")

    # Shapes mirror what the pipeline actually solves: a handful of
    # selectable functions with at most seven variants each.  Larger
    # random instances have a heavy worst-case tail on the pure
    # backend, which would measure the tail rather than the kernels.
    shapes = [(3, 4), (4, 7), (5, 7), (6, 7)]
    print(f"{'shape':>8s} {'pure (s)':>10s} {'compiled (s)':>13s} {'ratio':>8s}", flush=True)
    for k, variants in shapes:
        rng = random.Random(args.seed)
        problems = [random_problem(rng, k, variants) for _ in range(args.instances)]
        pure = min(
            time_batch(problems, args.top, pure=True) for _ in range(args.repeats)
        )
        if have_compiled:
            comp = min(
                time_batch(problems, args.top, pure=False)
                for _ in range(args.repeats)
            )
            comp_text, ratio = f"{comp:13.4f}", f"{pure / comp:7.1f}x"
        else:
            comp_text, ratio = f"{'-':>13s}", f"{'-':>8s}"
        print(f"{f'{k}x{variants}':>8s} {pure:10.4f} {comp_text} {ratio}", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
