"""Global variant selection: latency-model composition and exact top-N search."""

from __future__ import annotations

from .model import (  # noqa: F401
    Leaf,
    Max,
    ModelNode,
    Program,
    Scale,
    Sum,
    build_latency_model,
    eval_model,
    flatten_model,
)
from .solver import (  # noqa: F401
    InfeasibleError,
    Problem,
    Solution,
    backend_name,
    brute_force_oracle,
    infeasibility_report,
    solve_top_n,
)
