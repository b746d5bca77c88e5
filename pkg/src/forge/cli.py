"""Command-line interface.

Subcommands mirror the library's workflow:

- ``forge fixtures`` — list the bundled designs
- ``forge analyze DESIGN`` — validate a design and show its cost structure
- ``forge run DESIGN`` — run the two-stage pipeline
- ``forge scale DESIGN`` — sweep fleet sizes and tabulate speedups
- ``forge report DIR`` — render a persisted run or experiment directory

Exit codes: 0 success, 2 no design fits the budget, 3 bad input,
4 external adapter failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .costmodel import AdapterError, make_evaluator
from .fixtures import fixture_names, load_fixture
from .harness import (
    RunConfig,
    emit_report,
    resolve_design,
    run_pipeline,
    scaling_experiment,
)
from .ilp.model import Leaf, Max, ModelNode, Scale, Sum, build_latency_model, model_leaves
from .ilp.solver import InfeasibleError
from .interp import InterpError, run_test_vectors
from .ir import DesignError, design_fingerprint

log = logging.getLogger(__name__)


def render_model(node: ModelNode) -> str:
    """Human-readable form of a latency model tree."""
    if isinstance(node, Leaf):
        return node.fn
    if isinstance(node, Scale):
        inner = render_model(node.child)
        if isinstance(node.child, Sum):
            inner = f"({inner})"
        return f"{node.k}x{inner}"
    if isinstance(node, Sum):
        return " + ".join(render_model(c) for c in node.children)
    if isinstance(node, Max):
        return "max(" + ", ".join(render_model(c) for c in node.children) + ")"
    raise TypeError(f"unknown model node {node!r}")


def _common_run_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("design", help="design file path or bundled design name")
    sub.add_argument("--budget", type=int, default=None, help="area budget (default: 2x baseline area)")
    sub.add_argument("--seed", type=int, default=0, help="base seed for the agent fleet")
    sub.add_argument("--steps", type=int, default=25, help="exploration steps per agent")
    sub.add_argument(
        "--accept",
        choices=("pareto-add", "strict-improve"),
        default="pareto-add",
        help="which candidates an agent records",
    )
    sub.add_argument("--evaluator", default="builtin", help="'builtin' or 'cmd:<command>'")
    sub.add_argument("--optimizer", default=None, metavar="CMD", help="external variant proposer command")
    sub.add_argument("--explorer", default=None, metavar="CMD", help="external exploration agent command")
    sub.add_argument("--out", default=None, metavar="DIR", help="persist results to this directory")


def _config(args: argparse.Namespace, agents: int) -> RunConfig:
    return RunConfig(
        design=args.design,
        budget=args.budget,
        agents=agents,
        seed=args.seed,
        evaluator=args.evaluator,
        optimizer=args.optimizer,
        explorer=args.explorer,
        max_steps=args.steps,
        accept_rule=args.accept,
        out_dir=args.out,
    )


def _cmd_fixtures(_args: argparse.Namespace) -> int:
    ev = make_evaluator("builtin")
    for name in fixture_names():
        m = ev.design_metrics(load_fixture(name))
        print(f"{name:8s} latency={m.latency:<6d} area={m.area}")
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    name, design = resolve_design(args.design)
    run_test_vectors(design)
    ev = make_evaluator(args.evaluator)
    baseline = ev.design_metrics(design)
    model = build_latency_model(design)
    leaves = model_leaves(model)
    print(f"design: {name} ({design_fingerprint(design)[:12]})")
    print(f"functions: {len(design.functions)} (top: {design.top})")
    print(f"test vectors: {len(design.test_vectors)} passed")
    print(f"baseline: latency={baseline.latency} area={baseline.area}")
    print(f"latency model: {render_model(model)}")
    print(f"selectable functions: {', '.join(leaves)}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    record = run_pipeline(_config(args, args.agents))
    counts = ", ".join(f"{t.function}={len(t.variants)}" for t in record.tables)
    best = record.solutions[0]
    print(
        f"design: {record.design_name}  baseline latency={record.baseline.latency} "
        f"area={record.baseline.area}  budget={record.budget}"
    )
    print(f"variants: {counts}")
    print(
        f"selector: {len(record.solutions)} solution(s), best modeled "
        f"latency={best.latency} area={best.area + record.constant_area}"
    )
    records = record.records
    errors = sum(t.protocol_errors for t in record.traces)
    print(
        f"fleet: {len(record.traces)} agent(s), {len(records)} record(s), "
        f"{errors} protocol error(s)"
    )
    print(
        f"final: latency={record.final.latency} area={record.final.area} "
        f"(agent {record.final.agent_index}, step {record.final.step}) "
        f"speedup={float(record.speedup):.3f}"
    )
    if args.out:
        print(f"wrote {args.out}")
    return 0


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fleet-size list: {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("at least one fleet size is required")
    return sizes


def _cmd_scale(args: argparse.Namespace) -> int:
    result = scaling_experiment(_config(args, 1), args.sizes, args.repeats)
    print(
        f"design: {result.design_name}  baseline latency={result.baseline.latency} "
        f"budget={result.budget}  repeats={result.repeats}"
    )
    print(f"{'agents':>6s} {'mean':>8s} {'min':>8s} {'max':>8s} {'gain':>8s}")
    for row in result.rows:
        gain = "-" if row.gain_pct is None else f"{row.gain_pct:+.2f}%"
        print(
            f"{row.agents:>6d} {row.mean_speedup:>8.3f} {row.min_speedup:>8.3f} "
            f"{row.max_speedup:>8.3f} {gain:>8s}"
        )
    if args.out:
        print(f"wrote {args.out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    for path in emit_report(args.record_dir):
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Two-stage design-space exploration for kernel designs.",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log pipeline progress to stderr"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("fixtures", help="list bundled designs")
    sub.set_defaults(func=_cmd_fixtures)

    sub = commands.add_parser("analyze", help="validate a design and show its cost structure")
    sub.add_argument("design", help="design file path or bundled design name")
    sub.add_argument("--evaluator", default="builtin", help="'builtin' or 'cmd:<command>'")
    sub.set_defaults(func=_cmd_analyze)

    sub = commands.add_parser("run", help="run the two-stage pipeline")
    _common_run_options(sub)
    sub.add_argument("--agents", type=int, default=4, help="fleet size (default 4)")
    sub.set_defaults(func=_cmd_run)

    sub = commands.add_parser("scale", help="sweep fleet sizes")
    _common_run_options(sub)
    sub.add_argument(
        "--sizes",
        type=_parse_sizes,
        default=[1, 2, 4, 8, 10],
        help="comma-separated fleet sizes (default 1,2,4,8,10)",
    )
    sub.add_argument("--repeats", type=int, default=1, help="repeats per size")
    sub.set_defaults(func=_cmd_scale)

    sub = commands.add_parser("report", help="render a persisted run or experiment")
    sub.add_argument("record_dir", help="directory written by 'run --out' or 'scale --out'")
    sub.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return 4
    except (DesignError, InterpError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
