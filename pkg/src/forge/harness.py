"""End-to-end pipeline orchestration, persistence, and analysis.

``run_pipeline`` chains the whole flow: load and self-check a design,
score the baseline, search per-function variants, pick the top-N
variant bundles under the area budget, refine them with the agent
fleet, and select the final design.  The result is a ``RunRecord`` that
can be persisted to a directory and reloaded; re-running the final
selection over a reloaded record's exploration records reproduces the
stored final, and two runs with the same config are byte-identical on
disk except for the recorded wall time.

The analysis helpers (``pareto_front``, ``scaling_experiment``,
``pearson_correlation``, ``emit_report``) operate on records and run
directories rather than live pipeline state, so they work equally on
fresh and reloaded results.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .costmodel import Metrics, make_evaluator
from .fixtures import fixture_names, load_fixture
from .ilp.model import build_latency_model, model_leaves
from .ilp.solver import (
    InfeasibleError,
    Solution,
    min_feasible_area,
    solve_top_n,
)
from .interp import run_test_vectors
from .ir import Design, DesignError, design_fingerprint, design_to_doc, load_design
from .stage1 import ExternalOptimizer, FunctionVariants, make_selection_problem, search_all
from .stage2 import (
    AgentTrace,
    ExplorationRecord,
    ExternalExplorer,
    DEFAULT_MAX_STEPS,
    DEFAULT_WEIGHTS,
    materialize,
    merged_records,
    record_from_doc,
    run_stage2,
    select_final,
)

log = logging.getLogger(__name__)

RUN_FILE = "run.json"
EXPERIMENT_FILE = "experiment.json"
LOCK_FILE = "run.lock"

# Default budget policy when none is given: twice the baseline area,
# enough headroom to buy pipelining and moderate banking but not to
# unroll everything.
DEFAULT_BUDGET_FACTOR = 2


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run depends on.

    ``design`` is a path to a design document or the name of a bundled
    fixture.  ``budget`` of ``None`` means "twice the baseline area".
    ``out_dir`` controls persistence only and is deliberately excluded
    from the serialized config snapshot, so runs written to different
    directories still compare equal.
    """

    design: str
    budget: int | None = None
    agents: int = 1
    seed: int = 0
    evaluator: str = "builtin"
    optimizer: str | None = None
    explorer: str | None = None
    max_steps: int = DEFAULT_MAX_STEPS
    accept_rule: str = "pareto-add"
    path_weights: tuple[int, int, int, int] = DEFAULT_WEIGHTS
    out_dir: str | None = None

    def __post_init__(self):
        if self.agents < 1:
            raise ValueError("at least one agent is required")
        if self.budget is not None and self.budget < 0:
            raise ValueError("area budget must be non-negative")

    def to_doc(self) -> dict[str, Any]:
        return {
            "design": self.design,
            "budget": self.budget,
            "agents": self.agents,
            "seed": self.seed,
            "evaluator": self.evaluator,
            "optimizer": self.optimizer,
            "explorer": self.explorer,
            "max_steps": self.max_steps,
            "accept_rule": self.accept_rule,
            "path_weights": list(self.path_weights),
        }


def resolve_design(spec: str) -> tuple[str, Design]:
    """Interpret ``spec`` as a file path first, then as a bundled
    fixture name.  Returns a display name plus the loaded design."""
    path = Path(spec)
    if path.is_file():
        return path.stem, load_design(path.read_text())
    if spec in fixture_names():
        return spec, load_fixture(spec)
    raise FileNotFoundError(
        f"'{spec}' is neither a design file nor a bundled design "
        f"(bundled: {', '.join(fixture_names())})"
    )


# ---------------------------------------------------------------------------
# RunRecord
# ---------------------------------------------------------------------------


def _num_doc(value: int | Fraction) -> int | list[int]:
    """JSON encoding for exact numbers: plain int when integral, else a
    [numerator, denominator] pair."""
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return int(value)
        return [value.numerator, value.denominator]
    return int(value)


def _solution_doc(s: Solution) -> dict[str, Any]:
    return {
        "choice": list(s.choice),
        "latency": _num_doc(s.latency),
        "area": s.area,
        "objective": s.objective,
    }


def _trace_summary(t: AgentTrace) -> dict[str, Any]:
    doc = t.to_doc()
    doc["records"] = len(t.records)
    return doc


@dataclass(frozen=True)
class RunRecord:
    """The complete result of one pipeline run."""

    config: RunConfig
    design_name: str
    design_ref: str
    baseline: Metrics
    budget: int
    constant_area: int
    tables: tuple[FunctionVariants, ...]
    solutions: tuple[Solution, ...]
    traces: tuple[AgentTrace, ...]
    final: ExplorationRecord
    wall_time: float

    @property
    def records(self) -> list[ExplorationRecord]:
        return merged_records(self.traces)

    @property
    def speedup(self) -> Fraction:
        return Fraction(self.baseline.latency, self.final.latency)

    def to_doc(self) -> dict[str, Any]:
        return {
            "schema": "forge-run/1",
            "config": self.config.to_doc(),
            "design": self.design_name,
            "design_ref": self.design_ref,
            "baseline": self.baseline.to_doc(),
            "budget": self.budget,
            "selection": {
                "constant_area": self.constant_area,
                "solutions": [_solution_doc(s) for s in self.solutions],
            },
            "agents": [_trace_summary(t) for t in self.traces],
            "records_total": sum(len(t.records) for t in self.traces),
            "final": self.final.to_doc(),
            "speedup": float(self.speedup),
            "wall_time": self.wall_time,
        }


# ---------------------------------------------------------------------------
# The pipeline
# ---------------------------------------------------------------------------


def run_pipeline(cfg: RunConfig) -> RunRecord:
    """Run the two-stage flow end to end and (optionally) persist it."""
    started = time.perf_counter()
    name, design = resolve_design(cfg.design)
    run_test_vectors(design)  # a design that fails its own vectors is input error

    evaluator = make_evaluator(cfg.evaluator)
    baseline = evaluator.design_metrics(design)
    budget = (
        cfg.budget if cfg.budget is not None else DEFAULT_BUDGET_FACTOR * baseline.area
    )
    log.info(
        "%s: baseline latency=%d area=%d budget=%d",
        name,
        baseline.latency,
        baseline.area,
        budget,
    )

    model = build_latency_model(design)
    optimizer = ExternalOptimizer(cfg.optimizer) if cfg.optimizer else None
    tables = search_all(design, model_leaves(model), evaluator, optimizer)

    problem, const = make_selection_problem(design, model, tables, budget)
    solutions = tuple(solve_top_n(problem, cfg.agents))
    if not solutions:
        floor = min_feasible_area(problem) + const
        raise InfeasibleError(
            f"budget {budget} is below the minimum achievable design area "
            f"{floor} (shortfall {floor - budget})"
        )
    log.info(
        "%s: %d selector solution(s); best latency=%s area=%d",
        name,
        len(solutions),
        solutions[0].latency,
        solutions[0].area + const,
    )

    explorer = ExternalExplorer(cfg.explorer) if cfg.explorer else None
    traces = run_stage2(
        design,
        tables,
        [s.choice for s in solutions],
        agents=cfg.agents,
        base_seed=cfg.seed,
        budget=budget,
        max_steps=cfg.max_steps,
        accept_rule=cfg.accept_rule,
        path_weights=cfg.path_weights,
        evaluator=evaluator,
        explorer=explorer,
    )
    final = select_final(merged_records(traces), budget)

    record = RunRecord(
        config=cfg,
        design_name=name,
        design_ref=design_fingerprint(design),
        baseline=baseline,
        budget=budget,
        constant_area=const,
        tables=tables,
        solutions=solutions,
        traces=traces,
        final=final,
        wall_time=time.perf_counter() - started,
    )
    if cfg.out_dir is not None:
        persist_run(record, design, cfg.out_dir)
    return record


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


class _run_lock:
    """Exclusive marker file guarding a run directory while it is being
    written.  A leftover lock means a concurrent or crashed writer."""

    def __init__(self, directory: Path):
        self.path = directory / LOCK_FILE

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DesignError(
                f"'{self.path}' exists: another run is writing this directory "
                "(remove the stale lock to proceed)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def persist_run(record: RunRecord, design: Design, out_dir: str | os.PathLike) -> Path:
    """Write a run directory:

    - ``run.json`` — the record itself (agent records summarized)
    - ``variants/<function>.json`` — stage-1 tables
    - ``ilp_solutions.json`` — the ranked selector output
    - ``stage2/agent_<i>.jsonl`` — every exploration record, one per line
    - ``final_design.json`` — the materialized winning design
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    with _run_lock(root):
        _write_json(root / RUN_FILE, record.to_doc())

        vdir = root / "variants"
        vdir.mkdir(exist_ok=True)
        for stale in vdir.glob("*.json"):
            stale.unlink()
        for table in record.tables:
            _write_json(vdir / f"{table.function}.json", table.to_doc())

        _write_json(
            root / "ilp_solutions.json",
            [_solution_doc(s) for s in record.solutions],
        )

        sdir = root / "stage2"
        sdir.mkdir(exist_ok=True)
        for stale in sdir.glob("*.jsonl"):
            stale.unlink()
        for trace in record.traces:
            lines = [
                json.dumps(r.to_doc(), sort_keys=True, separators=(",", ":"))
                for r in trace.records
            ]
            (sdir / f"agent_{trace.agent_index}.jsonl").write_text(
                "".join(line + "\n" for line in lines)
            )

        _write_json(
            root / "final_design.json",
            design_to_doc(materialize(design, record.final)),
        )
    return root


@dataclass(frozen=True)
class LoadedRun:
    """A persisted run read back for analysis."""

    doc: Mapping[str, Any]
    records: tuple[ExplorationRecord, ...]

    @property
    def budget(self) -> int:
        return self.doc["budget"]

    @property
    def baseline_latency(self) -> int:
        return self.doc["baseline"]["latency"]

    @property
    def final(self) -> ExplorationRecord:
        return record_from_doc(self.doc["final"])


def load_run(run_dir: str | os.PathLike) -> LoadedRun:
    root = Path(run_dir)
    run_path = root / RUN_FILE
    if not run_path.is_file():
        raise FileNotFoundError(f"'{root}' is not a run directory (no {RUN_FILE})")
    doc = json.loads(run_path.read_text())
    records: list[ExplorationRecord] = []
    for path in sorted((root / "stage2").glob("agent_*.jsonl")):
        for line in path.read_text().splitlines():
            records.append(record_from_doc(json.loads(line)))
    records.sort(key=lambda r: (r.agent_index, r.step))
    return LoadedRun(doc=doc, records=tuple(records))


# ---------------------------------------------------------------------------
# Pareto front
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParetoPoint:
    """One non-dominated (speedup, area) achievement and where it came
    from.  Speedup is exact: baseline latency over record latency."""

    speedup: Fraction
    area: int
    provenance: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "speedup": float(self.speedup),
            "area": self.area,
            "provenance": self.provenance,
        }


def _provenance(r: ExplorationRecord) -> str:
    return f"agent {r.agent_index} step {r.step}"


def pareto_front(
    records: Sequence[ExplorationRecord], baseline_latency: int
) -> list[ParetoPoint]:
    """The mutually non-dominated subset of ``records`` in the
    (speedup, area) plane, sorted by area ascending.

    A point dominates another when its speedup is at least as large and
    its area at most as large, strictly so in at least one coordinate.
    Exact duplicates of a frontier point are all kept: neither
    dominates the other.
    """
    points = [
        ParetoPoint(Fraction(baseline_latency, r.latency), r.area, _provenance(r))
        for r in records
    ]
    points.sort(key=lambda p: (p.area, -p.speedup, p.provenance))
    front: list[ParetoPoint] = []
    best: ParetoPoint | None = None
    for p in points:
        if best is None or p.speedup > best.speedup:
            front.append(p)
            best = p
        elif p.speedup == best.speedup and p.area == best.area:
            front.append(p)
    return front


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson's r.  Raises ``ValueError`` on mismatched lengths, fewer
    than two points, or a zero-variance input (r is undefined there)."""
    if len(xs) != len(ys):
        raise ValueError(f"input lengths differ: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("correlation needs at least two points")
    try:
        return statistics.correlation([float(x) for x in xs], [float(y) for y in ys])
    except statistics.StatisticsError as exc:
        raise ValueError(f"correlation is undefined: {exc}") from None


# ---------------------------------------------------------------------------
# Scaling experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingCell:
    """One (fleet size, repeat) measurement."""

    agents: int
    repeat: int
    base_seed: int
    best_latency: int
    best_area: int
    speedup: Fraction
    points: tuple[ParetoPoint, ...]

    def to_doc(self) -> dict[str, Any]:
        return {
            "agents": self.agents,
            "repeat": self.repeat,
            "base_seed": self.base_seed,
            "best_latency": self.best_latency,
            "best_area": self.best_area,
            "speedup": float(self.speedup),
            "points": [p.to_doc() for p in self.points],
        }


@dataclass(frozen=True)
class ScalingRow:
    """Aggregate over repeats for one fleet size."""

    agents: int
    mean_speedup: float
    min_speedup: float
    max_speedup: float
    gain_pct: float | None  # vs. the previous fleet size, None for the first

    def to_doc(self) -> dict[str, Any]:
        return {
            "agents": self.agents,
            "mean_speedup": self.mean_speedup,
            "min_speedup": self.min_speedup,
            "max_speedup": self.max_speedup,
            "gain_pct": self.gain_pct,
        }


@dataclass(frozen=True)
class ScalingResult:
    design_name: str
    baseline: Metrics
    budget: int
    n_values: tuple[int, ...]
    repeats: int
    cells: tuple[ScalingCell, ...]
    rows: tuple[ScalingRow, ...]
    wall_time: float

    def to_doc(self) -> dict[str, Any]:
        return {
            "schema": "forge-experiment/1",
            "design": self.design_name,
            "baseline": self.baseline.to_doc(),
            "budget": self.budget,
            "n_values": list(self.n_values),
            "repeats": self.repeats,
            "rows": [r.to_doc() for r in self.rows],
            "cells": [c.to_doc() for c in self.cells],
            "wall_time": self.wall_time,
        }


def scaling_experiment(
    cfg: RunConfig, n_values: Sequence[int], repeats: int = 1
) -> ScalingResult:
    """Measure how the best result moves as the fleet grows.

    Stage 1 and the selection problem are shared across all cells; each
    (N, repeat) cell re-runs only the agent fleet.  Within one repeat
    every fleet size uses the same base seed, so a larger fleet's
    agents 1..k are exactly the smaller fleet's agents — growth can
    only add trajectories, never perturb existing ones.
    """
    if not n_values or any(n < 1 for n in n_values):
        raise ValueError("fleet sizes must be positive")
    if repeats < 1:
        raise ValueError("at least one repeat is required")
    started = time.perf_counter()

    name, design = resolve_design(cfg.design)
    run_test_vectors(design)
    evaluator = make_evaluator(cfg.evaluator)
    baseline = evaluator.design_metrics(design)
    budget = (
        cfg.budget if cfg.budget is not None else DEFAULT_BUDGET_FACTOR * baseline.area
    )
    model = build_latency_model(design)
    optimizer = ExternalOptimizer(cfg.optimizer) if cfg.optimizer else None
    tables = search_all(design, model_leaves(model), evaluator, optimizer)
    problem, const = make_selection_problem(design, model, tables, budget)

    solutions_by_n: dict[int, list[Solution]] = {}
    for n in sorted(set(n_values)):
        solutions_by_n[n] = solve_top_n(problem, n)
        if not solutions_by_n[n]:
            floor = min_feasible_area(problem) + const
            raise InfeasibleError(
                f"budget {budget} is below the minimum achievable design area "
                f"{floor} (shortfall {floor - budget})"
            )

    cells: list[ScalingCell] = []
    for repeat in range(repeats):
        base_seed = cfg.seed + 1000 * repeat
        for n in n_values:
            traces = run_stage2(
                design,
                tables,
                [s.choice for s in solutions_by_n[n]],
                agents=n,
                base_seed=base_seed,
                budget=budget,
                max_steps=cfg.max_steps,
                accept_rule=cfg.accept_rule,
                path_weights=cfg.path_weights,
                evaluator=evaluator,
                explorer=ExternalExplorer(cfg.explorer) if cfg.explorer else None,
            )
            records = merged_records(traces)
            best = select_final(records, budget)
            cells.append(
                ScalingCell(
                    agents=n,
                    repeat=repeat,
                    base_seed=base_seed,
                    best_latency=best.latency,
                    best_area=best.area,
                    speedup=Fraction(baseline.latency, best.latency),
                    points=tuple(pareto_front(records, baseline.latency)),
                )
            )
            log.info(
                "%s: N=%d repeat=%d best latency=%d (speedup %.3f)",
                name,
                n,
                repeat,
                best.latency,
                float(cells[-1].speedup),
            )

    rows: list[ScalingRow] = []
    prev_mean: float | None = None
    for n in n_values:
        speedups = [float(c.speedup) for c in cells if c.agents == n]
        mean = statistics.fmean(speedups)
        gain = None if prev_mean is None else (mean / prev_mean - 1.0) * 100.0
        rows.append(ScalingRow(n, mean, min(speedups), max(speedups), gain))
        prev_mean = mean

    result = ScalingResult(
        design_name=name,
        baseline=baseline,
        budget=budget,
        n_values=tuple(n_values),
        repeats=repeats,
        cells=tuple(cells),
        rows=tuple(rows),
        wall_time=time.perf_counter() - started,
    )
    if cfg.out_dir is not None:
        persist_experiment(result, cfg.out_dir)
    return result


def persist_experiment(result: ScalingResult, out_dir: str | os.PathLike) -> Path:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    with _run_lock(root):
        _write_json(root / EXPERIMENT_FILE, result.to_doc())
        _write_speedup_table(root / "speedup_table.csv", [r.to_doc() for r in result.rows])
    return root


def _write_speedup_table(path: Path, rows: Iterable[Mapping[str, Any]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["agents", "mean_speedup", "min_speedup", "max_speedup", "gain_pct"]
        )
        for row in rows:
            writer.writerow(
                [
                    row["agents"],
                    row["mean_speedup"],
                    row["min_speedup"],
                    row["max_speedup"],
                    "" if row["gain_pct"] is None else row["gain_pct"],
                ]
            )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def emit_report(record_dir: str | os.PathLike) -> list[Path]:
    """Render a persisted run or experiment directory into ``pareto.csv``,
    ``speedup_table.csv``, and ``pareto.png`` inside that directory.
    Re-running overwrites the same files, so the call is idempotent."""
    root = Path(record_dir)
    if (root / EXPERIMENT_FILE).is_file():
        return _report_experiment(root)
    if (root / RUN_FILE).is_file():
        return _report_run(root)
    raise FileNotFoundError(
        f"'{root}' holds neither {RUN_FILE} nor {EXPERIMENT_FILE}"
    )


def _write_pareto_csv(path: Path, rows: Iterable[tuple[Any, ...]], header) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _scatter(path: Path, series: Mapping[str, list[tuple[float, int]]], title: str) -> None:
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, pts in series.items():
        pts = sorted(pts)
        ax.plot(
            [a for _, a in pts],
            [s for s, _ in pts],
            marker="o",
            linestyle="-",
            label=label,
        )
    ax.set_xlabel("area")
    ax.set_ylabel("speedup vs. baseline")
    ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": "forge"})
    plt.close(fig)


def _report_run(root: Path) -> list[Path]:
    run = load_run(root)
    front = pareto_front(run.records, run.baseline_latency)
    pareto_path = root / "pareto.csv"
    _write_pareto_csv(
        pareto_path,
        [(float(p.speedup), p.area, p.provenance) for p in front],
        ["speedup", "area", "provenance"],
    )
    table_path = root / "speedup_table.csv"
    _write_speedup_table(
        table_path,
        [
            {
                "agents": run.doc["config"]["agents"],
                "mean_speedup": run.doc["speedup"],
                "min_speedup": run.doc["speedup"],
                "max_speedup": run.doc["speedup"],
                "gain_pct": None,
            }
        ],
    )
    png_path = root / "pareto.png"
    _scatter(
        png_path,
        {"front": [(float(p.speedup), p.area) for p in front]},
        f"{run.doc['design']}: non-dominated results",
    )
    return [pareto_path, table_path, png_path]


def _report_experiment(root: Path) -> list[Path]:
    doc = json.loads((root / EXPERIMENT_FILE).read_text())
    # One front per fleet size, merged over repeats.  Cell points are
    # already non-dominated per cell; merging across repeats needs one
    # more sweep, done in the (speedup, area) plane directly.
    series: dict[int, list[dict]] = {}
    for cell in doc["cells"]:
        series.setdefault(cell["agents"], []).extend(cell["points"])
    pareto_rows: list[tuple[Any, ...]] = []
    plot_series: dict[str, list[tuple[float, int]]] = {}
    for agents in sorted(series):
        pts = sorted(
            series[agents], key=lambda p: (p["area"], -p["speedup"], p["provenance"])
        )
        front: list[dict] = []
        best: dict | None = None
        for p in pts:
            if best is None or p["speedup"] > best["speedup"]:
                front.append(p)
                best = p
            elif p["speedup"] == best["speedup"] and p["area"] == best["area"]:
                front.append(p)
        plot_series[f"N={agents}"] = [(p["speedup"], p["area"]) for p in front]
        pareto_rows.extend(
            (agents, p["speedup"], p["area"], p["provenance"]) for p in front
        )
    pareto_path = root / "pareto.csv"
    _write_pareto_csv(
        pareto_path, pareto_rows, ["agents", "speedup", "area", "provenance"]
    )
    table_path = root / "speedup_table.csv"
    _write_speedup_table(table_path, doc["rows"])
    png_path = root / "pareto.png"
    _scatter(
        png_path, plot_series, f"{doc['design']}: fronts by fleet size"
    )
    return [pareto_path, table_path, png_path]
