"""Refinement agents: seeding, recording discipline, determinism, stdio."""

from __future__ import annotations

import json

import pytest

from forge.costmodel import BuiltinEvaluator, estimate
from forge.ir import DesignError, design_fingerprint, load_design
from forge.stage1 import search_all
from forge.stage2 import (
    AgentConfig,
    ExternalExplorer,
    _compute_moves,
    _memory_moves,
    _partition_options,
    _pragma_swap_moves,
    _restructure_moves,
    instantiate_solution,
    materialize,
    merged_records,
    run_agent,
    run_stage2,
    select_final,
)
from forge.transforms import check_equivalence


def compute(cid, sem=None, op_class="add", count=1):
    return {"kind": "compute", "id": cid, "op_class": op_class, "count": count, "sem": sem}


def access(aid, array, reads=1, writes=0):
    return {
        "kind": "access",
        "id": aid,
        "array": array,
        "reads_per_iter": reads,
        "writes_per_iter": writes,
    }


def call(cid, callee):
    return {"kind": "call", "id": cid, "callee": callee, "relation_tag": ""}


def loop(lid, trip, body, **kw):
    return {
        "kind": "loop",
        "id": lid,
        "trip_count": trip,
        "carried_dep_latency": kw.get("carried", 0),
        "reducible": kw.get("reducible", False),
        "closed_form": kw.get("closed_form"),
        "pipeline_ii": kw.get("pipeline_ii"),
        "unroll": kw.get("unroll"),
        "body": body,
    }


def quad_design():
    """Three-stage pipeline with enough texture for every move path:
    a store loop, a reduction with a scratch array, and a closed-form
    tail."""
    load = lambda arr, idx: {"load": {"array": arr, "index": idx}}
    return load_design(
        json.dumps(
            {
                "ir_version": 1,
                "name": "quad",
                "top": "main",
                "arrays": [
                    {
                        "name": "data",
                        "length": 8,
                        "base_ports": 2,
                        "storage_area": 8,
                        "partition": None,
                    }
                ],
                "functions": [
                    {
                        "name": "main",
                        "params": [["data", "array"], ["total", "scalar"]],
                        "local_arrays": [],
                        "body": [
                            call("k0", "prep"),
                            call("k1", "reduce"),
                            call("k2", "finish"),
                        ],
                    },
                    {
                        "name": "prep",
                        "params": [["data", "array"]],
                        "local_arrays": [],
                        "body": [
                            loop(
                                "p",
                                8,
                                [
                                    access("a0", "data", reads=1, writes=1),
                                    compute(
                                        "c0",
                                        {
                                            "op": "store",
                                            "array": "data",
                                            "index": {"var": "p"},
                                            "expr": {
                                                "mul": [load("data", {"var": "p"}), {"const": 2}]
                                            },
                                        },
                                        op_class="mul",
                                    ),
                                ],
                            )
                        ],
                    },
                    {
                        "name": "reduce",
                        "params": [["data", "array"], ["total", "scalar"]],
                        "local_arrays": [
                            {
                                "name": "buf",
                                "length": 4,
                                "base_ports": 1,
                                "storage_area": 4,
                                "partition": None,
                            }
                        ],
                        "body": [
                            loop(
                                "i",
                                8,
                                [
                                    access("a1", "data", reads=1),
                                    compute(
                                        "c1",
                                        {
                                            "op": "set",
                                            "dst": "total",
                                            "expr": {
                                                "add": [
                                                    {"var": "total"},
                                                    load("data", {"var": "i"}),
                                                ]
                                            },
                                        },
                                    ),
                                ],
                            ),
                            loop(
                                "b",
                                4,
                                [
                                    access("a2", "buf", writes=1),
                                    compute(
                                        "c2",
                                        {
                                            "op": "store",
                                            "array": "buf",
                                            "index": {"var": "b"},
                                            "expr": {"var": "total"},
                                        },
                                        op_class="logic",
                                    ),
                                ],
                            ),
                        ],
                    },
                    {
                        "name": "finish",
                        "params": [["total", "scalar"]],
                        "local_arrays": [],
                        "body": [
                            loop(
                                "j",
                                4,
                                [
                                    compute(
                                        "c3",
                                        {
                                            "op": "set",
                                            "dst": "total",
                                            "expr": {"add": [{"var": "total"}, {"const": 2}]},
                                        },
                                    )
                                ],
                                reducible=True,
                                closed_form={
                                    "stmts": [
                                        compute(
                                            "cf",
                                            {
                                                "op": "set",
                                                "dst": "total",
                                                "expr": {
                                                    "add": [{"var": "total"}, {"const": 8}]
                                                },
                                            },
                                        )
                                    ]
                                },
                            )
                        ],
                    },
                ],
                "test_vectors": [
                    {
                        "inputs": {"data": [1, 2, 3, 4, 5, 6, 7, 8], "total": 0},
                        "expected_outputs": {
                            "total": 80,
                            "data": [2, 4, 6, 8, 10, 12, 14, 16],
                        },
                    },
                    {
                        "inputs": {"data": [0] * 8, "total": 0},
                        "expected_outputs": {"total": 8, "data": [0] * 8},
                    },
                ],
            }
        )
    )


LEAVES = ["prep", "reduce", "finish"]


def seeded(design, choice=None):
    tables = search_all(design, LEAVES)
    if choice is None:
        choice = (0,) * len(tables)
    seed_design, seed_docs = instantiate_solution(design, tables, choice)
    return tables, seed_design, seed_docs


class TestMoves:
    def test_pragma_swaps_cover_every_surviving_variant(self):
        d = quad_design()
        tables = search_all(d, LEAVES)
        moves = _pragma_swap_moves(d, tables)
        assert moves == _pragma_swap_moves(d, tables)  # deterministic
        assert len(moves) == sum(len(t.variants) for t in tables)
        # The baseline swap is expressed as an explicit pragma clear.
        assert moves[0] == [
            {"kind": "apply_pragmas", "function": "prep", "config": {"loops": {}}}
        ]

    def test_restructure_moves_cover_inlining_but_skip_unequal_trips(self):
        d = quad_design()
        moves = _restructure_moves(d)
        # reduce's adjacent loops run 8 and 4 iterations, so fusion is off
        # the menu; every call site is fair game.
        kinds = {doc["kind"] for move in moves for doc in move}
        assert kinds == {"inline_call"}
        assert {move[0]["call"] for move in moves} == {"k0", "k1", "k2"}

    def test_memory_moves_bank_globals_and_locals(self):
        d = quad_design()
        moves = _memory_moves(d)
        globals_ = [m[0] for m in moves if m[0]["kind"] == "repartition_array"]
        locals_ = [m[0] for m in moves if m[0]["kind"] == "apply_pragmas"]
        assert {m["array"] for m in globals_} == {"data"}
        assert all("buf" in m["config"]["arrays"] for m in locals_)

    def test_compute_moves_are_closed_form_rewrites(self):
        d = quad_design()
        moves = _compute_moves(d)
        assert moves == [
            [{"kind": "closed_form_rewrite", "function": "finish", "loop": "j"}]
        ]

    def test_partition_options_skip_current_and_oversized(self):
        opts = _partition_options(4, None)
        assert None not in opts
        assert {"mode": "complete", "factor": None} in opts
        assert all(o.get("factor") is None or o["factor"] <= 4 for o in opts)


class TestSeeding:
    def test_baseline_choice_is_identity(self):
        d = quad_design()
        _, seed_design, seed_docs = seeded(d, (0, 0, 0))
        assert seed_design == d
        assert seed_docs == []

    def test_choice_applies_variant_transforms(self):
        d = quad_design()
        tables, seed_design, seed_docs = seeded(d, (2, 0, 0))
        assert seed_design.function("prep").body[0].pipeline_ii == 1
        assert estimate(seed_design).latency < estimate(d).latency
        assert seed_docs == list(tables[0].variants[2].transforms)

    def test_out_of_range_choice_rejected(self):
        d = quad_design()
        tables = search_all(d, LEAVES)
        with pytest.raises(DesignError, match="variant index"):
            instantiate_solution(d, tables, (99, 0, 0))


class TestAgent:
    def budget(self, d):
        return estimate(d).area + 400

    def run(self, d, seed=7, steps=15, budget=None, **cfg):
        tables, seed_design, seed_docs = seeded(d)
        config = AgentConfig(index=1, seed=seed, max_steps=steps, **cfg)
        return run_agent(
            d,
            tables,
            seed_design,
            seed_docs,
            config,
            budget=self.budget(d) if budget is None else budget,
        )

    def test_seed_state_is_recorded_first(self):
        d = quad_design()
        trace = self.run(d)
        first = trace.records[0]
        assert (first.step, first.path, first.transforms_applied) == (0, "seed", ())
        assert first.latency == estimate(d).latency
        assert first.design_ref == design_fingerprint(d)

    def test_zero_steps_yield_the_seed_singleton(self):
        d = quad_design()
        trace = self.run(d, steps=0)
        assert [r.step for r in trace.records] == [0]

    def test_every_record_replays_rescores_and_fits(self):
        d = quad_design()
        budget = self.budget(d)
        trace = self.run(d, budget=budget)
        evaluator = BuiltinEvaluator()
        assert len(trace.records) > 1, "a 15-step walk should find valid designs"
        for record in trace.records:
            rebuilt = materialize(d, record)
            assert check_equivalence(d, rebuilt).equivalent
            rescored = evaluator.design_metrics(rebuilt)
            assert (rescored.latency, rescored.area) == (record.latency, record.area)
            assert record.area <= budget

    def test_records_are_unique_designs(self):
        d = quad_design()
        trace = self.run(d, steps=25)
        refs = [r.design_ref for r in trace.records]
        assert len(refs) == len(set(refs))

    def test_strict_rule_records_only_descending_latencies(self):
        d = quad_design()
        trace = self.run(d, steps=20, accept_rule="strict-improve")
        latencies = [r.latency for r in trace.records]
        assert all(b < a for a, b in zip(latencies, latencies[1:]))

    def test_same_seed_same_trajectory(self):
        d = quad_design()
        a = self.run(d, seed=11)
        b = self.run(d, seed=11)
        assert json.dumps(a.to_doc()) == json.dumps(b.to_doc())

    def test_unaffordable_seed_yields_no_records(self):
        d = quad_design()
        trace = self.run(d, steps=6, budget=1)
        assert trace.records == ()
        assert any(reason.startswith("seed:") for reason, _ in trace.rejections)
        with pytest.raises(DesignError):
            select_final(trace.records, 1)

    def test_budget_pinned_to_seed_area_blocks_growth(self):
        d = quad_design()
        budget = estimate(d).area  # no headroom at all
        trace = self.run(d, steps=20, budget=budget)
        assert all(r.area <= budget for r in trace.records)


class TestFleet:
    def test_agent_seeds_and_ranks_cycle(self):
        d = quad_design()
        tables = search_all(d, LEAVES)
        choices = [(0, 0, 0), (2, 0, 0)]
        traces = run_stage2(
            d, tables, choices, agents=5, base_seed=100,
            budget=estimate(d).area + 400, max_steps=4,
        )
        assert [t.agent_index for t in traces] == [1, 2, 3, 4, 5]
        assert [t.seed for t in traces] == [101, 102, 103, 104, 105]
        assert [t.seeded_from for t in traces] == [1, 2, 1, 2, 1]

    def test_growing_the_fleet_preserves_existing_trajectories(self):
        d = quad_design()
        tables = search_all(d, LEAVES)
        choices = [(0, 0, 0)]
        kw = dict(base_seed=40, budget=estimate(d).area + 400, max_steps=6)
        small = run_stage2(d, tables, choices, agents=2, **kw)
        large = run_stage2(d, tables, choices, agents=4, **kw)
        assert [t.to_doc() for t in small] == [t.to_doc() for t in large[:2]]

    def test_select_final_prefers_latency_then_area(self):
        d = quad_design()
        tables = search_all(d, LEAVES)
        budget = estimate(d).area + 400
        traces = run_stage2(
            d, tables, [(0, 0, 0)], agents=3, base_seed=9, budget=budget, max_steps=8
        )
        records = merged_records(traces)
        assert records == sorted(records, key=lambda r: (r.agent_index, r.step))
        best = select_final(records, budget)
        for r in records:
            assert (best.latency, best.area) <= (r.latency, r.area)

    def test_select_final_filters_by_budget(self):
        d = quad_design()
        tables = search_all(d, LEAVES)
        budget = estimate(d).area + 400
        traces = run_stage2(
            d, tables, [(0, 0, 0)], agents=2, base_seed=9, budget=budget, max_steps=8
        )
        records = merged_records(traces)
        tight = min(r.area for r in records)
        best = select_final(records, tight)
        assert best.area <= tight


class TestExternalExplorer:
    def test_scripted_session_drives_steps(self, tmp_path):
        script = tmp_path / "explorer.py"
        script.write_text(
            "import json, sys\n"
            "first = True\n"
            "for line in sys.stdin:\n"
            "    req = json.loads(line)\n"
            "    assert set(req) == {'design', 'metrics', 'budget', 'history'}\n"
            "    if first:\n"
            "        first = False\n"
            "        move = {'kind': 'apply_pragmas', 'function': 'prep',\n"
            "                'config': {'loops': {'p': {'pipeline_ii': 1}}}}\n"
            "        print(json.dumps({'transforms': [move]}), flush=True)\n"
            "    else:\n"
            "        assert len(req['history']) == 2\n"
            "        print(json.dumps({'done': True}), flush=True)\n"
        )
        d = quad_design()
        tables, seed_design, seed_docs = seeded(d)
        trace = run_agent(
            d,
            tables,
            seed_design,
            seed_docs,
            AgentConfig(index=1, seed=1, max_steps=10),
            budget=estimate(d).area + 400,
            explorer=ExternalExplorer(f"python3 {script}"),
        )
        assert [r.path for r in trace.records] == ["seed", "external"]
        assert trace.records[1].step == 1
        assert trace.protocol_errors == 0

    def test_garbage_reply_degrades_to_builtin(self, tmp_path):
        script = tmp_path / "noisy.py"
        script.write_text(
            "import sys\n"
            "sys.stdin.readline()\n"
            "print('not json', flush=True)\n"
            "sys.stdin.read()\n"
        )
        d = quad_design()
        tables, seed_design, seed_docs = seeded(d)
        trace = run_agent(
            d,
            tables,
            seed_design,
            seed_docs,
            AgentConfig(index=1, seed=3, max_steps=12),
            budget=estimate(d).area + 400,
            explorer=ExternalExplorer(f"python3 {script}"),
        )
        assert trace.protocol_errors == 1
        assert len(trace.records) > 1  # builtin proposers still found designs
        assert all(r.path != "external" for r in trace.records)

    def test_pass_reply_skips_a_step(self, tmp_path):
        script = tmp_path / "shy.py"
        script.write_text(
            "import json, sys\n"
            "n = 0\n"
            "for line in sys.stdin:\n"
            "    n += 1\n"
            "    if n == 1:\n"
            "        print(json.dumps({'transforms': []}), flush=True)\n"
            "    else:\n"
            "        print(json.dumps({'done': True}), flush=True)\n"
        )
        d = quad_design()
        tables, seed_design, seed_docs = seeded(d)
        trace = run_agent(
            d,
            tables,
            seed_design,
            seed_docs,
            AgentConfig(index=1, seed=3, max_steps=4),
            budget=estimate(d).area + 400,
            explorer=ExternalExplorer(f"python3 {script}"),
        )
        assert trace.attempts == 0
        assert [r.step for r in trace.records] == [0]
