"""Latency/area model checks against hand-computed cycle counts.

Every expected number in this file was derived by hand from the model's
documented rules (statement depths, unroll replication, port contention,
initiation-interval floors) using the default cost parameters:
add=1, mul=3, div=16, logic=1 cycles; add=10, mul=40, div=200, logic=5 area;
4 area per pipeline stage; 8 area per partition way; ports scale linearly
with partition ways.
"""

from __future__ import annotations

import json

import pytest

from forge.costmodel import (
    AdapterError,
    BuiltinEvaluator,
    CostModel,
    CostParams,
    ExternalEvaluator,
    estimate,
    extract_subdesign,
    function_latency,
    make_evaluator,
    partition_extra,
    ports,
    subtree_metrics,
)
from forge.ir import ArrayDecl, Partition, load_design


def build(doc):
    return load_design(json.dumps(doc))


def compute(cid, op_class="add", count=1):
    return {"kind": "compute", "id": cid, "op_class": op_class, "count": count, "sem": None}


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


def fn(name, body, local_arrays=()):
    return {"name": name, "params": [], "local_arrays": list(local_arrays), "body": body}


def design_doc(functions, arrays=(), top="main"):
    return {
        "ir_version": 1,
        "name": "t",
        "top": top,
        "arrays": list(arrays),
        "functions": list(functions),
        "test_vectors": [],
    }


def array(name, length, base_ports=2, storage_area=0, partition=None):
    return {
        "name": name,
        "length": length,
        "base_ports": base_ports,
        "storage_area": storage_area,
        "partition": partition,
    }


class TestLatency:
    def test_op_class_latencies(self):
        d = build(
            design_doc(
                [fn("main", [compute("a"), compute("m", "mul"), compute("d", "div"), compute("l", "logic")])]
            )
        )
        # 1 + 3 + 16 + 1
        assert function_latency(d, "main") == 21

    def test_plain_loop_multiplies_body(self):
        d = build(design_doc([fn("main", [loop("i", 10, [compute("a"), compute("b"), compute("c")])])]))
        assert function_latency(d, "main") == 30

    def test_pipelined_loop_overlaps_iterations(self):
        # depth 3, trip 10, II 1 -> 3 + 9*1 = 12
        d = build(
            design_doc(
                [fn("main", [loop("i", 10, [compute("a"), compute("b"), compute("c")], pipeline_ii=1)])]
            )
        )
        assert function_latency(d, "main") == 12

    def test_requested_ii_floor(self):
        # depth 3, trip 10, II 4 -> 3 + 9*4 = 39
        d = build(
            design_doc(
                [fn("main", [loop("i", 10, [compute("a"), compute("b"), compute("c")], pipeline_ii=4)])]
            )
        )
        assert function_latency(d, "main") == 39

    def test_carried_dependence_raises_ii(self):
        # depth 3, carried 5 > requested 1 -> 3 + 9*5 = 48
        d = build(
            design_doc(
                [
                    fn(
                        "main",
                        [
                            loop(
                                "i",
                                10,
                                [compute("a"), compute("b"), compute("c")],
                                pipeline_ii=1,
                                carried=5,
                            )
                        ],
                    )
                ]
            )
        )
        assert function_latency(d, "main") == 48

    def test_unroll_divides_iterations_and_chains_carried(self):
        # u=4: depth = 1 + 3*2 = 7, iters 3 -> 21; u=1: 12.
        body = [compute("a")]
        d4 = build(design_doc([fn("main", [loop("i", 12, body, unroll=4, carried=2)])]))
        d1 = build(design_doc([fn("main", [loop("i", 12, body, carried=2)])]))
        assert function_latency(d4, "main") == 21
        assert function_latency(d1, "main") == 12

    def test_access_contention_limits_unroll_gain(self):
        # 2 reads/iter on a 2-port array: u=1 depth 1 -> 8; u=4 depth 4, 2 iters -> 8.
        arrays = [array("m", 16)]
        d1 = build(design_doc([fn("main", [loop("i", 8, [access("a0", "m", reads=2)])])], arrays))
        d4 = build(
            design_doc([fn("main", [loop("i", 8, [access("a0", "m", reads=2)], unroll=4)])], arrays)
        )
        assert function_latency(d1, "main") == 8
        assert function_latency(d4, "main") == 8

    def test_partitioning_restores_unroll_gain(self):
        # factor 4 -> 8 ports: u=4 depth ceil(8/8)=1, 2 iters -> 2.
        arrays = [array("m", 16, partition={"mode": "cyclic", "factor": 4})]
        d = build(
            design_doc([fn("main", [loop("i", 8, [access("a0", "m", reads=2)], unroll=4)])], arrays)
        )
        assert function_latency(d, "main") == 2

    def test_pipelined_contention_fixture(self):
        # trip 26, 3 accesses/iter on 2 ports, carried 2, one add.
        # Pipeline alone: depth ceil(3/2)+1 = 3, II max(1,2,2)=2 -> 3+25*2 = 53.
        # Full unroll + pipeline: depth ceil(26*3/2)+1+(26-1)*2 = 39+1+50 = 90.
        arrays = [array("m", 32)]
        body = [access("a0", "m", reads=2, writes=1), compute("c0")]
        alone = build(
            design_doc([fn("main", [loop("i", 26, body, pipeline_ii=1, carried=2)])], arrays)
        )
        unrolled = build(
            design_doc(
                [fn("main", [loop("i", 26, body, pipeline_ii=1, carried=2, unroll=26)])], arrays
            )
        )
        assert function_latency(alone, "main") == 53
        assert function_latency(unrolled, "main") == 90
        assert function_latency(unrolled, "main") > function_latency(alone, "main")

    def test_call_depth_is_callee_latency(self):
        d = build(
            design_doc(
                [
                    fn("main", [loop("i", 5, [call("k0", "leaf")])]),
                    fn("leaf", [compute("a"), compute("b")]),
                ]
            )
        )
        assert function_latency(d, "leaf") == 2
        assert function_latency(d, "main") == 10

    def test_unrolled_calls_serialize(self):
        d = build(
            design_doc(
                [
                    fn("main", [loop("i", 5, [call("k0", "leaf")], unroll=5)]),
                    fn("leaf", [compute("a"), compute("b")]),
                ]
            )
        )
        # depth 5*2 = 10, one macro iteration.
        assert function_latency(d, "main") == 10

    def test_pipelined_call_loop_ii_covers_callee(self):
        # Callee busy 2 cycles/iter caps the pipeline: 2 + 5*2 = 12.
        d = build(
            design_doc(
                [
                    fn("main", [loop("i", 6, [call("k0", "leaf")], pipeline_ii=1)]),
                    fn("leaf", [compute("a"), compute("b")]),
                ]
            )
        )
        assert function_latency(d, "main") == 12

    def test_parallel_region_takes_longest_branch(self):
        d = build(
            design_doc(
                [
                    fn(
                        "main",
                        [
                            {
                                "kind": "parallel",
                                "id": "p0",
                                "branches": [
                                    [compute("b0", "mul")],
                                    [compute("b1"), compute("b2")],
                                ],
                            }
                        ],
                    )
                ]
            )
        )
        # max(3, 2)
        assert function_latency(d, "main") == 3

    def test_nested_loop_latency_composes(self):
        d = build(design_doc([fn("main", [loop("i", 3, [loop("j", 4, [compute("a")])])])]))
        assert function_latency(d, "main") == 12

    def test_dormant_closed_form_costs_nothing(self):
        cf = {"stmts": [compute("cf0", "div", count=3)]}
        d = build(
            design_doc(
                [fn("main", [loop("i", 4, [compute("a")], reducible=True, closed_form=cf)])]
            )
        )
        assert function_latency(d, "main") == 4
        assert estimate(d).area == 10  # the live add only


class TestPorts:
    def test_ports_scale_with_ways(self):
        base = ArrayDecl("m", 16, base_ports=2)
        assert ports(base) == 2
        assert ports(ArrayDecl("m", 16, 2, 0, Partition("cyclic", 4))) == 8
        assert ports(ArrayDecl("m", 16, 2, 0, Partition("complete"))) == 32

    def test_partition_extra_area(self):
        assert partition_extra(ArrayDecl("m", 16, 2)) == 0
        assert partition_extra(ArrayDecl("m", 16, 2, 0, Partition("block", 4))) == 32
        assert partition_extra(ArrayDecl("m", 16, 2, 0, Partition("complete"))) == 128


class TestArea:
    def test_compute_area_scales_with_unroll(self):
        d = build(
            design_doc(
                [fn("main", [loop("i", 8, [compute("a", count=3), compute("m", "mul")], unroll=2)])]
            )
        )
        # 2 * (3*10 + 40)
        assert estimate(d).area == 140

    def test_nested_unroll_multiplies_replication(self):
        d = build(
            design_doc(
                [fn("main", [loop("i", 4, [loop("j", 4, [compute("a")], unroll=2)], unroll=2)])]
            )
        )
        assert estimate(d).area == 40

    def test_pipeline_registers_charge_depth(self):
        d = build(
            design_doc(
                [fn("main", [loop("i", 10, [compute("a"), compute("b"), compute("c")], pipeline_ii=1)])]
            )
        )
        # 3 adds + 4 area/stage * depth 3
        assert estimate(d).area == 30 + 12

    def test_arrays_charge_storage_and_banking(self):
        d = build(
            design_doc(
                [
                    fn(
                        "main",
                        [access("a0", "g", reads=1), access("a1", "l", writes=1)],
                        local_arrays=[
                            array("l", 8, storage_area=8, partition={"mode": "cyclic", "factor": 2})
                        ],
                    )
                ],
                arrays=[array("g", 16, storage_area=16)],
            )
        )
        # global 16 + local (8 + 2*8)
        assert estimate(d).area == 40

    def test_functions_count_once_regardless_of_call_multiplicity(self):
        d = build(
            design_doc(
                [
                    fn("main", [loop("i", 100, [call("k0", "leaf")])]),
                    fn("leaf", [compute("m", "mul")]),
                ]
            )
        )
        assert estimate(d).area == 40

    def test_subtree_metrics_fold_callees(self):
        d = build(
            design_doc(
                [
                    fn("main", [call("k0", "mid"), compute("t", "div")]),
                    fn("mid", [call("k1", "leaf"), compute("m", "mul")]),
                    fn("leaf", [compute("a")]),
                ]
            )
        )
        m = subtree_metrics(d, "mid")
        assert m.latency == 1 + 3  # leaf + own mul
        assert m.area == 40 + 10  # mid + leaf, not main's div
        model = CostModel(d)
        assert model.design_area() == 200 + 40 + 10


class TestEstimateIsDeterministic:
    def test_same_design_same_metrics(self):
        d = build(
            design_doc(
                [fn("main", [loop("i", 7, [compute("a"), compute("m", "mul")], pipeline_ii=2)])]
            )
        )
        assert estimate(d) == estimate(d)


class TestSubdesignExtraction:
    def test_keeps_subtree_and_referenced_globals(self):
        d = build(
            design_doc(
                [
                    fn("main", [call("k0", "mid"), access("a0", "top_only", reads=1)]),
                    fn("mid", [call("k1", "leaf"), access("a1", "shared", writes=1)]),
                    fn("leaf", [compute("c0")]),
                ],
                arrays=[array("shared", 8), array("top_only", 4)],
            )
        )
        sub = extract_subdesign(d, "mid")
        assert sub.top == "mid"
        assert {f.name for f in sub.functions} == {"mid", "leaf"}
        assert [a.name for a in sub.arrays] == ["shared"]
        assert sub.test_vectors == ()
        # The extracted design is itself valid and measurable.
        assert function_latency(sub, "mid") == function_latency(d, "mid")


class TestExternalEvaluator:
    def test_builtin_factory(self):
        assert isinstance(make_evaluator("builtin"), BuiltinEvaluator)
        with pytest.raises(ValueError):
            make_evaluator("mystery")

    def test_external_round_trip(self, tmp_path):
        script = tmp_path / "echo_metrics.py"
        script.write_text(
            "import json, sys\n"
            "doc = json.load(sys.stdin)\n"
            "n = len(doc.get('functions', []))\n"
            "print(json.dumps({'latency': 100 + n, 'area': 50}))\n"
        )
        d = build(design_doc([fn("main", [compute("a")])]))
        ev = ExternalEvaluator(f"python3 {script}")
        m = ev.design_metrics(d)
        assert (m.latency, m.area) == (101, 50)

    def test_external_failure_raises_adapter_error(self, tmp_path):
        script = tmp_path / "boom.py"
        script.write_text("import sys; sys.exit(3)\n")
        d = build(design_doc([fn("main", [compute("a")])]))
        with pytest.raises(AdapterError, match="exited 3"):
            ExternalEvaluator(f"python3 {script}").design_metrics(d)

    def test_external_garbage_raises_adapter_error(self, tmp_path):
        script = tmp_path / "garbage.py"
        script.write_text("import sys; sys.stdin.read(); print('not json')\n")
        d = build(design_doc([fn("main", [compute("a")])]))
        with pytest.raises(AdapterError, match="bad metrics"):
            ExternalEvaluator(f"python3 {script}").design_metrics(d)

    def test_external_timeout(self, tmp_path, monkeypatch):
        script = tmp_path / "sleepy.py"
        script.write_text("import time; time.sleep(30)\n")
        monkeypatch.setenv("FORGE_ADAPTER_TIMEOUT", "0.2")
        d = build(design_doc([fn("main", [compute("a")])]))
        with pytest.raises(AdapterError, match="timed out"):
            ExternalEvaluator(f"python3 {script}").design_metrics(d)
