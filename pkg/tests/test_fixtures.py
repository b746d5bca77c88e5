"""Bundled fixture designs: vector audits, frozen baselines, model shapes.

Expected baseline metrics were derived by hand from the cost rules
(depths and initiation intervals per loop, summed over the call tree)
and cross-checked against the interpreter-validated designs before
being frozen here.
"""

from __future__ import annotations

import pytest

from forge.costmodel import BuiltinEvaluator
from forge.fixtures import fixture_names, load_fixture
from forge.ilp.model import (
    Leaf,
    Max,
    Scale,
    Sum,
    build_latency_model,
    eval_model,
    model_leaves,
)
from forge.interp import run_test_vectors
from forge.stage1 import search_function

ALL_NAMES = ("aes", "kmeans", "nw", "stream", "syn5", "syn6")

# name -> (baseline latency, baseline area), from the cost rules by hand.
BASELINES = {
    "aes": (2176, 238),
    "kmeans": (432, 258),
    "nw": (130, 129),
    "stream": (64, 86),
    "syn5": (120, 122),
    "syn6": (90, 108),
}


class TestLoader:
    def test_names_sorted_and_complete(self):
        assert fixture_names() == ALL_NAMES

    def test_unknown_name_lists_alternatives(self):
        with pytest.raises(FileNotFoundError, match="syn5"):
            load_fixture("does-not-exist")

    def test_loading_validates(self):
        for name in ALL_NAMES:
            d = load_fixture(name)
            assert d.top in {f.name for f in d.functions}


class TestVectors:
    """Every fixture ships at least two vectors and all of them replay."""

    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_vectors_pass(self, name):
        d = load_fixture(name)
        assert len(d.test_vectors) >= 2
        run_test_vectors(d)  # raises on any mismatch


class TestBaselines:
    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_frozen_metrics(self, name):
        m = BuiltinEvaluator().design_metrics(load_fixture(name))
        assert (m.latency, m.area) == BASELINES[name]


class TestModelShapes:
    """The latency composition trees the selector optimizes over."""

    def test_syn5(self):
        node = build_latency_model(load_fixture("syn5"))
        assert node == Scale(
            5,
            Max(
                (
                    Sum((Leaf("f"), Leaf("o"))),
                    Scale(2, Leaf("f")),
                    Sum((Leaf("e"), Leaf("f"))),
                )
            ),
        )

    def test_syn6(self):
        node = build_latency_model(load_fixture("syn6"))
        assert node == Scale(
            5, Sum((Max((Leaf("f"), Leaf("o"))), Scale(2, Leaf("e"))))
        )

    def test_nw(self):
        node = build_latency_model(load_fixture("nw"))
        assert node == Sum((Leaf("fill"), Leaf("trace"), Leaf("emit")))

    def test_aes_coefficients(self):
        node = build_latency_model(load_fixture("aes"))
        names = model_leaves(node)
        assert set(names) == {
            "init",
            "expand_key",
            "add_key",
            "sub_bytes",
            "shift_rows",
            "mix_cols",
        }
        # Read each function's multiplier off the flattened model by
        # evaluating unit-vector bindings.
        zero = {n: 0 for n in names}
        coeff = {}
        for n in names:
            one = dict(zero, **{n: 1})
            coeff[n] = eval_model(node, one)
        assert coeff == {
            "init": 1,
            "expand_key": 1,
            "add_key": 11,
            "sub_bytes": 10,
            "shift_rows": 10,
            "mix_cols": 9,
        }

    def test_kmeans(self):
        node = build_latency_model(load_fixture("kmeans"))
        assert node == Sum((Leaf("assign"), Leaf("update")))

    def test_stream(self):
        node = build_latency_model(load_fixture("stream"))
        assert node == Sum(
            (Max((Leaf("gather"), Leaf("scatter"))), Leaf("norm"))
        )

    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_model_matches_baseline(self, name):
        """Evaluating the tree at each leaf's own latency reproduces the
        whole-design latency, i.e. the model is exact for the baseline."""
        d = load_fixture(name)
        node = build_latency_model(d)
        ev = BuiltinEvaluator()
        bind = {f: ev.function_metrics(d, f).latency for f in model_leaves(node)}
        assert eval_model(node, bind) == BASELINES[name][0]


class TestNwLadderProperties:
    """The nw fixture carries the two ladder behaviours the search must
    surface: port contention that makes full unroll a regression, and a
    closed-form tail that beats executing the loop."""

    def test_full_unroll_regresses_under_contention(self):
        d = load_fixture("nw")
        table = search_function(d, "fill", BuiltinEvaluator())
        by_label = {v.label: v for v in table.variants}
        assert "v5" in by_label and "v2" in by_label
        assert by_label["v5"].metrics.latency > by_label["v2"].metrics.latency

    def test_closed_form_beats_loop(self):
        d = load_fixture("nw")
        table = search_function(d, "emit", BuiltinEvaluator())
        by_label = {v.label: v for v in table.variants}
        assert "v6" in by_label
        assert by_label["v6"].metrics.latency < by_label["v0"].metrics.latency
