import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graph2sfiles.datagen import WITHOUT_VALVES, generate
from graph2sfiles.flowgraph import (DEFAULT_NODE_TYPES, EdgeAttr, FlowsheetGraph, GraphError, NodeDictionary,
                                    SpliceConflict, encode_features, graph_laplacian, is_isomorphic,
                                    strip_control, train_view)
from graph2sfiles.sfiles import canonicalize, parse, serialize

from conftest import CASE_PREDICTIONS, CASE_TRUTH, DISTILLATION

ND = NodeDictionary()


def edge_rows(s):
    g = parse(s)
    return g, encode_features(g, ND)


# ---------------------------------------------------------------- edge encoding

def test_top_outlet_row():
    g, fm = edge_rows("(raw)(dist)[{bout}(prod)]{tout}(prod)")
    dist = [n.type for n in g.nodes].index("dist")
    rows = {tuple(fm.edge_attr[k]) for k, e in enumerate(g.edges) if e.src == dist}
    assert rows == {(1, 0, 0), (2, 0, 0)}


def test_interior_edge_row():
    _, fm = edge_rows("(raw)(pp)(prod)")
    assert fm.edge_attr.tolist() == [[0, 0, 0], [0, 0, 0]]


def test_hex_side_two_inlet_row():
    g, fm = edge_rows(DISTILLATION)
    second_raw = [i for i, n in enumerate(g.nodes) if n.type == "raw"][1]
    k = next(k for k, e in enumerate(g.edges) if e.src == second_raw)
    assert fm.edge_attr[k].tolist() == [0, 2, 0]


@pytest.mark.parametrize("dim,value", list(itertools.product(range(3), range(3))))
def test_edge_attribute_table(dim, value):
    vec = [0, 0, 0]
    vec[dim] = value
    attr = EdgeAttr(*vec)
    assert attr.vector() == tuple(vec)
    names = ("outlet_pos", "hex_in", "hex_out")
    assert getattr(attr, names[dim]) == value


@pytest.mark.parametrize("bad", [(3, 0, 0), (0, -1, 0), (0, 0, 5)])
def test_edge_attribute_range(bad):
    with pytest.raises(GraphError):
        EdgeAttr(*bad)


def test_merge():
    assert EdgeAttr(1, 0, 0).merge(EdgeAttr(0, 2, 0)) == EdgeAttr(1, 2, 0)
    assert EdgeAttr(1, 0, 0).merge(EdgeAttr(1, 0, 0)) == EdgeAttr(1, 0, 0)
    with pytest.raises(SpliceConflict):
        EdgeAttr(1, 0, 0).merge(EdgeAttr(2, 0, 0))


# ---------------------------------------------------------------- node features

def test_node_dictionary_codes():
    assert ND["raw"] == 1 and ND["hex"] == 2
    assert len(ND) == len(DEFAULT_NODE_TYPES)
    with pytest.raises(GraphError, match="'(tank)'|tank"):
        ND["tank"]


def test_node_dictionary_round_trip(tmp_path):
    nd = NodeDictionary(["raw", "hex", "C/XY"])
    nd.save(tmp_path / "nd.txt")
    assert NodeDictionary.load(tmp_path / "nd.txt").keys == nd.keys


def test_one_hot_rows():
    g = parse("(raw)(C){FC}_1(v)<_1(prod)")
    fm = encode_features(g, ND)
    assert fm.node_x.shape == (4, len(ND))
    assert np.all(fm.node_x.sum(axis=1) == 1)
    for nd in g.nodes:
        assert fm.node_x[nd.id, ND[nd.key] - 1] == 1
    assert fm.edge_kind.tolist().count(1) == 1


def test_unknown_type_is_named():
    g = FlowsheetGraph.build(["raw", "tank"], [(0, 1)])
    with pytest.raises(GraphError, match="tank"):
        encode_features(g, ND)


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6), perm_seed=st.integers(0, 10**6))
def test_features_permute_with_nodes(seed, perm_seed):
    g = parse(generate(1, seed)[0].cef)
    perm = list(range(len(g.nodes)))
    random.Random(perm_seed).shuffle(perm)
    a, b = encode_features(g, ND), encode_features(g.relabel(perm), ND)
    inv = np.argsort(perm)
    assert np.array_equal(b.node_x[perm], a.node_x)
    assert np.array_equal(b.node_x, a.node_x[inv])
    # same edges in the same order, endpoints renamed
    assert np.array_equal(b.edge_index, np.array(perm)[a.edge_index])
    assert np.array_equal(b.edge_attr, a.edge_attr)


# ---------------------------------------------------------------- strip_control

def test_strip_case_predictions_agree():
    target = serialize(strip_control(parse(CASE_TRUTH)))
    for p in CASE_PREDICTIONS:
        assert serialize(strip_control(parse(p))) == target


def test_strip_without_controllers_is_identity():
    g = parse(DISTILLATION)
    assert is_isomorphic(strip_control(g), g)
    assert is_isomorphic(strip_control(g, True), g)


def test_strip_valve_chain():
    g = FlowsheetGraph.build(["raw", ("C", "FC"), "v", "prod"],
                             [(0, 1), (1, 2), (2, 3), (1, 2, "signal")])
    out = strip_control(g, also_valves=True)
    assert [n.type for n in out.nodes] == ["raw", "prod"]
    assert [(e.src, e.dst, e.kind) for e in out.edges] == [(0, 1, "stream")]


def test_strip_keeps_outlet_tag():
    g = parse("(raw)(dist)[{bout}(C){FC}(prod)]{tout}(prod)")
    out = strip_control(g)
    assert serialize(out) == canonicalize("(raw)(dist)[{bout}(prod)]{tout}(prod)")


def test_strip_conflict():
    # a controller between two differently tagged edges cannot be spliced
    g = FlowsheetGraph.build(["raw", "dist", ("C", "TC"), "prod"],
                             [(0, 1), (1, 2, "stream", (1, 0, 0)), (2, 3, "stream", (2, 0, 0))])
    with pytest.raises(SpliceConflict):
        strip_control(g)


def test_strip_is_idempotent_and_matches_stored_pfd(corpus):
    for variant, pairs in corpus.items():
        for p in pairs[:150]:
            s = strip_control(parse(p.cef), variant == WITHOUT_VALVES)
            assert serialize(s) == p.pfd
            assert serialize(strip_control(s, variant == WITHOUT_VALVES)) == p.pfd
            assert s.count("C") == 0
            if variant == WITHOUT_VALVES:
                assert s.count("v") == 0


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6), perm_seed=st.integers(0, 10**6))
def test_strip_commutes_with_relabeling(seed, perm_seed):
    g = parse(generate(1, seed)[0].cef)
    perm = list(range(len(g.nodes)))
    random.Random(perm_seed).shuffle(perm)
    assert serialize(strip_control(g.relabel(perm))) == serialize(strip_control(g))


# ---------------------------------------------------------------- laplacian

def test_laplacian_small():
    assert graph_laplacian(FlowsheetGraph.build(["raw", "prod"], [(0, 1)])).tolist() == [[1, -1], [-1, 1]]
    assert graph_laplacian(FlowsheetGraph.build(["raw"], [])).tolist() == [[0]]


def test_laplacian_distillation_trace():
    g = parse(DISTILLATION)
    undirected = {frozenset((e.src, e.dst)) for e in g.edges}
    assert len(undirected) == 6
    assert np.trace(graph_laplacian(g)) == 12


def test_laplacian_collapses_multi_edges():
    g = FlowsheetGraph.build(["mix", "r"], [(0, 1), (1, 0), (0, 1)])
    assert graph_laplacian(g).tolist() == [[1, -1], [-1, 1]]


@settings(max_examples=30)
@given(seed=st.integers(0, 10**6))
def test_laplacian_symmetric_zero_rows(seed):
    L = graph_laplacian(parse(generate(1, seed)[0].cef))
    assert np.array_equal(L, L.T)
    assert np.all(L.sum(axis=1) == 0)


# ---------------------------------------------------------------- model helpers

def test_record_round_trip():
    g = parse(CASE_TRUTH)
    h = FlowsheetGraph.from_record(g.to_record())
    assert h.nodes == g.nodes and h.edges == g.edges


def test_validate():
    parse(CASE_TRUTH).validate()
    with pytest.raises(GraphError):
        FlowsheetGraph.build(["prod", "raw"], [(0, 1)]).validate()
    with pytest.raises(GraphError):
        FlowsheetGraph.build(["raw", "v"], [(0, 1, "signal")]).validate()
    with pytest.raises(GraphError):
        FlowsheetGraph.build(["raw", "pp"], [(0, 1, "stream", (0, 1, 0))]).validate()


def test_relabel_needs_permutation():
    with pytest.raises(GraphError):
        parse("(raw)(prod)").relabel([0, 0])


def test_train_view_splits_two_train_hex():
    tv = train_view(parse(DISTILLATION))
    assert len(tv.unit) == 8
    assert len(tv.pairs) == 1


def test_isomorphism_respects_attributes():
    a = parse("(raw)(dist)[{bout}(pp)(prod)]{tout}(prod)")
    b = parse("(raw)(dist)[{tout}(pp)(prod)]{bout}(prod)")
    assert not is_isomorphic(a, b)
    assert is_isomorphic(a, a.relabel(list(reversed(range(len(a.nodes))))))
