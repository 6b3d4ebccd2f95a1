import random

import pytest
from hypothesis import given, settings, strategies as st

from graph2sfiles.datagen import generate
from graph2sfiles.flowgraph import FlowsheetGraph, is_isomorphic
from graph2sfiles.sfiles import (EOS_ID, PAD_ID, SOS_ID, UNK_ID, SfilesError, SfilesLexError, SfilesParseError,
                                 TokenKind, Vocabulary, canonicalize, join_tokens, parse, serialize, tokenize,
                                 try_canonicalize, write_random)

from conftest import CASE_PREDICTIONS, DISTILLATION

K = TokenKind


def texts(s):
    return [t.text for t in tokenize(s)]


# ---------------------------------------------------------------- lexer

def test_tokenize_distillation_example():
    assert texts(DISTILLATION) == ["(raw)", "(hex)", "{1}", "(dist)", "[", "{bout}", "(prod)", "]", "{tout}",
                                   "(prod)", "n|", "(raw)", "(hex)", "{1}", "(prod)"]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_signal_fragment():
    toks = tokenize("(C){FC}_1(v)<_1")
    assert [t.text for t in toks] == ["(C)", "{FC}", "_1", "(v)", "<_1"]
    assert [t.kind for t in toks] == [K.UNIT, K.CONTROL_TAG, K.SIGNAL_DEF, K.UNIT, K.SIGNAL_REF]
    assert toks[2].number == 1


def test_maximal_munch():
    assert [t.kind for t in tokenize("<_3<&|&|<1<%12%12")] == [
        K.SIGNAL_REF, K.INCOMING_OPEN, K.INCOMING_MARK, K.INCOMING_CLOSE, K.RECYCLE_REF, K.RECYCLE_REF,
        K.RECYCLE_DEF]
    assert tokenize("<%12")[0].number == 12


@pytest.mark.parametrize("s,offset", [("(raw)?(prod)", 5), ("(raw)(Ä)", 5), ("é(raw)", 0), ("(raw)é", 5)])
def test_lex_error_offset(s, offset):
    with pytest.raises(SfilesLexError) as ei:
        tokenize(s)
    assert ei.value.offset == offset


def test_lex_error_offset_counts_bytes():
    with pytest.raises(SfilesLexError) as ei:
        tokenize("(raw)" + "{1}" + "é")
    assert ei.value.offset == 8


def test_lossless_lexing(corpus):
    for pairs in corpus.values():
        for p in pairs:
            for s in (p.pfd, p.cef):
                assert join_tokens(tokenize(s)) == s


# ---------------------------------------------------------------- parser

def test_parse_distillation():
    g = parse(DISTILLATION)
    types = [n.type for n in g.nodes]
    assert types.count("hex") == 1 and types.count("dist") == 1
    assert types.count("raw") == 2 and types.count("prod") == 3
    dist = types.index("dist")
    assert sorted(e.attr.outlet_pos for e in g.out_edges(dist)) == [1, 2]
    hx = types.index("hex")
    assert sorted(e.attr.hex_in for e in g.in_edges(hx)) == [1, 2]
    assert sorted(e.attr.hex_out for e in g.out_edges(hx)) == [1, 2]
    # each train keeps its side on the way in and out
    for e in g.in_edges(hx):
        side = e.attr.hex_in
        src_type = g.nodes[e.src].type
        out = [o for o in g.out_edges(hx) if o.attr.hex_out == side]
        assert len(out) == 1
        assert (src_type, g.nodes[out[0].dst].type) in {("raw", "dist"), ("raw", "prod")}


def test_parse_minimal():
    g = parse("(raw)(prod)")
    assert len(g.nodes) == 2 and len(g.edges) == 1


def test_parse_case_prediction_controllers():
    g = parse(CASE_PREDICTIONS[0])
    assert g.count("C") == 9
    assert g.count("C") == CASE_PREDICTIONS[0].count("(C)")


def test_parse_accepts_token_list():
    assert is_isomorphic(parse(tokenize(DISTILLATION)), parse(DISTILLATION))


def test_recycle_creates_cycle():
    g = parse("(raw)(mix)<1(r)(splt)[(prod)]1")
    mix = [n.type for n in g.nodes].index("mix")
    assert {g.nodes[e.src].type for e in g.in_edges(mix)} == {"raw", "splt"}


def test_signal_edge_direction():
    g = parse("(raw)(C){FC}_1(v)<_1(prod)")
    sig = [e for e in g.edges if e.kind == "signal"]
    assert len(sig) == 1
    assert g.nodes[sig[0].src].type == "C" and g.nodes[sig[0].dst].type == "v"


def test_incoming_branch():
    g = parse("(raw)(mix)<&|(raw)&|(prod)")
    mix = [n.type for n in g.nodes].index("mix")
    assert [g.nodes[e.src].type for e in g.in_edges(mix)] == ["raw", "raw"]


@pytest.mark.parametrize("bad", [
    "(raw)[(prod)",          # unmatched bracket
    "(raw)](prod)",
    "(raw)(mix)1(prod)",     # dangling recycle
    "(raw)<1(prod)",
    "(raw)(C){FC}_1(prod)",  # dangling signal
    "(raw)(C)(v)(prod)",     # controller without letter code
    "(raw){FC}(prod)",       # letter code without controller
    "(raw)(hex){1}(prod)n|(raw)(hex){1}(prod)n|(raw)(hex){1}(prod)",  # three trains
    "(raw)(mix)<&|(raw)|(prod)",  # incoming branch without mark
    "{tout}",
])
def test_parse_errors(bad):
    with pytest.raises(SfilesError):
        parse(bad)


def test_parse_error_names_token_index():
    with pytest.raises(SfilesParseError) as ei:
        parse("(raw)(hex){1}(prod)n|(raw)(hex){1}(prod)n|(raw)(hex){1}(prod)")
    assert ei.value.index == 12  # the third {1}


# ---------------------------------------------------------------- writer

def test_serialize_distillation_graph():
    hand = FlowsheetGraph.build(
        ["raw", "hex", "dist", "prod", "prod", "raw", "prod"],
        [(0, 1, "stream", (0, 1, 0)), (1, 2, "stream", (0, 0, 1)), (2, 3, "stream", (2, 0, 0)),
         (2, 4, "stream", (1, 0, 0)), (5, 1, "stream", (0, 2, 0)), (1, 6, "stream", (0, 0, 2))])
    assert serialize(hand) == DISTILLATION


def test_serialize_minimal():
    assert serialize(FlowsheetGraph.build(["raw", "prod"], [(0, 1)])) == "(raw)(prod)"


def test_serialize_empty_graph():
    with pytest.raises(SfilesError):
        serialize(FlowsheetGraph([], []))


def test_serialize_pure_cycle():
    s = serialize(FlowsheetGraph.build(["mix", "r"], [(0, 1), (1, 0)]))
    assert is_isomorphic(parse(s), FlowsheetGraph.build(["mix", "r"], [(0, 1), (1, 0)]))


def test_many_recycles_use_two_digit_numbers():
    g = parse("(raw)(mix)" + "".join(f"<{i}" for i in range(1, 10)) + "<%10(r)(splt)"
              + "".join(f"[(splt){i}]" for i in range(1, 10)) + "%10")
    s = serialize(g)
    assert "%10" in s and "<%10" in s
    assert is_isomorphic(parse(s), g)


# ---------------------------------------------------------------- canonical form

def test_case_predictions_1_and_5_canonical_equal():
    assert canonicalize(CASE_PREDICTIONS[0]) == canonicalize(CASE_PREDICTIONS[4])
    assert CASE_PREDICTIONS[0] != CASE_PREDICTIONS[4]
    assert len({canonicalize(p) for p in CASE_PREDICTIONS}) == 4


def test_canonical_string_is_fixed_point():
    assert canonicalize(DISTILLATION) == DISTILLATION


@pytest.mark.parametrize("variant", [
    "(raw)(hex){1}(dist)[{tout}(prod)]{bout}(prod)n|(raw)(hex){1}(prod)",
    "(raw)(hex){1}(prod)n|(raw)(hex){1}(dist)[{bout}(prod)]{tout}(prod)",
    "(raw)(hex){1}(prod)n|(raw)(hex){1}(dist)[{tout}(prod)]{bout}(prod)",
])
def test_permuted_distillation_canonicalizes_to_listing(variant):
    assert canonicalize(variant) == DISTILLATION


def test_try_canonicalize():
    assert try_canonicalize("(raw)(prod") is None
    assert try_canonicalize("(raw)(prod)") == "(raw)(prod)"


def test_round_trip_and_idempotence(corpus):
    for pairs in corpus.values():
        for p in pairs:
            for s in (p.pfd, p.cef):
                g = parse(s)
                c = serialize(g)
                assert c == s  # stored strings are canonical
                assert is_isomorphic(parse(c), g)
                assert canonicalize(c) == c


@settings(max_examples=60)
@given(seed=st.integers(0, 10**6), rewrite=st.integers(0, 10**6))
def test_random_rewrites_share_canonical_form(seed, rewrite):
    p = generate(1, seed)[0]
    g = parse(p.cef)
    s = write_random(g, random.Random(rewrite))
    assert is_isomorphic(parse(s), g)
    assert canonicalize(s) == p.cef


@settings(max_examples=40)
@given(seed=st.integers(0, 10**6), perm_seed=st.integers(0, 10**6))
def test_canonical_form_ignores_node_numbering(seed, perm_seed):
    g = parse(generate(1, seed)[0].cef)
    perm = list(range(len(g.nodes)))
    random.Random(perm_seed).shuffle(perm)
    assert serialize(g.relabel(perm)) == serialize(g)


# ---------------------------------------------------------------- vocabulary

def test_vocabulary_reserved_ids():
    v = Vocabulary()
    assert [v.id(t) for t in ("<pad>", "<sos>", "<eos>", "<unk>")] == [PAD_ID, SOS_ID, EOS_ID, UNK_ID]
    assert (PAD_ID, SOS_ID, EOS_ID, UNK_ID) == (0, 1, 2, 3)


def test_vocabulary_bijection_and_unknown(tmp_path):
    v = Vocabulary.from_corpus([DISTILLATION, "(raw)(C){FC}_1(v)<_1(prod)"])
    for i, t in enumerate(v.itos):
        assert v.id(t) == i and v.text(i) == t
    assert v.id("(never)") == UNK_ID
    ids = v.encode(DISTILLATION)
    assert ids[0] == SOS_ID and ids[-1] == EOS_ID
    assert v.decode(ids + [PAD_ID, PAD_ID]) == DISTILLATION
    v.save(tmp_path / "vocab.txt")
    w = Vocabulary.load(tmp_path / "vocab.txt")
    assert w.itos == v.itos
    assert (tmp_path / "vocab.txt").read_text().splitlines()[4].count("\t") == 1


def test_vocabulary_rejects_bad_file(tmp_path):
    f = tmp_path / "v.txt"
    f.write_text("(raw)\t0\n")
    with pytest.raises(SfilesError):
        Vocabulary.load(f)
