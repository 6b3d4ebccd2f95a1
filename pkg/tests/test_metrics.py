import logging
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from graph2sfiles.datagen import WITHOUT_VALVES, SamplePair, generate
from graph2sfiles.decode import Prediction
from graph2sfiles.flowgraph import strip_control
from graph2sfiles.metrics import (EvalReport, PlaybackModel, bleu, cef_accuracy, evaluate,
                                  pfd_reconstruction_accuracy, sfiles_bleu, window_match)
from graph2sfiles.sfiles import SfilesError, parse, serialize, write_random

from conftest import CASE_PREDICTIONS, CASE_TRUTH

CASE_PFD = serialize(strip_control(parse(CASE_TRUTH)))


# ---------------------------------------------------------------- BLEU hand cases

def test_bleu_identical():
    assert bleu(list("abc"), list("abc")) == 100.0


def test_bleu_disjoint():
    assert bleu(list("abc"), list("xyz")) == 0.0


def test_bleu_three_orders():
    # p1 = 3/4, p2 = 2/3, p3 = 1/2, equal lengths
    got = bleu(list("abcd"), list("abce"), max_n=3)
    assert got == pytest.approx(100 * (0.75 * (2 / 3) * 0.5) ** (1 / 3), abs=1e-9)


def test_bleu_brevity_penalty():
    # both orders match exactly; c=2, r=4
    assert bleu(list("ab"), list("abcd")) == pytest.approx(100 * math.exp(-1), abs=1e-9)


def test_bleu_clipped_counts():
    assert bleu(list("aaa"), list("ab"), max_n=1) == pytest.approx(100 / 3, abs=1e-9)


def test_bleu_short_sequences_drop_empty_orders():
    # 5 tokens: orders 6..10 have no n-grams and are left out; 1..5 all match
    assert bleu(list("abcde"), list("abcde")) == 100.0
    # c=4 vs r=5 -> orders 1..4, precisions 1, BP = exp(1 - 5/4)
    assert bleu(list("abcd"), list("abcde")) == pytest.approx(100 * math.exp(-0.25), abs=1e-9)


def test_bleu_hex_tag_example():
    # trigram "(raw)(hex)(prod)" never occurs in the truth, so the score is 0
    pred = ["(raw)", "(hex)", "(prod)"]
    truth = ["(raw)", "(hex)", "{1}", "(prod)"]
    assert bleu(pred, truth) == 0.0
    # up to bigrams: p1 = 1, p2 = 1/2, BP = exp(1 - 4/3)
    assert bleu(pred, truth, max_n=2) == pytest.approx(100 * math.sqrt(0.5) * math.exp(-1 / 3), abs=1e-9)


def test_bleu_twelve_tokens_uses_ten_orders():
    truth = [f"t{i}" for i in range(12)]
    pred = truth[:11] + ["x"]
    # n-gram hits: 12-n of the 13-n predicted n-grams for n = 1..10
    want = 100 * math.exp(sum(math.log((12 - n) / (13 - n)) for n in range(1, 11)) / 10)
    assert bleu(pred, truth) == pytest.approx(want, abs=1e-9)


def test_bleu_empty():
    assert bleu([], ["a"]) == 0.0 and bleu(["a"], []) == 0.0


def test_window_match():
    truth = [str(i) for i in range(25)]
    pred = truth[:10] + ["x"] * 15
    assert window_match(pred, truth) == pytest.approx(100 / 3)
    assert window_match(truth, truth) == 100.0


def test_sfiles_bleu_canonicalizes():
    assert sfiles_bleu(CASE_PREDICTIONS[4], CASE_PREDICTIONS[0]) == 100.0
    # unparseable but lexable: scored on raw tokens, p1 = 3/4, p2 = 2/3, p3 = 1/2
    assert sfiles_bleu("(raw)(pp)(prod)[", "(raw)(pp)(prod)") == pytest.approx(100 * 0.25 ** (1 / 3), abs=1e-9)
    assert sfiles_bleu("(raw)(prod", "(raw)(prod)") == 0.0  # does not even lex


# ---------------------------------------------------------------- accuracies

def test_cef_accuracy_canonical_pair():
    assert cef_accuracy([CASE_PREDICTIONS[4]], CASE_PREDICTIONS[0]) == 1
    assert cef_accuracy([CASE_PREDICTIONS[0]], CASE_PREDICTIONS[4]) == 1


def test_cef_accuracy_case_ranking():
    assert cef_accuracy(CASE_PREDICTIONS, CASE_TRUTH, 1) == 0
    assert cef_accuracy(CASE_PREDICTIONS, CASE_TRUTH, 2) == 0
    assert cef_accuracy(CASE_PREDICTIONS, CASE_TRUTH, 3) == 1
    assert cef_accuracy(CASE_PREDICTIONS, CASE_TRUTH) == 1


def test_cef_accuracy_changed_tag_and_garbage():
    assert cef_accuracy([CASE_TRUTH.replace("{TI}", "{TC}")], CASE_TRUTH) == 0
    assert cef_accuracy(["(raw)(", "not sfiles"], CASE_TRUTH) == 0
    with pytest.raises(SfilesError):
        cef_accuracy([CASE_TRUTH], "(raw)(")


def test_pfd_reconstruction_case():
    for k in (1, 5):
        assert pfd_reconstruction_accuracy(CASE_PREDICTIONS, CASE_PFD, k=k) == 1
    assert pfd_reconstruction_accuracy([CASE_TRUTH], CASE_PFD) == 1
    extra = CASE_TRUTH.replace("(splt)", "(r)(splt)", 1)
    assert pfd_reconstruction_accuracy([extra], CASE_PFD) == 0


def test_pfd_reconstruction_without_valves():
    pfd = serialize(strip_control(parse(CASE_TRUTH), also_valves=True))
    assert pfd_reconstruction_accuracy([CASE_TRUTH], pfd, also_valves=True) == 1
    assert pfd_reconstruction_accuracy([CASE_TRUTH], pfd, also_valves=False) == 0


@settings(max_examples=25)
@given(seed=st.integers(0, 10**6), rw=st.integers(0, 10**6))
def test_metrics_ignore_spelling(seed, rw):
    p = generate(1, seed)[0]
    other = write_random(parse(p.cef), random.Random(rw))
    assert cef_accuracy([other], p.cef) == 1
    assert pfd_reconstruction_accuracy([other], p.pfd) == 1
    assert sfiles_bleu(other, p.cef) == 100.0


# ---------------------------------------------------------------- evaluate

def test_playback_scores_100(corpus):
    for pairs in corpus.values():
        rep = evaluate(PlaybackModel(pairs[:60]), pairs[:60], k=5)
        assert (rep.cef_top1, rep.cef_topk, rep.pfd_top1, rep.pfd_topk, rep.bleu_top1, rep.bleu_topk) == (100,) * 6
        assert rep.invalid_top1 == rep.invalid_topk == 0 and rep.n == 60


class Rewriter:
    """Answers with the truth spelled differently, ranked after a wrong guess."""

    def __init__(self, pairs, seed):
        self.table = {p.pfd: p.cef for p in pairs}
        self.rng = random.Random(seed)

    def predict(self, pfd, k=5, max_len=None):
        truth = self.table[pfd]
        wrong = truth.replace("(C){FC}", "(C){LC}", 1)
        return [Prediction("(raw)(", -1.0, False), Prediction(wrong, -2.0, True),
                Prediction(write_random(parse(truth), self.rng), -3.0, True)]


def distinct_pfds(pairs, n):
    seen, out = set(), []
    for p in pairs:
        if p.pfd not in seen:
            seen.add(p.pfd)
            out.append(p)
    return out[:n]


def test_playback_replays_shared_pfds():
    a, b = CASE_PREDICTIONS[0], CASE_TRUTH
    pairs = [SamplePair(CASE_PFD, a), SamplePair(CASE_PFD, b)]
    rep = evaluate(PlaybackModel(pairs), pairs, k=1)
    assert rep.cef_top1 == 100.0


def test_evaluate_topk_and_dominance(corpus):
    pairs = distinct_pfds(corpus[WITHOUT_VALVES], 40)
    rep = evaluate(Rewriter(pairs, 0), pairs, k=3)
    assert rep.cef_top1 == 0 and rep.cef_topk == 100
    assert rep.pfd_topk == 100 and rep.pfd_top1 == 0
    assert rep.invalid_top1 == 40 and rep.invalid_topk == 40
    assert rep.bleu_topk == 100.0
    for s in rep.samples:
        assert s["pfd1"] >= s["cef1"] and s["pfdk"] >= s["cefk"]
        assert s["cef1"] <= s["cefk"]
    rep.validate()
    assert evaluate(Rewriter(pairs, 0), pairs, k=3).summary() == rep.summary()


def test_evaluate_warns_on_overlap(corpus, caplog):
    pairs = corpus[WITHOUT_VALVES][:5]
    with caplog.at_level(logging.WARNING):
        evaluate(PlaybackModel(pairs), pairs, k=1, train_pairs=pairs[:2])
    assert "2 of 5" in caplog.text


def test_report_validation():
    with pytest.raises(ValueError):
        EvalReport(5, 1, 50.0, 40.0, 0, 0, 0, 0, 0, 0).validate()
    with pytest.raises(ValueError):
        evaluate(PlaybackModel([]), [], k=0)
