"""Greedy and beam-search decoding over any next-token log-probability function.

A step function maps a list of token prefixes to an array of log-probabilities
(one row per prefix). Beams are ranked by raw joint log-probability with no
length normalisation; finished hypotheses are kept and compete with live ones
in the final ranking. Equal scores are ordered by token ids, lexicographically.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .sfiles import EOS_ID, PAD_ID, SOS_ID, Vocabulary

StepFn = Callable[[list[tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool

    def sort_key(self):
        return (-self.logprob, self.tokens)


@dataclass
class DecodeConfig:
    k: int = 5
    max_len: int = 512

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("beam width k must be at least 1")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")


def beam_search(step_fn: StepFn, k: int, max_len: int, sos: int = SOS_ID, eos: int = EOS_ID,
                banned: Iterable[int] = ()) -> list[Hypothesis]:
    """Top-``k`` hypotheses by joint log-probability.

    ``max_len`` counts generated tokens (SOS excluded). Beams that reach it
    without EOS are returned unfinished. ``banned`` token ids are never emitted.
    Finished hypotheses go to their own pool of size ``k`` instead of taking a
    live slot, and every live beam always proposes EOS, so a short sequence is
    never crowded out by live prefixes that later score worse.
    """
    if k < 1:
        raise ValueError("beam width k must be at least 1")
    banned = sorted(set(banned))
    live = [Hypothesis((sos,), 0.0, False)]
    done: list[Hypothesis] = []
    for _ in range(max_len):
        if not live:
            break
        # extensions only lower the score: stop once no live beam can enter the pool
        if len(done) >= k and live[0].logprob < done[k - 1].logprob:
            live = []
            break
        lp = np.array(step_fn([b.tokens for b in live]), dtype=np.float64)
        if banned:
            lp[:, banned] = -np.inf
        cands = []
        for b, row in zip(live, lp):
            if np.isfinite(row[eos]):
                done.append(Hypothesis(b.tokens + (eos,), b.logprob + float(row[eos]), True))
            ext = row.copy()
            ext[eos] = -np.inf
            # only the k best extensions of one beam can survive
            for tok in np.argsort(-ext, kind="stable")[:k]:
                if np.isfinite(ext[tok]):
                    cands.append(Hypothesis(b.tokens + (int(tok),), b.logprob + float(ext[tok]), False))
        cands.sort(key=Hypothesis.sort_key)
        live = cands[:k]
        done = sorted(done, key=Hypothesis.sort_key)[:k]
    return sorted(done + live, key=Hypothesis.sort_key)[:k]


def greedy(step_fn: StepFn, max_len: int, sos: int = SOS_ID, eos: int = EOS_ID,
           banned: Iterable[int] = ()) -> Hypothesis:
    """Append the arg-max token (lowest id on ties) until EOS or ``max_len``."""
    banned = sorted(set(banned))
    tokens = (sos,)
    total = 0.0
    for _ in range(max_len):
        row = np.array(step_fn([tokens])[0], dtype=np.float64)
        if banned:
            row[banned] = -np.inf
        tok = int(np.argmax(row))
        tokens += (tok,)
        total += float(row[tok])
        if tok == eos:
            return Hypothesis(tokens, total, True)
    return Hypothesis(tokens, total, False)


def exhaustive_topk(step_fn: StepFn, k: int, max_len: int, vocab_size: int, sos: int = SOS_ID,
                    eos: int = EOS_ID) -> list[Hypothesis]:
    """Reference answer: enumerate every sequence of at most ``max_len`` generated tokens."""
    done: list[Hypothesis] = []
    frontier = [Hypothesis((sos,), 0.0, False)]
    for depth in range(max_len):
        nxt = []
        lp = np.array(step_fn([h.tokens for h in frontier]), dtype=np.float64) if frontier else []
        for h, row in zip(frontier, lp):
            for tok in range(vocab_size):
                cand = Hypothesis(h.tokens + (tok,), h.logprob + float(row[tok]), tok == eos)
                (done if cand.finished else nxt).append(cand)
        frontier = nxt
    done.extend(frontier)
    return sorted(done, key=Hypothesis.sort_key)[:k]


@dataclass(frozen=True)
class Prediction:
    text: str
    logprob: float
    finished: bool


def decode_to_sfiles(hyps: Sequence[Hypothesis], vocab: Vocabulary) -> list[Prediction]:
    """Token ids back to text with SOS/EOS/PAD removed; malformed text is kept as is."""
    out = []
    for h in hyps:
        ids = [t for t in h.tokens if t not in (SOS_ID, PAD_ID)]
        if ids and ids[-1] == EOS_ID:
            ids = ids[:-1]
        out.append(Prediction("".join(vocab.text(i) for i in ids if i != EOS_ID), h.logprob, h.finished))
    return out
