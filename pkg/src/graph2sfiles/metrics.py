"""CEF accuracy, PFD reconstruction accuracy and BLEU, each at top-1 and top-k.

Every prediction is canonicalized before scoring, so two strings that describe
the same flowsheet always score the same.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

from .datagen import SamplePair, WITHOUT_VALVES
from .decode import Prediction
from .flowgraph import GraphError, strip_control
from .sfiles import SfilesError, canonicalize, parse, serialize, tokenize

log = logging.getLogger(__name__)

BLEU_MAX_N = 10


@lru_cache(maxsize=65536)
def _canon(s: str) -> str | None:
    try:
        return canonicalize(s)
    except (SfilesError, GraphError):
        return None


@lru_cache(maxsize=65536)
def _stripped(s: str, also_valves: bool) -> str | None:
    try:
        return serialize(strip_control(parse(s), also_valves))
    except (SfilesError, GraphError):
        return None


def _tokens(s: str) -> list[str]:
    try:
        return [t.text for t in tokenize(s)]
    except SfilesError:
        return []


def _texts(preds) -> list[str]:
    return [p.text if isinstance(p, Prediction) else p for p in preds]


def cef_accuracy(preds: Sequence[str], truth: str, k: int | None = None) -> int:
    """1 if one of the first ``k`` predictions is the same flowsheet as ``truth``."""
    target = _canon(truth)
    if target is None:
        raise SfilesError(f"ground truth does not parse: {truth!r}")
    return int(any(_canon(p) == target for p in _texts(preds)[:k]))


def pfd_reconstruction_accuracy(preds: Sequence[str], input_pfd: str, also_valves: bool = False,
                                k: int | None = None) -> int:
    """1 if one of the first ``k`` predictions, with its control structure
    removed, is the same flowsheet as ``input_pfd``."""
    target = _canon(input_pfd)
    if target is None:
        raise SfilesError(f"input PFD does not parse: {input_pfd!r}")
    return int(any(_stripped(p, also_valves) == target for p in _texts(preds)[:k]))


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(pred: Sequence[str], truth: Sequence[str], max_n: int = BLEU_MAX_N) -> float:
    """Sentence BLEU (0-100) with clipped n-gram precisions for n up to ``max_n``.

    Orders longer than either sequence have no n-grams and are left out of
    the geometric mean. The brevity penalty is the usual exp(1 - r/c).
    """
    c, r = len(pred), len(truth)
    if c == 0 or r == 0:
        return 0.0
    top = min(max_n, c, r)
    log_sum = 0.0
    for n in range(1, top + 1):
        p, t = _ngrams(pred, n), _ngrams(truth, n)
        hits = sum(min(cnt, t[g]) for g, cnt in p.items())
        if hits == 0:
            return 0.0
        log_sum += math.log(hits / (c - n + 1))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_sum / top)


def window_match(pred: Sequence[str], truth: Sequence[str], size: int = BLEU_MAX_N) -> float:
    """Alternative reading of segment scoring: percentage of the ground truth's
    consecutive ``size``-token windows reproduced at the same offset."""
    if not truth:
        return 0.0
    wins = range(0, len(truth), size)
    hit = sum(1 for i in wins if list(pred[i:i + size]) == list(truth[i:i + size]))
    return 100.0 * hit / len(wins)


def sfiles_bleu(pred: str, truth: str, max_n: int = BLEU_MAX_N, windows: bool = False) -> float:
    """BLEU on canonical token sequences; an unparseable prediction is scored on its raw tokens."""
    t = _tokens(_canon(truth) or truth)
    canon = _canon(pred)
    p = _tokens(canon if canon is not None else pred)
    return window_match(p, t, max_n) if windows else bleu(p, t, max_n)


class Predictor(Protocol):
    def predict(self, pfd: str, k: int = 5, max_len: int | None = None) -> list: ...


class PlaybackModel:
    """Stub that answers every known PFD with its stored CEF.

    Several CEFs can share one PFD, so repeated queries for the same PFD
    replay its CEFs in the order the pairs were given, wrapping around.
    """

    def __init__(self, pairs: Sequence[SamplePair]):
        self.table: dict[str | None, list[str]] = {}
        for p in pairs:
            self.table.setdefault(_canon(p.pfd), []).append(p.cef)
        self.calls: Counter = Counter()

    def predict(self, pfd: str, k: int = 5, max_len: int | None = None) -> list[Prediction]:
        key = _canon(pfd)
        cefs = self.table.get(key)
        if not cefs:
            return []
        i = self.calls[key] % len(cefs)
        self.calls[key] += 1
        return [Prediction(cefs[i], 0.0, True)]


@dataclass
class EvalReport:
    k: int
    n: int
    cef_top1: float
    cef_topk: float
    pfd_top1: float
    pfd_topk: float
    bleu_top1: float
    bleu_topk: float
    invalid_top1: int
    invalid_topk: int
    samples: list = field(default_factory=list, repr=False)

    def validate(self) -> None:
        for a, b in (("cef_top1", "cef_topk"), ("pfd_top1", "pfd_topk"), ("bleu_top1", "bleu_topk")):
            lo, hi = getattr(self, a), getattr(self, b)
            if not (0.0 <= lo <= hi <= 100.0):
                raise ValueError(f"{a}={lo} / {b}={hi} violate 0 <= top-1 <= top-k <= 100")

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("samples")
        return d


def evaluate(model: Predictor, pairs: Sequence[SamplePair], k: int = 5, max_len: int | None = None,
             train_pairs: Sequence[SamplePair] | None = None, windows: bool = False) -> EvalReport:
    """Decode every test PFD with beam width ``k`` and score the ranked predictions."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if train_pairs is not None:
        seen = {_canon(p.cef) for p in train_pairs}
        overlap = sum(1 for p in pairs if _canon(p.cef) in seen)
        if overlap:
            log.warning("%d of %d evaluation pairs also occur in the training data", overlap, len(pairs))
    tot = dict.fromkeys(("cef1", "cefk", "pfd1", "pfdk", "bleu1", "bleuk", "bad1", "badk"), 0.0)
    samples = []
    for pair in pairs:
        texts = _texts(model.predict(pair.pfd, k, max_len))[:k]
        strip_valves = pair.variant == WITHOUT_VALVES
        bad = [_canon(t) is None for t in texts]
        scores = [sfiles_bleu(t, pair.cef, windows=windows) for t in texts]
        row = {
            "cef1": cef_accuracy(texts, pair.cef, 1), "cefk": cef_accuracy(texts, pair.cef, k),
            "pfd1": pfd_reconstruction_accuracy(texts, pair.pfd, strip_valves, 1),
            "pfdk": pfd_reconstruction_accuracy(texts, pair.pfd, strip_valves, k),
            "bleu1": scores[0] if scores else 0.0, "bleuk": max(scores, default=0.0),
            "bad1": int(bool(bad) and bad[0]), "badk": sum(bad),
        }
        for key, v in row.items():
            tot[key] += v
        samples.append({"pfd": pair.pfd, "truth": pair.cef, "predictions": texts, **row})
    n = len(pairs)

    def pct(key):
        return 100.0 * tot[key] / n if n else 0.0

    rep = EvalReport(k, n, pct("cef1"), pct("cefk"), pct("pfd1"), pct("pfdk"),
                     tot["bleu1"] / n if n else 0.0, tot["bleuk"] / n if n else 0.0,
                     int(tot["bad1"]), int(tot["badk"]), samples)
    rep.validate()
    return rep
