"""Pair files, vocabulary building and mini-batches of (PFD graph, CEF tokens)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .datagen import SamplePair, WITH_VALVES
from .encoder import EncoderConfig, GraphInput, build_graph_input, laplacian_pe
from .flowgraph import FeatureMatrices, NodeDictionary, encode_features
from .sfiles import EOS_ID, PAD_ID, SOS_ID, UNK_ID, Vocabulary, parse, tokenize

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


def build_vocab(cefs: Sequence[str]) -> Vocabulary:
    if not cefs:
        raise DatasetError("cannot build a vocabulary from an empty corpus")
    return Vocabulary.from_corpus(cefs)


def write_pairs(path, pairs: Sequence[SamplePair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(f"{p.pfd}\t{p.cef}\n")


def read_pairs(path, variant: str = WITH_VALVES) -> list[SamplePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise DatasetError(f"{path}:{ln}: expected 'pfd<TAB>cef'")
            pairs.append(SamplePair(cols[0], cols[1], variant))
    return pairs


def load_splits(directory, variant: str = WITH_VALVES) -> dict[str, list[SamplePair]]:
    d = Path(directory)
    out = {}
    for name in SPLITS:
        f = d / f"{name}.tsv"
        if not f.exists():
            raise DatasetError(f"missing {f}")
        out[name] = read_pairs(f, variant)
    return out


@dataclass
class Example:
    """One pair with its graph features and target ids (SOS ... EOS) precomputed."""
    pair: SamplePair
    features: FeatureMatrices
    pe: np.ndarray
    target: np.ndarray


def numericalize(cef: str, vocab: Vocabulary, strict: bool = True) -> np.ndarray:
    ids = [vocab.id(t.text) for t in tokenize(cef)]
    if strict and UNK_ID in ids:
        bad = [t.text for t in tokenize(cef) if t.text not in vocab]
        raise DatasetError(f"target token {bad[0]!r} is not in the vocabulary")
    return np.array([SOS_ID] + ids + [EOS_ID], dtype=np.int64)


def prepare(pairs: Sequence[SamplePair], vocab: Vocabulary, node_dict: NodeDictionary,
            enc: EncoderConfig, strict: bool = True, max_len: int | None = None) -> list[Example]:
    out = []
    for p in pairs:
        g = parse(p.pfd)
        tgt = numericalize(p.cef, vocab, strict)
        if max_len is not None and len(tgt) - 1 > max_len:
            raise DatasetError(f"target of {len(tgt)} tokens exceeds max_len={max_len}")
        pe = laplacian_pe(g, enc.pe_dim) if enc.uses_pe else np.zeros((len(g.nodes), enc.pe_dim))
        out.append(Example(p, encode_features(g, node_dict), pe, tgt))
    return out


@dataclass
class Batch:
    graphs: GraphInput
    targets: np.ndarray    # B x T, SOS ... EOS then PAD
    pad_mask: np.ndarray   # B x T, True exactly at PAD positions
    examples: list

    @property
    def inputs(self) -> np.ndarray:
        return self.targets[:, :-1]

    @property
    def labels(self) -> np.ndarray:
        return self.targets[:, 1:]

    @property
    def label_mask(self) -> np.ndarray:
        """True where a label is a real token."""
        return ~self.pad_mask[:, 1:]


def collate(examples: Sequence[Example]) -> Batch:
    gi = build_graph_input([e.features for e in examples], [e.pe for e in examples])
    t = max(len(e.target) for e in examples)
    tg = np.full((len(examples), t), PAD_ID, dtype=np.int64)
    for i, e in enumerate(examples):
        tg[i, :len(e.target)] = e.target
    mask = np.zeros_like(tg, dtype=bool)
    for i, e in enumerate(examples):
        mask[i, len(e.target):] = True
    return Batch(gi, tg, mask, list(examples))


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


def make_batches(examples: Sequence[Example], batch_size: int, seed: int | None = None,
                 epoch: int = 0, bucket: int = 0) -> Iterator[Batch]:
    """Mini-batches in a seeded order that changes per epoch; ``seed=None`` keeps input order.

    With ``bucket > 0`` the shuffled order is cut into pools of ``bucket``
    batches, each pool is sorted by target length to reduce padding, and the
    resulting batches are shuffled again.
    """
    if batch_size < 1:
        raise DatasetError("batch_size must be at least 1")
    order = np.arange(len(examples)) if seed is None else epoch_order(len(examples), seed, epoch)
    chunks = []
    if bucket > 0:
        pool = bucket * batch_size
        for i in range(0, len(order), pool):
            part = sorted(order[i:i + pool], key=lambda j: len(examples[j].target))
            chunks.extend(part[k:k + batch_size] for k in range(0, len(part), batch_size))
        if seed is not None:
            perm = np.random.default_rng([seed, 3, epoch]).permutation(len(chunks))
            chunks = [chunks[i] for i in perm]
    else:
        chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    for c in chunks:
        yield collate([examples[j] for j in c])
