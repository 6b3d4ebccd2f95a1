"""The full graph-to-SFILES model: encoder, decoder, vocabulary and node dictionary."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nm
from .decode import Prediction, beam_search, decode_to_sfiles, greedy
from .decoder import DecoderConfig, IncrementalDecoder, decoder_param_shapes, forward_batch
from .encoder import (ConfigError, EncoderConfig, GraphInput, check_params, encode, encoder_param_shapes,
                      graph_input, init_from_shapes)
from .flowgraph import FlowsheetGraph, NodeDictionary
from .numerics import Tensor
from .sfiles import PAD_ID, SOS_ID, Vocabulary, parse

CHECKPOINT_FILE = "checkpoint.g2sf"
VOCAB_FILE = "vocab.txt"
NODE_DICT_FILE = "node_types.txt"
MODEL_CONFIG_FILE = "model_config.json"


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def validate(self) -> None:
        self.encoder.validate()
        self.decoder.validate()

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig(**d.get("encoder", {})), DecoderConfig(**d.get("decoder", {})))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes = encoder_param_shapes(cfg.encoder)
    shapes.update(decoder_param_shapes(cfg.decoder, cfg.encoder.d_enc))
    return shapes


def pad_memory(H: Tensor, offsets: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Node rows of a disjoint union -> B x S x d with a B x S real-node mask."""
    sizes = np.diff(offsets)
    b, s = len(sizes), int(sizes.max())
    idx = np.zeros((b, s), dtype=np.int64)
    mask = np.zeros((b, s), dtype=bool)
    for i in range(b):
        idx[i, :sizes[i]] = np.arange(offsets[i], offsets[i + 1])
        mask[i, :sizes[i]] = True
    return nm.take_rows(H, idx), mask


class Graph2Sfiles:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor], vocab: Vocabulary,
                 node_dict: NodeDictionary):
        cfg.validate()
        if cfg.decoder.vocab_size != len(vocab):
            raise ConfigError(f"decoder vocab_size {cfg.decoder.vocab_size} != vocabulary size {len(vocab)}")
        if cfg.encoder.d_node != len(node_dict):
            raise ConfigError(f"encoder d_node {cfg.encoder.d_node} != node dictionary size {len(node_dict)}")
        shapes = param_shapes(cfg)
        if set(shapes) != set(params):
            missing = sorted(set(shapes) - set(params))
            extra = sorted(set(params) - set(shapes))
            raise ConfigError(f"parameters do not match the config (missing {missing[:3]}, unexpected {extra[:3]})")
        check_params(cfg.encoder, params)
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ConfigError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.cfg = cfg
        self.params = params
        self.vocab = vocab
        self.node_dict = node_dict

    @classmethod
    def initialize(cls, cfg: ModelConfig, vocab: Vocabulary, node_dict: NodeDictionary,
                   seed: int) -> "Graph2Sfiles":
        cfg.decoder.vocab_size = len(vocab)
        cfg.encoder.d_node = len(node_dict)
        rng = np.random.default_rng([seed, 0])
        return cls(cfg, init_from_shapes(param_shapes(cfg), rng), vocab, node_dict)

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    # ------------------------------------------------------------ forward

    def graph_input(self, graphs: Sequence[FlowsheetGraph]) -> GraphInput:
        return graph_input(graphs, self.node_dict, self.cfg.encoder)

    def encode(self, gi: GraphInput, train: bool = False, rng=None) -> Tensor:
        return encode(gi, self.cfg.encoder, self.params, train, rng)

    def logits(self, gi: GraphInput, tokens: np.ndarray, train: bool = False, rng=None) -> Tensor:
        """Teacher-forced logits B x T x V for decoder inputs ``tokens``."""
        mem, mask = pad_memory(self.encode(gi, train, rng), gi.offsets)
        return forward_batch(tokens, mem, mask, self.cfg.decoder, self.params, train, rng)

    # ------------------------------------------------------------ decoding

    def _memory(self, graph: FlowsheetGraph) -> np.ndarray:
        with nm.no_grad():
            return self.encode(self.graph_input([graph])).data

    def step_fn(self, graph: FlowsheetGraph):
        """Cached next-token log-prob function for decoding one graph.

        Calls must extend the previous call's prefixes by one token each, which
        is how :func:`beam_search` and :func:`greedy` use it.
        """
        inc = IncrementalDecoder(self.cfg.decoder, self.params, self._memory(graph))
        state = {"cache": None, "prefixes": None}

        def fn(prefixes: list[tuple[int, ...]]) -> np.ndarray:
            prev = state["prefixes"]
            if prev is None:
                if any(len(p) != 1 for p in prefixes):
                    raise ValueError("first decoding step must start from SOS only")
                cache = inc.start(len(prefixes))
            else:
                where = {p: i for i, p in enumerate(prev)}
                try:
                    idx = np.array([where[p[:-1]] for p in prefixes], dtype=np.int64)
                except KeyError:
                    raise ValueError("prefixes do not extend the previous step") from None
                cache = inc.reorder(state["cache"], idx)
            last = np.array([p[-1] for p in prefixes], dtype=np.int64)
            lp, state["cache"] = inc.step(cache, last, len(prefixes[0]) - 1)
            state["prefixes"] = list(prefixes)
            return lp

        return fn

    def decode_graph(self, graph: FlowsheetGraph, k: int = 5, max_len: int | None = None) -> list[Prediction]:
        limit = max_len or self.cfg.decoder.max_len
        banned = (PAD_ID, SOS_ID)
        if k == 1:
            hyps = [greedy(self.step_fn(graph), limit, banned=banned)]
        else:
            hyps = beam_search(self.step_fn(graph), k, limit, banned=banned)
        return decode_to_sfiles(hyps, self.vocab)

    def predict(self, pfd: str | FlowsheetGraph, k: int = 5, max_len: int | None = None) -> list[Prediction]:
        graph = parse(pfd) if isinstance(pfd, str) else pfd
        return self.decode_graph(graph, k, max_len)

    # ------------------------------------------------------------ persistence

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        nm.save_arrays(d / CHECKPOINT_FILE, {k: v.data for k, v in self.params.items()})
        self.vocab.save(d / VOCAB_FILE)
        self.node_dict.save(d / NODE_DICT_FILE)
        (d / MODEL_CONFIG_FILE).write_text(json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        return d / CHECKPOINT_FILE

    @classmethod
    def load(cls, directory) -> "Graph2Sfiles":
        d = Path(directory)
        if d.is_file():
            d = d.parent
        cfg = ModelConfig.from_dict(json.loads((d / MODEL_CONFIG_FILE).read_text()))
        arrays = nm.load_arrays(d / CHECKPOINT_FILE)
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        return cls(cfg, params, Vocabulary.load(d / VOCAB_FILE), NodeDictionary.load(d / NODE_DICT_FILE))

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_params(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            self.params[k].data = v.copy()
