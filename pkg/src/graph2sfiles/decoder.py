"""Autoregressive transformer decoder over an encoded graph.

Post-norm layout: each of the three blocks (causal self-attention,
cross-attention over graph memory, feed-forward) is added to its input and
layer-normalised. Queries in cross-attention come from the token stream;
keys and values come from the graph memory.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nm
from .encoder import ConfigError, init_from_shapes
from .numerics import Tensor
from .sfiles import SOS_ID

NEG_INF = -np.inf


@dataclass
class DecoderConfig:
    layers: int = 6
    d_dec: int = 128
    heads: int = 8
    ffn_dim: int = 2048
    dropout: float = 0.1
    max_len: int = 512
    vocab_size: int = 0

    def validate(self) -> None:
        if self.layers < 1 or self.d_dec < 1 or self.heads < 1 or self.ffn_dim < 1:
            raise ConfigError("decoder layers, d_dec, heads and ffn_dim must be positive")
        if self.d_dec % self.heads:
            raise ConfigError(f"d_dec={self.d_dec} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("decoder dropout must be in [0, 1)")
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the reserved tokens plus at least one token")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_pe(t: int, d: int) -> np.ndarray:
    """Component 2i is sin(t / 10000^(2i/d)), component 2i+1 the matching cos."""
    if t < 0:
        raise ValueError("position must be non-negative")
    return sinusoidal_table(t + 1, d)[t]


def sinusoidal_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    ang = pos / np.power(10000.0, i2 / d)
    out = np.zeros((length, d))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang[:, : d // 2])
    return out


def decoder_param_shapes(cfg: DecoderConfig, d_mem: int) -> dict[str, tuple]:
    d, f, v = cfg.d_dec, cfg.ffn_dim, cfg.vocab_size
    shapes: dict[str, tuple] = {"dec.emb": (v, d), "dec.out_w": (d, v), "dec.out_b": (v,)}
    for li in range(cfg.layers):
        p = f"dec.{li}."
        for w in ("sa_wq", "sa_wk", "sa_wv", "sa_wo", "ca_wq", "ca_wo"):
            shapes[p + w] = (d, d)
        shapes[p + "ca_wk"] = (d_mem, d)
        shapes[p + "ca_wv"] = (d_mem, d)
        for j in (1, 2, 3):
            shapes[p + f"ln{j}_g"] = (d,)
            shapes[p + f"ln{j}_b"] = (d,)
        shapes.update({p + "ffn_w1": (d, f), p + "ffn_b1": (f,), p + "ffn_w2": (f, d), p + "ffn_b2": (d,)})
    return shapes


def init_decoder_params(cfg: DecoderConfig, d_mem: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return init_from_shapes(decoder_param_shapes(cfg, d_mem), rng)


def _split(x: Tensor, m: int) -> Tensor:
    b, t, d = x.shape
    return nm.transpose(nm.reshape(x, (b, t, m, d // m)), (0, 2, 1, 3))


def _merge(x: Tensor) -> Tensor:
    b, m, t, dh = x.shape
    return nm.reshape(nm.transpose(x, (0, 2, 1, 3)), (b, t, m * dh))


def attention(xq: Tensor, xkv: Tensor, wq, wk, wv, wo, heads: int, bias: np.ndarray) -> Tensor:
    """Multi-head scaled dot-product attention; ``bias`` is added to the scores
    (0 for allowed pairs, -inf for masked ones) and broadcasts to B x m x T x S."""
    q = _split(xq @ wq, heads)
    k = _split(xkv @ wk, heads)
    v = _split(xkv @ wv, heads)
    s = (q @ nm.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(q.shape[-1])) + bias
    a = nm.softmax(s, axis=-1)
    return _merge(a @ v) @ wo


def causal_bias(t: int) -> np.ndarray:
    return np.triu(np.full((t, t), NEG_INF), k=1)


def memory_bias(mask: np.ndarray) -> np.ndarray:
    """B x S boolean (True = real node) -> additive bias B x 1 x 1 x S."""
    return np.where(mask, 0.0, NEG_INF)[:, None, None, :]


def check_prefix(tokens: np.ndarray, cfg: DecoderConfig) -> None:
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise ValueError("decoder input must be a non-empty prefix")
    if np.any(tokens[:, 0] != SOS_ID):
        raise ValueError("decoder prefix must start with SOS")
    if tokens.shape[1] > cfg.max_len:
        raise ValueError(f"prefix length {tokens.shape[1]} exceeds max_len={cfg.max_len}")


def forward_batch(tokens: np.ndarray, memory: Tensor, mem_mask: np.ndarray, cfg: DecoderConfig,
                  params: dict[str, Tensor], train: bool = False, rng=None) -> Tensor:
    """Logits B x T x V for prefixes ``tokens`` (B x T ints) over padded memory B x S x d_mem."""
    tokens = np.asarray(tokens, dtype=np.int64)
    check_prefix(tokens, cfg)
    t = tokens.shape[1]
    drop = cfg.dropout
    x = nm.take_rows(params["dec.emb"], tokens) + Tensor(sinusoidal_table(t, cfg.d_dec))
    x = nm.dropout(x, drop, train, rng)
    self_bias = causal_bias(t)
    cross_bias = memory_bias(mem_mask)
    for li in range(cfg.layers):
        p = f"dec.{li}."
        sa = attention(x, x, params[p + "sa_wq"], params[p + "sa_wk"], params[p + "sa_wv"],
                       params[p + "sa_wo"], cfg.heads, self_bias)
        x = nm.layer_norm(x + nm.dropout(sa, drop, train, rng), params[p + "ln1_g"], params[p + "ln1_b"])
        ca = attention(x, memory, params[p + "ca_wq"], params[p + "ca_wk"], params[p + "ca_wv"],
                       params[p + "ca_wo"], cfg.heads, cross_bias)
        x = nm.layer_norm(x + nm.dropout(ca, drop, train, rng), params[p + "ln2_g"], params[p + "ln2_b"])
        ff = nm.relu(x @ params[p + "ffn_w1"] + params[p + "ffn_b1"]) @ params[p + "ffn_w2"] + params[p + "ffn_b2"]
        x = nm.layer_norm(x + nm.dropout(ff, drop, train, rng), params[p + "ln3_g"], params[p + "ln3_b"])
    return x @ params["dec.out_w"] + params["dec.out_b"]


def forward(prefix, memory: Tensor, cfg: DecoderConfig, params: dict[str, Tensor], train: bool = False,
            rng=None) -> Tensor:
    """Logits (len(prefix) x V) for one prefix over one graph's memory (n x d_mem)."""
    tokens = np.asarray(prefix, dtype=np.int64)[None, :]
    mem = nm.reshape(memory, (1,) + memory.shape)
    out = forward_batch(tokens, mem, np.ones((1, memory.shape[0]), dtype=bool), cfg, params, train, rng)
    return nm.reshape(out, out.shape[1:])


def next_token_logprobs(prefix, memory: Tensor, cfg: DecoderConfig, params: dict[str, Tensor]) -> np.ndarray:
    with nm.no_grad():
        logits = forward(prefix, memory, cfg, params)
        return nm.log_softmax(logits[-1], axis=-1).data


class IncrementalDecoder:
    """Eval-mode decoder that caches per-layer keys/values of earlier positions.

    Produces the same log-probabilities as :func:`forward` (up to float
    rounding) at O(t) cost per step instead of O(t^2).
    """

    def __init__(self, cfg: DecoderConfig, params: dict[str, Tensor], memory: np.ndarray):
        self.cfg = cfg
        self.p = {k: v.data for k, v in params.items() if k.startswith("dec.")}
        self.pe = sinusoidal_table(cfg.max_len, cfg.d_dec)
        m = cfg.heads
        self.cross = []
        for li in range(cfg.layers):
            k = memory @ self.p[f"dec.{li}.ca_wk"]
            v = memory @ self.p[f"dec.{li}.ca_wv"]
            n = memory.shape[0]
            self.cross.append((k.reshape(n, m, -1).transpose(1, 0, 2), v.reshape(n, m, -1).transpose(1, 0, 2)))

    def start(self, beams: int = 1) -> list:
        """Empty cache: per layer, keys and values of shape beams x m x 0 x dh."""
        dh = self.cfg.d_dec // self.cfg.heads
        z = np.zeros((beams, self.cfg.heads, 0, dh))
        return [(z, z) for _ in range(self.cfg.layers)]

    @staticmethod
    def reorder(cache: list, idx: np.ndarray) -> list:
        return [(k[idx], v[idx]) for k, v in cache]

    @staticmethod
    def _ln(x, g, b):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / np.sqrt(var + nm.LAYER_NORM_EPS) * g + b

    def step(self, cache: list, tokens: np.ndarray, pos: int) -> tuple[np.ndarray, list]:
        """Log-probs (B x V) after feeding ``tokens`` (B,) at position ``pos``."""
        if pos >= self.cfg.max_len:
            raise ValueError(f"position {pos} exceeds max_len={self.cfg.max_len}")
        p, m = self.p, self.cfg.heads
        x = p["dec.emb"][tokens] + self.pe[pos]
        b, d = x.shape
        dh = d // m
        scale = 1.0 / math.sqrt(dh)
        new_cache = []
        for li in range(self.cfg.layers):
            pre = f"dec.{li}."
            q = (x @ p[pre + "sa_wq"]).reshape(b, m, 1, dh)
            k = np.concatenate([cache[li][0], (x @ p[pre + "sa_wk"]).reshape(b, m, 1, dh)], axis=2)
            v = np.concatenate([cache[li][1], (x @ p[pre + "sa_wv"]).reshape(b, m, 1, dh)], axis=2)
            new_cache.append((k, v))
            s = (q @ k.transpose(0, 1, 3, 2)) * scale
            a = np.exp(s - s.max(axis=-1, keepdims=True))
            a /= a.sum(axis=-1, keepdims=True)
            sa = (a @ v).reshape(b, d) @ p[pre + "sa_wo"]
            x = self._ln(x + sa, p[pre + "ln1_g"], p[pre + "ln1_b"])
            ck, cv = self.cross[li]
            q = (x @ p[pre + "ca_wq"]).reshape(b, m, 1, dh)
            s = (q @ ck.transpose(0, 2, 1)[None]) * scale
            a = np.exp(s - s.max(axis=-1, keepdims=True))
            a /= a.sum(axis=-1, keepdims=True)
            ca = (a @ cv[None]).reshape(b, d) @ p[pre + "ca_wo"]
            x = self._ln(x + ca, p[pre + "ln2_g"], p[pre + "ln2_b"])
            ff = np.maximum(x @ p[pre + "ffn_w1"] + p[pre + "ffn_b1"], 0.0) @ p[pre + "ffn_w2"] + p[pre + "ffn_b2"]
            x = self._ln(x + ff, p[pre + "ln3_g"], p[pre + "ln3_b"])
        logits = x @ p["dec.out_w"] + p["dec.out_b"]
        z = logits - logits.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True)), new_cache
