"""Graph encoders: GATv2, GraphConv, GraphTransformer and the Combined layer.

Message passing runs over every original edge, a reversed copy of it and a
self-loop per node. The 4-wide edge input is ``[outlet, hex_in, hex_out, flag]``
with flag 0 for stream edges and self-loops, 1 for signal edges and 2 for
reversed copies.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import numerics as nm
from .flowgraph import DEFAULT_NODE_TYPES, FeatureMatrices, FlowsheetGraph, NodeDictionary, encode_features, graph_laplacian
from .numerics import Tensor

ARCHS = ("gatv2", "graphconv", "graph_transformer", "combined")
PE_ARCHS = ("graph_transformer", "combined")
EDGE_IN = 4


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    arch: str = "combined"
    layers: int = 6
    d_enc: int = 128
    heads: int = 8
    dropout: float = 0.1
    pe_dim: int = 8
    d_node: int = len(DEFAULT_NODE_TYPES)
    norm: bool = True            # layer norms in the transformer-style update
    gat_form: str = "dynamic"    # "dynamic" or "concat" attention score
    pe_sign_flip: bool = False   # random eigenvector signs while training

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"encoder.arch must be one of {ARCHS}, got {self.arch!r}")
        if self.layers < 1 or self.d_enc < 1 or self.heads < 1:
            raise ConfigError("encoder layers, d_enc and heads must be positive")
        if self.d_enc % self.heads:
            raise ConfigError(f"d_enc={self.d_enc} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("encoder dropout must be in [0, 1)")
        if self.pe_dim < 1 or self.pe_dim > self.d_enc:
            raise ConfigError("pe_dim must be between 1 and d_enc")
        if self.gat_form not in ("dynamic", "concat"):
            raise ConfigError("gat_form must be 'dynamic' or 'concat'")

    @property
    def d_head(self) -> int:
        return self.d_enc // self.heads

    @property
    def uses_pe(self) -> bool:
        return self.arch in PE_ARCHS

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- inputs

def laplacian_pe(g: FlowsheetGraph, pe_dim: int) -> np.ndarray:
    """Eigenvectors 2..pe_dim+1 of the graph Laplacian, zero-padded on the right."""
    if pe_dim < 1:
        raise ValueError("pe_dim must be at least 1")
    n = len(g.nodes)
    out = np.zeros((n, pe_dim))
    if n > 1:
        _, vecs = nm.sym_eig(graph_laplacian(g))
        k = min(pe_dim, n - 1)
        out[:, :k] = vecs[:, 1:k + 1]
    return out


@dataclass
class GraphInput:
    """Disjoint union of graphs prepared for message passing."""
    node_x: np.ndarray     # N x d_node
    src: np.ndarray        # M message sources
    dst: np.ndarray        # M message targets
    edge_x: np.ndarray     # M x 4
    pe: np.ndarray         # N x pe_dim (zeros when unused)
    offsets: np.ndarray    # B + 1 node offsets

    @property
    def n(self) -> int:
        return self.node_x.shape[0]

    @property
    def n_graphs(self) -> int:
        return len(self.offsets) - 1


def message_edges(fm: FeatureMatrices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = fm.n_nodes
    e = fm.edge_index.shape[0]
    src = np.concatenate([fm.edge_index[:, 0], fm.edge_index[:, 1], np.arange(n)]).astype(np.int64)
    dst = np.concatenate([fm.edge_index[:, 1], fm.edge_index[:, 0], np.arange(n)]).astype(np.int64)
    x = np.zeros((2 * e + n, EDGE_IN))
    x[:e, :3] = fm.edge_attr
    x[:e, 3] = fm.edge_kind
    x[e:2 * e, :3] = fm.edge_attr
    x[e:2 * e, 3] = 2.0
    return src, dst, x


def build_graph_input(fms: Sequence[FeatureMatrices], pes: Sequence[np.ndarray] | None = None,
                      pe_dim: int = 1) -> GraphInput:
    xs, srcs, dsts, exs, pe_rows = [], [], [], [], []
    offsets = [0]
    for i, fm in enumerate(fms):
        s, d, ex = message_edges(fm)
        base = offsets[-1]
        xs.append(fm.node_x)
        srcs.append(s + base)
        dsts.append(d + base)
        exs.append(ex)
        pe_rows.append(pes[i] if pes is not None else np.zeros((fm.n_nodes, pe_dim)))
        offsets.append(base + fm.n_nodes)
    return GraphInput(np.concatenate(xs), np.concatenate(srcs), np.concatenate(dsts), np.concatenate(exs),
                      np.concatenate(pe_rows), np.asarray(offsets, dtype=np.int64))


def graph_input(graphs: Sequence[FlowsheetGraph], node_dict: NodeDictionary, cfg: EncoderConfig) -> GraphInput:
    fms = [encode_features(g, node_dict) for g in graphs]
    pes = [laplacian_pe(g, cfg.pe_dim) for g in graphs] if cfg.uses_pe else None
    return build_graph_input(fms, pes, cfg.pe_dim)


# ---------------------------------------------------------------- parameters

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def encoder_param_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    d, m, dh = cfg.d_enc, cfg.heads, cfg.d_head
    shapes: dict[str, tuple] = {
        "enc.node_w": (cfg.d_node, d), "enc.node_b": (d,),
        "enc.edge_w": (EDGE_IN, d), "enc.edge_b": (d,),
    }
    if cfg.uses_pe:
        shapes["enc.pe_w"] = (cfg.pe_dim, d)
    for li in range(cfg.layers):
        p = f"enc.{li}."
        last = li == cfg.layers - 1
        for w in ("wq", "wk", "wv"):
            shapes[p + w] = (d, d)
        if cfg.arch in ("gatv2", "combined"):
            shapes[p + "we"] = (d, d)
            shapes[p + "att"] = (m, 3 * dh) if cfg.gat_form == "concat" else (m, dh)
        elif cfg.arch == "graphconv":
            shapes[p + "we"] = (d, d)
            shapes[p + "wr"] = (d, d)
            shapes[p + "gate_w"] = (3 * d, 1)
            shapes[p + "gate_b"] = (1,)
            shapes[p + "ln_g"] = (d,)
            shapes[p + "ln_b"] = (d,)
        else:
            shapes[p + "we"] = (d, m)
        if cfg.arch in PE_ARCHS:
            shapes.update({p + "ln1_g": (d,), p + "ln1_b": (d,), p + "ln2_g": (d,), p + "ln2_b": (d,),
                           p + "ffn_w1": (d, 2 * d), p + "ffn_b1": (2 * d,),
                           p + "ffn_w2": (2 * d, d), p + "ffn_b2": (d,)})
        if cfg.arch == "graph_transformer" and not last:
            shapes.update({p + "we_out": (m, d), p + "lne_g": (d,), p + "lne_b": (d,)})
    return shapes


def init_from_shapes(shapes: dict[str, tuple], rng: np.random.Generator) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases, unit layer-norm gains (names sorted)."""
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            data = np.ones(shape)
        elif leaf.endswith("_b") or len(shape) == 1:
            data = np.zeros(shape)
        elif leaf == "att":
            data = glorot(rng, shape[1], 1, shape)
        else:
            data = glorot(rng, shape[-2], shape[-1], shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------- layers

class LayerOutput(NamedTuple):
    h: Tensor
    e: Tensor
    alpha: Tensor


def _heads(x: Tensor, m: int) -> Tensor:
    return nm.reshape(x, (x.shape[0], m, x.shape[1] // m))


def _flat(x: Tensor) -> Tensor:
    return nm.reshape(x, (x.shape[0], x.shape[1] * x.shape[2]))


def _aggregate(alpha: Tensor, vals: Tensor, dst: np.ndarray, n: int) -> Tensor:
    """sum_j alpha_ij * vals_ij per target node; vals are M x m x dh."""
    msg = vals * nm.reshape(alpha, alpha.shape + (1,))
    return nm.scatter_add(_flat(msg), dst, n)


def _gat_alpha(H: Tensor, E: Tensor, gi: GraphInput, p, cfg: EncoderConfig) -> Tensor:
    m = cfg.heads
    q = _heads(H @ p["wq"], m)
    k = _heads(H @ p["wk"], m)
    ee = _heads(E @ p["we"], m)
    att = p["att"]
    if cfg.gat_form == "dynamic":
        z = nm.take_rows(q, gi.dst) + nm.take_rows(k, gi.src) + ee
        score = nm.sum(nm.leaky_relu(z) * att, axis=-1)
    else:
        dh = cfg.d_head
        a1, a2, a3 = att[:, :dh], att[:, dh:2 * dh], att[:, 2 * dh:]
        sq = nm.sum(nm.leaky_relu(q) * a1, axis=-1)
        sk = nm.sum(nm.leaky_relu(k) * a2, axis=-1)
        se = nm.sum(nm.leaky_relu(ee) * a3, axis=-1)
        score = nm.take_rows(sq, gi.dst) + nm.take_rows(sk, gi.src) + se
    return nm.segment_softmax(score, gi.dst, gi.n)


def gatv2_layer(H: Tensor, E: Tensor, gi: GraphInput, p, cfg: EncoderConfig) -> LayerOutput:
    alpha = _gat_alpha(H, E, gi, p, cfg)
    v = nm.take_rows(_heads(H @ p["wv"], cfg.heads), gi.src)
    return LayerOutput(nm.relu(_aggregate(alpha, v, gi.dst, gi.n)), E, alpha)


def graphconv_layer(H: Tensor, E: Tensor, gi: GraphInput, p, cfg: EncoderConfig) -> LayerOutput:
    m = cfg.heads
    q = nm.take_rows(_heads(H @ p["wq"], m), gi.dst)
    ee = _heads(E @ p["we"], m)
    k = nm.take_rows(_heads(H @ p["wk"], m), gi.src) + ee
    score = nm.sum(q * k, axis=-1) * (1.0 / math.sqrt(cfg.d_head))
    alpha = nm.segment_softmax(score, gi.dst, gi.n)
    v = nm.take_rows(_heads(H @ p["wv"], m), gi.src) + ee
    o = _aggregate(alpha, v, gi.dst, gi.n)
    r = H @ p["wr"]
    beta = nm.sigmoid(nm.concat([o, r, o - r], axis=1) @ p["gate_w"] + p["gate_b"])
    mixed = beta * o + (1.0 - beta) * r
    return LayerOutput(nm.relu(nm.layer_norm(mixed, p["ln_g"], p["ln_b"])), E, alpha)


def _ffn(x: Tensor, p) -> Tensor:
    return nm.relu(x @ p["ffn_w1"] + p["ffn_b1"]) @ p["ffn_w2"] + p["ffn_b2"]


def _residual_update(H: Tensor, u: Tensor, p, cfg: EncoderConfig, train: bool, rng) -> Tensor:
    h_res = H + nm.dropout(u, cfg.dropout, train, rng)
    if not cfg.norm:
        return h_res + nm.dropout(_ffn(h_res, p), cfg.dropout, train, rng)
    inner = nm.layer_norm(h_res, p["ln1_g"], p["ln1_b"])
    return nm.layer_norm(h_res + nm.dropout(_ffn(inner, p), cfg.dropout, train, rng), p["ln2_g"], p["ln2_b"])


def graph_transformer_layer(H: Tensor, E: Tensor, gi: GraphInput, p, cfg: EncoderConfig,
                            train: bool = False, rng=None) -> LayerOutput:
    m = cfg.heads
    q = nm.take_rows(_heads(H @ p["wq"], m), gi.dst)
    k = nm.take_rows(_heads(H @ p["wk"], m), gi.src)
    score = nm.sum(q * k, axis=-1) * (1.0 / math.sqrt(cfg.d_head)) * (E @ p["we"])
    alpha = nm.segment_softmax(score, gi.dst, gi.n)
    v = nm.take_rows(_heads(H @ p["wv"], m), gi.src)
    h_new = _residual_update(H, _aggregate(alpha, v, gi.dst, gi.n), p, cfg, train, rng)
    e_new = E
    if "we_out" in p:
        e_new = nm.layer_norm(E + score @ p["we_out"], p["lne_g"], p["lne_b"])
    return LayerOutput(h_new, e_new, alpha)


def combined_layer(H: Tensor, E: Tensor, gi: GraphInput, p, cfg: EncoderConfig,
                   train: bool = False, rng=None) -> LayerOutput:
    alpha = _gat_alpha(H, E, gi, p, cfg)
    v = nm.take_rows(_heads(H @ p["wv"], cfg.heads), gi.src)
    return LayerOutput(_residual_update(H, _aggregate(alpha, v, gi.dst, gi.n), p, cfg, train, rng), E, alpha)


def layer_params(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def run_layer(H, E, gi, p, cfg: EncoderConfig, train=False, rng=None) -> LayerOutput:
    if cfg.arch == "gatv2":
        out = gatv2_layer(H, E, gi, p, cfg)
    elif cfg.arch == "graphconv":
        out = graphconv_layer(H, E, gi, p, cfg)
    elif cfg.arch == "graph_transformer":
        return graph_transformer_layer(H, E, gi, p, cfg, train, rng)
    else:
        return combined_layer(H, E, gi, p, cfg, train, rng)
    return out._replace(h=nm.dropout(out.h, cfg.dropout, train, rng))


def embed(gi: GraphInput, cfg: EncoderConfig, params: dict[str, Tensor], train: bool = False,
          rng=None) -> tuple[Tensor, Tensor]:
    H = Tensor(gi.node_x) @ params["enc.node_w"] + params["enc.node_b"]
    if cfg.uses_pe:
        pe = gi.pe
        if train and cfg.pe_sign_flip and rng is not None:
            pe = pe * rng.choice((-1.0, 1.0), size=(1, pe.shape[1]))
        H = H + Tensor(pe) @ params["enc.pe_w"]
    E = Tensor(gi.edge_x) @ params["enc.edge_w"] + params["enc.edge_b"]
    return H, E


def check_params(cfg: EncoderConfig, params: dict[str, Tensor]) -> None:
    for name, shape in encoder_param_shapes(cfg).items():
        if name not in params:
            raise ConfigError(f"encoder parameter {name} is missing")
        if params[name].shape != shape:
            raise ConfigError(f"encoder parameter {name} has shape {params[name].shape}, expected {shape}")


def encode(gi: GraphInput, cfg: EncoderConfig, params: dict[str, Tensor], train: bool = False,
           rng=None) -> Tensor:
    """Node memory (N x d_enc) for a batch of graphs, rows in input node order."""
    if gi.node_x.shape[1] != cfg.d_node:
        raise ConfigError(f"node features have width {gi.node_x.shape[1]}, config says {cfg.d_node}")
    H, E = embed(gi, cfg, params, train, rng)
    for li in range(cfg.layers):
        out = run_layer(H, E, gi, layer_params(params, f"enc.{li}."), cfg, train, rng)
        H, E = out.h, out.e
    return H
