"""Process graphs: unit/controller nodes joined by directed stream and signal edges.

Heat exchangers that couple two mass trains are a single node; every edge
touching such a node records which train (side 1 or 2) it belongs to in its
:class:`EdgeAttr`. Controllers are nodes of type ``"C"`` carrying a letter code
tag (``FC``, ``TC``, ...).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

STREAM = "stream"
SIGNAL = "signal"
EDGE_KINDS = (STREAM, SIGNAL)

UNSPECIFIED, TOP, BOTTOM = 0, 1, 2
OUTLET_TAGS = {TOP: "tout", BOTTOM: "bout"}

CONTROLLER = "C"
VALVE = "v"
HEX = "hex"

# Unit-type dictionary, 1-based codes: (raw) = 1, (hex) = 2, ...
DEFAULT_NODE_TYPES = (
    "raw", "hex", "dist", "r", "v", "comp", "splt", "mix", "prod", "pp", "flash",
    "C/FC", "C/TC", "C/TI", "C/LC", "C/PC", "C/FFC", "C/FT", "C/M",
)


class GraphError(ValueError):
    pass


class SpliceConflict(GraphError):
    pass


@dataclass(frozen=True)
class EdgeAttr:
    outlet_pos: int = UNSPECIFIED
    hex_in: int = 0
    hex_out: int = 0

    def __post_init__(self):
        for v in (self.outlet_pos, self.hex_in, self.hex_out):
            if v not in (0, 1, 2):
                raise GraphError(f"edge attribute values must be 0, 1 or 2, got {self}")

    def vector(self) -> tuple[int, int, int]:
        return (self.outlet_pos, self.hex_in, self.hex_out)

    def merge(self, other: "EdgeAttr") -> "EdgeAttr":
        """Elementwise maximum; two different nonzero values conflict."""
        vals = []
        for a, b in zip(self.vector(), other.vector()):
            if a and b and a != b:
                raise SpliceConflict(f"cannot merge edge attributes {self} and {other}")
            vals.append(max(a, b))
        return EdgeAttr(*vals)


@dataclass(frozen=True)
class Node:
    id: int
    type: str
    tag: str | None = None

    @property
    def key(self) -> str:
        """Dictionary key: the unit type, or ``C/<code>`` for controllers."""
        return f"{self.type}/{self.tag}" if self.type == CONTROLLER else self.type


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str = STREAM
    attr: EdgeAttr = field(default_factory=EdgeAttr)


class FlowsheetGraph:
    """Immutable attributed directed multigraph. Node ``i`` has id ``i``."""

    __slots__ = ("nodes", "edges", "_out", "_in")

    def __init__(self, nodes: Sequence[Node], edges: Sequence[Edge]):
        self.nodes = tuple(nodes)
        self.edges = tuple(edges)
        for i, nd in enumerate(self.nodes):
            if nd.id != i:
                raise GraphError(f"node ids must be 0..n-1 in order; position {i} has id {nd.id}")
        n = len(self.nodes)
        self._out: list[list[int]] = [[] for _ in range(n)]
        self._in: list[list[int]] = [[] for _ in range(n)]
        for k, e in enumerate(self.edges):
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise GraphError(f"edge {e} references a missing node")
            if e.kind not in EDGE_KINDS:
                raise GraphError(f"unknown edge kind {e.kind!r}")
            self._out[e.src].append(k)
            self._in[e.dst].append(k)

    @classmethod
    def build(cls, node_specs: Iterable[tuple[str, str | None] | str],
              edges: Iterable[tuple]) -> "FlowsheetGraph":
        """Convenience constructor: ``node_specs`` are types or ``(type, tag)``;
        edges are ``(src, dst[, kind[, (outlet, hex_in, hex_out)]])``."""
        nodes = []
        for i, spec in enumerate(node_specs):
            typ, tag = (spec, None) if isinstance(spec, str) else spec
            nodes.append(Node(i, typ, tag))
        es = []
        for e in edges:
            kind = e[2] if len(e) > 2 else STREAM
            attr = EdgeAttr(*e[3]) if len(e) > 3 else EdgeAttr()
            es.append(Edge(e[0], e[1], kind, attr))
        return cls(nodes, es)

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"FlowsheetGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"

    def out_edges(self, i: int, kind: str | None = None) -> list[Edge]:
        return [self.edges[k] for k in self._out[i] if kind is None or self.edges[k].kind == kind]

    def in_edges(self, i: int, kind: str | None = None) -> list[Edge]:
        return [self.edges[k] for k in self._in[i] if kind is None or self.edges[k].kind == kind]

    def count(self, type_: str) -> int:
        return sum(1 for nd in self.nodes if nd.type == type_)

    def relabel(self, perm: Sequence[int]) -> "FlowsheetGraph":
        """Return the same graph with old node ``i`` renamed to ``perm[i]``."""
        n = len(self.nodes)
        if sorted(perm) != list(range(n)):
            raise GraphError("relabel needs a permutation of the node ids")
        nodes = [None] * n
        for i, nd in enumerate(self.nodes):
            nodes[perm[i]] = Node(perm[i], nd.type, nd.tag)
        edges = [Edge(perm[e.src], perm[e.dst], e.kind, e.attr) for e in self.edges]
        return FlowsheetGraph(nodes, edges)

    def validate(self) -> None:
        """Raise :class:`GraphError` if a structural invariant is violated."""
        for nd in self.nodes:
            if nd.type == CONTROLLER:
                if not nd.tag:
                    raise GraphError(f"controller node {nd.id} has no letter code")
                if len(self.in_edges(nd.id, STREAM)) > 1 or len(self.out_edges(nd.id, STREAM)) > 1:
                    raise GraphError(f"controller node {nd.id} sits on more than one stream")
            elif nd.tag is not None:
                raise GraphError(f"node {nd.id} of type {nd.type!r} cannot carry a tag")
            if nd.type == "raw" and self.in_edges(nd.id, STREAM):
                raise GraphError(f"raw material node {nd.id} has an incoming stream")
            if nd.type == "prod" and self.out_edges(nd.id, STREAM):
                raise GraphError(f"product node {nd.id} has an outgoing stream")
        for e in self.edges:
            if e.kind == SIGNAL and self.nodes[e.src].type != CONTROLLER:
                raise GraphError(f"signal edge {e} does not start at a controller")
            if e.attr.hex_in and self.nodes[e.dst].type != HEX:
                raise GraphError(f"edge {e} has a heat-exchanger inlet side but does not enter one")
            if e.attr.hex_out and self.nodes[e.src].type != HEX:
                raise GraphError(f"edge {e} has a heat-exchanger outlet side but does not leave one")

    # ---------------------------------------------------------------- records

    def to_record(self) -> dict:
        return {
            "nodes": [{"id": nd.id, "type": nd.type, "tag": nd.tag} for nd in self.nodes],
            "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind, "attr": list(e.attr.vector())}
                      for e in self.edges],
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "FlowsheetGraph":
        nodes = [Node(int(d["id"]), d["type"], d.get("tag")) for d in rec["nodes"]]
        edges = [Edge(int(d["src"]), int(d["dst"]), d.get("kind", STREAM), EdgeAttr(*d.get("attr", (0, 0, 0))))
                 for d in rec["edges"]]
        return cls(nodes, edges)

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))


# ---------------------------------------------------------------- train view

@dataclass
class TrainView:
    """Graph with every two-train heat exchanger split into one node per train.

    Side numbers disappear in this view: the two train nodes of a heat
    exchanger are linked by an undirected ``pairs`` entry instead. This is
    the representation the line notation actually encodes (a train's side is
    its order of appearance), so isomorphism and canonical ordering work on it.
    """
    unit: list[str]
    tag: list[str | None]
    hex_group: list[int]               # graph node id of a tagged heat exchanger, else -1
    stream: list[tuple[int, int, int]]  # (src, dst, outlet_pos)
    signal: list[tuple[int, int]]
    pairs: list[tuple[int, int]]
    origin: list[int]

    @property
    def n(self) -> int:
        return len(self.unit)

    def label(self, i: int) -> str:
        if self.unit[i] == CONTROLLER:
            return f"C{{{self.tag[i]}}}"
        if self.hex_group[i] >= 0:
            return "hex{}"
        return self.unit[i]


def train_view(g: FlowsheetGraph) -> TrainView:
    tagged: dict[int, dict[int, int]] = {}
    for nd in g.nodes:
        if nd.type != HEX:
            continue
        sides = set()
        for e in g.in_edges(nd.id):
            sides.add(e.attr.hex_in)
        for e in g.out_edges(nd.id):
            sides.add(e.attr.hex_out)
        if sides - {0}:
            if 0 in sides:
                raise GraphError(f"heat exchanger {nd.id} mixes edges with and without a train side")
            tagged[nd.id] = {s: -1 for s in sorted(sides)}

    unit, tag, hex_group, origin = [], [], [], []
    slot: dict[int, int] = {}
    for nd in g.nodes:
        if nd.id in tagged:
            for s in tagged[nd.id]:
                tagged[nd.id][s] = len(unit)
                unit.append(HEX)
                tag.append(None)
                hex_group.append(nd.id)
                origin.append(nd.id)
        else:
            slot[nd.id] = len(unit)
            unit.append(nd.type)
            tag.append(nd.tag)
            hex_group.append(-1)
            origin.append(nd.id)

    def src_of(e: Edge) -> int:
        return tagged[e.src][e.attr.hex_out] if e.src in tagged else slot[e.src]

    def dst_of(e: Edge) -> int:
        return tagged[e.dst][e.attr.hex_in] if e.dst in tagged else slot[e.dst]

    stream, signal = [], []
    for e in g.edges:
        if e.kind == STREAM:
            stream.append((src_of(e), dst_of(e), e.attr.outlet_pos))
        else:
            signal.append((src_of(e), dst_of(e)))
    pairs = []
    for sides in tagged.values():
        ids = list(sides.values())
        if len(ids) > 2:
            raise GraphError("a heat exchanger couples at most two trains")
        if len(ids) == 2:
            pairs.append((ids[0], ids[1]))
    return TrainView(unit, tag, hex_group, stream, signal, pairs, origin)


def _nx_view(g: FlowsheetGraph) -> nx.MultiDiGraph:
    tv = train_view(g)
    G = nx.MultiDiGraph()
    for i in range(tv.n):
        G.add_node(i, label=tv.label(i))
    for u, v, pos in tv.stream:
        G.add_edge(u, v, kind=f"stream{pos}")
    for u, v in tv.signal:
        G.add_edge(u, v, kind="signal")
    for u, v in tv.pairs:
        G.add_edge(u, v, kind="pair")
        G.add_edge(v, u, kind="pair")
    return G


def is_isomorphic(a: FlowsheetGraph, b: FlowsheetGraph) -> bool:
    """Isomorphism respecting node types, letter codes, edge kinds and outlet tags.

    Heat-exchanger side numbers are compared up to swapping the two trains.
    """
    if len(a.nodes) != len(b.nodes) or len(a.edges) != len(b.edges):
        return False
    from networkx.algorithms.isomorphism import categorical_multiedge_match, categorical_node_match
    return nx.is_isomorphic(_nx_view(a), _nx_view(b),
                            node_match=categorical_node_match("label", None),
                            edge_match=categorical_multiedge_match("kind", None))


# ---------------------------------------------------------------- features

@dataclass(frozen=True)
class FeatureMatrices:
    node_x: np.ndarray       # n x d_node one-hot
    edge_index: np.ndarray   # E x 2 (src, dst)
    edge_attr: np.ndarray    # E x 3 values in {0, 1, 2}
    edge_kind: np.ndarray    # E, 0 stream / 1 signal

    @property
    def n_nodes(self) -> int:
        return self.node_x.shape[0]


class NodeDictionary:
    """Unit-type key -> integer code (1-based, ``raw`` = 1, ``hex`` = 2, ...)."""

    def __init__(self, keys: Iterable[str] = DEFAULT_NODE_TYPES):
        self.keys: list[str] = []
        self.codes: dict[str, int] = {}
        for k in keys:
            self.add(k)

    def add(self, key: str) -> int:
        if key not in self.codes:
            self.keys.append(key)
            self.codes[key] = len(self.keys)
        return self.codes[key]

    def __len__(self) -> int:
        return len(self.keys)

    def __getitem__(self, key: str) -> int:
        try:
            return self.codes[key]
        except KeyError:
            raise GraphError(f"unit type {key!r} is not in the node dictionary") from None

    def __contains__(self, key: str) -> bool:
        return key in self.codes

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for k in self.keys:
                fh.write(f"{k}\t{self.codes[k]}\n")

    @classmethod
    def load(cls, path) -> "NodeDictionary":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    k, c = line.rstrip("\n").split("\t")
                    rows.append((int(c), k))
        return cls(k for _, k in sorted(rows))


def encode_features(g: FlowsheetGraph, node_dict: NodeDictionary) -> FeatureMatrices:
    n = len(g.nodes)
    x = np.zeros((n, len(node_dict)))
    for nd in g.nodes:
        x[nd.id, node_dict[nd.key] - 1] = 1.0
    if g.edges:
        ei = np.array([(e.src, e.dst) for e in g.edges], dtype=np.int64)
        ea = np.array([e.attr.vector() for e in g.edges], dtype=np.float64)
        ek = np.array([0 if e.kind == STREAM else 1 for e in g.edges], dtype=np.int64)
    else:
        ei = np.zeros((0, 2), dtype=np.int64)
        ea = np.zeros((0, 3))
        ek = np.zeros(0, dtype=np.int64)
    return FeatureMatrices(x, ei, ea, ek)


# ---------------------------------------------------------------- transforms

def strip_control(cef: FlowsheetGraph, also_valves: bool = False) -> FlowsheetGraph:
    """Remove controllers (and optionally valves) and all signal edges.

    A removed node with stream edges ``a -> X -> b`` is spliced into ``a -> b``
    carrying the merged attributes of both edges.
    """
    drop = {nd.id for nd in cef.nodes
            if nd.type == CONTROLLER or (also_valves and nd.type == VALVE)}
    # working multiset of stream edges as (src, dst, attr)
    edges = [(e.src, e.dst, e.attr) for e in cef.edges if e.kind == STREAM]
    for x in sorted(drop):
        ins = [e for e in edges if e[1] == x and e[0] != x]
        outs = [e for e in edges if e[0] == x and e[1] != x]
        rest = [e for e in edges if e[0] != x and e[1] != x]
        for a, _, attr_in in ins:
            for _, b, attr_out in outs:
                rest.append((a, b, attr_in.merge(attr_out)))
        edges = rest
    keep = [nd for nd in cef.nodes if nd.id not in drop]
    new_id = {nd.id: i for i, nd in enumerate(keep)}
    nodes = [Node(new_id[nd.id], nd.type, nd.tag) for nd in keep]
    order = sorted(edges, key=lambda e: (new_id[e[0]], new_id[e[1]], e[2].vector()))
    return FlowsheetGraph(nodes, [Edge(new_id[a], new_id[b], STREAM, attr) for a, b, attr in order])


def graph_laplacian(g: FlowsheetGraph) -> np.ndarray:
    """``D - A`` of the undirected simple graph behind all stream and signal edges."""
    n = len(g.nodes)
    adj = np.zeros((n, n))
    for e in g.edges:
        if e.src != e.dst:
            adj[e.src, e.dst] = adj[e.dst, e.src] = 1.0
    return np.diag(adj.sum(axis=1)) - adj
