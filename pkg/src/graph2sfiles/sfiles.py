"""SFILES 2.0 line notation: lexer, parser, canonical writer.

Grammar summary (whitespace-free)::

    (name)        unit operation, e.g. (raw), (hex), (C)
    {FC}          controller letter code, must follow (C)
    {tout} {bout} outlet tag for the next stream that leaves the previous unit
    {1}           heat-exchanger train id, must follow (hex)
    [ ... ]       side branch leaving the previous unit
    <&| ... & |   incoming branch; '&' marks where it joins the unit before '<&|'
    n|            independent stream
    1 / <1        recycle from the unit carrying '1' to the unit carrying '<1'
    %12 / <%12    recycle numbers of ten and above
    _1 / <_1      signal from the controller carrying '_1' to the unit carrying '<_1'

Canonical form
--------------
The writer works on the train view of a graph (two-train heat exchangers split
into one node per train). Nodes are ordered by colour refinement: the initial
colour is the node label in descending string order, refined by the sorted
multiset of (direction, edge code, neighbour colour). Remaining ties are broken
by individualization, and the lexicographically smallest rendering over all
resulting orders is the canonical string.

A rendering with a fixed node order:

* sources (no incoming stream) are visited in order of decreasing downstream
  reach, then order; the first one starts the main stream;
* at each unit the outgoing streams are visited in order of
  (closes a cycle back to this unit, downstream reach, outlet tag
  none < bout < tout, order); every stream but the last becomes a branch
  ``[...]`` and the last continues the main stream;
* a later source whose walk runs into an already written unit becomes an
  incoming branch ``<&|...&|`` at that unit, otherwise an ``n|`` stream;
  any other edge into a written unit becomes a recycle;
* recycle, signal and train numbers are assigned by first appearance.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .flowgraph import (CONTROLLER, HEX, OUTLET_TAGS, SIGNAL, STREAM, Edge, EdgeAttr, FlowsheetGraph,
                        GraphError, Node, TrainView, train_view)


class SfilesError(ValueError):
    pass


class SfilesLexError(SfilesError):
    def __init__(self, offset: int, text: str):
        super().__init__(f"no token starts at byte offset {offset}: {text[offset:offset + 10]!r}")
        self.offset = offset


class SfilesParseError(SfilesError):
    def __init__(self, message: str, index: int | None):
        where = "end of input" if index is None else f"token {index}"
        super().__init__(f"{message} (at {where})")
        self.index = index


class TokenKind(enum.Enum):
    UNIT = "Unit"
    CONTROL_TAG = "ControlTag"
    TOPOLOGY_TAG = "TopologyTag"
    HEX_ID = "HexId"
    BRANCH_OPEN = "BranchOpen"
    BRANCH_CLOSE = "BranchClose"
    INCOMING_OPEN = "IncomingBranchOpen"
    INCOMING_MARK = "IncomingBranchMark"
    INCOMING_CLOSE = "IncomingBranchClose"
    STREAM_SEP = "StreamSep"
    RECYCLE_DEF = "RecycleDef"
    RECYCLE_REF = "RecycleRef"
    SIGNAL_DEF = "SignalDef"
    SIGNAL_REF = "SignalRef"
    SOS = "SOS"
    EOS = "EOS"
    PAD = "PAD"
    UNK = "UNK"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str

    @property
    def number(self) -> int:
        """Numeric payload of id, recycle and signal tokens."""
        return int(re.sub(r"\D", "", self.text))

    @property
    def name(self) -> str:
        return self.text[1:-1]


# Order matters: the first alternative that matches wins, so longer forms come first.
_LEXER = re.compile(r"""
    (?P<UNIT>\([A-Za-z][A-Za-z0-9_\-]*\))
  | (?P<TOPOLOGY_TAG>\{(?:tout|bout)\})
  | (?P<HEX_ID>\{[0-9]+\})
  | (?P<CONTROL_TAG>\{[A-Z]+\})
  | (?P<INCOMING_OPEN><&\|)
  | (?P<SIGNAL_REF><_[0-9]+)
  | (?P<RECYCLE_REF><(?:%[0-9]{2}|[0-9]))
  | (?P<SIGNAL_DEF>_[0-9]+)
  | (?P<RECYCLE_DEF>%[0-9]{2}|[0-9])
  | (?P<STREAM_SEP>n\|)
  | (?P<BRANCH_OPEN>\[)
  | (?P<BRANCH_CLOSE>\])
  | (?P<INCOMING_MARK>&)
  | (?P<INCOMING_CLOSE>\|)
""", re.VERBOSE)

PAD_TEXT, SOS_TEXT, EOS_TEXT, UNK_TEXT = "<pad>", "<sos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD_TEXT, SOS_TEXT, EOS_TEXT, UNK_TEXT)
PAD_ID, SOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


def tokenize(s: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(s):
        m = _LEXER.match(s, pos)
        if m is None:
            raise SfilesLexError(len(s[:pos].encode("utf-8")), s)
        tokens.append(Token(TokenKind[m.lastgroup], m.group()))
        pos = m.end()
    return tokens


def join_tokens(tokens: Iterable[Token | str]) -> str:
    return "".join(t.text if isinstance(t, Token) else t for t in tokens)


# ---------------------------------------------------------------- parser

@dataclass
class _Frame:
    kind: str          # "branch" or "incoming"
    anchor: tuple | None
    opened_at: int
    merged: bool = False


def parse(tokens: Sequence[Token] | str) -> FlowsheetGraph:
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    nodes: list[Node] = []
    edges: list[Edge] = []
    hex_nodes: dict[int, tuple[int, int]] = {}   # train id -> (node id, occurrences)

    # an endpoint is (node id, train side)
    prev: tuple | None = None
    pending: tuple[int, int] | None = None        # (outlet, token index)
    frames: list[_Frame] = []
    open_rec: dict[int, tuple] = {}
    open_sig: dict[int, tuple] = {}

    def take_tag() -> int:
        nonlocal pending
        pos = pending[0] if pending else 0
        pending = None
        return pos

    def stream_edge(a, b, outlet):
        edges.append(Edge(a[0], b[0], STREAM, EdgeAttr(outlet, b[1], a[1])))

    def need_prev(i):
        if prev is None:
            raise SfilesParseError(f"{tokens[i].text!r} has no unit to attach to", i)

    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        k = tok.kind
        if k is TokenKind.UNIT:
            typ = tok.name
            tag = None
            side = 0
            nxt = tokens[i + 1] if i + 1 < n else None
            if typ == CONTROLLER:
                if nxt is None or nxt.kind is not TokenKind.CONTROL_TAG:
                    raise SfilesParseError("controller unit must be followed by a letter-code tag", i)
                tag = nxt.name
                i += 1
            node_id = None
            if typ == HEX and nxt is not None and nxt.kind is TokenKind.HEX_ID:
                hid = nxt.number
                if hid in hex_nodes:
                    node_id, count = hex_nodes[hid]
                    if count >= 2:
                        raise SfilesParseError(f"heat exchanger {{{hid}}} has more than two trains", i + 1)
                    hex_nodes[hid] = (node_id, 2)
                    side = 2
                else:
                    node_id = len(nodes)
                    nodes.append(Node(node_id, HEX))
                    hex_nodes[hid] = (node_id, 1)
                    side = 1
                i += 1
            if node_id is None:
                node_id = len(nodes)
                nodes.append(Node(node_id, typ, tag))
            cur = (node_id, side)
            if prev is not None:
                stream_edge(prev, cur, take_tag())
            elif pending:
                raise SfilesParseError("outlet tag with no preceding unit", pending[1])
            prev = cur
        elif k is TokenKind.CONTROL_TAG:
            raise SfilesParseError("letter-code tag must follow a controller unit", i)
        elif k is TokenKind.HEX_ID:
            raise SfilesParseError("train id must follow a heat exchanger", i)
        elif k is TokenKind.TOPOLOGY_TAG:
            need_prev(i)
            if pending:
                raise SfilesParseError("two outlet tags in a row", i)
            pending = (1 if tok.name == "tout" else 2, i)
        elif k is TokenKind.BRANCH_OPEN:
            need_prev(i)
            if pending:
                raise SfilesParseError("outlet tag before a branch", pending[1])
            frames.append(_Frame("branch", prev, i))
        elif k is TokenKind.BRANCH_CLOSE:
            if not frames or frames[-1].kind != "branch":
                raise SfilesParseError("unmatched ']'", i)
            if pending:
                raise SfilesParseError("dangling outlet tag", pending[1])
            prev = frames.pop().anchor
        elif k is TokenKind.INCOMING_OPEN:
            need_prev(i)
            if pending:
                raise SfilesParseError("outlet tag before an incoming branch", pending[1])
            frames.append(_Frame("incoming", prev, i))
            prev = None
        elif k is TokenKind.INCOMING_MARK:
            inner = next((f for f in reversed(frames) if f.kind == "incoming"), None)
            if inner is None:
                raise SfilesParseError("'&' outside an incoming branch", i)
            need_prev(i)
            if inner.merged:
                raise SfilesParseError("incoming branch joins twice", i)
            stream_edge(prev, inner.anchor, take_tag())
            inner.merged = True
        elif k is TokenKind.INCOMING_CLOSE:
            if not frames or frames[-1].kind != "incoming":
                raise SfilesParseError("unmatched '|'", i)
            if pending:
                raise SfilesParseError("dangling outlet tag", pending[1])
            f = frames.pop()
            if not f.merged:
                raise SfilesParseError("incoming branch without '&'", i)
            prev = f.anchor
        elif k is TokenKind.STREAM_SEP:
            if frames:
                raise SfilesParseError("'n|' inside a branch", i)
            if pending:
                raise SfilesParseError("dangling outlet tag", pending[1])
            prev = None
        elif k in (TokenKind.RECYCLE_DEF, TokenKind.RECYCLE_REF):
            need_prev(i)
            num = tok.number
            is_def = k is TokenKind.RECYCLE_DEF
            end = (prev, take_tag() if is_def else 0, is_def, i)
            if num in open_rec:
                other = open_rec.pop(num)
                if other[2] == is_def:
                    raise SfilesParseError(f"recycle {num} opened twice from the same side", i)
                src, dst = (end, other) if is_def else (other, end)
                stream_edge(src[0], dst[0], src[1])
            else:
                open_rec[num] = end
        elif k in (TokenKind.SIGNAL_DEF, TokenKind.SIGNAL_REF):
            need_prev(i)
            num = tok.number
            is_def = k is TokenKind.SIGNAL_DEF
            end = (prev, is_def, i)
            if num in open_sig:
                other = open_sig.pop(num)
                if other[1] == is_def:
                    raise SfilesParseError(f"signal {num} opened twice from the same side", i)
                src, dst = (end, other) if is_def else (other, end)
                a, b = src[0], dst[0]
                edges.append(Edge(a[0], b[0], SIGNAL, EdgeAttr(0, b[1], a[1])))
            else:
                open_sig[num] = end
        else:
            raise SfilesParseError(f"token {tok.text!r} cannot appear in a flowsheet", i)
        i += 1

    if frames:
        raise SfilesParseError("unclosed branch", frames[-1].opened_at)
    if pending:
        raise SfilesParseError("dangling outlet tag", pending[1])
    if open_rec:
        raise SfilesParseError("recycle number without a partner", min(v[3] for v in open_rec.values()))
    if open_sig:
        raise SfilesParseError("signal number without a partner", min(v[2] for v in open_sig.values()))
    return FlowsheetGraph(nodes, edges)


# ---------------------------------------------------------------- writer

class _Prepared:
    """Per-graph data shared by every rendering of one train view."""

    def __init__(self, tv: TrainView):
        self.tv = tv
        n = tv.n
        self.n = n
        self.out_s: list[list[int]] = [[] for _ in range(n)]
        self.in_s: list[list[int]] = [[] for _ in range(n)]
        for k, (u, v, _) in enumerate(tv.stream):
            self.out_s[u].append(k)
            self.in_s[v].append(k)
        reach = []
        for s in range(n):
            seen = {s}
            stack = [s]
            while stack:
                u = stack.pop()
                for k in self.out_s[u]:
                    w = tv.stream[k][1]
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            reach.append(seen)
        self.reach = reach
        self.reach_n = [len(r) for r in reach]
        # neighbourhoods for colour refinement: (direction, code, other)
        nb: list[list[tuple[int, int, int]]] = [[] for _ in range(n)]
        for u, v, pos in tv.stream:
            nb[u].append((0, pos, v))
            nb[v].append((1, pos, u))
        for u, v in tv.signal:
            nb[u].append((0, 3, v))
            nb[v].append((1, 3, u))
        for u, v in tv.pairs:
            nb[u].append((2, 0, v))
            nb[v].append((2, 0, u))
        self.nb = nb
        labels = [tv.label(i) for i in range(n)]
        order = sorted(set(labels), reverse=True)
        self.init_colors = [order.index(l) for l in labels]


_TAG_ORDER = {0: 0, 2: 1, 1: 2}


def _render(p: _Prepared, rank: Sequence[int], rng=None) -> tuple[str, list[int]]:
    """Write the train view with node order ``rank``; ``rng`` shuffles choices instead."""
    tv = p.tv
    n = p.n
    stream = tv.stream

    def succ_key(u):
        def key(k):
            w = stream[k][1]
            return (u in p.reach[w], p.reach_n[w], _TAG_ORDER[stream[k][2]], rank[w], stream[k][2])
        return key

    visited = [-1] * n
    children: list[list[int]] = [[] for _ in range(n)]
    recycles: list[int] = []
    amp_of: dict[int, int] = {}           # source node of '&' -> edge
    incoming: list[list[int]] = [[] for _ in range(n)]
    parts: list[int] = []

    def visit(root: int, tid: int) -> int | None:
        amp = None
        visited[root] = tid
        work = [(root, iter(_ordered(root)))]
        while work:
            u, it = work[-1]
            k = next(it, None)
            if k is None:
                work.pop()
                continue
            w = stream[k][1]
            if visited[w] < 0:
                visited[w] = tid
                children[u].append(k)
                work.append((w, iter(_ordered(w))))
            elif amp is None and visited[w] != tid:
                amp = k
                amp_of[u] = k
            else:
                recycles.append(k)
        return amp

    def _ordered(u):
        ks = list(p.out_s[u])
        if rng is None:
            ks.sort(key=succ_key(u))
        else:
            rng.shuffle(ks)
        return ks

    if rng is None:
        src_key = lambda u: (-p.reach_n[u], rank[u])
    else:
        noise = {u: rng.random() for u in range(n)}
        src_key = lambda u: noise[u]
    sources = sorted((u for u in range(n) if not p.in_s[u]), key=src_key)
    tid = 0
    roots = list(sources)
    while True:
        for s in roots:
            if visited[s] >= 0:
                continue
            amp = visit(s, tid)
            if amp is None:
                parts.append(s)
            else:
                incoming[stream[amp][1]].append(s)
            tid += 1
        left = [u for u in range(n) if visited[u] < 0]
        if not left:
            break
        roots = [min(left, key=src_key)]

    # positions follow the written layout
    pos = [0] * n
    order: list[int] = []

    def layout(u):
        stack = [u]
        while stack:
            x = stack.pop()
            pos[x] = len(order)
            order.append(x)
            nxt = list(incoming[x]) + [stream[k][1] for k in children[x]]
            stack.extend(reversed(nxt))

    for r in parts:
        layout(r)

    rec_in: list[list[int]] = [[] for _ in range(n)]
    rec_out: list[list[int]] = [[] for _ in range(n)]
    for k in recycles:
        rec_out[stream[k][0]].append(k)
        rec_in[stream[k][1]].append(k)
    sig_in: list[list[int]] = [[] for _ in range(n)]
    sig_out: list[list[int]] = [[] for _ in range(n)]
    for k, (u, v) in enumerate(tv.signal):
        sig_out[u].append(k)
        sig_in[v].append(k)

    # symbolic tokens; numbers are assigned afterwards by first appearance
    out: list[tuple] = []

    def tag(outlet):
        if outlet:
            out.append(("txt", "{" + OUTLET_TAGS[outlet] + "}"))

    def emit(u):
        out.append(("txt", f"({tv.unit[u]})"))
        if tv.unit[u] == CONTROLLER:
            out.append(("txt", "{" + tv.tag[u] + "}"))
        elif tv.hex_group[u] >= 0:
            out.append(("hex", tv.hex_group[u]))
        for k in sorted(rec_in[u], key=lambda k: (pos[stream[k][0]], stream[k][2])):
            out.append(("rref", k))
        for k in sorted(rec_out[u], key=lambda k: (pos[stream[k][1]], stream[k][2])):
            tag(stream[k][2])
            out.append(("rdef", k))
        for k in sorted(sig_out[u], key=lambda k: pos[tv.signal[k][1]]):
            out.append(("sdef", k))
        if u in amp_of:
            tag(stream[amp_of[u]][2])
            out.append(("txt", "&"))
        for k in sorted(sig_in[u], key=lambda k: pos[tv.signal[k][0]]):
            out.append(("sref", k))
        for s in incoming[u]:
            out.append(("txt", "<&|"))
            emit(s)
            out.append(("txt", "|"))
        kids = children[u]
        for j, k in enumerate(kids):
            last = j == len(kids) - 1
            if not last:
                out.append(("txt", "["))
            tag(stream[k][2])
            emit(stream[k][1])
            if not last:
                out.append(("txt", "]"))

    for j, r in enumerate(parts):
        if j:
            out.append(("txt", "n|"))
        emit(r)

    rec_no: dict[int, int] = {}
    sig_no: dict[int, int] = {}
    hex_no: dict[int, int] = {}
    pieces = []
    for kind, val in out:
        if kind == "txt":
            pieces.append(val)
        elif kind == "hex":
            num = hex_no.setdefault(val, len(hex_no) + 1)
            pieces.append("{%d}" % num)
        elif kind in ("rref", "rdef"):
            num = rec_no.setdefault(val, len(rec_no) + 1)
            body = str(num) if num < 10 else "%%%d" % num
            if num >= 100:
                raise SfilesError("more than 99 recycles cannot be written")
            pieces.append(("<" if kind == "rref" else "") + body)
        else:
            num = sig_no.setdefault(val, len(sig_no) + 1)
            pieces.append(("<_" if kind == "sref" else "_") + str(num))
    return "".join(pieces), order


def _refine(p: _Prepared, colors: list[int]) -> list[int]:
    k = len(set(colors))
    while True:
        sigs = [(colors[v], tuple(sorted((d, c, colors[w]) for d, c, w in p.nb[v]))) for v in range(p.n)]
        uniq = sorted(set(sigs))
        idx = {s: i for i, s in enumerate(uniq)}
        new = [idx[s] for s in sigs]
        if len(uniq) == k:
            return new
        colors, k = new, len(uniq)


def _individualize(colors: list[int], v: int) -> list[int]:
    keys = [(c, 0 if u == v else 1) for u, c in enumerate(colors)]
    uniq = sorted(set(keys))
    idx = {s: i for i, s in enumerate(uniq)}
    return [idx[s] for s in keys]


def _canonical(tv: TrainView) -> str:
    p = _Prepared(tv)
    best: list = [None, None]     # string, layout order
    autos: list[list[int]] = []

    def same_orbit(a: int, b: int, fixed: list[int]) -> bool:
        parent = list(range(p.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x
        for g in autos:
            if all(g[f] == f for f in fixed):
                for x in range(p.n):
                    ra, rb = find(x), find(g[x])
                    if ra != rb:
                        parent[ra] = rb
        return find(a) == find(b)

    def search(colors: list[int], fixed: list[int]):
        colors = _refine(p, colors)
        if len(set(colors)) == p.n:
            s, order = _render(p, colors)
            if best[0] is None or s < best[0]:
                best[0], best[1] = s, order
            elif s == best[0]:
                g = list(range(p.n))
                for a, b in zip(best[1], order):
                    g[a] = b
                autos.append(g)
            return
        target = min(c for c in set(colors) if colors.count(c) > 1)
        cell = [v for v in range(p.n) if colors[v] == target]
        tried: list[int] = []
        for v in cell:
            if any(same_orbit(v, t, fixed) for t in tried):
                continue
            tried.append(v)
            search(_individualize(colors, v), fixed + [v])

    search(list(p.init_colors), [])
    return best[0]


def serialize(g: FlowsheetGraph) -> str:
    """Canonical SFILES string of ``g``."""
    if not g.nodes:
        raise SfilesError("cannot write an empty flowsheet")
    return _canonical(train_view(g))


def write_random(g: FlowsheetGraph, rng) -> str:
    """A valid, generally non-canonical SFILES string of ``g`` with shuffled
    branch, stream and source order. ``rng`` is a :class:`random.Random`."""
    if not g.nodes:
        raise SfilesError("cannot write an empty flowsheet")
    p = _Prepared(train_view(g))
    return _render(p, list(range(p.n)), rng)[0]


def canonicalize(s: str) -> str:
    return serialize(parse(tokenize(s)))


def try_canonicalize(s: str) -> str | None:
    """Canonical form, or None when ``s`` is not a valid flowsheet."""
    try:
        return canonicalize(s)
    except (SfilesError, GraphError):
        return None


# ---------------------------------------------------------------- vocabulary

class Vocabulary:
    """Token text <-> integer id with PAD=0, SOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIAL_TOKENS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    @classmethod
    def from_corpus(cls, strings: Iterable[str]) -> "Vocabulary":
        seen = set()
        for s in strings:
            seen.update(t.text for t in tokenize(s))
        return cls(sorted(seen))

    def add(self, text: str) -> int:
        if text not in self.stoi:
            self.stoi[text] = len(self.itos)
            self.itos.append(text)
        return self.stoi[text]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, text: str) -> bool:
        return text in self.stoi

    def id(self, text: str) -> int:
        return self.stoi.get(text, UNK_ID)

    def text(self, idx: int) -> str:
        return self.itos[idx] if 0 <= idx < len(self.itos) else UNK_TEXT

    def encode(self, s: str, add_special: bool = True) -> list[int]:
        ids = [self.id(t.text) for t in tokenize(s)]
        return [SOS_ID] + ids + [EOS_ID] if add_special else ids

    def decode(self, ids: Iterable[int]) -> str:
        """Join token texts, stopping at EOS and skipping PAD/SOS."""
        parts = []
        for i in ids:
            if i == EOS_ID:
                break
            if i in (PAD_ID, SOS_ID):
                continue
            parts.append(self.text(i))
        return "".join(parts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, t in enumerate(self.itos):
                fh.write(f"{t}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    t, i = line.rstrip("\n").split("\t")
                    rows.append((int(i), t))
        rows.sort()
        if [t for _, t in rows[:4]] != list(SPECIAL_TOKENS) or [i for i, _ in rows] != list(range(len(rows))):
            raise SfilesError(f"{path} is not a vocabulary file")
        v = cls()
        for _, t in rows[4:]:
            v.add(t)
        return v
