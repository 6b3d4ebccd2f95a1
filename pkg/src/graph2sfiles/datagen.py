"""Synthetic PFD -> CEF training pairs built from chained process templates.

Every flowsheet starts with a feed section and chains up to three process
templates. Controllers are placed by simple rules per template; the PFD is
the CEF with controllers (and, for the ``without_valves`` variant, valves)
spliced out.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .flowgraph import BOTTOM, SIGNAL, STREAM, TOP, Edge, EdgeAttr, FlowsheetGraph, Node, strip_control
from .sfiles import serialize

WITH_VALVES = "with_valves"
WITHOUT_VALVES = "without_valves"
VARIANTS = (WITH_VALVES, WITHOUT_VALVES)

MAX_PFD_NODES = 25


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplePair:
    pfd: str
    cef: str
    variant: str = WITH_VALVES
    templates: tuple[str, ...] = field(default=(), compare=False)


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []
        self.edges: list[Edge] = []

    def unit(self, typ: str) -> int:
        self.nodes.append(Node(len(self.nodes), typ))
        return len(self.nodes) - 1

    def ctrl(self, code: str) -> int:
        self.nodes.append(Node(len(self.nodes), "C", code))
        return len(self.nodes) - 1

    def stream(self, a: int, b: int, outlet: int = 0, hex_in: int = 0, hex_out: int = 0) -> None:
        self.edges.append(Edge(a, b, STREAM, EdgeAttr(outlet, hex_in, hex_out)))

    def signal(self, c: int, target: int, hex_in: int = 0) -> None:
        self.edges.append(Edge(c, target, SIGNAL, EdgeAttr(0, hex_in, 0)))

    def graph(self) -> FlowsheetGraph:
        return FlowsheetGraph(self.nodes, self.edges)


# A port is (node id, outlet position, hex side) describing a stream leaving a unit.
Port = tuple


def _link(b: _Builder, port: Port, dst: int, hex_in: int = 0) -> None:
    b.stream(port[0], dst, port[1], hex_in, port[2])


def _valved(b: _Builder, port: Port, code: str = "FC") -> Port:
    """port -> controller (in-stream) -> valve, with a signal to the valve."""
    c = b.ctrl(code)
    _link(b, port, c)
    v = b.unit("v")
    b.stream(c, v)
    b.signal(c, v)
    return (v, 0, 0)


def _dispose(b: _Builder, port: Port) -> None:
    _link(b, port, b.unit("prod"))


def feed(b: _Builder, rng: random.Random, inlet: Port | None) -> Port:
    n_raw = rng.choice((1, 2, 3)) if inlet is None else rng.choice((1, 2))
    ratio = n_raw >= 2 and rng.random() < 0.3
    cur = inlet
    for j in range(n_raw):
        raw = b.unit("raw")
        last = j == n_raw - 1
        if cur is None:
            cur = _valved(b, (raw, 0, 0))
            continue
        if ratio and last:
            # flow-ratio control: measure the combined stream, set this feed's valve
            ft = b.ctrl("FT")
            _link(b, cur, ft)
            ffc = b.ctrl("FFC")
            b.stream(raw, ffc)
            v = b.unit("v")
            b.stream(ffc, v)
            b.signal(ft, ffc)
            b.signal(ffc, v)
            mix = b.unit("mix")
            b.stream(ft, mix)
            b.stream(v, mix)
        else:
            side = _valved(b, (raw, 0, 0))
            mix = b.unit("mix")
            _link(b, cur, mix)
            _link(b, side, mix)
        cur = (mix, 0, 0)
    return cur


def _reactor(b: _Builder, rng: random.Random, inlet_node: int) -> tuple[int, Port]:
    r = b.unit("r")
    b.stream(inlet_node, r)
    if rng.random() < 0.5:
        b.stream(r, b.ctrl("TI"))
    else:
        tc = b.ctrl("TC")
        b.stream(r, tc)
        b.signal(tc, r)
    lc = b.ctrl("LC")
    b.stream(r, lc)
    v = b.unit("v")
    b.stream(r, v, BOTTOM)
    b.signal(lc, v)
    _dispose(b, (v, 0, 0))
    top = _valved(b, (r, TOP, 0), "PC")
    return r, top


def reactor(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    src = inlet[0]
    if inlet[1] or inlet[2]:
        mix = b.unit("mix")
        _link(b, inlet, mix)
        src = mix
    return _reactor(b, rng, src)[1]


def reactor_recycle_compressor(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    mix = b.unit("mix")
    _link(b, inlet, mix)
    _, top = _reactor(b, rng, mix)
    splt = b.unit("splt")
    _link(b, top, splt)
    comp = b.unit("comp")
    b.stream(splt, comp)
    m = b.ctrl("M")
    b.stream(comp, m)
    pc = b.ctrl("PC")
    b.stream(comp, pc)
    b.signal(pc, m)
    back = _valved(b, (splt, 0, 0))
    _link(b, back, mix)
    return (pc, 0, 0)


def distillation(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    d = b.unit("dist")
    _link(b, inlet, d)
    tc = b.ctrl("TC")
    b.stream(d, tc)
    b.signal(tc, d)
    lc = b.ctrl("LC")
    b.stream(d, lc)
    v = b.unit("v")
    b.stream(d, v, BOTTOM)
    b.signal(lc, v)
    top = _valved(b, (d, TOP, 0), "PC")
    if rng.random() < 0.5:
        _dispose(b, (v, 0, 0))
        return top
    _dispose(b, top)
    return (v, 0, 0)


def hex_pair(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    h = b.unit("hex")
    _link(b, inlet, h, hex_in=1)
    tc = b.ctrl("TC")
    b.stream(h, tc, hex_out=1)
    util = b.unit("raw")
    v = b.unit("v")
    b.stream(util, v)
    b.stream(v, h, hex_in=2)
    b.stream(h, b.unit("prod"), hex_out=2)
    b.signal(tc, v)
    return (tc, 0, 0)


def heater(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    h = b.unit("hex")
    _link(b, inlet, h)
    tc = b.ctrl("TC")
    b.stream(h, tc)
    b.signal(tc, h)
    return (tc, 0, 0)


def compressor(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    comp = b.unit("comp")
    _link(b, inlet, comp)
    m = b.ctrl("M")
    b.stream(comp, m)
    pc = b.ctrl("PC")
    b.stream(comp, pc)
    b.signal(pc, m)
    return (pc, 0, 0)


def pump(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    pp = b.unit("pp")
    _link(b, inlet, pp)
    return _valved(b, (pp, 0, 0))


def flash(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    f = b.unit("flash")
    _link(b, inlet, f)
    lc = b.ctrl("LC")
    b.stream(f, lc)
    v = b.unit("v")
    b.stream(f, v, BOTTOM)
    b.signal(lc, v)
    top = _valved(b, (f, TOP, 0), "PC")
    if rng.random() < 0.5:
        _dispose(b, top)
        return (v, 0, 0)
    _dispose(b, (v, 0, 0))
    return top


def splitter(b: _Builder, rng: random.Random, inlet: Port) -> Port:
    s = b.unit("splt")
    _link(b, inlet, s)
    _dispose(b, _valved(b, (s, 0, 0)))
    return (s, 0, 0)


TEMPLATES: dict[str, Callable] = {
    "reactor": reactor,
    "reactor_recycle_compressor": reactor_recycle_compressor,
    "distillation": distillation,
    "hex_pair": hex_pair,
    "heater": heater,
    "compressor": compressor,
    "pump": pump,
    "flash": flash,
    "splitter": splitter,
}
TEMPLATE_NAMES = ("feed",) + tuple(TEMPLATES)


def build_flowsheet(rng: random.Random, weights: Mapping[str, float] | None = None,
                    max_process: int = 3) -> tuple[FlowsheetGraph, tuple[str, ...]]:
    """One random CEF graph: a feed section followed by 0..max_process templates."""
    names = list(TEMPLATES)
    w = [float((weights or {}).get(nm, 1.0)) for nm in names]
    if sum(w) <= 0:
        raise ValueError("template weights must not all be zero")
    b = _Builder()
    used = ["feed"]
    port = feed(b, rng, None)
    for _ in range(rng.randint(0, max_process)):
        nm = rng.choices(names, weights=w)[0]
        port = TEMPLATES[nm](b, rng, port)
        used.append(nm)
    _dispose(b, port)
    return b.graph(), tuple(used)


def make_pair(cef: FlowsheetGraph, variant: str = WITH_VALVES, templates: Sequence[str] = ()) -> SamplePair:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    pfd = strip_control(cef, also_valves=variant == WITHOUT_VALVES)
    return SamplePair(serialize(pfd), serialize(cef), variant, tuple(templates))


def generate(n: int, seed: int, variant: str = WITH_VALVES, weights: Mapping[str, float] | None = None,
             max_retries: int | None = None) -> list[SamplePair]:
    """``n`` distinct pairs, deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    budget = max_retries if max_retries is not None else 50 * n + 100
    seen: set[str] = set()
    out: list[SamplePair] = []
    attempt = 0
    while len(out) < n:
        if attempt >= budget:
            raise GenerationError(f"only {len(out)} distinct pairs after {attempt} attempts")
        rng = random.Random(f"{seed}/{attempt}")
        attempt += 1
        cef, used = build_flowsheet(rng, weights)
        pair = make_pair(cef, variant, used)
        if len(strip_control(cef, also_valves=False).nodes) > MAX_PFD_NODES or pair.cef in seen:
            continue
        seen.add(pair.cef)
        out.append(pair)
    return out


def split(pairs: Sequence, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle into train/val/test with sizes floor(f*n); the rest goes to train."""
    if len(pairs) < 3:
        raise ValueError("need at least 3 pairs to split")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    # duplicates (same canonical CEF) stay together so splits cannot overlap
    groups: dict[str, list] = {}
    for p in pairs:
        groups.setdefault(getattr(p, "cef", p), []).append(p)
    keys = list(groups)
    random.Random(seed).shuffle(keys)
    n = len(pairs)
    n_val, n_test = int(fractions[1] * n), int(fractions[2] * n)
    val, test, train = [], [], []
    for k in keys:
        if len(val) < n_val:
            val.extend(groups[k])
        elif len(test) < n_test:
            test.extend(groups[k])
        else:
            train.extend(groups[k])
    return train, val, test
