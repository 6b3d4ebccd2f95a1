import os

import pytest
from hypothesis import HealthCheck, settings

from graph2sfiles.datagen import WITH_VALVES, WITHOUT_VALVES, generate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# pass/fail lines from the acceptance checks, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

DISTILLATION = "(raw)(hex){1}(dist)[{bout}(prod)]{tout}(prod)n|(raw)(hex){1}(prod)"

# Five ranked beam outputs for a mixer/reactor/splitter/compressor flowsheet;
# the third one is the ground truth.
CASE_PREDICTIONS = [
    "(raw)(C){FC}_1(v)<_1(mix)<&|(raw)(C){FC}_2(v)&<_2|(mix)<&|(raw)(C){FC}_3(v)&<_3|(mix)<1(r)<_4[(C){TC}_4]"
    "[(C){LC}_5][{bout}(v)<_5(prod)]{tout}(C){PC}_6(v)<_6(splt)[(comp)[(C){M}<_7](C){PC}_7(prod)](C){FC}_8(v)1<_8",
    "(raw)(C){FC}_1(v)<_1(mix)<&|(raw)(C){FC}_2(v)&<_2|(C){FT}_3(mix)<&|(raw)(C){FFC}_4<_3(v)&<_4|(mix)<1(r)<_5"
    "[(C){TC}_5][(C){LC}_6][{bout}(v)<_6(prod)]{tout}(C){PC}_7(v)<_7(splt)[(comp)[(C){M}<_8](C){PC}_8(prod)]"
    "(C){FC}_9(v)1<_9",
    "(raw)(C){FC}_1(v)<_1(mix)<&|(raw)(C){FC}_2(v)&<_2|(mix)<&|(raw)(C){FC}_3(v)&<_3|(mix)<1(r)[(C){TI}]"
    "[(C){LC}_4][{bout}(v)<_4(prod)]{tout}(C){PC}_5(v)<_5(splt)[(comp)[(C){M}<_6](C){PC}_6(prod)](C){FC}_7(v)1<_7",
    "(raw)(C){FC}_1(v)<_1(mix)<&|(raw)(C){FC}_2(v)&<_2|(C){FT}_3(mix)<&|(raw)(C){FFC}_4<_3(v)&<_4|(mix)<1(r)"
    "[(C){TI}][(C){LC}_5][{bout}(v)<_5(prod)]{tout}(C){PC}_6(v)<_6(splt)[(comp)[(C){M}<_7](C){PC}_7(prod)]"
    "(C){FC}_8(v)1<_8",
    "(raw)(C){FC}_1(v)<_1(mix)<&|(raw)(C){FC}_2(v)&<_2|(mix)<&|(raw)(C){FC}_3(v)&<_3|(mix)<1(r)<_4[(C){TC}_4]"
    "[(C){LC}_5][{bout}(v)<_5(prod)]{tout}(C){PC}_6(v)<_6(splt)[(C){FC}_7(v)1<_7](comp)[(C){M}<_8](C){PC}_8(prod)",
]
CASE_TRUTH = CASE_PREDICTIONS[2]


@pytest.fixture(scope="session")
def corpus():
    """A few hundred generated pairs of each dataset variant."""
    return {WITH_VALVES: generate(300, 11, WITH_VALVES), WITHOUT_VALVES: generate(300, 12, WITHOUT_VALVES)}


def make_tiny_model(arch="combined", seed=0, d=16, layers=1, max_len=64):
    """Untrained two-head model with a vocabulary built from a small corpus."""
    from graph2sfiles.flowgraph import NodeDictionary
    from graph2sfiles.model import Graph2Sfiles
    from graph2sfiles.sfiles import Vocabulary
    from graph2sfiles.train import desk_config

    pairs = generate(40, 5)
    cfg = desk_config(arch, layers=layers, d=d, heads=2, ffn_dim=32, dropout=0.0)
    cfg.decoder.max_len = max_len
    vocab = Vocabulary.from_corpus([p.cef for p in pairs])
    return Graph2Sfiles.initialize(cfg, vocab, NodeDictionary(), seed), pairs


@pytest.fixture(scope="session")
def tiny_model():
    return make_tiny_model()
