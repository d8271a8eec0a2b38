import numpy as np
import pytest
from hypothesis import settings

from toxkge.kg import RDFS_SUBCLASS, KnowledgeGraph, Triple

settings.register_profile("ci", max_examples=50, deadline=None)
settings.load_profile("ci")

EX = "http://example.org/t/"


def iri(name: str) -> str:
    return EX + name


def tree_graph(edges, extra=()):
    """Graph with ``child subClassOf parent`` edges given as name pairs."""
    triples = [Triple(iri(c), RDFS_SUBCLASS, iri(p)) for c, p in edges]
    triples += [Triple(iri(s), iri(p), iri(o)) for s, p, o in extra]
    return KnowledgeGraph(triples)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
