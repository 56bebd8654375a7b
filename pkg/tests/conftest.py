import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=150, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from mirage.facts import Fact, FactSet  # noqa: E402
from mirage.rules import MetaRule  # noqa: E402

WORKED_INPUTS = [(3, 3, 7), (1, 2, 5), (6, 0, 4), (2, 5, 1), (9, 1, 0)]


@pytest.fixture
def worked_rule():
    return MetaRule("add", (1, 2), (0, 1), 3)


@pytest.fixture
def worked_facts(worked_rule):
    from oracles import ref_apply
    facts = [Fact(x, ref_apply("add", (1, 2), (0, 1), {}, x)) for x in WORKED_INPUTS]
    return FactSet(worked_rule, tuple(facts))


@pytest.fixture(autouse=True)
def _no_network(monkeypatch):
    """Any real socket use in a test is a bug: the suite runs on mocks only."""
    import socket

    def guard(*args, **kwargs):
        raise RuntimeError("network access attempted during tests")
    monkeypatch.setattr(socket.socket, "connect", guard)
