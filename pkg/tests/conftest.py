import functools

import pytest

from ddtep import corpus, load
from ddtep.cli import parse_assignments
from ddtep.engine import strategy_from_assignment
from ddtep.solver import enumerate_strategies

PROGRAMS = corpus.PROGRAMS


@functools.lru_cache(maxsize=None)
def corpus_gp(name):
    return load(corpus.read(name))


def strategy(gp, text):
    return strategy_from_assignment(gp, parse_assignments([text]))


def admissible(gp):
    return list(enumerate_strategies(gp))


@pytest.fixture
def gp_of():
    return corpus_gp


@pytest.fixture(params=PROGRAMS)
def corpus_name(request):
    return request.param
