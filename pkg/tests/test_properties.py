"""Property-based checks over the shipped corpus and generated programs."""

import dataclasses
import math

from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from ddtep import corpus
from ddtep.engine import enumerate_worlds, eu_fast, expected_utility, least_model, marginal, marginal_fast
from ddtep.errors import ProgramError
from ddtep.grounder import GroundUtility
from ddtep.syntax import (
    AnnotatedDisjunction,
    Atom,
    Const,
    Constraint,
    DecisionGroup,
    EvidenceDecl,
    ListTerm,
    Literal,
    Num,
    Rule,
    UtilityDecl,
    Var,
    check_program,
    Program,
    parse_program,
    render,
)

from conftest import PROGRAMS, admissible, corpus_gp

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
programs = st.sampled_from(PROGRAMS)


def with_rewards(gp, rewards):
    utilities = tuple(GroundUtility(u.atom, r) for u, r in zip(gp.utilities, rewards))
    return dataclasses.replace(gp, utilities=utilities, _cache={})


def argmax_set(gp):
    reports = [eu_fast(gp, s) for s in admissible(gp)]
    top = max(r.total for r in reports)
    return {r.strategy for r in reports if r.total >= top - 1e-9 * max(1.0, abs(top))}


@SETTINGS
@given(programs, st.floats(0.01, 1000))
def test_reward_scaling_keeps_the_argmax(name, c):
    gp = corpus_gp(name)
    scaled = with_rewards(gp, [u.reward * c for u in gp.utilities])
    for s in admissible(gp):
        assert math.isclose(eu_fast(scaled, s).total, c * eu_fast(gp, s).total, rel_tol=1e-9, abs_tol=1e-9)
    assert argmax_set(scaled) == argmax_set(gp)


@SETTINGS
@given(programs, st.data(), st.floats(-100, 100))
def test_reward_shift_moves_eu_by_delta_times_probability(name, data, delta):
    gp = corpus_gp(name)
    assume(gp.utilities)
    i = data.draw(st.integers(0, len(gp.utilities) - 1))
    s = data.draw(st.sampled_from(admissible(gp)))
    rewards = [u.reward for u in gp.utilities]
    rewards[i] += delta
    shifted = with_rewards(gp, rewards)
    before, after = expected_utility(gp, s), expected_utility(shifted, s)
    p = before.rows[i].probability
    assert abs((after.total - before.total) - delta * p) < 1e-9


@SETTINGS
@given(programs, st.data())
def test_conditioning_consistency(name, data):
    gp = corpus_gp(name)
    s = data.draw(st.sampled_from(admissible(gp)))
    a = data.draw(st.integers(0, len(gp.atoms) - 1))
    e = data.draw(st.integers(0, len(gp.atoms) - 1))
    truth = data.draw(st.booleans())
    joint = p_e = 0.0
    for w in enumerate_worlds(gp):
        model = least_model(gp, w, s)
        if (e in model) == truth:
            p_e += w.probability
            if a in model:
                joint += w.probability
    assume(p_e > 1e-12)
    conditional = marginal(gp, s, a, {e: truth})
    assert abs(conditional * p_e - joint) < 1e-9
    assert abs(marginal_fast(gp, s, a, {e: truth}) * p_e - joint) < 1e-9


@SETTINGS
@given(programs, st.sampled_from([" ", "\n", "\n\n", "\n% note\n", "\t"]))
def test_corpus_round_trip_survives_layout_changes(name, pad):
    program = parse_program(corpus.read(name))
    assert parse_program(pad.join(render(program).splitlines())) == program
    assert render(parse_program(render(program))) == render(program)


# generated programs ------------------------------------------------------

names = st.sampled_from(["a", "b", "kill", "ann", "t0", "area51", "Ann Smith", "x_1"])
constants = names.map(Const)
numbers = st.one_of(st.integers(-50, 50).map(float), st.sampled_from([0.5, -2.25, 1e-3])).map(Num)
variables = st.sampled_from(["X", "Y", "Person"]).map(Var)
leaf_terms = st.one_of(constants, numbers, variables)
terms = st.recursive(
    leaf_terms,
    lambda inner: st.lists(inner, max_size=3).map(lambda xs: ListTerm(tuple(xs), None)),
    max_leaves=4,
)


@st.composite
def source_atom(draw, prefix):
    k = draw(st.integers(0, 2))
    return Atom(f"{prefix}{k}", tuple(draw(terms) for _ in range(k)))


@st.composite
def statements(draw):
    kind = draw(st.sampled_from(["rule", "ad", "group", "utility", "constraint", "evidence"]))
    if kind == "rule":
        body = tuple(Literal(draw(source_atom("q")), draw(st.booleans())) for _ in range(draw(st.integers(0, 3))))
        return Rule(draw(source_atom("r")), body)
    if kind == "ad":
        n = draw(st.integers(1, 3))
        probs = draw(st.lists(st.sampled_from([0.1, 0.2, 0.25, 0.3]), min_size=n, max_size=n))
        heads = tuple((p, draw(source_atom("p"))) for p in probs)
        body = tuple(Literal(draw(source_atom("q"))) for _ in range(draw(st.integers(0, 2))))
        return AnnotatedDisjunction(heads, body)
    if kind == "group":
        # a lone "?::a." is a free decision, so groups need two distinct alternatives
        alts = draw(st.lists(source_atom("d"), min_size=2, max_size=3, unique=True))
        return DecisionGroup(tuple(alts))
    if kind == "utility":
        guard = tuple(Literal(draw(source_atom("q"))) for _ in range(draw(st.integers(0, 2))))
        return UtilityDecl(draw(source_atom("r")), float(draw(st.integers(-30, 30))), guard)
    if kind == "constraint":
        return Constraint(tuple(Literal(draw(source_atom("q")), draw(st.booleans())) for _ in range(1, 3)))
    return EvidenceDecl(draw(source_atom("r")), draw(st.booleans()))


@settings(max_examples=150, deadline=None)
@given(st.lists(statements(), max_size=6))
def test_generated_programs_round_trip(sts):
    program = Program(tuple(sts))
    try:
        check_program(program)
    except ProgramError:
        assume(False)
    assert parse_program(render(program)) == program
