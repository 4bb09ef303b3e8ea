import math
from concurrent.futures import ThreadPoolExecutor

import pytest

from ddtep import corpus, load
from ddtep.bdd import BDD
from ddtep.engine import (
    World,
    compile,
    default_strategy,
    enumerate_worlds,
    eu_fast,
    expected_utility,
    least_model,
    marginal,
    marginal_fast,
    wmc,
)
from ddtep.errors import ConstraintViolation, InconsistentEvidence, ResourceLimitError, StrategyError
from ddtep.syntax import parse_atom

from conftest import admissible, corpus_gp, strategy


def world_with(gp, true_atoms):
    ids = {gp.atom_id(parse_atom(x)) for x in true_atoms}
    picks = []
    for cv in gp.choices:
        hit = [j for j, (a, _) in enumerate(cv.outcomes) if a in ids]
        picks.append(hit[0] if hit else [j for j, (a, _) in enumerate(cv.outcomes) if a is None][0])
    prob = math.prod(cv.outcomes[j][1] for cv, j in zip(gp.choices, picks))
    return World(tuple(picks), prob)


def model_names(gp, model):
    return {str(gp.atoms[a]) for a in model}


# worlds --------------------------------------------------------------------


def test_burning_room_has_64_worlds():
    assert len(list(enumerate_worlds(corpus_gp("burning_room")))) == 64


def test_program_without_choices_has_one_certain_world():
    (w,) = list(enumerate_worlds(corpus_gp("car")))
    assert w.probability == 1.0 and w.assignment == ()


def test_cake_has_two_even_worlds():
    assert [w.probability for w in enumerate_worlds(corpus_gp("cake"))] == [0.5, 0.5]


def test_world_probabilities_sum_to_one(corpus_name):
    total = math.fsum(w.probability for w in enumerate_worlds(corpus_gp(corpus_name)))
    assert abs(total - 1.0) < 1e-9


def test_world_cap_is_enforced(monkeypatch):
    gp = corpus_gp("burning_room")
    with pytest.raises(ResourceLimitError, match="too large for oracle"):
        enumerate_worlds(gp, cap=10)
    monkeypatch.setenv("DDTEP_WORLD_CAP", "63")
    with pytest.raises(ResourceLimitError):
        expected_utility(gp, strategy(gp, "ask"))


# least model ---------------------------------------------------------------


def test_car_carmageddon_kills_everything_in_front():
    gp = corpus_gp("car")
    (w,) = enumerate_worlds(gp)
    model = model_names(gp, least_model(gp, w, strategy(gp, "carmageddon")))
    assert {f"kill({x})" for x in "abcde"} <= model


def test_burning_room_short_with_fire_and_damage():
    gp = corpus_gp("burning_room")
    w = world_with(gp, ["fire", "robot_gone_aux1"])
    model = model_names(gp, least_model(gp, w, strategy(gp, "short")))
    assert {"robot_gone", "saved_short"} <= model
    assert "saved_long" not in model


def test_empty_rule_set_gives_chosen_facts_only():
    gp = load("0.5::a. 0.5::b.")
    w = world_with(gp, ["a"])
    assert model_names(gp, least_model(gp, w, default_strategy(gp))) == {"a"}


@pytest.mark.parametrize("name", ["car", "archives", "cake_people"])
def test_least_model_is_monotone_on_positive_programs(name):
    gp = corpus_gp(name)
    s = admissible(gp)[0]
    for w in list(enumerate_worlds(gp))[:16]:
        base = least_model(gp, w, s)
        for extra in range(len(gp.atoms)):
            assert base <= least_model(gp, w, s, extra=[extra])


# marginals -----------------------------------------------------------------


def test_burning_room_robot_gone_under_short():
    gp = corpus_gp("burning_room")
    assert marginal(gp, strategy(gp, "short"), parse_atom("robot_gone")) == pytest.approx(0.35, abs=1e-12)


def test_unknown_atom_has_probability_zero(caplog):
    gp = corpus_gp("cake")
    assert marginal(gp, strategy(gp, "ask"), parse_atom("unicorn")) == 0.0
    assert "unicorn" in caplog.text


def test_archives_impact_of_carol():
    gp = load(corpus.read("archives"), queries=[parse_atom("impact(carol,area51)")])
    p = marginal(gp, default_strategy(gp), parse_atom("impact(carol,area51)"))
    assert p == pytest.approx(1 - (1 - 0.2) * (1 - 0.9), abs=1e-12)


def test_conditional_marginal():
    gp = corpus_gp("burning_room")
    s = strategy(gp, "ask")
    p = marginal(gp, s, parse_atom("robot_gone"), {parse_atom("rvip"): False})
    assert p == pytest.approx(0.35, abs=1e-12)  # fire (0.5) and damage (0.7)
    assert marginal_fast(gp, s, parse_atom("robot_gone"), {parse_atom("rvip"): False}) == pytest.approx(p, abs=1e-12)


def test_zero_probability_evidence_is_rejected():
    gp = corpus_gp("burning_room")
    with pytest.raises(InconsistentEvidence):
        marginal(gp, strategy(gp, "long"), parse_atom("fire"), {parse_atom("robot_gone"): True})
    with pytest.raises(InconsistentEvidence):
        marginal_fast(gp, strategy(gp, "long"), parse_atom("fire"), {parse_atom("robot_gone"): True})


def test_multi_outcome_disjunction_with_residual():
    gp = load("0.2::a;0.3::b;0.1::c. x:-a. x:-c. ?::go;?::stay.")
    s = default_strategy(gp)
    (cv,) = gp.choices
    assert len(cv.outcomes) == 4
    for atom, p in [("a", 0.2), ("b", 0.3), ("c", 0.1), ("x", 0.3)]:
        assert marginal(gp, s, parse_atom(atom)) == pytest.approx(p, abs=1e-12)
        assert marginal_fast(gp, s, parse_atom(atom)) == pytest.approx(p, abs=1e-12)


# expected utility -----------------------------------------------------------


@pytest.mark.parametrize(
    "name, picks, value",
    [
        ("car", "run_into_wall", -30),
        ("car", "carmageddon", -50),
        ("cake", "bake_cake", 0.5),
        ("cake", "kill", 1.5),
        ("cake", "ask,informed_bake,informed_kill", 2.0),
        ("cake_people", "kill", 3.5),
        ("cake_people", "ask,informed_bake,informed_kill", 4.0),
        ("cake_likes", "bake_cake", 2.455),
        ("burning_room", "long", 5.6),
        ("burning_room", "short", 5.625),
        ("burning_room", "ask", 7.675),
    ],
)
def test_expected_utility_examples(name, picks, value):
    gp = corpus_gp(name)
    s = strategy(gp, picks)
    assert abs(expected_utility(gp, s).total - value) < 1e-9
    assert abs(eu_fast(gp, s).total - value) < 1e-9


def test_report_breakdown_sums_to_total():
    gp = corpus_gp("car")
    report = expected_utility(gp, strategy(gp, "carmageddon"))
    contributions = {str(r.atom): r.contribution for r in report.rows}
    assert contributions == {
        "run_into_wall": 0.0, "kill(a)": -20.0, "kill(b)": -10.0, "kill(c)": 0.0, "kill(d)": -10.0, "kill(e)": -10.0,
    }
    assert report.total == math.fsum(contributions.values())


def test_inadmissible_strategy_names_constraint():
    gp = corpus_gp("archives")
    bad = strategy(gp, "give(ann,area51),give(bob,area51),give(carol,stamps)")
    with pytest.raises(ConstraintViolation, match="give"):
        expected_utility(gp, bad)
    with pytest.raises(ConstraintViolation):
        eu_fast(gp, bad)


def test_program_evidence_conditions_expected_utility():
    gp = load("?::a;?::b. 0.5::rain. wet:-rain. utility(wet,10). evidence(rain,true).")
    assert expected_utility(gp, default_strategy(gp)).total == pytest.approx(10.0)
    assert eu_fast(gp, default_strategy(gp)).total == pytest.approx(10.0)


def test_mismatched_strategy_shape_is_rejected():
    gp = corpus_gp("cake")
    with pytest.raises(StrategyError):
        expected_utility(gp, default_strategy(corpus_gp("car")))


# circuits ------------------------------------------------------------------


def test_static_fact_compiles_to_true():
    gp = corpus_gp("car")
    assert compile(gp, parse_atom("baby(a)")).root == BDD.TRUE


def test_kill_circuit_is_the_carmageddon_decision():
    gp = corpus_gp("car")
    c = compile(gp, parse_atom("kill(a)"))
    (d,) = [d for d in gp.decisions if str(d.label) == "carmageddon"]
    assert c.root == c.bdd.var(d.id)
    assert wmc(c, strategy(gp, "carmageddon")) == 1.0
    assert wmc(c, strategy(gp, "run_into_wall")) == 0.0


def test_robot_gone_circuit_support():
    gp = corpus_gp("burning_room")
    c = compile(gp, parse_atom("robot_gone"))
    comp = c.compiler
    decisions = {str(gp.decisions[d].label) for d in comp.decision_support(c.root)}
    assert decisions == {"ask", "short"}
    used = set()
    for i in comp.choice_support(c.root):
        used |= {str(gp.atoms[a]) for a, _ in gp.choices[i].outcomes if a is not None}
    assert used == {"fire", "rvip", "robot_gone_aux1", "robot_gone_aux2"}
    assert wmc(c, strategy(gp, "short")) == pytest.approx(0.35, abs=1e-12)


def test_true_leaf_counts_one():
    gp = corpus_gp("car")
    assert wmc(compile(gp, parse_atom("pedestrian(b)")), strategy(gp, "carmageddon")) == 1.0


def test_oracle_and_circuit_agree_everywhere(corpus_name):
    gp = corpus_gp(corpus_name)
    for s in admissible(gp):
        oracle, fast = expected_utility(gp, s), eu_fast(gp, s)
        assert abs(oracle.total - fast.total) < 1e-9
        for r1, r2 in zip(oracle.rows, fast.rows):
            assert abs(r1.probability - r2.probability) < 1e-9


def test_parallel_evaluation_is_bit_identical():
    gp = load(corpus.read("archives"))
    strategies = admissible(gp)
    serial = [eu_fast(gp, s).total for s in strategies]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda s: eu_fast(gp, s).total, strategies))
    assert serial == parallel
