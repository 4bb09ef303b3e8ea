import pytest

from ddtep import corpus, load
from ddtep.engine import eu_fast
from ddtep.errors import GroundingError, InstantiationError, RangeRestrictionError, UnstratifiedError
from ddtep.grounder import check_stratified, dump, eval_builtin, ground, herbrand_universe, prune_program
from ddtep.syntax import Atom, Const, Literal, desugar, parse_atom, parse_program

from conftest import admissible, corpus_gp


def names(gp, ids):
    return sorted(str(gp.atoms[i]) for i in ids)


def test_herbrand_universe_collects_list_members():
    core = desugar(parse_program(corpus.read("cake_people")))
    universe = {c.name for c in herbrand_universe(core)}
    assert {"ann", "bob", "carol", "dan", "evi", "finn", "gio"} <= universe


def test_herbrand_universe_of_empty_program_is_extra():
    extra = {Const("t0"), Const("t5")}
    assert herbrand_universe(desugar(parse_program("")), extra) == frozenset(extra)


def test_dataset_constants_join_universe():
    gp = ground(desugar(parse_program(corpus.read("archives"))), extra=[Const("t5")])
    assert Const("t5") in gp.universe


def test_member_enumerates_list():
    out = eval_builtin(Literal(parse_atom("member(X,[ann,bob])")), {})
    assert [b[next(iter(b))] for b in out] == [Const("ann"), Const("bob")]


def test_not_equal_builtin():
    ne = "\\="
    assert eval_builtin(Literal(Atom(ne, (Const("ann"), Const("ann")))), {}) == []
    assert eval_builtin(Literal(Atom(ne, (Const("area51"), Const("stamps")))), {}) == [{}]


def test_unbound_builtin_argument_is_instantiation_error():
    with pytest.raises(InstantiationError):
        load("p(X):-member(X,Y).")


def test_range_restriction_violation_names_variable():
    with pytest.raises(RangeRestrictionError, match="X"):
        load("p(X).")


def test_car_grounds_five_kill_rules_and_six_utilities():
    gp = corpus_gp("car")
    heads = [str(gp.atoms[r.head]) for r in gp.rules]
    assert sorted(heads) == [f"kill({x})" for x in "abcde"]
    assert sorted(str(gp.atoms[u.atom]) for u in gp.utilities) == sorted(
        ["run_into_wall"] + [f"kill({x})" for x in "abcde"]
    )


def test_archives_has_eight_give_decisions():
    gp = corpus_gp("archives")
    labels = sorted(str(d.label) for d in gp.decisions)
    assert len(labels) == 8 and all(x.startswith("give(") for x in labels)
    assert gp.groups == () and len(gp.free) == 8


def test_archives_area51_utility_has_four_instances():
    gp = corpus_gp("archives")
    rows = [u for u in gp.utilities if str(gp.atoms[u.atom]).endswith(",area51)")]
    assert len(rows) == 4 and all(u.reward == 100 for u in rows)


def test_burning_room_choices():
    gp = corpus_gp("burning_room")
    assert len(gp.choices) == 6
    assert all(len(cv.outcomes) == 2 for cv in gp.choices)


def test_stratification_of_burning_room():
    strata = check_stratified(corpus_gp("burning_room"))
    assert strata[("robot_gone", 0)] < strata[("saved_long", 0)]


def test_negative_cycle_is_rejected():
    with pytest.raises(UnstratifiedError, match="cycle"):
        load("a:-\\+b. b:-\\+a.")


def test_positive_cycle_in_archives_is_fine():
    check_stratified(corpus_gp("archives"))


def test_utility_guard_must_be_static():
    with pytest.raises(GroundingError, match="static"):
        load("0.5::c. ?::d;?::e. utility(d,1):-c.")


def test_constraint_on_probabilistic_atom_is_rejected():
    with pytest.raises(GroundingError):
        load("0.5::c. ?::d;?::e. :- d, c.")


def test_duplicate_utilities_are_summed(caplog):
    gp = load("?::a;?::b. utility(a,2). utility(a,3).")
    (u,) = [u for u in gp.utilities if str(gp.atoms[u.atom]) == "a"]
    assert u.reward == 5
    assert "duplicate" in caplog.text


def test_grounding_is_deterministic(corpus_name):
    text = corpus.read(corpus_name)
    assert dump(load(text)) == dump(load(text))


def test_dump_lists_ground_clauses():
    text = dump(corpus_gp("car"))
    assert "kill(a):-carmageddon." in text.splitlines()
    assert "?::run_into_wall;?::carmageddon." in text.splitlines()


def test_pruning_preserves_expected_utility(corpus_name):
    gp = corpus_gp(corpus_name)
    pruned = prune_program(gp)
    for s in admissible(gp):
        assert abs(eu_fast(gp, s).total - eu_fast(pruned, s).total) < 1e-12


def test_unreachable_utility_atom_is_flagged():
    gp = load("?::a;?::b. q(x). utility(r,5).")
    assert gp.atom_id(parse_atom("r")) in gp.unreachable
