"""Exact inference and expected utility over a ground program.

Two independent routes compute the same numbers:

* the oracle enumerates every possible world, computes its least model
  and sums world probabilities (``enumerate_worlds``, ``least_model``,
  ``marginal``, ``expected_utility``);
* the circuit route compiles each atom into a BDD over decision and
  choice-indicator variables and runs weighted model counting
  (``compile``, ``wmc``, ``eu_fast``).
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

from .bdd import BDD, DEFAULT_NODE_CAP
from .errors import (
    ConstraintViolation,
    InconsistentEvidence,
    ResourceLimitError,
    StrategyError,
)
from .grounder import GroundConstraint, GroundProgram
from .syntax import Atom, render_atom

log = logging.getLogger(__name__)

DEFAULT_WORLD_CAP = 2**24
WORLD_CAP_ENV = "DDTEP_WORLD_CAP"
TOL = 1e-9


def world_cap() -> int:
    value = os.environ.get(WORLD_CAP_ENV)
    return int(value) if value else DEFAULT_WORLD_CAP


# ---------------------------------------------------------------------------
# Strategies


@dataclass(frozen=True, order=True)
class Strategy:
    """One alternative index per decision group plus a flag per free decision."""

    groups: tuple = ()
    free: tuple = ()

    def true_decisions(self, gp: GroundProgram) -> list[int]:
        ids = [g[i] for g, i in zip(gp.groups, self.groups)]
        ids.extend(d for d, on in zip(gp.free, self.free) if on)
        return ids

    def as_dict(self, gp: GroundProgram) -> dict[str, bool]:
        on = set(self.true_decisions(gp))
        return {render_atom(d.label): d.id in on for d in gp.decisions}

    def describe(self, gp: GroundProgram) -> str:
        chosen = [render_atom(gp.decisions[d].label) for d in self.true_decisions(gp)]
        return ", ".join(chosen) if chosen else "(no decisions)"


def default_strategy(gp: GroundProgram) -> Strategy:
    return Strategy(tuple(0 for _ in gp.groups), tuple(False for _ in gp.free))


def strategy_from_assignment(gp: GroundProgram, assignment: Mapping[Atom, bool]) -> Strategy:
    """Build a strategy from ``{decision atom: bool}``.

    Every exactly-one group needs its pick (one alternative set true, or all
    but one set false). Free decisions that are not mentioned are false.
    """
    by_atom = {}
    for d in gp.decisions:
        by_atom[d.label] = d.id
        by_atom[gp.atoms[d.atom]] = d.id
    values: dict[int, bool] = {}
    for atom, value in assignment.items():
        if atom not in by_atom:
            raise StrategyError(f"{render_atom(atom)} is not a decision of this program")
        values[by_atom[atom]] = bool(value)
    picks, missing = [], []
    for group in gp.groups:
        names = ";".join(render_atom(gp.decisions[d].label) for d in group)
        chosen = [i for i, d in enumerate(group) if values.get(d) is True]
        if len(chosen) > 1:
            both = ", ".join(render_atom(gp.decisions[group[i]].label) for i in chosen)
            raise StrategyError(f"exactly-one group {{{names}}} violated: {both} are all true")
        if not chosen:
            open_ = [i for i, d in enumerate(group) if values.get(d) is not False]
            if len(open_) == 1:
                chosen = open_
            else:
                missing.append(names)
                continue
        picks.append(chosen[0])
    if missing:
        raise StrategyError("missing pick for decision group(s): " + "; ".join(f"{{{m}}}" for m in missing))
    free = tuple(values.get(d, False) for d in gp.free)
    return Strategy(tuple(picks), free)


# ---------------------------------------------------------------------------
# Worlds and least models


@dataclass(frozen=True)
class World:
    assignment: tuple  # outcome index per choice variable
    probability: float


def world_count(gp: GroundProgram) -> int:
    return math.prod(len(cv.outcomes) for cv in gp.choices)


def enumerate_worlds(gp: GroundProgram, cap: int | None = None) -> Iterator[World]:
    """Every total choice with its probability, in canonical (lexicographic) order."""
    cap = world_cap() if cap is None else cap
    n = world_count(gp)
    if n > cap:
        raise ResourceLimitError(
            f"world-space too large for oracle: {n} worlds exceed the cap of {cap}; use the circuit engine"
        )
    return _worlds(gp)


def _worlds(gp: GroundProgram) -> Iterator[World]:
    ranges = [range(len(cv.outcomes)) for cv in gp.choices]
    probs = [[p for _, p in cv.outcomes] for cv in gp.choices]
    for assignment in itertools.product(*ranges):
        p = 1.0
        for table, j in zip(probs, assignment):
            p *= table[j]
        yield World(assignment, p)


def _strata_rules(gp: GroundProgram) -> list:
    cached = gp._cache.get("strata_rules")
    if cached is None:
        cached = [[(gp.rules[r].head, gp.rules[r].pos, gp.rules[r].neg) for r in s] for s in gp.strata]
        gp._cache["strata_rules"] = cached
    return cached


def _fixpoint(gp: GroundProgram, base: set) -> frozenset:
    model = base
    for stratum in _strata_rules(gp):
        changed = True
        while changed:
            changed = False
            for head, pos, neg in stratum:
                if head in model:
                    continue
                if all(p in model for p in pos) and not any(n in model for n in neg):
                    model.add(head)
                    changed = True
    return frozenset(model)


def _decision_facts(gp: GroundProgram, strategy: Strategy) -> list[int]:
    if len(strategy.groups) != len(gp.groups) or len(strategy.free) != len(gp.free):
        raise StrategyError("strategy does not match the decisions of this program")
    return [gp.decisions[d].atom for d in strategy.true_decisions(gp)]


def least_model(gp: GroundProgram, world: World, strategy: Strategy, extra: Iterable[int] = ()) -> frozenset:
    """Atom ids true in the stratified least model of one world under one strategy."""
    base = set(gp.facts)
    for cv, j in zip(gp.choices, world.assignment):
        atom = cv.outcomes[j][0]
        if atom is not None:
            base.add(atom)
    base.update(_decision_facts(gp, strategy))
    base.update(extra)
    return _fixpoint(gp, base)


def violated_constraints(gp: GroundProgram, strategy: Strategy) -> list[GroundConstraint]:
    # constraint atoms never depend on choices, so the world can be left empty
    base = set(gp.facts)
    base.update(_decision_facts(gp, strategy))
    model = _fixpoint(gp, base)
    return [
        c for c in gp.constraints
        if all(a in model for a in c.pos) and not any(a in model for a in c.neg)
    ]


def render_constraint(gp: GroundProgram, c: GroundConstraint) -> str:
    body = [render_atom(gp.atoms[a]) for a in c.pos] + [f"\\+{render_atom(gp.atoms[a])}" for a in c.neg]
    return ":-" + ",".join(body) + "."


def check_admissible(gp: GroundProgram, strategy: Strategy) -> None:
    bad = violated_constraints(gp, strategy)
    if bad:
        raise ConstraintViolation(
            f"strategy [{strategy.describe(gp)}] violates constraint {render_constraint(gp, bad[0])}"
        )


def is_admissible(gp: GroundProgram, strategy: Strategy) -> bool:
    return not violated_constraints(gp, strategy)


# ---------------------------------------------------------------------------
# Oracle inference


def _evidence_ids(gp: GroundProgram, evidence: Mapping | None) -> dict[int, bool]:
    merged = dict(gp.evidence)
    for atom, truth in (evidence or {}).items():
        a = gp.atom_id(atom) if isinstance(atom, Atom) else atom
        if a is None:
            if truth:
                raise InconsistentEvidence(f"evidence {render_atom(atom)}=true on an atom that never holds")
            continue
        merged[a] = bool(truth)
    return merged


def _oracle(gp, strategy, atoms: list[int], evidence: dict[int, bool]) -> tuple[list[float], float]:
    """Unnormalised P(atom and evidence) per atom, and P(evidence)."""
    sums = [0.0] * len(atoms)
    p_evidence = 0.0
    for world in enumerate_worlds(gp):
        model = least_model(gp, world, strategy)
        if any((a in model) != t for a, t in evidence.items()):
            continue
        p_evidence += world.probability
        for k, a in enumerate(atoms):
            if a in model:
                sums[k] += world.probability
    return sums, p_evidence


def marginal(gp: GroundProgram, strategy: Strategy, atom, evidence: Mapping | None = None) -> float:
    """P(atom | evidence) under ``strategy`` by world enumeration."""
    a = gp.atom_id(atom) if isinstance(atom, Atom) else atom
    ev = _evidence_ids(gp, evidence)
    if a is None:
        log.warning("%s is not in the program vocabulary", render_atom(atom))
        a_list = []
    else:
        a_list = [a]
    sums, p_e = _oracle(gp, strategy, a_list, ev)
    if p_e <= 0.0:
        raise InconsistentEvidence("evidence has probability zero")
    if not a_list:
        return 0.0
    return sums[0] / p_e if ev else sums[0]


@dataclass(frozen=True)
class UtilityRow:
    atom: Atom
    probability: float
    reward: float
    contribution: float


@dataclass(frozen=True)
class EUReport:
    strategy: Strategy
    rows: tuple
    total: float

    def to_dict(self, gp: GroundProgram) -> dict:
        return {
            "strategy": self.strategy.as_dict(gp),
            "total_eu": self.total,
            "atoms": [
                {
                    "atom": render_atom(r.atom),
                    "probability": r.probability,
                    "reward": r.reward,
                    "contribution": r.contribution,
                }
                for r in self.rows
            ],
        }


def _report(gp: GroundProgram, strategy: Strategy, probs: list[float]) -> EUReport:
    rows = tuple(
        UtilityRow(gp.atoms[u.atom], p, u.reward, p * u.reward) for u, p in zip(gp.utilities, probs)
    )
    return EUReport(strategy, rows, math.fsum(r.contribution for r in rows))


def expected_utility(gp: GroundProgram, strategy: Strategy, evidence: Mapping | None = None) -> EUReport:
    """Expected utility of ``strategy`` by enumerating every world."""
    check_admissible(gp, strategy)
    ev = _evidence_ids(gp, evidence)
    atoms = [u.atom for u in gp.utilities]
    sums, p_e = _oracle(gp, strategy, atoms, ev)
    if p_e <= 0.0:
        raise InconsistentEvidence("evidence has probability zero")
    probs = [s / p_e for s in sums] if ev else sums
    return _report(gp, strategy, probs)


# ---------------------------------------------------------------------------
# Circuit route


class Compiler:
    """Compiles atoms of one ground program into BDDs sharing one manager.

    Variable order: decision variables (group order, then free) followed by
    the indicator bits of each choice variable in declaration order. A
    choice with k outcomes uses k-1 bits in a chain: outcome j holds iff
    bits 0..j-1 are false and bit j is true; the last outcome holds iff all
    bits are false.
    """

    def __init__(self, gp: GroundProgram, node_cap: int = DEFAULT_NODE_CAP):
        self.gp = gp
        self.bdd = BDD(node_cap)
        self.num_decisions = len(gp.decisions)
        self.bits: list[list[int]] = []
        v = self.num_decisions
        for cv in gp.choices:
            k = len(cv.outcomes)
            self.bits.append(list(range(v, v + k - 1)))
            v += k - 1
        self.num_vars = v
        self.nodes: dict[int, int] = {}
        self._base: dict[int, int] = {}
        self._lock = threading.Lock()
        self._heads = {r.head for r in gp.rules}
        self._decision_of = {d.atom: d.id for d in gp.decisions}

    def indicator(self, choice: int, outcome: int) -> int:
        bits = self.bits[choice]
        node = self.bdd.TRUE if outcome == len(bits) else self.bdd.var(bits[outcome])
        for b in reversed(bits[:outcome]):
            node = self.bdd.mk(b, node, self.bdd.FALSE)
        return node

    def _base_node(self, atom: int) -> int:
        node = self._base.get(atom)
        if node is None:
            if atom in self.gp.facts:
                node = self.bdd.TRUE
            else:
                parts = [self.indicator(c, j) for c, j in self.gp.outcome_index().get(atom, ())]
                if atom in self._decision_of:
                    parts.append(self.bdd.var(self._decision_of[atom]))
                node = self.bdd.disj_all(parts)
            self._base[atom] = node
        return node

    def node(self, atom: int) -> int:
        with self._lock:
            if atom not in self.nodes and atom in self._heads:
                self._compile_cone([atom])
            return self.nodes.get(atom) if atom in self._heads else self._base_node(atom)

    def _compile_cone(self, atoms: list[int]) -> None:
        gp, bdd = self.gp, self.bdd
        cone = gp.cone(atoms)
        for stratum in gp.strata:
            rules = [gp.rules[r] for r in stratum if gp.rules[r].head in cone and gp.rules[r].head not in self.nodes]
            if not rules:
                continue
            current = {r.head: bdd.FALSE for r in rules}

            def lookup(a):
                if a in current:
                    return current[a]
                if a in self.nodes:
                    return self.nodes[a]
                return self._base_node(a)

            changed = True
            while changed:
                changed = False
                for r in rules:
                    body = bdd.conj_all(
                        itertools.chain(
                            (lookup(a) for a in r.pos),
                            (bdd.negate(lookup(a)) for a in r.neg),
                        )
                    )
                    new = bdd.disj(current[r.head], body)
                    if new != current[r.head]:
                        current[r.head] = new
                        changed = True
            self.nodes.update(current)

    def literal(self, atom: int, truth: bool) -> int:
        n = self.node(atom)
        return n if truth else self.bdd.negate(n)

    def weights(self, gp: GroundProgram | None = None) -> list[float]:
        """Per-variable probability of being true, from ``gp``'s current outcome probabilities."""
        gp = gp or self.gp
        w = [0.5] * self.num_vars
        for cv, bits in zip(gp.choices, self.bits):
            remaining = 1.0
            for (_, p), b in zip(cv.outcomes, bits):
                w[b] = min(1.0, p / remaining) if remaining > 0.0 else 0.0
                remaining -= p
        return w

    def restrict_decisions(self, node: int, strategy: Strategy) -> int:
        """Follow the decision prefix of the order; decisions come first so this is a walk."""
        on = set(strategy.true_decisions(self.gp))
        bdd = self.bdd
        while not bdd.is_terminal(node) and bdd.var_of(node) < self.num_decisions:
            node = bdd.high(node) if bdd.var_of(node) in on else bdd.low(node)
        return node

    def choice_support(self, node: int) -> set[int]:
        vs = self.bdd.support(node)
        return {c for c, bits in enumerate(self.bits) if vs.intersection(bits)}

    def decision_support(self, node: int) -> set[int]:
        return {v for v in self.bdd.support(node) if v < self.num_decisions}


@dataclass(frozen=True)
class Circuit:
    root: int
    compiler: Compiler

    @property
    def bdd(self) -> BDD:
        return self.compiler.bdd

    def size(self) -> int:
        return self.bdd.size(self.root)

    def is_true(self) -> bool:
        return self.root == BDD.TRUE

    def is_false(self) -> bool:
        return self.root == BDD.FALSE


def compiler_for(gp: GroundProgram, node_cap: int = DEFAULT_NODE_CAP) -> Compiler:
    comp = gp._cache.get("compiler")
    if comp is None:
        comp = Compiler(gp, node_cap)
        gp._cache["compiler"] = comp
    return comp


def compile(gp: GroundProgram, atom) -> Circuit:  # noqa: A001 - mirrors the operation name
    comp = compiler_for(gp)
    a = gp.atom_id(atom) if isinstance(atom, Atom) else atom
    if a is None:
        return Circuit(BDD.FALSE, comp)
    return Circuit(comp.node(a), comp)


def wmc(circuit: Circuit, strategy: Strategy, weights: list[float] | None = None) -> float:
    comp = circuit.compiler
    node = comp.restrict_decisions(circuit.root, strategy)
    return comp.bdd.wmc(node, weights if weights is not None else comp.weights())


def _evidence_node(comp: Compiler, evidence: dict[int, bool]) -> int:
    return comp.bdd.conj_all(comp.literal(a, t) for a, t in sorted(evidence.items()))


def marginal_fast(gp: GroundProgram, strategy: Strategy, atom, evidence: Mapping | None = None) -> float:
    comp = compiler_for(gp)
    ev = _evidence_ids(gp, evidence)
    e_node = _evidence_node(comp, ev)
    w = comp.weights()
    p_e = wmc(Circuit(e_node, comp), strategy, w)
    if p_e <= 0.0:
        raise InconsistentEvidence("evidence has probability zero")
    a = gp.atom_id(atom) if isinstance(atom, Atom) else atom
    if a is None:
        log.warning("%s is not in the program vocabulary", render_atom(atom))
        return 0.0
    joint = comp.bdd.conj(comp.node(a), e_node)
    return wmc(Circuit(joint, comp), strategy, w) / p_e


def eu_fast(gp: GroundProgram, strategy: Strategy, evidence: Mapping | None = None) -> EUReport:
    """Expected utility of ``strategy`` by weighted model counting on compiled circuits."""
    check_admissible(gp, strategy)
    comp = compiler_for(gp)
    ev = _evidence_ids(gp, evidence)
    w = comp.weights()
    e_node = _evidence_node(comp, ev)
    p_e = wmc(Circuit(e_node, comp), strategy, w)
    if p_e <= 0.0:
        raise InconsistentEvidence("evidence has probability zero")
    probs = []
    for u in gp.utilities:
        node = comp.bdd.conj(comp.node(u.atom), e_node)
        probs.append(wmc(Circuit(node, comp), strategy, w) / p_e)
    return _report(gp, strategy, probs)


ENGINES = ("oracle", "circuit")


def evaluate(gp: GroundProgram, strategy: Strategy, engine: str = "circuit", evidence: Mapping | None = None) -> EUReport:
    if engine == "oracle":
        return expected_utility(gp, strategy, evidence)
    if engine == "circuit":
        return eu_fast(gp, strategy, evidence)
    raise ValueError(f"unknown engine {engine!r}")


def probability(gp: GroundProgram, strategy: Strategy, atom, evidence: Mapping | None = None, engine: str = "circuit") -> float:
    if engine == "oracle":
        return marginal(gp, strategy, atom, evidence)
    if engine == "circuit":
        return marginal_fast(gp, strategy, atom, evidence)
    raise ValueError(f"unknown engine {engine!r}")
