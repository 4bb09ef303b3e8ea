"""Bottom-up grounding of a desugared program.

Predicates fall into four classes:

* static -- defined only by deterministic rules that never (transitively)
  mention a probabilistic or decision predicate. They are evaluated
  completely at ground time and never reach the ground program as rules.
* probabilistic -- heads of annotated disjunctions (after desugaring these
  are facts, possibly non-ground, e.g. ``0.9::authority_aux1(X)``).
* decision -- decision group alternatives and free decision atoms.
* dynamic -- deterministic rules depending on the previous two.

Non-ground probabilistic and decision facts are instantiated on demand: a
body literal over such a predicate waits until the rest of the body has
bound its arguments, and every ground instance that is reached this way
becomes its own choice (or decision) variable.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import networkx as nx

from .errors import (
    GroundingError,
    InstantiationError,
    RangeRestrictionError,
    UnstratifiedError,
)
from .syntax import (
    AnnotatedDisjunction,
    Atom,
    Compound,
    Const,
    Constraint,
    CoreProgram,
    DecisionGroup,
    DecisionRule,
    EvidenceDecl,
    Learnable,
    ListTerm,
    Literal,
    Num,
    Rule,
    Term,
    UtilityDecl,
    Var,
    atom_key,
    atom_vars,
    is_ground,
    render_atom,
    render_literal,
    render_number,
    render_statement,
    term_key,
)

log = logging.getLogger(__name__)

RESIDUAL_EPS = 1e-12
DEFAULT_LEARNABLE_PROB = 0.5


# ---------------------------------------------------------------------------
# Ground program


@dataclass(frozen=True)
class ChoiceVariable:
    id: int
    outcomes: tuple  # ((atom id | None, probability), ...); None is the residual outcome
    origin: int  # core statement index
    params: tuple = ()  # per outcome: parameter id or None

    @property
    def learnable(self) -> bool:
        return any(p is not None for p in self.params)


@dataclass(frozen=True)
class DecisionVariable:
    id: int
    atom: int  # indicator atom id
    label: Atom  # what the user calls this decision
    group: int | None = None


@dataclass(frozen=True)
class GroundRule:
    head: int
    pos: tuple = ()
    neg: tuple = ()


@dataclass(frozen=True)
class GroundConstraint:
    pos: tuple
    neg: tuple
    origin: int


@dataclass(frozen=True)
class GroundUtility:
    atom: int
    reward: float


@dataclass(frozen=True, eq=False)
class GroundProgram:
    atoms: tuple
    index: dict
    facts: frozenset
    choices: tuple
    decisions: tuple
    groups: tuple  # per group: decision variable ids
    free: tuple  # decision variable ids outside any group
    rules: tuple
    strata: tuple  # per stratum: rule indices
    utilities: tuple
    constraints: tuple
    evidence: dict
    unreachable: frozenset = frozenset()
    universe: frozenset = frozenset()
    params: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def atom_id(self, atom: Atom) -> int | None:
        return self.index.get(atom)

    def outcome_index(self) -> dict[int, list[tuple[int, int]]]:
        """atom id -> [(choice id, outcome index)] for every probabilistic atom."""
        if "outcomes" not in self._cache:
            table = defaultdict(list)
            for cv in self.choices:
                for j, (a, _) in enumerate(cv.outcomes):
                    if a is not None:
                        table[a].append((cv.id, j))
            self._cache["outcomes"] = dict(table)
        return self._cache["outcomes"]

    def decision_atoms(self) -> frozenset:
        return frozenset(d.atom for d in self.decisions)

    def with_params(self, params: dict) -> "GroundProgram":
        """Copy with learnable outcome probabilities replaced by ``params``."""
        choices = []
        for cv in self.choices:
            if not cv.learnable:
                choices.append(cv)
                continue
            probs = [params.get(pid, p) if pid is not None else None for (_, p), pid in zip(cv.outcomes, cv.params)]
            fixed = sum(p for p in probs if p is not None)
            outcomes = tuple(
                (a, p if p is not None else max(0.0, 1.0 - fixed)) for (a, _), p in zip(cv.outcomes, probs)
            )
            choices.append(replace(cv, outcomes=outcomes))
        return replace(self, choices=tuple(choices), _cache={})

    def cone(self, atoms: Iterable[int]) -> set[int]:
        """All atoms the given atoms depend on through rules (including themselves)."""
        by_head = self._rules_by_head()
        seen, stack = set(), list(atoms)
        while stack:
            a = stack.pop()
            if a in seen:
                continue
            seen.add(a)
            for r in by_head.get(a, ()):
                stack.extend(self.rules[r].pos)
                stack.extend(self.rules[r].neg)
        return seen

    def _rules_by_head(self) -> dict[int, list[int]]:
        if "by_head" not in self._cache:
            table = defaultdict(list)
            for i, r in enumerate(self.rules):
                table[r.head].append(i)
            self._cache["by_head"] = dict(table)
        return self._cache["by_head"]


# ---------------------------------------------------------------------------
# Unification and builtins


def unify(pattern: Term, ground: Term, binding: dict) -> dict | None:
    if isinstance(pattern, Var):
        if pattern.anonymous:
            return binding
        bound = binding.get(pattern)
        if bound is None:
            new = dict(binding)
            new[pattern] = ground
            return new
        return binding if bound == ground else None
    if isinstance(pattern, (Const, Num)):
        return binding if pattern == ground else None
    if isinstance(pattern, Compound):
        if not (isinstance(ground, Compound) and ground.functor == pattern.functor
                and len(ground.args) == len(pattern.args)):
            return None
        return unify_args(pattern.args, ground.args, binding)
    if isinstance(pattern, ListTerm):
        if not isinstance(ground, ListTerm):
            return None
        n = len(pattern.items)
        if pattern.tail is None:
            if len(ground.items) != n or ground.tail is not None:
                return None
            return unify_args(pattern.items, ground.items, binding)
        if len(ground.items) < n:
            return None
        binding = unify_args(pattern.items, ground.items[:n], binding)
        if binding is None:
            return None
        return unify(pattern.tail, ListTerm(ground.items[n:], ground.tail), binding)
    return None


def unify_args(patterns, grounds, binding: dict) -> dict | None:
    for p, g in zip(patterns, grounds):
        binding = unify(p, g, binding)
        if binding is None:
            return None
    return binding


def subst(term: Term, binding: dict) -> Term:
    if isinstance(term, Var):
        return binding.get(term, term)
    if isinstance(term, Compound):
        return Compound(term.functor, tuple(subst(a, binding) for a in term.args))
    if isinstance(term, ListTerm):
        tail = None if term.tail is None else subst(term.tail, binding)
        items = tuple(subst(a, binding) for a in term.items)
        if isinstance(tail, ListTerm):
            return ListTerm(items + tail.items, tail.tail)
        return ListTerm(items, tail)
    return term


def subst_atom(atom: Atom, binding: dict) -> Atom:
    return Atom(atom.predicate, tuple(subst(a, binding) for a in atom.args))


def _args_key(args: tuple) -> tuple:
    return tuple(term_key(t) for t in args)


def _builtin_ready(atom: Atom) -> bool:
    if atom.predicate == "\\=":
        return is_ground(atom.args[0]) and is_ground(atom.args[1])
    lst = atom.args[1]
    return isinstance(lst, ListTerm) and lst.tail is None and is_ground(lst)


def eval_builtin(literal: Literal, binding: dict) -> list[dict]:
    """Solve ``member/2`` or ``\\=/2`` under ``binding``."""
    atom = subst_atom(literal.atom, binding)
    if atom.key not in (("member", 2), ("\\=", 2)):
        raise GroundingError(f"not a builtin: {render_atom(atom)}")
    if not _builtin_ready(atom):
        raise InstantiationError(f"arguments of {render_atom(atom)} are not sufficiently bound")
    if atom.predicate == "\\=":
        holds = atom.args[0] != atom.args[1]
        return [binding] if holds != literal.negated else []
    results = []
    for item in atom.args[1].items:
        b = unify(literal.atom.args[0], item, binding)
        if b is not None:
            results.append(b)
    if literal.negated:
        return [] if results else [binding]
    return results


# ---------------------------------------------------------------------------
# Herbrand universe


def _term_constants(term: Term) -> Iterator[Term]:
    if isinstance(term, (Const, Num)):
        yield term
    elif isinstance(term, Compound):
        for a in term.args:
            yield from _term_constants(a)
    elif isinstance(term, ListTerm):
        for a in term.items:
            yield from _term_constants(a)
        if term.tail is not None:
            yield from _term_constants(term.tail)


def _statement_atoms(st) -> Iterator[Atom]:
    if isinstance(st, AnnotatedDisjunction):
        yield from (a for _, a in st.heads)
        yield from (lit.atom for lit in st.body)
    elif isinstance(st, DecisionGroup):
        yield from st.alternatives
    elif isinstance(st, (DecisionRule, Rule)):
        yield st.head
        yield from (lit.atom for lit in st.body)
    elif isinstance(st, UtilityDecl):
        yield st.target
        yield from (lit.atom for lit in st.guard)
    elif isinstance(st, Constraint):
        yield from (lit.atom for lit in st.body)
    elif isinstance(st, EvidenceDecl):
        yield st.atom


def herbrand_universe(core: CoreProgram, extra: Iterable[Term] = ()) -> frozenset:
    constants = set(extra)
    for st in core.statements:
        for atom in _statement_atoms(st):
            for arg in atom.args:
                constants.update(_term_constants(arg))
    return frozenset(constants)


# ---------------------------------------------------------------------------
# Stratification


def _stratify(nodes: Iterable, edges: Iterable[tuple]) -> dict:
    """Stratum per node from (body, head, negative) dependency edges."""
    g = nx.DiGraph()
    g.add_nodes_from(nodes)
    for body, head, negative in edges:
        if g.has_edge(body, head):
            g[body][head]["neg"] = g[body][head]["neg"] or negative
        else:
            g.add_edge(body, head, neg=negative)
    cond = nx.condensation(g)
    members = cond.graph["mapping"]
    for body, head, data in g.edges(data=True):
        if data["neg"] and members[body] == members[head]:
            path = nx.shortest_path(g, head, body)
            cycle = " -> ".join(_node_name(n) for n in path) + f" -> \\+{_node_name(head)}"
            raise UnstratifiedError(f"unstratified negation through cycle {cycle}")
    comp_stratum: dict[int, int] = {}
    for c in nx.topological_sort(cond):
        level = 0
        for p in cond.predecessors(c):
            negative = any(
                g[u][v]["neg"]
                for u in cond.nodes[p]["members"]
                for v in g.successors(u)
                if members[v] == c
            )
            level = max(level, comp_stratum[p] + (1 if negative else 0))
        comp_stratum[c] = level
    return {n: comp_stratum[members[n]] for n in g.nodes}


def _node_name(node) -> str:
    if isinstance(node, tuple) and len(node) == 2:
        return f"{node[0]}/{node[1]}"
    return str(node)


def check_stratified(gp: GroundProgram) -> dict[tuple[str, int], int]:
    """Stratum index per predicate of the ground rules; raises on negative cycles."""
    nodes = {gp.atoms[r.head].key for r in gp.rules}
    edges = []
    for r in gp.rules:
        head = gp.atoms[r.head].key
        edges.extend((gp.atoms[b].key, head, False) for b in r.pos)
        edges.extend((gp.atoms[b].key, head, True) for b in r.neg)
    return _stratify(nodes, edges)


# ---------------------------------------------------------------------------
# Grounding


def _clause_text(st) -> str:
    return render_statement(st)


class _Grounder:
    def __init__(self, core: CoreProgram, extra=(), queries=()):
        self.core = core
        self.extra = frozenset(extra)
        self.queries = tuple(queries)
        sts = core.statements

        self.prob_preds: set = set()
        self.decision_preds: set = set()
        self.open_stmts: dict = defaultdict(list)  # pred key -> [stmt idx]
        self.rule_preds: set = set()
        for i, st in enumerate(sts):
            if isinstance(st, AnnotatedDisjunction):
                if st.body:
                    raise GroundingError("probabilistic rule survived desugaring")
                for _, a in st.heads:
                    self.prob_preds.add(a.key)
                if not all(a.is_ground() for _, a in st.heads):
                    for key in {a.key for _, a in st.heads}:
                        self.open_stmts[key].append(i)
            elif isinstance(st, DecisionGroup):
                for a in st.alternatives:
                    if not a.is_ground():
                        line, col = core.location(i)
                        raise GroundingError(f"decision group alternative {render_atom(a)} is not ground", line, col)
                    self.decision_preds.add(a.key)
            elif isinstance(st, DecisionRule):
                if st.body:
                    raise GroundingError("guarded decision survived desugaring")
                self.decision_preds.add(st.head.key)
                if not st.head.is_ground():
                    self.open_stmts[st.head.key].append(i)
            elif isinstance(st, Rule):
                self.rule_preds.add(st.head.key)

        # dynamic = depends on a probabilistic or decision predicate
        self.dynamic = set(self.prob_preds | self.decision_preds)
        changed = True
        while changed:
            changed = False
            for st in sts:
                if isinstance(st, Rule) and st.head.key not in self.dynamic:
                    if any(lit.atom.key in self.dynamic for lit in st.body):
                        self.dynamic.add(st.head.key)
                        changed = True

        # predicate-level stratification of all deterministic rules
        edges = []
        for st in sts:
            if isinstance(st, Rule):
                for lit in st.body:
                    if not self._is_builtin(lit.atom):
                        edges.append((lit.atom.key, st.head.key, lit.negated))
        try:
            self.pred_strata = _stratify(self.rule_preds, edges)
        except UnstratifiedError as exc:
            raise UnstratifiedError(exc.message) from None

        self.static: dict = defaultdict(set)  # pred key -> {args}
        self.possible: dict = defaultdict(set)
        self.open_instances: dict = {}  # (stmt idx, heads) -> None, insertion ordered
        self.registered: set = set()

    # classification -----------------------------------------------------
    @staticmethod
    def _is_builtin(atom: Atom) -> bool:
        return atom.key in (("member", 2), ("\\=", 2))

    def _kind(self, atom: Atom) -> str:
        key = atom.key
        if self._is_builtin(atom):
            return "builtin"
        if key in self.open_stmts:
            return "open"
        if key in self.dynamic:
            return "dynamic"
        return "static"

    def _holds_static(self, atom: Atom) -> bool:
        return atom.args in self.static.get(atom.key, ())

    # on-demand instances ------------------------------------------------
    def register(self, atom: Atom) -> bool:
        """Instantiate open statements matching ground ``atom``; True if any did."""
        if atom in self.registered:
            return True
        matched = False
        for i in self.open_stmts.get(atom.key, ()):
            st = self.core.statements[i]
            heads = [a for _, a in st.heads] if isinstance(st, AnnotatedDisjunction) else [st.head]
            for h in heads:
                if h.key != atom.key:
                    continue
                b = unify_args(h.args, atom.args, {})
                if b is None:
                    continue
                ground_heads = tuple(subst_atom(x, b) for x in heads)
                if not all(x.is_ground() for x in ground_heads):
                    line, col = self.core.location(i)
                    raise RangeRestrictionError(
                        f"heads of {_clause_text(st)} do not share their variables", line, col
                    )
                self.open_instances.setdefault((i, ground_heads), None)
                for x in ground_heads:
                    self.registered.add(x)
                    self.possible[x.key].add(x.args)
                matched = True
        return matched

    # body solving -------------------------------------------------------
    def solve(self, body: tuple, binding: dict, where: str, line=None, col=None):
        """Yield (binding, kept literals) for every instance of ``body``.

        Static and builtin literals are evaluated away; dynamic literals
        are matched against the atoms found possible so far and kept.
        """
        yield from self._solve(list(enumerate(body)), binding, [], where, line, col)

    def _solve(self, remaining, binding, kept, where, line, col):
        if not remaining:
            yield binding, tuple(lit for _, lit in sorted(kept, key=lambda x: x[0]))
            return
        # filters first, then static joins, then dynamic joins; open facts and
        # dynamic negations last so only fully filtered instances get created
        ranked = []
        for pos, (i, lit) in enumerate(remaining):
            atom = subst_atom(lit.atom, binding)
            kind = self._kind(atom)
            if kind == "builtin":
                if _builtin_ready(atom):
                    ranked.append((0, pos))
            elif kind == "static":
                if not lit.negated:
                    ranked.append((1, pos))
                elif atom.is_ground():
                    ranked.append((0, pos))
            elif kind == "dynamic" and not lit.negated:
                ranked.append((2, pos))
            elif atom.is_ground():
                ranked.append((3, pos))
        choice = min(ranked)[1] if ranked else None
        if choice is None:
            unbound = sorted({v.name for _, lit in remaining for v in atom_vars(subst_atom(lit.atom, binding))})
            lits = ", ".join(render_literal(lit) for _, lit in remaining)
            raise InstantiationError(
                f"cannot bind {', '.join(unbound)} in {lits} of {where}", line, col
            )
        i, lit = remaining[choice]
        rest = remaining[:choice] + remaining[choice + 1:]
        atom = subst_atom(lit.atom, binding)
        kind = self._kind(atom)
        if kind == "builtin":
            for b in eval_builtin(lit, binding):
                yield from self._solve(rest, b, kept, where, line, col)
        elif lit.negated:
            if kind == "static":
                if not self._holds_static(atom):
                    yield from self._solve(rest, binding, kept, where, line, col)
            else:
                if kind == "open":
                    self.register(atom)
                yield from self._solve(rest, binding, kept + [(i, Literal(atom, True))], where, line, col)
        elif kind == "open":
            if self.register(atom) or atom.args in self.possible.get(atom.key, ()):
                yield from self._solve(rest, binding, kept + [(i, Literal(atom))], where, line, col)
        else:
            table = self.static if kind == "static" else self.possible
            for args in sorted(table.get(atom.key, ()), key=_args_key):
                b = unify_args(lit.atom.args, args, binding)
                if b is None:
                    continue
                new_kept = kept if kind == "static" else kept + [(i, Literal(Atom(atom.predicate, args)))]
                yield from self._solve(rest, b, new_kept, where, line, col)

    def _ground_head(self, head: Atom, binding: dict, st, index: int) -> Atom:
        g = subst_atom(head, binding)
        if not g.is_ground():
            missing = sorted({v.name for v in atom_vars(g)})
            line, col = self.core.location(index)
            raise RangeRestrictionError(
                f"variable {', '.join(missing)} of {_clause_text(st)} is not range-restricted", line, col
            )
        return g

    # phases -------------------------------------------------------------
    def evaluate_static(self):
        sts = self.core.statements
        static_rules = [
            (i, st) for i, st in enumerate(sts)
            if isinstance(st, Rule) and st.head.key not in self.dynamic
        ]
        by_stratum = defaultdict(list)
        for i, st in static_rules:
            by_stratum[self.pred_strata.get(st.head.key, 0)].append((i, st))
        for s in sorted(by_stratum):
            changed = True
            while changed:
                changed = False
                for i, st in by_stratum[s]:
                    line, col = self.core.location(i)
                    for b, _ in list(self.solve(st.body, {}, _clause_text(st), line, col)):
                        head = self._ground_head(st.head, b, st, i)
                        if head.args not in self.static[head.key]:
                            self.static[head.key].add(head.args)
                            changed = True

    def evaluate_dynamic(self):
        sts = self.core.statements
        for st in sts:
            if isinstance(st, AnnotatedDisjunction) and all(a.is_ground() for _, a in st.heads):
                for _, a in st.heads:
                    self.possible[a.key].add(a.args)
            elif isinstance(st, DecisionGroup):
                for a in st.alternatives:
                    self.possible[a.key].add(a.args)
            elif isinstance(st, DecisionRule) and st.head.is_ground():
                self.possible[st.head.key].add(st.head.args)
        rules = [(i, st) for i, st in enumerate(sts) if isinstance(st, Rule) and st.head.key in self.dynamic]
        self.rule_instances: dict = {}
        changed = True
        while changed:
            changed = False
            for i, st in rules:
                line, col = self.core.location(i)
                for b, kept in list(self.solve(st.body, {}, _clause_text(st), line, col)):
                    head = self._ground_head(st.head, b, st, i)
                    inst = (head, kept)
                    if inst in self.rule_instances:
                        continue
                    self.rule_instances[inst] = i
                    changed = True
                    self.possible[head.key].add(head.args)

    def ground_constraints(self):
        self.constraint_instances: dict = {}
        for i, st in enumerate(self.core.statements):
            if isinstance(st, Constraint):
                line, col = self.core.location(i)
                for b, kept in list(self.solve(st.body, {}, _clause_text(st), line, col)):
                    self.constraint_instances.setdefault(kept, i)

    def ground_utilities(self):
        totals: dict = {}
        for i, st in enumerate(self.core.statements):
            if not isinstance(st, UtilityDecl):
                continue
            line, col = self.core.location(i)
            for lit in st.guard:
                if self._kind(lit.atom) not in ("static", "builtin"):
                    raise GroundingError(
                        f"utility guard {render_literal(lit)} is not static in {_clause_text(st)}", line, col
                    )
            for b, _ in list(self.solve(st.guard, {}, _clause_text(st), line, col)):
                target = self._ground_head(st.target, b, st, i)
                if self._kind(target) == "open":
                    self.register(target)
                if target in totals:
                    log.warning("duplicate utility for %s; rewards are summed", render_atom(target))
                    totals[target] += st.reward
                else:
                    totals[target] = st.reward
        self.utility_totals = totals

    def ground_queries(self):
        self.evidence: dict = {}
        for i, st in enumerate(self.core.statements):
            if isinstance(st, EvidenceDecl):
                if not st.atom.is_ground():
                    line, col = self.core.location(i)
                    raise GroundingError(f"evidence atom {render_atom(st.atom)} is not ground", line, col)
                if self._kind(st.atom) == "open":
                    self.register(st.atom)
                self.evidence[st.atom] = st.truth
        for atom in self.queries:
            if not atom.is_ground():
                raise GroundingError(f"query atom {render_atom(atom)} is not ground")
            if self._kind(atom) == "open":
                self.register(atom)

    # assembly -----------------------------------------------------------
    def build(self, prune: bool) -> GroundProgram:
        core = self.core
        possible_atoms = {Atom(k[0], args) for k, argset in self.possible.items() for args in argset}
        static_atoms = {Atom(k[0], args) for k, argset in self.static.items() for args in argset}

        def keep_neg(lits):
            return tuple(l for l in lits if not l.negated or l.atom in possible_atoms)

        rule_insts = sorted(
            {(h, keep_neg(body)) for (h, body) in self.rule_instances},
            key=lambda x: (atom_key(x[0]), tuple((l.negated, atom_key(l.atom)) for l in x[1])),
        )
        constraint_insts = {}
        for body, origin in self.constraint_instances.items():
            constraint_insts.setdefault(keep_neg(body), origin)

        # choice variables in declaration order, instances canonically sorted
        instances = []
        for i, st in enumerate(core.statements):
            if isinstance(st, AnnotatedDisjunction) and all(a.is_ground() for _, a in st.heads):
                instances.append((i, tuple(a for _, a in st.heads)))
        instances.extend(self.open_instances)
        instances.sort(key=lambda x: (x[0], tuple(atom_key(a) for a in x[1])))

        free_insts = []
        for i, st in enumerate(core.statements):
            if isinstance(st, DecisionRule) and st.head.is_ground():
                free_insts.append((i, st.head))
        free_insts.extend(
            (i, heads[0]) for (i, heads) in self.open_instances
            if isinstance(core.statements[i], DecisionRule)
        )
        free_insts.sort(key=lambda x: (x[0], atom_key(x[1])))
        prob_instances = [x for x in instances if isinstance(core.statements[x[0]], AnnotatedDisjunction)]

        vocab = set(static_atoms) | possible_atoms | set(self.utility_totals) | set(self.evidence) | set(self.queries)
        for h, body in rule_insts:
            vocab.add(h)
            vocab.update(l.atom for l in body)
        for body in constraint_insts:
            vocab.update(l.atom for l in body)
        atoms = tuple(sorted(vocab, key=atom_key))
        index = {a: n for n, a in enumerate(atoms)}

        param_of = {(p.core_index, p.head_index): p.id for p in core.params}
        choices = []
        for cid, (i, heads) in enumerate(prob_instances):
            st = core.statements[i]
            outcomes, params = [], []
            learnable = st.learnable
            for h, ((p, _), atom) in enumerate(zip(st.heads, heads)):
                if isinstance(p, Learnable):
                    p = p.initial if p.initial is not None else DEFAULT_LEARNABLE_PROB
                outcomes.append((index[atom], float(p)))
                params.append(param_of.get((i, h)))
            residual = 1.0 - sum(p for _, p in outcomes)
            if learnable or residual > RESIDUAL_EPS:
                outcomes.append((None, max(0.0, residual)))
                params.append(None)
            choices.append(ChoiceVariable(cid, tuple(outcomes), i, tuple(params)))

        decisions, groups, free = [], [], []
        for i, st in enumerate(core.statements):
            if isinstance(st, DecisionGroup):
                ids = []
                for a in st.alternatives:
                    d = DecisionVariable(len(decisions), index[a], a, len(groups))
                    decisions.append(d)
                    ids.append(d.id)
                groups.append(tuple(ids))
        seen_free = set()
        for i, head in free_insts:
            if head in seen_free:
                continue
            seen_free.add(head)
            label = Atom(core.labels.get(head.predicate, head.predicate), head.args)
            d = DecisionVariable(len(decisions), index[head], label, None)
            decisions.append(d)
            free.append(d.id)
        grouped = [index[a] for g in groups for a in (decisions[d].label for d in g)]
        if len(set(grouped)) != len(grouped) or set(grouped) & {decisions[d].atom for d in free}:
            raise GroundingError("a decision atom belongs to more than one decision group")

        rules = tuple(
            GroundRule(
                index[h],
                tuple(index[l.atom] for l in body if not l.negated),
                tuple(index[l.atom] for l in body if l.negated),
            )
            for h, body in rule_insts
        )
        constraints = tuple(
            GroundConstraint(
                tuple(index[l.atom] for l in body if not l.negated),
                tuple(index[l.atom] for l in body if l.negated),
                origin,
            )
            for body, origin in sorted(
                constraint_insts.items(), key=lambda x: (x[1], tuple((l.negated, atom_key(l.atom)) for l in x[0]))
            )
        )
        utilities = tuple(GroundUtility(index[a], r) for a, r in self.utility_totals.items())
        evidence = {index[a]: t for a, t in self.evidence.items()}
        defined = {index[a] for a in static_atoms | possible_atoms}
        unreachable = frozenset(
            index[a] for a in list(self.utility_totals) + list(self.evidence) + list(self.queries)
            if index[a] not in defined
        )
        for a in unreachable:
            log.warning("%s can never hold", render_atom(atoms[a]))

        gp = GroundProgram(
            atoms=atoms,
            index=index,
            facts=frozenset(index[a] for a in static_atoms),
            choices=tuple(choices),
            decisions=tuple(decisions),
            groups=tuple(groups),
            free=tuple(free),
            rules=rules,
            strata=(),
            utilities=utilities,
            constraints=constraints,
            evidence=evidence,
            unreachable=unreachable,
            universe=herbrand_universe(core, self.extra),
            params=core.params,
        )
        gp = replace(gp, strata=_rule_strata(gp))
        _check_constraints_static(gp)
        if prune:
            gp = prune_program(gp)
        return gp


def _rule_strata(gp: GroundProgram) -> tuple:
    levels = check_stratified(gp)
    by_level = defaultdict(list)
    for i, r in enumerate(gp.rules):
        by_level[levels[gp.atoms[r.head].key]].append(i)
    return tuple(tuple(by_level[s]) for s in sorted(by_level))


def _check_constraints_static(gp: GroundProgram) -> None:
    outcome_atoms = set(gp.outcome_index())
    for c in gp.constraints:
        cone = gp.cone(c.pos + c.neg)
        bad = cone & outcome_atoms
        if bad:
            atom = gp.atoms[min(bad)]
            raise GroundingError(
                f"constraint depends on probabilistic atom {render_atom(atom)}; "
                "constraints may only mention decisions and deterministic facts"
            )


def prune_program(gp: GroundProgram) -> GroundProgram:
    """Drop rules and choice variables irrelevant to utilities, evidence and constraints."""
    roots = [u.atom for u in gp.utilities] + list(gp.evidence)
    for c in gp.constraints:
        roots.extend(c.pos + c.neg)
    cone = gp.cone(roots)
    kept_rules = [i for i, r in enumerate(gp.rules) if r.head in cone]
    renumber = {old: new for new, old in enumerate(kept_rules)}
    rules = tuple(gp.rules[i] for i in kept_rules)
    strata = tuple(
        tuple(renumber[i] for i in stratum if i in renumber) for stratum in gp.strata
    )
    strata = tuple(s for s in strata if s)
    choices = [cv for cv in gp.choices if any(a in cone for a, _ in cv.outcomes if a is not None)]
    choices = tuple(replace(cv, id=n) for n, cv in enumerate(choices))
    return replace(gp, rules=rules, strata=strata, choices=choices, _cache={})


def ground(core: CoreProgram, extra: Iterable[Term] = (), queries: Iterable[Atom] = (), prune: bool = False) -> GroundProgram:
    """Ground ``core`` into a variable-free program.

    ``extra`` adds constants to the Herbrand universe (e.g. from a dataset);
    ``queries`` are additional ground atoms that must be part of the
    vocabulary (evidence atoms of a dataset, a queried atom).
    """
    g = _Grounder(core, extra, queries)
    g.evaluate_static()
    g.evaluate_dynamic()
    g.ground_constraints()
    g.ground_utilities()
    g.ground_queries()
    # queries may have instantiated new open facts that rules can use
    if g.open_instances:
        g.evaluate_dynamic()
        g.ground_constraints()
    return g.build(prune)


# ---------------------------------------------------------------------------
# Debug dump


def dump(gp: GroundProgram) -> str:
    """One ground clause per line, stable across runs."""
    name = lambda i: render_atom(gp.atoms[i])  # noqa: E731
    lines = [f"{name(a)}." for a in sorted(gp.facts)]
    for cv in gp.choices:
        heads = [f"{render_number(p)}::{name(a)}" for a, p in cv.outcomes if a is not None]
        lines.append(";".join(heads) + ".")
    for g in gp.groups:
        lines.append(";".join(f"?::{name(gp.decisions[d].atom)}" for d in g) + ".")
    for d in gp.free:
        lines.append(f"?::{name(gp.decisions[d].atom)}.")
    for s, stratum in enumerate(gp.strata):
        for r in stratum:
            rule = gp.rules[r]
            body = [name(a) for a in rule.pos] + [f"\\+{name(a)}" for a in rule.neg]
            lines.append(f"{name(rule.head)}:-{','.join(body)}." if body else f"{name(rule.head)}.")
    for u in gp.utilities:
        lines.append(f"utility({name(u.atom)},{render_number(u.reward)}).")
    for c in gp.constraints:
        body = [name(a) for a in c.pos] + [f"\\+{name(a)}" for a in c.neg]
        lines.append(f":-{','.join(body)}.")
    for a, t in gp.evidence.items():
        lines.append(f"evidence({name(a)},{'true' if t else 'false'}).")
    return "\n".join(lines) + "\n"
