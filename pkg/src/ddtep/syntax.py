"""Lexer, parser, desugarer and pretty-printer for DDTEP source text.

The concrete syntax is a small Prolog-like clause language::

    ?::run_into_wall;?::carmageddon.            % exactly-one decision group
    ?::give(P,T):-person(P),topic(T).           % free guarded decision
    0.5::cake_is_ethical; 0.5::death_is_ethical. % annotated disjunction
    t(0.9)::authority(X):-person(X),h_index(X,high).   % learnable probability
    kill(X) :- in_front_of_car(X), carmageddon.  % deterministic rule
    utility(kill(X), -10) :- pedestrian(X).      % reward declaration
    :- give(P,T), give(Q,T), P \\= Q.            % strategy constraint
    evidence(impact(ann,t0), true).

`parse_program` produces a :class:`Program`; `desugar` turns it into a
:class:`CoreProgram` with no body disjunctions, no probabilistic rules and
no guarded decisions, which is what the grounder consumes.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import HeadRoleError, LexError, ParseError, ProbabilityError

PROB_SUM_SLACK = 1e-9
BUILTINS = {("member", 2), ("\\=", 2)}


# ---------------------------------------------------------------------------
# Terms and clauses


@dataclass(frozen=True)
class Var:
    name: str

    @property
    def anonymous(self) -> bool:
        return self.name == "_"


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class ListTerm:
    items: tuple
    tail: "Term | None" = None


@dataclass(frozen=True)
class Compound:
    functor: str
    args: tuple


Term = Union[Var, Const, Num, ListTerm, Compound]


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple = ()

    @property
    def key(self) -> tuple[str, int]:
        return (self.predicate, len(self.args))

    def is_ground(self) -> bool:
        return all(is_ground(a) for a in self.args)

    def __str__(self) -> str:
        return render_atom(self)


@dataclass(frozen=True)
class Literal:
    atom: Atom
    negated: bool = False

    def __str__(self) -> str:
        return render_literal(self)


@dataclass(frozen=True)
class Disjunction:
    """Parenthesised body disjunction ``(a, b ; c)``; removed by desugaring."""

    alternatives: tuple  # tuple of bodies, each a tuple of body items


BodyItem = Union[Literal, Disjunction]


@dataclass(frozen=True)
class Learnable:
    """Probability marker ``t(P0)``; ``initial`` is None for ``t(_)``."""

    initial: float | None = None


Prob = Union[float, Learnable]


@dataclass(frozen=True)
class AnnotatedDisjunction:
    heads: tuple  # ((Prob, Atom), ...)
    body: tuple = ()

    @property
    def learnable(self) -> bool:
        return any(isinstance(p, Learnable) for p, _ in self.heads)


@dataclass(frozen=True)
class DecisionGroup:
    alternatives: tuple


@dataclass(frozen=True)
class DecisionRule:
    head: Atom
    body: tuple = ()


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple = ()


@dataclass(frozen=True)
class UtilityDecl:
    target: Atom
    reward: float
    guard: tuple = ()


@dataclass(frozen=True)
class Constraint:
    body: tuple


@dataclass(frozen=True)
class EvidenceDecl:
    atom: Atom
    truth: bool = True


Statement = Union[
    AnnotatedDisjunction, DecisionGroup, DecisionRule, Rule, UtilityDecl, Constraint, EvidenceDecl
]


@dataclass(frozen=True)
class Program:
    statements: tuple
    locations: tuple = field(default=(), compare=False, repr=False)

    def location(self, index: int) -> tuple[int | None, int | None]:
        if index < len(self.locations):
            return self.locations[index]
        return (None, None)


@dataclass(frozen=True)
class Param:
    """A learnable probability shared by every ground instance of one clause head."""

    id: str
    core_index: int
    head_index: int
    source_index: int
    label: str
    initial: float | None


@dataclass(frozen=True)
class CoreProgram:
    statements: tuple
    params: tuple = ()
    # decision indicator predicate -> user-facing predicate it guards
    labels: dict = field(default_factory=dict, compare=False, hash=False)
    locations: tuple = field(default=(), compare=False, repr=False)

    def location(self, index: int) -> tuple[int | None, int | None]:
        if index < len(self.locations):
            return self.locations[index]
        return (None, None)


# ---------------------------------------------------------------------------
# Term helpers


def is_ground(term: Term) -> bool:
    if isinstance(term, Var):
        return False
    if isinstance(term, Compound):
        return all(is_ground(a) for a in term.args)
    if isinstance(term, ListTerm):
        return all(is_ground(a) for a in term.items) and (term.tail is None or is_ground(term.tail))
    return True


def term_vars(term: Term) -> Iterator[Var]:
    if isinstance(term, Var):
        yield term
    elif isinstance(term, Compound):
        for a in term.args:
            yield from term_vars(a)
    elif isinstance(term, ListTerm):
        for a in term.items:
            yield from term_vars(a)
        if term.tail is not None:
            yield from term_vars(term.tail)


def atom_vars(atom: Atom) -> Iterator[Var]:
    for a in atom.args:
        yield from term_vars(a)


def body_vars(body) -> Iterator[Var]:
    for item in body:
        if isinstance(item, Literal):
            yield from atom_vars(item.atom)
        else:
            for alt in item.alternatives:
                yield from body_vars(alt)


def term_key(term: Term) -> tuple:
    """Total order on ground terms used for canonical sorting."""
    if isinstance(term, Num):
        return (0, term.value)
    if isinstance(term, Const):
        return (1, term.name)
    if isinstance(term, ListTerm):
        tail = () if term.tail is None else term_key(term.tail)
        return (2, tuple(term_key(t) for t in term.items), tail)
    if isinstance(term, Compound):
        return (3, term.functor, tuple(term_key(t) for t in term.args))
    return (4, term.name)


def atom_key(atom: Atom) -> tuple:
    return (atom.predicate, len(atom.args), tuple(term_key(t) for t in atom.args))


# ---------------------------------------------------------------------------
# Lexer


@dataclass(frozen=True)
class Token:
    kind: str  # "num" | "ident" | "var" | "op"
    text: str
    line: int
    col: int

    @property
    def value(self):
        if self.kind == "num":
            return float(self.text)
        if self.kind == "ident" and self.text.startswith("'"):
            return self.text[1:-1]
        return self.text


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<num>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<ident>[a-z][A-Za-z0-9_]*|'[^'\n]*')
  | (?P<op>::|:-|\\\+|\\=|\?|;|,|\(|\)|\[|\]|\||\.)
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LexError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str, line_offset: int = 0):
        self.tokens = tokenize(text)
        self.pos = 0
        self.line_offset = line_offset

    # token plumbing
    def peek(self, ahead: int = 0) -> Token | None:
        i = self.pos + ahead
        return self.tokens[i] if i < len(self.tokens) else None

    def at(self, text: str, ahead: int = 0) -> bool:
        tok = self.peek(ahead)
        return tok is not None and tok.kind == "op" and tok.text == text

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            line = (last.line if last else 1) + self.line_offset
            return ParseError(f"{message} (at end of input)", line, last.col if last else 1)
        return ParseError(f"{message}, found {tok.text!r}", tok.line + self.line_offset, tok.col)

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of input")
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        return self.next()

    # grammar
    def program(self) -> Program:
        statements, locations = [], []
        while self.peek() is not None:
            tok = self.peek()
            statements.append(self.statement())
            locations.append((tok.line + self.line_offset, tok.col))
        return Program(tuple(statements), tuple(locations))

    def statement(self) -> Statement:
        start = self.peek()
        if self.at(":-"):
            self.next()
            body = self.body()
            self.expect(".")
            return Constraint(body)
        if self.at("?"):
            return self.decision()
        if self._prob_ahead():
            return self.annotated_disjunction()
        head = self.atom()
        body = ()
        if self.at(":-"):
            self.next()
            body = self.body()
        self.expect(".")
        if head.predicate == "utility" and len(head.args) == 2:
            target, reward = head.args
            if not isinstance(reward, Num):
                raise self.error("utility reward must be a number", start)
            return UtilityDecl(_to_atom(target, self, start), reward.value, body)
        if head.predicate == "evidence" and len(head.args) in (1, 2) and not body:
            truth = True
            if len(head.args) == 2:
                flag = head.args[1]
                if not (isinstance(flag, Const) and flag.name in ("true", "false")):
                    raise self.error("evidence truth value must be true or false", start)
                truth = flag.name == "true"
            return EvidenceDecl(_to_atom(head.args[0], self, start), truth)
        return Rule(head, body)

    def _prob_ahead(self) -> bool:
        tok = self.peek()
        if tok is None:
            return False
        if tok.kind == "num":
            return self.at("::", 1)
        if tok.kind == "ident" and tok.text == "t" and self.at("(", 1):
            depth, i = 0, 1
            while (t := self.peek(i)) is not None:
                if t.kind == "op" and t.text == "(":
                    depth += 1
                elif t.kind == "op" and t.text == ")":
                    depth -= 1
                    if depth == 0:
                        return self.at("::", i + 1)
                i += 1
        return False

    def probability(self) -> Prob:
        tok = self.next()
        if tok.kind == "num":
            p = tok.value
            if not 0.0 <= p <= 1.0:
                raise ProbabilityError(f"probability {tok.text} outside [0,1]", tok.line + self.line_offset, tok.col)
            return p
        # t(P0) or t(_)
        self.expect("(")
        inner = self.next()
        self.expect(")")
        if inner.kind == "var":
            return Learnable(None)
        if inner.kind == "num" and 0.0 <= inner.value <= 1.0:
            return Learnable(inner.value)
        raise self.error("learnable marker expects t(_) or t(P) with P in [0,1]", inner)

    def annotated_disjunction(self) -> AnnotatedDisjunction:
        start = self.peek()
        heads = []
        while True:
            p = self.probability()
            self.expect("::")
            heads.append((p, self.atom()))
            if not self.at(";"):
                break
            self.next()
        body = ()
        if self.at(":-"):
            self.next()
            body = self.body()
        self.expect(".")
        kinds = {isinstance(p, Learnable) for p, _ in heads}
        if len(kinds) > 1:
            raise ProbabilityError(
                "annotated disjunction mixes fixed and learnable probabilities",
                start.line + self.line_offset, start.col,
            )
        total = sum(p for p, _ in heads if not isinstance(p, Learnable))
        if total > 1.0 + PROB_SUM_SLACK:
            raise ProbabilityError(
                f"annotated disjunction probabilities sum to {total:g} > 1",
                start.line + self.line_offset, start.col,
            )
        return AnnotatedDisjunction(tuple(heads), body)

    def decision(self) -> Statement:
        start = self.peek()
        alternatives = []
        while True:
            self.expect("?")
            self.expect("::")
            alternatives.append(self.atom())
            if not self.at(";"):
                break
            self.next()
        if self.at(":-"):
            if len(alternatives) > 1:
                raise self.error("a decision group cannot have a body")
            self.next()
            body = self.body()
            self.expect(".")
            return DecisionRule(alternatives[0], body)
        self.expect(".")
        if len(alternatives) == 1:
            return DecisionRule(alternatives[0], ())
        if len(set(alternatives)) != len(alternatives):
            raise ParseError("duplicate alternative in decision group", start.line + self.line_offset, start.col)
        return DecisionGroup(tuple(alternatives))

    def body(self) -> tuple:
        items = list(self.body_item())
        while self.at(","):
            self.next()
            items.extend(self.body_item())
        return tuple(items)

    def body_item(self) -> list:
        if self.at("\\+"):
            self.next()
            if self.at("("):
                self.next()
                atom = self.atom()
                self.expect(")")
            else:
                atom = self.atom()
            return [Literal(atom, True)]
        if self.at("("):
            self.next()
            alternatives = [self.body()]
            while self.at(";"):
                self.next()
                alternatives.append(self.body())
            self.expect(")")
            if len(alternatives) == 1:
                return list(alternatives[0])
            return [Disjunction(tuple(alternatives))]
        start = self.peek()
        term = self.term()
        if self.at("\\="):
            self.next()
            return [Literal(Atom("\\=", (term, self.term())))]
        return [Literal(_to_atom(term, self, start))]

    def atom(self) -> Atom:
        start = self.peek()
        return _to_atom(self.term(), self, start)

    def term(self) -> Term:
        tok = self.next()
        if tok.kind == "var":
            return Var(tok.text)
        if tok.kind == "num":
            return Num(tok.value)
        if tok.kind == "ident":
            if self.at("("):
                self.next()
                args = [self.term()]
                while self.at(","):
                    self.next()
                    args.append(self.term())
                self.expect(")")
                return Compound(tok.value, tuple(args))
            return Const(tok.value)
        if tok.kind == "op" and tok.text == "[":
            items, tail = [], None
            if not self.at("]"):
                items.append(self.term())
                while self.at(","):
                    self.next()
                    items.append(self.term())
                if self.at("|"):
                    self.next()
                    tail = self.term()
            self.expect("]")
            return ListTerm(tuple(items), tail)
        raise self.error("expected a term", tok)


def _to_atom(term: Term, parser: _Parser, tok: Token | None) -> Atom:
    if isinstance(term, Const):
        return Atom(term.name, ())
    if isinstance(term, Compound):
        return Atom(term.functor, term.args)
    raise parser.error("expected an atom", tok)


def parse_program(text: str, line_offset: int = 0) -> Program:
    """Parse source text and check program-level well-formedness."""
    program = _Parser(text, line_offset).program()
    check_program(program)
    return program


def parse_atom(text: str) -> Atom:
    parser = _Parser(text)
    atom = parser.atom()
    if parser.peek() is not None:
        raise parser.error("trailing input after atom")
    return atom


def parse_term(text: str) -> Term:
    parser = _Parser(text)
    term = parser.term()
    if parser.peek() is not None:
        raise parser.error("trailing input after term")
    return term


# ---------------------------------------------------------------------------
# Program-level checks


def _statement_atoms(st) -> Iterator[Atom]:
    def from_body(body):
        for item in body:
            if isinstance(item, Literal):
                yield item.atom
            else:
                for alt in item.alternatives:
                    yield from from_body(alt)

    if isinstance(st, AnnotatedDisjunction):
        for _, a in st.heads:
            yield a
        yield from from_body(st.body)
    elif isinstance(st, DecisionGroup):
        yield from st.alternatives
    elif isinstance(st, (DecisionRule, Rule)):
        yield st.head
        yield from from_body(st.body)
    elif isinstance(st, UtilityDecl):
        yield st.target
        yield from from_body(st.guard)
    elif isinstance(st, Constraint):
        yield from from_body(st.body)
    elif isinstance(st, EvidenceDecl):
        yield st.atom


def head_roles(statements) -> dict[tuple[str, int], dict[str, int]]:
    """Map predicate key -> {role: first statement index}."""
    roles: dict = defaultdict(dict)
    for i, st in enumerate(statements):
        if isinstance(st, AnnotatedDisjunction):
            for _, a in st.heads:
                roles[a.key].setdefault("probabilistic", i)
        elif isinstance(st, DecisionGroup):
            for a in st.alternatives:
                roles[a.key].setdefault("decision", i)
        elif isinstance(st, DecisionRule):
            roles[st.head.key].setdefault("decision", i)
        elif isinstance(st, Rule):
            roles[st.head.key].setdefault("deterministic", i)
    return roles


def check_program(program: Program | CoreProgram) -> None:
    """Enforce head-role disjointness and a fixed arity per predicate name."""
    for key, roles in head_roles(program.statements).items():
        if len(roles) > 1:
            index = max(roles.values())
            line, col = program.location(index)
            names = " and ".join(sorted(roles))
            raise HeadRoleError(f"predicate {key[0]}/{key[1]} is used as {names} head", line, col)
        if key in BUILTINS:
            index = next(iter(roles.values()))
            line, col = program.location(index)
            raise HeadRoleError(f"cannot redefine builtin {key[0]}/{key[1]}", line, col)
    arity: dict[str, tuple[int, int]] = {}
    for i, st in enumerate(program.statements):
        for a in _statement_atoms(st):
            if a.key in BUILTINS:
                continue
            seen = arity.setdefault(a.predicate, (len(a.args), i))
            if seen[0] != len(a.args):
                line, col = program.location(i)
                raise ParseError(
                    f"predicate {a.predicate} used with arity {len(a.args)} and {seen[0]}", line, col
                )


# ---------------------------------------------------------------------------
# Desugaring


def expand_body(body) -> list[tuple]:
    """Distribute body disjunctions, returning plain literal conjunctions."""
    results: list[tuple] = [()]
    for item in body:
        if isinstance(item, Literal):
            results = [r + (item,) for r in results]
        else:
            alternatives = [alt for branch in item.alternatives for alt in expand_body(branch)]
            results = [r + a for r in results for a in alternatives]
    return results


def _ordered_vars(*groups) -> tuple[Var, ...]:
    seen: dict[Var, None] = {}
    for group in groups:
        for v in group:
            if not v.anonymous:
                seen.setdefault(v, None)
    return tuple(seen)


def desugar(program: Program) -> CoreProgram:
    used = {a.predicate for st in program.statements for a in _statement_atoms(st)}
    counters: dict[str, int] = defaultdict(int)

    def fresh(name: str) -> str:
        while name in used:
            name += "_"
        used.add(name)
        return name

    def fresh_aux(predicate: str) -> str:
        while True:
            counters[predicate] += 1
            name = f"{predicate}_aux{counters[predicate]}"
            if name not in used:
                used.add(name)
                return name

    out: list = []
    locations: list = []
    params: list[Param] = []
    labels: dict[str, str] = {}
    decision_preds: dict[tuple[str, int], str] = {}
    emitted_decisions: set = set()

    def emit(st, index):
        out.append(st)
        locations.append(program.location(index))

    def register_params(ad: AnnotatedDisjunction, index: int):
        for h, (p, atom) in enumerate(ad.heads):
            if isinstance(p, Learnable):
                label = render_statement(program.statements[index])
                if len(ad.heads) > 1:
                    label = f"{label} [{render_atom(program.statements[index].heads[h][1])}]"
                params.append(Param(f"p{len(params)}", len(out), h, index, label, p.initial))

    for index, st in enumerate(program.statements):
        if isinstance(st, AnnotatedDisjunction):
            if not st.body:
                register_params(st, index)
                emit(st, index)
                continue
            variables = _ordered_vars(*(atom_vars(a) for _, a in st.heads), body_vars(st.body))
            aux_heads = tuple((p, Atom(fresh_aux(a.predicate), variables)) for p, a in st.heads)
            fact = AnnotatedDisjunction(aux_heads, ())
            register_params(fact, index)
            emit(fact, index)
            for (_, head), (_, aux) in zip(st.heads, aux_heads):
                for body in expand_body(st.body):
                    emit(Rule(head, (Literal(aux),) + body), index)
        elif isinstance(st, DecisionRule):
            if not st.body:
                labels.setdefault(st.head.predicate, st.head.predicate)
                emit(st, index)
                continue
            key = st.head.key
            if key not in decision_preds:
                decision_preds[key] = fresh("d_" + st.head.predicate)
                labels[decision_preds[key]] = st.head.predicate
            indicator = Atom(decision_preds[key], st.head.args)
            if indicator not in emitted_decisions:
                emitted_decisions.add(indicator)
                emit(DecisionRule(indicator, ()), index)
            for body in expand_body(st.body):
                emit(Rule(st.head, (Literal(indicator),) + body), index)
        elif isinstance(st, Rule):
            for body in expand_body(st.body):
                emit(Rule(st.head, body), index)
        elif isinstance(st, Constraint):
            for body in expand_body(st.body):
                emit(Constraint(body), index)
        elif isinstance(st, UtilityDecl):
            if any(isinstance(item, Disjunction) for item in st.guard):
                line, col = program.location(index)
                raise ParseError("utility guards may not contain disjunctions", line, col)
            emit(st, index)
        else:
            if isinstance(st, DecisionGroup):
                for a in st.alternatives:
                    labels.setdefault(a.predicate, a.predicate)
            emit(st, index)
    return CoreProgram(tuple(out), tuple(params), labels, tuple(locations))


# ---------------------------------------------------------------------------
# Rendering

_PLAIN_IDENT = re.compile(r"[a-z][A-Za-z0-9_]*\Z")


def render_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def render_term(term: Term) -> str:
    if isinstance(term, Var):
        return term.name
    if isinstance(term, Const):
        return term.name if _PLAIN_IDENT.match(term.name) else f"'{term.name}'"
    if isinstance(term, Num):
        return render_number(term.value)
    if isinstance(term, ListTerm):
        inner = ",".join(render_term(t) for t in term.items)
        if term.tail is not None:
            inner += "|" + render_term(term.tail)
        return f"[{inner}]"
    name = term.functor if _PLAIN_IDENT.match(term.functor) else f"'{term.functor}'"
    return f"{name}({','.join(render_term(t) for t in term.args)})"


def render_atom(atom: Atom) -> str:
    if atom.key == ("\\=", 2):
        return f"{render_term(atom.args[0])}\\={render_term(atom.args[1])}"
    if not atom.args:
        return render_term(Const(atom.predicate))
    return render_term(Compound(atom.predicate, atom.args))


def render_literal(lit: Literal) -> str:
    return ("\\+" if lit.negated else "") + render_atom(lit.atom)


def render_body(body) -> str:
    parts = []
    for item in body:
        if isinstance(item, Literal):
            parts.append(render_literal(item))
        else:
            parts.append("(" + ";".join(render_body(alt) for alt in item.alternatives) + ")")
    return ",".join(parts)


def _with_body(head: str, body) -> str:
    return f"{head}:-{render_body(body)}." if body else f"{head}."


def render_prob(p: Prob) -> str:
    if isinstance(p, Learnable):
        return "t(_)" if p.initial is None else f"t({render_number(p.initial)})"
    return render_number(p)


def render_statement(st: Statement) -> str:
    if isinstance(st, AnnotatedDisjunction):
        head = ";".join(f"{render_prob(p)}::{render_atom(a)}" for p, a in st.heads)
        return _with_body(head, st.body)
    if isinstance(st, DecisionGroup):
        return ";".join(f"?::{render_atom(a)}" for a in st.alternatives) + "."
    if isinstance(st, DecisionRule):
        return _with_body(f"?::{render_atom(st.head)}", st.body)
    if isinstance(st, Rule):
        return _with_body(render_atom(st.head), st.body)
    if isinstance(st, UtilityDecl):
        return _with_body(f"utility({render_atom(st.target)},{render_number(st.reward)})", st.guard)
    if isinstance(st, Constraint):
        return f":-{render_body(st.body)}."
    if isinstance(st, EvidenceDecl):
        return f"evidence({render_atom(st.atom)},{'true' if st.truth else 'false'})."
    raise TypeError(f"not a statement: {st!r}")


def render(program: Program | CoreProgram) -> str:
    return "".join(render_statement(st) + "\n" for st in program.statements)
