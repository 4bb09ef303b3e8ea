"""EM parameter learning from (partial) interpretations.

Every ground instance of a learnable clause shares the clause's parameter.
The E-step computes, per interpretation, the posterior of each relevant
instance outcome by weighted model counting on compiled circuits; the
M-step divides expected counts by the number of relevant instances.
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, replace
from typing import Mapping

from .engine import Compiler
from .errors import (
    DecisionDependentEvidence,
    ImpossibleEvidence,
    NothingToLearn,
    ParseError,
)
from .grounder import GroundProgram, ground, herbrand_universe
from .syntax import (
    AnnotatedDisjunction,
    Atom,
    CoreProgram,
    EvidenceDecl,
    Learnable,
    Program,
    parse_program,
    render_atom,
    term_vars,
)

log = logging.getLogger(__name__)

EPSILON = 1e-9
INIT_RANGE = (0.1, 0.9)
MONOTONE_SLACK = 1e-12


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    interpretations: tuple  # each a dict Atom -> bool
    constants: frozenset = frozenset()

    def __len__(self) -> int:
        return len(self.interpretations)

    def atoms(self) -> list[Atom]:
        seen: dict[Atom, None] = {}
        for interp in self.interpretations:
            seen.update(dict.fromkeys(interp))
        return list(seen)


_BLANK = re.compile(r"^[ \t\r]*$")


def parse_dataset(text: str) -> Dataset:
    """Blank-line separated blocks of ``evidence(A,true|false).`` lines, one interpretation each."""
    lines = text.split("\n")
    blocks, start = [], None
    for i, line in enumerate(lines + [""]):
        if _BLANK.match(line):
            if start is not None:
                blocks.append((start, "\n".join(lines[start:i])))
                start = None
        elif start is None:
            start = i
    interpretations, constants = [], set()
    for start, block in blocks:
        program = parse_program(block, line_offset=start)
        interp: dict[Atom, bool] = {}
        for k, st in enumerate(program.statements):
            line, col = program.location(k)
            if not isinstance(st, EvidenceDecl):
                raise ParseError("datasets may only contain evidence(Atom,true|false) statements", line, col)
            if any(True for a in st.atom.args for _ in term_vars(a)):
                raise ParseError(f"evidence atom {render_atom(st.atom)} is not ground", line, col)
            if interp.get(st.atom, st.truth) != st.truth:
                raise ParseError(f"{render_atom(st.atom)} observed both true and false", line, col)
            interp[st.atom] = st.truth
        if interp:  # comment-only blocks carry nothing
            interpretations.append(interp)
    for interp in interpretations:
        constants |= herbrand_universe(CoreProgram(tuple(EvidenceDecl(a, t) for a, t in interp.items())))
    return Dataset(tuple(interpretations), frozenset(constants))


# ---------------------------------------------------------------------------
# compiled learning problem


@dataclass
class _Example:
    evidence: int  # circuit node of the conjoined evidence literals
    joints: list  # (param id, node of evidence and instance outcome)
    relevant: dict  # param id -> number of relevant ground instances


class LearningProblem:
    """Ground program plus per-interpretation circuits, reused across EM iterations."""

    def __init__(self, core: CoreProgram, dataset: Dataset):
        if not core.params:
            raise NothingToLearn("the program has no learnable t(...) probabilities")
        self.core = core
        self.dataset = dataset
        self.gp: GroundProgram = ground(core, extra=dataset.constants, queries=dataset.atoms())
        self.compiler = Compiler(self.gp)
        self.examples = [self._example(i, interp) for i, interp in enumerate(dataset.interpretations)]

    def _example(self, m: int, interp: Mapping[Atom, bool]) -> _Example:
        gp, comp, bdd = self.gp, self.compiler, self.compiler.bdd
        literals, ids = [], []
        for atom, truth in list(gp.evidence.items()) + [(gp.atom_id(a), t) for a, t in interp.items()]:
            if atom is None:
                if truth:
                    raise ImpossibleEvidence(f"interpretation {m + 1}: an atom observed true can never hold")
                continue
            ids.append(atom)
            literals.append(comp.literal(atom, truth))
        node = bdd.conj_all(literals)
        if comp.decision_support(node):
            names = sorted(render_atom(gp.decisions[d].label) for d in comp.decision_support(node))
            raise DecisionDependentEvidence(
                f"interpretation {m + 1} depends on decision(s) {', '.join(names)}; learning needs decision-free evidence"
            )
        cone = gp.cone(ids)
        joints, relevant = [], {}
        for cv in gp.choices:
            if not cv.learnable or not any(a in cone for a, _ in cv.outcomes if a is not None):
                continue
            for j, pid in enumerate(cv.params):
                if pid is None:
                    continue
                relevant[pid] = relevant.get(pid, 0) + 1
                joints.append((pid, bdd.conj(node, comp.indicator(cv.id, j))))
        return _Example(node, joints, relevant)

    def weights(self, params: Mapping[str, float]) -> list[float]:
        return self.compiler.weights(self.gp.with_params(dict(params)))

    def evidence_probabilities(self, params: Mapping[str, float]) -> list[float]:
        w, bdd = self.weights(params), self.compiler.bdd
        memo: dict = {}
        return [bdd.wmc(ex.evidence, w, memo) for ex in self.examples]

    def log_likelihood(self, params: Mapping[str, float]) -> float:
        total = 0.0
        for m, p in enumerate(self.evidence_probabilities(params)):
            if p <= 0.0:
                raise ImpossibleEvidence(f"interpretation {m + 1} has probability zero under these parameters")
            total += math.log(p)
        return total

    def e_step(self, params: Mapping[str, float]) -> tuple[dict, dict]:
        w, bdd = self.weights(params), self.compiler.bdd
        memo: dict = {}
        counts = {p.id: 0.0 for p in self.core.params}
        totals = {p.id: 0 for p in self.core.params}
        for m, ex in enumerate(self.examples):
            p_e = bdd.wmc(ex.evidence, w, memo)
            if p_e <= 0.0:
                raise ImpossibleEvidence(f"interpretation {m + 1} has probability zero under these parameters")
            for pid, node in ex.joints:
                counts[pid] += bdd.wmc(node, w, memo) / p_e
            for pid, n in ex.relevant.items():
                totals[pid] += n
        return counts, totals


# ---------------------------------------------------------------------------
# public operations


def log_likelihood(core: CoreProgram, params: Mapping[str, float], dataset: Dataset) -> float:
    return LearningProblem(core, dataset).log_likelihood(params)


def e_step(core: CoreProgram, params: Mapping[str, float], dataset: Dataset) -> tuple[dict, dict]:
    """Expected true-counts and relevant-instance totals per parameter."""
    return LearningProblem(core, dataset).e_step(params)


def clamp(p: float) -> float:
    return min(1.0 - EPSILON, max(EPSILON, p))


def m_step(
    counts: Mapping[str, float],
    totals: Mapping[str, int],
    previous: Mapping[str, float] | None = None,
    warn: bool = True,
) -> dict:
    out = {}
    for pid, count in counts.items():
        n = totals.get(pid, 0)
        if n > 0:
            out[pid] = clamp(count / n)
        else:
            if warn:
                log.warning("parameter %s has no relevant instances; left unchanged", pid)
            if previous is not None and pid in previous:
                out[pid] = previous[pid]
    return out


@dataclass(frozen=True)
class FitResult:
    params: dict
    trace: tuple  # log-likelihood at the initial parameters, then after each iteration
    iterations: int
    converged: bool
    seed: int | None


def initial_params(core: CoreProgram, seed: int | None = 0, init: Mapping[str, float] | None = None) -> dict:
    """Explicit ``init`` first, then declared ``t(P0)`` values, then seeded uniform draws."""
    rng = random.Random(seed)
    out = {}
    for p in core.params:
        draw = rng.uniform(*INIT_RANGE)  # drawn for every parameter so seeds stay aligned
        if init and p.id in init:
            out[p.id] = init[p.id]
        elif p.initial is not None:
            out[p.id] = p.initial
        else:
            out[p.id] = draw
    return out


def em_fit(
    core: CoreProgram,
    dataset: Dataset,
    max_iters: int = 100,
    tol: float = 1e-4,
    seed: int | None = 0,
    init: Mapping[str, float] | None = None,
) -> FitResult:
    problem = LearningProblem(core, dataset)
    theta = initial_params(core, seed, init)
    trace = [problem.log_likelihood(theta)]
    converged, iterations = False, 0
    for iterations in range(1, max_iters + 1):
        counts, totals = problem.e_step(theta)
        new = m_step(counts, totals, theta, warn=iterations == 1)
        trace.append(problem.log_likelihood(new))
        if trace[-1] < trace[-2] - MONOTONE_SLACK:
            log.warning("log-likelihood decreased at iteration %d (%g -> %g)", iterations, trace[-2], trace[-1])
        delta = max((abs(new[k] - theta[k]) for k in theta), default=0.0)
        theta = new
        if delta < tol:
            converged = True
            break
    return FitResult(theta, tuple(trace), iterations, converged, seed)


def apply_params(program: Program, core: CoreProgram, params: Mapping[str, float]) -> Program:
    """The source program with its ``t(...)`` markers replaced by the given probabilities."""
    statements = list(program.statements)
    for p in core.params:
        if p.id not in params:
            continue
        st = statements[p.source_index]
        heads = list(st.heads)
        heads[p.head_index] = (params[p.id], heads[p.head_index][1])
        statements[p.source_index] = replace(st, heads=tuple(heads))
    leftover = [
        i for i, st in enumerate(statements)
        if isinstance(st, AnnotatedDisjunction) and any(isinstance(q, Learnable) for q, _ in st.heads)
    ]
    if leftover:
        log.warning("%d statement(s) keep learnable markers without fitted values", len(leftover))
    return Program(tuple(statements), program.locations)
