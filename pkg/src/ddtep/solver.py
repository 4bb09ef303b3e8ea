"""Strategy search and value guarantees over the admissible strategy space."""

from __future__ import annotations

import itertools
import math
import os
import random
from dataclasses import dataclass, field
from typing import Iterator

from .engine import TOL, EUReport, Strategy, evaluate, is_admissible, violated_constraints
from .errors import NoAdmissibleStrategy, ResourceLimitError
from .grounder import GroundProgram

DEFAULT_STRATEGY_CAP = 2**20
STRATEGY_CAP_ENV = "DDTEP_STRATEGY_CAP"


def strategy_cap() -> int:
    value = os.environ.get(STRATEGY_CAP_ENV)
    return int(value) if value else DEFAULT_STRATEGY_CAP


@dataclass(frozen=True)
class StrategySpace:
    group_sizes: tuple
    free_count: int

    @classmethod
    def of(cls, gp: GroundProgram) -> "StrategySpace":
        return cls(tuple(len(g) for g in gp.groups), len(gp.free))

    @property
    def raw_size(self) -> int:
        return math.prod(self.group_sizes) * 2**self.free_count

    def __iter__(self) -> Iterator[Strategy]:
        picks = itertools.product(*(range(n) for n in self.group_sizes))
        for groups, free in itertools.product(picks, itertools.product((False, True), repeat=self.free_count)):
            yield Strategy(groups, free)


@dataclass(frozen=True)
class Solution:
    best: EUReport
    explored: int
    method: str  # "exhaustive" or "local"
    ties: tuple = ()  # reports within TOL of the best, canonical order (exhaustive only)
    certified: bool = True


@dataclass(frozen=True)
class BoundsReport:
    minimum: EUReport
    maximum: EUReport
    explored: int


@dataclass(frozen=True)
class Verdict:
    holds: bool
    threshold: float
    minimum: EUReport  # the worst admissible strategy, a counterexample when ``holds`` is false


def enumerate_strategies(gp: GroundProgram, cap: int | None = None) -> Iterator[Strategy]:
    """Admissible strategies in canonical order (group picks, then free flags with false first)."""
    space = StrategySpace.of(gp)
    cap = strategy_cap() if cap is None else cap
    if space.raw_size > cap:
        raise ResourceLimitError(
            f"strategy space has {space.raw_size} candidates, above the cap of {cap}; use --method local"
        )
    return (s for s in space if is_admissible(gp, s))


def evaluate_all(gp: GroundProgram, engine: str = "circuit") -> list[EUReport]:
    reports = [evaluate(gp, s, engine) for s in enumerate_strategies(gp)]
    if not reports:
        raise NoAdmissibleStrategy("no admissible strategy: every candidate violates a constraint")
    return reports


def _pick_best(reports: list[EUReport]) -> tuple[EUReport, tuple]:
    top = max(r.total for r in reports)
    ties = tuple(r for r in reports if r.total >= top - TOL)
    return min(ties, key=lambda r: r.strategy), ties


def solve_exhaustive(gp: GroundProgram, engine: str = "circuit") -> Solution:
    reports = evaluate_all(gp, engine)
    best, ties = _pick_best(reports)
    return Solution(best, len(reports), "exhaustive", ties, True)


# ---------------------------------------------------------------------------
# local search


@dataclass
class _Search:
    gp: GroundProgram
    engine: str
    rng: random.Random
    cache: dict = field(default_factory=dict)

    def value(self, s: Strategy) -> float:
        if s not in self.cache:
            self.cache[s] = evaluate(self.gp, s, self.engine).total
        return self.cache[s]

    def random_strategy(self) -> Strategy:
        groups = tuple(self.rng.randrange(len(g)) for g in self.gp.groups)
        free = tuple(self.rng.random() < 0.5 for _ in self.gp.free)
        return Strategy(groups, free)

    def moves(self, s: Strategy, frozen: frozenset = frozenset()) -> Iterator[tuple[Strategy, tuple]]:
        """Single changes; each is tagged with the variable it touches."""
        for g, size in enumerate(len(x) for x in self.gp.groups):
            if ("g", g) in frozen:
                continue
            for alt in range(size):
                if alt != s.groups[g]:
                    yield Strategy(s.groups[:g] + (alt,) + s.groups[g + 1:], s.free), ("g", g)
        for i in range(len(s.free)):
            if ("f", i) in frozen:
                continue
            flipped = s.free[:i] + (not s.free[i],) + s.free[i + 1:]
            yield Strategy(s.groups, flipped), ("f", i)

    def repair(self, s: Strategy, frozen: frozenset = frozenset()) -> Strategy | None:
        """Greedily reduce the number of violated constraints, never touching ``frozen`` variables."""
        broken = len(violated_constraints(self.gp, s))
        while broken:
            best = None
            for cand, _ in self.moves(s, frozen):
                n = len(violated_constraints(self.gp, cand))
                if n < broken:
                    best, broken = cand, n
            if best is None:
                return None
            s = best
        return s

    def neighbours(self, s: Strategy) -> Iterator[Strategy]:
        for cand, tag in self.moves(s):
            fixed = cand if is_admissible(self.gp, cand) else self.repair(cand, frozenset([tag]))
            if fixed is not None:
                yield fixed

    def climb(self, s: Strategy, max_steps: int) -> Strategy:
        current = self.value(s)
        for _ in range(max_steps):
            best, best_value = None, current
            for n in self.neighbours(s):
                v = self.value(n)
                if v > best_value + TOL or (best is not None and abs(v - best_value) <= TOL and n < best):
                    best, best_value = n, v
            if best is None:
                break
            s, current = best, best_value
        return s


def solve_local(
    gp: GroundProgram,
    seed: int = 0,
    restarts: int = 4,
    max_steps: int = 1000,
    engine: str = "circuit",
) -> Solution:
    """Seeded random-restart hill climbing. The result is not certified optimal."""
    search = _Search(gp, engine, random.Random(seed))
    found: list[Strategy] = []
    for _ in range(max(1, restarts)):
        start = search.repair(search.random_strategy())
        if start is None:
            continue
        found.append(search.climb(start, max_steps))
    if not found:
        raise NoAdmissibleStrategy("local search found no admissible strategy")
    best = max(found, key=lambda s: (search.value(s), _neg_key(s)))
    return Solution(evaluate(gp, best, engine), len(search.cache), "local", (), False)


def _neg_key(s: Strategy):
    # max() picks the lexicographically smallest strategy among equal values
    return tuple(-g for g in s.groups) + tuple(not f for f in s.free)


# ---------------------------------------------------------------------------
# guarantees


def verify_bounds(gp: GroundProgram, engine: str = "circuit") -> BoundsReport:
    reports = evaluate_all(gp, engine)
    lo = min(reports, key=lambda r: (r.total, r.strategy))
    hi, _ = _pick_best(reports)
    return BoundsReport(lo, hi, len(reports))


def check_guarantee(gp: GroundProgram, threshold: float, engine: str = "circuit") -> Verdict:
    """Holds iff every admissible strategy reaches ``threshold`` (inclusive, within TOL)."""
    bounds = verify_bounds(gp, engine)
    return Verdict(bounds.minimum.total >= threshold - TOL, threshold, bounds.minimum)
