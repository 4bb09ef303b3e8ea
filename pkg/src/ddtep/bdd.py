"""A small reduced ordered binary decision diagram package.

Nodes are integers indexing parallel arrays; 0 and 1 are the terminals.
Variable ``i`` is tested before variable ``j`` whenever ``i < j``.
"""

from __future__ import annotations

import sys
from typing import Mapping, Sequence

from .errors import ResourceLimitError

DEFAULT_NODE_CAP = 2_000_000
_TERMINAL_LEVEL = sys.maxsize


class BDD:
    FALSE = 0
    TRUE = 1

    def __init__(self, node_cap: int = DEFAULT_NODE_CAP):
        self.node_cap = node_cap
        self._var = [_TERMINAL_LEVEL, _TERMINAL_LEVEL]
        self._low = [0, 1]
        self._high = [0, 1]
        self._unique: dict[tuple[int, int, int], int] = {}
        self._and: dict[tuple[int, int], int] = {}
        self._or: dict[tuple[int, int], int] = {}
        self._not: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._var)

    # structure ------------------------------------------------------------
    def var_of(self, u: int) -> int:
        return self._var[u]

    def low(self, u: int) -> int:
        return self._low[u]

    def high(self, u: int) -> int:
        return self._high[u]

    def is_terminal(self, u: int) -> bool:
        return u < 2

    def mk(self, v: int, low: int, high: int) -> int:
        if low == high:
            return low
        key = (v, low, high)
        u = self._unique.get(key)
        if u is None:
            if len(self._var) >= self.node_cap:
                raise ResourceLimitError(f"decision diagram exceeded {self.node_cap} nodes")
            u = len(self._var)
            self._var.append(v)
            self._low.append(low)
            self._high.append(high)
            self._unique[key] = u
        return u

    def var(self, v: int) -> int:
        return self.mk(v, self.FALSE, self.TRUE)

    def nvar(self, v: int) -> int:
        return self.mk(v, self.TRUE, self.FALSE)

    # boolean operations ---------------------------------------------------
    def negate(self, u: int) -> int:
        if u < 2:
            return 1 - u
        r = self._not.get(u)
        if r is None:
            r = self.mk(self._var[u], self.negate(self._low[u]), self.negate(self._high[u]))
            self._not[u] = r
        return r

    def conj(self, u: int, v: int) -> int:
        if u == 0 or v == 0:
            return 0
        if u == 1:
            return v
        if v == 1 or u == v:
            return u
        if u > v:
            u, v = v, u
        r = self._and.get((u, v))
        if r is None:
            r = self._split(u, v, self.conj)
            self._and[(u, v)] = r
        return r

    def disj(self, u: int, v: int) -> int:
        if u == 1 or v == 1:
            return 1
        if u == 0:
            return v
        if v == 0 or u == v:
            return u
        if u > v:
            u, v = v, u
        r = self._or.get((u, v))
        if r is None:
            r = self._split(u, v, self.disj)
            self._or[(u, v)] = r
        return r

    def _split(self, u: int, v: int, op) -> int:
        vu, vv = self._var[u], self._var[v]
        top = min(vu, vv)
        u0, u1 = (self._low[u], self._high[u]) if vu == top else (u, u)
        v0, v1 = (self._low[v], self._high[v]) if vv == top else (v, v)
        return self.mk(top, op(u0, v0), op(u1, v1))

    def conj_all(self, nodes) -> int:
        r = self.TRUE
        for n in nodes:
            r = self.conj(r, n)
            if r == self.FALSE:
                break
        return r

    def disj_all(self, nodes) -> int:
        r = self.FALSE
        for n in nodes:
            r = self.disj(r, n)
            if r == self.TRUE:
                break
        return r

    def restrict(self, u: int, values: Mapping[int, bool]) -> int:
        memo: dict[int, int] = {}

        def go(n: int) -> int:
            if n < 2:
                return n
            r = memo.get(n)
            if r is None:
                v = self._var[n]
                if v in values:
                    r = go(self._high[n] if values[v] else self._low[n])
                else:
                    r = self.mk(v, go(self._low[n]), go(self._high[n]))
                memo[n] = r
            return r

        return go(u)

    # queries --------------------------------------------------------------
    def evaluate(self, u: int, values: Mapping[int, bool]) -> bool:
        while u >= 2:
            u = self._high[u] if values[self._var[u]] else self._low[u]
        return u == 1

    def support(self, u: int) -> set[int]:
        seen, out, stack = set(), set(), [u]
        while stack:
            n = stack.pop()
            if n < 2 or n in seen:
                continue
            seen.add(n)
            out.add(self._var[n])
            stack.append(self._low[n])
            stack.append(self._high[n])
        return out

    def size(self, u: int) -> int:
        seen, stack = set(), [u]
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            if n >= 2:
                stack.append(self._low[n])
                stack.append(self._high[n])
        return len(seen)

    def wmc(self, u: int, weights: Sequence[float], memo: dict | None = None) -> float:
        """Weighted model count; ``weights[v]`` is the probability that variable v is true.

        Variables skipped on a path contribute a factor of 1, so every
        variable must carry a normalised pair (p, 1 - p).
        """
        if memo is None:
            memo = {}

        def go(n: int) -> float:
            if n < 2:
                return float(n)
            r = memo.get(n)
            if r is None:
                p = weights[self._var[n]]
                r = p * go(self._high[n]) + (1.0 - p) * go(self._low[n])
                memo[n] = r
            return r

        return go(u)

    def count_models(self, u: int, num_vars: int) -> int:
        """Number of satisfying assignments over variables 0..num_vars-1."""
        memo: dict[int, int] = {}

        def level(n: int) -> int:
            return num_vars if n < 2 else self._var[n]

        def go(n: int) -> int:
            if n < 2:
                return n
            r = memo.get(n)
            if r is None:
                v = self._var[n]
                lo, hi = self._low[n], self._high[n]
                r = go(lo) * 2 ** (level(lo) - v - 1) + go(hi) * 2 ** (level(hi) - v - 1)
                memo[n] = r
            return r

        return go(u) * 2 ** level(u)
