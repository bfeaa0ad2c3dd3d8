"""Counting total orders consistent with a skill precedence relation."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

BRUTE_FORCE_LIMIT = 10
DP_LIMIT = 24


class TooLarge(ValueError):
    pass


class NotIndependentPairs(ValueError):
    pass


@dataclass(frozen=True)
class PartialOrder:
    n: int
    edges: frozenset  # (a, b) means a must precede b
    labels: tuple = ()

    def __post_init__(self):
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        for a, b in edges:
            if not (0 <= a < self.n and 0 <= b < self.n) or a == b:
                raise ValueError(f"bad edge ({a}, {b}) for {self.n} nodes")
        ts = TopologicalSorter({v: set() for v in range(self.n)})
        for a, b in edges:
            ts.add(b, a)
        try:
            tuple(ts.static_order())
        except CycleError as exc:
            raise ValueError(f"precedence relation has a cycle: {exc.args[1]}") from None

    @classmethod
    def independent_pairs(cls, m: int) -> "PartialOrder":
        """M disjoint pick-before-place chains: nodes 2k (pick) and 2k+1 (place)."""
        if m < 0:
            raise ValueError("pair count must be non-negative")
        labels = tuple(s for k in range(m) for s in (f"pick{k + 1}", f"place{k + 1}"))
        return cls(2 * m, frozenset((2 * k, 2 * k + 1) for k in range(m)), labels)

    @classmethod
    def from_json(cls, doc) -> "PartialOrder":
        nodes = doc["nodes"]
        if isinstance(nodes, int):
            labels, index = (), None
            n = nodes
        else:
            labels = tuple(str(x) for x in nodes)
            if len(set(labels)) != len(labels):
                raise ValueError("node labels must be unique")
            index = {name: i for i, name in enumerate(labels)}
            n = len(labels)
        edges = []
        for e in doc.get("edges", []):
            a, b = e
            if index is not None:
                try:
                    a, b = index[str(a)], index[str(b)]
                except KeyError as exc:
                    raise ValueError(f"edge names unknown node {exc}") from None
            edges.append((a, b))
        return cls(n, frozenset(edges), labels)

    @classmethod
    def load(cls, path) -> "PartialOrder":
        return cls.from_json(json.loads(Path(path).read_text()))

    def is_independent_pairs(self) -> bool:
        if self.n % 2 or len(self.edges) != self.n // 2:
            return False
        touched = [v for e in self.edges for v in e]
        return len(set(touched)) == self.n


def pairs_formula(m: int) -> int:
    return math.factorial(2 * m) // 2**m


def count_linearizations(po: PartialOrder, mode: str = "brute_force") -> int:
    """Number of orderings of all nodes respecting every edge.

    Modes: ``brute_force`` (permutation filter, N <= 10),
    ``formula_independent_pairs`` ((2M)!/2^M, only for M disjoint 2-chains),
    ``dp`` (subset dynamic programme, N <= 24).
    """
    if mode == "brute_force":
        if po.n > BRUTE_FORCE_LIMIT:
            raise TooLarge(f"brute force limited to {BRUTE_FORCE_LIMIT} nodes, got {po.n}")
        edges = tuple(po.edges)
        count = 0
        for perm in itertools.permutations(range(po.n)):
            pos = [0] * po.n
            for i, v in enumerate(perm):
                pos[v] = i
            if all(pos[a] < pos[b] for a, b in edges):
                count += 1
        return count
    if mode in ("formula", "formula_independent_pairs"):
        if not po.is_independent_pairs():
            raise NotIndependentPairs("formula mode needs M disjoint two-element chains")
        return pairs_formula(po.n // 2)
    if mode == "dp":
        if po.n > DP_LIMIT:
            raise TooLarge(f"dp limited to {DP_LIMIT} nodes, got {po.n}")
        preds = [0] * po.n
        for a, b in po.edges:
            preds[b] |= 1 << a
        ways = [0] * (1 << po.n)
        ways[0] = 1
        for mask in range(1 << po.n):
            w = ways[mask]
            if not w:
                continue
            for v in range(po.n):
                bit = 1 << v
                if not mask & bit and preds[v] & mask == preds[v]:
                    ways[mask | bit] += w
        return ways[-1]
    raise ValueError(f"unknown mode {mode!r}")
