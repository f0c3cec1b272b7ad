"""Degree-of-freedom graphs for composite particles.

A particle with m internal degrees of freedom carries two symmetric
bipartite graphs over the vertex set {v_1..v_m} u {w_1..w_m}: edge set E
marks d.o.f. pairs that may share entangled states, F those that support
entangled measurements. Edges are ordered pairs (i, j) meaning (v_i, w_j),
1-based as in the JSON interface, 0-based internally.

Rules: (1) symmetry, (i, j) in a set implies (j, i); (2) disjointness of E
and F; (3) an E-F-E chain with matching endpoints concatenates to a new
E edge (entanglement swapping); (4) an F-E-F chain to a new F edge (dual
swapping). ``closure`` is the least fixpoint of rules 3-4 with rule 1
re-imposed; the contradiction flag marks rule-2 violations arising along
the way (the cycle obstruction). ``max_chain_depth`` counts how many
swapping rounds can keep the two chain ends entangled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "SwapGraph",
    "ValidationReport",
    "ClosureResult",
    "DepthResult",
    "validate",
    "closure",
    "max_chain_depth",
    "has_reproducing_chain",
    "enumerate_valid_graphs",
]

Edge = tuple[int, int]


@dataclass(frozen=True)
class SwapGraph:
    m: int
    E: frozenset
    F: frozenset

    def __post_init__(self):
        object.__setattr__(self, "E", frozenset((int(a), int(b)) for a, b in self.E))
        object.__setattr__(self, "F", frozenset((int(a), int(b)) for a, b in self.F))
        for a, b in self.E | self.F:
            if not (0 <= a < self.m and 0 <= b < self.m):
                raise ValueError(f"edge ({a}, {b}) out of range for m={self.m}")


@dataclass
class ValidationReport:
    valid: bool
    missing_mirrors: list[tuple[str, Edge]] = field(default_factory=list)
    overlaps: list[Edge] = field(default_factory=list)


def validate(g: SwapGraph) -> ValidationReport:
    """Check rules 1 (symmetry) and 2 (disjointness)."""
    missing = []
    for name, edges in (("E", g.E), ("F", g.F)):
        for a, b in sorted(edges):
            if (b, a) not in edges:
                missing.append((name, (a, b)))
    overlaps = sorted(g.E & g.F)
    return ValidationReport(not missing and not overlaps, missing, overlaps)


@dataclass
class ClosureResult:
    graph: SwapGraph
    contradiction: bool
    added_e: list[Edge] = field(default_factory=list)
    added_f: list[Edge] = field(default_factory=list)


def _concatenations(first: set, middle: set) -> set:
    """Edges (i, l) with (i, j) in first, (j, k) in middle, (k, l) in first."""
    out = set()
    by_head = {}
    for k, l in first:
        by_head.setdefault(k, []).append(l)
    for i, j in first:
        for jj, k in middle:
            if jj != j:
                continue
            for l in by_head.get(k, ()):
                out.add((i, l))
    return out


def closure(g: SwapGraph) -> ClosureResult:
    """Least fixpoint of rules 3-4, mirror-completing after each addition.

    The fixpoint is computed in full even after a rule-2 violation is
    detected, so contradictory inputs still yield a well-defined closed
    graph for analysis.
    """
    rep = validate(g)
    if not rep.valid:
        raise ValueError(f"invalid graph: {rep}")
    E, F = set(g.E), set(g.F)
    added_e, added_f = [], []
    while True:
        new_e = {e for e in _concatenations(E, F) if e not in E}
        new_f = {f for f in _concatenations(F, E) if f not in F}
        if not new_e and not new_f:
            break
        for a, b in sorted(new_e):
            for edge in ((a, b), (b, a)):
                if edge not in E:
                    E.add(edge)
                    added_e.append(edge)
        for a, b in sorted(new_f):
            for edge in ((a, b), (b, a)):
                if edge not in F:
                    F.add(edge)
                    added_f.append(edge)
    closed = SwapGraph(g.m, frozenset(E), frozenset(F))
    return ClosureResult(closed, bool(E & F), added_e, added_f)


@dataclass
class DepthResult:
    depth: int
    saturated: bool  # True: chains of length >= limit exist

    def __str__(self):
        return f">= {self.depth}" if self.saturated else str(self.depth)


def max_chain_depth(g: SwapGraph, limit: int = 32) -> DepthResult:
    """Largest n <= limit with an alternating chain e1 f1 e2 ... fn e_{n+1}.

    On the closed graph every such chain concatenates round by round, so a
    breadth-first walk over chain endpoints suffices: a chain ending in an
    E edge at w_x extends through any (x, y) in F and (y, z) in E. Edges
    may be reused; depth counts F edges (swap rounds).
    """
    closed = closure(g).graph
    frontier = {b for _, b in closed.E}
    depth = 0
    step = {}
    for x, y in closed.F:
        for yy, z in closed.E:
            if yy == y:
                step.setdefault(x, set()).add(z)
    while depth < limit:
        nxt = set()
        for x in frontier:
            nxt |= step.get(x, set())
        if not nxt:
            return DepthResult(depth, False)
        frontier = nxt
        depth += 1
    return DepthResult(limit, True)


def has_reproducing_chain(g: SwapGraph) -> bool:
    """Does some chain concatenate back to its own first edge?

    Equivalent to a cycle in the F-then-E step relation through a vertex
    that terminates an E edge: the chain e1 f1 ... fn e_{n+1} reproduces
    e1 = (a, b) exactly when the steps return to b.
    """
    closed = closure(g).graph
    step = {}
    for x, y in closed.F:
        for yy, z in closed.E:
            if yy == y:
                step.setdefault(x, set()).add(z)
    starts = {b for _, b in closed.E}
    for b in starts:
        seen = set()
        frontier = step.get(b, set())
        while frontier:
            if b in frontier:
                return True
            seen |= frontier
            frontier = set().union(*(step.get(x, set()) for x in frontier)) - seen
    return False


def enumerate_valid_graphs(m: int):
    """All (E, F) pairs of symmetric disjoint edge sets over m d.o.f.

    Symmetric sets decompose into units: diagonal edges (i, i) and mirror
    pairs {(i, j), (j, i)}; each unit goes to E, to F, or to neither.
    """
    units = [[(i, i)] for i in range(m)]
    units += [[(i, j), (j, i)] for i in range(m) for j in range(i + 1, m)]
    n = len(units)
    for assign in range(3**n):
        e, f = set(), set()
        code = assign
        for u in units:
            code, choice = divmod(code, 3)
            if choice == 1:
                e.update(u)
            elif choice == 2:
                f.update(u)
        yield SwapGraph(m, frozenset(e), frozenset(f))
