"""CHSH observables and the iterated CHSH game over a repeater chain.

The CHSH observable for correlators A0, A1, B0, B1 is
``A0 (x) B0 + A0 (x) B1 + A1 (x) B0 - A1 (x) B1``; a correlator is ``e -
(unit - e) = 2e - unit`` for an effect-space point e. A theory's CHSH
value is the largest absolute expectation over normalized bipartite states
and correlator 4-tuples; raw (signed) values appear in witnesses.

The iterated game puts n intermediate parties on a chain of n+1 shared
link states. Each party measures its adjacent pair (one entanglement swap)
and broadcasts the outcome; the end parties apply a correction determined
by all outcomes, then run a CHSH test. The score is the
probability-weighted sum of per-branch CHSH values (reported absolute).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cones import ConeGenerators, default_tol, membership
from .swap import entanglement_swap
from .tensor import (
    EFFECT,
    STATE,
    CoeffTensor,
    full_pairing,
    tensor_product,
    unit_effect_tensor,
)
from .theory import TheorySpec, correlators, normalize_states

__all__ = [
    "ChshSetting",
    "Strategy",
    "GameResult",
    "ChshMaximum",
    "chsh_observable",
    "chsh_value",
    "theory_chsh_value",
    "validate_setting",
    "validate_strategy",
    "iterate_game_exhaustive",
    "iterate_game_fast",
]

#: branches with probability at or below this are skipped as unreachable
ZERO_BRANCH = 1e-15


@dataclass(frozen=True)
class ChshSetting:
    """Correlators for the two settings of each end party."""

    a0: CoeffTensor
    a1: CoeffTensor
    b0: CoeffTensor
    b1: CoeffTensor

    def __post_init__(self):
        for c in (self.a0, self.a1, self.b0, self.b1):
            if c.n_slots != 1:
                raise ValueError("correlators must be 1-slot tensors")
            if c.kind != self.a0.kind:
                raise ValueError("correlator kind mismatch")


def chsh_observable(setting: ChshSetting) -> CoeffTensor:
    """The bipartite CHSH combination of the four correlators."""
    a0, a1, b0, b1 = setting.a0, setting.a1, setting.b0, setting.b1
    return (tensor_product(a0, b0) + tensor_product(a0, b1)
            + tensor_product(a1, b0) - tensor_product(a1, b1))


def chsh_value(state: CoeffTensor, setting: ChshSetting) -> float:
    """Signed expectation of the CHSH observable in a normalized state."""
    return full_pairing(state, chsh_observable(setting))


def validate_setting(setting: ChshSetting, states1: ConeGenerators,
                     tol: float | None = None):
    """Each correlator must pair within [-1, 1] on every normalized state."""
    if tol is None:
        tol = default_tol()
    normalized, _ = normalize_states(states1)
    for name, corr in (("a0", setting.a0), ("a1", setting.a1),
                       ("b0", setting.b0), ("b1", setting.b1)):
        for s in normalized:
            v = full_pairing(s, corr)
            if abs(v) > 1.0 + tol:
                raise ValueError(
                    f"correlator {name} pairs to {v!r} outside [-1, 1]")


@dataclass
class ChshMaximum:
    value: float  # absolute
    signed: float
    state_index: int
    correlator_indices: tuple[int, int, int, int]


def theory_chsh_value(spec: TheorySpec, tol: float | None = None) -> ChshMaximum:
    """Largest |CHSH expectation| over normalized bipartite state generators
    and correlator 4-tuples.

    Exhaustive enumeration is exact here: the objective is multilinear and
    both feasible sets are convex hulls of the enumerated points.
    """
    corrs = correlators(spec, tol)
    states, excluded = normalize_states(spec.states2, tol)
    if excluded:
        raise ValueError(f"bipartite state generators {excluded} have no normalization")
    kind = spec.kind
    d = kind.slot_dim
    C = np.stack([c.coeffs for c in corrs])  # (m, d)
    grids = np.stack([s.coeffs for s in states]).reshape(len(states), d, d)
    T = kind.gram @ C.T  # (d, m)
    X = np.einsum("sij,ia,jb->sab", grids, T, T, optimize=True)  # (S, m, m)
    V = (X[:, :, None, :, None] + X[:, :, None, None, :]
         + X[:, None, :, :, None] - X[:, None, :, None, :])
    flat = int(np.argmax(np.abs(V)))
    s, i0, i1, j0, j1 = np.unravel_index(flat, V.shape)
    signed = float(V[s, i0, i1, j0, j1])
    return ChshMaximum(abs(signed), signed, int(s),
                       (int(i0), int(i1), int(j0), int(j1)))


@dataclass
class Strategy:
    """A fixed strategy for the iterated game.

    ``corrections[mu]`` is a slot-local matrix applied to the first slot of
    the end-to-end pair's coefficients when an intermediate party reports
    outcome ``mu``. ``group_law``, when present, is a composition table on
    outcomes enabling the O(n) game evaluation.
    """

    link_state: CoeffTensor
    bob_measurement: list[CoeffTensor]
    corrections: list[np.ndarray]
    setting: ChshSetting
    group_law: np.ndarray | None = None

    def __post_init__(self):
        if self.link_state.n_slots != 2:
            raise ValueError("link_state must be bipartite")
        k = len(self.bob_measurement)
        if len(self.corrections) != k:
            raise ValueError("one correction per measurement outcome required")
        d = self.link_state.kind.slot_dim
        self.corrections = [np.asarray(c, dtype=float).reshape(d, d)
                            for c in self.corrections]
        if self.group_law is not None:
            self.group_law = np.asarray(self.group_law, dtype=int).reshape(k, k)

    @property
    def n_outcomes(self) -> int:
        return len(self.bob_measurement)


def _apply_correction(matrix: np.ndarray, state: CoeffTensor) -> CoeffTensor:
    out = matrix @ state.grid()
    return CoeffTensor(state.kind, 2, out.ravel(), state.side)


def _group_identity(law: np.ndarray) -> int:
    k = law.shape[0]
    for e in range(k):
        if all(law[e, x] == x and law[x, e] == x for x in range(k)):
            return e
    raise ValueError("group law has no identity element")


def validate_strategy(strategy: Strategy, spec: TheorySpec,
                      tol: float | None = None) -> dict:
    """Check measurement completeness, correction validity, and the group law."""
    if tol is None:
        tol = default_tol()
    problems = []
    kind = strategy.link_state.kind
    total = strategy.bob_measurement[0]
    for e in strategy.bob_measurement[1:]:
        total = total + e
    unit2 = unit_effect_tensor(kind, 2)
    if not np.allclose(total.coeffs, unit2.coeffs, atol=1e-12):
        problems.append("measurement does not sum to the unit effect")
    for mu, corr in enumerate(strategy.corrections):
        for i in range(len(spec.states2)):
            mapped = corr @ spec.states2.rays[i].reshape(kind.slot_dim, -1)
            if not membership(spec.states2, mapped.ravel(), tol).inside:
                problems.append(f"correction {mu} maps generator {i} out of the state cone")
                break
    if strategy.group_law is not None:
        law = strategy.group_law
        k = law.shape[0]
        try:
            _group_identity(law)
        except ValueError as exc:
            problems.append(str(exc))
        for a in range(k):
            for b in range(k):
                for c in range(k):
                    if law[law[a, b], c] != law[a, law[b, c]]:
                        problems.append(f"group law not associative at {(a, b, c)}")
                        break
    validate_setting(strategy.setting, spec.states1, tol)
    return {"passed": not problems, "problems": problems}


@dataclass
class GameResult:
    beta: float  # absolute aggregate score
    beta_signed: float
    rounds: int
    mode: str
    probability_total: float
    class_table: dict[int, tuple[float, float]] | None = None  # g -> (p, signed beta)
    branches: list[tuple[tuple[int, ...], float, float]] | None = None
    skipped_branches: int = 0
    notes: list[str] = field(default_factory=list)


def iterate_game_exhaustive(strategy: Strategy, n: int, *,
                            branch_cap: int = 4**10,
                            store_branches: bool | None = None) -> GameResult:
    """Evaluate the n-round game by enumerating every outcome vector.

    For each outcome vector: chain the n swaps left to right, weight by the
    unit pairing of the unnormalized end-to-end state, apply the composed
    correction, normalize, and score the CHSH test. Probabilities must sum
    to 1 within 1e-9. Swap order is immaterial (contraction associativity);
    left-to-right is fixed for determinism.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k = strategy.n_outcomes
    if k**n > branch_cap:
        raise ValueError(f"{k}**{n} branches exceed the cap {branch_cap}")
    if store_branches is None:
        store_branches = k**n <= 10**5
    kind = strategy.link_state.kind
    unit2 = unit_effect_tensor(kind, 2)
    law = strategy.group_law
    identity = _group_identity(law) if law is not None else None
    classes: dict[int, list[float]] = {}
    branches = [] if store_branches else None
    total_p = 0.0
    total = 0.0
    skipped = 0
    notes: list[str] = []

    def recurse(depth: int, state: CoeffTensor, outcomes: tuple[int, ...],
                corr: np.ndarray, cls: int | None):
        nonlocal total_p, total, skipped
        if depth == n:
            p = full_pairing(state, unit2)
            total_p += p
            if p <= ZERO_BRANCH:
                skipped += 1
                return
            corrected = _apply_correction(corr, state)
            weight = full_pairing(corrected, unit2)
            beta_b = full_pairing(corrected, chsh_observable(strategy.setting)) / weight
            total += p * beta_b
            if branches is not None:
                branches.append((outcomes, p, beta_b))
            if cls is not None:
                entry = classes.setdefault(cls, [0.0, 0.0])
                entry[0] += p
                entry[1] += p * beta_b
            return
        for mu in range(k):
            nxt = entanglement_swap(state, strategy.bob_measurement[mu],
                                    strategy.link_state)
            recurse(depth + 1, nxt, outcomes + (mu,),
                    strategy.corrections[mu] @ corr,
                    law[cls, mu] if cls is not None else None)

    eye = np.eye(kind.slot_dim)
    recurse(0, strategy.link_state, (), eye, identity)
    if abs(total_p - 1.0) > 1e-9:
        notes.append(f"branch probabilities sum to {total_p!r}")
    if skipped:
        notes.append(f"skipped {skipped} zero-probability branches")
    table = ({g: (p, pb / p) for g, (p, pb) in classes.items()}
             if law is not None else None)
    return GameResult(abs(total), total, n, "exhaustive", total_p, table,
                      branches, skipped, notes)


def iterate_game_fast(strategy: Strategy, n: int,
                      tol: float | None = None) -> GameResult:
    """Evaluate the n-round game in O(n) via the outcome group law.

    Verifies first that the single-swap outcome map is closed: the chain of
    post-swap states revisits one canonical state per group element, all
    outcomes are equiprobable, and corrections compose along the law. Falls
    back to the exhaustive path (with a diagnostic) when verification
    fails.
    """
    if strategy.group_law is None:
        raise ValueError("fast path needs a group law")
    if tol is None:
        tol = default_tol()
    k = strategy.n_outcomes
    law = strategy.group_law
    kind = strategy.link_state.kind
    unit2 = unit_effect_tensor(kind, 2)
    link = strategy.link_state

    failure = None
    canon: list[CoeffTensor] = []
    for mu in range(k):
        out = entanglement_swap(link, strategy.bob_measurement[mu], link)
        p = full_pairing(out, unit2)
        if abs(p - 1.0 / k) > tol:
            failure = f"outcome {mu} has probability {p!r}, not 1/{k}"
            break
        canon.append(out.scaled(1.0 / p))
    if failure is None:
        for a in range(k):
            for b in range(k):
                out = entanglement_swap(canon[a], strategy.bob_measurement[b], link)
                p = full_pairing(out, unit2)
                target = canon[law[a, b]]
                if abs(p - 1.0 / k) > tol or not out.scaled(1.0 / p).allclose(target, tol):
                    failure = f"single-swap map not closed at outcomes ({a}, {b})"
                    break
            if failure:
                break
    if failure is None:
        for a in range(k):
            for b in range(k):
                comp = strategy.corrections[a] @ strategy.corrections[b]
                if not np.allclose(comp, strategy.corrections[law[a, b]], atol=1e-12):
                    failure = f"corrections do not compose along the law at ({a}, {b})"
                    break
            if failure:
                break
    if failure is not None:
        result = iterate_game_exhaustive(strategy, n)
        result.notes.append(f"fast path unavailable: {failure}")
        return result

    # Exact outcome-class multiplicities after n uniform steps.
    counts = np.zeros(k, dtype=object)
    for mu in range(k):
        counts[mu] += 1
    for _ in range(n - 1):
        nxt = np.zeros(k, dtype=object)
        for g in range(k):
            if counts[g]:
                for mu in range(k):
                    nxt[law[g, mu]] += counts[g]
        counts = nxt
    p_single = (1.0 / k) ** n
    table = {}
    total = 0.0
    total_p = 0.0
    for g in range(k):
        if not counts[g]:
            continue
        corrected = _apply_correction(strategy.corrections[g], canon[g])
        weight = full_pairing(corrected, unit2)
        beta_g = full_pairing(corrected, chsh_observable(strategy.setting)) / weight
        p_g = float(counts[g]) * p_single
        table[g] = (p_g, beta_g)
        total += p_g * beta_g
        total_p += p_g
    notes = []
    if abs(total_p - 1.0) > 1e-9:
        notes.append(f"class probabilities sum to {total_p!r}")
    return GameResult(abs(total), total, n, "fast", total_p, table, None, 0, notes)
