"""Bipartite theory data, the consistency check, and n-partite extension.

A theory is specified by a system kind (vector space plus unit effect), a
bipartite effect cone, and a bipartite state cone. The unipartite cones
are derived by partial contraction: unipartite states are unit-effect
marginals of bipartite states, unipartite effects are contractions of
bipartite effects against the derived unipartite states.

``check_consistency`` runs ten conditions, in listing order:

 1. unit-in-unipartite-effects   the unit effect is a unipartite effect
 2. positivity-unipartite        all unipartite state/effect pairings >= 0
 3. positivity-bipartite         all bipartite pairings >= 0
 4. permutation-effects          the bipartite effect cone is swap-invariant
 5. permutation-states           the bipartite state cone is swap-invariant
 6. effect-products              products of unipartite effects are bipartite effects
 7. state-products               products of unipartite states are bipartite states
 8. swap-closure                 state|effect|state outputs stay states
 9. dual-swap-closure            effect|state|effect outputs stay effects
10. contraction-closure          bipartite-vs-unipartite partial contractions
                                 land in the derived unipartite cones

Condition 10 is what makes conditional objects well-typed; it is used by
the consistency argument but easy to forget because the unipartite effect
cone is defined through one direction of it (that direction is audited
anyway, the state direction is substantive).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cones import (
    ConeGenerators,
    _map_indexed,
    cone_equal,
    cone_subset,
    default_tol,
    membership,
    minimal_tensor_product,
    nnls,
    pairwise_positivity,
    prune_redundant,
    symmetrize,
)
from .swap import ClosurePolicy, closure_audit, dedupe_directions
from .tensor import (
    EFFECT,
    STATE,
    CoeffTensor,
    gram_power,
    unit_effect_tensor,
)

__all__ = [
    "TheorySpec",
    "CheckOptions",
    "CheckResult",
    "ConsistencyReport",
    "derive_unipartite",
    "check_consistency",
    "extend_n",
    "correlators",
    "normalize_states",
    "verify_effect_space",
    "swapped_cone",
]


@dataclass
class TheorySpec:
    """Input data of a bipartite theory plus derived unipartite cones."""

    kind: "SystemKind"
    effects2: ConeGenerators
    states2: ConeGenerators
    effect_space_points: list[CoeffTensor] | None = None
    name: str = "theory"
    states1: ConeGenerators | None = None
    effects1: ConeGenerators | None = None

    def __post_init__(self):
        for cone, side, what in ((self.effects2, EFFECT, "effects2"),
                                 (self.states2, STATE, "states2")):
            if cone.kind != self.kind:
                raise ValueError(f"{what} kind does not match the theory kind")
            if cone.n_slots != 2:
                raise ValueError(f"{what} must be a 2-slot cone")
            if cone.side != side:
                raise ValueError(f"{what} must have side {side!r}")

    @property
    def unit(self) -> CoeffTensor:
        return unit_effect_tensor(self.kind, 1)


def swapped_cone(cone: ConeGenerators) -> ConeGenerators:
    """The image of a 2-slot cone under exchanging its slots."""
    d = cone.kind.slot_dim
    rays = cone.rays.reshape(len(cone), d, d).transpose(0, 2, 1).reshape(len(cone), -1)
    return ConeGenerators(cone.kind, 2, cone.side, f"swap({cone.name})",
                          np.ascontiguousarray(rays), cone.scales, cone.tags)


def derive_unipartite(spec: TheorySpec, tol: float | None = None,
                      prune: bool = True) -> tuple[ConeGenerators, ConeGenerators]:
    """Derive and cache the unipartite cones (states1, effects1).

    States: unit-effect marginals of every bipartite state generator, both
    slots. Effects: contractions of every bipartite effect generator with
    every derived unipartite state generator, both slots. Lists are
    deduplicated; with ``prune`` (default) conically redundant generators
    are dropped as well, which leaves the cones unchanged.
    """
    kind = spec.kind
    d = kind.slot_dim
    gu = kind.gram @ kind.unit_effect
    sgrids = spec.states2.rays.reshape(len(spec.states2), d, d)
    marg = np.concatenate([sgrids @ gu, np.einsum("kij,i->kj", sgrids, gu)])
    marg = marg[np.linalg.norm(marg, axis=1) > 1e-13]
    states1 = ConeGenerators.from_rays(kind, 1, STATE, f"{spec.name}.states1", marg).deduped()
    if prune:
        states1 = prune_redundant(states1, tol)

    egrids = spec.effects2.rays.reshape(len(spec.effects2), d, d)
    rho = states1.rays  # (r, d)
    cond_right = np.einsum("ri,ij,ejk->erk", rho, kind.gram, egrids, optimize=True)
    cond_left = np.einsum("ejk,ki,ri->erj", egrids, kind.gram, rho, optimize=True)
    conds = np.concatenate([cond_right.reshape(-1, d), cond_left.reshape(-1, d)])
    conds = conds[np.linalg.norm(conds, axis=1) > 1e-13]
    effects1 = ConeGenerators.from_rays(kind, 1, EFFECT, f"{spec.name}.effects1", conds).deduped()
    if prune:
        effects1 = prune_redundant(effects1, tol)

    spec.states1 = states1
    spec.effects1 = effects1
    return states1, effects1


@dataclass
class CheckOptions:
    tol: float | None = None
    closure: ClosurePolicy | None = None  # None: exhaustive when small enough
    threads: int = 1
    auto_exhaustive_cap: int = 2 * 10**6
    auto_sample: int = 20000
    seed: int = 0


@dataclass
class CheckResult:
    check_id: str
    tag: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class ConsistencyReport:
    name: str
    checks: list[CheckResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def consistent(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def verdict(self) -> str:
        return "consistent" if self.consistent else "inconsistent"

    def first_failure(self) -> CheckResult | None:
        for c in self.checks:
            if not c.passed:
                return c
        return None

    def __str__(self):
        lines = [f"{self.name}: {self.verdict} ({self.seconds:.2f}s)"]
        for c in self.checks:
            mark = "ok " if c.passed else "FAIL"
            lines.append(f"  [{mark}] {c.check_id:32s} {c.tag}")
        return "\n".join(lines)


def _auto_policy(spec: TheorySpec, options: CheckOptions) -> ClosurePolicy:
    triples = len(spec.states2) ** 2 * len(spec.effects2)
    dual_triples = len(spec.effects2) ** 2 * len(spec.states2)
    if max(triples, dual_triples) <= options.auto_exhaustive_cap:
        return ClosurePolicy()
    if spec.states2.tags is None or spec.effects2.tags is None:
        return ClosurePolicy(sample=options.auto_sample, entangled_cap=0,
                             seed=options.seed)
    return ClosurePolicy(skip_factorizable=True, sample=options.auto_sample,
                         seed=options.seed)


def check_consistency(spec: TheorySpec, options: CheckOptions | None = None) -> ConsistencyReport:
    """Run the ten-condition consistency check; failures become report entries."""
    options = options or CheckOptions()
    tol = options.tol if options.tol is not None else default_tol()
    threads = options.threads
    report = ConsistencyReport(spec.name)
    t_start = time.perf_counter()

    if spec.states1 is None or spec.effects1 is None:
        derive_unipartite(spec, tol)
    states1, effects1 = spec.states1, spec.effects1

    def record(check_id, tag, passed, details, t0):
        report.checks.append(CheckResult(check_id, tag, bool(passed), details,
                                         time.perf_counter() - t0))

    t0 = time.perf_counter()
    res = membership(effects1, spec.unit, tol)
    record("unit-in-unipartite-effects", "# Axiom 3(a)", res.inside,
           {"residual": res.residual}, t0)

    t0 = time.perf_counter()
    pos1 = pairwise_positivity(states1, effects1, tol)
    record("positivity-unipartite", "# positivity, unipartite", pos1.passed,
           {"min_value": pos1.min_value, "min_pair": pos1.min_pair,
            "violations": pos1.violations[:8],
            "certificate": _positivity_certificate(effects1, pos1)}, t0)

    t0 = time.perf_counter()
    pos2 = pairwise_positivity(spec.states2, spec.effects2, tol)
    record("positivity-bipartite", "# positivity, bipartite", pos2.passed,
           {"min_value": pos2.min_value, "min_pair": pos2.min_pair,
            "violations": pos2.violations[:8],
            "certificate": _positivity_certificate(spec.effects2, pos2)}, t0)

    t0 = time.perf_counter()
    eq_p = cone_equal(spec.effects2, swapped_cone(spec.effects2), tol, threads)
    record("permutation-invariance-effects", "# Axiom 6, bipartite", eq_p.equal,
           _equal_details(eq_p), t0)

    t0 = time.perf_counter()
    eq_d = cone_equal(spec.states2, swapped_cone(spec.states2), tol, threads)
    record("permutation-invariance-states", "# Axiom 6, bipartite", eq_d.equal,
           _equal_details(eq_d), t0)

    t0 = time.perf_counter()
    sub_p = cone_subset(minimal_tensor_product(effects1, effects1), spec.effects2,
                        tol, threads)
    record("unipartite-effect-products", "# Axiom 3(b), unipartite", sub_p.passed,
           _subset_details(sub_p), t0)

    t0 = time.perf_counter()
    sub_d = cone_subset(minimal_tensor_product(states1, states1), spec.states2,
                        tol, threads)
    record("unipartite-state-products", "# Axiom 4(b), unipartite", sub_d.passed,
           _subset_details(sub_d), t0)

    policy = options.closure if options.closure is not None else _auto_policy(spec, options)

    t0 = time.perf_counter()
    aud = closure_audit(spec.states2, spec.effects2, "swap", tol=tol,
                        policy=policy, threads=threads)
    record("swap-closure", "# Axiom 5(b), bipartite", aud.passed,
           _audit_details(aud), t0)

    t0 = time.perf_counter()
    aud_d = closure_audit(spec.states2, spec.effects2, "dual", tol=tol,
                          policy=policy, threads=threads)
    record("dual-swap-closure", "# Axiom 5(a), bipartite", aud_d.passed,
           _audit_details(aud_d), t0)

    t0 = time.perf_counter()
    cc = _contraction_closure(spec, tol, threads)
    record("contraction-closure", "# partial contractions", cc["passed"], cc, t0)

    report.seconds = time.perf_counter() - t_start
    return report


def _positivity_certificate(effects, pos):
    """The violating effect generator doubles as a separating functional."""
    if pos.passed or not pos.violations:
        return None
    _, j, _ = min(pos.violations, key=lambda v: v[2])
    return effects.rays[j].tolist()


def _equal_details(eq):
    return {"forward_failures": [i for i, _ in eq.forward.failures][:8],
            "backward_failures": [i for i, _ in eq.backward.failures][:8]}


def _subset_details(sub):
    return {"checked": sub.checked,
            "failures": [i for i, _ in sub.failures][:8]}


def _audit_details(aud):
    return {"triples": aud.n_triples, "unique_outputs": aud.n_unique,
            "zero_outputs": aud.n_zero, "notes": aud.notes,
            "failures": [f.triple for f in aud.failures][:8],
            "seconds": aud.seconds}


def _contraction_closure(spec: TheorySpec, tol: float, threads: int) -> dict:
    """Conditional objects of bipartite generators stay in the unipartite cones."""
    kind = spec.kind
    d = kind.slot_dim
    failures = []
    checked = 0
    sgrids = spec.states2.rays.reshape(len(spec.states2), d, d)
    e1 = spec.effects1.rays
    cond_states = np.concatenate([
        np.einsum("sij,jk,ek->sei", sgrids, kind.gram, e1, optimize=True).reshape(-1, d),
        np.einsum("sij,ik,ek->sej", sgrids, kind.gram, e1, optimize=True).reshape(-1, d),
    ])
    egrids = spec.effects2.rays.reshape(len(spec.effects2), d, d)
    s1 = spec.states1.rays
    cond_effects = np.concatenate([
        np.einsum("eij,ik,sk->esj", egrids, kind.gram, s1, optimize=True).reshape(-1, d),
        np.einsum("eij,jk,sk->esi", egrids, kind.gram, s1, optimize=True).reshape(-1, d),
    ])
    for label, block, target in (("state", cond_states, spec.states1),
                                 ("effect", cond_effects, spec.effects1)):
        checked += block.shape[0]
        dirs, reps, _ = dedupe_directions(block)
        results = _map_indexed(lambda i, d=dirs, t=target: membership(t, d[i], tol),
                               list(range(len(dirs))), threads)
        failures.extend((label, int(reps[i])) for i, r in enumerate(results)
                        if not r.inside)
    return {"passed": not failures, "failures": failures[:8], "checked": checked}


def extend_n(spec: TheorySpec, n: int, *, options: CheckOptions | None = None,
             generator_cap: int = 10**6,
             assume_consistent: bool = False) -> tuple[ConeGenerators, ConeGenerators]:
    """Extend the bipartite theory to n slots; returns (effects_n, states_n).

    Even n: symmetrized minimal tensor power of the bipartite cones. Odd n:
    symmetrized unipartite (x) bipartite^floor(n/2). n in {1, 2} returns
    the stored cones.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not assume_consistent:
        report = check_consistency(spec, options)
        if not report.consistent:
            raise ValueError(f"theory is inconsistent: {report.first_failure().check_id}")
    elif spec.states1 is None:
        derive_unipartite(spec, options.tol if options else None)
    if n == 1:
        return spec.effects1, spec.states1
    if n == 2:
        return spec.effects2, spec.states2

    def build(uni: ConeGenerators, bi: ConeGenerators) -> ConeGenerators:
        halves = n // 2
        count = (len(uni) if n % 2 else 1) * len(bi) ** halves * math.factorial(n)
        if count > generator_cap:
            raise ValueError(
                f"extension would enumerate ~{count} generators (cap {generator_cap})")
        cone = uni if n % 2 else None
        for _ in range(halves):
            cone = bi if cone is None else minimal_tensor_product(cone, bi)
        return symmetrize(cone, name=f"{bi.name}^({n})")

    effects_n = build(spec.effects1, spec.effects2)
    states_n = build(spec.states1, spec.states2)
    return effects_n, states_n


def correlators(spec: TheorySpec, tol: float | None = None,
                verify: bool = True) -> list[CoeffTensor]:
    """Unipartite correlators 2e - unit for each supplied effect-space point."""
    if spec.effect_space_points is None:
        raise ValueError("theory carries no effect-space points")
    if verify:
        rep = verify_effect_space(spec, tol)
        if not rep["passed"]:
            raise ValueError(f"effect space verification failed: {rep}")
    unit = spec.unit
    return [(2.0 * e) - unit for e in spec.effect_space_points]


def verify_effect_space(spec: TheorySpec, tol: float | None = None) -> dict:
    """Verify the supplied effect-space points.

    Each point and its negation (unit - point) must belong to the
    unipartite effect cone, and each negation must be a convex combination
    of the listed points (membership of the lifted vector in the cone of
    lifted generators), so the set is closed under negation.
    """
    if spec.effect_space_points is None:
        raise ValueError("theory carries no effect-space points")
    if tol is None:
        tol = default_tol()
    if spec.effects1 is None:
        derive_unipartite(spec, tol)
    unit = spec.unit
    failures = []
    pts = spec.effect_space_points
    lifted = np.vstack([np.stack([p.coeffs for p in pts]).T, np.ones(len(pts))])
    for i, p in enumerate(pts):
        if not membership(spec.effects1, p.coeffs, tol).inside:
            failures.append(("point-not-effect", i))
        neg = unit - p
        if not membership(spec.effects1, neg.coeffs, tol).inside:
            failures.append(("negation-not-effect", i))
        target = np.concatenate([neg.coeffs, [1.0]])
        _, resid, _ = nnls(lifted, target)
        if np.linalg.norm(resid) > tol * max(1.0, np.linalg.norm(target)):
            failures.append(("negation-not-in-hull", i))
    return {"passed": not failures, "failures": failures, "points": len(pts)}


def normalize_states(cone: ConeGenerators, tol: float | None = None):
    """Scale each generator to unit pairing with the n-slot unit effect.

    Returns ``(normalized tensors, excluded indices)``; generators whose
    unit pairing is not positive are excluded and reported.
    """
    if tol is None:
        tol = default_tol()
    gram_n = gram_power(cone.kind, cone.n_slots)
    unit_n = unit_effect_tensor(cone.kind, cone.n_slots)
    pairings = cone.rays @ (gram_n @ unit_n.coeffs)
    normalized = []
    excluded = []
    for i, p in enumerate(pairings):
        if p <= tol:
            excluded.append(i)
        else:
            normalized.append(CoeffTensor(cone.kind, cone.n_slots,
                                          cone.rays[i] / p, cone.side))
    return normalized, excluded
