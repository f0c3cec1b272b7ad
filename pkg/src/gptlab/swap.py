"""Entanglement swapping and dual entanglement swapping, with closure audits.

For bipartite coefficient tensors viewed as slot_dim x slot_dim matrices,
the swap of states rho, sigma through a bipartite effect e is the matrix
product ``rho @ (gram @ e @ gram) @ sigma``: the effect's first slot is
contracted against rho's second slot and its second slot against sigma's
first slot. The dual map exchanges state and effect roles, with the second
effect living on the two outer slots (mirror-symmetric slot bookkeeping).

Outputs are not renormalized: conditional states keep their probability
weight. Normalization is the caller's explicit step.

Closure audits enumerate generator triples but run one membership test per
distinct output direction: membership is scale-invariant, so deduplicating
ray directions (by hashed random projections) is exact up to the hashing
grid, and only ever splits -- never merges -- directions that differ beyond
it. Failures are reported on a representative triple per direction.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cones import ConeGenerators, MembershipResult, _map_indexed, default_tol, membership
from .tensor import EFFECT, STATE, CoeffTensor

__all__ = [
    "entanglement_swap",
    "dual_entanglement_swap",
    "swap_kernel",
    "ClosurePolicy",
    "SwapAudit",
    "AuditFailure",
    "closure_audit",
    "stability_probe",
    "dedupe_directions",
]

#: output norm below which a swap result counts as the zero vector
_ZERO_OUT = 1e-12


def _require_bipartite(t: CoeffTensor, role: str):
    if t.n_slots != 2:
        raise ValueError(f"{role} must be a 2-slot tensor, got {t.n_slots} slots")


def swap_kernel(kind, middle: np.ndarray) -> np.ndarray:
    """The matrix ``gram @ middle @ gram`` mediating one swap contraction."""
    d = kind.slot_dim
    return kind.gram @ middle.reshape(d, d) @ kind.gram


def entanglement_swap(rho: CoeffTensor, e: CoeffTensor, sigma: CoeffTensor) -> CoeffTensor:
    """Swap: measure the inner pair of rho (x) sigma with the bipartite effect e."""
    _require_bipartite(rho, "rho")
    _require_bipartite(e, "effect")
    _require_bipartite(sigma, "sigma")
    if not (rho.kind == e.kind == sigma.kind):
        raise ValueError("kind mismatch")
    if rho.side != STATE or sigma.side != STATE or e.side != EFFECT:
        warnings.warn("entanglement_swap expects (state, effect, state)", stacklevel=2)
    out = rho.grid() @ swap_kernel(rho.kind, e.coeffs) @ sigma.grid()
    return CoeffTensor(rho.kind, 2, out.ravel(), STATE)


def dual_entanglement_swap(e: CoeffTensor, rho: CoeffTensor, f: CoeffTensor) -> CoeffTensor:
    """Dual swap: contract the inner slots of e (x) f with the bipartite state rho."""
    _require_bipartite(e, "e")
    _require_bipartite(rho, "rho")
    _require_bipartite(f, "f")
    if not (e.kind == rho.kind == f.kind):
        raise ValueError("kind mismatch")
    if e.side != EFFECT or f.side != EFFECT or rho.side != STATE:
        warnings.warn("dual_entanglement_swap expects (effect, state, effect)", stacklevel=2)
    out = e.grid() @ swap_kernel(e.kind, rho.coeffs) @ f.grid()
    return CoeffTensor(e.kind, 2, out.ravel(), EFFECT)


@dataclass(frozen=True)
class ClosurePolicy:
    """Which triples a closure audit enumerates.

    Default: every generator triple. ``skip_factorizable`` drops triples
    whose middle generator is a product, or whose outer generators are both
    products (their outputs factor into already-verified unipartite data;
    requires provenance tags). ``sample`` replaces the remaining bulk with
    that many seeded random triples while still covering fully-entangled
    triples exhaustively (or up to ``entangled_cap`` when set).
    """

    skip_factorizable: bool = False
    sample: int | None = None
    entangled_cap: int | None = None
    seed: int = 0
    chunk_bytes: int = 64 * 2**20


@dataclass
class AuditFailure:
    triple: tuple[int, int, int]  # (outer left, middle, outer right) generator indices
    result: MembershipResult


@dataclass
class SwapAudit:
    mode: str
    n_triples: int
    n_unique: int
    n_zero: int
    failures: list[AuditFailure] = field(default_factory=list)
    stability_scale: float | None = None
    notes: list[str] = field(default_factory=list)
    seconds: float = 0.0
    unique_directions: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return not self.failures


def dedupe_directions(rows: np.ndarray, *, zero_tol: float = _ZERO_OUT):
    """Normalize rows and group them by direction via hashed projections.

    Returns ``(directions, representatives, zero_count)`` where
    ``directions[r]`` is the unit vector represented by input row
    ``representatives[r]``. Hashing uses four fixed random projections
    rounded to a 1e-10 grid; collisions across genuinely different
    directions are astronomically unlikely, and grid-boundary splits only
    duplicate work.
    """
    norms = np.linalg.norm(rows, axis=1)
    nonzero = norms > zero_tol
    zero_count = int((~nonzero).sum())
    idx = np.flatnonzero(nonzero)
    if idx.size == 0:
        return np.zeros((0, rows.shape[1])), np.zeros(0, dtype=int), zero_count
    dirs = rows[idx] / norms[idx, None]
    proj = _projection_matrix(rows.shape[1])
    keys = np.round(dirs @ proj * 1e10).astype(np.int64)
    view = np.ascontiguousarray(keys).view([("", np.int64)] * keys.shape[1]).ravel()
    _, first = np.unique(view, return_index=True)
    first = np.sort(first)
    return dirs[first], idx[first], zero_count


_PROJ_CACHE: dict[int, np.ndarray] = {}


def _projection_matrix(dim: int) -> np.ndarray:
    if dim not in _PROJ_CACHE:
        _PROJ_CACHE[dim] = np.random.default_rng(0x5EED).standard_normal((dim, 4))
    return _PROJ_CACHE[dim]


def _tag_mask(cone: ConeGenerators, tag: str) -> np.ndarray:
    if cone.tags is None:
        raise ValueError(
            f"cone {cone.name!r} carries no provenance tags; "
            "skip-factorizable and entangled-block policies need them"
        )
    return np.array([t == tag for t in cone.tags], dtype=bool)


class _DirectionSink:
    """Accumulates unique output directions across batches."""

    def __init__(self, dim: int):
        self.proj = _projection_matrix(dim)
        self.seen: dict[tuple, int] = {}
        self.dirs: list[np.ndarray] = []
        self.reps: list[tuple[int, int, int]] = []
        self.n_zero = 0
        self.n_total = 0

    def add_batch(self, outs: np.ndarray, triples: np.ndarray):
        self.n_total += outs.shape[0]
        norms = np.linalg.norm(outs, axis=1)
        nonzero = norms > _ZERO_OUT
        self.n_zero += int((~nonzero).sum())
        idx = np.flatnonzero(nonzero)
        if idx.size == 0:
            return
        dirs = outs[idx] / norms[idx, None]
        keys = np.round(dirs @ self.proj * 1e10).astype(np.int64)
        self._merge(keys, lambda f: dirs[f], lambda f: triples[idx[f]])

    def add_keyed(self, keys: np.ndarray, make_dir, make_triple):
        self._merge(keys, make_dir, make_triple)

    def _merge(self, keys: np.ndarray, make_dir, make_triple):
        view = np.ascontiguousarray(keys).view([("", np.int64)] * keys.shape[1]).ravel()
        _, first = np.unique(view, return_index=True)
        for f in np.sort(first):
            key = tuple(keys[f])
            if key not in self.seen:
                self.seen[key] = len(self.dirs)
                self.dirs.append(np.array(make_dir(f), dtype=float))
                self.reps.append(tuple(int(v) for v in make_triple(f)))


def _batched_swaps(sink: _DirectionSink, outers: ConeGenerators, mids: ConeGenerators,
                   mid_indices, left_idx: np.ndarray, right_idx: np.ndarray,
                   *, paired: bool, chunk_bytes: int):
    """Feed swap outputs for the requested triples into the sink.

    ``paired=False`` runs the full cross product left_idx x right_idx for
    each middle; ``paired=True`` zips the two index arrays elementwise.

    The cross-product path never materializes the outputs: for a block of
    left factors T_a = M_a K and right factors N_b, the squared norms
    ||T_a N_b||^2 = <T_a^t T_a, N_b N_b^t> and the four hash projections of
    T_a N_b are bilinear in (T_a, N_b), so both come out of small matrix
    products. Output vectors are then rebuilt only for new directions.
    """
    d = outers.kind.slot_dim
    grids = outers.rays.reshape(len(outers), d, d)
    left_idx = np.asarray(left_idx, dtype=int)
    right_idx = np.asarray(right_idx, dtype=int)
    if len(left_idx) == 0 or len(right_idx) == 0 or len(mid_indices) == 0:
        return
    proj3 = sink.proj.reshape(d, d, -1)
    n_proj = proj3.shape[2]
    if paired:
        for j in mid_indices:
            K = swap_kernel(outers.kind, mids.rays[j])
            T = grids[left_idx] @ K
            outs = np.einsum("aij,ajk->aik", T, grids[right_idx]).reshape(len(left_idx), -1)
            triples = np.stack(
                [left_idx, np.full(len(left_idx), j), right_idx], axis=1)
            sink.add_batch(outs, triples)
        return

    n_right = len(right_idx)
    N = grids[right_idx]
    NN = np.einsum("bjk,blk->bjl", N, N).reshape(n_right, d * d)
    n_norm = np.linalg.norm(NN, axis=1)
    chunk = max(1, chunk_bytes // max(n_right * 8 * (n_proj + 2), 1))
    for j in mid_indices:
        K = swap_kernel(outers.kind, mids.rays[j])
        # W[(i, j), (b, c)] = sum_k N[b, j, k] proj[(i, k), c]
        W = np.tensordot(N, proj3, axes=([2], [1]))  # (b, j, i, c)
        W = np.ascontiguousarray(W.transpose(2, 1, 0, 3)).reshape(d * d, n_right * n_proj)
        for start in range(0, len(left_idx), chunk):
            li = left_idx[start:start + chunk]
            T = grids[li] @ K
            n_left = len(li)
            sink.n_total += n_left * n_right
            # rows where the first contraction already vanishes only ever
            # produce zero outputs
            alive = np.einsum("aij,aij->a", T, T) > _ZERO_OUT**2
            if not alive.all():
                sink.n_zero += int(np.count_nonzero(~alive)) * n_right
                li, T = li[alive], T[alive]
                n_left = len(li)
                if n_left == 0:
                    continue
            TT = np.einsum("aij,ail->ajl", T, T).reshape(n_left, d * d)
            norms2 = TT @ NN.T  # (a, b) squared output norms, up to cancellation
            # The inner product cancels catastrophically near zero: rows
            # whose value sits below the summand-scale noise floor get an
            # exact recomputation; above it the hash keys keep >= 1e-10
            # relative accuracy, matching the hashing grid.
            floor = 1e-4 * np.outer(np.linalg.norm(TT, axis=1), n_norm)
            robust = norms2 > np.maximum(floor, _ZERO_OUT**2)
            a_ix, b_ix = np.nonzero(robust)
            if a_ix.size:
                q = (T.reshape(n_left, d * d) @ W).reshape(n_left, n_right, n_proj)
                scale = 1e10 / np.sqrt(norms2[a_ix, b_ix])
                keys = np.round(q[a_ix, b_ix] * scale[:, None]).astype(np.int64)

                def make_dir(f, T=T, a_ix=a_ix, b_ix=b_ix):
                    out = (T[a_ix[f]] @ N[b_ix[f]]).ravel()
                    return out / np.linalg.norm(out)

                def make_triple(f, li=li, a_ix=a_ix, b_ix=b_ix, j=j):
                    return (li[a_ix[f]], j, right_idx[b_ix[f]])

                sink.add_keyed(keys, make_dir, make_triple)
            a_sm, b_sm = np.nonzero(~robust)
            for s0 in range(0, len(a_sm), 200000):
                asm = a_sm[s0:s0 + 200000]
                bsm = b_sm[s0:s0 + 200000]
                outs = np.einsum("aij,ajk->aik", T[asm], N[bsm]).reshape(len(asm), -1)
                sink.n_total -= len(asm)  # add_batch recounts them
                triples = np.stack([li[asm], np.full(len(asm), j),
                                    right_idx[bsm]], axis=1)
                sink.add_batch(outs, triples)


def closure_audit(states: ConeGenerators, effects: ConeGenerators, mode: str = "swap",
                  *, tol: float | None = None, policy: ClosurePolicy | None = None,
                  threads: int = 1) -> SwapAudit:
    """Audit swap (or dual swap) closure of generator triples.

    ``mode='swap'`` tests state|effect|state outputs for membership in the
    state cone; ``mode='dual'`` tests effect|state|effect outputs in the
    effect cone.
    """
    t0 = time.perf_counter()
    if tol is None:
        tol = default_tol()
    if policy is None:
        policy = ClosurePolicy()
    if mode == "swap":
        outers, mids, target = states, effects, states
    elif mode == "dual":
        outers, mids, target = effects, states, effects
    else:
        raise ValueError("mode must be 'swap' or 'dual'")
    if outers.n_slots != 2 or mids.n_slots != 2:
        raise ValueError("closure audits need 2-slot cones")

    notes: list[str] = []
    sink = _DirectionSink(outers.dim)
    all_out = np.arange(len(outers))
    all_mid = np.arange(len(mids))
    rng = np.random.default_rng(policy.seed)

    if not policy.skip_factorizable and policy.sample is None:
        _batched_swaps(sink, outers, mids, all_mid, all_out, all_out,
                       paired=False, chunk_bytes=policy.chunk_bytes)
    else:
        have_tags = outers.tags is not None and mids.tags is not None
        if policy.skip_factorizable and not have_tags:
            raise ValueError(
                "skip-factorizable needs provenance tags on both cones")
        if have_tags:
            ent_out = all_out[_tag_mask(outers, "entangled")]
            prod_out = all_out[_tag_mask(outers, "product")]
            ent_mid = all_mid[_tag_mask(mids, "entangled")]
        else:
            ent_out = prod_out = np.zeros(0, dtype=int)
            ent_mid = np.zeros(0, dtype=int)
            notes.append("no provenance tags: entangled block is empty")
        if policy.sample is None:
            # Analytic skip only: keep middle-entangled triples with at
            # least one entangled outer, plus nothing else.
            _batched_swaps(sink, outers, mids, ent_mid, ent_out, all_out,
                           paired=False, chunk_bytes=policy.chunk_bytes)
            _batched_swaps(sink, outers, mids, ent_mid, prod_out, ent_out,
                           paired=False, chunk_bytes=policy.chunk_bytes)
            notes.append(
                f"analytically skipped {len(prod_out)**2 * len(ent_mid) + len(outers)**2 * (len(mids) - len(ent_mid))}"
                " factorizable triples")
        else:
            # Fully-entangled block, exhaustive unless capped.
            if policy.entangled_cap is None:
                _batched_swaps(sink, outers, mids, ent_mid, ent_out, ent_out,
                               paired=False, chunk_bytes=policy.chunk_bytes)
                notes.append(
                    f"fully-entangled block exhaustive: {len(ent_out)**2 * len(ent_mid)} triples")
            else:
                m = min(policy.entangled_cap, len(ent_out) ** 2 * len(ent_mid))
                li = rng.choice(ent_out, size=m)
                ji = rng.choice(ent_mid, size=m)
                ri = rng.choice(ent_out, size=m)
                for j in np.unique(ji):
                    sel = ji == j
                    _batched_swaps(sink, outers, mids, [int(j)], li[sel], ri[sel],
                                   paired=True, chunk_bytes=policy.chunk_bytes)
                notes.append(f"fully-entangled block sampled: {m} triples")
            # Seeded random triples from the not-analytically-skipped bulk.
            pool_mid = ent_mid if policy.skip_factorizable else all_mid
            if policy.sample > 0 and len(pool_mid):
                li = rng.choice(all_out, size=policy.sample)
                ji = rng.choice(pool_mid, size=policy.sample)
                ri = rng.choice(all_out, size=policy.sample)
                for j in np.unique(ji):
                    sel = ji == j
                    _batched_swaps(sink, outers, mids, [int(j)], li[sel], ri[sel],
                                   paired=True, chunk_bytes=policy.chunk_bytes)
                notes.append(f"random sample: {policy.sample} triples")

    def _test(i: int) -> MembershipResult:
        return membership(target, sink.dirs[i], tol)

    results = _map_indexed(_test, list(range(len(sink.dirs))), threads)
    failures = [AuditFailure(sink.reps[i], r) for i, r in enumerate(results) if not r.inside]
    dirs = np.array(sink.dirs) if sink.dirs else np.zeros((0, outers.dim))
    return SwapAudit(mode=mode, n_triples=sink.n_total, n_unique=len(sink.dirs),
                     n_zero=sink.n_zero, failures=failures, notes=notes,
                     seconds=time.perf_counter() - t0, unique_directions=dirs)


def stability_probe(fixed_state: CoeffTensor, fixed_effect: CoeffTensor,
                    states: ConeGenerators, tol: float | None = None) -> SwapAudit:
    """Check swap(fixed_state, fixed_effect, rho) = c * rho with one common c.

    Reports the scale factor when every generator is reproduced up to
    ``tol`` (relative); otherwise lists the non-proportional generators.
    """
    t0 = time.perf_counter()
    if tol is None:
        tol = default_tol()
    _require_bipartite(fixed_state, "fixed_state")
    _require_bipartite(fixed_effect, "fixed_effect")
    if states.n_slots != 2:
        raise ValueError("stability probe needs a 2-slot state cone")
    d = states.kind.slot_dim
    lead = fixed_state.grid() @ swap_kernel(states.kind, fixed_effect.coeffs)
    grids = states.rays.reshape(len(states), d, d)
    outs = np.einsum("ij,ajk->aik", lead, grids).reshape(len(states), -1)
    scales = np.einsum("ad,ad->a", outs, states.rays)  # rays are unit vectors
    resid = outs - scales[:, None] * states.rays
    rel = np.linalg.norm(resid, axis=1) / np.maximum(np.linalg.norm(outs, axis=1), 1e-300)
    bad = np.flatnonzero(rel > tol)
    failures = [AuditFailure((int(i), -1, -1),
                             MembershipResult(False, float(rel[i])))
                for i in bad]
    scale = None
    notes = []
    if not len(bad):
        spread = float(np.max(scales) - np.min(scales))
        if spread <= tol * max(1.0, abs(float(np.mean(scales)))):
            scale = float(np.mean(scales))
        else:
            notes.append(f"proportional per generator but scales spread {spread:.3e}")
    return SwapAudit(mode="stability", n_triples=len(states), n_unique=len(states),
                     n_zero=0, failures=failures, stability_scale=scale, notes=notes,
                     seconds=time.perf_counter() - t0)
