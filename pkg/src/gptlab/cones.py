"""Finitely generated convex cones with numerically robust membership tests.

Membership of ``x`` in cone(G) is decided by solving the nonnegative
least-squares problem ``min_{w >= 0} ||G w - x||`` with a Lawson-Hanson
active-set iteration. The optimal residual gives both the primal answer
(weights, when the relative residual is at or below tolerance) and an
approximate Farkas certificate (the residual direction is nonpositive on
every generator but positive on the query).

Generators are stored ray-normalized (unit Euclidean norm) with their
original scales kept for reporting; membership is scale-invariant.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .tensor import EFFECT, STATE, CoeffTensor, SystemKind, gram_power

__all__ = [
    "DEFAULT_TOL",
    "default_tol",
    "MembershipCapError",
    "MembershipResult",
    "ConeGenerators",
    "nnls",
    "membership",
    "cone_subset",
    "cone_equal",
    "minimal_tensor_product",
    "symmetrize",
    "pairwise_positivity",
    "prune_redundant",
    "SubsetReport",
    "EqualReport",
    "PositivityReport",
]

DEFAULT_TOL = 1e-9

#: norm below which a vector counts as zero (zero is a member of every cone)
ZERO_NORM = 1e-13


def default_tol() -> float:
    """Library-wide relative tolerance; GPTLAB_TOL overrides the 1e-9 default."""
    return float(os.environ.get("GPTLAB_TOL", DEFAULT_TOL))


class MembershipCapError(RuntimeError):
    """The active-set iteration exceeded its cap; never silently truncated."""


def nnls(matrix: np.ndarray, target: np.ndarray, *, kkt_tol: float | None = None,
         max_iter: int | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Solve ``min_{w >= 0} ||matrix @ w - target||`` by Lawson-Hanson.

    Returns ``(weights, residual_vector, iterations)``. The passive-set
    least-squares subproblems use an SVD solve, so duplicate or nearly
    parallel columns are handled. Raises :class:`MembershipCapError` when
    the iteration cap is exceeded.
    """
    A = np.asarray(matrix, dtype=float)
    b = np.asarray(target, dtype=float).ravel()
    d, k = A.shape
    if b.shape != (d,):
        raise ValueError(f"target must have length {d}")
    if max_iter is None:
        max_iter = 3 * k + 200
    scale = max(1.0, float(np.linalg.norm(b)))
    if kkt_tol is None:
        kkt_tol = 1e-12 * scale
    drop_tol = 1e-14 * scale

    w = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    resid = b.copy()
    iterations = 0
    while True:
        grad = A.T @ resid
        grad[passive] = -np.inf
        j = int(np.argmax(grad))
        if not np.isfinite(grad[j]) or grad[j] <= kkt_tol:
            break
        passive[j] = True
        while True:
            iterations += 1
            if iterations > max_iter:
                raise MembershipCapError(
                    f"active-set iteration cap {max_iter} exceeded "
                    f"(dim {d}, {k} generators)"
                )
            idx = np.flatnonzero(passive)
            sol, *_ = np.linalg.lstsq(A[:, idx], b, rcond=None)
            if np.all(sol >= -drop_tol):
                w = np.zeros(k)
                w[idx] = np.maximum(sol, 0.0)
                break
            # Step back along the segment to the subproblem solution until
            # the first coordinate hits zero, then drop it from the set.
            cur = w[idx]
            neg = sol < -drop_tol
            denom = cur[neg] - sol[neg]
            alphas = np.where(denom > 0, cur[neg] / denom, 0.0)
            alpha = float(np.min(alphas))
            stepped = cur + alpha * (sol - cur)
            stepped[neg & (stepped <= drop_tol)] = 0.0
            w = np.zeros(k)
            w[idx] = np.maximum(stepped, 0.0)
            passive = w > 0.0
            if not passive.any():
                break
        resid = b - A @ w
    return w, resid, iterations


@dataclass(frozen=True)
class MembershipResult:
    """Outcome of one cone-membership query.

    When ``inside`` is true, ``weights`` reconstruct the query from the
    stored (ray-normalized) generators within the tolerance. Otherwise
    ``certificate`` is a unit vector with ``certificate . query > 0`` and
    ``certificate . g <= tol`` for every generator (approximate Farkas
    separation; its slack degrades only for queries within ~tol of the
    boundary, where the inside/outside call itself is ambiguous).
    """

    inside: bool
    residual: float
    weights: np.ndarray | None = None
    certificate: np.ndarray | None = None
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class ConeGenerators:
    """A finitely generated convex cone, stored as ray-normalized generators.

    ``rays`` has one unit-norm generator per row; ``scales`` keeps the
    original norms for reporting. ``tags`` is an optional per-generator
    provenance tuple (e.g. "product"/"entangled") used by closure audits.
    An empty generator list is the valid cone {0}.
    """

    kind: SystemKind
    n_slots: int
    side: str
    name: str
    rays: np.ndarray
    scales: np.ndarray
    tags: tuple[str, ...] | None = None

    def __post_init__(self):
        rays = np.ascontiguousarray(np.asarray(self.rays, dtype=float))
        if rays.ndim != 2 or rays.shape[1] != self.dim:
            raise ValueError(
                f"rays must be (k, {self.dim}) for {self.n_slots} slots, got {rays.shape}"
            )
        norms = np.linalg.norm(rays, axis=1)
        if rays.shape[0] and not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("rays must be unit-normalized")
        rays.flags.writeable = False
        object.__setattr__(self, "rays", rays)
        scales = np.ascontiguousarray(np.asarray(self.scales, dtype=float))
        scales.flags.writeable = False
        object.__setattr__(self, "scales", scales)
        if self.tags is not None and len(self.tags) != len(rays):
            raise ValueError("tags must match generator count")

    @property
    def dim(self) -> int:
        return self.kind.slot_dim**self.n_slots

    def __len__(self) -> int:
        return self.rays.shape[0]

    @classmethod
    def from_tensors(cls, tensors, name: str, tags=None) -> "ConeGenerators":
        """Build a cone from CoeffTensors; zero vectors are rejected."""
        tensors = list(tensors)
        if not tensors:
            raise ValueError("use from_rays for the empty cone {0}")
        kind, n_slots, side = tensors[0].kind, tensors[0].n_slots, tensors[0].side
        for t in tensors:
            if t.kind != kind or t.n_slots != n_slots or t.side != side:
                raise ValueError("all generators must share kind, slot count, and side")
        arr = np.stack([t.coeffs for t in tensors])
        return cls.from_rays(kind, n_slots, side, name, arr, tags=tags)

    @classmethod
    def from_rays(cls, kind, n_slots, side, name, array, tags=None) -> "ConeGenerators":
        array = np.asarray(array, dtype=float).reshape(-1, kind.slot_dim**n_slots)
        norms = np.linalg.norm(array, axis=1)
        if np.any(norms <= ZERO_NORM):
            raise ValueError("zero vectors cannot generate a ray")
        if array.shape[0] and np.abs(norms - 1.0).max() <= 1e-12:
            # already ray-normalized: keep the exact bits (round-trip
            # stability of serialized cones)
            rays, norms = array, np.ones(array.shape[0])
        else:
            rays = array / norms[:, None]
        return cls(kind, n_slots, side, name, rays, norms,
                   tags=tuple(tags) if tags is not None else None)

    @classmethod
    def empty(cls, kind, n_slots, side, name="zero") -> "ConeGenerators":
        dim = kind.slot_dim**n_slots
        return cls(kind, n_slots, side, name, np.zeros((0, dim)), np.zeros(0))

    def tensor(self, i: int) -> CoeffTensor:
        """Generator ``i`` as a CoeffTensor (ray-normalized)."""
        return CoeffTensor(self.kind, self.n_slots, self.rays[i], self.side)

    def tensors(self):
        return [self.tensor(i) for i in range(len(self))]

    def renamed(self, name: str) -> "ConeGenerators":
        return ConeGenerators(self.kind, self.n_slots, self.side, name,
                              self.rays, self.scales, self.tags)

    def with_tags(self, tags) -> "ConeGenerators":
        return ConeGenerators(self.kind, self.n_slots, self.side, self.name,
                              self.rays, self.scales, tuple(tags))

    def deduped(self, decimals: int = 10) -> "ConeGenerators":
        """Drop repeated rays (first occurrence wins, original order kept)."""
        keep = _unique_row_indices(self.rays, decimals)
        tags = tuple(self.tags[i] for i in keep) if self.tags is not None else None
        return ConeGenerators(self.kind, self.n_slots, self.side, self.name,
                              self.rays[keep], self.scales[keep], tags)


def _unique_row_indices(rows: np.ndarray, decimals: int = 10) -> np.ndarray:
    """Indices of first occurrences of distinct rows (rounded comparison)."""
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=int)
    key = np.round(rows, decimals) + 0.0  # normalize -0.0
    _, first = np.unique(key, axis=0, return_index=True)
    return np.sort(first)


def membership(cone: ConeGenerators, x: CoeffTensor | np.ndarray,
               tol: float | None = None) -> MembershipResult:
    """Decide ``x in cone`` at relative tolerance ``tol`` (default 1e-9)."""
    if isinstance(x, CoeffTensor):
        if x.kind != cone.kind or x.n_slots != cone.n_slots:
            raise ValueError("query does not match cone shape")
        query = x.coeffs
    else:
        query = np.asarray(x, dtype=float).ravel()
        if query.shape != (cone.dim,):
            raise ValueError(f"query must have length {cone.dim}")
    if tol is None:
        tol = default_tol()
    if tol <= 0:
        raise ValueError("tol must be positive")

    qnorm = float(np.linalg.norm(query))
    if qnorm <= ZERO_NORM:
        return MembershipResult(True, 0.0, weights=np.zeros(len(cone)))
    if len(cone) == 0:
        cert = query / qnorm
        return MembershipResult(False, 1.0, certificate=cert)

    G = cone.rays.T  # (dim, k)
    w, resid, iters = nnls(G, query)
    rel = float(np.linalg.norm(resid)) / max(1.0, qnorm)
    if rel <= tol:
        return MembershipResult(True, rel, weights=w, iterations=iters)
    cert = resid / np.linalg.norm(resid)
    # KKT cleanup: clip the certificate's tiny positive overlaps with
    # generators (finite termination noise) out of the reported vector.
    overlaps = cone.rays @ cert
    bad = overlaps > 0
    if bad.any() and float(overlaps[bad].max()) < 1e-6:
        cert = cert - cone.rays[bad].T @ overlaps[bad]
        n = np.linalg.norm(cert)
        if n > ZERO_NORM:
            cert = cert / n
    return MembershipResult(False, rel, certificate=cert, iterations=iters)


def _map_indexed(fn, items, threads: int = 1):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


@dataclass
class SubsetReport:
    passed: bool
    checked: int
    failures: list[tuple[int, MembershipResult]] = field(default_factory=list)

    def __str__(self):
        if self.passed:
            return f"subset holds ({self.checked} generators)"
        ids = [i for i, _ in self.failures]
        return f"subset fails for generators {ids} of {self.checked}"


def cone_subset(a: ConeGenerators, b: ConeGenerators, tol: float | None = None,
                threads: int = 1) -> SubsetReport:
    """Is cone(a) a subset of cone(b)? Tests every generator of ``a``."""
    if a.kind != b.kind or a.n_slots != b.n_slots:
        raise ValueError("cone shape mismatch")
    results = _map_indexed(lambda i: membership(b, a.rays[i], tol),
                           list(range(len(a))), threads)
    failures = [(i, r) for i, r in enumerate(results) if not r.inside]
    return SubsetReport(not failures, len(a), failures)


@dataclass
class EqualReport:
    equal: bool
    forward: SubsetReport
    backward: SubsetReport


def cone_equal(a: ConeGenerators, b: ConeGenerators, tol: float | None = None,
               threads: int = 1) -> EqualReport:
    """Mutual cone_subset."""
    fwd = cone_subset(a, b, tol, threads)
    bwd = cone_subset(b, a, tol, threads)
    return EqualReport(fwd.passed and bwd.passed, fwd, bwd)


def minimal_tensor_product(a: ConeGenerators, b: ConeGenerators,
                           name: str | None = None) -> ConeGenerators:
    """Conal hull of pairwise tensor products of generators (a-major order)."""
    if a.kind != b.kind:
        raise ValueError("kind mismatch")
    if a.side != b.side:
        raise ValueError("side mismatch")
    ka, kb = len(a), len(b)
    prods = np.einsum("ai,bj->abij", a.rays, b.rays).reshape(ka * kb, -1)
    scales = np.outer(a.scales, b.scales).ravel()
    tags = None
    if a.tags is not None and b.tags is not None:
        tags = tuple(
            "product" if ta == tb == "product" else "entangled"
            for ta in a.tags for tb in b.tags
        )
    return ConeGenerators(a.kind, a.n_slots + b.n_slots, a.side,
                          name or f"({a.name})*({b.name})", prods, scales, tags)


def symmetrize(cone: ConeGenerators, name: str | None = None) -> ConeGenerators:
    """Close the generator list under all slot permutations, then dedupe."""
    n = cone.n_slots
    d = cone.kind.slot_dim
    blocks = []
    tag_blocks = []
    grids = cone.rays.reshape((len(cone),) + (d,) * n)
    for perm in itertools.permutations(range(n)):
        axes = (0,) + tuple(p + 1 for p in perm)
        blocks.append(grids.transpose(axes).reshape(len(cone), -1))
        if cone.tags is not None:
            tag_blocks.extend(cone.tags)
    rays = np.concatenate(blocks, axis=0)
    scales = np.tile(cone.scales, rays.shape[0] // max(len(cone), 1))
    tags = tuple(tag_blocks) if cone.tags is not None else None
    out = ConeGenerators(cone.kind, n, cone.side, name or f"sym({cone.name})",
                         rays, scales, tags)
    return out.deduped()


@dataclass
class PositivityReport:
    passed: bool
    min_value: float
    min_pair: tuple[int, int]
    violations: list[tuple[int, int, float]] = field(default_factory=list)


def pairwise_positivity(states: ConeGenerators, effects: ConeGenerators,
                        tol: float | None = None) -> PositivityReport:
    """Full pairing of every (state, effect) generator pair must be >= -tol.

    By bilinearity and conic generation, positivity on generator pairs is
    equivalent to positivity on the full cones.
    """
    if states.kind != effects.kind or states.n_slots != effects.n_slots:
        raise ValueError("cone shape mismatch")
    if tol is None:
        tol = default_tol()
    gram_n = gram_power(states.kind, states.n_slots)
    table = states.rays @ gram_n @ effects.rays.T
    flat = int(np.argmin(table))
    i, j = np.unravel_index(flat, table.shape)
    violations = [
        (int(a), int(b), float(table[a, b]))
        for a, b in zip(*np.where(table < -tol))
    ]
    return PositivityReport(not violations, float(table[i, j]), (int(i), int(j)),
                            violations)


def prune_redundant(cone: ConeGenerators, tol: float | None = None) -> ConeGenerators:
    """Drop generators that are conic combinations of the others.

    The returned cone is cone_equal to the input; only the listing shrinks.
    """
    # One pass suffices: a generator kept against the full remaining list
    # is, a fortiori, not a combination of any later subset of it.
    keep = list(range(len(cone)))
    for i in list(keep):
        others = [j for j in keep if j != i]
        if not others:
            continue
        sub = ConeGenerators(cone.kind, cone.n_slots, cone.side, cone.name,
                             cone.rays[others], cone.scales[others])
        if membership(sub, cone.rays[i], tol).inside:
            keep.remove(i)
    tags = tuple(cone.tags[i] for i in keep) if cone.tags is not None else None
    return ConeGenerators(cone.kind, cone.n_slots, cone.side, cone.name,
                          cone.rays[keep], cone.scales[keep], tags)
