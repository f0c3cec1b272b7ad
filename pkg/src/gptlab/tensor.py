"""Coefficient tensors for states and effects over declared local bases.

States and effects share one real coordinate space per system kind. An
n-slot object is a flat vector of length ``slot_dim ** n`` stored
slot-major (slot 0 most significant), i.e. the Kronecker layout:
``tensor_product`` is an outer product and ``np.kron`` on coefficient
vectors. Pairing a state with an effect contracts every paired slot
through the kind's gram matrix; for the qubit kind (half-trace Pauli
coordinates, gram = 2*I) the full pairing equals the trace inner product
of the reconstructed matrices.

All values are immutable after construction and every operation is pure.
"""

from __future__ import annotations

import string
import warnings
from dataclasses import dataclass
from functools import reduce

import numpy as np

__all__ = [
    "STATE",
    "EFFECT",
    "SystemKind",
    "CoeffTensor",
    "pauli_qubit_kind",
    "gbit_kind",
    "fused_kind",
    "gram_power",
    "tensor_product",
    "permute_slots",
    "contract",
    "full_pairing",
    "unit_effect_tensor",
]

STATE = "state"
EFFECT = "effect"


def _readonly(a, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class SystemKind:
    """A local system type: slot dimension, pairing gram matrix, unit effect.

    ``gram`` defines the bilinear pairing between one state slot and one
    effect slot; it must be symmetric and invertible.
    """

    label: str
    slot_dim: int
    gram: np.ndarray
    unit_effect: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gram", _readonly(self.gram))
        object.__setattr__(self, "unit_effect", _readonly(self.unit_effect))
        d = self.slot_dim
        if d <= 0:
            raise ValueError("slot_dim must be positive")
        if self.gram.shape != (d, d):
            raise ValueError(f"gram must be {d}x{d}, got {self.gram.shape}")
        if not np.allclose(self.gram, self.gram.T, atol=1e-12):
            raise ValueError("gram must be symmetric")
        if abs(np.linalg.det(self.gram)) < 1e-12:
            raise ValueError("gram must be invertible")
        if self.unit_effect.shape != (d,):
            raise ValueError("unit_effect must have length slot_dim")

    def __eq__(self, other):
        if not isinstance(other, SystemKind):
            return NotImplemented
        return (
            self.label == other.label
            and self.slot_dim == other.slot_dim
            and np.array_equal(self.gram, other.gram)
            and np.array_equal(self.unit_effect, other.unit_effect)
        )

    def __hash__(self):
        return hash((self.label, self.slot_dim))

    def __repr__(self):
        return f"SystemKind({self.label!r}, slot_dim={self.slot_dim})"


def pauli_qubit_kind() -> SystemKind:
    """Qubit systems in half-trace Pauli coordinates: c_mu = tr(M sigma_mu)/2.

    tr(sigma_mu sigma_nu) = 2 delta_{mu nu}, so the gram matrix is 2*I and
    the unit effect (the identity matrix) is (1, 0, 0, 0).
    """
    return SystemKind("pauli-qubit", 4, 2.0 * np.eye(4), np.array([1.0, 0, 0, 0]))


def gbit_kind() -> SystemKind:
    """Generalised bit: states (1, s1, s2), effects (e0, e1, e2), dot pairing."""
    return SystemKind("gbit", 3, np.eye(3), np.array([1.0, 0, 0]))


def fused_kind(base: SystemKind, copies: int, label: str | None = None) -> SystemKind:
    """Fuse ``copies`` degrees of freedom of ``base`` into one slot.

    The fused slot index is the row-major multi-index over the copies, the
    gram is the Kronecker power, and the unit effect the Kronecker power of
    the base unit.
    """
    gram = reduce(np.kron, [base.gram] * copies)
    unit = reduce(np.kron, [base.unit_effect] * copies)
    name = label or f"{base.label}^{copies}"
    return SystemKind(name, base.slot_dim**copies, gram, unit)


def gram_power(kind: SystemKind, n_slots: int) -> np.ndarray:
    """Gram matrix of the n-slot pairing (Kronecker power of the slot gram)."""
    return reduce(np.kron, [kind.gram] * n_slots)


@dataclass(frozen=True, eq=False)
class CoeffTensor:
    """An n-slot state or effect as a flat real coefficient vector.

    The ``side`` tag is bookkeeping only: both sides live in the same
    coordinate space. Operations warn on unusual side combinations rather
    than failing, except where typing matters for tensor products.
    """

    kind: SystemKind
    n_slots: int
    coeffs: np.ndarray
    side: str = STATE

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _readonly(self.coeffs).ravel())
        if self.n_slots < 1:
            raise ValueError("n_slots must be positive")
        expected = self.kind.slot_dim**self.n_slots
        if self.coeffs.shape != (expected,):
            raise ValueError(
                f"coeffs must have length {expected} for {self.n_slots} slots "
                f"of dim {self.kind.slot_dim}, got {self.coeffs.shape}"
            )
        if self.side not in (STATE, EFFECT):
            raise ValueError(f"side must be {STATE!r} or {EFFECT!r}")

    def grid(self) -> np.ndarray:
        """Coefficients reshaped to one axis per slot (read-only view)."""
        return self.coeffs.reshape((self.kind.slot_dim,) * self.n_slots)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def scaled(self, factor: float) -> "CoeffTensor":
        return CoeffTensor(self.kind, self.n_slots, factor * self.coeffs, self.side)

    def allclose(self, other: "CoeffTensor", tol: float = 1e-12) -> bool:
        return (
            self.kind == other.kind
            and self.n_slots == other.n_slots
            and bool(np.allclose(self.coeffs, other.coeffs, atol=tol, rtol=0.0))
        )

    def _check_compatible(self, other: "CoeffTensor"):
        if self.kind != other.kind:
            raise ValueError("kind mismatch")
        if self.n_slots != other.n_slots:
            raise ValueError("slot count mismatch")

    def __add__(self, other: "CoeffTensor") -> "CoeffTensor":
        self._check_compatible(other)
        side = self.side if self.side == other.side else STATE
        return CoeffTensor(self.kind, self.n_slots, self.coeffs + other.coeffs, side)

    def __sub__(self, other: "CoeffTensor") -> "CoeffTensor":
        self._check_compatible(other)
        side = self.side if self.side == other.side else STATE
        return CoeffTensor(self.kind, self.n_slots, self.coeffs - other.coeffs, side)

    def __neg__(self) -> "CoeffTensor":
        return self.scaled(-1.0)

    def __mul__(self, factor: float) -> "CoeffTensor":
        return self.scaled(float(factor))

    __rmul__ = __mul__

    def __repr__(self):
        return (
            f"CoeffTensor({self.kind.label}, slots={self.n_slots}, "
            f"side={self.side}, norm={self.norm():.6g})"
        )


def unit_effect_tensor(kind: SystemKind, n_slots: int = 1) -> CoeffTensor:
    """The unit effect on ``n_slots`` slots (Kronecker power of the slot unit)."""
    coeffs = reduce(np.kron, [kind.unit_effect] * n_slots)
    return CoeffTensor(kind, n_slots, coeffs, EFFECT)


def tensor_product(a: CoeffTensor, b: CoeffTensor) -> CoeffTensor:
    """Tensor product: slot lists concatenate, coefficients outer-multiply."""
    if a.kind != b.kind:
        raise ValueError("kind mismatch")
    if a.side != b.side:
        raise ValueError(f"side mismatch: {a.side} vs {b.side}")
    return CoeffTensor(a.kind, a.n_slots + b.n_slots, np.kron(a.coeffs, b.coeffs), a.side)


def permute_slots(x: CoeffTensor, perm) -> CoeffTensor:
    """Reorder slots: slot i of the result is slot perm[i] of the input."""
    perm = tuple(int(p) for p in perm)
    if len(perm) != x.n_slots or sorted(perm) != list(range(x.n_slots)):
        raise ValueError(f"perm must be a permutation of range({x.n_slots})")
    out = x.grid().transpose(perm)
    return CoeffTensor(x.kind, x.n_slots, np.ascontiguousarray(out).ravel(), x.side)


def _warn_sides(state: CoeffTensor, effect: CoeffTensor):
    if state.side != STATE or effect.side != EFFECT:
        warnings.warn(
            f"contracting side={state.side!r} against side={effect.side!r}; "
            "the pairing is side-agnostic but this is usually a slot mix-up",
            stacklevel=3,
        )


def contract(state: CoeffTensor, effect: CoeffTensor, slots) -> "CoeffTensor | float":
    """Contract paired (state_slot, effect_slot) pairs through the gram matrix.

    At least one side must be fully consumed: leftover state slots yield a
    conditional state, leftover effect slots a conditional effect, and a
    full pairing on both sides yields a scalar (the canonical pairing, for
    the qubit kind tr(rho e)).
    """
    if state.kind != effect.kind:
        raise ValueError("kind mismatch")
    _warn_sides(state, effect)
    pairs = [(int(s), int(e)) for s, e in slots]
    s_used = [s for s, _ in pairs]
    e_used = [e for _, e in pairs]
    if len(set(s_used)) != len(s_used) or len(set(e_used)) != len(e_used):
        raise ValueError("paired slots must be distinct")
    if any(s < 0 or s >= state.n_slots for s in s_used):
        raise ValueError("state slot out of range")
    if any(e < 0 or e >= effect.n_slots for e in e_used):
        raise ValueError("effect slot out of range")
    s_free = [i for i in range(state.n_slots) if i not in s_used]
    e_free = [j for j in range(effect.n_slots) if j not in e_used]
    if s_free and e_free:
        raise ValueError(
            "contraction must fully consume at least one side "
            "(conditional objects are states or effects, never mixed)"
        )

    letters = iter(string.ascii_lowercase)
    s_idx = [next(letters) for _ in range(state.n_slots)]
    e_idx = [next(letters) for _ in range(effect.n_slots)]
    operands = []
    subs = []
    for s, e in pairs:
        fresh = next(letters)
        operands.append(state.kind.gram)
        subs.append(s_idx[s] + fresh)
        e_idx[e] = fresh
    out_idx = "".join(s_idx[i] for i in s_free) + "".join(e_idx[j] for j in e_free)
    expr = (
        "".join(s_idx)
        + ","
        + ",".join(subs + ["".join(e_idx)])
        + "->"
        + out_idx
    )
    result = np.einsum(expr, state.grid(), *operands, effect.grid(), optimize=True)
    if not out_idx:
        return float(result)
    side = STATE if s_free else EFFECT
    return CoeffTensor(state.kind, len(out_idx), result.ravel(), side)


def full_pairing(state: CoeffTensor, effect: CoeffTensor) -> float:
    """Pair all slots of a state with all slots of an effect."""
    if state.n_slots != effect.n_slots:
        raise ValueError("full pairing needs equal slot counts")
    value = contract(state, effect, [(i, i) for i in range(state.n_slots)])
    assert isinstance(value, float)
    return value
