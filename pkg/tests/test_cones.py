import numpy as np
import numpy.testing as npt
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from gptlab.cones import (
    ConeGenerators,
    MembershipCapError,
    cone_equal,
    cone_subset,
    membership,
    minimal_tensor_product,
    nnls,
    pairwise_positivity,
    prune_redundant,
    symmetrize,
)
from gptlab.tensor import EFFECT, STATE, CoeffTensor, pauli_qubit_kind, tensor_product

KIND = pauli_qubit_kind()
STRETCH = 2**0.25


def octahedron_cone(r=STRETCH, side=STATE, rotate=False):
    # built by hand so cone tests stay independent of the model constructors
    vecs = []
    for axis, rr in ((1, r), (2, r), (3, 1.0)):
        for sign in (1, -1):
            v = np.zeros(4)
            v[0] = 1.0
            v[axis] = sign * rr
            vecs.append(0.5 * v)
    arr = np.array(vecs)
    if rotate:
        c = np.cos(np.pi / 4)
        s = np.sin(np.pi / 4)
        rot = np.eye(4)
        rot[1, 1] = rot[2, 2] = c
        rot[2, 1] = s
        rot[1, 2] = -s
        arr = arr @ rot.T
    return ConeGenerators.from_rays(KIND, 1, side, "octahedron", arr)


# ---------------------------------------------------------------------------
# the NNLS engine against the scipy oracle
# ---------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_nnls_matches_scipy(seed):
    # scipy's rewritten nnls can report a stale rnorm (and a suboptimal
    # point) on duplicated columns, so compare against the recomputed
    # residual of its solution and assert the exact KKT conditions, which
    # certify global optimality for this convex problem.
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 12))
    k = int(rng.integers(1, 25))
    A = rng.normal(size=(d, k))
    if k > 2 and rng.random() < 0.4:
        A[:, -1] = A[:, 0]  # duplicated column
    if rng.random() < 0.3:
        A[:, : k // 2 + 1] = np.round(A[:, : k // 2 + 1])  # rank drops
    b = rng.normal(size=d)
    w, resid, _ = nnls(A, b)
    w_ref, _ = scipy.optimize.nnls(A, b)
    r_ref = np.linalg.norm(A @ w_ref - b)
    scale = max(1.0, np.linalg.norm(b))
    assert np.all(w >= 0)
    assert np.linalg.norm(resid) <= r_ref + 1e-9 * scale
    grad = A.T @ resid
    assert grad.max() <= 1e-8 * scale
    if (w > 0).any():
        assert np.abs(grad[w > 0]).max() <= 1e-8 * scale


def test_nnls_iteration_cap():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(8, 12))
    b = rng.normal(size=8)
    with pytest.raises(MembershipCapError):
        nnls(A, b, max_iter=1)


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------

def test_generator_is_inside():
    cone = octahedron_cone()
    res = membership(cone, cone.rays[2])
    assert res.inside and res.residual < 1e-12
    assert res.certificate is None


def test_conic_combination_inside():
    cone = octahedron_cone()
    x = 0.3 * cone.rays[0] + 1.7 * cone.rays[3]
    res = membership(cone, x)
    assert res.inside
    npt.assert_allclose(cone.rays.T @ res.weights, x, atol=1e-9)


def test_stretched_ray_outside_with_certificate():
    cone = octahedron_cone()
    query = 0.5 * np.array([1.0, 1.3, 0.0, 0.0])  # beyond the 2**(1/4) extent
    res = membership(cone, query)
    assert not res.inside
    cert = res.certificate
    assert cert is not None
    assert cert @ query > 0
    assert (cone.rays @ cert).max() <= 1e-9


def test_membership_scale_invariance():
    cone = octahedron_cone()
    inside = 0.2 * cone.rays[0] + cone.rays[4]
    outside = np.array([0.5, 0.65, 0.0, 0.0])
    for c in (1e-3, 1.0, 1e3):
        assert membership(cone, c * inside).inside
        assert not membership(cone, c * outside).inside


def test_zero_query_and_empty_cone():
    cone = octahedron_cone()
    res = membership(cone, np.zeros(4))
    assert res.inside and res.residual == 0.0
    empty = ConeGenerators.empty(KIND, 1, STATE)
    assert membership(empty, np.zeros(4)).inside
    res = membership(empty, np.array([1.0, 0, 0, 0]))
    assert not res.inside and res.certificate is not None


def test_farkas_soundness_random(rng):
    cone = octahedron_cone()
    for _ in range(200):
        q = rng.normal(size=4)
        res = membership(cone, q)
        if res.inside:
            assert res.certificate is None
            npt.assert_allclose(cone.rays.T @ res.weights, q,
                                atol=1e-9 * max(1.0, np.linalg.norm(q)))
        else:
            assert res.certificate @ q > 0
            assert (cone.rays @ res.certificate).max() <= 1e-9


def test_membership_validation():
    cone = octahedron_cone()
    with pytest.raises(ValueError):
        membership(cone, np.zeros(5))
    with pytest.raises(ValueError):
        membership(cone, cone.rays[0], tol=-1.0)


def test_zero_generator_rejected():
    with pytest.raises(ValueError, match="zero"):
        ConeGenerators.from_rays(KIND, 1, STATE, "bad",
                                 np.array([[1.0, 0, 0, 0], [0.0, 0, 0, 0]]))


# ---------------------------------------------------------------------------
# subset / equality / products / symmetrization
# ---------------------------------------------------------------------------

def test_cone_subset_self_and_reversed():
    cone = octahedron_cone()
    rep = cone_subset(cone, cone)
    assert rep.passed and rep.checked == 6
    reversed_cone = ConeGenerators.from_rays(KIND, 1, STATE, "rev", cone.rays[::-1])
    assert cone_equal(cone, reversed_cone).equal


def test_cone_subset_failure_certificate():
    cone = octahedron_cone()
    wide = ConeGenerators.from_rays(KIND, 1, STATE, "wide",
                                    np.array([[0.5, 0.65, 0.0, 0.0]]))
    rep = cone_subset(wide, cone)
    assert not rep.passed
    idx, res = rep.failures[0]
    assert idx == 0 and res.certificate is not None


def test_state_vs_effect_cone_not_equal():
    states = octahedron_cone()
    effects = octahedron_cone(side=STATE, rotate=True)
    rep = cone_equal(states, effects)
    assert not rep.equal


def test_minimal_tensor_product_counts_and_factorization(rng):
    a = octahedron_cone()
    b = octahedron_cone(rotate=True)
    prod = minimal_tensor_product(a, b)
    assert len(prod) == 36
    assert prod.n_slots == 2
    # pairing factorizes slot by slot on random generator pairs
    from gptlab.tensor import full_pairing
    for _ in range(20):
        i, j = int(rng.integers(36)), int(rng.integers(36))
        lhs = full_pairing(prod.tensor(i), CoeffTensor(KIND, 2, prod.rays[j], EFFECT))
        (ia, ib), (ja, jb) = divmod(i, 6), divmod(j, 6)
        first = full_pairing(a.tensor(ia), CoeffTensor(KIND, 1, a.rays[ja], EFFECT))
        second = full_pairing(b.tensor(ib), CoeffTensor(KIND, 1, b.rays[jb], EFFECT))
        assert abs(lhs - first * second) < 1e-12 * max(1.0, abs(lhs))


def test_tensor_with_unit_ray_embeds():
    a = octahedron_cone()
    unit_cone = ConeGenerators.from_rays(KIND, 1, STATE, "unit",
                                         np.array([[1.0, 0, 0, 0]]))
    prod = minimal_tensor_product(a, unit_cone)
    assert len(prod) == len(a)
    for i in range(len(a)):
        expected = np.kron(a.rays[i], [1.0, 0, 0, 0])
        npt.assert_allclose(prod.rays[i], expected, atol=1e-15)


def test_symmetrize_idempotent_and_pairs():
    a = octahedron_cone()
    g = a.tensor(0)
    h = a.tensor(2)
    pair = ConeGenerators.from_tensors([tensor_product(g, h)], "gh")
    sym = symmetrize(pair)
    assert len(sym) == 2
    assert cone_equal(sym, symmetrize(sym)).equal
    both = ConeGenerators.from_tensors(
        [tensor_product(g, h), tensor_product(h, g)], "hg")
    assert cone_equal(sym, both).equal


def test_symmetrize_already_symmetric():
    a = octahedron_cone()
    prod = minimal_tensor_product(a, a)
    sym = symmetrize(prod)
    assert cone_equal(sym, prod).equal


def test_pairwise_positivity_boundary():
    states = octahedron_cone(STRETCH)
    effects = octahedron_cone(STRETCH, side=EFFECT, rotate=True)
    rep = pairwise_positivity(states, effects)
    assert rep.passed
    assert abs(rep.min_value) < 1e-9  # the 3pi/4 pairs vanish exactly


def test_pairwise_positivity_violation():
    states = octahedron_cone(1.3)
    effects = octahedron_cone(1.3, side=EFFECT, rotate=True)
    rep = pairwise_positivity(states, effects)
    assert not rep.passed
    # oracle: most negative physical pairing is (1 - 1.69/sqrt(2))/2 on the
    # 3pi/4 pair; normalization only rescales, the sign survives
    assert rep.min_value < 0
    expected = 0.5 * (1 - 1.3**2 / np.sqrt(2))
    assert expected < 0


def test_unit_effect_pairs_to_one_on_normalized_states():
    states = octahedron_cone()
    unit = ConeGenerators.from_rays(KIND, 1, EFFECT, "unit",
                                    np.array([[1.0, 0, 0, 0]]))
    from gptlab.theory import normalize_states
    normalized, excluded = normalize_states(states)
    assert not excluded
    from gptlab.tensor import full_pairing, unit_effect_tensor
    for s in normalized:
        assert abs(full_pairing(s, unit_effect_tensor(KIND, 1)) - 1.0) < 1e-12


def test_dedupe_and_prune():
    a = octahedron_cone()
    doubled = ConeGenerators.from_rays(KIND, 1, STATE, "dup",
                                       np.vstack([a.rays, a.rays[0]]))
    assert len(doubled.deduped()) == 6
    # an interior ray is pruned away
    interior = np.vstack([a.rays, [[1.0, 0, 0, 0]]])
    cone = ConeGenerators.from_rays(KIND, 1, STATE, "interior", interior)
    pruned = prune_redundant(cone)
    assert len(pruned) == 6
    assert cone_equal(pruned, a).equal
