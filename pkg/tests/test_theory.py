import numpy as np
import numpy.testing as npt
import pytest

from gptlab import models
from gptlab.cones import ConeGenerators, cone_equal, cone_subset, membership
from gptlab.swap import ClosurePolicy
from gptlab.tensor import (
    EFFECT,
    STATE,
    CoeffTensor,
    full_pairing,
    pauli_qubit_kind,
    tensor_product,
    unit_effect_tensor,
)
from gptlab.theory import (
    CheckOptions,
    TheorySpec,
    check_consistency,
    correlators,
    derive_unipartite,
    extend_n,
    normalize_states,
    swapped_cone,
    verify_effect_space,
)

KIND = pauli_qubit_kind()
CHECK_IDS = [
    "unit-in-unipartite-effects",
    "positivity-unipartite",
    "positivity-bipartite",
    "permutation-invariance-effects",
    "permutation-invariance-states",
    "unipartite-effect-products",
    "unipartite-state-products",
    "swap-closure",
    "dual-swap-closure",
    "contraction-closure",
]


def octahedron_rays(r=2**0.25, rotate=False):
    vecs = []
    for axis, rr in ((1, r), (2, r), (3, 1.0)):
        for sign in (1, -1):
            v = np.zeros(4)
            v[0] = 1.0
            v[axis] = sign * rr
            vecs.append(0.5 * v)
    arr = np.array(vecs)
    if rotate:
        c = s = np.cos(np.pi / 4)
        rot = np.eye(4)
        rot[1, 1] = rot[2, 2] = c
        rot[2, 1] = s
        rot[1, 2] = -s
        arr = arr @ rot.T
    return arr


def test_derived_unipartite_cones_match_closed_forms(ost):
    states1, effects1 = ost.theory.states1, ost.theory.effects1
    expected_states = ConeGenerators.from_rays(KIND, 1, STATE, "omega",
                                               octahedron_rays())
    expected_effects = ConeGenerators.from_rays(KIND, 1, EFFECT, "rot-omega",
                                                octahedron_rays(rotate=True))
    assert cone_equal(states1, expected_states).equal
    assert cone_equal(effects1, expected_effects).equal


def test_product_theory_marginals():
    # states2 = cone{omega (x) omega} derives states1 = cone{omega}
    omega = CoeffTensor(KIND, 1, 0.5 * np.array([1.0, 2**0.25, 0, 0]))
    unit1 = unit_effect_tensor(KIND, 1)
    spec = TheorySpec(
        KIND,
        ConeGenerators.from_tensors([tensor_product(unit1, unit1)], "p2"),
        ConeGenerators.from_tensors([tensor_product(omega, omega)], "d2"),
        name="tiny")
    states1, _ = derive_unipartite(spec)
    assert len(states1) == 1
    npt.assert_allclose(states1.rays[0], omega.coeffs / np.linalg.norm(omega.coeffs),
                        atol=1e-12)


def test_bell_family_marginals_are_maximally_mixed(ost):
    unit1 = unit_effect_tensor(KIND, 1)
    mask = [t == "entangled" for t in ost.theory.states2.tags]
    for ray in ost.theory.states2.rays[np.array(mask)]:
        g = CoeffTensor(KIND, 2, ray)
        for slot in (0, 1):
            marg = contracted = full = None
            from gptlab.tensor import contract
            marg = contract(g, unit1, [(1 - slot, 0)])
            direction = marg.coeffs / np.linalg.norm(marg.coeffs)
            npt.assert_allclose(direction, [1.0, 0, 0, 0], atol=1e-12)


def test_check_consistency_ost_all_pass(ost):
    report = check_consistency(ost.theory)
    assert report.consistent
    assert [c.check_id for c in report.checks] == CHECK_IDS
    swap_check = report.checks[7]
    assert swap_check.details["triples"] == 52**3
    assert report.checks[8].details["triples"] == 52**3


def test_check_consistency_r1_consistent(ost_r1):
    assert check_consistency(ost_r1.theory).consistent


def test_check_consistency_r12_fails_at_unipartite_positivity():
    broken = models.build_oblate_stabilizer(1.2)
    report = check_consistency(broken.theory)
    assert not report.consistent
    first = report.first_failure()
    assert first.check_id == "positivity-unipartite"
    assert first.tag == "# positivity, unipartite"
    # the most negative pair is reported with the separating effect
    assert first.details["min_value"] < 0
    cert = np.array(first.details["certificate"])
    i, j = first.details["min_pair"]
    state = broken.theory.states1.rays[i]
    assert state @ (KIND.gram @ cert) < 0
    assert membership(broken.theory.effects1, cert).inside


def test_verdict_flips_across_the_stretch_boundary():
    verdicts = {}
    for r in (1.0, 1.1892071, 1.2):
        rep = check_consistency(models.build_oblate_stabilizer(r).theory)
        verdicts[r] = rep.consistent
    assert verdicts[1.0] and verdicts[1.1892071] and not verdicts[1.2]


def test_skip_factorizable_agrees_with_exhaustive(ost):
    exhaustive = check_consistency(ost.theory, CheckOptions(closure=ClosurePolicy()))
    skipping = check_consistency(
        ost.theory, CheckOptions(closure=ClosurePolicy(skip_factorizable=True)))
    assert exhaustive.consistent and skipping.consistent
    ex_triples = exhaustive.checks[7].details["triples"]
    sk_triples = skipping.checks[7].details["triples"]
    assert ex_triples == 52**3
    assert sk_triples < ex_triples  # the factorizable bulk is skipped
    assert any("skipped" in n for n in skipping.checks[7].details["notes"])


def test_extend_small_n(ost):
    effects1, states1 = extend_n(ost.theory, 1, assume_consistent=True)
    assert effects1 is ost.theory.effects1 and states1 is ost.theory.states1
    effects2, states2 = extend_n(ost.theory, 2, assume_consistent=True)
    assert effects2 is ost.theory.effects2 and states2 is ost.theory.states2


def test_extend_three_contains_all_products_and_permutations(ost, rng):
    effects3, states3 = extend_n(ost.theory, 3, assume_consistent=True)
    assert states3.n_slots == 3
    from gptlab.tensor import permute_slots
    d1 = ost.theory.states1
    d2 = ost.theory.states2
    for _ in range(12):
        a = CoeffTensor(KIND, 1, d1.rays[int(rng.integers(len(d1)))])
        b = CoeffTensor(KIND, 2, d2.rays[int(rng.integers(len(d2)))])
        g = tensor_product(a, b)
        for perm in ((0, 1, 2), (1, 0, 2), (2, 1, 0), (0, 2, 1)):
            assert membership(states3, permute_slots(g, perm).coeffs).inside


def test_extend_three_permutation_invariant(ost):
    effects3, states3 = extend_n(ost.theory, 3, assume_consistent=True)
    import itertools
    d = KIND.slot_dim
    for cone in (effects3, states3):
        grids = cone.rays.reshape(len(cone), d, d, d)
        for perm in itertools.permutations(range(3)):
            axes = (0,) + tuple(p + 1 for p in perm)
            permuted = ConeGenerators.from_rays(
                KIND, 3, cone.side, "perm",
                grids.transpose(axes).reshape(len(cone), -1))
            assert cone_equal(cone, permuted).equal


def test_extend_four_spot_check(ost, rng):
    effects4, states4 = extend_n(ost.theory, 4, assume_consistent=True)
    assert states4.n_slots == 4
    from gptlab.tensor import permute_slots
    d2 = ost.theory.states2
    for _ in range(3):
        a = CoeffTensor(KIND, 2, d2.rays[int(rng.integers(len(d2)))])
        b = CoeffTensor(KIND, 2, d2.rays[int(rng.integers(len(d2)))])
        g = tensor_product(a, b)
        perm = tuple(int(p) for p in rng.permutation(4))
        assert membership(states4, permute_slots(g, perm).coeffs).inside


def test_extend_generator_cap(ost):
    with pytest.raises(ValueError, match="cap"):
        extend_n(ost.theory, 6, assume_consistent=True)


def test_extend_rejects_inconsistent_theory():
    broken = models.build_oblate_stabilizer(1.2)
    with pytest.raises(ValueError, match="inconsistent"):
        extend_n(broken.theory, 3)


def test_correlators_ost(ost):
    corrs = correlators(ost.theory)
    assert len(corrs) == 10
    unit = unit_effect_tensor(KIND, 1)
    coeff_rows = np.array([c.coeffs for c in corrs])
    npt.assert_allclose(coeff_rows[0], -unit.coeffs, atol=1e-12)  # from 0
    npt.assert_allclose(coeff_rows[1], unit.coeffs, atol=1e-12)   # from 1
    # the stretched x-effect rotated by pi/4 gives the stretched rotated
    # correlator r R sigma_1 R^dagger
    r = ost.stretch
    expected = models.pauli_coeffs(
        r * models.conjugate(models.rotation_eighth(), models.PAULI[1]), EFFECT)
    assert any(np.allclose(row, expected.coeffs, atol=1e-12) for row in coeff_rows)


def test_correlators_require_effect_space(ost):
    spec = TheorySpec(KIND, ost.theory.effects2, ost.theory.states2, None,
                      name="bare")
    derive_unipartite(spec)
    with pytest.raises(ValueError, match="effect-space"):
        correlators(spec)


def test_effect_space_verification(ost):
    rep = verify_effect_space(ost.theory)
    assert rep["passed"]
    # negation closure at generator level: unit - g stays in the listed hull
    unit = unit_effect_tensor(KIND, 1)
    pts = ost.theory.effect_space_points
    for p in pts:
        neg = unit - p
        assert membership(ost.theory.effects1, neg.coeffs).inside


def test_effect_space_detects_bad_point(ost):
    bad = CoeffTensor(KIND, 1, np.array([0.5, 0.75, 0, 0]), EFFECT)
    spec = TheorySpec(KIND, ost.theory.effects2, ost.theory.states2,
                      list(ost.theory.effect_space_points) + [bad], name="bad")
    derive_unipartite(spec)
    rep = verify_effect_space(spec)
    assert not rep["passed"]


def test_normalize_states(ost):
    tensors, excluded = normalize_states(ost.theory.states2)
    assert not excluded
    assert len(tensors) == 52
    unit2 = unit_effect_tensor(KIND, 2)
    for t in tensors:
        assert abs(full_pairing(t, unit2) - 1.0) < 1e-12
    # scaling a generator changes nothing after normalization
    phi = models.pauli_coeffs(models.twisted_bell_projector(0, 1))
    cone = ConeGenerators.from_tensors([7.3 * phi], "scaled")
    out, _ = normalize_states(cone)
    npt.assert_allclose(out[0].coeffs, phi.coeffs, atol=1e-12)


def test_swapped_cone_is_involution(ost):
    once = swapped_cone(ost.theory.states2)
    twice = swapped_cone(once)
    npt.assert_array_equal(twice.rays, ost.theory.states2.rays)
