import itertools

import numpy as np
import numpy.testing as npt
import pytest

from gptlab import models
from gptlab.cones import ConeGenerators, cone_equal, membership
from gptlab.swap import (
    ClosurePolicy,
    closure_audit,
    dual_entanglement_swap,
    entanglement_swap,
    stability_probe,
)
from gptlab.tensor import (
    EFFECT,
    STATE,
    CoeffTensor,
    contract,
    full_pairing,
    pauli_qubit_kind,
    tensor_product,
)

KIND = pauli_qubit_kind()


def bell(mu=0, m=1, side=STATE):
    return models.pauli_coeffs(models.twisted_bell_projector(mu, m), side)


def pauli_pair(mu, nu):
    c = np.zeros((4, 4))
    c[mu, nu] = 1.0
    return CoeffTensor(KIND, 2, c.ravel())


def test_bell_through_bell_scales_every_pauli_pair():
    # swapping sigma_mu (x) sigma_nu through two copies of the twisted Bell
    # state returns a quarter of it, for all 16 basis pairs
    rho = bell()
    e = bell(side=EFFECT)
    for mu in range(4):
        for nu in range(4):
            out = entanglement_swap(rho, e, pauli_pair(mu, nu))
            npt.assert_allclose(out.coeffs, 0.25 * pauli_pair(mu, nu).coeffs,
                                atol=1e-12)


def test_product_middle_factorizes(rng, ost):
    # case 1: product effect splits the swap into two partial contractions
    states = ost.theory.states2
    effects1 = ost.theory.effects1
    for _ in range(10):
        rho = states.tensor(int(rng.integers(len(states))))
        sigma = states.tensor(int(rng.integers(len(states))))
        e1 = CoeffTensor(KIND, 1, effects1.rays[int(rng.integers(len(effects1)))], EFFECT)
        e2 = CoeffTensor(KIND, 1, effects1.rays[int(rng.integers(len(effects1)))], EFFECT)
        out = entanglement_swap(rho, tensor_product(e1, e2), sigma)
        left = contract(rho, e1, [(1, 0)])
        right = contract(sigma, e2, [(0, 0)])
        npt.assert_allclose(out.coeffs, np.kron(left.coeffs, right.coeffs),
                            atol=1e-12)


def test_product_outers_factorize(rng, ost):
    # case 2: product states group the middle into a scalar times a product
    states1 = ost.theory.states1
    effects = ost.theory.effects2

    def rand_state():
        return CoeffTensor(KIND, 1, states1.rays[int(rng.integers(len(states1)))])

    for _ in range(10):
        r1, r2, r3, r4 = (rand_state() for _ in range(4))
        e = effects.tensor(int(rng.integers(len(effects))))
        e = CoeffTensor(KIND, 2, e.coeffs, EFFECT)
        out = entanglement_swap(tensor_product(r1, r2), e, tensor_product(r3, r4))
        scalar = full_pairing(tensor_product(r2, r3), e)
        npt.assert_allclose(out.coeffs, scalar * np.kron(r1.coeffs, r4.coeffs),
                            atol=1e-12)


def test_one_entangled_outer_factorizes(rng, ost):
    # case 3: entangled state, entangled effect, product second state
    states1 = ost.theory.states1
    for _ in range(10):
        r3 = CoeffTensor(KIND, 1, states1.rays[int(rng.integers(len(states1)))])
        r4 = CoeffTensor(KIND, 1, states1.rays[int(rng.integers(len(states1)))])
        phi_s = bell(int(rng.integers(4)), 1)
        phi_e = bell(int(rng.integers(4)), 3, EFFECT)
        out = entanglement_swap(phi_s, phi_e, tensor_product(r3, r4))
        cond_effect = contract(r3, phi_e, [(0, 1)])  # effect left on first slot
        cond_state = contract(phi_s, cond_effect, [(1, 0)])
        npt.assert_allclose(out.coeffs, np.kron(cond_state.coeffs, r4.coeffs),
                            atol=1e-12)


def test_trilinearity(rng):
    tensors = [CoeffTensor(KIND, 2, rng.normal(size=16)) for _ in range(4)]
    e1 = CoeffTensor(KIND, 2, rng.normal(size=16), EFFECT)
    e2 = CoeffTensor(KIND, 2, rng.normal(size=16), EFFECT)
    a, b = rng.normal(size=2)
    lhs = entanglement_swap(a * tensors[0] + b * tensors[1], e1, tensors[2])
    rhs = (a * entanglement_swap(tensors[0], e1, tensors[2])
           + b * entanglement_swap(tensors[1], e1, tensors[2]))
    npt.assert_allclose(lhs.coeffs, rhs.coeffs, atol=1e-12)
    lhs = entanglement_swap(tensors[0], CoeffTensor(KIND, 2, a * e1.coeffs + b * e2.coeffs, EFFECT), tensors[2])
    rhs = (a * entanglement_swap(tensors[0], e1, tensors[2])
           + b * entanglement_swap(tensors[0], e2, tensors[2]))
    npt.assert_allclose(lhs.coeffs, rhs.coeffs, atol=1e-12)
    lhs = entanglement_swap(tensors[0], e1, a * tensors[2] + b * tensors[3])
    rhs = (a * entanglement_swap(tensors[0], e1, tensors[2])
           + b * entanglement_swap(tensors[0], e1, tensors[3]))
    npt.assert_allclose(lhs.coeffs, rhs.coeffs, atol=1e-12)


def test_bell_triple_gives_quarter_bell():
    out = entanglement_swap(bell(), bell(side=EFFECT), bell())
    npt.assert_allclose(out.coeffs, 0.25 * bell().coeffs, atol=1e-12)
    out_d = dual_entanglement_swap(bell(side=EFFECT), bell(), bell(side=EFFECT))
    npt.assert_allclose(out_d.coeffs, 0.25 * bell(side=EFFECT).coeffs, atol=1e-12)


def test_all_bell_triples_return_scaled_family_members(ost):
    # the chain of three family members collapses to a quarter of a single
    # family member, for all 16^3 label triples
    labels = ost.bell_labels
    states = [bell(mu, m) for mu, m in labels]
    effects = [bell(mu, m, EFFECT) for mu, m in labels]
    worst = 0.0
    for a, b, c in itertools.product(range(16), repeat=3):
        out = entanglement_swap(states[a], effects[b], states[c])
        quad = 4.0 * out.coeffs
        dist = min(np.linalg.norm(quad - s.coeffs) for s in states)
        worst = max(worst, dist)
    assert worst <= 1e-9


def test_dual_product_middle(rng, ost):
    states1 = ost.theory.states1
    effects = ost.theory.effects2
    for _ in range(10):
        e = effects.tensor(int(rng.integers(len(effects))))
        e = CoeffTensor(KIND, 2, e.coeffs, EFFECT)
        f = effects.tensor(int(rng.integers(len(effects))))
        f = CoeffTensor(KIND, 2, f.coeffs, EFFECT)
        r2 = CoeffTensor(KIND, 1, states1.rays[int(rng.integers(len(states1)))])
        r3 = CoeffTensor(KIND, 1, states1.rays[int(rng.integers(len(states1)))])
        out = dual_entanglement_swap(e, tensor_product(r2, r3), f)
        left = contract(r2, e, [(0, 1)])
        right = contract(r3, f, [(0, 0)])
        npt.assert_allclose(out.coeffs, np.kron(left.coeffs, right.coeffs), atol=1e-12)


def test_matrix_level_cross_check(rng, ost):
    # coefficient-space swap equals the matrix-level partial-trace swap
    states = ost.theory.states2
    effects = ost.theory.effects2
    for _ in range(100):
        ws = rng.uniform(size=len(states))
        we = rng.uniform(size=len(effects))
        wt = rng.uniform(size=len(states))
        rho = CoeffTensor(KIND, 2, ws @ states.rays)
        e = CoeffTensor(KIND, 2, we @ effects.rays, EFFECT)
        sigma = CoeffTensor(KIND, 2, wt @ states.rays)
        out = entanglement_swap(rho, e, sigma)
        mat = models.matrix_swap(models.matrix_from_coeffs(rho),
                                 models.matrix_from_coeffs(e),
                                 models.matrix_from_coeffs(sigma))
        npt.assert_allclose(out.coeffs, models.pauli_coeffs(mat).coeffs, atol=1e-12)


def test_closure_audit_exhaustive(ost):
    aud = closure_audit(ost.theory.states2, ost.theory.effects2, "swap")
    assert aud.passed
    assert aud.n_triples == 52**3
    aud_d = closure_audit(ost.theory.states2, ost.theory.effects2, "dual")
    assert aud_d.passed
    assert aud_d.n_triples == 52**3


def test_closure_audit_detects_corruption(ost):
    bad_ray = 0.5 * np.kron([1.0, 1.3, 0, 0], [1.0, 1.3, 0, 0])
    states = ost.theory.states2
    corrupted = ConeGenerators.from_rays(
        KIND, 2, STATE, "corrupted",
        np.vstack([states.rays * states.scales[:, None], bad_ray]),
        tags=list(states.tags) + ["product"])
    aud = closure_audit(corrupted, ost.theory.effects2, "swap")
    assert not aud.passed
    triple, result = aud.failures[0].triple, aud.failures[0].result
    assert result.certificate is not None


def test_stability_probe_quarter(ost):
    aud = stability_probe(bell(), bell(side=EFFECT), ost.theory.states2)
    assert aud.passed
    assert abs(aud.stability_scale - 0.25) < 1e-9


def test_stability_probe_product_effect_not_proportional(ost):
    effects1 = ost.theory.effects1
    e = tensor_product(CoeffTensor(KIND, 1, effects1.rays[0], EFFECT),
                       CoeffTensor(KIND, 1, effects1.rays[1], EFFECT))
    aud = stability_probe(bell(), e, ost.theory.states2)
    assert not aud.passed
    assert aud.stability_scale is None


def test_stability_at_cone_level(ost):
    # the convex hull of all swap outputs regenerates the bipartite state
    # cone: closure gives one inclusion, the quarter-scale map the other
    aud = closure_audit(ost.theory.states2, ost.theory.effects2, "swap")
    out_cone = ConeGenerators.from_rays(KIND, 2, STATE, "outputs",
                                        aud.unique_directions)
    rep = cone_equal(out_cone, ost.theory.states2)
    assert rep.equal


def test_swap_validation():
    with pytest.raises(ValueError, match="2-slot"):
        entanglement_swap(bell(), bell(side=EFFECT),
                          CoeffTensor(KIND, 1, np.ones(4)))
    with pytest.warns(UserWarning):
        entanglement_swap(bell(), bell(), bell())
