"""Cone-based generalised probabilistic theories at desk scale.

Build a theory from bipartite state and effect cones, check that
entanglement swapping is consistently defined, extend it to n parties,
and score iterated CHSH games over repeater chains.
"""

from .tensor import (
    STATE,
    EFFECT,
    SystemKind,
    CoeffTensor,
    pauli_qubit_kind,
    gbit_kind,
    fused_kind,
    tensor_product,
    permute_slots,
    contract,
    full_pairing,
    unit_effect_tensor,
)
from .cones import (
    ConeGenerators,
    MembershipResult,
    MembershipCapError,
    membership,
    cone_subset,
    cone_equal,
    minimal_tensor_product,
    symmetrize,
    pairwise_positivity,
    prune_redundant,
    default_tol,
)
from .swap import (
    entanglement_swap,
    dual_entanglement_swap,
    closure_audit,
    stability_probe,
    ClosurePolicy,
    SwapAudit,
)
from .theory import (
    TheorySpec,
    CheckOptions,
    ConsistencyReport,
    check_consistency,
    derive_unipartite,
    extend_n,
    correlators,
    normalize_states,
    verify_effect_space,
)
from .chsh import (
    ChshSetting,
    Strategy,
    GameResult,
    chsh_observable,
    chsh_value,
    theory_chsh_value,
    iterate_game_exhaustive,
    iterate_game_fast,
    validate_strategy,
)
from .models import (
    build_oblate_stabilizer,
    build_gbit,
    build_composite,
    composite_relay_chsh,
)
from .compgraph import (
    SwapGraph,
    validate,
    closure,
    max_chain_depth,
    enumerate_valid_graphs,
)

__version__ = "0.1.0"
