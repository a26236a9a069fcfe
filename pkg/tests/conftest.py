import numpy as np
import pytest

from schmidt_scope.qstate import (
    BipartiteState,
    RngStream,
    embed,
    haar_unitary,
    mix,
    pure_from_vector,
    sample_haar_pure,
)


def rank_limited_mixture(d: int, rank: int, n_terms: int, seed: int) -> BipartiteState:
    """Mixture of Schmidt-rank-<=rank pure states in randomized local bases."""
    w = RngStream(seed, 999).generator().random(n_terms)
    w /= w.sum()
    out = np.zeros((d * d, d * d), dtype=np.complex128)
    for i, wi in enumerate(w):
        psi = embed(sample_haar_pure(rank, rank, RngStream(seed, i)), d, d)
        ua = haar_unitary(d, RngStream(seed, 5000 + 2 * i))
        ub = haar_unitary(d, RngStream(seed, 5001 + 2 * i))
        u = np.kron(ua, ub)
        out += wi * (u @ psi.projector() @ u.conj().T)
    return BipartiteState(out, d, d)


def product_mixture(d: int, n_terms: int, seed: int) -> BipartiteState:
    """Separable state: mixture of random product projectors."""
    return rank_limited_mixture(d, 1, n_terms, seed)


def eq5_state() -> BipartiteState:
    from schmidt_scope.expcli import rank3_faithful_unfaithful_state

    return rank3_faithful_unfaithful_state()


@pytest.fixture(scope="session")
def eq5():
    return eq5_state()
