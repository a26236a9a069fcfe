"""Membership criteria for bipartite states.

Outer certificates (a negative margin proves the state is outside the
target set): PPT, the DPS symmetric-extension levels S^k, and the
Schmidt-number hierarchy levels S_D^k built from the maximally-entangled
lifting. Inner certificates (a positive margin proves membership): the
unfaithfulness set ~U_D and the reduction criterion. Fidelity witnesses
with the minimal valid bound complete the picture.

Margin conventions: every criterion reports the uniform-PSD-slack margin
of its feasibility system; |margin| <= 1e-7 is inconclusive at tolerance.
Bulk "inside" verdicts may come from a constructive feasible point
(feaspoint) whose certified slack lower-bounds the true margin; exact
margins always come from the interior-point solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from schmidt_scope import feaspoint, hermlin, sdpsolve
from schmidt_scope.hermlin import (
    BipartitionLayout,
    hermitian_basis,
    partial_transpose,
    partial_transpose_entry_maps,
    real_embed,
    sym_isometry,
    symmetric_basis,
)
from schmidt_scope.qstate import BipartiteState, PureBipartiteState, schmidt_decompose, swap_parties
from schmidt_scope.sdpsolve import (
    BlockRows,
    LinkGroup,
    MARGIN_BAND,
    SdpProblem,
    classify_margin,
    entry_perm_to_svec_perm,
    feasibility_margin,
    svec_len,
)

DEFAULT_MEMORY_CAP = 4 * 1024**3
QUICK_TARGET_SLACK = 1e-6

MEMBER = "certifies_membership"
NONMEMBER = "certifies_nonmembership"
INCONCLUSIVE = "inconclusive"


class MemoryGuardError(RuntimeError):
    """Requested hierarchy level exceeds the configured memory budget."""


@dataclass(frozen=True)
class CriterionVerdict:
    """Signed feasibility margin with its inner/outer interpretation.

    ``interpretation`` refers to the paper-level target set named in
    ``target_set``: outer relaxations certify nonmembership when outside,
    inner approximations certify membership when inside; the other
    direction is inconclusive where the approximation is one-sided.
    """

    margin: float
    band: str
    interpretation: str
    criterion: str = ""
    target_set: str = ""
    note: str = ""

    def __post_init__(self):
        if self.band == "inside" and not self.margin > MARGIN_BAND:
            raise ValueError("inside verdict requires margin > band")
        if self.band == "outside" and not self.margin < -MARGIN_BAND:
            raise ValueError("outside verdict requires margin < -band")

    @property
    def inside(self) -> bool:
        return self.band == "inside"

    @property
    def outside(self) -> bool:
        return self.band == "outside"


def _verdict(margin, criterion, target_set, inside_interp, outside_interp, note=""):
    band = classify_margin(margin)
    interp = {
        "inside": inside_interp,
        "outside": outside_interp,
        "inconclusive": INCONCLUSIVE,
    }[band]
    return CriterionVerdict(float(margin), band, interp, criterion, target_set, note)


def _min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(hermlin.hermitize(m))[0])


# ---------------------------------------------------------------------------
# eigenvalue criteria (no SDP)


def ppt_check(rho: BipartiteState) -> CriterionVerdict:
    """Positive-partial-transpose margin: min eigenvalue of T_B(rho).

    Inside certifies rho in S^1; outside certifies entanglement.
    """
    pt = partial_transpose(rho.rho, rho.layout, "right")
    return _verdict(_min_eig(pt), "ppt", "S^1", MEMBER, NONMEMBER)


def reduction_check(rho: BipartiteState) -> CriterionVerdict:
    """Reduction criterion: best of 1⊗rho_B - rho and rho_A⊗1 - rho.

    Inside certifies membership of R (hence of ~U_2); outside says nothing.
    """
    side_b = np.kron(np.eye(rho.d_a), rho.marginal_b()) - rho.rho
    side_a = np.kron(rho.marginal_a(), np.eye(rho.d_b)) - rho.rho
    margin = max(_min_eig(side_b), _min_eig(side_a))
    return _verdict(margin, "reduction", "R", MEMBER, INCONCLUSIVE)


# ---------------------------------------------------------------------------
# fidelity witnesses


def min_fidelity(target: PureBipartiteState, dim: int) -> float:
    """Smallest valid fidelity bound: sum of the dim-1 largest squared
    Schmidt coefficients of the target."""
    if dim < 2:
        raise ValueError("witness dimension must be >= 2")
    if dim > min(target.d_a, target.d_b) + 1:
        raise ValueError(
            f"dimension {dim} exceeds min(d_a, d_b)+1 = {min(target.d_a, target.d_b) + 1}"
        )
    spec, _, _ = schmidt_decompose(target)
    return float(sum(spec.lambdas[: dim - 1]))


@dataclass(frozen=True)
class FidelityWitness:
    """W_D = F * 1 - |psi><psi|; negative expectation certifies D-dim entanglement."""

    target: PureBipartiteState
    dimension: int
    fidelity_bound: float

    def __post_init__(self):
        if self.fidelity_bound < min_fidelity(self.target, self.dimension) - 1e-12:
            raise ValueError(
                f"fidelity bound {self.fidelity_bound} below the minimal valid value "
                f"{min_fidelity(self.target, self.dimension)}"
            )

    @classmethod
    def minimal(cls, target: PureBipartiteState, dimension: int) -> "FidelityWitness":
        return cls(target, dimension, min_fidelity(target, dimension))


def eval_fidelity_witness(w: FidelityWitness, rho: BipartiteState) -> float:
    """tr[W_D rho] = F - <psi|rho|psi>; negative certifies rho not in S_{D-1}."""
    if (w.target.d_a, w.target.d_b) != (rho.d_a, rho.d_b):
        raise ValueError(
            f"witness on {w.target.d_a}x{w.target.d_b} does not match state "
            f"{rho.d_a}x{rho.d_b}"
        )
    psi = w.target.amplitudes
    overlap = float(np.real(np.vdot(psi, rho.rho @ psi)))
    return w.fidelity_bound - overlap


# ---------------------------------------------------------------------------
# SDP 2: inner approximation of the D-unfaithful states


@lru_cache(maxsize=None)
def _sdp2_template(d_a: int, d_b: int, dim: int):
    """State-independent data of the unfaithfulness LMI (embedded blocks)."""
    n = d_a * d_b
    basis_a = hermitian_basis(d_a, traceless=True)
    basis_b = hermitian_basis(d_b, traceless=True)
    na, nb = len(basis_a), len(basis_b)
    m = 2 + na + nb  # y = (t, mu, alpha, beta)
    eye_n = np.eye(n, dtype=np.complex128)
    eye_a = np.eye(d_a, dtype=np.complex128)
    eye_b = np.eye(d_b, dtype=np.complex128)
    c1 = dim - 1

    def stack(mats):
        return np.stack([real_embed(m_) for m_ in mats])

    # block P: M_A ⊗ 1 + 1 ⊗ M_B - rho - t 1  >= 0
    p_mats = [eye_n, -c1 * (1.0 / d_a - 1.0 / d_b) * eye_n]
    p_mats += [-np.kron(b, eye_b) for b in basis_a]
    p_mats += [-np.kron(eye_a, b) for b in basis_b]
    rows_p = BlockRows(np.arange(m, dtype=np.intp), stack(p_mats))

    # block M_A >= 0
    ma_mats = [-c1 / d_a * eye_a] + [-b for b in basis_a]
    rows_ma = BlockRows(np.arange(1, 1 + 1 + na, dtype=np.intp), stack(ma_mats))
    # block Q_A = mu 1 - M_A >= 0
    qa_mats = [-(1.0 - c1 / d_a) * eye_a] + [b for b in basis_a]
    rows_qa = BlockRows(np.arange(1, 1 + 1 + na, dtype=np.intp), stack(qa_mats))
    # block M_B >= 0 (carries (1-mu) terms)
    mb_mats = [c1 / d_b * eye_b] + [-b for b in basis_b]
    rows_mb = BlockRows(
        np.concatenate([[1], np.arange(2 + na, m)]).astype(np.intp), stack(mb_mats)
    )
    # block Q_B = (1-mu) 1 - M_B >= 0
    qb_mats = [(1.0 - c1 / d_b) * eye_b] + [b for b in basis_b]
    rows_qb = BlockRows(
        np.concatenate([[1], np.arange(2 + na, m)]).astype(np.intp), stack(qb_mats)
    )
    # scalar blocks mu >= 0 and 1 - mu >= 0
    rows_mu = BlockRows(np.array([1], dtype=np.intp), np.array([[[-1.0]]]))
    rows_numu = BlockRows(np.array([1], dtype=np.intp), np.array([[[1.0]]]))

    block_dims = (2 * n, 2 * d_a, 2 * d_a, 2 * d_b, 2 * d_b, 1, 1)
    rows = (rows_p, rows_ma, rows_qa, rows_mb, rows_qb, rows_mu, rows_numu)
    c_static = (
        None,  # P objective depends on rho
        None,
        None,
        real_embed(c1 / d_b * eye_b),
        real_embed((1.0 - c1 / d_b) * eye_b),
        None,
        np.array([[1.0]]),
    )
    b = np.zeros(m)
    b[0] = 1.0
    return block_dims, rows, c_static, b


def _sdp2_problem(rho: BipartiteState, dim: int) -> SdpProblem:
    """Unfaithfulness LMI in standard form; the dual optimum is the margin."""
    block_dims, rows, c_static, b = _sdp2_template(rho.d_a, rho.d_b, dim)
    c1 = dim - 1
    n = rho.d_a * rho.d_b
    c_p = real_embed(c1 / rho.d_b * np.eye(n, dtype=np.complex128) - rho.rho)
    objective = (c_p,) + c_static[1:]
    return SdpProblem(block_dims, objective, rows, b, sense="min", rows_independent=True)


def unfaithful_margin(rho: BipartiteState, dim: int) -> CriterionVerdict:
    """Feasibility margin of the D-unfaithfulness SDP (inner approximation).

    Inside certifies rho in ~U_D, hence D-unfaithful; outside only says the
    inner approximation fails.
    """
    if dim < 2:
        raise ValueError("unfaithfulness dimension must be >= 2")
    sol = sdpsolve.solve(_sdp2_problem(rho, dim))
    if sol.status not in ("optimal",):
        return _verdict(
            0.0, "unfaithful", f"~U_{dim}", MEMBER, INCONCLUSIVE,
            note=f"solver status {sol.status}",
        )
    return _verdict(sol.objective_value, "unfaithful", f"~U_{dim}", MEMBER, INCONCLUSIVE)


# ---------------------------------------------------------------------------
# lifted-space plumbing shared by SDP 1 and the DPS hierarchy


@lru_cache(maxsize=None)
def _pi_matrix(d_a: int, dim: int, d_b: int) -> np.ndarray:
    """1_A ⊗ |psi+_D> ⊗ 1_B as an (d_a D D d_b) x (d_a d_b) matrix."""
    big = d_a * dim * dim * d_b
    pi = np.zeros((big, d_a * d_b))
    for a in range(d_a):
        for b in range(d_b):
            for j in range(dim):
                row = ((a * dim + j) * dim + j) * d_b + b
                pi[row, a * d_b + b] = 1.0
    return pi


def _embed_entry_maps(row_map: np.ndarray, col_map: np.ndarray):
    """Lift entry maps of a Hermitian-space involution to the real embedding."""
    n = row_map.shape[0]
    qr = np.arange(2 * n).reshape(-1, 1) // n
    qc = np.arange(2 * n).reshape(1, -1) // n
    tiled_r = np.tile(row_map, (2, 2))
    tiled_c = np.tile(col_map, (2, 2))
    return qr * n + tiled_r, qc * n + tiled_c


def _pt_svec_perm(dl: int, dr: int, side: str, embedded: bool) -> np.ndarray:
    rm, cm = partial_transpose_entry_maps(dl, dr, side)
    if embedded:
        rm, cm = _embed_entry_maps(rm, cm)
    return entry_perm_to_svec_perm(rm, cm)


def _entry_apply(x: np.ndarray, maps) -> np.ndarray:
    rm, cm = maps
    return x[rm, cm]


def _estimate_newton_bytes(m_tot: int, stacks_bytes: int) -> int:
    return 3 * 8 * m_tot * m_tot + stacks_bytes


# ---------------------------------------------------------------------------
# SDP 1: Schmidt-number hierarchy S_D^k


def _state_pairings(sigma_rho: np.ndarray, real_path: bool, trailing=()):
    """rhs values <H_alpha, rho> over the basis (embedding factor applied)."""
    n = sigma_rho.shape[0]
    if real_path:
        rr = sigma_rho.real
        vals = [float(np.sum(h * rr)) for h in symmetric_basis(n)]
        return np.array(vals + [float(t) for t in trailing])
    vals = [2.0 * float(np.real(np.trace(h @ sigma_rho))) for h in hermitian_basis(n)]
    return np.array(vals + [2.0 * float(t) for t in trailing])


@lru_cache(maxsize=None)
def _schmidt_k1_template(d_a: int, d_b: int, dim: int, real_path: bool):
    n_small = d_a * d_b
    big = d_a * dim * dim * d_b
    pi = _pi_matrix(d_a, dim, d_b)
    if real_path:
        mats = np.stack([pi @ h @ pi.T for h in symmetric_basis(n_small)] + [np.eye(big)])
        n_block = big
    else:
        mats = np.stack(
            [
                real_embed(np.asarray(pi @ h @ pi.conj().T, dtype=np.complex128))
                for h in hermitian_basis(n_small)
            ]
            + [np.eye(2 * big)]
        )
        n_block = 2 * big
    perm = _pt_svec_perm(d_a * dim, dim * d_b, "right", embedded=not real_path)
    rows0 = BlockRows(np.arange(mats.shape[0], dtype=np.intp), mats)
    return (n_block, n_block), (rows0, None), perm


def _schmidt_k1_problem(sigma: BipartiteState, dim: int) -> SdpProblem:
    real_path = sigma.is_real()
    block_dims, rows, perm = _schmidt_k1_template(sigma.d_a, sigma.d_b, dim, real_path)
    rhs = _state_pairings(sigma.rho, real_path, trailing=(float(dim),))
    return SdpProblem(
        block_dims,
        (None, None),
        rows,
        rhs,
        link_groups=(LinkGroup(0, 1, perm),),
        rows_independent=True,
    )


def _schmidt_feas_system(sigma: BipartiteState, dim: int, level: int):
    """Cone-feasibility system for the quick certificate (complex arithmetic)."""
    d_a, d_b = sigma.d_a, sigma.d_b
    if level == 1:
        big = d_a * dim * dim * d_b
        pi = _pi_matrix(d_a, dim, d_b)
        n_small = d_a * d_b
        # real states admit real certificates; keeps the eigh calls real
        target = sigma.rho.real if sigma.is_real() else sigma.rho

        class PullbackProjector:
            @staticmethod
            def residual(x):
                pb = pi.conj().T @ x @ pi - target
                return np.concatenate([np.abs(pb).ravel(), [abs(x.trace().real - dim)]])

            @staticmethod
            def project(x):
                r_mat = pi.conj().T @ x @ pi - target
                r_tr = x.trace().real - dim
                s = (r_tr - np.trace(r_mat).real / dim) / (big - n_small)
                y = (r_mat - s * dim * np.eye(n_small)) / dim**2
                return x - pi @ y @ pi.conj().T - s * np.eye(big)

        maps_t = partial_transpose_entry_maps(d_a * dim, dim * d_b, "right")
        cones = (
            feaspoint.ConeMap(lambda x: x, lambda y: y, big),
            feaspoint.ConeMap(
                lambda x: _entry_apply(x, maps_t), lambda y: _entry_apply(y, maps_t), big
            ),
        )
        return feaspoint.FeasibilitySystem(big, PullbackProjector(), cones)

    # level >= 2: extension of the lifted right party (swap beforehand if needed)
    d_l, d_r = d_a * dim, dim * d_b
    n_sym = math.comb(d_r + level - 1, level)
    n_comp = d_l * n_sym
    n_full = d_l * d_r**level
    lift = np.kron(np.eye(d_l), sym_isometry(d_r, level))  # n_full x n_comp
    lift_h = lift.conj().T
    pi = _pi_matrix(d_a, dim, d_b).astype(np.complex128)
    n_small = d_a * d_b
    mid = d_r ** (level - 1)

    basis = hermitian_basis(n_small)
    row_mats = []
    for h in basis:
        g = pi @ h @ pi.conj().T  # on (L, R_k)
        g8 = np.einsum(
            "abcd,mn->ambcnd",
            g.reshape(d_l, d_r, d_l, d_r),
            np.eye(mid),
        ).reshape(n_full, n_full)
        row_mats.append(lift_h @ g8 @ lift)
    row_mats.append(np.eye(n_comp, dtype=np.complex128))
    rhs = [float(np.real(np.trace(h @ sigma.rho))) for h in basis] + [float(dim)]
    affine = feaspoint.AffineProjector.from_row_stack(np.stack(row_mats), np.array(rhs))

    maps_tl = partial_transpose_entry_maps(d_l, n_sym, "left")
    cones = [
        feaspoint.ConeMap(lambda x: x, lambda y: y, n_comp),
        feaspoint.ConeMap(
            lambda x: _entry_apply(x, maps_tl), lambda y: _entry_apply(y, maps_tl), n_comp
        ),
    ]
    for r in range(1, level):
        maps_r = partial_transpose_entry_maps(d_l * d_r ** (level - r), d_r**r, "right")
        cones.append(
            feaspoint.ConeMap(
                lambda x, m=maps_r: _entry_apply(lift @ x @ lift_h, m),
                lambda y, m=maps_r: lift_h @ _entry_apply(y, m) @ lift,
                n_full,
            )
        )
    return feaspoint.FeasibilitySystem(n_comp, affine, tuple(cones))


def schmidt_hierarchy_margin(
    sigma: BipartiteState,
    dim: int,
    level: int = 1,
    method: str = "auto",
    memory_cap_bytes: int = DEFAULT_MEMORY_CAP,
    sign_exit: bool = False,
) -> CriterionVerdict:
    """Margin of the level-k outer relaxation S_D^k of Schmidt rank <= D.

    Outside certifies sigma not in S_D, i.e. (D+1)-dimensional entanglement;
    inside places sigma in the relaxation only, which is inconclusive for
    S_D membership.
    """
    if dim < 1 or level < 1:
        raise ValueError("dimension and level must be >= 1")
    name = f"schmidt[{dim},{level}]"
    target = f"S_{dim}^{level}"
    if dim == 1:
        return dps_margin(sigma, level, method=method, memory_cap_bytes=memory_cap_bytes,
                          sign_exit=sign_exit)
    if dim > min(sigma.d_a, sigma.d_b):
        # every state has Schmidt rank <= min local dimension
        return _verdict(1.0, name, target, INCONCLUSIVE, NONMEMBER,
                        note="trivial: D >= min local dimension")
    if level >= 2 and sigma.d_a < sigma.d_b:
        sigma = swap_parties(sigma)

    if method in ("auto", "quick"):
        system = _schmidt_feas_system(sigma, dim, level)
        found = feaspoint.find_strict_point(system, QUICK_TARGET_SLACK,
                                            scale=dim / system.dim)
        if found is not None:
            _, slack = found
            return _verdict(slack, name, target, INCONCLUSIVE, NONMEMBER,
                            note="feasible-point lower bound")
        if method == "quick":
            return _verdict(0.0, name, target, INCONCLUSIVE, NONMEMBER,
                            note="quick certificate not found")

    if level == 1:
        problem = _schmidt_k1_problem(sigma, dim)
    else:
        problem = _schmidt_exact_problem(sigma, dim, level)
    try:
        _check_guard(problem, name, memory_cap_bytes)
    except MemoryGuardError:
        if method == "auto":
            return _verdict(0.0, name, target, INCONCLUSIVE, NONMEMBER,
                            note="quick certificate not found; exact SDP above memory cap")
        raise
    margin, _ = feasibility_margin(
        problem, list(range(len(problem.block_dims))), sign_exit=sign_exit
    )
    return _verdict(margin, name, target, INCONCLUSIVE, NONMEMBER)


def _schmidt_exact_problem(sigma: BipartiteState, dim: int, level: int) -> SdpProblem:
    """Exact level-k relaxation: DPS extension of the lifted AA'|B'B system."""
    real_path = sigma.is_real()
    rhs = _state_pairings(sigma.rho, real_path, trailing=(float(dim),))
    return _extension_problem("schmidt", sigma.d_a, sigma.d_b, dim, level, real_path, rhs)


# ---------------------------------------------------------------------------
# symmetric-extension SDPs (shared by S^k and S_D^k at level >= 2)


def _placed_identity_mid(h: np.ndarray, d_l: int, d_r: int, level: int) -> np.ndarray:
    """Insert identity middle copies: H on (L, R_last) -> H_L,mid,R on L R^k."""
    mid = d_r ** (level - 1)
    n_full = d_l * d_r**level
    return np.einsum(
        "abcd,mn->ambcnd",
        np.asarray(h, dtype=np.complex128).reshape(d_l, d_r, d_l, d_r),
        np.eye(mid),
    ).reshape(n_full, n_full)


def _stack_independent(mats) -> bool:
    """Linear independence of a Hermitian row family via its Gram spectrum."""
    gram = np.array([[float(np.real(np.trace(a @ b))) for b in mats] for a in mats])
    w = np.linalg.eigvalsh(gram)
    return bool(w[0] > 1e-10 * max(w[-1], 1.0))


@lru_cache(maxsize=None)
def _extension_template(kind: str, d_a: int, d_b: int, dim: int, level: int, real_path: bool):
    """State-independent data of a level-k PPT symmetric-extension SDP.

    kind "dps" extends the (A|B) system directly; kind "schmidt" extends the
    lifted (AA'|B'B) system and pulls back through the maximally-entangled
    isometry. Blocks: compressed extension variable, its left-party
    transpose (tied by a link group), and one full-space block per
    middle-copy transpose cut (tied by dense svec rows).
    """
    if kind == "dps":
        d_l, d_r = d_a, d_b
        pull_basis = symmetric_basis(d_a * d_b) if real_path else hermitian_basis(d_a * d_b)
        pre = [np.asarray(h, dtype=np.complex128) for h in pull_basis]
    else:
        d_l, d_r = d_a * dim, dim * d_b
        pi = _pi_matrix(d_a, dim, d_b).astype(np.complex128)
        pull_basis = symmetric_basis(d_a * d_b) if real_path else hermitian_basis(d_a * d_b)
        pre = [pi @ np.asarray(h, dtype=np.complex128) @ pi.conj().T for h in pull_basis]

    n_sym = math.comb(d_r + level - 1, level)
    n_comp = d_l * n_sym
    n_full = d_l * d_r**level
    lift = np.kron(np.eye(d_l), sym_isometry(d_r, level))
    lift_h = lift.conj().T
    pull_mats = [lift_h @ _placed_identity_mid(g, d_l, d_r, level) @ lift for g in pre]
    if kind == "schmidt":
        pull_mats.append(np.eye(n_comp, dtype=np.complex128))
    independent = _stack_independent(pull_mats)

    if real_path:
        embed = lambda m: np.ascontiguousarray(m.real)
        lift_b = lift.real
        n_comp_b, n_full_b = n_comp, n_full
    else:
        embed = real_embed
        lift_b = np.block([[lift.real, -lift.imag], [lift.imag, lift.real]])
        n_comp_b, n_full_b = 2 * n_comp, 2 * n_full

    m_pull = len(pull_mats)
    rows_comp_idx = list(range(m_pull))
    rows_comp_mats = [embed(m) for m in pull_mats]
    perm_all = _pt_svec_perm(d_l, n_sym, "left", embedded=not real_path)

    extra_blocks = []
    tie_blocks_rows = []
    row_counter = m_pull
    for r in range(1, level):
        rm, cm = partial_transpose_entry_maps(d_l * d_r ** (level - r), d_r**r, "right")
        if not real_path:
            rm, cm = _embed_entry_maps(rm, cm)
        iu, ju, _, _ = sdpsolve._svec_index(n_full_b)
        n_tie = svec_len(n_full_b)
        e_stack = np.zeros((n_tie, n_full_b, n_full_b))
        p = np.arange(n_tie)
        vals = np.where(iu == ju, 1.0, 1.0 / np.sqrt(2.0))
        e_stack[p, iu, ju] = vals
        e_stack[p, ju, iu] = vals
        te = e_stack[:, rm, cm]
        comp_side = -np.einsum("ij,kjl,lm->kim", lift_b.T, te, lift_b)
        rows_comp_idx.extend(range(row_counter, row_counter + n_tie))
        rows_comp_mats.extend(comp_side)
        tie_blocks_rows.append((row_counter, e_stack))
        row_counter += n_tie
        extra_blocks.append(n_full_b)

    block_dims = [n_comp_b, n_comp_b] + extra_blocks
    rows = [
        BlockRows(np.asarray(rows_comp_idx, dtype=np.intp), np.stack(rows_comp_mats)),
        None,
    ]
    for start, e_stack in tie_blocks_rows:
        rows.append(BlockRows(np.arange(start, start + e_stack.shape[0], dtype=np.intp), e_stack))
    return (
        tuple(block_dims),
        tuple(rows),
        perm_all,
        row_counter - m_pull,
        independent,
    )


def _extension_problem(kind: str, d_a: int, d_b: int, dim: int, level: int,
                       real_path: bool, rhs) -> SdpProblem:
    block_dims, rows, perm_all, n_tie_rows, independent = _extension_template(
        kind, d_a, d_b, dim, level, real_path
    )
    b_full = np.concatenate([np.asarray(rhs, dtype=float), np.zeros(n_tie_rows)])
    return SdpProblem(
        block_dims,
        tuple(None for _ in block_dims),
        rows,
        b_full,
        link_groups=(LinkGroup(0, 1, perm_all),),
        rows_independent=independent,
    )


def _check_guard(problem: SdpProblem, name: str, memory_cap_bytes: int) -> None:
    m_tot = problem.b.size + sum(
        svec_len(problem.block_dims[g.dst]) for g in problem.link_groups
    )
    stacks = sum(r.mats.nbytes for r in problem.rows if r is not None)
    est = _estimate_newton_bytes(m_tot, stacks)
    if est > memory_cap_bytes:
        raise MemoryGuardError(
            f"{name} exact SDP needs ~{est / 1e9:.1f} GB (cap {memory_cap_bytes / 1e9:.1f} GB)"
        )


# ---------------------------------------------------------------------------
# DPS hierarchy S^k


def _dps_exact_problem(rho: BipartiteState, level: int) -> SdpProblem:
    real_path = rho.is_real()
    rhs = _state_pairings(rho.rho, real_path)
    return _extension_problem("dps", rho.d_a, rho.d_b, 0, level, real_path, rhs)


def _dps_feas_system(rho: BipartiteState, level: int):
    d_a, d_b = rho.d_a, rho.d_b
    n_sym = math.comb(d_b + level - 1, level)
    n_comp = d_a * n_sym
    n_full = d_a * d_b**level
    lift = np.kron(np.eye(d_a), sym_isometry(d_b, level)).astype(np.complex128)
    lift_h = lift.conj().T
    mid = d_b ** (level - 1)
    basis = hermitian_basis(d_a * d_b)
    row_mats = []
    for h in basis:
        g8 = np.einsum(
            "abcd,mn->ambcnd",
            np.asarray(h, dtype=np.complex128).reshape(d_a, d_b, d_a, d_b),
            np.eye(mid),
        ).reshape(n_full, n_full)
        row_mats.append(lift_h @ g8 @ lift)
    rhs = [float(np.real(np.trace(np.asarray(h) @ rho.rho))) for h in basis]
    affine = feaspoint.AffineProjector.from_row_stack(np.stack(row_mats), np.array(rhs))

    maps_tl = partial_transpose_entry_maps(d_a, n_sym, "left")
    cones = [
        feaspoint.ConeMap(lambda x: x, lambda y: y, n_comp),
        feaspoint.ConeMap(
            lambda x: _entry_apply(x, maps_tl), lambda y: _entry_apply(y, maps_tl), n_comp
        ),
    ]
    for r in range(1, level):
        maps_r = partial_transpose_entry_maps(d_a * d_b ** (level - r), d_b**r, "right")
        cones.append(
            feaspoint.ConeMap(
                lambda x, m=maps_r: _entry_apply(lift @ x @ lift_h, m),
                lambda y, m=maps_r: lift_h @ _entry_apply(y, m) @ lift,
                n_full,
            )
        )
    return feaspoint.FeasibilitySystem(n_comp, affine, tuple(cones))


def dps_margin(
    rho: BipartiteState,
    level: int,
    method: str = "auto",
    memory_cap_bytes: int = DEFAULT_MEMORY_CAP,
    sign_exit: bool = False,
) -> CriterionVerdict:
    """Margin of the level-k PPT symmetric-extension test S^k.

    Outside certifies entanglement; inside certifies membership of S^k only
    (S^k shrinks to the separable set as k grows).
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    name = f"dps[{level}]"
    target = f"S^{level}"
    if rho.d_b > rho.d_a:
        rho = swap_parties(rho)  # extend the smaller party
    if level == 1:
        # the only candidate extension is rho itself: margin is explicit
        pt = partial_transpose(rho.rho, rho.layout, "right")
        margin = min(_min_eig(rho.rho), _min_eig(pt))
        return _verdict(margin, name, target, MEMBER, NONMEMBER)

    if method in ("auto", "quick"):
        system = _dps_feas_system(rho, level)
        found = feaspoint.find_strict_point(system, QUICK_TARGET_SLACK,
                                            scale=1.0 / system.dim)
        if found is not None:
            return _verdict(found[1], name, target, MEMBER, NONMEMBER,
                            note="feasible-point lower bound")
        if method == "quick":
            return _verdict(0.0, name, target, MEMBER, NONMEMBER,
                            note="quick certificate not found")

    problem = _dps_exact_problem(rho, level)
    try:
        _check_guard(problem, name, memory_cap_bytes)
    except MemoryGuardError:
        if method == "auto":
            return _verdict(0.0, name, target, MEMBER, NONMEMBER,
                            note="quick certificate not found; exact SDP above memory cap")
        raise
    margin, _ = feasibility_margin(problem, list(range(len(problem.block_dims))),
                                   sign_exit=sign_exit)
    return _verdict(margin, name, target, MEMBER, NONMEMBER)
