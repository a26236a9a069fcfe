"""Primal-dual interior-point solver for small dense SDPs over real symmetric blocks.

Standard form:

    minimize    sum_b <C_b, X_b>  +  c_f' u
    subject to  sum_b <A_ib, X_b> +  F_i u  =  b_i        (generic rows)
                svec(X_dst) = P svec(X_src)               (link groups)
                X_b >= 0,   u free

Search directions use Nesterov-Todd scaling with a Mehrotra
predictor-corrector step; the Schur complement is assembled densely
(closed-form symmetric Kronecker representation for link groups) and
factored by Cholesky. Hermitian data must be embedded as real symmetric
blocks first (hermlin.real_embed); the solver is purely real.

A "link group" ties a whole block entrywise to an svec-permutation image
of another block (e.g. a partial transpose), which is how cone constraints
on linear images of one variable are expressed in standard form without
enumerating the tie rows as dense data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import qr as scipy_qr
from scipy.linalg import solve_triangular

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
MARGIN_BAND = 1e-7
_STEP_FRAC = 0.99
_SYM_TOL = 1e-12


class SdpError(Exception):
    """Base class for solver failures."""


class IllPosedProblemError(SdpError):
    """Dependent equality rows with inconsistent right-hand sides."""


class NumericalFailureError(SdpError):
    """The iteration broke down beyond recovery."""


# ---------------------------------------------------------------------------
# svec machinery


@lru_cache(maxsize=None)
def _svec_index(n: int):
    """Row/column index arrays of the upper-triangle svec ordering."""
    iu, ju = np.triu_indices(n)
    diag = iu == ju
    scale = np.where(diag, 1.0, np.sqrt(2.0))
    # slot lookup table: slot_of[i, j] for i <= j
    slot = np.zeros((n, n), dtype=np.intp)
    slot[iu, ju] = np.arange(iu.size)
    slot[ju, iu] = slot[iu, ju]
    return iu, ju, scale, slot


def svec_len(n: int) -> int:
    return n * (n + 1) // 2


def svec(m: np.ndarray) -> np.ndarray:
    """Symmetric vectorization with sqrt(2)-scaled off-diagonals."""
    n = m.shape[-1]
    iu, ju, scale, _ = _svec_index(n)
    return m[..., iu, ju] * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of svec."""
    iu, ju, scale, _ = _svec_index(n)
    m = np.zeros(v.shape[:-1] + (n, n))
    m[..., iu, ju] = v / scale
    m[..., ju, iu] = m[..., iu, ju]
    return m


def entry_perm_to_svec_perm(row_map: np.ndarray, col_map: np.ndarray) -> np.ndarray:
    """svec permutation of a symmetry-preserving entry permutation.

    The entry map is T(X)[r, c] = X[row_map[r, c], col_map[r, c]]; it must
    send diagonal entries to diagonal entries and symmetric pairs to
    symmetric pairs (partial transposes do). Returns perm such that
    svec(T(X)) = svec(X)[perm].
    """
    n = row_map.shape[0]
    iu, ju, _, slot = _svec_index(n)
    src_r = row_map[iu, ju]
    src_c = col_map[iu, ju]
    if np.any((iu == ju) != (src_r == src_c)):
        raise ValueError("entry permutation does not preserve the diagonal")
    return slot[src_r, src_c].copy()


def sym_kron(w: np.ndarray) -> np.ndarray:
    """svec-coordinate matrix of X -> W X W, i.e. entries tr(E_p W E_q W)."""
    n = w.shape[0]
    iu, ju, scale, _ = _svec_index(n)
    wi_i = w[np.ix_(iu, iu)]
    wj_j = w[np.ix_(ju, ju)]
    s = wi_i * wj_j
    del wi_i, wj_j
    wi_j = w[np.ix_(iu, ju)]
    wj_i = w[np.ix_(ju, iu)]
    s += wi_j * wj_i
    del wi_j, wj_i
    c = np.where(iu == ju, 0.5 * np.sqrt(2.0), 1.0)
    s *= np.outer(c, c)
    return s


# ---------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class LinkGroup:
    """Constraint family svec(X[dst]) == svec(X[src])[perm] (e.g. dst = T(src))."""

    src: int
    dst: int
    perm: np.ndarray


@dataclass(frozen=True)
class BlockRows:
    """Generic-row components living on one block."""

    idx: np.ndarray          # indices into the generic-row range
    mats: np.ndarray         # (len(idx), n, n) symmetric matrices


@dataclass
class SdpProblem:
    """Block SDP in standard form; see module docstring.

    ``objective``/``constraints`` follow the sign convention of ``sense``:
    with sense="max" the stated objective is maximized.
    """

    block_dims: tuple
    objective: tuple                      # per-block C (None = zero block)
    rows: tuple                           # per-block BlockRows or None
    b: np.ndarray
    sense: str = "min"
    free_objective: np.ndarray | None = None   # (n_f,)
    free_cols: np.ndarray | None = None        # (m_g, n_f)
    link_groups: tuple = ()
    rows_independent: bool = False

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be min or max, got {self.sense!r}")
        if len(self.objective) != len(self.block_dims) or len(self.rows) != len(self.block_dims):
            raise ValueError("objective/rows must have one entry per block")
        m = self.b.shape[0]
        for blk, (n, c, rows) in enumerate(zip(self.block_dims, self.objective, self.rows)):
            if c is not None:
                if c.shape != (n, n):
                    raise ValueError(f"objective block {blk} has shape {c.shape}, expected {(n, n)}")
                if np.max(np.abs(c - c.T)) > _SYM_TOL:
                    raise ValueError(f"objective block {blk} is not symmetric within {_SYM_TOL:g}")
            if rows is not None:
                if rows.mats.shape[1:] != (n, n):
                    raise ValueError(f"constraint mats on block {blk} have wrong shape")
                if rows.idx.size and (rows.idx.min() < 0 or rows.idx.max() >= m):
                    raise ValueError(f"constraint row indices on block {blk} out of range")
                asym = np.max(np.abs(rows.mats - rows.mats.transpose(0, 2, 1))) if rows.idx.size else 0.0
                if asym > _SYM_TOL:
                    raise ValueError(f"constraint mats on block {blk} not symmetric ({asym:.2e})")
        dsts = [g.dst for g in self.link_groups]
        if len(set(dsts)) != len(dsts):
            raise ValueError("each block may be the dst of at most one link group")
        for g in self.link_groups:
            if self.block_dims[g.src] != self.block_dims[g.dst]:
                raise ValueError("link groups require equal src/dst dimensions")
            if g.dst in [h.src for h in self.link_groups]:
                raise ValueError("a link dst block may not be a src of another group")
        if (self.free_cols is None) != (self.free_objective is None):
            raise ValueError("free_cols and free_objective must be given together")
        if self.free_cols is not None and self.free_cols.shape != (m, self.free_objective.shape[0]):
            raise ValueError("free_cols shape mismatch")

    @property
    def n_generic(self) -> int:
        return self.b.shape[0]

    @property
    def n_free(self) -> int:
        return 0 if self.free_objective is None else self.free_objective.shape[0]


def problem_from_dense(block_dims, objective, constraint_mats, b, sense="min",
                       rows_independent=False):
    """Build an SdpProblem from per-constraint lists of per-block matrices.

    ``constraint_mats[i][blk]`` is the matrix of constraint i on block blk
    (None for absent). Convenience path for small problems and tests.
    """
    b = np.asarray(b, dtype=float)
    nb = len(block_dims)
    per_block_idx = [[] for _ in range(nb)]
    per_block_mats = [[] for _ in range(nb)]
    for i, mats in enumerate(constraint_mats):
        for blk in range(nb):
            m = mats[blk] if blk < len(mats) else None
            if m is not None:
                per_block_idx[blk].append(i)
                per_block_mats[blk].append(np.asarray(m, dtype=float))
    rows = []
    for blk in range(nb):
        if per_block_idx[blk]:
            rows.append(BlockRows(np.asarray(per_block_idx[blk], dtype=np.intp),
                                  np.stack(per_block_mats[blk])))
        else:
            rows.append(None)
    objective = tuple(None if c is None else np.asarray(c, dtype=float) for c in objective)
    return SdpProblem(tuple(block_dims), objective, tuple(rows), b, sense,
                      rows_independent=rows_independent)


@dataclass
class SdpSolution:
    status: str
    primal_blocks: list
    dual_vector: np.ndarray
    objective_value: float
    kkt_residuals: tuple                  # (primal_feas, dual_feas, duality_gap)
    iterations: int
    free_values: np.ndarray | None = None
    dual_blocks: list = field(default_factory=list)
    bound_lo: float = -np.inf             # certified bounds when used in margin mode
    bound_hi: float = np.inf


def classify_margin(margin: float, band: float = MARGIN_BAND) -> str:
    if margin > band:
        return "inside"
    if margin < -band:
        return "outside"
    return "inconclusive"


# ---------------------------------------------------------------------------
# preprocessing


def _generic_row_matrix(problem: SdpProblem) -> np.ndarray:
    """Dense (m_g, total_svec + n_f) matrix of the generic rows."""
    m = problem.n_generic
    cols = sum(svec_len(n) for n in problem.block_dims) + problem.n_free
    out = np.zeros((m, cols))
    off = 0
    for n, rows in zip(problem.block_dims, problem.rows):
        ln = svec_len(n)
        if rows is not None and rows.idx.size:
            out[rows.idx, off:off + ln] = svec(rows.mats)
        off += ln
    if problem.n_free:
        out[:, off:] = problem.free_cols
    return out


def _drop_dependent_rows(problem: SdpProblem, tol: float = 1e-10):
    """Remove linearly dependent generic rows; error if inconsistent."""
    if problem.rows_independent or problem.n_generic == 0:
        return problem, np.arange(problem.n_generic)
    rmat = _generic_row_matrix(problem)
    m = rmat.shape[0]
    _, r, piv = scipy_qr(rmat.T, mode="economic", pivoting=True)
    diag = np.abs(np.diagonal(r))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diag > tol * diag[0]))
    if rank == m:
        return problem, np.arange(m)
    keep = np.sort(piv[:rank])
    drop = np.sort(piv[rank:])
    # consistency of the dropped rows' right-hand sides
    coeff, *_ = np.linalg.lstsq(rmat[keep].T, rmat[drop].T, rcond=None)
    row_resid = np.max(np.abs(rmat[keep].T @ coeff - rmat[drop].T)) if drop.size else 0.0
    b_resid = np.max(np.abs(coeff.T @ problem.b[keep] - problem.b[drop])) if drop.size else 0.0
    scale = 1.0 + np.max(np.abs(problem.b))
    if row_resid > 1e-6 or b_resid > 1e-7 * scale:
        raise IllPosedProblemError(
            f"dependent rows {drop.tolist()} are inconsistent "
            f"(row residual {row_resid:.2e}, rhs residual {b_resid:.2e})"
        )
    remap = -np.ones(m, dtype=np.intp)
    remap[keep] = np.arange(rank)
    new_rows = []
    for rows in problem.rows:
        if rows is None:
            new_rows.append(None)
            continue
        mask = remap[rows.idx] >= 0
        new_rows.append(BlockRows(remap[rows.idx[mask]], rows.mats[mask]))
    reduced = SdpProblem(
        problem.block_dims, problem.objective, tuple(new_rows), problem.b[keep],
        problem.sense, problem.free_objective,
        None if problem.free_cols is None else problem.free_cols[keep],
        problem.link_groups, rows_independent=True,
    )
    return reduced, keep


# ---------------------------------------------------------------------------
# interior-point core


def _factor_psd(x: np.ndarray) -> np.ndarray:
    """Square factor L with X = L L^T; Cholesky with eigh fallback."""
    try:
        return np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(x)
        floor = max(w[-1], 1.0) * 1e-14
        return v * np.sqrt(np.maximum(w, floor))


class _BlockScaling:
    """Per-block NT scaling point: W Z W = X with W = G G^T."""

    __slots__ = ("g", "w", "lam")

    def __init__(self, x: np.ndarray, z: np.ndarray, need_w: bool):
        lx = _factor_psd(x)
        lz = _factor_psd(z)
        _, lam, vt = np.linalg.svd(lz.T @ lx)
        lam = np.maximum(lam, 1e-300)
        self.g = lx @ (vt.T / np.sqrt(lam))
        self.lam = lam
        self.w = self.g @ self.g.T if need_w else None


def _max_step(lam: np.ndarray, delta_hat: np.ndarray) -> float:
    """Largest alpha with diag(lam) + alpha * delta_hat >= 0."""
    s = 1.0 / np.sqrt(lam)
    k = (s[:, None] * delta_hat) * s[None, :]
    wmin = np.linalg.eigvalsh(0.5 * (k + k.T))[0]
    if wmin >= -1e-16:
        return np.inf
    return -1.0 / wmin


class _Workspace:
    """Static per-solve data derived from the (preprocessed) problem."""

    def __init__(self, p: SdpProblem):
        self.p = p
        self.nb = len(p.block_dims)
        self.m_g = p.n_generic
        self.group_offsets = []
        off = self.m_g
        for g in p.link_groups:
            self.group_offsets.append(off)
            off += svec_len(p.block_dims[g.dst])
        self.m_tot = off
        self.n_f = p.n_free
        self.n_cone = sum(p.block_dims)
        self.b_full = np.concatenate([p.b, np.zeros(self.m_tot - self.m_g)])
        self.inv_perms = [np.argsort(g.perm) for g in p.link_groups]
        self.sign = 1.0 if p.sense == "min" else -1.0
        self.c_blocks = [
            (np.zeros((n, n)) if c is None else self.sign * c)
            for n, c in zip(p.block_dims, p.objective)
        ]
        self.c_free = (self.sign * p.free_objective) if p.free_objective is not None else np.zeros(0)
        self.f_cols = p.free_cols if p.free_cols is not None else np.zeros((self.m_g, 0))
        self.c_norm = np.sqrt(sum(np.sum(c * c) for c in self.c_blocks) + np.sum(self.c_free**2))
        self.b_norm = np.linalg.norm(self.b_full)
        # blocks needing the explicit W / sym_kron (touched by any link group)
        self.need_w = [False] * self.nb
        for g in p.link_groups:
            self.need_w[g.src] = True
            self.need_w[g.dst] = True

    # -- linear operators ---------------------------------------------------

    def apply_rows(self, mats: list) -> np.ndarray:
        """y = A(X) over all constraint rows for given block matrices."""
        out = np.zeros(self.m_tot)
        for blk, rows in enumerate(self.p.rows):
            if rows is not None and rows.idx.size:
                out[rows.idx] += np.einsum("kij,ij->k", rows.mats, mats[blk])
        for g, off in zip(self.p.link_groups, self.group_offsets):
            ln = svec_len(self.p.block_dims[g.dst])
            out[off:off + ln] += svec(mats[g.dst]) - svec(mats[g.src])[g.perm]
        return out

    def apply_rows_adjoint(self, y: np.ndarray) -> list:
        """Per-block matrices of A^T(y) over all constraint rows."""
        out = [np.zeros((n, n)) for n in self.p.block_dims]
        for blk, rows in enumerate(self.p.rows):
            if rows is not None and rows.idx.size:
                out[blk] += np.einsum("k,kij->ij", y[rows.idx], rows.mats)
        for g, off, inv in zip(self.p.link_groups, self.group_offsets, self.inv_perms):
            n = self.p.block_dims[g.dst]
            eta = y[off:off + svec_len(n)]
            out[g.dst] += smat(eta, n)
            out[g.src] -= smat(eta[inv], n)
        return out


def _assemble_schur_sym(ws: _Workspace, scal: list) -> np.ndarray:
    """Symmetric Schur complement (row/col layout: generic rows then link rows)."""
    p = ws.p
    M = np.zeros((ws.m_tot, ws.m_tot))
    waw_svecs = [None] * ws.nb
    for blk, rows in enumerate(p.rows):
        if rows is None or rows.idx.size == 0:
            continue
        g = scal[blk].g
        ahat = g.T @ rows.mats @ g
        va = svec(ahat)
        M[np.ix_(rows.idx, rows.idx)] += va @ va.T
        if ws.need_w[blk]:
            waw_svecs[blk] = (rows.idx, svec(g @ ahat @ g.T))
    skron = {blk: sym_kron(scal[blk].w) for blk in range(ws.nb) if ws.need_w[blk]}
    for gi, (grp, off) in enumerate(zip(p.link_groups, ws.group_offsets)):
        ln = svec_len(p.block_dims[grp.dst])
        sl = slice(off, off + ln)
        if waw_svecs[grp.dst] is not None:
            idx, vs = waw_svecs[grp.dst]
            M[idx[:, None], np.arange(off, off + ln)[None, :]] += vs
            M[np.arange(off, off + ln)[:, None], idx[None, :]] += vs.T
        if waw_svecs[grp.src] is not None:
            idx, vs = waw_svecs[grp.src]
            vp = vs[:, grp.perm]
            M[idx[:, None], np.arange(off, off + ln)[None, :]] -= vp
            M[np.arange(off, off + ln)[:, None], idx[None, :]] -= vp.T
        M[sl, sl] += skron[grp.dst]
        M[sl, sl] += skron[grp.src][np.ix_(grp.perm, grp.perm)]
        for gj in range(gi):
            other = p.link_groups[gj]
            if other.src != grp.src:
                continue
            ooff = ws.group_offsets[gj]
            oln = svec_len(p.block_dims[other.dst])
            cross = skron[grp.src][np.ix_(grp.perm, other.perm)]
            M[sl, ooff:ooff + oln] += cross
            M[ooff:ooff + oln, sl] += cross.T
    return M


class _SchurSolver:
    """Cholesky of the Schur complement with free-variable bordering."""

    def __init__(self, M: np.ndarray, f_full: np.ndarray):
        self.n_f = f_full.shape[1]
        jitter = 0.0
        scale = max(np.max(np.abs(np.diagonal(M))), 1.0)
        for attempt in range(4):
            try:
                self.chol = np.linalg.cholesky(
                    M + (jitter * scale) * np.eye(M.shape[0]) if jitter else M
                )
                break
            except np.linalg.LinAlgError:
                jitter = 10.0 ** (-13 + 2 * attempt)
        else:
            raise NumericalFailureError("Schur complement not positive definite")
        self.f_full = f_full
        if self.n_f:
            k = self._solve_psd(f_full)
            self.s_free = f_full.T @ k
            self.k = k

    def _solve_psd(self, rhs: np.ndarray) -> np.ndarray:
        y = solve_triangular(self.chol, rhs, lower=True)
        return solve_triangular(self.chol.T, y, lower=False)

    def _solve_once(self, rhs: np.ndarray, r_f: np.ndarray):
        if not self.n_f:
            return self._solve_psd(rhs), np.zeros(0)
        t = self._solve_psd(rhs)
        du = np.linalg.solve(self.s_free, self.f_full.T @ t - r_f)
        dy = t - self.k @ du
        return dy, du

    def solve(self, rhs: np.ndarray, r_f: np.ndarray, schur_mat: np.ndarray | None = None):
        """Bordered solve with one step of iterative refinement.

        Refinement needs the unfactored Schur matrix; it recovers the digits
        lost to the ill-conditioning of the late central path.
        """
        dy, du = self._solve_once(rhs, r_f)
        if schur_mat is not None:
            res1 = rhs - schur_mat @ dy
            res2 = r_f.copy()
            if self.n_f:
                res1 -= self.f_full @ du
                res2 = r_f - self.f_full.T @ dy
            cy, cu = self._solve_once(res1, res2)
            dy = dy + cy
            du = du + cu
        return dy, du


def solve(problem: SdpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          sign_exit_band: float | None = None) -> SdpSolution:
    """Solve the SDP; see SdpSolution for the certificate contract.

    With ``sign_exit_band`` set, iteration stops as soon as certified
    primal/dual bounds place the optimum strictly on one side of the band
    (status "sign_resolved"); used by feasibility-margin bisections.
    """
    try:
        reduced, _ = _drop_dependent_rows(problem)
    except np.linalg.LinAlgError as exc:
        raise IllPosedProblemError(f"row preprocessing failed: {exc}") from exc
    ws = _Workspace(reduced)
    f_full = np.zeros((ws.m_tot, ws.n_f))
    if ws.n_f:
        f_full[: ws.m_g] = ws.f_cols

    tau = 1.0 + (np.max(np.abs(reduced.b)) if reduced.b.size else 0.0)
    x = [tau * np.eye(n) for n in reduced.block_dims]
    z = [tau * np.eye(n) for n in reduced.block_dims]
    y = np.zeros(ws.m_tot)
    u = np.zeros(ws.n_f)

    status = "max_iterations"
    it = 0
    bound_lo, bound_hi = -np.inf, np.inf
    best_merit = np.inf
    best_point = None

    for it in range(1, max_iter + 1):
        # residuals
        r_all = ws.b_full - ws.apply_rows(x)
        if ws.n_f:
            r_all -= f_full @ u
        aty = ws.apply_rows_adjoint(y)
        r_d = [ws.c_blocks[b_] - z[b_] - aty[b_] for b_ in range(ws.nb)]
        r_f = ws.c_free - f_full.T @ y if ws.n_f else np.zeros(0)

        pobj_int = sum(np.sum(ws.c_blocks[b_] * x[b_]) for b_ in range(ws.nb)) + float(ws.c_free @ u)
        dobj_int = float(ws.b_full @ y)
        mu = sum(np.sum(x[b_] * z[b_]) for b_ in range(ws.nb)) / ws.n_cone

        pres = np.linalg.norm(r_all) / (1.0 + ws.b_norm)
        dres = np.sqrt(sum(np.sum(m * m) for m in r_d) + np.sum(r_f**2)) / (1.0 + ws.c_norm)
        gap = abs(pobj_int - dobj_int) / (1.0 + abs(pobj_int) + abs(dobj_int))

        if pres <= 10 * tol:
            bound_hi = min(bound_hi, pobj_int + abs(pobj_int) * 10 * tol + 10 * tol)
        if dres <= 10 * tol:
            bound_lo = max(bound_lo, dobj_int - abs(dobj_int) * 10 * tol - 10 * tol)

        merit = max(pres, dres, gap)
        if merit < best_merit:
            best_merit = merit
            best_point = ([xb.copy() for xb in x], y.copy(), u.copy(),
                          [zb.copy() for zb in z])

        if pres <= tol and dres <= tol and gap <= tol:
            status = "optimal"
            break
        if sign_exit_band is not None:
            # internal min-form bounds; caller interprets through sense
            if bound_hi < -10.0 * sign_exit_band or bound_lo > 10.0 * sign_exit_band:
                status = "sign_resolved"
                break
        if merit > 1e3 * best_merit and best_merit < 1e-5:
            # the late central path has gone numerically sour; keep the best
            break
        if mu > 1e12 * tau or np.linalg.norm(y) > 1e13:
            if _try_infeasibility_certificate(ws, y):
                status = "infeasible_certificate"
            else:
                status = "max_iterations"
            break

        scal = [
            _BlockScaling(x[b_], z[b_], ws.need_w[b_]) for b_ in range(ws.nb)
        ]
        try:
            schur_mat = _assemble_schur_sym(ws, scal)
            schur = _SchurSolver(schur_mat, f_full)
        except NumericalFailureError:
            status = "max_iterations"
            break

        lam = [s.lam for s in scal]
        rhat_d = [scal[b_].g.T @ r_d[b_] @ scal[b_].g for b_ in range(ws.nb)]
        denom = [lam[b_][:, None] + lam[b_][None, :] for b_ in range(ws.nb)]

        def directions(rc_hat):
            """Newton step for a given scaled complementarity rhs."""
            dxz = [2.0 * rc_hat[b_] / denom[b_] for b_ in range(ws.nb)]
            v = [scal[b_].g @ (dxz[b_] - rhat_d[b_]) @ scal[b_].g.T for b_ in range(ws.nb)]
            rhs = r_all - ws.apply_rows(v)
            dy, du = schur.solve(rhs, r_f, schur_mat=schur_mat)
            aty_d = ws.apply_rows_adjoint(dy)
            dz = [r_d[b_] - aty_d[b_] for b_ in range(ws.nb)]
            dz_hat = [scal[b_].g.T @ dz[b_] @ scal[b_].g for b_ in range(ws.nb)]
            dx_hat = [dxz[b_] - dz_hat[b_] for b_ in range(ws.nb)]
            dx = [scal[b_].g @ dx_hat[b_] @ scal[b_].g.T for b_ in range(ws.nb)]
            return dx, dx_hat, dy, du, dz, dz_hat

        # predictor
        rc_aff = [-np.diag(lam[b_] ** 2) for b_ in range(ws.nb)]
        dx_a, dxh_a, dy_a, du_a, dz_a, dzh_a = directions(rc_aff)
        ap = min((_max_step(lam[b_], dxh_a[b_]) for b_ in range(ws.nb)), default=np.inf)
        ad = min((_max_step(lam[b_], dzh_a[b_]) for b_ in range(ws.nb)), default=np.inf)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(
            np.sum((np.diag(lam[b_]) + ap * dxh_a[b_]) * (np.diag(lam[b_]) + ad * dzh_a[b_]))
            for b_ in range(ws.nb)
        ) / ws.n_cone
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        # corrector
        rc = []
        for b_ in range(ws.nb):
            cross = dxh_a[b_] @ dzh_a[b_]
            rc.append(sigma * mu * np.eye(len(lam[b_])) - np.diag(lam[b_] ** 2)
                      - 0.5 * (cross + cross.T))
        dx, dxh, dy, du, dz, dzh = directions(rc)
        ap = min((_max_step(lam[b_], dxh[b_]) for b_ in range(ws.nb)), default=np.inf)
        ad = min((_max_step(lam[b_], dzh[b_]) for b_ in range(ws.nb)), default=np.inf)
        ap = min(1.0, _STEP_FRAC * ap)
        ad = min(1.0, _STEP_FRAC * ad)

        for b_ in range(ws.nb):
            x[b_] = x[b_] + ap * dx[b_]
            x[b_] = 0.5 * (x[b_] + x[b_].T)
            z[b_] = z[b_] + ad * dz[b_]
            z[b_] = 0.5 * (z[b_] + z[b_].T)
        y = y + ad * dy
        u = u + ap * du

    if status != "optimal" and best_point is not None:
        cur_r = ws.b_full - ws.apply_rows(x) - (f_full @ u if ws.n_f else 0.0)
        cur_aty = ws.apply_rows_adjoint(y)
        cur_rd = [ws.c_blocks[b_] - z[b_] - cur_aty[b_] for b_ in range(ws.nb)]
        cur_merit = max(
            np.linalg.norm(cur_r) / (1.0 + ws.b_norm),
            np.sqrt(sum(np.sum(m * m) for m in cur_rd)) / (1.0 + ws.c_norm),
        )
        if best_merit < cur_merit:
            x, y, u, z = best_point

    # final residual refresh
    r_all = ws.b_full - ws.apply_rows(x)
    if ws.n_f:
        r_all -= f_full @ u
    aty = ws.apply_rows_adjoint(y)
    r_d = [ws.c_blocks[b_] - z[b_] - aty[b_] for b_ in range(ws.nb)]
    r_f = ws.c_free - f_full.T @ y if ws.n_f else np.zeros(0)
    pobj_int = sum(np.sum(ws.c_blocks[b_] * x[b_]) for b_ in range(ws.nb)) + float(ws.c_free @ u)
    dobj_int = float(ws.b_full @ y)
    pres = np.linalg.norm(r_all) / (1.0 + ws.b_norm)
    dres = np.sqrt(sum(np.sum(m * m) for m in r_d) + np.sum(r_f**2)) / (1.0 + ws.c_norm)
    gap = abs(pobj_int - dobj_int) / (1.0 + abs(pobj_int) + abs(dobj_int))
    if pres <= 10 * tol:
        bound_hi = min(bound_hi, pobj_int + abs(pobj_int) * 10 * tol + 10 * tol)
    if dres <= 10 * tol:
        bound_lo = max(bound_lo, dobj_int - abs(dobj_int) * 10 * tol - 10 * tol)

    sign = ws.sign
    obj = sign * 0.5 * (pobj_int + dobj_int)
    lo, hi = (sign * bound_lo, sign * bound_hi) if sign > 0 else (sign * bound_hi, sign * bound_lo)
    return SdpSolution(
        status=status,
        primal_blocks=[xb.copy() for xb in x],
        dual_vector=y[: ws.m_g].copy(),
        objective_value=float(obj),
        kkt_residuals=(float(pres), float(dres), float(gap)),
        iterations=it,
        free_values=u.copy() if ws.n_f else None,
        dual_blocks=[zb.copy() for zb in z],
        bound_lo=float(lo),
        bound_hi=float(hi),
    )


def _try_infeasibility_certificate(ws: _Workspace, y: np.ndarray) -> bool:
    """Farkas check on the (scaled) diverging dual ray."""
    scale = np.max(np.abs(y))
    if scale <= 0:
        return False
    yh = y / scale
    if ws.b_full @ yh <= 1e-10:
        return False
    if ws.n_f and np.max(np.abs(ws.f_cols.T @ yh[: ws.m_g])) > 1e-8:
        return False
    aty = ws.apply_rows_adjoint(yh)
    return all(np.linalg.eigvalsh(0.5 * (m + m.T))[-1] <= 1e-8 for m in aty)


# ---------------------------------------------------------------------------
# feasibility margin front-end


def feasibility_margin(problem: SdpProblem, slack_block_ids, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER, sign_exit: bool = False):
    """Maximal uniform PSD slack t of the equality system.

    Solves max t subject to the problem's equality rows with each selected
    block X_j replaced by X_j - t I >= 0 (other blocks plain PSD). A link
    group must have both ends selected or neither (the t terms cancel).
    Returns (margin, SdpSolution).
    """
    slack = set(int(s) for s in slack_block_ids)
    if not slack:
        raise ValueError("slack_block_ids must be nonempty")
    for g in problem.link_groups:
        if (g.src in slack) != (g.dst in slack):
            raise ValueError("a link group must be slacked on both ends or neither")
    m = problem.n_generic
    fcol = np.zeros((m, 1))
    for blk in slack:
        rows = problem.rows[blk]
        if rows is not None and rows.idx.size:
            fcol[rows.idx, 0] += np.trace(rows.mats, axis1=1, axis2=2)
    if problem.free_objective is not None:
        raise ValueError("margin slack on a problem that already has free variables")
    slacked = SdpProblem(
        problem.block_dims,
        tuple(None for _ in problem.block_dims),
        problem.rows,
        problem.b,
        sense="max",
        free_objective=np.array([1.0]),
        free_cols=fcol,
        link_groups=problem.link_groups,
        rows_independent=problem.rows_independent,
    )
    sol = solve(slacked, tol=tol, max_iter=max_iter,
                sign_exit_band=MARGIN_BAND if sign_exit else None)
    if sol.status == "sign_resolved":
        margin = sol.bound_lo if sol.bound_lo > MARGIN_BAND else sol.bound_hi
    else:
        margin = sol.objective_value
    return float(margin), sol


# ---------------------------------------------------------------------------
# SDPA sparse export (debug interface)


def write_sdpa(problem: SdpProblem, path) -> None:
    """Dump the problem in SDPA sparse format for external cross-checks.

    Link groups are expanded to explicit rows. Constraint 0 carries the
    objective; entries are 1-based, upper triangle only.
    """
    if problem.n_free:
        raise ValueError("SDPA export does not support free variables")
    nb = len(problem.block_dims)
    rows_expanded = []  # (row_index, block, mat)
    for blk, rows in enumerate(problem.rows):
        if rows is None:
            continue
        for k, i in enumerate(rows.idx):
            rows_expanded.append((int(i), blk, rows.mats[k]))
    m = problem.n_generic
    b_list = list(problem.b)

    def _svec_basis_mat(n, p):
        iu, ju, _, _ = _svec_index(n)
        e = np.zeros((n, n))
        val = 1.0 if iu[p] == ju[p] else 1.0 / np.sqrt(2.0)
        e[iu[p], ju[p]] = val
        e[ju[p], iu[p]] = val
        return e

    for g in problem.link_groups:
        n = problem.block_dims[g.dst]
        for p in range(svec_len(n)):
            rows_expanded.append((m, g.dst, _svec_basis_mat(n, p)))
            rows_expanded.append((m, g.src, -_svec_basis_mat(n, g.perm[p])))
            b_list.append(0.0)
            m += 1
    with open(path, "w") as fh:
        fh.write(f"{m}\n{nb}\n")
        fh.write(" ".join(str(n) for n in problem.block_dims) + "\n")
        fh.write(" ".join(f"{v:.17g}" for v in b_list) + "\n")
        sign = 1.0 if problem.sense == "max" else -1.0  # SDPA maximizes tr(F0 Y)
        for blk, c in enumerate(problem.objective):
            if c is None:
                continue
            for i in range(c.shape[0]):
                for j in range(i, c.shape[1]):
                    if c[i, j] != 0.0:
                        fh.write(f"0 {blk + 1} {i + 1} {j + 1} {sign * c[i, j]:.17g}\n")
        for row, blk, mat in rows_expanded:
            for i in range(mat.shape[0]):
                for j in range(i, mat.shape[1]):
                    if mat[i, j] != 0.0:
                        fh.write(f"{row + 1} {blk + 1} {i + 1} {j + 1} {mat[i, j]:.17g}\n")
