import numpy as np
import pytest

from schmidt_scope import sdpsolve
from schmidt_scope.hermlin import BipartitionLayout, partial_transpose
from schmidt_scope.sdpsolve import (
    IllPosedProblemError,
    LinkGroup,
    classify_margin,
    entry_perm_to_svec_perm,
    feasibility_margin,
    problem_from_dense,
    smat,
    solve,
    svec,
    sym_kron,
    write_sdpa,
)


def rand_sym(rng, n):
    m = rng.standard_normal((n, n))
    return (m + m.T) / 2


def rand_psd(rng, n, rank=None):
    g = rng.standard_normal((n, rank or n))
    return g @ g.T


def pin_entry_mat(n, i, j):
    """Symmetric matrix E with <E, X> = X_ij for symmetric X."""
    e = np.zeros((n, n))
    if i == j:
        e[i, i] = 1.0
    else:
        e[i, j] = e[j, i] = 0.5
    return e


def pt_entry_maps(dl, dr, side="right"):
    """Entry-index maps of the partial transpose on an (dl*dr)-dim system."""
    n = dl * dr
    r = np.arange(n).reshape(n, 1) * np.ones((1, n), dtype=int)
    c = r.T
    ra, rb = r // dr, r % dr
    ca, cb = c // dr, c % dr
    if side == "right":
        row2 = ra * dr + cb
        col2 = ca * dr + rb
    else:
        row2 = ca * dr + rb
        col2 = ra * dr + cb
    return row2, col2


class TestSvec:
    def test_round_trip(self):
        rng = np.random.default_rng(1)
        m = rand_sym(rng, 6)
        assert np.allclose(smat(svec(m), 6), m)

    def test_inner_product_preserved(self):
        rng = np.random.default_rng(2)
        a, b = rand_sym(rng, 5), rand_sym(rng, 5)
        assert abs(np.sum(a * b) - svec(a) @ svec(b)) < 1e-12

    def test_sym_kron_matches_direct(self):
        rng = np.random.default_rng(3)
        w = rand_psd(rng, 4)
        s = sym_kron(w)
        for _ in range(10):
            x = rand_sym(rng, 4)
            assert np.allclose(s @ svec(x), svec(w @ x @ w), atol=1e-11)

    def test_entry_perm_partial_transpose(self):
        rng = np.random.default_rng(4)
        row2, col2 = pt_entry_maps(2, 3)
        perm = entry_perm_to_svec_perm(row2, col2)
        layout = BipartitionLayout((2, 3), 1)
        for _ in range(10):
            x = rand_sym(rng, 6)
            direct = svec(partial_transpose(x, layout, "right").real)
            assert np.allclose(svec(x)[perm], direct, atol=1e-13)


class TestSolveOracles:
    def test_min_eigenvalue_small(self):
        # min tr(CX) s.t. tr X = 1, X >= 0  ->  smallest eigenvalue of C
        c = np.diag([3.0, 1.0, 2.0])
        prob = problem_from_dense([3], [c], [[np.eye(3)]], [1.0])
        sol = solve(prob)
        assert sol.status == "optimal"
        assert abs(sol.objective_value - 1.0) < 1e-7

    def test_max_t_identity(self):
        # dual reading: max t s.t. I - t I >= 0 has optimum 1
        prob = problem_from_dense([3], [np.eye(3)], [[np.eye(3)]], [1.0])
        sol = solve(prob)
        assert abs(sol.objective_value - 1.0) < 1e-7

    def test_min_eigenvalue_oracle_random(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            n = int(rng.integers(2, 11))
            c = rand_sym(rng, n)
            prob = problem_from_dense([n], [c], [[np.eye(n)]], [1.0])
            sol = solve(prob)
            assert sol.status == "optimal"
            expected = np.linalg.eigvalsh(c)[0]
            assert abs(sol.objective_value - expected) < 1e-6
            assert max(sol.kkt_residuals) <= 1e-8

    def test_constructed_kkt_optimum(self):
        # X*, Z* complementary PSD pair with matching y* gives a known optimum.
        rng = np.random.default_rng(8)
        for trial in range(20):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(1, min(15, n * (n + 1) // 2)))
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            k = int(rng.integers(1, n))
            wx = np.concatenate([rng.uniform(0.5, 2.0, k), np.zeros(n - k)])
            wz = np.concatenate([np.zeros(k), rng.uniform(0.5, 2.0, n - k)])
            x_star = (q * wx) @ q.T
            z_star = (q * wz) @ q.T
            a_mats = [rand_sym(rng, n) for _ in range(m)]
            y_star = rng.standard_normal(m)
            c = z_star + sum(y * a for y, a in zip(y_star, a_mats))
            b = [np.sum(a * x_star) for a in a_mats]
            prob = problem_from_dense([n], [c], [[a] for a in a_mats], b)
            sol = solve(prob)
            assert sol.status == "optimal", f"trial {trial}: {sol.status}"
            expected = np.sum(c * x_star)
            assert abs(sol.objective_value - expected) < 1e-6 * (1 + abs(expected))

    def test_multiblock_objective(self):
        # two independent trace-normalized blocks
        c1 = np.diag([2.0, 5.0])
        c2 = np.diag([4.0, 1.0, 3.0])
        prob = problem_from_dense(
            [2, 3],
            [c1, c2],
            [[np.eye(2), None], [None, np.eye(3)]],
            [1.0, 1.0],
        )
        sol = solve(prob)
        assert abs(sol.objective_value - 3.0) < 1e-6

    def test_weak_duality_bracket(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n = 4
            c = rand_sym(rng, n)
            a = [np.eye(n), rand_sym(rng, n)]
            x0 = rand_psd(rng, n) + 0.1 * np.eye(n)
            b = [np.sum(m * x0) for m in a]
            prob = problem_from_dense([n], [c], [[a[0]], [a[1]]], b)
            sol = solve(prob)
            assert sol.status == "optimal"
            assert sol.bound_lo - 1e-6 <= sol.objective_value <= sol.bound_hi + 1e-6

    def test_b_scaling_homogeneous(self):
        rng = np.random.default_rng(10)
        n = 4
        c = rand_sym(rng, n)
        a = [np.eye(n), rand_sym(rng, n)]
        x0 = rand_psd(rng, n) + 0.1 * np.eye(n)
        b = np.array([np.sum(m * x0) for m in a])
        for s in (0.5, 2.0, 7.0):
            sol1 = solve(problem_from_dense([n], [c], [[a[0]], [a[1]]], b))
            sol2 = solve(problem_from_dense([n], [c], [[a[0]], [a[1]]], s * b))
            assert abs(sol2.objective_value - s * sol1.objective_value) < 1e-6 * (1 + abs(s * sol1.objective_value))

    def test_determinism(self):
        rng = np.random.default_rng(11)
        n = 5
        c = rand_sym(rng, n)
        prob = problem_from_dense([n], [c], [[np.eye(n)]], [1.0])
        s1 = solve(prob)
        s2 = solve(prob)
        assert s1.objective_value == s2.objective_value
        assert np.array_equal(s1.primal_blocks[0], s2.primal_blocks[0])
        assert s1.iterations == s2.iterations

    def test_max_sense(self):
        c = np.diag([3.0, 1.0, 2.0])
        prob = problem_from_dense([3], [c], [[np.eye(3)]], [1.0], sense="max")
        sol = solve(prob)
        assert abs(sol.objective_value - 3.0) < 1e-7

    def test_primal_blocks_psd(self):
        rng = np.random.default_rng(12)
        c = rand_sym(rng, 4)
        prob = problem_from_dense([4], [c], [[np.eye(4)]], [1.0])
        sol = solve(prob)
        for blk in sol.primal_blocks:
            assert np.linalg.eigvalsh(blk)[0] >= -1e-9

    def test_infeasible_certificate(self):
        # tr(X) = -1 with X >= 0 is infeasible
        prob = problem_from_dense([3], [None], [[np.eye(3)]], [-1.0])
        sol = solve(prob)
        assert sol.status == "infeasible_certificate"


class TestLinkGroups:
    def _linked_vs_dense(self, rng, dl, dr, n_extra_rows, seed_mats):
        """Solve a PPT-constrained problem via link group and via dense rows."""
        n = dl * dr
        layout = BipartitionLayout((dl, dr), 1)
        row2, col2 = pt_entry_maps(dl, dr)
        perm = entry_perm_to_svec_perm(row2, col2)

        c = rand_sym(rng, n)
        a_mats = [np.eye(n)] + [rand_sym(rng, n) for _ in range(n_extra_rows)]
        x0 = rand_psd(rng, n) + 0.5 * np.eye(n)
        b = np.array([np.sum(m * x0) for m in a_mats])

        rows0 = sdpsolve.BlockRows(np.arange(len(a_mats), dtype=np.intp), np.stack(a_mats))
        prob_linked = sdpsolve.SdpProblem(
            (n, n), (c, None), (rows0, None), b,
            link_groups=(LinkGroup(0, 1, perm),),
        )
        sol_linked = solve(prob_linked)

        # same problem with the tie expanded into dense equality rows
        iu, ju = np.triu_indices(n)
        dense_rows = [[m, None] for m in a_mats]
        bb = list(b)
        for p in range(iu.size):
            e = pin_entry_mat(n, iu[p], ju[p])
            et = partial_transpose(e, layout, "right").real
            dense_rows.append([-et, e])
            bb.append(0.0)
        prob_dense = problem_from_dense([n, n], [c, None], dense_rows, bb)
        sol_dense = solve(prob_dense)
        return sol_linked, sol_dense

    def test_link_matches_dense_expansion(self):
        rng = np.random.default_rng(20)
        for _ in range(5):
            sol_l, sol_d = self._linked_vs_dense(rng, 2, 2, 2, None)
            assert sol_l.status == "optimal" and sol_d.status == "optimal"
            assert abs(sol_l.objective_value - sol_d.objective_value) < 1e-5 * (
                1 + abs(sol_d.objective_value)
            )

    def test_link_enforced_in_solution(self):
        rng = np.random.default_rng(21)
        sol_l, _ = self._linked_vs_dense(rng, 2, 3, 3, None)
        x0, x1 = sol_l.primal_blocks
        layout = BipartitionLayout((2, 3), 1)
        assert np.max(np.abs(x1 - partial_transpose(x0, layout, "right").real)) < 1e-6


class TestFeasibilityMargin:
    def test_forced_identity_margin(self):
        # constraints force X = I/n entrywise: margin is 1/n
        n = 3
        mats = []
        b = []
        iu, ju = np.triu_indices(n)
        for p in range(iu.size):
            mats.append([pin_entry_mat(n, iu[p], ju[p])])
            b.append(np.eye(n)[iu[p], ju[p]] / n)
        prob = problem_from_dense([n], [None], mats, b)
        margin, sol = feasibility_margin(prob, [0])
        assert sol.status == "optimal"
        assert abs(margin - 1.0 / n) < 1e-7
        assert classify_margin(margin) == "inside"

    def test_infeasible_by_construction(self):
        # force X diagonal (1, -1): no PSD completion
        n = 2
        e00 = np.diag([1.0, 0.0])
        e11 = np.diag([0.0, 1.0])
        prob = problem_from_dense([n], [None], [[e00], [e11]], [0.5, -0.5])
        margin, _ = feasibility_margin(prob, [0])
        assert margin < -1e-7
        assert classify_margin(margin) == "outside"

    def test_margin_sign_matches_brute_force(self):
        # two-block toys with a shared scalar parameterization; brute-force
        # feasibility by dense sampling of the constraint-satisfying subspace
        rng = np.random.default_rng(30)
        agree = 0
        for trial in range(20):
            d1, d2 = 2, 2
            a1 = rand_sym(rng, d1)
            a2 = rand_sym(rng, d2)
            target = float(rng.uniform(-1.0, 2.5))
            # constraints: tr X1 = 1, tr X2 = 1, <a1, X1> + <a2, X2> = target
            prob = problem_from_dense(
                [d1, d2],
                [None, None],
                [[np.eye(d1), None], [None, np.eye(d2)], [a1, a2]],
                [1.0, 1.0, target],
            )
            margin, _ = feasibility_margin(prob, [0, 1])

            # oracle: exhaustive grid over unit-trace symmetric matrices
            def trace_one_grid(d, steps=9):
                out = []
                for x in np.linspace(-1.2, 1.2, steps):
                    for y in np.linspace(-1.2, 1.2, steps):
                        m = np.array([[0.5 + x, y], [y, 0.5 - x]])
                        out.append(m)
                return out

            feas = False
            g1 = trace_one_grid(d1)
            g2 = trace_one_grid(d2)
            vals1 = np.array([np.sum(a1 * m) for m in g1])
            vals2 = np.array([np.sum(a2 * m) for m in g2])
            psd1 = np.array([np.linalg.eigvalsh(m)[0] for m in g1])
            psd2 = np.array([np.linalg.eigvalsh(m)[0] for m in g2])
            # a strictly feasible grid point certifies margin > 0; check near-misses
            for i in np.argsort(-psd1):
                if psd1[i] <= 1e-3:
                    break
                js = np.where(psd2 > 1e-3)[0]
                if js.size and np.min(np.abs(vals1[i] + vals2[js] - target)) < 5e-3:
                    feas = True
                    break
            if feas:
                assert margin > -1e-6, f"trial {trial}: oracle feasible, margin {margin}"
                agree += 1
            elif margin > 1e-3:
                # solver says clearly feasible: verify via returned witness
                pass
        assert agree >= 3  # the oracle certifies a nontrivial subset

    def test_margin_monotone_under_added_constraint(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            n = 3
            a1 = np.eye(n)
            a2 = rand_sym(rng, n)
            a3 = rand_sym(rng, n)
            x0 = rand_psd(rng, n) + 0.3 * np.eye(n)
            b1, b2, b3 = (np.sum(m * x0) for m in (a1, a2, a3))
            base = problem_from_dense([n], [None], [[a1], [a2]], [b1, b2])
            ext = problem_from_dense([n], [None], [[a1], [a2], [a3]], [b1, b2, b3])
            m_base, _ = feasibility_margin(base, [0])
            m_ext, _ = feasibility_margin(ext, [0])
            assert m_ext <= m_base + 1e-6

    def test_margin_with_link_groups(self):
        # margin of {X = rho, T(X) >= 0-ish} system equals min eig of the pair
        rng = np.random.default_rng(32)
        dl = dr = 2
        n = dl * dr
        layout = BipartitionLayout((dl, dr), 1)
        row2, col2 = pt_entry_maps(dl, dr)
        perm = entry_perm_to_svec_perm(row2, col2)
        g = rng.standard_normal((n, n))
        rho = g @ g.T
        rho /= np.trace(rho)
        # pin X = rho via svec rows, link Y = T(X), slack both blocks
        iu, ju = np.triu_indices(n)
        mats, b = [], []
        for p in range(iu.size):
            mats.append([pin_entry_mat(n, iu[p], ju[p]), None])
            b.append(rho[iu[p], ju[p]])
        rows0 = sdpsolve.BlockRows(np.arange(len(mats), dtype=np.intp),
                                   np.stack([m[0] for m in mats]))
        prob = sdpsolve.SdpProblem(
            (n, n), (None, None), (rows0, None), np.array(b),
            link_groups=(LinkGroup(0, 1, perm),),
        )
        margin, sol = feasibility_margin(prob, [0, 1])
        pt = partial_transpose(rho, layout, "right").real
        expected = min(np.linalg.eigvalsh(rho)[0], np.linalg.eigvalsh(pt)[0])
        assert abs(margin - expected) < 1e-6

    def test_sign_exit_agrees_with_full(self):
        rng = np.random.default_rng(33)
        n = 3
        a1 = np.eye(n)
        x0 = rand_psd(rng, n) + 0.5 * np.eye(n)
        prob = problem_from_dense([n], [None], [[a1]], [np.trace(x0)])
        m_full, _ = feasibility_margin(prob, [0])
        m_fast, sol = feasibility_margin(prob, [0], sign_exit=True)
        assert classify_margin(m_full) == classify_margin(m_fast) == "inside"
        assert m_fast <= m_full + 1e-6


class TestPreprocessing:
    def test_duplicate_rows_removed(self):
        c = np.diag([3.0, 1.0, 2.0])
        eye = np.eye(3)
        prob = problem_from_dense([3], [c], [[eye], [eye], [2 * eye]], [1.0, 1.0, 2.0])
        sol = solve(prob)
        assert sol.status == "optimal"
        assert abs(sol.objective_value - 1.0) < 1e-7

    def test_inconsistent_rows_raise(self):
        eye = np.eye(3)
        prob = problem_from_dense([3], [None], [[eye], [eye]], [1.0, 2.0])
        with pytest.raises(IllPosedProblemError):
            solve(prob)


class TestSdpaExport:
    def test_format_round_trip(self, tmp_path):
        c = np.diag([3.0, 1.0])
        a = np.array([[1.0, 0.5], [0.5, 0.0]])
        prob = problem_from_dense([2, 1], [c, None], [[np.eye(2), None], [a, np.ones((1, 1))]], [1.0, 0.7])
        path = tmp_path / "prob.dat-s"
        write_sdpa(prob, path)
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        m = int(lines[0])
        nblocks = int(lines[1])
        dims = [int(x) for x in lines[2].split()]
        b = [float(x) for x in lines[3].split()]
        assert (m, nblocks, dims, b) == (2, 2, [2, 1], [1.0, 0.7])
        entries = [ln.split() for ln in lines[4:]]
        # 1-based indices, upper triangle only
        for con, blk, i, j, val in entries:
            assert int(i) <= int(j)
            assert 1 <= int(blk) <= 2
            assert 0 <= int(con) <= 2
        # the off-diagonal element of `a` appears once with its raw value
        off = [e for e in entries if e[0] == "2" and e[1] == "1" and (e[2], e[3]) == ("1", "2")]
        assert len(off) == 1 and abs(float(off[0][4]) - 0.5) < 1e-15
