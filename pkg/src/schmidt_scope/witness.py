"""Nonconvex search for pure-state fidelity witnesses.

Maximizes the witness violation <psi|rho|psi> - sum_{i<D} sigma_i(psi)^2
over unit vectors psi by projected gradient ascent with Armijo backtracking
and multiple restarts (dominant eigenvector, aligned maximally entangled
state, Haar-random). A positive violation certifies that rho is detectable
by a pure-state fidelity witness at dimension D; a non-positive best value
is inconclusive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from schmidt_scope import hermlin
from schmidt_scope.qstate import BipartiteState, PureBipartiteState, RngStream, box_muller_normals

MAX_ITER = 500
GAIN_TOL = 1e-10
ARMIJO_SHRINK = 0.5
ARMIJO_SLOPE = 1e-4
DEGENERACY_GAP = 1e-6


class DegenerateSpectrumError(ValueError):
    """Objective is not differentiable: spectrum degenerate at the cut."""


@dataclass(frozen=True)
class WitnessCandidate:
    psi: PureBipartiteState
    dimension: int
    violation: float
    restarts_used: int


def _objective(rho: np.ndarray, vec: np.ndarray, d_a: int, d_b: int, dim: int) -> float:
    fid = float(np.real(np.vdot(vec, rho @ vec)))
    s = np.linalg.svd(vec.reshape(d_a, d_b), compute_uv=False)
    return fid - float(np.sum(s[: dim - 1] ** 2))


def _gradient(rho: np.ndarray, vec: np.ndarray, d_a: int, d_b: int, dim: int,
              degeneracy_avg: bool = True) -> np.ndarray:
    """Ambient complex gradient g with df = Re<delta, g>."""
    g_fid = 2.0 * (rho @ vec)
    u, s, vh = np.linalg.svd(vec.reshape(d_a, d_b))
    w = np.zeros(s.size)
    w[: dim - 1] = 1.0
    if degeneracy_avg and dim - 1 < s.size and s.size and dim >= 2:
        gap_set = np.abs(s - s[dim - 2]) < 1e-9 if dim - 2 < s.size else np.zeros(s.size, bool)
        if gap_set.sum() > 1 and dim - 1 < s.size and gap_set[dim - 1]:
            inside = int(np.sum(gap_set[: dim - 1]))
            w[gap_set] = inside / gap_set.sum()
    gm = (u * (2.0 * w * s)) @ vh
    return g_fid - gm.ravel()


def search_witness(rho: BipartiteState, dim: int, restarts: int = 64,
                   rng: RngStream | None = None) -> WitnessCandidate:
    """Best violation over restarts of projected gradient ascent on the sphere.

    Deterministic for a fixed rng seed; ties resolve to the lowest restart
    index. Positive violation certifies D-faithfulness of rho.
    """
    if dim < 2:
        raise ValueError("witness dimension must be >= 2")
    if restarts < 1:
        raise ValueError("need at least one restart")
    rng = rng or RngStream(0)
    d_a, d_b, n = rho.d_a, rho.d_b, rho.d_a * rho.d_b
    mat = rho.rho

    starts = []
    w, v = hermlin.hermitian_eig(mat)
    starts.append(v[:, 0])
    starts.append(_aligned_max_entangled(rho))
    for r in range(max(0, restarts - len(starts))):
        gen = rng.substream(r + 2).generator()
        vec = box_muller_normals(gen, n) + 1j * box_muller_normals(gen, n)
        starts.append(vec / np.linalg.norm(vec))
    starts = starts[:restarts]

    best_val = -np.inf
    best_vec = starts[0]
    for vec in starts:
        val, out = _ascend(mat, vec, d_a, d_b, dim)
        if val > best_val + 1e-15:
            best_val, best_vec = val, out
    psi = PureBipartiteState(best_vec, d_a, d_b)
    return WitnessCandidate(psi, dim, float(best_val), restarts)


def _aligned_max_entangled(rho: BipartiteState) -> np.ndarray:
    """Maximally entangled vector over the top marginal eigenvector pairs."""
    wa, va = hermlin.hermitian_eig(rho.marginal_a())
    wb, vb = hermlin.hermitian_eig(rho.marginal_b())
    m = min(int(np.sum(wa > 1e-12)), int(np.sum(wb > 1e-12)))
    m = max(m, 1)
    vec = np.zeros(rho.d_a * rho.d_b, dtype=np.complex128)
    for i in range(m):
        vec += np.kron(va[:, i], vb[:, i].conj())
    return vec / np.linalg.norm(vec)


def _ascend(mat: np.ndarray, vec: np.ndarray, d_a: int, d_b: int, dim: int):
    val = _objective(mat, vec, d_a, d_b, dim)
    for _ in range(MAX_ITER):
        g = _gradient(mat, vec, d_a, d_b, dim)
        gt = g - np.vdot(vec, g).real * vec
        gnorm2 = float(np.real(np.vdot(gt, gt)))
        if gnorm2 < 1e-24:
            break
        step = 1.0
        improved = False
        while step > 1e-12:
            cand = vec + step * gt
            cand /= np.linalg.norm(cand)
            cand_val = _objective(mat, cand, d_a, d_b, dim)
            if cand_val >= val + ARMIJO_SLOPE * step * gnorm2:
                improved = True
                break
            step *= ARMIJO_SHRINK
        if not improved:
            break
        gain = cand_val - val
        vec, val = cand, cand_val
        if gain < GAIN_TOL * max(1.0, abs(val)):
            break
    return val, vec


def gradient_check(rho: BipartiteState, psi: PureBipartiteState, dim: int,
                   step: float = 1e-5) -> float:
    """Max relative deviation of the analytic gradient from central differences.

    Requires a spectral gap at the cut (degenerate spectra are rejected, not
    differentiated).
    """
    d_a, d_b = psi.d_a, psi.d_b
    s = np.linalg.svd(psi.coefficient_matrix(), compute_uv=False)
    lam = s**2
    if dim - 1 < lam.size and lam[dim - 2] - lam[dim - 1] <= DEGENERACY_GAP:
        raise DegenerateSpectrumError(
            f"squared-coefficient gap at the cut is "
            f"{lam[dim - 2] - lam[dim - 1]:.2e} <= {DEGENERACY_GAP:g}"
        )
    mat = rho.rho
    vec = psi.amplitudes.copy()
    n = vec.size

    g = _gradient(mat, vec, d_a, d_b, dim, degeneracy_avg=False)
    g_real = np.concatenate([g.real, g.imag])

    def f(x):
        v = x[:n] + 1j * x[n:]
        return _objective(mat, v, d_a, d_b, dim)

    x0 = np.concatenate([vec.real, vec.imag])
    fd = np.empty(2 * n)
    for i in range(2 * n):
        xp = x0.copy()
        xp[i] += step
        xm = x0.copy()
        xm[i] -= step
        fd[i] = (f(xp) - f(xm)) / (2 * step)
    scale = max(np.max(np.abs(g_real)), 1e-12)
    return float(np.max(np.abs(fd - g_real)) / scale)
