"""Bipartite quantum states, Schmidt decomposition, random-state samplers.

Samplers follow the Hilbert-Schmidt / Bures / real-Wishart constructions and
take explicit counter-based RNG streams so Monte-Carlo surveys parallelize
reproducibly: identical (seed, stream_index) always yields identical draws,
independent of worker count or scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from schmidt_scope import hermlin
from schmidt_scope.hermlin import BipartitionLayout

HERM_TOL = 1e-10
TRACE_TOL = 1e-10
EIG_TOL = 1e-10
NORM_TOL = 1e-12


class StateValidationError(ValueError):
    """A state violates one of its invariants; the message names which."""


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, stream_index) fixes the sequence."""

    seed: int
    stream_index: int = 0

    def generator(self) -> Generator:
        return Generator(Philox(key=[self.seed % 2**64, self.stream_index % 2**64]))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, index)


def box_muller_normals(gen: Generator, n: int) -> np.ndarray:
    """n standard normals via Box-Muller, consuming exactly 2*ceil(n/2) uniforms."""
    half = (n + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1], keeps the log finite
    u2 = gen.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * half)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n]


def _normal_matrix(gen: Generator, rows: int, cols: int) -> np.ndarray:
    return box_muller_normals(gen, rows * cols).reshape(rows, cols)


def _ginibre(gen: Generator, n: int) -> np.ndarray:
    return _normal_matrix(gen, n, n) + 1j * _normal_matrix(gen, n, n)


def haar_unitary(n: int, rng: RngStream) -> np.ndarray:
    """Haar-random unitary via QR of a complex Ginibre matrix with phase-fixed R."""
    gen = rng.generator()
    q, r = np.linalg.qr(_ginibre(gen, n))
    d = np.diagonal(r)
    return q * (d / np.abs(d))


@dataclass(frozen=True)
class BipartiteState:
    """Density matrix on C^{d_a} ⊗ C^{d_b} (Hermitian, unit trace, PSD)."""

    rho: np.ndarray
    d_a: int
    d_b: int

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.complex128)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        n = self.d_a * self.d_b
        if rho.shape != (n, n):
            raise StateValidationError(
                f"dimension: rho shape {rho.shape} != d_a*d_b = {n}"
            )
        asym = np.max(np.abs(rho - rho.conj().T))
        if asym > HERM_TOL:
            raise StateValidationError(f"hermiticity: max |rho - rho†| = {asym:.3e} > {HERM_TOL:g}")
        tr = np.trace(rho)
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateValidationError(f"unit_trace: trace = {tr:.12g}")
        wmin = np.linalg.eigvalsh(hermlin.hermitize(rho))[0]
        if wmin < -EIG_TOL:
            raise StateValidationError(f"positivity: min eigenvalue = {wmin:.3e}")

    @property
    def layout(self) -> BipartitionLayout:
        return BipartitionLayout((self.d_a, self.d_b), 1)

    def marginal_a(self) -> np.ndarray:
        return hermlin.partial_trace(self.rho, self.layout, keep=[0])

    def marginal_b(self) -> np.ndarray:
        return hermlin.partial_trace(self.rho, self.layout, keep=[1])

    def is_real(self, tol: float = 1e-13) -> bool:
        return float(np.max(np.abs(self.rho.imag))) <= tol


@dataclass(frozen=True)
class PureBipartiteState:
    """Unit-norm state vector on C^{d_a} ⊗ C^{d_b}."""

    amplitudes: np.ndarray
    d_a: int
    d_b: int

    def __post_init__(self):
        vec = np.asarray(self.amplitudes, dtype=np.complex128).ravel()
        vec.setflags(write=False)
        object.__setattr__(self, "amplitudes", vec)
        if vec.shape != (self.d_a * self.d_b,):
            raise StateValidationError(
                f"dimension: amplitude length {vec.shape[0]} != d_a*d_b = {self.d_a * self.d_b}"
            )
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > NORM_TOL:
            raise StateValidationError(f"unit_norm: |psi| = {norm:.15g}")

    def coefficient_matrix(self) -> np.ndarray:
        return self.amplitudes.reshape(self.d_a, self.d_b)

    def projector(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def to_state(self) -> BipartiteState:
        return BipartiteState(self.projector(), self.d_a, self.d_b)


@dataclass(frozen=True)
class SchmidtSpectrum:
    """Squared Schmidt coefficients, non-increasing, summing to one."""

    lambdas: tuple = field(default_factory=tuple)

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        object.__setattr__(self, "lambdas", lam)
        if any(x < -1e-12 for x in lam):
            raise StateValidationError(f"nonnegative: min lambda = {min(lam):.3e}")
        if abs(sum(lam) - 1.0) > TRACE_TOL:
            raise StateValidationError(f"normalization: sum = {sum(lam):.12g}")
        if any(lam[i] < lam[i + 1] - 1e-12 for i in range(len(lam) - 1)):
            raise StateValidationError("ordering: lambdas not non-increasing")

    def schmidt_rank(self, tol: float = 1e-10) -> int:
        return int(sum(x > tol for x in self.lambdas))


def pure_from_vector(vec: np.ndarray, d_a: int, d_b: int, normalize: bool = False) -> PureBipartiteState:
    vec = np.asarray(vec, dtype=np.complex128).ravel()
    if normalize:
        vec = vec / np.linalg.norm(vec)
    return PureBipartiteState(vec, d_a, d_b)


def max_entangled_pure(d: int, d_a: int | None = None, d_b: int | None = None) -> PureBipartiteState:
    """|Psi_d> = sum_j |jj>/sqrt(d), optionally embedded in d_a x d_b."""
    d_a = d_a or d
    d_b = d_b or d
    if d > min(d_a, d_b):
        raise ValueError(f"cannot fit |Psi_{d}> in {d_a}x{d_b}")
    vec = np.zeros(d_a * d_b, dtype=np.complex128)
    for j in range(d):
        vec[j * d_b + j] = 1.0
    return PureBipartiteState(vec / np.sqrt(d), d_a, d_b)


def schmidt_decompose(psi: PureBipartiteState):
    """Schmidt decomposition via SVD of the d_a x d_b coefficient matrix.

    Returns (SchmidtSpectrum, left_vectors, right_vectors) with vectors as
    columns, so psi = sum_i sqrt(lambda_i) left_i ⊗ right_i.
    """
    u, s, v = hermlin.svd(psi.coefficient_matrix())
    lam = s**2
    lam = lam / lam.sum()
    return SchmidtSpectrum(tuple(lam)), u, v.conj()


def sample_hs(d: int, rng: RngStream) -> BipartiteState:
    """Random d x d bipartite state under the Hilbert-Schmidt measure."""
    if d < 2:
        raise ValueError("local dimension must be >= 2")
    n = d * d
    m = _ginibre(rng.generator(), n)
    w = m @ m.conj().T
    return BipartiteState(w / np.trace(w).real, d, d)


def sample_bures(d: int, rng: RngStream) -> BipartiteState:
    """Random d x d bipartite state under the Bures measure."""
    if d < 2:
        raise ValueError("local dimension must be >= 2")
    n = d * d
    gen = rng.generator()
    m = _ginibre(gen, n)
    q, r = np.linalg.qr(_ginibre(gen, n))
    diag = np.diagonal(r)
    u = q * (diag / np.abs(diag))
    a = np.eye(n) + u
    w = a @ (m @ m.conj().T) @ a.conj().T
    return BipartiteState(w / np.trace(w).real, d, d)


def sample_real(d: int, rng: RngStream) -> BipartiteState:
    """Random real d x d bipartite state (real Wishart, trace normalized)."""
    if d < 2:
        raise ValueError("local dimension must be >= 2")
    n = d * d
    m = _normal_matrix(rng.generator(), n, n)
    w = m @ m.T
    return BipartiteState((w / np.trace(w)).astype(np.complex128), d, d)


def sample_haar_pure(d_a: int, d_b: int, rng: RngStream) -> PureBipartiteState:
    """Haar-random pure state on C^{d_a} ⊗ C^{d_b}."""
    gen = rng.generator()
    n = d_a * d_b
    vec = box_muller_normals(gen, n) + 1j * box_muller_normals(gen, n)
    return PureBipartiteState(vec / np.linalg.norm(vec), d_a, d_b)


def noisy_state(psi: PureBipartiteState, p: float) -> BipartiteState:
    """Convex mixture p * I/(d_a d_b) + (1-p) |psi><psi|."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise weight p = {p} outside [0, 1]")
    n = psi.d_a * psi.d_b
    rho = p * np.eye(n, dtype=np.complex128) / n + (1.0 - p) * psi.projector()
    return BipartiteState(rho, psi.d_a, psi.d_b)


def embed(psi: PureBipartiteState, d_a2: int, d_b2: int) -> PureBipartiteState:
    """Embed psi on the first d_a x d_b computational block of a larger space."""
    if d_a2 < psi.d_a or d_b2 < psi.d_b:
        raise ValueError(
            f"cannot shrink {psi.d_a}x{psi.d_b} into {d_a2}x{d_b2}"
        )
    mat = np.zeros((d_a2, d_b2), dtype=np.complex128)
    mat[: psi.d_a, : psi.d_b] = psi.coefficient_matrix()
    return PureBipartiteState(mat.ravel(), d_a2, d_b2)


def tensor_power_bipartite(rho: BipartiteState, n: int) -> BipartiteState:
    """rho^{⊗n} reordered from (A1 B1 ... An Bn) to (A1...An | B1...Bn)."""
    if n < 1:
        raise ValueError("tensor power must be >= 1")
    if n == 1:
        return rho
    big = rho.rho
    for _ in range(n - 1):
        big = np.kron(big, rho.rho)
    dims = (rho.d_a, rho.d_b) * n
    perm = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    t = big.reshape(dims + dims)
    t = t.transpose(perm + [p + 2 * n for p in perm])
    da, db = rho.d_a**n, rho.d_b**n
    return BipartiteState(t.reshape(da * db, da * db), da, db)


def swap_parties(rho: BipartiteState) -> BipartiteState:
    """Exchange the two parties: rho_{AB} -> rho_{BA}."""
    t = rho.rho.reshape(rho.d_a, rho.d_b, rho.d_a, rho.d_b).transpose(1, 0, 3, 2)
    n = rho.d_a * rho.d_b
    return BipartiteState(t.reshape(n, n), rho.d_b, rho.d_a)


def mix(components) -> BipartiteState:
    """Convex combination of (weight, BipartiteState) pairs."""
    components = list(components)
    if not components:
        raise ValueError("mixture needs at least one component")
    weights = np.array([w for w, _ in components], dtype=float)
    if np.any(weights < 0):
        raise ValueError(f"negative weight {weights.min()}")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {weights.sum():.15g}, expected 1")
    d_a, d_b = components[0][1].d_a, components[0][1].d_b
    rho = np.zeros_like(components[0][1].rho)
    for w, state in components:
        if (state.d_a, state.d_b) != (d_a, d_b):
            raise ValueError("mixture components live on different spaces")
        rho = rho + w * state.rho
    return BipartiteState(rho, d_a, d_b)


def save_state(state: BipartiteState, path) -> None:
    """Write a state as JSON {"d_a", "d_b", "re", "im"} with row-major arrays."""
    payload = {
        "d_a": state.d_a,
        "d_b": state.d_b,
        "re": state.rho.real.tolist(),
        "im": state.rho.imag.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_state(path) -> BipartiteState:
    """Read and validate a state JSON file; diagnostics name the violated invariant."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StateValidationError(f"json_syntax: {exc}") from exc
    for key in ("d_a", "d_b", "re", "im"):
        if key not in payload:
            raise StateValidationError(f"missing_field: {key!r}")
    d_a, d_b = int(payload["d_a"]), int(payload["d_b"])
    re = np.asarray(payload["re"], dtype=float)
    im = np.asarray(payload["im"], dtype=float)
    n = d_a * d_b
    if re.shape != (n, n) or im.shape != (n, n):
        raise StateValidationError(
            f"dimension: arrays {re.shape}/{im.shape} must be {n}x{n} for d_a={d_a}, d_b={d_b}"
        )
    return BipartiteState(re + 1j * im, d_a, d_b)
