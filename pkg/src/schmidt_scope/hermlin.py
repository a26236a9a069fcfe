"""Dense complex linear algebra kernel.

Hermitian eigendecomposition, SVD, Kronecker products, partial trace,
partial transpose, the symmetric-subspace isometry and the real embedding
of Hermitian matrices used by the SDP layer.

Index convention: composite systems use big-endian ordering, i.e. the
leftmost tensor factor is the slowest-varying index (matches ``np.kron``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

HERMITICITY_TOL = 1e-12


class NonHermitianError(ValueError):
    """Raised when an operation requires a Hermitian input and the check fails."""


@dataclass(frozen=True)
class BipartitionLayout:
    """Subsystem dimensions plus the index that splits them into left|right parties."""

    dims: tuple[int, ...]
    cut: int

    def __post_init__(self):
        if not self.dims or any(d < 1 for d in self.dims):
            raise ValueError("subsystem dimensions must be positive")
        if not 1 <= self.cut < len(self.dims):
            raise ValueError(f"cut {self.cut} outside 1..{len(self.dims) - 1}")

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def left_dim(self) -> int:
        return int(np.prod(self.dims[: self.cut]))

    @property
    def right_dim(self) -> int:
        return int(np.prod(self.dims[self.cut:]))

    def check_matches(self, m: np.ndarray) -> None:
        if m.shape != (self.total_dim, self.total_dim):
            raise ValueError(
                f"layout dims {self.dims} (total {self.total_dim}) do not match "
                f"matrix shape {m.shape}"
            )


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def hermitize(m: np.ndarray) -> np.ndarray:
    """Hermitian part (M + M†)/2."""
    return (m + m.conj().T) / 2


def is_hermitian(m: np.ndarray, tol: float = HERMITICITY_TOL) -> bool:
    return m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T)) <= tol


def kron(a: np.ndarray, b: np.ndarray, *rest: np.ndarray) -> np.ndarray:
    """Tensor (Kronecker) product of two or more matrices."""
    out = np.kron(a, b)
    for m in rest:
        out = np.kron(out, m)
    return out


def partial_transpose(m: np.ndarray, layout: BipartitionLayout, side: str = "right") -> np.ndarray:
    """Transpose the indices of one party of a bipartition.

    ``side`` selects which party ("left" or "right" of the cut) is transposed.
    The map is a linear involution; it preserves Hermiticity and trace.
    """
    layout.check_matches(m)
    dl, dr = layout.left_dim, layout.right_dim
    t = m.reshape(dl, dr, dl, dr)
    if side == "right":
        t = t.transpose(0, 3, 2, 1)
    elif side == "left":
        t = t.transpose(2, 1, 0, 3)
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return t.reshape(dl * dr, dl * dr)


def partial_transpose_entry_maps(dl: int, dr: int, side: str = "right"):
    """Entry-index maps (row, col) of the partial transpose on C^dl ⊗ C^dr.

    T(X)[r, c] = X[row_map[r, c], col_map[r, c]]; the map permutes entries,
    fixes the diagonal, and sends symmetric pairs to symmetric pairs, which
    is what the SDP layer's svec-permutation machinery requires.
    """
    n = dl * dr
    r = np.repeat(np.arange(n), n).reshape(n, n)
    c = r.T
    ra, rb = r // dr, r % dr
    ca, cb = c // dr, c % dr
    if side == "right":
        return ra * dr + cb, ca * dr + rb
    if side == "left":
        return ca * dr + rb, ra * dr + cb
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def partial_trace(m: np.ndarray, layout: BipartitionLayout, keep) -> np.ndarray:
    """Trace out all subsystems not listed in ``keep`` (indices into layout.dims)."""
    layout.check_matches(m)
    keep = sorted(set(int(k) for k in keep))
    n = len(layout.dims)
    if not keep:
        raise ValueError("keep set must be nonempty")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"keep indices {keep} outside 0..{n - 1}")
    t = m.reshape(layout.dims + layout.dims)
    # Contract traced-out row/column index pairs one at a time.
    traced = [i for i in range(n) if i not in keep]
    for count, i in enumerate(traced):
        ax = i - count  # axes shift left as we contract
        nleft = n - count
        t = np.trace(t, axis1=ax, axis2=ax + nleft)
    d_keep = int(np.prod([layout.dims[i] for i in keep]))
    return t.reshape(d_keep, d_keep)


def hermitian_eig(m: np.ndarray, tol: float = HERMITICITY_TOL):
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues descending, eigenvectors as columns). The input is
    checked against the Hermiticity tolerance and symmetrized before the
    decomposition to absorb round-off from partial traces.
    """
    if not is_hermitian(m, tol):
        raise NonHermitianError(
            f"matrix is not Hermitian within {tol:g} "
            f"(max asymmetry {np.max(np.abs(m - m.conj().T)):.3e})"
        )
    w, v = np.linalg.eigh(hermitize(m))
    return w[::-1].copy(), v[:, ::-1].copy()


def svd(m: np.ndarray):
    """SVD M = U diag(s) V† with singular values descending.

    Returns (U, s, V); note V, not V†, so that ``U @ np.diag(s) @ V.conj().T``
    reconstructs M.
    """
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    return u, s, vh.conj().T


@lru_cache(maxsize=None)
def _sym_basis_index(d: int, k: int):
    """Occupation patterns of the symmetric subspace of (C^d)^{⊗k}."""
    return tuple(itertools.combinations_with_replacement(range(d), k))


def sym_isometry(d: int, k: int) -> np.ndarray:
    """Isometry from the symmetric subspace of k d-dimensional systems into (C^d)^{⊗k}.

    Columns are orthonormal and span the symmetrized product vectors; there
    are C(d+k-1, k) of them.
    """
    if d < 1 or k < 1:
        raise ValueError("d and k must be >= 1")
    tuples = _sym_basis_index(d, k)
    v = np.zeros((d**k, len(tuples)), dtype=np.complex128)
    for col, occ in enumerate(tuples):
        arrangements = set(itertools.permutations(occ))
        amp = 1.0 / math.sqrt(len(arrangements))
        for arr in arrangements:
            row = 0
            for idx in arr:
                row = row * d + idx
            v[row, col] = amp
    return v


def real_embed(h: np.ndarray, tol: float = HERMITICITY_TOL) -> np.ndarray:
    """Embed a Hermitian matrix as [[Re H, -Im H], [Im H, Re H]].

    The output is real symmetric with the spectrum of H doubled in
    multiplicity, so PSD-ness and feasibility margins are preserved.
    """
    if not is_hermitian(h, tol):
        raise NonHermitianError(f"real_embed requires a Hermitian input within {tol:g}")
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


@lru_cache(maxsize=None)
def hermitian_basis(d: int, traceless: bool = False):
    """Orthonormal (trace inner product) basis of d x d Hermitian matrices.

    Order: d diagonal elements (or d-1 diagonal Gell-Mann combinations when
    traceless), then real and imaginary off-diagonal pairs for i < j.
    """
    mats = []
    if traceless:
        for m in range(1, d):
            v = np.zeros(d)
            v[:m] = 1.0
            v[m] = -m
            mats.append(np.diag(v / np.linalg.norm(v)).astype(np.complex128))
    else:
        for i in range(d):
            e = np.zeros((d, d), dtype=np.complex128)
            e[i, i] = 1.0
            mats.append(e)
    s = 1.0 / math.sqrt(2.0)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d), dtype=np.complex128)
            e[i, j] = s
            e[j, i] = s
            mats.append(e)
            e = np.zeros((d, d), dtype=np.complex128)
            e[i, j] = -1j * s
            e[j, i] = 1j * s
            mats.append(e)
    return tuple(mats)


@lru_cache(maxsize=None)
def symmetric_basis(d: int):
    """Orthonormal basis of d x d real symmetric matrices (diagonal first)."""
    mats = []
    for i in range(d):
        e = np.zeros((d, d))
        e[i, i] = 1.0
        mats.append(e)
    s = 1.0 / math.sqrt(2.0)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d))
            e[i, j] = s
            e[j, i] = s
            mats.append(e)
    return tuple(mats)
