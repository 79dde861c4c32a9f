"""Truncated Fock-space operators and density matrices.

Operators are plain ``scipy.sparse`` CSR matrices. Truncation is naive: the
commutator ``[a, a^dag]`` differs from the identity in its last diagonal entry
(``-(N-1)`` instead of ``1``), and nothing here hides that.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

HERMITIAN_ATOL = 1e-12


@dataclass(frozen=True)
class FockSpace:
    """Basis ``|0>, ..., |dim-1>`` of one bosonic mode."""

    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"FockSpace needs an integer dim >= 2, got {self.dim!r}")

    def basis(self, n: int) -> np.ndarray:
        if not 0 <= n < self.dim:
            raise IndexError(f"|{n}> outside truncation dim={self.dim}")
        v = np.zeros(self.dim, dtype=complex)
        v[n] = 1.0
        return v


def _dim(space) -> int:
    return space.dim if isinstance(space, FockSpace) else FockSpace(int(space)).dim


def annihilation(space) -> sp.csr_matrix:
    """``a`` with ``a[n-1, n] = sqrt(n)``."""
    n = _dim(space)
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, shape=(n, n), format="csr", dtype=complex)


def creation(space) -> sp.csr_matrix:
    return annihilation(space).conj().T.tocsr()


def number_op(space) -> sp.csr_matrix:
    n = _dim(space)
    return sp.diags(np.arange(n, dtype=float), 0, shape=(n, n), format="csr", dtype=complex)


def identity(space) -> sp.csr_matrix:
    return sp.identity(_dim(space), dtype=complex, format="csr")


def diag_op(values) -> sp.csr_matrix:
    """Operator diagonal in the Fock basis, e.g. ``kappa(n_hat)``."""
    values = np.asarray(values)
    return sp.diags(values.astype(complex), 0, format="csr")


def position_op(space, x_zpf: float = 1.0) -> sp.csr_matrix:
    """``x_zpf * (b + b^dag)``."""
    if not x_zpf > 0:
        raise ValueError("x_zpf must be positive")
    b = annihilation(space)
    return (x_zpf * (b + b.conj().T)).tocsr()


def momentum_op(space, p_zpf: float = 1.0) -> sp.csr_matrix:
    """``i p_zpf (b^dag - b)``; with ``x_zpf p_zpf = hbar/2`` this gives ``[x, p] = i hbar`` below the cutoff."""
    b = annihilation(space)
    return (1j * p_zpf * (b.conj().T - b)).tocsr()


def kron(*ops) -> sp.csr_matrix:
    """Tensor product, first factor outermost."""
    out = sp.csr_matrix(ops[0])
    for op in ops[1:]:
        out = sp.kron(out, sp.csr_matrix(op), format="csr")
    return out


def dagger(op):
    return op.conj().T.tocsr() if sp.issparse(op) else np.conj(op).T


def is_hermitian(op, atol: float = HERMITIAN_ATOL) -> bool:
    diff = op - dagger(op)
    if sp.issparse(diff):
        return diff.nnz == 0 or np.max(np.abs(diff.data)) < atol
    return np.max(np.abs(diff)) < atol


def hermitian_matrix_function(op, f: Callable[[np.ndarray], np.ndarray], sparse: bool = True):
    """Apply a scalar function to a Hermitian operator through its spectrum.

    Uses a dense eigendecomposition, so keep the operator to a few hundred
    dimensions. ``f`` must be vectorized and real-valued on the eigenvalues.
    """
    dense = op.toarray() if sp.issparse(op) else np.asarray(op)
    if not is_hermitian(dense):
        raise ValueError("hermitian_matrix_function requires a Hermitian operator")
    evals, evecs = np.linalg.eigh(dense)
    fvals = np.asarray(f(evals))
    if np.iscomplexobj(fvals) and np.max(np.abs(fvals.imag)) > 0:
        raise ValueError("f must be real-valued on the spectrum")
    fvals = np.real(fvals)
    if not np.all(np.isfinite(fvals)):
        raise ValueError("f is not finite on the spectrum")
    out = (evecs * fvals) @ evecs.conj().T
    out = 0.5 * (out + out.conj().T)
    return sp.csr_matrix(out) if sparse else out


def thermal_state(space, n_th: float) -> np.ndarray:
    """Truncated, renormalized Bose-Einstein state."""
    n = _dim(space)
    if n_th == 0:
        p = np.zeros(n)
        p[0] = 1.0
    else:
        q = n_th / (1.0 + n_th)
        p = q ** np.arange(n)
        p /= p.sum()
    return np.diag(p).astype(complex)


def fock_dm(space, n: int) -> np.ndarray:
    v = FockSpace(_dim(space)).basis(n)
    return np.outer(v, v.conj())


def coherent_state(space, alpha: complex) -> np.ndarray:
    """Truncated coherent-state ket, renormalized."""
    n = np.arange(_dim(space))
    from scipy.special import gammaln

    logmag = n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1) if alpha != 0 else np.where(n == 0, 0.0, -np.inf)
    v = np.exp(logmag - logmag.max()) * np.exp(1j * np.angle(alpha) * n)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class DensityMatrix:
    """Density matrix on a (possibly bipartite) truncated Fock space.

    ``dims`` lists the factor dimensions, photon mode first.
    """

    data: np.ndarray
    dims: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError("density matrix must be square")
        dims = tuple(self.dims) or (data.shape[0],)
        if int(np.prod(dims)) != data.shape[0]:
            raise ValueError(f"dims {dims} do not match shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_vector(cls, vec, dims: Sequence[int]):
        d = int(np.prod(dims))
        return cls(np.asarray(vec).reshape((d, d), order="F"), tuple(dims))

    def vector(self) -> np.ndarray:
        return self.data.reshape(-1, order="F")

    @property
    def trace(self) -> complex:
        return np.trace(self.data)

    def normalized(self) -> "DensityMatrix":
        return DensityMatrix(self.data / self.trace, self.dims)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.data + self.data.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def check(self, atol: float = 1e-9) -> None:
        """Raise if trace, Hermiticity or positivity (to ``-atol``) are violated."""
        if abs(self.trace - 1) > atol:
            raise ValueError(f"trace {self.trace} differs from 1")
        if self.hermiticity_error() > atol:
            raise ValueError("density matrix is not Hermitian")
        if self.min_eigenvalue() < -atol:
            raise ValueError(f"negative eigenvalue {self.min_eigenvalue():.3g}")

    def blocks(self) -> np.ndarray:
        """View as ``[n, m, i, j]`` with photon indices first."""
        if len(self.dims) != 2:
            raise ValueError("blocks() needs a bipartite state")
        na, nb = self.dims
        return self.data.reshape(na, nb, na, nb).transpose(0, 2, 1, 3)

    def photon_populations(self) -> np.ndarray:
        if len(self.dims) == 1:
            return np.real(np.diag(self.data)).copy()
        b = self.blocks()
        return np.real(np.einsum("nnii->n", b))

    def phonon_populations(self) -> np.ndarray:
        b = self.blocks()
        return np.real(np.einsum("nnii->i", b))
