"""Density-matrix dynamics: Liouvillian assembly, time evolution, steady states.

Vectorization is column stacking, ``vec(A rho B) = (B^T kron A) vec(rho)``.
Hamiltonians are stored divided by hbar, i.e. as angular frequencies.

The optomechanical model works with the dimensionless quadratures
``X = b + b^dag`` and ``P = i(b^dag - b)``; the lab displacement is
``x = x_zpf X + frame_shift``. The Brownian term is not of Lindblad form and
need not preserve positivity, so small negative eigenvalues are reported,
never clipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fock
from .errors import ConvergenceError, DegenerateKernelError, DimensionCapError, TruncationError
from .fock import DensityMatrix
from .integrate import dopri5
from .populations import g2_from_populations, moments
from .rates import OptomechParams, derived_scales, kappa_of_x

DIRECT_SOLVE_CAP = 40_000  # rows of the superoperator
DENSE_CAP = 4_096
SUPEROP_CAP = 4_000_000
TRUNCATION_LIMIT = 1e-6


def spre(A):
    return sp.kron(sp.identity(A.shape[0], format="csr"), A, format="csr")


def spost(A):
    return sp.kron(A.T, sp.identity(A.shape[0], format="csr"), format="csr")


def sprepost(A, B):
    """Superoperator of ``rho -> A rho B``."""
    return sp.kron(B.T, A, format="csr")


def dissipator(C) -> sp.csr_matrix:
    C = sp.csr_matrix(C)
    CdC = (C.conj().T @ C).tocsr()
    return (sprepost(C, C.conj().T) - 0.5 * spre(CdC) - 0.5 * spost(CdC)).tocsr()


@dataclass(frozen=True)
class BrownianTerm:
    """Caldeira-Leggett damping on the quadratures ``X``, ``P`` (full-space operators).

    ``L rho = -(i gamma/4) [X, {P, rho}] - (gamma/2)(n_th + 1/2) [X, [X, rho]]``.
    """

    X: sp.csr_matrix
    P: sp.csr_matrix
    gamma: float
    n_th: float

    @property
    def diffusion(self):
        return 0.5 * self.gamma * (self.n_th + 0.5)

    def apply(self, rho):
        X, P = self.X, self.P
        anti = P @ rho + rho @ P
        comm1 = X @ anti - anti @ X
        xr = X @ rho - rho @ X
        comm2 = X @ xr - xr @ X
        return -0.25j * self.gamma * comm1 - self.diffusion * comm2

    def superop(self):
        X, P = self.X, self.P
        friction = spre(X @ P) + sprepost(X, P) - sprepost(P, X) - spost(P @ X)
        X2 = (X @ X).tocsr()
        double = spre(X2) - 2.0 * sprepost(X, X) + spost(X2)
        return (-0.25j * self.gamma * friction - self.diffusion * double).tocsr()


@dataclass
class LindbladModel:
    hamiltonian: sp.csr_matrix
    collapse_channels: list
    extra_superoperators: list = field(default_factory=list)
    dims: tuple = ()
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        D = self.hamiltonian.shape[0]
        if not self.dims:
            self.dims = (D,)
        if int(np.prod(self.dims)) != D:
            raise ValueError(f"dims {self.dims} do not match operator size {D}")
        for op, w in self.collapse_channels:
            if op.shape != (D, D):
                raise ValueError("collapse operator shape mismatch")
            if w < 0:
                raise ValueError("channel weights must be non-negative")

    @property
    def dim(self):
        return self.hamiltonian.shape[0]

    def apply(self, rho):
        """Direct (non-vectorized) action of the generator on a matrix."""
        rho = np.asarray(rho, dtype=complex)
        H = self.hamiltonian
        out = -1j * (H @ rho - (rho @ H if not sp.issparse(H) else (H.T @ rho.T).T))
        for C, w in self.collapse_channels:
            Cd = C.conj().T
            CdC = Cd @ C
            Crho = C @ rho
            out = out + w * ((Cd.T @ Crho.T).T - 0.5 * (CdC @ rho) - 0.5 * (CdC.T @ rho.T).T)
        for term in self.extra_superoperators:
            out = out + _apply_term(term, rho)
        return np.asarray(out)


def _apply_term(term, rho):
    X = term.X
    P = term.P

    def right(A, M):
        # M @ A for sparse A without densifying A
        return (A.T @ M.T).T

    anti = P @ rho + right(P, rho)
    comm1 = X @ anti - right(X, anti)
    xr = X @ rho - right(X, rho)
    comm2 = X @ xr - right(X, xr)
    return -0.25j * term.gamma * comm1 - term.diffusion * comm2


@dataclass(frozen=True)
class Liouvillian:
    matrix: sp.csr_matrix
    dims: tuple

    @property
    def dim(self):
        return int(np.prod(self.dims))

    def __matmul__(self, vec):
        return self.matrix @ vec

    def apply(self, rho):
        D = self.dim
        return (self.matrix @ np.asarray(rho).reshape(-1, order="F")).reshape((D, D), order="F")

    def norm(self) -> float:
        return float(spla.norm(self.matrix, 1))

    def to_dense(self, cap: int = DENSE_CAP):
        if self.matrix.shape[0] > cap:
            raise DimensionCapError(f"dense Liouvillian of size {self.matrix.shape[0]} exceeds cap {cap}")
        return self.matrix.toarray()


def assemble_liouvillian(model: LindbladModel, cap: int = SUPEROP_CAP) -> Liouvillian:
    D = model.dim
    if D * D > cap:
        raise DimensionCapError(f"superoperator dimension {D * D} exceeds cap {cap}")
    H = sp.csr_matrix(model.hamiltonian)
    L = -1j * (spre(H) - spost(H))
    for C, w in model.collapse_channels:
        if w:
            L = L + w * dissipator(C)
    for term in model.extra_superoperators:
        L = L + term.superop()
    L = sp.csr_matrix(L)
    L.eliminate_zeros()
    return Liouvillian(L, tuple(model.dims))


# --- model builders -----------------------------------------------------------------


def _rate_values(k, n):
    vals = np.broadcast_to(np.asarray(k(n) if callable(k) else np.asarray(k)[n], dtype=float), n.shape)
    if np.any(vals < 0):
        raise ValueError("rates must be non-negative")
    return vals


def build_single_mode_model(kplus, kminus, omega_a: float = 0.0, N: int = 40) -> LindbladModel:
    """Single mode with number-dependent decay ``a sqrt(kplus(n))`` and gain ``sqrt(kminus(n)) a^dag``.

    The rate operators are diagonal in the Fock basis, so their square roots
    are taken entrywise.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    n = np.arange(N)
    kp = _rate_values(kplus, n)
    km = _rate_values(kminus, n)
    a = fock.annihilation(N)
    decay = (a @ fock.diag_op(np.sqrt(kp))).tocsr()
    gain = (fock.diag_op(np.sqrt(km)) @ a.conj().T).tocsr()
    H = (omega_a * fock.number_op(N)).tocsr()
    return LindbladModel(
        hamiltonian=H,
        collapse_channels=[(decay, 1.0), (gain, 1.0)],
        dims=(N,),
        context={"kind": "single", "kplus": kp, "kminus": km},
    )


def build_optomech_model(
    p: OptomechParams,
    N_photon: int,
    N_phonon: int,
    frame_shift: float = 0.0,
) -> LindbladModel:
    """Cavity mode coupled dispersively and dissipatively to a damped oscillator.

    The phonon basis is centred at ``frame_shift`` (a lab displacement), so
    the truncation only has to hold fluctuations around the operating point.
    """
    if N_photon < 2 or N_phonon < 2:
        raise ValueError("dimensions must be at least 2")
    if not math.isfinite(frame_shift):
        raise ValueError("frame_shift must be finite")
    sc = derived_scales(p)
    s = frame_shift / sc.x_zpf
    Ia = fock.identity(N_photon)
    Ib = fock.identity(N_phonon)
    a = fock.annihilation(N_photon)
    na = fock.number_op(N_photon)
    b = fock.annihilation(N_phonon)
    X = fock.position_op(N_phonon, 1.0)
    Pq = fock.momentum_op(N_phonon, 1.0)

    def kappa_lab(ev):
        return kappa_of_x(sc.x_zpf * ev + frame_shift, p.profile)

    K = fock.hermitian_matrix_function(X, kappa_lab)
    sqrtK = fock.hermitian_matrix_function(X, lambda ev: np.sqrt(kappa_lab(ev)))

    omega_a = p.omega_a or 0.0
    H = (
        fock.kron((omega_a - p.g0 * s) * na, Ib)
        + fock.kron(Ia, p.omega_m * (b.conj().T @ b) + 0.5 * p.omega_m * s * X)
        - p.g0 * fock.kron(na, X)
    )
    channels = [
        (fock.kron(a, sqrtK), 1.0),
        (fock.kron(a.conj().T, Ib), p.kappa_minus),
    ]
    brown = BrownianTerm(X=fock.kron(Ia, X), P=fock.kron(Ia, Pq), gamma=p.gamma, n_th=p.n_th)
    return LindbladModel(
        hamiltonian=sp.csr_matrix(H),
        collapse_channels=channels,
        extra_superoperators=[brown],
        dims=(N_photon, N_phonon),
        context={
            "kind": "optomech",
            "params": p,
            "frame_shift": frame_shift,
            "x_zpf": sc.x_zpf,
            "X": X,
            "kappa_op": K,
        },
    )


# --- dynamics -----------------------------------------------------------------------


def evolve(
    rho0,
    L: Liouvillian,
    t_final: float,
    tol: float = 1e-10,
    steady_tol: Optional[float] = None,
    sample_times=None,
):
    """Integrate ``d vec(rho)/dt = L vec(rho)``; returns ``(DensityMatrix, Solution)``.

    ``steady_tol`` stops the run once ``max |d rho/dt|`` stays below it. The
    integration noise floor is roughly ``1e-2 tol`` times the fastest rate of
    ``L``, so a ``steady_tol`` below that is never reached.
    """
    rho0 = rho0 if isinstance(rho0, DensityMatrix) else DensityMatrix(rho0, L.dims)
    if rho0.data.shape[0] != L.dim:
        raise ValueError("state and generator dimensions differ")
    M = L.matrix

    def f(t, v):
        return M @ v

    sol = dopri5(
        f,
        rho0.vector(),
        t_final,
        rtol=tol,
        atol=tol * 1e-2,
        steady_tol=steady_tol,
        sample_times=sample_times,
    )
    return DensityMatrix.from_vector(sol.y, L.dims), sol


def _trace_row(D):
    return np.arange(D) * (D + 1)


def steady_state(
    L: Liouvillian,
    method: str = "auto",
    direct_cap: int = DIRECT_SOLVE_CAP,
    residual_tol: float = 1e-10,
    seed: int = 0,
) -> DensityMatrix:
    """Trace-one element of the kernel of ``L``.

    ``direct`` replaces one equation by the trace condition and factorizes
    the result; ``iterative`` runs shifted inverse iteration with ILU-
    preconditioned GMRES solves. ``auto`` picks ``direct`` up to
    ``direct_cap`` superoperator rows.
    """
    D = L.dim
    n = D * D
    if method == "auto":
        method = "direct" if n <= direct_cap else "iterative"
    norm_L = L.norm()
    if method == "direct":
        vec = _steady_direct(L, seed)
    elif method == "iterative":
        vec = _steady_inverse_iteration(L, norm_L)
    else:
        raise ValueError(f"unknown steady-state method {method!r}")
    rho = vec.reshape((D, D), order="F")
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho)
    residual = float(np.linalg.norm(L.matrix @ rho.reshape(-1, order="F")))
    if residual > residual_tol * norm_L:
        raise ConvergenceError(
            f"steady state residual {residual:.3g} exceeds {residual_tol:g} * ||L|| = {residual_tol * norm_L:.3g}",
            residual=residual,
        )
    return DensityMatrix(rho, L.dims)


def _augmented(L: Liouvillian):
    D = L.dim
    M = L.matrix.tolil(copy=True)
    row = np.zeros(D * D, dtype=complex)
    row[_trace_row(D)] = 1.0
    M[0, :] = row
    rhs = np.zeros(D * D, dtype=complex)
    rhs[0] = 1.0
    return M.tocsc(), rhs


def _steady_direct(L: Liouvillian, seed: int):
    M, rhs = _augmented(L)
    try:
        lu = spla.splu(M, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise DegenerateKernelError(f"generator kernel is not one-dimensional ({exc})") from exc
    vec = lu.solve(rhs)
    if not np.all(np.isfinite(vec)):
        raise DegenerateKernelError("generator kernel is not one-dimensional (non-finite solve)")
    # a near-singular augmented matrix means a second stationary state
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(M.shape[0]) + 1j * rng.standard_normal(M.shape[0])
    growth = np.linalg.norm(lu.solve(probe)) / np.linalg.norm(probe)
    norm_M = float(spla.norm(M, 1))
    if not np.isfinite(growth) or growth * norm_M > 1e14:
        raise DegenerateKernelError(f"generator kernel is not one-dimensional (condition ~{growth * norm_M:.2g})")
    return vec


def _steady_inverse_iteration(L: Liouvillian, norm_L: float, max_iter: int = 50):
    D = L.dim
    n = D * D
    shift = 1e-8 * norm_L
    A = (L.matrix - shift * sp.identity(n, format="csr")).tocsc()
    ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=30)
    prec = spla.LinearOperator(A.shape, ilu.solve, dtype=complex)
    v = np.zeros(n, dtype=complex)
    v[_trace_row(D)] = 1.0 / D
    for _ in range(max_iter):
        # inexact solves are fine: only the direction of w matters
        w, _ = spla.gmres(A, v, M=prec, rtol=1e-8, atol=0.0, restart=100, maxiter=20)
        tr = np.sum(w[_trace_row(D)])
        if not np.isfinite(tr) or tr == 0:
            raise ConvergenceError("inverse iteration lost the trace direction")
        w = w / tr
        if np.linalg.norm(L.matrix @ w) < 1e-11 * norm_L:
            return w
        v = w
    raise ConvergenceError("inverse iteration did not converge", residual=float(np.linalg.norm(L.matrix @ v)))


# --- observables --------------------------------------------------------------------


@dataclass
class SteadyStateReport:
    n_bar: float
    delta_n: float
    g2: float
    populations: np.ndarray
    conditional_x: np.ndarray
    extracted_kappa_n: np.ndarray
    squeezing_db: float
    residual: float
    min_eigenvalue: float = 0.0
    phonon_populations: Optional[np.ndarray] = None


def observables(rho, model: Optional[LindbladModel] = None, L: Optional[Liouvillian] = None, block_floor=1e-300):
    """Photon statistics and, for bipartite states, conditional phonon quantities.

    Blocks whose photon probability is below ``block_floor`` are marked NaN in
    ``conditional_x`` and ``extracted_kappa_n``.
    """
    rho = rho if isinstance(rho, DensityMatrix) else DensityMatrix(rho)
    P = rho.photon_populations()
    P_report = np.clip(P, 0.0, None)
    P_report = P_report / P_report.sum()
    n_bar, var = moments(P_report)
    dn = math.sqrt(max(var, 0.0))
    g2 = g2_from_populations(P_report) if n_bar > 0 else float("nan")
    sq = 10.0 * math.log10(var / n_bar) if n_bar > 0 and var > 0 else float("-inf")
    residual = float(np.linalg.norm(L.matrix @ rho.vector())) if L is not None else float("nan")
    cond_x = np.array([])
    kap = np.array([])
    phonon = None
    ctx = model.context if model is not None else {}
    if len(rho.dims) == 2:
        blocks = rho.blocks()
        Na = rho.dims[0]
        cond_x = np.full(Na, np.nan)
        kap = np.full(Na, np.nan)
        X = ctx.get("X")
        K = ctx.get("kappa_op")
        for n in range(Na):
            if P[n] <= block_floor:
                continue
            rm = blocks[n, n] / P[n]
            if X is not None:
                cond_x[n] = ctx["x_zpf"] * np.real(np.sum(X.toarray().T * rm)) + ctx["frame_shift"]
            if K is not None:
                kap[n] = np.real(np.sum(K.toarray().T * rm))
        phonon = rho.phonon_populations()
    elif ctx.get("kind") == "single":
        kap = np.asarray(ctx["kplus"], dtype=float)
    return SteadyStateReport(
        n_bar=n_bar,
        delta_n=dn,
        g2=g2,
        populations=P,
        conditional_x=cond_x,
        extracted_kappa_n=kap,
        squeezing_db=sq,
        residual=residual,
        min_eigenvalue=rho.min_eigenvalue(),
        phonon_populations=phonon,
    )


def truncation_violations(rho: DensityMatrix, limit: float = TRUNCATION_LIMIT):
    """Boundary populations above ``limit``: top photon level, top two phonon levels."""
    out = {}
    P = rho.photon_populations()
    if P[-1] >= limit:
        out["photon_top"] = float(P[-1])
    if len(rho.dims) == 2:
        Q = rho.phonon_populations()
        for k in (1, 2):
            if Q[-k] >= limit:
                out[f"phonon_top_{k}"] = float(Q[-k])
    return out


def solve_optomech_steady(
    p: OptomechParams,
    N_photon: int,
    N_phonon: int,
    frame_shift: float,
    escalate: int = 4,
    limit: float = TRUNCATION_LIMIT,
    method: str = "auto",
):
    """Bipartite steady state under the truncation contract.

    If boundary populations exceed ``limit`` the dimensions grow once by
    ``escalate``; a second violation raises :class:`TruncationError`.
    Returns ``(report, rho, model)``.
    """
    dims = (N_photon, N_phonon)
    for attempt in range(2):
        model = build_optomech_model(p, dims[0], dims[1], frame_shift)
        L = assemble_liouvillian(model)
        rho = steady_state(L, method=method)
        bad = truncation_violations(rho, limit)
        if not bad:
            return observables(rho, model, L), rho, model
        if attempt == 0 and escalate:
            dims = (dims[0] + escalate, dims[1] + escalate)
    raise TruncationError(f"truncation contract violated at dims {dims}: {bad}")
