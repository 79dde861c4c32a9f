"""Fock-population dynamics and steady states.

Covers the diagonal rate equations, their detailed-balance steady state, the
mean-field (classical feedback) moment equations, the reduced photon-number /
conditional-displacement model of the optomechanical system, and the
classical Rayleigh-Van der Pol oscillator used as an analogy.

Rate functions are callables ``k(n)`` accepting integer arrays. The truncated
ladder ``0..N-1`` is reflecting: there is no upward flux out of ``N-1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .errors import ConvergenceError
from .integrate import dopri5
from .rates import (
    OptomechParams,
    derived_scales,
    dkappa_dx,
    kappa_of_x,
)

BOUNDARY_MASS_LIMIT = 1e-8
RATIO_FLOOR = 1e-300


def _rates(k, n):
    if callable(k):
        return np.broadcast_to(np.asarray(k(n), dtype=float), n.shape).copy()
    return np.asarray(k, dtype=float)[n]


def ladder_rates(kplus, kminus, N: int):
    """Per-level jump rates ``(down, up)`` on the truncated ladder.

    ``down[n] = n kplus(n)`` moves ``n -> n-1`` and ``up[n] = (n+1) kminus(n+1)``
    moves ``n -> n+1``; ``up[N-1] = 0``.
    """
    n = np.arange(N)
    down = n * _rates(kplus, n)
    up = np.zeros(N)
    up[:-1] = (n[:-1] + 1) * _rates(kminus, n[:-1] + 1)
    if np.any(down < 0) or np.any(up < 0):
        raise ValueError("rates must be non-negative")
    return down, up


def rate_matrix(kplus, kminus, N: int) -> sp.csr_matrix:
    """Tridiagonal generator ``Q`` with ``dP/dt = Q @ P``; columns sum to zero."""
    down, up = ladder_rates(kplus, kminus, N)
    return sp.diags([down[1:], -(down + up), up[:-1]], [1, 0, -1], shape=(N, N), format="csr")


def population_rhs(P, kplus, kminus) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    down, up = ladder_rates(kplus, kminus, P.size)
    jd = down * P
    ju = up * P
    out = -jd - ju
    out[:-1] += jd[1:]
    out[1:] += ju[:-1]
    return out


def normalize(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    s = P.sum()
    if not s > 0 or not np.isfinite(s):
        raise ValueError("population vector cannot be normalized")
    return P / s


def moments(P):
    """``(mean, variance)`` of a population vector."""
    P = np.asarray(P, dtype=float)
    n = np.arange(P.size)
    m = float(n @ P)
    return m, float(((n - m) ** 2) @ P)


def g2_from_populations(P) -> float:
    P = np.asarray(P, dtype=float)
    n = np.arange(P.size)
    m = n @ P
    return float((n * (n - 1)) @ P / m**2)


def check_boundary(P, limit: float = BOUNDARY_MASS_LIMIT) -> bool:
    """True if the top level carries no more than ``limit`` probability."""
    return float(P[-1]) <= limit


def choose_truncation(n_bar: float, delta_n: float, sigmas: float = 8.0) -> int:
    return int(math.ceil(n_bar + sigmas * max(delta_n, math.sqrt(max(n_bar, 0.0)), 1.0))) + 1


def steady_populations_by_ratio(kplus, kminus, N: int) -> np.ndarray:
    """Detailed-balance solution ``P_n / P_{n-1} = kminus(n) / kplus(n)``.

    Accumulated in log space, so ratios spanning hundreds of decades are fine.
    """
    n = np.arange(1, N)
    kp = _rates(kplus, n)
    km = _rates(kminus, n)
    if np.any(kp <= 0):
        raise ValueError("kplus must be positive for n >= 1")
    with np.errstate(divide="ignore"):
        steps = np.log(km) - np.log(kp)
    logp = np.concatenate([[0.0], np.cumsum(steps)])
    if not np.any(np.isfinite(logp)):
        raise ValueError("populations are not normalizable")
    return np.exp(logp - logsumexp(logp))


def gaussian_closed_form(n0: float, k: float, N: int) -> np.ndarray:
    n = np.arange(N)
    logp = -0.5 * k * (n - n0) ** 2
    return np.exp(logp - logsumexp(logp))


def detailed_balance_residual(P, kplus, kminus) -> float:
    """Largest flux mismatch between neighbours, relative to the larger flux."""
    P = np.asarray(P, dtype=float)
    down, up = ladder_rates(kplus, kminus, P.size)
    f_up = up[:-1] * P[:-1]
    f_down = down[1:] * P[1:]
    scale = np.maximum(np.maximum(f_up, f_down), np.finfo(float).tiny)
    return float(np.max(np.abs(f_up - f_down) / scale))


def evolve_populations(
    P0,
    kplus,
    kminus,
    t_final: float,
    tol: Optional[float] = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    sample_times=None,
):
    """Integrate the rate equations from ``P0``.

    Stops at ``t_final`` or as soon as ``max|dP/dt| < tol`` on two consecutive
    steps. ``tol`` defaults to ``1e-12`` times the fastest ladder rate.
    Returns the integrator :class:`~numbersqueeze.integrate.Solution`.
    """
    P0 = np.asarray(P0, dtype=float)
    Q = rate_matrix(kplus, kminus, P0.size)
    if tol is None:
        scale = float(np.max(np.abs(Q.diagonal()))) if Q.nnz else 0.0
        tol = 1e-12 * max(scale, 1e-300)

    def f(t, P):
        return Q @ P

    return dopri5(f, P0, t_final, rtol=rtol, atol=atol, steady_tol=tol, sample_times=sample_times)


# --- classical (mean-field) feedback -----------------------------------------------


@dataclass(frozen=True)
class MomentState:
    mean_n: float
    mean_n2: float

    @property
    def variance(self):
        return self.mean_n2 - self.mean_n**2

    @property
    def g2(self):
        return (self.mean_n2 - self.mean_n) / self.mean_n**2


def classical_moment_rhs(s: MomentState, kplus_of_mean: Callable, kminus_of_mean: Callable, form: str = "derived"):
    """Time derivatives of ``<n>`` and ``<n^2>`` with rates frozen at the mean.

    ``form="derived"`` is the pair that follows from the birth-death jumps:
    ``d<n^2>/dt = km (2<n^2> + 3<n> + 1) + kp (<n> - 2<n^2>)``, whose fixed
    point obeys ``<n^2> = 2<n>^2 + <n>``. ``form="printed"`` keeps the
    published second equation, which has ``km`` and ``kp`` exchanged and
    has no physical fixed point; it is provided for comparison only.
    """
    m, m2 = s.mean_n, s.mean_n2
    kp = float(kplus_of_mean(m))
    km = float(kminus_of_mean(m))
    dm = km * (m + 1.0) - kp * m
    if form == "derived":
        dm2 = km * (2.0 * m2 + 3.0 * m + 1.0) + kp * (m - 2.0 * m2)
    elif form == "printed":
        dm2 = km * (m - 2.0 * m2) + kp * (2.0 * m2 + 3.0 * m + 1.0)
    else:
        raise ValueError(f"unknown form {form!r}")
    return dm, dm2


def evolve_moments(s0: MomentState, kplus_of_mean, kminus_of_mean, t_final: float, tol: float = 1e-13, form="derived"):
    def f(t, y):
        return np.array(classical_moment_rhs(MomentState(y[0], y[1]), kplus_of_mean, kminus_of_mean, form))

    def norm(v, y):
        # relative quietness; <n^2> is O(n^2)
        return max(abs(v[0]) / max(1.0, abs(sol_scale[0])), abs(v[1]) / max(1.0, abs(sol_scale[1])))

    sol_scale = np.array([s0.mean_n, s0.mean_n2])
    sol = dopri5(f, [s0.mean_n, s0.mean_n2], t_final, rtol=1e-12, atol=1e-14, steady_tol=tol, steady_norm=norm)
    return MomentState(float(sol.y[0]), float(sol.y[1])), sol


# --- reduced optomechanical model ---------------------------------------------------


@dataclass(frozen=True)
class ReducedState:
    """Photon populations with the conditional mean displacement of each level."""

    probs: np.ndarray
    x_n: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.probs, dtype=float)
        x = np.asarray(self.x_n, dtype=float)
        if P.shape != x.shape:
            raise ValueError("probs and x_n must have the same length")
        if not np.all(np.isfinite(x)):
            raise ValueError("x_n must be finite")
        object.__setattr__(self, "probs", P)
        object.__setattr__(self, "x_n", x)

    @classmethod
    def from_vector(cls, y):
        N = y.size // 2
        return cls(y[:N], y[N:])

    def vector(self):
        return np.concatenate([self.probs, self.x_n])

    @property
    def N(self):
        return self.probs.size


def _reduced_rates(x, p: OptomechParams):
    s = derived_scales(p)
    return kappa_of_x(x, p.profile, width=s.d_prime)


def reduced_coupled_rhs(state: ReducedState, p: OptomechParams, ratio_floor: float = RATIO_FLOOR):
    """``(dP/dt, dx/dt)`` for the photon populations and conditional displacements.

    Levels with ``P_n < ratio_floor * max(P)`` keep only the mechanical
    relaxation towards ``n x1``; the population ratios in the feedback terms
    are meaningless there.
    """
    P, x = state.probs, state.x_n
    N = P.size
    n = np.arange(N)
    s = derived_scales(p)
    kp = _reduced_rates(x, p)
    dP = population_rhs(P, kp, _const(p.kappa_minus))

    dx = -p.gamma * (x - n * s.x1)
    live = P > ratio_floor * np.max(P)
    up_term = np.zeros(N)
    dn_term = np.zeros(N)
    with np.errstate(divide="ignore", invalid="ignore"):
        # (P_{n+1}/P_n)(n+1) kplus_{n+1} (x_{n+1} - x_n)
        up_term[:-1] = P[1:] / P[:-1] * (n[1:] * kp[1:]) * (x[1:] - x[:-1])
        # (P_{n-1}/P_n) n kminus (x_{n-1} - x_n)
        dn_term[1:] = P[:-1] / P[1:] * (n[1:] * p.kappa_minus) * (x[:-1] - x[1:])
    dx = dx + np.where(live, up_term + dn_term, 0.0)
    return dP, dx


def _const(value):
    value = float(value)
    return lambda n: np.full(np.shape(n), value)


def evolve_reduced_coupled(
    state0: ReducedState,
    p: OptomechParams,
    t_final: float,
    tol: Optional[float] = None,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    ratio_floor: float = 1e-10,
    raise_on_fail: bool = True,
):
    """Integrate the reduced model until ``max(|dP|, P |dx| / x1) < tol``.

    Populations near or below the absolute tolerance ``atol`` carry no
    accurate ratios, so the feedback terms are floored at ``ratio_floor``
    (relative to the peak, about a hundred times ``atol``) rather than at the
    ``1e-300`` of :func:`reduced_coupled_rhs`; otherwise the displacements of
    those levels wander with the integration noise and never settle.
    Start from detailed-balance populations: large transient population
    ratios make the displacement equations stiff.

    Returns ``(ReducedState, Solution)``.
    """
    s = derived_scales(p)
    N = state0.N
    if tol is None:
        tol = 1e-12 * p.profile.kappa0

    def f(t, y):
        dP, dx = reduced_coupled_rhs(ReducedState(y[:N], y[N:]), p, ratio_floor=ratio_floor)
        return np.concatenate([dP, dx])

    def norm(v, y):
        # displacement drift weighted by the level's probability, since nearly
        # empty levels carry ratios only as accurate as atol allows
        return max(float(np.max(np.abs(v[:N]))), float(np.max(np.abs(y[:N] * v[N:]))) / s.x1)

    atol = np.concatenate([np.full(N, atol), np.full(N, 1e-9 * s.x1)])
    sol = dopri5(
        f, state0.vector(), t_final, rtol=rtol, atol=atol, steady_tol=tol, steady_norm=norm
    )
    state = ReducedState(sol.y[:N], sol.y[N:])
    if raise_on_fail and not sol.steady:
        raise ConvergenceError(
            f"reduced model not steady at t={sol.t:.4g} (residual {sol.rhs_norm:.3g} > {tol:.3g})",
            residual=sol.rhs_norm,
        )
    return state, sol


def reduced_steady_residual(x, p: OptomechParams):
    """Stationarity of the displacements once populations are in detailed balance.

    With ``P_{n+1}/P_n = kminus/kplus_{n+1}`` the feedback terms become
    ``(n+1) kminus (x_{n+1}-x_n) + n kplus_n (x_{n-1}-x_n)``.
    """
    N = x.size
    n = np.arange(N)
    s = derived_scales(p)
    kp = _reduced_rates(x, p)
    up = (n + 1) * p.kappa_minus
    up[-1] = 0.0
    dn = n * kp
    xm = np.concatenate([[x[0]], x[:-1]])
    xp = np.concatenate([x[1:], [x[-1]]])
    G = -p.gamma * (x - n * s.x1) + up * (xp - x) + dn * (xm - x)
    return G, up, dn, xm


def steady_reduced_coupled(
    p: OptomechParams,
    N: int,
    x0=None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> ReducedState:
    """Steady state of the reduced model by Newton iteration on ``x_n``.

    The populations follow from detailed balance given ``x``, which leaves a
    tridiagonal nonlinear system for the displacements. ``tol`` is relative to
    ``x1`` times the largest rate in the residual (damping or feedback), the
    size of the terms that have to cancel.
    """
    s = derived_scales(p)
    n = np.arange(N)
    x = n * s.x1 if x0 is None else np.array(x0, dtype=float)
    G, up, dn, xm = reduced_steady_residual(x, p)
    scale = (p.gamma + float(np.max(up)) + N * (p.profile.kappa_v + p.profile.kappa0)) * s.x1
    res = float(np.max(np.abs(G)))
    for _ in range(max_iter):
        if res < tol * scale:
            break
        diag = -p.gamma - up - dn + n * dkappa_dx(x, p.profile, width=s.d_prime) * (xm - x)
        ab = np.zeros((3, N))
        ab[0, 1:] = up[:-1]
        ab[1] = diag
        ab[2, :-1] = dn[1:]
        dx = solve_banded((1, 1), ab, -G)
        g_norm = np.linalg.norm(G)
        lam = 1.0
        while True:
            x_try = x + lam * dx
            G_try, up_t, dn_t, xm_t = reduced_steady_residual(x_try, p)
            if np.linalg.norm(G_try) < (1.0 - 1e-4 * lam) * g_norm or lam < 1e-8:
                break
            lam *= 0.5
        x, G, up, dn, xm = x_try, G_try, up_t, dn_t, xm_t
        res = float(np.max(np.abs(G)))
    else:
        raise ConvergenceError(f"reduced steady state: Newton did not converge (residual {res:.3g})", residual=res)
    if res >= tol * scale:
        raise ConvergenceError(f"reduced steady state: residual {res:.3g} above tolerance", residual=res)
    P = steady_populations_by_ratio(lambda m: _reduced_rates(x[m], p), _const(p.kappa_minus), N)
    return ReducedState(P, x)


def conditional_slope(state: ReducedState, x1: float, window=None) -> float:
    """Population-weighted slope of ``x_n`` versus ``n`` in units of ``x1``."""
    P, x = state.probs, state.x_n
    n = np.arange(P.size)
    if window is None:
        m, v = moments(P)
        w = np.abs(n - m) <= max(2.0 * math.sqrt(v), 1.0)
    else:
        w = (n >= window[0]) & (n <= window[1])
    if w.sum() < 2:
        raise ValueError("need at least two levels to fit a slope")
    coef = np.polyfit(n[w], x[w], 1, w=np.sqrt(P[w]))
    return float(coef[0] / x1)


# --- classical analogy --------------------------------------------------------------


def rvdp_rhs(t, y, mu):
    x, v = y
    return np.array([v, -x - mu * (v * v + x * x - 1.0) * v])


def rvdp_trajectory(mu: float, x0: float, v0: float, t_final: float, n_samples: int = 2001, rtol=1e-10, atol=1e-12):
    """Sampled solution of ``x'' + mu (x'^2 + x^2 - 1) x' + x = 0``.

    Returns ``(t, x, v)`` arrays.
    """
    ts = np.linspace(0.0, t_final, n_samples)
    sol = dopri5(lambda t, y: rvdp_rhs(t, y, mu), [x0, v0], t_final, rtol=rtol, atol=atol, sample_times=ts)
    return ts, sol.ys[:, 0].copy(), sol.ys[:, 1].copy()
