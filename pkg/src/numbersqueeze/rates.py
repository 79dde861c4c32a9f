"""Rate profiles, derived optomechanical scales and closed-form estimators.

All unit conversions live here. Physical parameters are SI (kg, rad/s, m);
Table I style inputs in Hz and nm go through :func:`hz_to_rad` and
:data:`NM`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import ConvergenceError

HBAR = 1.054571817e-34  # J s, CODATA 2018
NM = 1e-9


def hz_to_rad(f_hz):
    return 2.0 * math.pi * f_hz


def rad_to_hz(omega):
    return omega / (2.0 * math.pi)


@dataclass(frozen=True)
class LogisticPairParams:
    """Mirror pair of logistic rates, midpoint ``n0 + 1/2`` and steepness ``k``."""

    kappa0: float
    k: float
    n0: float

    def __post_init__(self):
        if not self.kappa0 > 0 or not self.k > 0 or not self.n0 >= 0:
            raise ValueError(f"invalid LogisticPairParams {self}")

    def kplus(self, n):
        return logistic_rate(n, self, "positive")

    def kminus(self, n):
        return logistic_rate(n, self, "negative")


def logistic_rate(n, p: LogisticPairParams, branch: str = "positive"):
    """``kappa0 / (1 + exp(+-k (n0 - n + 1/2)))``; ``+`` for the decay branch."""
    arg = p.k * (p.n0 - np.asarray(n, dtype=float) + 0.5)
    if branch == "positive":
        return p.kappa0 * expit(-arg)
    if branch == "negative":
        return p.kappa0 * expit(arg)
    raise ValueError(f"branch must be 'positive' or 'negative', got {branch!r}")


@dataclass(frozen=True)
class DissipativeCouplingProfile:
    kappa_v: float
    kappa0: float
    L: float
    d: float

    def __post_init__(self):
        if self.kappa_v < 0 or not self.kappa0 > 0 or not self.L > 0 or not self.d > 0:
            raise ValueError(f"invalid DissipativeCouplingProfile {self}")

    def __call__(self, x):
        return kappa_of_x(x, self)


def kappa_of_x(x, profile: DissipativeCouplingProfile, width: Optional[float] = None):
    """Cavity decay rate at mechanical displacement ``x``.

    ``width`` overrides ``profile.d`` (used for the blurred width).
    """
    w = profile.d if width is None else width
    z = 4.0 * (np.asarray(x, dtype=float) - profile.L) / w
    return profile.kappa_v + profile.kappa0 * expit(z)


def dkappa_dx(x, profile: DissipativeCouplingProfile, width: Optional[float] = None):
    w = profile.d if width is None else width
    s = expit(4.0 * (np.asarray(x, dtype=float) - profile.L) / w)
    return profile.kappa0 * s * (1.0 - s) * 4.0 / w


@dataclass(frozen=True)
class DerivedScales:
    x_zpf: float
    x1: float
    delta_x: float
    d_prime: float


@dataclass(frozen=True)
class OptomechParams:
    """Optomechanical parameter set.

    ``omega_a`` never enters number statistics; it is only carried into the
    Hamiltonian of the bipartite model.
    """

    m_eff: float
    omega_m: float
    g0: float
    gamma: float
    n_th: float
    kappa_minus: float
    profile: DissipativeCouplingProfile
    omega_a: Optional[float] = None
    hbar: float = field(default=HBAR, repr=False)

    def __post_init__(self):
        bad = [
            name
            for name in ("m_eff", "omega_m", "g0", "gamma", "kappa_minus")
            if not getattr(self, name) > 0
        ]
        if bad or self.n_th < 0:
            raise ValueError(f"invalid OptomechParams fields: {bad or ['n_th']}")

    @classmethod
    def in_zpf_units(cls, g0, kappa0, kappa_minus, kappa_v, d, L, gamma, n_th=0.0, omega_a=None):
        """Parameters in units where ``omega_m = 1`` and lengths are in ``x_zpf``.

        Chooses ``m_eff = hbar/2`` so that ``x_zpf = 1`` exactly.
        """
        return cls(
            m_eff=HBAR / 2.0,
            omega_m=1.0,
            g0=g0,
            gamma=gamma,
            n_th=n_th,
            kappa_minus=kappa_minus,
            profile=DissipativeCouplingProfile(kappa_v=kappa_v, kappa0=kappa0, L=L, d=d),
            omega_a=omega_a,
        )

    @property
    def G(self):
        return self.g0 / derived_scales(self).x_zpf

    def with_gamma(self, gamma):
        return replace(self, gamma=gamma)


def blurred_width(d, delta_x):
    """``delta_x / tanh(delta_x / d)``; tends to ``d`` as ``delta_x -> 0``."""
    r = delta_x / d
    if r < 1e-8:
        return d * (1.0 + r * r / 3.0)
    return delta_x / math.tanh(r)


def derived_scales(p: OptomechParams) -> DerivedScales:
    x_zpf = math.sqrt(p.hbar / (2.0 * p.m_eff * p.omega_m))
    x1 = 2.0 * p.g0 * x_zpf / p.omega_m
    delta_x = x_zpf * math.sqrt(2.0 * p.n_th + 1.0)
    return DerivedScales(x_zpf=x_zpf, x1=x1, delta_x=delta_x, d_prime=blurred_width(p.profile.d, delta_x))


def _width(p: OptomechParams, use_blur: bool) -> float:
    return derived_scales(p).d_prime if use_blur else p.profile.d


def adiabatic_kappa_n(n, p: OptomechParams, use_blur: bool = True):
    """Number-dependent cavity decay rate when the oscillator follows the photons instantly."""
    return modified_kappa_n(n, p, 1.0, use_blur=use_blur)


def modified_kappa_n(n, p: OptomechParams, xi: float, use_blur: bool = True):
    """Cavity decay rate with the displacement slope reduced by ``xi``."""
    s = derived_scales(p)
    w = _width(p, use_blur)
    z = 4.0 * xi * (np.asarray(n, dtype=float) * s.x1 - p.profile.L) / w
    return p.profile.kappa_v + p.profile.kappa0 * expit(z)


def thermal_average_kappa(x_mean, delta_x, profile: DissipativeCouplingProfile, order: int = 200):
    """``<kappa(x)>`` over a Gaussian of mean ``x_mean`` and width ``delta_x``.

    Gauss-Hermite quadrature; this is the integral that the blurred-width
    closed form approximates.
    """
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    x_mean = np.atleast_1d(np.asarray(x_mean, dtype=float))
    vals = kappa_of_x(x_mean[:, None] + delta_x * nodes[None, :], profile)
    out = vals @ weights / math.sqrt(2.0 * math.pi)
    return out if out.size > 1 else float(out[0])


def mean_estimate(p: OptomechParams) -> float:
    return p.profile.L / derived_scales(p).x1 - 0.5


def fluct_estimate(p: OptomechParams, use_blur: bool = True) -> float:
    return math.sqrt(_width(p, use_blur) / (4.0 * derived_scales(p).x1))


def squeezing_db(n_bar, delta_n):
    """Number squeezing ``10 log10(dn^2 / n_bar)``; 0 dB is Poissonian."""
    return 10.0 * np.log10(np.asarray(delta_n, dtype=float) ** 2 / np.asarray(n_bar, dtype=float))


def xi_factor(gamma, kappa_minus, n_bar, delta_n):
    """Slope reduction of the conditional displacement for slow feedback.

    With ``b = sqrt(gamma / (n_bar kappa_minus))`` and ``a = delta_n b``,
    ``xi = 1 - 1/(cosh a + b sinh a)``. Large ``a`` switches to the
    exponential form ``1 - 2 e^{-a} / ((1+b) + (1-b) e^{-2a})``.
    """
    if min(gamma, kappa_minus, n_bar, delta_n) <= 0:
        raise ValueError("xi_factor needs strictly positive inputs")
    b = math.sqrt(gamma / (n_bar * kappa_minus))
    a = delta_n * b
    if a < 350.0:
        # xi = (D - 1)/D with D - 1 = 2 sinh^2(a/2) + b sinh(a), exact for small a
        dm1 = 2.0 * math.sinh(0.5 * a) ** 2 + b * math.sinh(a)
        return dm1 / (1.0 + dm1)
    e2 = math.exp(-2.0 * a)
    return 1.0 - 2.0 * math.exp(-a) / ((1.0 + b) + (1.0 - b) * e2)


@dataclass(frozen=True)
class FixedPointResult:
    delta_n: float
    xi: float
    iterations: int
    residual: float


def self_consistent_fluct(
    p: OptomechParams,
    use_blur: bool = True,
    damping: float = 0.5,
    max_iter: int = 10_000,
    tol: float = 1e-12,
) -> FixedPointResult:
    """Solve ``dn = sqrt(d' / (4 xi(dn) x1))`` by damped iteration.

    The mean photon number inside ``xi`` is :func:`mean_estimate`.
    """
    n_bar = mean_estimate(p)
    if n_bar < 1:
        raise ValueError(f"self-consistent fluctuation needs n_bar >= 1, got {n_bar:.3g}")
    s = derived_scales(p)
    w = _width(p, use_blur)
    dn0 = math.sqrt(w / (4.0 * s.x1))

    def target(dn):
        return dn0 / math.sqrt(xi_factor(p.gamma, p.kappa_minus, n_bar, dn))

    dn = dn0
    for it in range(1, max_iter + 1):
        new = (1.0 - damping) * dn + damping * target(dn)
        if not math.isfinite(new):
            raise ConvergenceError("fixed-point iterate left the finite range", residual=float("inf"))
        step = abs(new - dn)
        dn = new
        if step <= tol * max(1.0, dn):
            break
    else:
        raise ConvergenceError(
            f"self-consistent fluctuation did not converge in {max_iter} iterations",
            residual=abs(target(dn) - dn),
        )
    xi = xi_factor(p.gamma, p.kappa_minus, n_bar, dn)
    return FixedPointResult(delta_n=dn, xi=xi, iterations=it, residual=abs(target(dn) - dn) / dn)


def fd_step(n_bar: float) -> float:
    # a unit step biases the slope of exp(k n) by sinh(k)/k (4% at k = 0.5)
    return max(1e-2, 1e-5 * abs(n_bar))


def variance_from_rate_ratio(
    kplus: Callable, kminus: Callable, n_bar: Optional[float] = None, bracket=(0.0, None)
) -> float:
    """Number variance from the slope of ``kplus/kminus`` at ``n_bar``.

    Central difference with step ``max(0.01, 1e-5 n_bar)`` on the continuous
    extension of the rate functions. With ``n_bar=None`` the slope is taken
    where the two rates cross, i.e. at the peak of the continuous
    distribution; for a discrete distribution this sits half a quantum above
    its mean.
    """
    if n_bar is None:
        n_bar = rate_crossing(kplus, kminus, *bracket)
    h = fd_step(n_bar)

    def ratio(n):
        return float(kplus(n)) / float(kminus(n))

    slope = (ratio(n_bar + h) - ratio(n_bar - h)) / (2.0 * h)
    if not slope > 0:
        raise ValueError(f"rate ratio is not increasing at n={n_bar:.6g} (slope {slope:.3g})")
    return 1.0 / slope


def rate_crossing(kplus: Callable, kminus: Callable, lo: float = 0.0, hi: Optional[float] = None) -> float:
    """Real ``n`` where ``kplus(n) == kminus(n)``, searched on ``[lo, hi]``."""

    def f(n):
        return math.log(float(kplus(n))) - math.log(float(kminus(n)))

    if hi is None:
        hi = max(lo + 1.0, 1.0)
        while f(hi) < 0:
            hi *= 2.0
            if hi > 1e18:
                raise ValueError("rates never cross")
    if f(lo) > 0:
        raise ValueError("kplus already exceeds kminus at the lower bracket")
    return brentq(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)


def optomech_rate_functions(p: OptomechParams, xi: float = 1.0, use_blur: bool = True):
    """``(kplus(n), kminus(n))`` callables for the reduced optomechanical model."""

    def kplus(n):
        return modified_kappa_n(n, p, xi, use_blur=use_blur)

    def kminus(n):
        return np.full_like(np.asarray(n, dtype=float), p.kappa_minus)

    return kplus, kminus
