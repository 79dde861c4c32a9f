"""Dormand-Prince 5(4) integrator with PI step-size control.

Small and dependency-free on purpose: the callers need an early exit once the
right-hand side has gone quiet, which ``scipy.integrate.solve_ivp`` does not
offer without event gymnastics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import StepSizeError

# Butcher tableau (Hairer, Norsett & Wanner, Table II.5.2)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B_HAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B_HAT

_SAFETY = 0.9
_ALPHA = 0.7 / 5  # PI gains for a 5th-order pair
_BETA = 0.4 / 5


@dataclass
class Solution:
    t: float
    y: np.ndarray
    steps: int
    rejected: int
    steady: bool
    rhs_norm: float
    ts: Optional[np.ndarray] = None
    ys: Optional[np.ndarray] = None
    message: str = field(default="")


def _norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def dopri5(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0,
    t_final: float,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    h0: Optional[float] = None,
    steady_tol: Optional[float] = None,
    steady_norm: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
    sample_times=None,
    max_steps: int = 5_000_000,
    h_min: float = 0.0,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Solution:
    """Integrate ``y' = f(t, y)`` from ``t = 0`` to ``t_final``.

    If ``steady_tol`` is given, stop early once ``steady_norm(f(t, y), y)``
    (default: max-abs of the derivative) drops below it on two consecutive accepted steps.
    ``sample_times`` records the solution at those times by dense output
    (4th-order continuous extension of the stages); samples after an early
    steady exit hold the final state.
    """
    y = np.array(y0, dtype=np.result_type(np.asarray(y0).dtype, float), copy=True)
    t = 0.0
    k1 = f(t, y)
    norm = steady_norm or (lambda v, y: float(np.max(np.abs(v))) if v.size else 0.0)
    if t_final <= 0:
        return Solution(t, y, 0, 0, False, norm(k1, y))
    if h0 is None:
        d0 = _norm(y, y, y, 0.0, atol) if np.any(y) else 0.0
        d1 = _norm(k1, y, y, rtol, atol)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h0 = min(h0, t_final)
    h = h0

    samples = None
    if sample_times is not None:
        sample_times = np.asarray(sample_times, dtype=float)
        samples = np.empty((len(sample_times),) + y.shape, dtype=y.dtype)
        next_sample = 0
        while next_sample < len(sample_times) and sample_times[next_sample] <= 0.0:
            samples[next_sample] = y
            next_sample += 1

    err_prev = 1.0
    steps = rejected = 0
    quiet = 0
    k = [None] * 7
    while t < t_final:
        if steps + rejected >= max_steps:
            raise StepSizeError(f"step budget exhausted at t={t:.6g}", residual=norm(k1, y))
        if h < max(h_min, 1e-14 * max(1.0, abs(t))):
            raise StepSizeError(f"step size underflow (h={h:.3g}) at t={t:.6g}", residual=norm(k1, y))
        h = min(h, t_final - t)
        k[0] = k1
        for i in range(1, 7):
            yi = y + h * sum(a * kj for a, kj in zip(_A[i], k[:i]) if a != 0.0)
            k[i] = f(t + _C[i] * h, yi)
        y_new = yi  # stage 7 is evaluated at the 5th-order solution (FSAL)
        err = h * sum(e * kj for e, kj in zip(_E, k) if e != 0.0)
        en = _norm(err, y, y_new, rtol, atol)
        if en <= 1.0:
            if samples is not None:
                while next_sample < len(sample_times) and sample_times[next_sample] <= t + h:
                    theta = (sample_times[next_sample] - t) / h
                    samples[next_sample] = _dense(y, k, h, theta)
                    next_sample += 1
            t += h
            if post_step is not None:
                y_new = post_step(y_new)
                k[6] = f(t, y_new)
            y = y_new
            k1 = k[6]
            steps += 1
            en = max(en, 1e-10)
            fac = _SAFETY * en ** (-_ALPHA) * err_prev ** _BETA
            h *= min(5.0, max(0.2, fac))
            err_prev = en
            if steady_tol is not None:
                quiet = quiet + 1 if norm(k1, y) < steady_tol else 0
                if quiet >= 2:
                    break
        else:
            rejected += 1
            if not np.isfinite(en):
                h *= 0.1
            else:
                h *= max(0.2, _SAFETY * en ** (-_ALPHA))
    steady = steady_tol is not None and quiet >= 2
    if samples is not None and next_sample < len(sample_times):
        # early steady exit: the state no longer moves
        samples[next_sample:] = y
    return Solution(
        t=t,
        y=y,
        steps=steps,
        rejected=rejected,
        steady=steady,
        rhs_norm=norm(k1, y),
        ts=sample_times,
        ys=samples,
    )


# Continuous extension coefficients (Shampine 1986, as used by Hairer's DOPRI5)
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _dense(y0, k, h, theta):
    coeffs = _P @ np.array([theta, theta ** 2, theta ** 3, theta ** 4])
    return y0 + h * sum(c * kj for c, kj in zip(coeffs, k))
