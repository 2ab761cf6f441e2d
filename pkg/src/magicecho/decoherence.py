"""Adiabatic pair-phonon decoherence: decoherence function, active-pair
distribution and the purity integral.

The purity of the spin-pair network is evaluated as

    P(t) = I(t) / I(0),   I(t) = int_0^inf exp(-k Gamma(M, t)) g(M; M0(t), q M0(t)) dM

with ``Gamma = pref * M^2 * omega_D^2 * t`` and ``M0(t) = exp(R sqrt(M2) t)``.
``k`` is 2 by default (squared matrix elements pick up twice the decay
exponent); ``gamma_factor=1`` is kept as a switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants
from scipy.integrate import trapezoid

PROTON_MASS_DEFAULT = 1.66e-27
TAU_CAP = 2e-3

M0_EXPONENT_CAP = 700.0
_DECAY_CUTOFF = 60.0


class DecoherenceError(ValueError):
    pass


class QuadratureError(DecoherenceError):
    """Trapezoid refinement failed to stabilize."""


@dataclass(frozen=True)
class PurityModelParams:
    """Inputs of the purity model.

    ``omega_d`` is the intrapair frequency in rad/s; ``m2`` the second moment
    in kHz^2.  ``sqrt_m2_two_pi`` selects whether ``sqrt(M2)`` enters the
    growth rate as ``2 pi sqrt(M2)`` (angular) or ``sqrt(M2)`` (linear,
    default).
    """

    omega_d: float
    m2: float
    a: float = 1e-9
    temperature: float = 300.0
    mu: float = PROTON_MASS_DEFAULT
    c: float = 3000.0
    R: float = 2.0
    q: float = 0.2
    gamma_factor: float = 2.0
    sqrt_m2_two_pi: bool = False

    def __post_init__(self):
        for name in ("omega_d", "m2", "a", "temperature", "mu", "c", "R", "q"):
            if not getattr(self, name) > 0:
                raise DecoherenceError(f"{name} must be positive")
        if self.gamma_factor not in (1.0, 2.0):
            raise DecoherenceError("gamma_factor must be 1 or 2")

    @property
    def prefactor(self) -> float:
        return prefactor(self.a, self.temperature, self.mu, self.c)

    @property
    def growth_rate(self) -> float:
        """``R sqrt(M2)`` in 1/s."""
        rate = math.sqrt(self.m2) * 1e3
        if self.sqrt_m2_two_pi:
            rate *= 2 * math.pi
        return self.R * rate

    def replace(self, **kw) -> PurityModelParams:
        return replace(self, **kw)


@dataclass(frozen=True)
class PurityCurve:
    times: np.ndarray
    values: np.ndarray
    tau_p: float
    censored: bool = False


def prefactor(a: float, temperature: float, mu: float, c: float) -> float:
    """``a k_B T / (mu c^3)`` in seconds."""
    if min(a, temperature, mu, c) <= 0:
        raise DecoherenceError("prefactor inputs must be positive")
    return a * constants.k * temperature / (mu * c**3)


def gamma(M, omega_d: float, t: float, pref: float):
    """Decoherence function ``pref * M^2 * omega_d^2 * t`` (dimensionless)."""
    if t < 0:
        raise DecoherenceError("time must be non-negative")
    M = np.asarray(M, dtype=float)
    if np.any(M < 0):
        raise DecoherenceError("active-pair count must be non-negative")
    out = pref * M**2 * omega_d**2 * t
    return float(out) if out.ndim == 0 else out


def m_center(t: float, R: float, m2: float, two_pi: bool = False) -> float:
    """Centre of the active-pair distribution, ``exp(R sqrt(M2) t)``.

    ``m2`` in kHz^2; ``sqrt(M2)`` is read as a rate in 1/s (times 2 pi
    when ``two_pi``).
    """
    if t < 0:
        raise DecoherenceError("time must be non-negative")
    rate = math.sqrt(m2) * 1e3 * (2 * math.pi if two_pi else 1.0)
    arg = R * rate * t
    if arg > M0_EXPONENT_CAP:
        raise DecoherenceError(f"M0 exponent {arg:.1f} exceeds {M0_EXPONENT_CAP}")
    return math.exp(arg)


def g_distribution(M, M0: float, q: float):
    """Unnormalized Gaussian ``exp(-(M - M0)^2 / (2 dM^2)) / dM`` with ``dM = q M0``."""
    if M0 <= 0 or q <= 0:
        raise DecoherenceError("M0 and q must be positive")
    dm = q * M0
    M = np.asarray(M, dtype=float)
    return np.exp(-0.5 * ((M - M0) / dm) ** 2) / dm


def _integral(t: float, p: PurityModelParams, panels: int) -> float:
    M0 = math.exp(_checked_exponent(p.growth_rate * t))
    dm = p.q * M0
    decay = p.gamma_factor * p.prefactor * p.omega_d**2 * t
    upper = M0 + 10 * dm
    if decay > 0:
        # beyond this the decay factor is below e^-60 and only costs resolution
        upper = min(upper, math.sqrt(_DECAY_CUTOFF / decay))
    M = np.linspace(0.0, upper, panels + 1)
    f = np.exp(-decay * M**2) * g_distribution(M, M0, p.q)
    return float(trapezoid(f, M))


def _checked_exponent(arg: float) -> float:
    if arg > M0_EXPONENT_CAP:
        raise DecoherenceError(f"M0 exponent {arg:.1f} exceeds {M0_EXPONENT_CAP}")
    return arg


def integral(t: float, p: PurityModelParams, min_panels: int = 2048, rtol: float = 1e-4, max_panels: int = 2**22):
    """Trapezoid estimate of the unnormalized purity integral with panel doubling.

    Returns ``(value, panels)``; doubling stops once successive estimates
    agree to ``rtol``.
    """
    n = min_panels
    prev = _integral(t, p, n)
    while n < max_panels:
        n *= 2
        cur = _integral(t, p, n)
        if abs(cur - prev) <= rtol * abs(cur) or cur == prev:
            return cur, n
        prev = cur
    raise QuadratureError(f"trapezoid rule did not settle to {rtol} by {max_panels} panels at t={t:g}")


def purity(t: float, p: PurityModelParams, **quad) -> float:
    """Normalized purity ``I(t) / I(0)``."""
    if t < 0:
        raise DecoherenceError("time must be non-negative")
    if t == 0:
        return 1.0
    return integral(t, p, **quad)[0] / integral(0.0, p, **quad)[0]


def purity_curve(p: PurityModelParams, t_grid) -> PurityCurve:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or t_grid[0] != 0 or np.any(np.diff(t_grid) <= 0):
        raise DecoherenceError("time grid must start at 0 and increase strictly")
    i0 = integral(0.0, p)[0]
    values = np.array([1.0] + [integral(t, p)[0] / i0 for t in t_grid[1:]])
    tau, censored = tau_p(p)
    return PurityCurve(t_grid, values, tau, censored)


def _bisect_crossing(p: PurityModelParams, cap: float, rtol: float):
    target = math.exp(-1.0)
    i0 = integral(0.0, p)[0]

    def excess(t):
        return integral(t, p)[0] / i0 - target

    # bracket by doubling from a short time so we never evaluate deep in the tail
    lo, hi = 0.0, min(cap, 1.0 / p.growth_rate)
    while excess(hi) > 0:
        if hi >= cap:
            return None
        lo, hi = hi, min(2 * hi, cap)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo, hi


def tau_p(p: PurityModelParams, cap: float = TAU_CAP, rtol: float = 1e-3) -> tuple[float, bool]:
    """Time at which purity falls to 1/e, by bisection.

    Returns ``(tau, censored)``; censored results report ``cap``.
    """
    bracket = _bisect_crossing(p, cap, rtol)
    if bracket is None:
        return cap, True
    return 0.5 * (bracket[0] + bracket[1]), False


def tau_p_bracket(p: PurityModelParams, cap: float = TAU_CAP, rtol: float = 1e-3) -> tuple[float, float]:
    """Final bisection interval ``(lo, hi)``: purity is above 1/e at lo, at or below at hi."""
    bracket = _bisect_crossing(p, cap, rtol)
    if bracket is None:
        raise DecoherenceError("purity does not reach 1/e within the cap")
    return bracket


def signal_bound(p: float) -> float:
    """Upper bound ``sqrt(P)`` on a normalized observable."""
    if not 0.0 <= p <= 1.0:
        raise DecoherenceError("purity must lie in [0, 1]")
    return math.sqrt(p)


def params_for_orientation(phi: float, **overrides) -> PurityModelParams:
    """Purity parameters using the measured ``omega_D`` and ``M2`` for ``phi``."""
    from .lattice import tabulated_orientation

    tab = tabulated_orientation(phi)
    if tab is None:
        raise DecoherenceError(f"no tabulated omega_D/M2 for phi={phi}")
    wd, m2 = tab
    return PurityModelParams(omega_d=wd, m2=m2, **overrides)
