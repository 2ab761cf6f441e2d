"""Curve fits and attenuation-rate algebra.

Attenuation times combine harmonically, ``1/T_M = 1/T_NS + 1/tau_D``: one
contribution from the non-reverted terms of the echo propagator, which
depends on the rf amplitude, and a decoherence plateau that does not.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

INV_E = math.exp(-1.0)
EXCLUSION_RATIO = 0.8
FALLBACK_RESIDUAL = 0.2
# the adaptive echo grid guarantees a 1/e crossing, so the window ends there
FIT_WINDOW = INV_E


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class SigmoidFit:
    A: float
    B: float
    C: float
    residual: float

    def __call__(self, omega1):
        return sigmoid(omega1, self.A, self.B, self.C)


@dataclass(frozen=True)
class DecayFit:
    """Result of an exponential-envelope fit.

    ``method`` is ``"lsq"``, ``"crossing"`` (interpolated 1/e crossing used
    because the least-squares residual was too large) or ``"censored"``
    (never fell below 1/e; ``time`` is inf and ``lower_bound`` the last
    grid time).
    """

    time: float
    residual: float
    method: str
    lower_bound: float = 0.0

    @property
    def censored(self) -> bool:
        return self.method == "censored"


@dataclass(frozen=True)
class GrowthFit:
    kappa: float
    intercept: float
    r2: float

    @property
    def prefactor(self) -> float:
        return math.exp(self.intercept)


@dataclass(frozen=True)
class RateRow:
    omega1: float
    t_m: float
    t_ns: float
    excluded: bool


@dataclass(frozen=True)
class RateDecomposition:
    rows: tuple[RateRow, ...]
    tau_d: float
    growth: GrowthFit | None = None
    notes: tuple[str, ...] = field(default=())

    @property
    def kappa(self) -> float | None:
        return None if self.growth is None else self.growth.kappa


def sigmoid(omega1, A, B, C):
    """``A / (1 + exp(-C (omega1 + B)))``."""
    return A / (1.0 + np.exp(-C * (np.asarray(omega1, dtype=float) + B)))


def sigmoid_rate_form(omega1, A, B, C):
    """Same curve written as a sum of rates: ``(exp(-CB)/A * exp(-C omega1) + 1/A)^-1``."""
    w = np.asarray(omega1, dtype=float)
    return 1.0 / (math.exp(-C * B) / A * np.exp(-C * w) + 1.0 / A)


def fit_sigmoid(data, seed: int = 0, restarts: int = 8) -> SigmoidFit:
    """Least-squares sigmoid through ``(omega1, t_m)`` points.

    The starting point comes from the data (plateau, half-height abscissa,
    central slope); on failure up to ``restarts`` jittered starts are tried
    with a seeded generator.
    """
    arr = np.asarray(sorted(map(tuple, data)), dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 4:
        raise FitError("sigmoid fit needs at least 4 points")
    w, t = arr[:, 0], arr[:, 1]
    if np.ptp(t) <= 1e-12 * max(abs(t).max(), 1e-300):
        raise FitError("degenerate data: all attenuation times equal")

    a0 = t.max()
    half = 0.5 * a0
    idx = int(np.argmin(np.abs(t - half)))
    b0 = -w[idx]
    lo, hi = max(idx - 1, 0), min(idx + 1, len(w) - 1)
    slope = (t[hi] - t[lo]) / (w[hi] - w[lo]) if w[hi] != w[lo] else 0.0
    c0 = 4.0 * slope / a0 if slope > 0 else 4.0 / max(np.ptp(w), 1e-300)

    # work in scaled variables so the solver sees O(1) numbers
    ws, ts = max(np.abs(w).max(), 1e-300), a0

    def resid(p):
        A, B, C = p
        return sigmoid(w / ws, A, B, C) - t / ts

    start = np.array([1.0, b0 / ws, c0 * ws])
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(restarts + 1):
        x0 = start if attempt == 0 else start * (1 + 0.3 * rng.standard_normal(3))
        x0[0] = abs(x0[0])
        try:
            sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        except (ValueError, FloatingPointError):
            continue
        if sol.success and sol.x[0] > 0 and np.all(np.isfinite(sol.x)):
            cost = float(np.sqrt(np.mean(sol.fun**2)))
            if best is None or cost < best[0] - 1e-14:
                best = (cost, sol.x)
            if attempt == 0 or cost < 1e-3:
                break
    if best is None:
        raise FitError("sigmoid fit did not converge")
    A, B, C = best[1]
    return SigmoidFit(A=A * ts, B=B * ws, C=C / ws, residual=best[0] * ts)


def decompose_rates(t_m: float, tau_d: float) -> float:
    """Non-secular time from the measured time and the decoherence plateau."""
    if not 0 < t_m < tau_d:
        raise FitError(f"need 0 < t_m < tau_d, got t_m={t_m}, tau_d={tau_d}")
    return 1.0 / (1.0 / t_m - 1.0 / tau_d)


def combine_rates(t_ns: float, tau_d: float) -> float:
    """Harmonic combination; ``t_ns = inf`` returns ``tau_d``."""
    if not (t_ns > 0 and tau_d > 0):
        raise FitError("attenuation times must be positive")
    return 1.0 / (1.0 / t_ns + 1.0 / tau_d)


def decompose_table(rows, tau_d: float, exclusion: float = EXCLUSION_RATIO) -> RateDecomposition:
    """Split each ``(omega1, t_m)`` row and fit the exponential growth law.

    Rows with ``t_m > exclusion * tau_d`` are kept but flagged excluded; the
    harmonic split is unreliable that close to the plateau.
    """
    out = []
    notes = []
    for omega1, t_m in rows:
        excluded = t_m > exclusion * tau_d
        if t_m >= tau_d:
            t_ns = math.inf
            notes.append(f"omega1={omega1:g}: t_m >= tau_d, no finite T_NS")
        else:
            t_ns = decompose_rates(t_m, tau_d)
        out.append(RateRow(float(omega1), float(t_m), t_ns, excluded))
    usable = [(r.omega1, r.t_ns) for r in out if not r.excluded and math.isfinite(r.t_ns)]
    growth = None
    try:
        growth = fit_exp_growth(usable)
    except FitError as exc:
        notes.append(str(exc))
    return RateDecomposition(tuple(out), tau_d, growth, tuple(notes))


def first_crossing(t, amp, level: float = INV_E) -> float | None:
    """Linear interpolation of the first downward crossing of ``level``."""
    t = np.asarray(t, dtype=float)
    amp = np.asarray(amp, dtype=float)
    below = np.nonzero(amp <= level)[0]
    if below.size == 0:
        return None
    i = int(below[0])
    if i == 0:
        return float(t[0])
    t0, t1, a0, a1 = t[i - 1], t[i], amp[i - 1], amp[i]
    return float(t0 + (a0 - level) * (t1 - t0) / (a0 - a1))


def fit_exp_decay(t, amp, window: float = FIT_WINDOW) -> DecayFit:
    """Fit ``exp(-t/T)`` (unit amplitude) to an echo-decay curve.

    Only the decaying part is fitted: samples up to the first one at or
    below ``window`` (default 1/e).  Closed clusters recur and go negative
    after the initial decay, and that tail is not part of the envelope.
    """
    t = np.asarray(t, dtype=float)
    amp = np.asarray(amp, dtype=float)
    if t.size < 6 or t.size != amp.size:
        raise FitError("exponential fit needs at least 6 samples")
    if abs(amp[0] - 1.0) > 1e-6:
        raise FitError("first amplitude must be normalized to 1")
    crossing = first_crossing(t, amp)
    if crossing is None:
        return DecayFit(math.inf, math.nan, "censored", lower_bound=float(t[-1]))

    below = np.nonzero(amp <= window)[0]
    stop = int(below[0]) + 1 if below.size else t.size
    tw, aw = t[:stop], amp[:stop]
    if tw.size < 3:
        return DecayFit(crossing, math.nan, "crossing")
    span = float(t[-1] - t[0])

    def resid(logT):
        return np.exp(-tw / math.exp(logT[0])) - aw

    sol = least_squares(resid, [math.log(crossing)], xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        bounds=([math.log(span * 1e-6)], [math.log(span * 1e6)]))
    T = math.exp(sol.x[0])
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    if rms > FALLBACK_RESIDUAL:
        return DecayFit(crossing, rms, "crossing")
    return DecayFit(T, rms, "lsq")


def fit_exp_growth(rows) -> GrowthFit:
    """Regress ``ln t_ns`` on ``omega1``; slope is ``kappa``."""
    pts = [(float(w), float(t)) for w, t in rows if t > 0 and math.isfinite(t)]
    if len(pts) < 3:
        raise FitError(f"exponential growth fit needs 3 usable rows, got {len(pts)}")
    w = np.array([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(w, y, 1)
    pred = slope * w + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot <= 1e-30 * max(1.0, float((y**2).sum())):
        # flat data: no growth
        return GrowthFit(0.0, float(y.mean()), 1.0)
    r2 = 1.0 - ss_res / ss_tot
    return GrowthFit(float(slope), float(intercept), r2)


def read_decay_table(path) -> dict[float, list[tuple[float, float]]]:
    """Experimental table ``phi_deg, omega1_khz, t_m_us`` grouped by orientation.

    Returned rows are ``(omega1 [rad/s], t_m [s])`` sorted by ``omega1``;
    ``omega1_khz`` is read as ``omega1 / 2 pi`` in kHz.
    """
    groups: dict[float, list[tuple[float, float]]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"phi_deg", "omega1_khz", "t_m_us"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise FitError(f"decay table must have columns {sorted(need)}")
        for rec in reader:
            rec = {k.strip(): v for k, v in rec.items()}
            phi = float(rec["phi_deg"])
            groups.setdefault(phi, []).append(
                (2 * math.pi * 1e3 * float(rec["omega1_khz"]), 1e-6 * float(rec["t_m_us"]))
            )
    return {k: sorted(v) for k, v in sorted(groups.items())}
