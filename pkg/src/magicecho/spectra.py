"""Free-induction decays, spectra, doublet splittings and second moments.

The FID is ``s(t) = Tr[I_x(t) I_x] / Tr[I_x^2]`` under the secular dipolar
Hamiltonian.  Because that Hamiltonian conserves total ``I_z`` it is
diagonalized block by block, and ``s(t)`` is a finite sum of cosines over the
single-quantum transitions.  Spectra are the DFT of the apodized FID.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .lattice import RAD_S_PER_KHZ_OVER_2PI, TABLE_I, SpinSystem
from .spinops import SpinOperator, collective_operator, secular_hamiltonian

NYQUIST_MARGIN = 3.0
PEAK_PROMINENCE = 0.05
DEFAULT_FID_POINTS = 4096
APODIZATION_FRACTION = 5.0


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class Fid:
    """Sampled FID plus the largest transition frequency (rad/s) it contains."""

    times: np.ndarray
    values: np.ndarray
    max_frequency: float | None = None


@dataclass(frozen=True)
class SpectrumResult:
    """DFT spectrum and its doublet fit.

    ``splitting`` is the distance between the two fitted components and
    ``component_width`` the Gaussian sigma of one component, both in rad/s.
    ``splitting`` is 0 and ``resolved`` False when only one peak is found.
    """

    frequencies: np.ndarray
    intensities: np.ndarray
    splitting: float
    component_width: float
    resolved: bool
    apodization_width: float
    fit_residual: float = math.nan

    def summary(self, phi: float | None = None, kappa: float | None = None) -> dict:
        m2 = second_moment(self, kappa) if self.resolved else None
        return {
            "phi_deg": phi,
            "splitting_khz": self.splitting / RAD_S_PER_KHZ_OVER_2PI,
            "width_khz": self.component_width / RAD_S_PER_KHZ_OVER_2PI,
            "m2_khz2": m2,
            "resolved": self.resolved,
            "apodization_width_rad_s": self.apodization_width,
        }


def _popcount(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    return np.array([bin(i).count("1") for i in idx])


def transitions(sys_or_h) -> tuple[np.ndarray, np.ndarray]:
    """Single-quantum transition frequencies (rad/s, >= 0 not enforced) and weights.

    ``s(t) = sum(weights * cos(freqs * t))``; the weights sum to 1.
    Degenerate frequencies are merged.
    """
    h = sys_or_h if isinstance(sys_or_h, SpinOperator) else secular_hamiltonian(sys_or_h)
    n = h.n_spins
    hm = h.matrix.real
    ix = collective_operator(n, "x").matrix.real
    norm = 2.0 ** (n - 2) * n
    pc = _popcount(n)
    blocks = [np.nonzero(pc == k)[0] for k in range(n + 1)]
    eig = [np.linalg.eigh(hm[np.ix_(b, b)]) for b in blocks]
    freqs, weights = [], []
    for k in range(n):
        (ea, va), (eb, vb) = eig[k], eig[k + 1]
        x = va.T @ ix[np.ix_(blocks[k], blocks[k + 1])] @ vb
        w = 2.0 * x**2 / norm
        freqs.append((eb[None, :] - ea[:, None]).ravel())
        weights.append(w.ravel())
    f = np.concatenate(freqs)
    w = np.concatenate(weights)
    keep = w > 1e-15
    f, w = f[keep], w[keep]
    # merge degenerate lines so the time-domain sum stays cheap
    scale = max(float(np.abs(f).max()) if f.size else 0.0, 1.0)
    key = np.round(np.abs(f) / scale, 11)
    uniq, inv = np.unique(key, return_inverse=True)
    wsum = np.bincount(inv, weights=w)
    fsum = np.bincount(inv, weights=w * np.abs(f)) / wsum
    # the sum rule Tr[I_x^2] holds analytically; remove rounding drift
    return fsum, wsum / wsum.sum()


def simulate_fid(sys: SpinSystem, t_grid, chunk: int = 256) -> Fid:
    """FID on a uniform grid; values are complex with zero imaginary part."""
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise SpectrumError("time grid needs at least two points")
    dt = np.diff(t)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise SpectrumError("time grid must be uniform and increasing")
    f, w = transitions(sys)
    out = np.empty(t.size)
    for i in range(0, t.size, chunk):
        tt = t[i : i + chunk]
        out[i : i + chunk] = np.cos(np.outer(tt, f)) @ w
    return Fid(t, out.astype(complex), float(f.max()) if f.size else 0.0)


def fid_grid(sys: SpinSystem, t_max: float = 1e-3, points: int | None = None) -> np.ndarray:
    """Uniform grid from 0 to ``t_max`` fine enough for the Nyquist margin."""
    f, _ = transitions(sys)
    fmax = float(f.max()) if f.size else 0.0
    need = int(math.ceil(NYQUIST_MARGIN * fmax * t_max / math.pi)) + 1
    points = max(points or DEFAULT_FID_POINTS, need, 2)
    return np.linspace(0.0, t_max, points)


def _two_sided(values: np.ndarray) -> np.ndarray:
    # s(-t) = conj(s(t)); lay out for the DFT with t=0 at index 0
    return np.concatenate([values, np.conj(values[:0:-1])])


def spectrum(fid, apodization_width: float | None = None) -> SpectrumResult:
    """Apodized DFT and two-Gaussian doublet fit.

    Args:
        fid: a :class:`Fid` or ``(times, values)`` starting at ``t = 0``.
        apodization_width: Gaussian line broadening sigma in rad/s; the time
            window is ``exp(-(width t)^2 / 2)``.  Default ``5 / t_max``.
    """
    if isinstance(fid, Fid):
        t, s, fmax = fid.times, np.asarray(fid.values), fid.max_frequency
    else:
        t, s = (np.asarray(v) for v in fid)
        fmax = None
    t = np.asarray(t, dtype=float)
    if t[0] != 0:
        raise SpectrumError("FID must start at t = 0")
    dt = float(t[1] - t[0])
    if fmax is not None and math.pi / dt < NYQUIST_MARGIN * fmax * (1 - 1e-9):
        raise SpectrumError("sampling too coarse for the transition frequencies")
    t_max = float(t[-1])
    width = APODIZATION_FRACTION / t_max if apodization_width is None else float(apodization_width)
    if width < 0:
        raise SpectrumError("apodization width must be non-negative")
    window = np.exp(-0.5 * (width * t) ** 2)
    x = _two_sided(s.astype(complex) * window)
    L = x.size
    spec = np.fft.fftshift(np.fft.fft(x)).real * dt
    # e^{+i w t} convention; for real even data the sign does not matter
    freqs = np.fft.fftshift(np.fft.fftfreq(L, d=dt)) * 2 * math.pi
    return _fit_doublet(freqs, spec, width)


def _fit_doublet(freqs: np.ndarray, spec: np.ndarray, width: float) -> SpectrumResult:
    top = float(spec.max())
    peaks, _ = find_peaks(spec, prominence=PEAK_PROMINENCE * top)
    pos = [p for p in peaks if freqs[p] > 0]
    if len(peaks) < 2 or not pos:
        return SpectrumResult(freqs, spec, 0.0, 0.0, False, width)
    p = max(pos, key=lambda i: spec[i])
    w0 = float(freqs[p])
    # half width from the half-maximum crossing on the outer flank
    half = 0.5 * spec[p]
    j = p
    while j + 1 < len(spec) and spec[j] > half:
        j += 1
    sigma0 = max((freqs[j] - w0) / math.sqrt(2 * math.log(2)), freqs[1] - freqs[0])
    scale_w = w0
    sel = np.abs(freqs) <= w0 + 6 * sigma0
    fx, fy = freqs[sel] / scale_w, spec[sel] / top

    def model(q, f):
        amp, c, sg = q
        return amp * (np.exp(-0.5 * ((f - c) / sg) ** 2) + np.exp(-0.5 * ((f + c) / sg) ** 2))

    sol = least_squares(lambda q: model(q, fx) - fy, [1.0, 1.0, sigma0 / scale_w], method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    amp, c, sg = sol.x
    if not sol.success or c <= 0:
        return SpectrumResult(freqs, spec, 0.0, 0.0, False, width)
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return SpectrumResult(freqs, spec, 2 * c * scale_w, abs(sg) * scale_w, True, width, rms)


# Regression over the measured orientation table of M2 on (omega_D / 2pi)^2 / 4: slope is kappa_intra,
# intercept the mean inter-pair w^2 (kHz^2)
def calibrate_kappa(table=None) -> tuple[float, float, np.ndarray]:
    """Least-squares ``M2 = kappa (f_D^2 / 4) + c`` over the orientation table.

    Returns ``(kappa, c, residuals)``, residuals in kHz^2.
    """
    table = TABLE_I if table is None else table
    f = np.array([v[0] for v in table.values()])
    m2 = np.array([v[1] for v in table.values()])
    x = f**2 / 4
    kappa, c = np.polyfit(x, m2, 1)
    return float(kappa), float(c), m2 - (kappa * x + c)


KAPPA_INTRA, INTERPAIR_W2, KAPPA_RESIDUALS = calibrate_kappa()


def second_moment(spec: SpectrumResult, kappa: float | None = None) -> float:
    """``M2 = kappa (f_D / 2)^2 + w^2`` in kHz^2 from a resolved doublet.

    ``f_D = omega_D / 2 pi`` and ``w`` the component sigma, both in kHz.
    """
    if not spec.resolved:
        raise SpectrumError("second moment needs a resolved doublet")
    kappa = KAPPA_INTRA if kappa is None else kappa
    f = spec.splitting / RAD_S_PER_KHZ_OVER_2PI
    w = spec.component_width / RAD_S_PER_KHZ_OVER_2PI
    return kappa * f**2 / 4 + w**2


def spectrum_csv(spec: SpectrumResult) -> str:
    lines = ["freq_hz,intensity"]
    for f, y in zip(spec.frequencies / (2 * math.pi), spec.intensities):
        lines.append(f"{f:.6f},{y:.9e}")
    return "\n".join(lines) + "\n"


def summary_json(spec: SpectrumResult, phi: float | None = None) -> str:
    return json.dumps(spec.summary(phi), sort_keys=True, indent=2) + "\n"
