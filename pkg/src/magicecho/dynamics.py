"""Magic-echo reversion of a closed dipolar spin cluster.

After the first pi/2 pulse the state is ``I_x``; it evolves for ``t_A`` under
the secular dipolar Hamiltonian and then through the reversion block of
length ``t_B = 2 t_A``.  The reverted amplitude is ``Tr[I_x sigma] / Tr[I_x^2]``.

In ``full`` mode the block is the single spin-lock pulse sandwiched by pi/2
y-pulses.  Its rf term nutates the magnetization about the toggled z axis by
``omega1 t_B``; the signal is read in the frame that follows this nutation
(phase-sensitive detection locked to the rf), so only dipolar dynamics,
including the non-secular double-quantum terms, change the amplitude.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import analysis
from .lattice import SpinSystem
from .spinops import (
    SpinOperator,
    collective_operator,
    propagator,
    rotate_y,
    secular_hamiltonian,
)

MODES = ("full", "secular", "alternating")
GRID_POINTS = 32
GRID_CAP = 2e-3


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class MePulseParams:
    """Reversion block settings; ``omega1`` in rad/s, ``alpha`` in seconds."""

    omega1: float
    mode: str = "full"
    alpha: float | None = None

    def __post_init__(self):
        if self.omega1 < 0:
            raise DynamicsError("omega1 must be non-negative")
        if self.mode not in MODES:
            raise DynamicsError(f"mode must be one of {MODES}")
        if self.mode == "alternating" and not (self.alpha and self.alpha > 0):
            raise DynamicsError("alternating mode needs alpha > 0")


@dataclass(frozen=True)
class EchoDecayCurve:
    t_a_values: np.ndarray
    amplitudes: np.ndarray
    fit: analysis.DecayFit | None = None

    @property
    def fitted_decay_time(self) -> float | None:
        return None if self.fit is None else self.fit.time


@dataclass(frozen=True)
class TnsRow:
    omega1: float
    tns: float
    residual: float
    method: str
    curve: EchoDecayCurve | None = None
    error: str | None = None


def _hamiltonian(sys_or_h) -> SpinOperator:
    if isinstance(sys_or_h, SpinOperator):
        return sys_or_h
    return secular_hamiltonian(sys_or_h)


def _alternating_cycles(t_b: float, alpha: float) -> int:
    cycles = t_b / (2 * alpha)
    n = round(cycles)
    if n < 1 or abs(cycles - n) > 1e-9 * max(1.0, cycles):
        raise DynamicsError(f"t_B={t_b:g} is not an even multiple of alpha={alpha:g}")
    return n


def me_propagator(sys: SpinSystem, p: MePulseParams, t_b: float, h0: SpinOperator | None = None) -> SpinOperator:
    """Propagator of the reversion block (pi/2 pulses included)."""
    if t_b <= 0:
        raise DynamicsError("t_B must be positive")
    h0 = h0 or secular_hamiltonian(sys)
    n = h0.n_spins
    if p.mode == "secular":
        return propagator(h0, -0.5 * t_b)
    ix = collective_operator(n, "x")
    ry, ry_inv = rotate_y(math.pi / 2, n), rotate_y(-math.pi / 2, n)
    if p.mode == "full":
        hf = SpinOperator(p.omega1 * ix.matrix + h0.matrix, hermitian=True)
        core = propagator(hf, t_b).matrix
    else:
        cycles = _alternating_cycles(t_b, p.alpha)
        plus = SpinOperator(p.omega1 * ix.matrix + h0.matrix, hermitian=True)
        minus = SpinOperator(-p.omega1 * ix.matrix + h0.matrix, hermitian=True)
        block = propagator(minus, p.alpha).matrix @ propagator(plus, p.alpha).matrix
        core = np.linalg.matrix_power(block, cycles)
    return SpinOperator(ry.matrix @ core @ ry_inv.matrix, unitary=True)


def rf_frame_correction(p: MePulseParams, t_b: float, n: int) -> SpinOperator:
    """Rotation that removes the rf nutation accumulated in ``full`` mode."""
    if p.mode != "full":
        return SpinOperator(np.eye(2**n), unitary=True)
    mz = np.diag(collective_operator(n, "z").matrix).real
    return SpinOperator(np.diag(np.exp(-1j * p.omega1 * t_b * mz)), unitary=True)


def evolve_state(sys: SpinSystem, p: MePulseParams, t_a: float) -> np.ndarray:
    """Density matrix at the end of the sequence with ``t_B = 2 t_A``.

    Reference path built from full propagators; :func:`simulate_magic_echo`
    uses a faster route through the eigenbases.
    """
    h0 = secular_hamiltonian(sys)
    n = h0.n_spins
    ix = collective_operator(n, "x").matrix
    if t_a == 0:
        return ix.copy()
    u0 = propagator(h0, t_a).matrix
    u = rf_frame_correction(p, 2 * t_a, n).matrix @ me_propagator(sys, p, 2 * t_a, h0).matrix @ u0
    return u @ ix @ u.conj().T


def _parity_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(2**n)
    odd = np.array([bin(i).count("1") & 1 for i in idx], dtype=bool)
    return idx[~odd], idx[odd]


class _EchoKernel:
    """Shared read-only eigendecompositions for one (system, pulse) pair.

    The toggled block generator ``-omega1 I_z + R H R^dagger`` only couples
    states whose magnetic quantum numbers differ by an even amount, and both
    it and the secular Hamiltonian are real symmetric, so every product is
    done on the two real parity blocks.  The reverted state only has
    even/odd cross blocks (it starts as the single-quantum ``I_x``).
    """

    def __init__(self, sys: SpinSystem, p: MePulseParams, h0: SpinOperator | None = None):
        self.p = p
        self.sys = sys
        self.h0 = h0 or secular_hamiltonian(sys)
        n = self.h0.n_spins
        self.n = n
        ix = collective_operator(n, "x").matrix
        self.ix = ix
        self.norm = float(np.trace(ix @ ix).real)
        if p.mode == "alternating":
            return
        ev, od = _parity_index(n)
        h = self.h0.matrix.real
        w0e, v0e = np.linalg.eigh(h[np.ix_(ev, ev)])
        w0o, v0o = np.linalg.eigh(h[np.ix_(od, od)])
        self.w0e, self.w0o = w0e, w0o
        ix_eo = ix.real[np.ix_(ev, od)]
        self.x0 = v0e.T @ ix_eo @ v0o
        if p.mode == "full":
            ry = rotate_y(math.pi / 2, n).matrix.real
            g = ry @ (p.omega1 * ix.real + h) @ ry.T
            leak = np.abs(g[np.ix_(ev, od)]).max()
            if leak > 1e-9 * max(np.abs(g).max(), 1.0):
                raise DynamicsError("block generator mixes m-parity sectors")
            wfe, vfe = np.linalg.eigh(g[np.ix_(ev, ev)])
            wfo, vfo = np.linalg.eigh(g[np.ix_(od, od)])
            self.wfe, self.wfo = wfe, wfo
            self.me = vfe.T @ v0e
            self.mo = vfo.T @ v0o
            iy_eo = collective_operator(n, "y").matrix[np.ix_(ev, od)]
            # frame-corrected detector: Z^dagger I_x Z = cos(th) I_x - sin(th) I_y
            self.dx = vfe.T @ ix_eo @ vfo
            self.dy = vfe.T @ iy_eo @ vfo

    def _initial(self, t_a: float) -> np.ndarray:
        pe = np.exp(-1j * self.w0e * t_a)
        po = np.exp(-1j * self.w0o * t_a)
        return (pe[:, None] * self.x0) * po.conj()[None, :]

    def amplitude(self, t_a: float) -> float:
        if t_a == 0:
            return 1.0
        p = self.p
        if p.mode == "alternating":
            sigma = evolve_state(self.sys, p, t_a)
            return float(np.real(np.vdot(self.ix, sigma))) / self.norm
        a0 = self._initial(t_a)
        if p.mode == "secular":
            # exp(+i t_B H/2) with t_B = 2 t_A undoes exp(-i t_A H) exactly
            pe = np.exp(1j * self.w0e * t_a)
            po = np.exp(1j * self.w0o * t_a)
            sig = (pe[:, None] * a0) * po.conj()[None, :]
            return 2.0 * float(np.real(np.vdot(self.x0, sig))) / self.norm
        t_b = 2 * t_a
        y = self.me @ a0 @ self.mo.T
        pe = np.exp(-1j * self.wfe * t_b)
        po = np.exp(-1j * self.wfo * t_b)
        y = (pe[:, None] * y) * po.conj()[None, :]
        th = p.omega1 * t_b
        det = math.cos(th) * self.dx - math.sin(th) * self.dy
        return 2.0 * float(np.real(np.vdot(det, y))) / self.norm


def simulate_magic_echo(sys: SpinSystem, p: MePulseParams, t_a_grid, fit: bool = False) -> EchoDecayCurve:
    """Reverted amplitude on a grid of free-evolution times."""
    grid = np.asarray(t_a_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DynamicsError("t_A grid must be a non-empty 1-D sequence")
    if np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise DynamicsError("t_A grid must be non-negative and strictly increasing")
    kernel = _EchoKernel(sys, p)
    amps = np.array([kernel.amplitude(t) for t in grid])
    result = analysis.fit_exp_decay(grid, amps) if fit else None
    return EchoDecayCurve(grid, amps, result)


def linear_grid(t_max: float, points: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, t_max, points)


def adaptive_decay(sys: SpinSystem, p: MePulseParams, t_expected: float | None = None,
                   points: int = GRID_POINTS, cap: float = GRID_CAP) -> EchoDecayCurve:
    """Echo curve on ``[0, 5 T]`` with ``T`` doubled until the curve crosses 1/e.

    The eigendecompositions are computed once and reused across doublings.
    Stops at ``5 T >= cap`` and returns a censored fit if still no crossing.
    """
    if t_expected is None:
        scale = sys.intrapair_frequency or float(np.abs(sys.couplings).max())
        t_expected = 1.0 / scale if scale > 0 else cap / 5
    kernel = _EchoKernel(sys, p)
    T = t_expected
    while True:
        t_max = min(5 * T, cap)
        grid = linear_grid(t_max, points)
        amps = np.array([kernel.amplitude(t) for t in grid])
        if analysis.first_crossing(grid, amps) is not None or t_max >= cap:
            return EchoDecayCurve(grid, amps, analysis.fit_exp_decay(grid, amps))
        T *= 2


def tns_sweep(sys: SpinSystem, omega1_list, t_a_grid=None, mode: str = "full",
              workers: int = 1, keep_curves: bool = True, points: int = GRID_POINTS,
              alpha: float | None = None) -> list[TnsRow]:
    """Non-secular decay time for each rf amplitude.

    With ``t_a_grid=None`` each row uses :func:`adaptive_decay`.  Rows are
    independent; a failing row is reported without aborting the sweep.
    """
    omega1_list = [float(w) for w in omega1_list]
    if not omega1_list:
        raise DynamicsError("omega1 list is empty")

    def run(w1):
        try:
            p = MePulseParams(w1, mode, alpha)
            if t_a_grid is None:
                curve = adaptive_decay(sys, p, points=points)
            else:
                curve = simulate_magic_echo(sys, p, t_a_grid, fit=True)
            f = curve.fit
            return TnsRow(w1, f.time, f.residual, f.method, curve if keep_curves else None)
        except (DynamicsError, analysis.FitError, np.linalg.LinAlgError) as exc:
            return TnsRow(w1, math.nan, math.nan, "failed", None, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, omega1_list))
    return [run(w) for w in omega1_list]
