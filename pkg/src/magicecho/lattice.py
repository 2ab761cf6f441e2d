"""Proton geometry, crystal orientation and dipolar coupling tables.

Crystal Cartesian frame: ``y`` along ``b``, ``z`` along ``c``, ``x = y x z``
(parallel to ``a*``).  The crystal is rotated about ``c``; at angle ``phi``
the field direction in the crystal frame is ``(sin phi, cos phi, 0)``.

Units: positions in angstrom, couplings in rad/s internally.  Tabulated inputs
use these conventions and are converted at the boundary:

* ``kHz/6pi`` (coupling tables): ``omega [rad/s] = value * 6 pi * 1e3``
* ``kHz/2pi`` (splittings):      ``omega [rad/s] = value * 2 pi * 1e3``
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import constants

RAD_S_PER_KHZ_OVER_6PI = 6.0 * math.pi * 1e3
RAD_S_PER_KHZ_OVER_2PI = 2.0 * math.pi * 1e3

# mu0 gamma_H^2 hbar / (4 pi) in rad/s m^3
DIPOLAR_CONSTANT = (
    constants.mu_0 / (4 * math.pi) * constants.physical_constants["proton gyromag. ratio"][0] ** 2 * constants.hbar
)

# Dimensionless factor on DIPOLAR_CONSTANT fixed so that the shipped gypsum
# fixture gives 12.71 kHz/6pi for pair (1, 2) at phi = 0.  Re-derive with
# calibrate_normalization() if the fixture changes.
DIPOLAR_NORMALIZATION = -1.8594622436692594

# phi [deg] -> (omega_D [kHz/2pi], M2 [kHz^2]) measured on gypsum
TABLE_I = {
    0.0: (46.0, 1320.0),
    10.0: (42.0, 1170.0),
    20.0: (36.0, 990.0),
    30.0: (26.0, 620.0),
    35.0: (18.0, 315.0),
    40.0: (15.0, 170.0),
}

FIXTURE = "gypsum10.txt"

_COINCIDENT_ANGSTROM = 1e-6


class GeometryError(ValueError):
    """Raised for malformed or physically inconsistent geometry input."""


@dataclass(frozen=True)
class CrystalGeometry:
    """Unit cell plus proton sites in the crystal Cartesian frame.

    ``pair_partition`` holds 1-based site labels.
    """

    a: float
    b: float
    c: float
    beta: float
    sites: np.ndarray
    pair_partition: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0 or not 0 < self.beta < 180:
            raise GeometryError("cell lengths must be positive and 0 < beta < 180")
        sites = np.asarray(self.sites, dtype=float).reshape(-1, 3)
        sites.setflags(write=False)
        object.__setattr__(self, "sites", sites)
        seen: set[int] = set()
        for pair in self.pair_partition:
            for s in pair:
                if not 1 <= s <= len(sites):
                    raise GeometryError(f"pair references unknown site {s}")
                if s in seen:
                    raise GeometryError(f"site {s} appears in more than one pair")
                seen.add(s)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def cell_vectors(self) -> np.ndarray:
        """Rows ``a, b, c`` in the crystal Cartesian frame (angstrom)."""
        beta = math.radians(self.beta)
        return np.array(
            [
                [self.a * math.sin(beta), 0.0, self.a * math.cos(beta)],
                [0.0, self.b, 0.0],
                [0.0, 0.0, self.c],
            ]
        )


@dataclass(frozen=True)
class Orientation:
    """Angle between crystal axis ``b`` and the field, rotation about ``c``."""

    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(self.phi) % 180.0)

    def field_direction(self) -> np.ndarray:
        p = math.radians(self.phi)
        return np.array([math.sin(p), math.cos(p), 0.0])


@dataclass(frozen=True)
class SpinSystem:
    """Coupled proton cluster ready for simulation.

    Attributes:
        couplings: symmetric ``(N, N)`` table in rad/s, zero diagonal.
        pair_partition: 1-based labels of intrapair partners.
        intrapair_frequency: dominant splitting ``omega_D`` in rad/s.
        m2: second moment in kHz^2, or None when no tabulated value exists.
        tabulated: True when ``intrapair_frequency`` and ``m2`` come from
            the measured orientation table rather than the coupling table.
    """

    couplings: np.ndarray
    pair_partition: tuple[tuple[int, int], ...] = ()
    intrapair_frequency: float = 0.0
    m2: float | None = None
    tabulated: bool = False
    phi: float | None = None
    m2_unit: str = field(default="kHz^2", repr=False)

    def __post_init__(self):
        w = np.array(self.couplings, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GeometryError("coupling table must be square")
        if not np.allclose(w, w.T, rtol=0, atol=1e-9 * max(np.abs(w).max(), 1.0)):
            raise GeometryError("coupling table must be symmetric")
        w = 0.5 * (w + w.T)
        np.fill_diagonal(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "couplings", w)

    @property
    def n_spins(self) -> int:
        return self.couplings.shape[0]

    def intrapair_couplings(self) -> np.ndarray:
        return np.array([self.couplings[k - 1, j - 1] for k, j in self.pair_partition])

    @property
    def pair_resolved(self) -> bool:
        """Every intrapair coupling beats every interpair coupling in magnitude."""
        if not self.pair_partition:
            return False
        mask = np.ones_like(self.couplings, dtype=bool)
        np.fill_diagonal(mask, False)
        for k, j in self.pair_partition:
            mask[k - 1, j - 1] = mask[j - 1, k - 1] = False
        inter = np.abs(self.couplings[mask])
        return bool(np.abs(self.intrapair_couplings()).min() > (inter.max() if inter.size else 0.0))

    @classmethod
    def from_couplings(cls, couplings, pairs=(), **kw) -> SpinSystem:
        w = np.asarray(couplings, dtype=float)
        if "intrapair_frequency" not in kw:
            kw["intrapair_frequency"] = _dominant_intrapair(w, pairs)
        return cls(w, tuple(tuple(p) for p in pairs), **kw)


def _dominant_intrapair(w: np.ndarray, pairs) -> float:
    if pairs:
        return float(max(abs(w[k - 1, j - 1]) for k, j in pairs))
    return float(np.abs(w).max()) if w.size else 0.0


def _nearest_neighbour_partition(sites: np.ndarray) -> tuple[tuple[int, int], ...]:
    n = len(sites)
    if n < 2 or n % 2:
        raise GeometryError(f"cannot pair {n} sites; give explicit pair lines")
    d = np.linalg.norm(sites[:, None] - sites[None, :], axis=2)
    iu = np.triu_indices(n, 1)
    order = np.argsort(d[iu], kind="stable")
    free = set(range(n))
    pairs = []
    for idx in order:
        i, j = iu[0][idx], iu[1][idx]
        if i in free and j in free:
            pairs.append((int(i) + 1, int(j) + 1))
            free -= {i, j}
    np.fill_diagonal(d, np.inf)
    for i, j in pairs:
        if d[i - 1].min() < d[i - 1, j - 1] or d[j - 1].min() < d[i - 1, j - 1]:
            raise GeometryError("sites do not form mutual nearest-neighbour pairs")
    return tuple(sorted(pairs))


def parse_geometry(text: str) -> CrystalGeometry:
    """Parse the line-oriented geometry format.

    ``cell a b c beta`` once, ``site <i> <x> <y> <z>`` per proton (angstrom,
    crystal Cartesian frame), optional ``pair <i> <j>``.  ``#`` starts a comment.
    """
    cell = None
    sites: dict[int, tuple[float, float, float]] = {}
    pairs: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "cell" and len(rest) == 4:
                cell = tuple(float(v) for v in rest)
            elif key == "site" and len(rest) == 4:
                idx = int(rest[0])
                if idx in sites:
                    raise GeometryError(f"line {lineno}: duplicate site {idx}")
                sites[idx] = tuple(float(v) for v in rest[1:])
            elif key == "pair" and len(rest) == 2:
                pairs.append((int(rest[0]), int(rest[1])))
            else:
                raise GeometryError(f"line {lineno}: cannot parse {raw.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, GeometryError):
                raise
            raise GeometryError(f"line {lineno}: bad number in {raw.strip()!r}") from exc
    if cell is None:
        raise GeometryError("missing 'cell' line")
    if sorted(sites) != list(range(1, len(sites) + 1)):
        raise GeometryError("site indices must run 1..N without gaps")
    if len(sites) < 2:
        raise GeometryError("need at least two sites")
    xyz = np.array([sites[i] for i in range(1, len(sites) + 1)])
    d = np.linalg.norm(xyz[:, None] - xyz[None, :], axis=2)
    np.fill_diagonal(d, np.inf)
    if d.min() < _COINCIDENT_ANGSTROM:
        raise GeometryError("coincident sites")
    partition = tuple(pairs) if pairs else _nearest_neighbour_partition(xyz)
    return CrystalGeometry(*cell, sites=xyz, pair_partition=partition)


def load_geometry(source=None) -> CrystalGeometry:
    """Load a geometry file; ``None`` loads the shipped 10-proton gypsum cluster.

    ``source`` may be a path or a geometry document string (detected by
    containing a newline).
    """
    if source is None:
        text = resources.files("magicecho.data").joinpath(FIXTURE).read_text()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        text = Path(source).read_text()
    return parse_geometry(text)


def dipolar_coupling(r_vec, b0_dir, normalization: float = None) -> float:
    """Secular dipolar coupling ``K (1 - 3 cos^2 theta) / r^3`` in rad/s.

    Args:
        r_vec: internuclear displacement in metres.
        b0_dir: field direction (normalized internally).
        normalization: dimensionless factor on ``mu0 gamma^2 hbar / 4pi``;
            defaults to the gypsum calibration.
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise GeometryError("zero-length internuclear vector")
    b = np.asarray(b0_dir, dtype=float)
    cos_t = float(r_vec @ b) / (r * float(np.linalg.norm(b)))
    k = DIPOLAR_CONSTANT * (DIPOLAR_NORMALIZATION if normalization is None else normalization)
    return k * (1.0 - 3.0 * cos_t**2) / r**3


def coupling_table(sites_angstrom: np.ndarray, b0_dir, normalization: float = None) -> np.ndarray:
    """Vectorized :func:`dipolar_coupling` over all site pairs (rad/s)."""
    x = np.asarray(sites_angstrom, dtype=float) * 1e-10
    b = np.asarray(b0_dir, dtype=float)
    b = b / np.linalg.norm(b)
    d = x[:, None, :] - x[None, :, :]
    r = np.linalg.norm(d, axis=2)
    np.fill_diagonal(r, 1.0)
    cos_t = (d @ b) / r
    k = DIPOLAR_CONSTANT * (DIPOLAR_NORMALIZATION if normalization is None else normalization)
    w = k * (1.0 - 3.0 * cos_t**2) / r**3
    np.fill_diagonal(w, 0.0)
    return w


def calibrate_normalization(geom: CrystalGeometry, target_khz_over_6pi: float = 12.71, pair=(1, 2)) -> float:
    """Normalization that puts ``pair`` at ``target`` kHz/6pi with the field along ``b``."""
    k, j = pair
    raw = dipolar_coupling((geom.sites[k - 1] - geom.sites[j - 1]) * 1e-10, Orientation(0.0).field_direction(), 1.0)
    return target_khz_over_6pi * RAD_S_PER_KHZ_OVER_6PI / raw


def tabulated_orientation(phi: float, atol: float = 1e-9):
    """``(omega_D [rad/s], M2 [kHz^2])`` from the orientation table, or None."""
    phi = float(phi) % 180.0
    for key, (wd, m2) in TABLE_I.items():
        if abs(phi - key) < atol:
            return wd * RAD_S_PER_KHZ_OVER_2PI, m2
    return None


def build_spin_system(geom: CrystalGeometry, orient: Orientation | float, n: int | None = None) -> SpinSystem:
    """Coupling table over the first ``n`` sites (file order) at orientation ``orient``."""
    if not isinstance(orient, Orientation):
        orient = Orientation(orient)
    n = geom.n_sites if n is None else n
    if not 1 <= n <= geom.n_sites:
        raise GeometryError(f"requested {n} spins but geometry has {geom.n_sites} sites")
    w = coupling_table(geom.sites[:n], orient.field_direction())
    pairs = tuple(p for p in geom.pair_partition if max(p) <= n)
    tab = tabulated_orientation(orient.phi)
    if tab is not None:
        wd, m2 = tab
        return SpinSystem(w, pairs, wd, m2, tabulated=True, phi=orient.phi)
    return SpinSystem(w, pairs, _dominant_intrapair(w, pairs), None, tabulated=False, phi=orient.phi)


def couplings_rows(system: SpinSystem):
    """``(k, j, kHz/6pi, rad/s)`` for every ``k < j``, largest magnitude first."""
    w = system.couplings
    n = system.n_spins
    rows = [(k + 1, j + 1, w[k, j] / RAD_S_PER_KHZ_OVER_6PI, w[k, j]) for k in range(n) for j in range(k + 1, n)]
    rows.sort(key=lambda r: (-abs(round(r[2], 6)), r[0], r[1]))
    return rows


def couplings_csv(system: SpinSystem) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["k", "j", "omega_khz_over_6pi", "omega_rad_per_s"])
    for k, j, khz, rad in couplings_rows(system):
        out.writerow([k, j, f"{khz:.6f}", f"{rad:.6e}"])
    return buf.getvalue()
