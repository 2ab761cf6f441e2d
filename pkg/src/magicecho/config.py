"""Run configuration for the command-line pipeline.

Config files are JSON objects.  ``schema`` must be 1 when present; unknown
keys are rejected so typos fail loudly.  Example::

    {
      "schema": 1,
      "orientations": [0, 20],
      "omega1_khz": [40, 60, 80],
      "purity": {"temperature": 220.0}
    }

Times in the file are in microseconds, rf amplitudes in kHz (``omega1 / 2 pi``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

SCHEMA_VERSION = 1
MODES = ("full", "secular", "alternating")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PurityConfig:
    a: float = 1e-9
    temperature: float = 300.0
    mu: float = 1.66e-27
    c: float = 3000.0
    R: float = 2.0
    q: float = 0.2
    sqrt_m2_two_pi: bool = False
    gamma_factor: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run; defaults are the gypsum values.

    ``geometry=None`` uses the shipped 10-proton fixture.  ``t_a_max_us=None``
    selects the adaptive echo grid.
    """

    geometry: str | None = None
    n_spins: int = 10
    orientations: tuple[float, ...] = (0.0,)
    omega1_khz: tuple[float, ...] = (20.0, 40.0, 60.0, 80.0, 100.0, 130.0, 160.0, 200.0)
    mode: str = "full"
    alpha_us: float | None = None
    t_a_points: int = 32
    t_a_max_us: float | None = None
    fid_t_max_us: float = 2000.0
    apodization_rad_s: float | None = None
    purity: PurityConfig = field(default_factory=PurityConfig)
    purity_t_max_us: float = 500.0
    purity_points: int = 101
    tau_d_us: float = 61.0
    exclusion: float = 0.8
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_spins < 1:
            raise ConfigError("n_spins must be >= 1")
        if not self.orientations:
            raise ConfigError("orientations must not be empty")
        if self.t_a_points < 6:
            raise ConfigError("t_a_points must be >= 6")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        object.__setattr__(self, "orientations", tuple(float(v) for v in self.orientations))
        object.__setattr__(self, "omega1_khz", tuple(float(v) for v in self.omega1_khz))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["orientations"] = list(self.orientations)
        d["omega1_khz"] = list(self.omega1_khz)
        return {"schema": SCHEMA_VERSION, **d}

    def replace(self, **kw) -> RunConfig:
        return replace(self, **kw)


def _check_keys(data: dict, cls, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    schema = data.pop("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {schema!r}; expected {SCHEMA_VERSION}")
    _check_keys(data, RunConfig, "config")
    if "purity" in data:
        pur = data["purity"]
        if not isinstance(pur, dict):
            raise ConfigError("purity must be an object")
        _check_keys(pur, PurityConfig, "purity")
        data["purity"] = PurityConfig(**pur)
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)
