"""Command-line front end: ``magicecho <command> [options]``.

Every command writes CSV files plus ``metadata.json`` (config echo, tool
version, convention switches, per-row errors) into ``--out``.  Outputs
carry no timestamps, so identical configs give byte-identical files.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure of every row.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, decoherence, dynamics, lattice, spectra
from .config import ConfigError, PurityConfig, RunConfig, load_config

KHZ = 2 * math.pi * 1e3
US = 1e-6


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.9e}"
    return "" if v is None else str(v)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _switches(cfg: RunConfig) -> dict:
    return {
        "sqrt_m2_two_pi": cfg.purity.sqrt_m2_two_pi,
        "gamma_factor": cfg.purity.gamma_factor,
        "dipolar_normalization": lattice.DIPOLAR_NORMALIZATION,
        "coupling_units": "kHz/6pi -> rad/s x 6 pi 1e3",
        "echo_detection": "rf-locked frame (full mode)",
        "envelope_fit": f"exp(-t/T), window to 1/e, crossing fallback at rms > {analysis.FALLBACK_RESIDUAL}",
        "apodization_rad_s": cfg.apodization_rad_s,
        "apodization_default": f"{spectra.APODIZATION_FRACTION:g} / t_max",
        "kappa_intra": spectra.KAPPA_INTRA,
        "exclusion": cfg.exclusion,
        "seed": cfg.seed,
    }


def _write_metadata(out: Path, command: str, cfg: RunConfig, errors: list[str], extra: dict | None = None):
    meta = {
        "command": command,
        "tool": "magicecho",
        "version": __version__,
        "config": cfg.to_dict(),
        "switches": _switches(cfg),
        "errors": errors,
    }
    if extra:
        meta.update(extra)
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_fmt) + "\n")


def _geometry(cfg: RunConfig) -> lattice.CrystalGeometry:
    try:
        return lattice.load_geometry(cfg.geometry)
    except (OSError, lattice.GeometryError) as exc:
        raise UsageError(f"geometry: {exc}") from exc


def _system(cfg: RunConfig, geom, phi: float) -> lattice.SpinSystem:
    try:
        return lattice.build_spin_system(geom, phi, min(cfg.n_spins, geom.n_sites))
    except lattice.GeometryError as exc:
        raise UsageError(str(exc)) from exc


def _tag(phi: float) -> str:
    return f"{phi:g}".replace(".", "p")


def cmd_couplings(cfg: RunConfig, out: Path) -> list[str]:
    geom = _geometry(cfg)
    for phi in cfg.orientations:
        sys_ = _system(cfg, geom, phi)
        (out / f"couplings_phi{_tag(phi)}.csv").write_text(lattice.couplings_csv(sys_))
    return []


def cmd_spectrum(cfg: RunConfig, out: Path) -> list[str]:
    geom = _geometry(cfg)
    rows, errors = [], []
    for phi in cfg.orientations:
        sys_ = _system(cfg, geom, phi)
        try:
            fid = spectra.simulate_fid(sys_, spectra.fid_grid(sys_, cfg.fid_t_max_us * US))
            res = spectra.spectrum(fid, cfg.apodization_rad_s)
        except (spectra.SpectrumError, np.linalg.LinAlgError) as exc:
            errors.append(f"phi={phi:g}: {exc}")
            continue
        (out / f"spectrum_phi{_tag(phi)}.csv").write_text(spectra.spectrum_csv(res))
        s = res.summary(phi)
        rows.append([phi, s["splitting_khz"], s["width_khz"], s["m2_khz2"], s["resolved"]])
    _write_csv(out / "spectrum_summary.csv", ["phi_deg", "splitting_khz", "width_khz", "m2_khz2", "resolved"], rows)
    if not rows:
        raise NumericalFailure("; ".join(errors))
    return errors


def _echo_grid(cfg: RunConfig):
    if cfg.t_a_max_us is None:
        return None
    return dynamics.linear_grid(cfg.t_a_max_us * US, cfg.t_a_points)


def cmd_magic_echo(cfg: RunConfig, out: Path) -> list[str]:
    geom = _geometry(cfg)
    if not cfg.omega1_khz:
        raise UsageError("omega1 list is empty")
    if cfg.mode == "alternating" and not cfg.alpha_us:
        raise UsageError("alternating mode needs alpha_us")
    curves, summary, errors = [], [], []
    for phi in cfg.orientations:
        sys_ = _system(cfg, geom, phi)
        rows = dynamics.tns_sweep(sys_, [w * KHZ for w in cfg.omega1_khz], _echo_grid(cfg), cfg.mode,
                                  workers=cfg.workers, points=cfg.t_a_points,
                                  alpha=None if cfg.alpha_us is None else cfg.alpha_us * US)
        for r in rows:
            if r.error:
                errors.append(f"phi={phi:g} omega1={r.omega1:g}: {r.error}")
                continue
            summary.append([phi, r.omega1, r.tns, r.residual, r.method])
            for t, a in zip(r.curve.t_a_values, r.curve.amplitudes):
                curves.append([phi, r.omega1, t, a])
    _write_csv(out / "echo_curves.csv", ["phi_deg", "omega1_rad_s", "t_a_s", "amplitude"], curves)
    _write_csv(out / "tns_summary.csv", ["phi_deg", "omega1_rad_s", "tns_s", "fit_residual", "method"], summary)
    if not summary:
        raise NumericalFailure("; ".join(errors))
    return errors


def _purity_params(pc: PurityConfig, phi: float) -> decoherence.PurityModelParams:
    return decoherence.params_for_orientation(
        phi, a=pc.a, temperature=pc.temperature, mu=pc.mu, c=pc.c, R=pc.R, q=pc.q,
        gamma_factor=pc.gamma_factor, sqrt_m2_two_pi=pc.sqrt_m2_two_pi,
    )


def cmd_purity(cfg: RunConfig, out: Path) -> list[str]:
    grid = np.linspace(0.0, cfg.purity_t_max_us * US, cfg.purity_points)
    curves, taus, errors = [], [], []
    for phi in cfg.orientations:
        try:
            p = _purity_params(cfg.purity, phi)
            curve = decoherence.purity_curve(p, grid)
        except decoherence.DecoherenceError as exc:
            errors.append(f"phi={phi:g}: {exc}")
            continue
        taus.append([phi, p.omega_d, p.m2, curve.tau_p, curve.censored])
        curves.extend([phi, t, v] for t, v in zip(curve.times, curve.values))
    _write_csv(out / "purity_curves.csv", ["phi_deg", "t_s", "purity"], curves)
    _write_csv(out / "tau_p.csv", ["phi_deg", "omega_d_rad_s", "m2_khz2", "tau_p_s", "censored"], taus)
    if not taus:
        raise NumericalFailure("; ".join(errors))
    return errors


def _read_tns(path) -> dict[float, list[tuple[float, float]]]:
    groups: dict[float, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            groups.setdefault(float(rec["phi_deg"]), []).append((float(rec["omega1_rad_s"]), float(rec["tns_s"])))
    return groups


def cmd_fit(cfg: RunConfig, out: Path, data: str | None, tns: str | None = None) -> list[str]:
    if data is None and tns is None:
        raise UsageError("fit needs --data and/or --tns")
    errors = []
    sig_rows, rate_rows, growth_rows = [], [], []
    if data is not None:
        try:
            table = analysis.read_decay_table(data)
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"data: {exc}") from exc
        for phi, rows in table.items():
            try:
                fit = analysis.fit_sigmoid(rows, seed=cfg.seed)
            except analysis.FitError as exc:
                errors.append(f"phi={phi:g}: {exc}")
                continue
            sig_rows.append([phi, fit.A, fit.B, fit.C, fit.residual])
            dec = analysis.decompose_table(rows, fit.A, cfg.exclusion)
            rate_rows.extend([phi, r.omega1, r.t_m, r.t_ns, r.excluded] for r in dec.rows)
            g = dec.growth
            growth_rows.append([phi, g.kappa if g else math.nan, g.intercept if g else math.nan,
                                g.r2 if g else math.nan])
            errors.extend(f"phi={phi:g}: {n}" for n in dec.notes)
        _write_csv(out / "sigmoid_fit.csv", ["phi_deg", "tau_d_s", "B_rad_s", "C_s_per_rad", "residual_s"], sig_rows)
        _write_csv(out / "rate_decomposition.csv", ["phi_deg", "omega1_rad_s", "t_m_s", "t_ns_s", "excluded"], rate_rows)
        _write_csv(out / "growth_fit.csv", ["phi_deg", "kappa_s_per_rad", "intercept", "r2"], growth_rows)
    recombined = []
    if tns is not None:
        try:
            groups = _read_tns(tns)
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"tns: {exc}") from exc
        tau_d = cfg.tau_d_us * US
        for phi, rows in sorted(groups.items()):
            for w, t in sorted(rows):
                recombined.append([phi, w, t, analysis.combine_rates(t, tau_d)])
        _write_csv(out / "recombined.csv", ["phi_deg", "omega1_rad_s", "tns_s", "t_m_s"], recombined)
    if data is not None and not sig_rows and not recombined:
        raise NumericalFailure("; ".join(errors))
    return errors


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--phi", type=float, action="append", help="orientation in degrees (repeatable)")
    common.add_argument("--omega1", type=float, action="append", help="rf amplitude omega1/2pi in kHz (repeatable)")
    common.add_argument("--mode", choices=dynamics.MODES, help="reversion block mode")
    common.add_argument("--seed", type=int, help="seed for jittered fit restarts")

    parser = _Parser(prog="magicecho", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"magicecho {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("couplings", parents=[common], help="dipolar coupling table")
    sub.add_parser("spectrum", parents=[common], help="simulated FID spectra and doublet fits")
    sub.add_parser("magic-echo", parents=[common], help="echo decay curves and T_NS sweep")
    sub.add_parser("purity", parents=[common], help="purity curves and tau_P")
    fit = sub.add_parser("fit", parents=[common], help="sigmoid fits, rate decomposition, recombination")
    fit.add_argument("--data", help="CSV with phi_deg, omega1_khz, t_m_us")
    fit.add_argument("--tns", help="tns_summary.csv from magic-echo, recombined with tau_d_us")
    return parser


PURITY_DEFAULT_ORIENTATIONS = tuple(lattice.TABLE_I)


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    if args.phi:
        over["orientations"] = tuple(args.phi)
    elif args.command == "purity" and not args.config:
        over["orientations"] = PURITY_DEFAULT_ORIENTATIONS
    if args.omega1:
        over["omega1_khz"] = tuple(args.omega1)
    if args.mode:
        over["mode"] = args.mode
    if args.seed is not None:
        over["seed"] = args.seed
    return cfg.replace(**over) if over else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "couplings":
            errors = cmd_couplings(cfg, out)
        elif args.command == "spectrum":
            errors = cmd_spectrum(cfg, out)
        elif args.command == "magic-echo":
            errors = cmd_magic_echo(cfg, out)
        elif args.command == "purity":
            errors = cmd_purity(cfg, out)
        else:
            errors = cmd_fit(cfg, out, args.data, args.tns)
        _write_metadata(out, args.command, cfg, errors)
    except (ConfigError, UsageError) as exc:
        print(f"magicecho: error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        _write_metadata(out, args.command, cfg, [str(exc)])
        print(f"magicecho: numerical failure: {exc}", file=sys.stderr)
        return 2
    for e in errors:
        print(f"magicecho: warning: {e}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
