"""Command line entry point: ``radiant run`` and ``radiant compare``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .coupling import coupling_ensemble, coupling_fixed
from .emission import (
    angular_distribution_exact,
    angular_distribution_planewave,
    beam_width,
    bragg_decompose,
    cap_probability,
    chi_1d,
    chi_3d,
    planewave_rate,
    predict_1d,
    predict_3d,
    propagation_validity,
    write_angular_csv,
    write_bragg_csv,
)
from .ensemble import (
    ensemble_angular,
    mixed_photon_state,
    optical_thickness,
    purity,
    symmetric_decay_rate,
)
from .errors import ConfigError, GeometryError, NumericalError, RadiantError
from .geometry import (
    AtomArray,
    EnsembleSpec,
    LatticeSpec,
    build_lattice,
    read_positions,
    rng_metadata,
    sample_ensemble_positions,
    solve_ion_chain_equilibrium,
    spacing_from_ratio,
    wavevector,
    wavevector_grid,
)
from .io import format_cell, read_report, report_text, write_csv, write_manifest, write_text_atomic
from .modes import diagonalize, label_modes, planewave_state, spinwave_state, uniform_state, write_mode_table
from .quadrature import AngularGrid

log = logging.getLogger("radiant")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


# --- geometry from config ----------------------------------------------------

def lattice_spec(cfg: RunConfig) -> LatticeSpec:
    g, d = cfg.geometry, spacing_from_ratio(cfg.physics.lambda_over_d)
    if g.kind == "chain":
        return LatticeSpec.chain(g.n, d, g.axis)
    if g.kind == "lattice3d":
        counts = g.counts if g.counts is not None else (g.n,) * 3
        return LatticeSpec(tuple(int(c) for c in counts), d)
    raise ConfigError(f"geometry.kind {g.kind!r} is not a lattice")


def build_atoms(cfg: RunConfig) -> AtomArray:
    g = cfg.geometry
    if g.kind in ("chain", "lattice3d"):
        return build_lattice(lattice_spec(cfg))
    if g.kind == "ion_chain":
        return solve_ion_chain_equilibrium(g.n, spacing_from_ratio(cfg.physics.lambda_over_d), g.axis)
    if g.kind == "cloud":
        return sample_ensemble_positions(EnsembleSpec(g.n, g.kl_L, cfg.seed))
    if g.kind == "file":
        path = Path(g.path)
        if not path.is_absolute():
            path = Path(cfg.base_dir) / path
        try:
            return read_positions(path)
        except OSError as exc:
            raise ConfigError(f"cannot read positions: {exc}") from exc
    raise ConfigError(f"geometry.kind {g.kind!r} has no fixed positions")


def _grid(cfg: RunConfig, pole) -> AngularGrid | None:
    gc = cfg.grid
    if gc.n_theta is None:
        return None
    return AngularGrid.gauss_product(gc.n_theta, gc.n_phi or 1, pole)


def _spinwave(cfg: RunConfig, d, atoms: AtomArray):
    sw = cfg.spinwave
    if sw.kind == "uniform":
        return uniform_state(atoms.n_atoms)
    if sw.kind == "mode":
        if not isinstance(sw.n, int) or not 0 <= sw.n < atoms.n_atoms:
            raise ConfigError("spinwave.n must be a mode column index for kind = 'mode'")
        return spinwave_state(d, sw.n)
    if cfg.geometry.kind not in ("chain", "lattice3d"):
        raise ConfigError("plane-wave spin-waves need a lattice geometry")
    return planewave_state(atoms.positions, wavevector(lattice_spec(cfg), sw.n), sw.n)


def _mode_index(cfg: RunConfig):
    n = cfg.spinwave.n
    return n if isinstance(n, int) else tuple(n)


# --- experiments ---------------------------------------------------------

@dataclass
class RunResult:
    artifacts: list = field(default_factory=list)
    primary: Path | None = None


def _fixed_decomposition(cfg: RunConfig, atoms: AtomArray):
    J = coupling_fixed(atoms, cfg.physics.k_dir)
    return J, diagonalize(J)


def exp_rates(cfg: RunConfig, out: Path, figures: bool) -> RunResult:
    res = RunResult()
    g = cfg.geometry
    if g.kind == "ensemble":
        J = coupling_ensemble(g.n, g.kl_L, cfg.physics.k_dir)
        d = diagonalize(J)
        labels = None
    else:
        atoms = build_atoms(cfg)
        J, d = _fixed_decomposition(cfg, atoms)
        labels = None
        if g.kind in ("chain", "lattice3d"):
            labels = label_modes(d, wavevector_grid(lattice_spec(cfg)))
    res.primary = write_mode_table(d, out / "modes.csv", labels)
    res.artifacts.append(res.primary)
    info = {"experiment": "rates", "seed": cfg.seed, "n_atoms": d.n_atoms, "geometry": g.kind,
            "lambda_over_d": cfg.physics.lambda_over_d,
            "sum_rates": float(np.sum(d.rates)), "sum_shifts": float(np.sum(d.shifts)),
            "max_rate": float(np.max(d.rates)), "min_rate": float(np.min(d.rates)),
            "condition": d.condition}
    res.artifacts.append(write_text_atomic(out / "report.txt", report_text(info)))
    if figures:
        from .plotting import plot_rates

        x = labels[:, 2] if labels is not None and g.kind == "chain" else np.arange(d.n_modes)
        pred = chi = None
        if g.kind == "chain":
            p = predict_1d(lattice_spec(cfg))
            pred, chi = (p.labels[:, 2], p.rates), p.chi
        res.artifacts.append(plot_rates(out / "rates.png", x, d.rates, pred, chi))
    return res


def exp_angular(cfg: RunConfig, out: Path, figures: bool) -> RunResult:
    res = RunResult()
    atoms = build_atoms(cfg)
    J, d = _fixed_decomposition(cfg, atoms)
    psi = _spinwave(cfg, d, atoms)
    axis = atoms.collinear_axis()
    pole = axis if axis is not None else cfg.physics.k_dir
    dist = angular_distribution_exact(d, psi, _grid(cfg, pole), tol=cfg.grid.tol)
    res.primary = write_angular_csv(dist, out / "angular.csv")
    res.artifacts.append(res.primary)
    info = {"experiment": "angular", "seed": cfg.seed, "n_atoms": atoms.n_atoms,
            "geometry": cfg.geometry.kind, "lambda_over_d": cfg.physics.lambda_over_d,
            "total": dist.total, "nodes": dist.grid.size}
    try:
        info["fwhm"] = beam_width(dist)
    except ValueError:
        info["fwhm"] = "nan"
    if cfg.geometry.kind in ("chain", "ion_chain"):
        width = 1.0 / math.sqrt(spacing_from_ratio(cfg.physics.lambda_over_d) * atoms.n_atoms)
        info["width_1d"] = width
        info["forward_fraction_3width"] = cap_probability(dist, cfg.physics.k_dir, 3.0 * width)
    res.artifacts.append(write_text_atomic(out / "report.txt", report_text(info)))
    if figures:
        from .plotting import plot_angular

        theta = dist.grid.theta
        order = np.argsort(theta)
        ref = None
        if cfg.geometry.kind == "chain" and dist.grid.n_phi == 1:
            pw = angular_distribution_planewave(lattice_spec(cfg), cfg.physics.k_dir, _mode_index(cfg))
            ref = (theta[order], pw.func(dist.grid.directions)[order])
        res.artifacts.append(plot_angular(out / "angular.png", theta[order], dist.values[order], ref))
    return res


def exp_bragg(cfg: RunConfig, out: Path, figures: bool) -> RunResult:
    res = RunResult()
    spec = lattice_spec(cfg)
    b = bragg_decompose(spec, cfg.physics.k_dir, _mode_index(cfg))
    res.primary = write_bragg_csv(b, out / "bragg.csv")
    res.artifacts.append(res.primary)
    info = {"experiment": "bragg", "seed": cfg.seed, "n_atoms": spec.n_atoms,
            "lambda_over_d": cfg.physics.lambda_over_d, "rate": b.rate,
            "forward_probability": b.forward_probability, "escape_probability": b.escape_probability,
            "total_probability": b.total_probability,
            "existing_orders": sum(p.exists for p in b.peaks)}
    res.artifacts.append(write_text_atomic(out / "report.txt", report_text(info)))
    if figures:
        from .plotting import plot_bragg

        peaks = sorted(b.peaks, key=lambda p: p.m)
        res.artifacts.append(plot_bragg(out / "bragg.png", [p.m for p in peaks],
                                        [p.probability for p in peaks], [p.exists for p in peaks]))
    return res


def exp_predict1d(cfg: RunConfig, out: Path, figures: bool) -> RunResult:
    res = RunResult()
    spec = lattice_spec(cfg)
    p = predict_1d(spec)
    rows = [(int(n), r, bool(s)) for n, r, s in zip(p.labels[:, 2], p.rates, p.superradiant)]
    res.primary = write_csv(out / "predict.csv", ["n_label", "rate", "superradiant"], rows,
                            [f"sum,{format_cell(float(np.sum(p.rates)))},"])
    res.artifacts.append(res.primary)
    info = {"experiment": "predict1d", "seed": cfg.seed, "n_atoms": spec.n_atoms,
            "lambda_over_d": cfg.physics.lambda_over_d, "chi_1d": p.chi, "width": p.width,
            "forward_probability": p.forward_probability, "superradiant_modes": int(p.superradiant.sum())}
    res.artifacts.append(write_text_atomic(out / "report.txt", report_text(info)))
    if figures:
        from .plotting import plot_rates

        res.artifacts.append(plot_rates(out / "predict1d.png", p.labels[:, 2], p.rates, None, p.chi))
    return res


def exp_predict3d(cfg: RunConfig, out: Path, figures: bool) -> RunResult:
    res = RunResult()
    spec = lattice_spec(cfg)
    p = predict_3d(spec, cfg.physics.k_dir, _mode_index(cfg))
    direction = p.direction if p.direction is not None else (math.nan,) * 3
    info = {"experiment": "predict3d", "seed": cfg.seed, "n_atoms": spec.n_atoms,
            "lambda_over_d": cfg.physics.lambda_over_d, "regime": p.regime, "chi_3d": p.chi,
            "rate": float(p.rates[0]), "superradiant": bool(p.superradiant[0]),
            "exists": bool(p.exists[0]),
            "bragg_order": "" if p.bragg_order is None else ":".join(map(str, p.bragg_order)),
            "ux": direction[0], "uy": direction[1], "uz": direction[2], "width": p.width,
            "escape_probability": "nan" if p.escape_probability is None else p.escape_probability}
    res.primary = write_text_atomic(out / "report.txt", report_text(info))
    res.artifacts.append(res.primary)
    return res


def exp_ensemble(cfg: RunConfig, out: Path, figures: bool) -> RunResult:
    res = RunResult()
    g = cfg.geometry
    state = mixed_photon_state(g.n, g.kl_L, n_delta=cfg.grid.n_delta, k_dir=cfg.physics.k_dir,
                               chi=g.chi_en)
    ang = ensemble_angular(state, _grid(cfg, cfg.physics.k_dir))
    pr = purity(state)
    coh = ang.coherent_distribution()
    res.primary = write_angular_csv(
        type(coh)(ang.grid, ang.values, ang.total(), "ensemble", None), out / "angular.csv")
    res.artifacts.append(res.primary)
    info = {"experiment": "ensemble", "seed": cfg.seed, "n_atoms": g.n, "kl_L": g.kl_L,
            "chi_en": state.chi, "eps": state.eps, "escape_probability": ang.escape,
            "coherent_weight": ang.coherent_weight, "total": ang.total(),
            "fwhm_coherent": beam_width(coh), "purity_formula": pr.formula,
            "purity_numeric": pr.numeric, "incoherent_trace_sq": pr.incoherent_trace_sq,
            "incoherent_trace_sq_formula": pr.incoherent_trace_sq_formula,
            "cross_term": pr.cross_term, "grid_converged": pr.converged}
    res.artifacts.append(write_text_atomic(out / "report.txt", report_text(info)))
    if figures:
        from .plotting import plot_ensemble

        theta = ang.grid.theta
        order = np.argsort(theta)
        res.artifacts.append(plot_ensemble(out / "ensemble.png", theta[order],
                                           ang.grid.evaluate(ang.coherent)[order], ang.incoherent))
    return res


def exp_validate(cfg: RunConfig, out: Path, figures: bool) -> RunResult:
    res = RunResult()
    p = cfg.physics
    if cfg.geometry.kind == "ensemble":
        chi = cfg.geometry.chi_en
        if chi is None:
            chi = optical_thickness(cfg.geometry.n, cfg.geometry.kl_L)
        rates, shifts = np.array([chi + 1.0]), np.array([0.0])
    else:
        _, d = _fixed_decomposition(cfg, build_atoms(cfg))
        rates, shifts = d.rates, d.shifts
    v = propagation_validity(rates, p.gamma_bar_hz, p.length_m, shifts, p.omega_L)
    info = {"experiment": "validate", "seed": cfg.seed, "n_atoms": len(rates),
            "gamma_bar_hz": p.gamma_bar_hz, "length_m": p.length_m,
            "flag": "valid" if v.valid else "invalid", "max_ratio": v.max_ratio,
            "margin": v.margin}
    if v.shift_ratio is not None:
        info["shift_ratio"] = v.shift_ratio
    res.primary = write_text_atomic(out / "validity.txt", report_text(info))
    res.artifacts.append(res.primary)
    return res


# --- sweeps ----------------------------------------------------------------

def observe(cfg: RunConfig, names) -> tuple[dict, list]:
    """Summary observables of one configuration.

    Returns ``(values, errors)``; a failed observable is left out of
    ``values`` and described in ``errors``.
    """
    g = cfg.geometry
    out, errors = {}, []
    lattice = g.kind in ("chain", "lattice3d")
    cache = {}

    def bragg():
        if "bragg" not in cache:
            cache["bragg"] = bragg_decompose(lattice_spec(cfg), cfg.physics.k_dir, _mode_index(cfg))
        return cache["bragg"]

    def state():
        if g.kind != "ensemble":
            raise ConfigError("this observable needs geometry.kind = 'ensemble'")
        if "state" not in cache:
            cache["state"] = mixed_photon_state(g.n, g.kl_L, n_delta=cfg.grid.n_delta,
                                                k_dir=cfg.physics.k_dir, chi=g.chi_en)
        return cache["state"]

    for name in names:
        try:
            if name == "gamma0":
                if lattice:
                    out[name] = bragg().rate
                elif g.kind == "ensemble":
                    out[name] = state().chi + 1.0
                else:
                    out[name] = symmetric_decay_rate(coupling_fixed(build_atoms(cfg), cfg.physics.k_dir))
            elif name == "p0":
                if not lattice:
                    raise ConfigError("p0 needs a lattice geometry")
                out[name] = bragg().forward_probability
            elif name == "escape":
                out[name] = bragg().escape_probability if lattice else state().eps
            elif name == "eps":
                out[name] = state().eps
            elif name == "chi":
                if g.kind == "chain":
                    out[name] = chi_1d(cfg.physics.lambda_over_d)
                elif g.kind == "lattice3d":
                    out[name] = chi_3d(lattice_spec(cfg).counts[0], cfg.physics.lambda_over_d)
                else:
                    out[name] = state().chi
            elif name == "purity":
                out[name] = purity(state()).numeric
            elif name == "fwhm":
                if lattice:
                    dist = angular_distribution_planewave(lattice_spec(cfg), cfg.physics.k_dir, _mode_index(cfg))
                elif g.kind == "ensemble":
                    dist = ensemble_angular(state()).coherent_distribution()
                else:
                    atoms = build_atoms(cfg)
                    _, d = _fixed_decomposition(cfg, atoms)
                    dist = angular_distribution_exact(d, uniform_state(atoms.n_atoms))
                out[name] = beam_width(dist)
        except (RadiantError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            errors.append(f"{name}: {exc}")
    return out, errors


def _sweep_point(cfg: RunConfig, point: tuple, names) -> tuple:
    s = cfg.sweep
    try:
        local = cfg.with_value(s.parameter, point[0])
        if s.parameter2 is not None:
            local = local.with_value(s.parameter2, point[1])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            vals, errors = observe(local, names)
        msg = "; ".join(errors).replace(",", ";")
        return tuple(vals.get(n, "") for n in names) + (msg,)
    except (RadiantError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("sweep point %s failed: %s", point, exc)
        return tuple("" for _ in names) + (f"{type(exc).__name__}: {exc}".replace(",", ";"),)


def exp_sweep(cfg: RunConfig, out: Path, figures: bool, threads: int = 1) -> RunResult:
    res = RunResult()
    s = cfg.sweep
    names = list(s.observables)
    if s.parameter2 is None:
        points = sorted((v,) for v in s.values)
    else:
        points = sorted((a, b) for a in s.values for b in s.values2)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda p: _sweep_point(cfg, p, names), points))
    else:
        rows = [_sweep_point(cfg, p, names) for p in points]
    header = [s.parameter] + ([s.parameter2] if s.parameter2 else []) + names + ["error"]
    body = [tuple(p) + r for p, r in zip(points, rows)]
    res.primary = write_csv(out / "sweep.csv", header, body)
    res.artifacts.append(res.primary)
    if figures and s.parameter2 is None:
        from .plotting import plot_sweep

        cols = {}
        for k, n in enumerate(names):
            col = [r[k] for r in rows]
            cols[n] = [math.nan if v == "" else v for v in col]
        res.artifacts.append(plot_sweep(out / "sweep.png", [p[0] for p in points], cols, s.parameter))
    return res


EXPERIMENTS = {
    "rates": exp_rates,
    "angular": exp_angular,
    "bragg": exp_bragg,
    "predict1d": exp_predict1d,
    "predict3d": exp_predict3d,
    "ensemble": exp_ensemble,
    "validate": exp_validate,
}


def run(cfg: RunConfig, out_dir, threads: int = 1) -> RunResult:
    """Execute one configured experiment and write its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    figures = cfg.output.figures
    if cfg.experiment == "sweep":
        res = exp_sweep(cfg, out, figures, threads)
    else:
        res = EXPERIMENTS[cfg.experiment](cfg, out, figures)
    provenance = {"config_sha256": cfg.source_hash, "experiment": cfg.experiment, "seed": cfg.seed,
                  "rng": rng_metadata(), "version": __version__, "threads": threads,
                  "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    write_manifest(out, res.artifacts, provenance)
    return res


# --- fixture comparison ----------------------------------------------------

@dataclass
class CompareReport:
    ok: bool
    failures: list
    column_max: dict


def _read_table(path: Path):
    if path.suffix == ".txt":
        rep = read_report(path)
        return ["key", "value"], [[k, v] for k, v in rep.items()]
    with open(path, newline="") as fh:
        lines = [line[2:] if line.startswith("# ") else line for line in fh.read().splitlines()]
    rows = list(csv.reader(lines))
    if not rows:
        raise ConfigError(f"{path} is empty")
    return rows[0], rows[1:]


def _as_float(s: str):
    try:
        return float(s)
    except ValueError:
        return None


def compare_fixture(output, fixture, atol: float = 1e-12, rtol: float = 1e-9) -> CompareReport:
    """Cellwise ``|a - b| <= atol + rtol |b|``; text cells must match exactly."""
    h1, r1 = _read_table(Path(output))
    h2, r2 = _read_table(Path(fixture))
    if h1 != h2 or len(r1) != len(r2) or any(len(a) != len(b) for a, b in zip(r1, r2)):
        return CompareReport(False, ["schema mismatch"], {})
    failures = []
    colmax = {h: 0.0 for h in h1}
    for i, (ra, rb) in enumerate(zip(r1, r2), start=1):
        for h, a, b in zip(h1, ra, rb):
            fa, fb = _as_float(a), _as_float(b)
            if fa is None or fb is None:
                if a != b:
                    failures.append(f"row {i} column {h}: {a!r} != {b!r}")
                continue
            if math.isnan(fa) and math.isnan(fb):
                continue
            dev = abs(fa - fb)
            colmax[h] = max(colmax[h], dev)
            if not dev <= atol + rtol * abs(fb):
                failures.append(f"row {i} column {h}: {a} vs {b} (deviation {dev:.3e})")
    return CompareReport(not failures, failures, colmax)


# --- entry point -----------------------------------------------------------

def _configure_logging():
    level = os.environ.get("RADIANT_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radiant", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--fixture", type=Path, default=None,
                   help="compare the primary output against this file")
    c = sub.add_parser("compare", help="compare an output file against a fixture")
    c.add_argument("output", type=Path)
    c.add_argument("fixture", type=Path)
    c.add_argument("--atol", type=float, default=None)
    c.add_argument("--rtol", type=float, default=None)
    return parser


def _report_compare(rep: CompareReport) -> int:
    for h, v in rep.column_max.items():
        print(f"max deviation {h}: {v:.3e}")
    for f in rep.failures:
        print(f"FAIL {f}")
    print("PASS" if rep.ok else "FAIL")
    return EXIT_OK if rep.ok else EXIT_MISMATCH


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            for p in (args.output, args.fixture):
                if not p.exists():
                    raise ConfigError(f"{p} does not exist")
            atol = 1e-12 if args.atol is None else args.atol
            rtol = 1e-9 if args.rtol is None else args.rtol
            return _report_compare(compare_fixture(args.output, args.fixture, atol, rtol))
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = type(cfg)(**{**cfg.__dict__, "seed": args.seed})
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        res = run(cfg, args.out, args.threads)
        log.info("wrote %d artifact(s) to %s", len(res.artifacts), args.out)
        if args.fixture is not None:
            return _report_compare(compare_fixture(res.primary, args.fixture,
                                                   cfg.tolerance.atol, cfg.tolerance.rtol))
        return EXIT_OK
    except (ConfigError, GeometryError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
