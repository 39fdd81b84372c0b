"""Command-line front end: classical, quantum and comparison runs.

Each run writes into ``<out>/<config hash>/``: the resolved config, a log,
and the data artifacts (stamped with the config hash), plus PNG figures.

Exit codes: 0 ok, 2 configuration error, 3 not converged, 4 analysis
failure, 5 other numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import yaml

from . import __version__
from .analysis import analyze_configuration, analyze_density, density_from_state
from .basis import build_basis
from .classical import is_local_minimum, multi_start, reduced_hessian_eigenvalues
from .config import PRESETS, RunConfig, config_from_dict, get_preset, save_config
from .errors import AnalysisError, ConfigError, NotConverged, WignerFragError
from .formats import write_density, write_json, write_positions
from .integrals import QuadratureGrid, cached_tables, default_grid
from .scf import state_invariants, two_stage_protocol
from .torus import cell_from_rs

log = logging.getLogger("wignerfrag")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_ANALYSIS = 4
EXIT_NUMERICAL = 5


def _grid(cfg: RunConfig, basis) -> QuadratureGrid:
    default = default_grid(basis)
    mx = cfg.quadrature.mx or default.mx
    my = cfg.quadrature.my or default.my
    return QuadratureGrid(basis.cell, mx, my)


def run_classical(cfg: RunConfig, cell, outdir: Path, threads: int = 1) -> dict:
    tag = cfg.config_hash()
    t0 = time.perf_counter()
    res = multi_start(cell, cfg.classical.n_starts, cfg.seed, cfg.minimizer_options(), workers=threads)
    minima = []
    for (energy, conf), count in zip(res.all_minima, res.multiplicity):
        ev = reduced_hessian_eigenvalues(conf, cell)
        minima.append({
            "energy": energy,
            "multiplicity": count,
            "local_minimum": bool(is_local_minimum(conf, cell)),
            "lowest_hessian_eigenvalue": float(ev.min()) if ev.size else None,
            "positions": conf.positions,
        })
    best = res.best
    report = analyze_configuration(best, cell)
    write_positions(outdir / "positions.csv", best, cell, tag)
    write_json(outdir / "minima.json", "minima", {
        "starts": res.starts,
        "converged": res.converged_count,
        "cell": cell.to_dict(),
        "minima": minima,
        "seconds": time.perf_counter() - t0,
    }, tag)
    write_json(outdir / "classical-lattice.json", "lattice", report.to_dict(), tag)
    if cfg.analysis.plots:
        from .plotting import plot_configuration

        plot_configuration(best.positions, cell, outdir / "positions.png",
                           title=f"N={cell.n_electrons} classical, U={best.energy:.8f}")
    log.info("classical: best U = %.12f from %d/%d converged starts, %d distinct minima",
             best.energy, res.converged_count, res.starts, len(minima))
    return {"result": res, "report": report}


def run_quantum(cfg: RunConfig, cell, outdir: Path, threads: int = 1, oracle=None) -> dict:
    tag = cfg.config_hash()
    t0 = time.perf_counter()
    opts = cfg.scf_options()
    basis = build_basis(cell, cfg.basis.nx, cfg.basis.ny, cfg.basis.xi)
    grid = _grid(cfg, basis)
    tables = cached_tables(Path(cfg.out) / "integrals-cache", basis, grid, pin_charge=opts.pin_charge,
                           kernel=cfg.kernel, workers=threads)
    t_int = time.perf_counter() - t0
    state = two_stage_protocol(tables, opts, n_electrons=cell.n_electrons)
    density = density_from_state(state, basis, grid)
    payload = {
        "energy": state.energy,
        "iterations": state.iteration,
        "stages": state.stages,
        "orbital_energies": state.orbital_energies[: cell.n_electrons + 4],
        "lowest_hessian_eigenvalue": state.lowest_hessian_eigenvalue,
        "invariants": state_invariants(state, tables.S),
        "overlap_spectrum": state.s_spectrum,
        "cell": cell.to_dict(),
        "basis": basis.descriptor(),
        "quadrature": grid.to_dict(),
        "kernel": cfg.kernel,
        "seconds": {"integrals": t_int, "total": time.perf_counter() - t0},
    }
    write_density(outdir / "density.dat", density, cell.n_electrons, tag)
    # the report is written before analysis so a failed peak search leaves the SCF result behind
    write_json(outdir / "scf.json", "scf", payload, tag)
    report = analyze_density(density, cell.n_electrons, oracle=oracle, tol=cfg.analysis.class_tol,
                             threshold=cfg.analysis.peak_threshold)
    write_json(outdir / "lattice.json", "lattice", {**report.to_dict(), "basis_spacing": basis.delta}, tag)
    if cfg.analysis.plots:
        from .plotting import plot_density

        plot_density(density, outdir / "density.png", peaks=report.peaks,
                     classical=None if oracle is None else oracle.positions,
                     title=f"N={cell.n_electrons} HF, E={state.energy:.8f}")
    log.info("quantum: E = %.12f after %d iterations, %d peaks", state.energy, state.iteration, len(report.peaks))
    return {"state": state, "density": density, "report": report}


def _align_to_origin(conf):
    """Classical sites shifted so one sits at the pinning site, for plotting."""
    return dataclasses.replace(conf, positions=conf.positions - conf.positions[0])


def run(cfg: RunConfig, threads: int = 1) -> tuple[Path, dict]:
    """Execute a validated config.  Returns the run directory and results."""
    cfg.validate()
    tag = cfg.config_hash()
    outdir = Path(cfg.out) / tag
    outdir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, outdir / "config.yaml")
    handler = logging.FileHandler(outdir / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("wignerfrag").addHandler(handler)
    try:
        log.info("wignerfrag %s, config %s, mode %s", __version__, tag, cfg.mode)
        cell = cell_from_rs(cfg.rs, cfg.n_electrons, cfg.aspect)
        results = {}
        if cfg.mode in ("classical", "compare"):
            results["classical"] = run_classical(cfg, cell, outdir, threads)
        if cfg.mode in ("quantum", "compare"):
            oracle = None
            if cfg.mode == "compare":
                oracle = _align_to_origin(results["classical"]["result"].best)
            results["quantum"] = run_quantum(cfg, cell, outdir, threads, oracle)
        if cfg.mode == "compare":
            best = results["classical"]["result"].best
            q = results["quantum"]
            summary = {
                "classical_energy": best.energy,
                "hf_energy": q["state"].energy,
                "hf_above_classical": bool(q["state"].energy > best.energy),
                "matched_rms": q["report"].matched_rms,
                "basis_spacing": min(cell.lx / cfg.basis.nx, cell.ly / cfg.basis.ny),
            }
            write_json(outdir / "compare.json", "compare", summary, tag)
            results["compare"] = summary
        return outdir, results
    finally:
        logging.getLogger("wignerfrag").removeHandler(handler)
        handler.close()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wignerfrag", description=__doc__.split("\n\n")[0])
    p.add_argument("--preset", help="named configuration (see --list-presets)")
    p.add_argument("--config", type=Path, help="YAML config file; applied on top of --preset")
    p.add_argument("--mode", choices=("classical", "quantum", "compare"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1, help="worker cap for starts and FFTs")
    p.add_argument("--out", help="output root (a subdirectory per config hash is created)")
    p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    p.add_argument("--list-presets", action="store_true")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_config(args) -> RunConfig:
    cfg = get_preset(args.preset) if args.preset else RunConfig()
    if args.config:
        try:
            data = yaml.safe_load(args.config.read_text()) or {}
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a mapping")
        cfg = config_from_dict(_merge(cfg.to_dict(), data))
    over = {k: getattr(args, k) for k in ("mode", "seed", "out") if getattr(args, k) is not None}
    if args.no_plots:
        over["analysis"] = {"plots": False}
    return config_from_dict(_merge(cfg.to_dict(), over))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=logging.DEBUG, format="%(levelname)s %(name)s: %(message)s", handlers=[])
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(level)
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("wignerfrag")
    root.setLevel(logging.DEBUG if args.verbose >= 2 else logging.INFO)
    root.addHandler(console)

    if args.list_presets:
        for name, cfg in PRESETS.items():
            b = cfg.basis
            print(f"{name:34s} {cfg.mode:9s} N={cfg.n_electrons:<3d} aspect={cfg.aspect:.4f} basis={b.nx}x{b.ny}")
        return EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(args)
        outdir, results = run(cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConverged as exc:
        stage = f" ({exc.stage} stage)" if getattr(exc, "stage", None) else ""
        print(f"not converged{stage}: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except AnalysisError as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except WignerFragError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _print_summary(outdir, results)
    return EXIT_OK


def _print_summary(outdir: Path, results: dict):
    print(f"run directory: {outdir}")
    if "classical" in results:
        best = results["classical"]["result"].best
        rep = results["classical"]["report"]
        print(f"classical energy U = {best.energy:.12f}")
        if rep.psi6 is not None:
            print(f"classical |psi6| = {rep.psi6:.6f}, neighbour cv = {rep.neighbor_distance_cv:.3e}")
    if "quantum" in results:
        q = results["quantum"]
        print(f"HF energy E = {q['state'].energy:.12f} ({q['state'].iteration} iterations)")
        print(f"density peaks: {len(q['report'].peaks)}, classes: {q['report'].inequivalence_classes}")
        if q["report"].psi6 is not None:
            print(f"density |psi6| = {q['report'].psi6:.6f}")
    if "compare" in results:
        c = results["compare"]
        print(f"matched rms = {c['matched_rms']:.6g} bohr (basis spacing {c['basis_spacing']:.4g})")


if __name__ == "__main__":
    sys.exit(main())
