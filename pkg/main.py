"""
neckflow command-line entry point.

    neckflow <command> --config <path> [--out <dir>] [--seed <u64>]

Every command reads one JSON run config, writes JSON records plus a CSV
table into the output directory and exits 0.  Failures write error.json and
exit with the error's code (2 usage, 3 I/O, 4 numerical, 5 consistency).
"""

import argparse
import logging
import math
import os
import sys
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from dirac_neck import decay_rate_classify, dirac_eigenvalues, finite_energy_spinor, integrate_octet, stable_vectors
from errors import ConsistencyError, NeckflowError, UsageError
from gluing_engine import constant_pieces, demo_pieces, geometry_table, glue_sweep
from mode_core import SLOTS, conj_reflect
from models import COMMANDS, RunConfig
from nonlinear_flow import Flow3D, energy_identity, gradient_flow, integrate_sw, successive_approximation
from repository import (
    to_decay_dict,
    to_eigen_dict,
    to_energy_dict,
    to_geometry_rows,
    to_iterate_dicts,
    to_sweep_summary,
    to_trace_dicts,
)
from settings import LOG_LEVEL, output_dir
from spectrum_cache import spectrum_cache
from storage import StorageAdapter

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_spectrum(config: RunConfig, storage: StorageAdapter, seed: int) -> Dict:
    params = config.spectrum
    records: List[Dict] = []
    rows = []
    for n in range(params.n[0], params.n[1] + 1):
        for l in range(params.l[0], params.l[1] + 1):
            for k in range(params.k[0], params.k[1] + 1):
                report = spectrum_cache.get_or_compute(
                    (n, l, k), lambda index: dirac_eigenvalues(index, tol=params.tol))
                records.append(to_eigen_dict(report))
                row = {"n": n, "l": l, "k": k, "max_delta": report.max_mismatch,
                       "claim_holds": report.claim_holds, "classes": " ".join(report.classes)}
                for i, lam in enumerate(report.lambdas, start=1):
                    row[f"lambda{i}_re"] = lam.real
                    row[f"lambda{i}_im"] = lam.imag
                rows.append(row)
    logger.info(f"Spectrum: {len(records)} indices, cache {spectrum_cache.stats()}")
    storage.write_jsonl("spectrum.jsonl", records)
    storage.write_table("spectrum.csv", pd.DataFrame(rows))
    return {"count": len(records), "max_delta": max(r["max_delta"] for r in records)}


def cmd_asymptotics(config: RunConfig, storage: StorageAdapter, seed: int,
                    base_dir: str = ".") -> Dict:
    params = config.asymptotics
    c1, c2 = params.coefficients
    records = []
    for octet in params.octets:
        rates, _ = stable_vectors(octet)
        weights = [abs(rate.real) for rate, c in zip(rates, (c1, c2)) if c != 0]
        predicted = min(weights) if weights else None
        y0 = finite_energy_spinor(octet, c1, c2, math.exp(params.span[0]))
        traj = integrate_octet(octet, y0, params.span, samples=params.samples)
        fit = decay_rate_classify(traj.rho, traj.norms())
        logger.info(f"Octet {tuple(octet)}: {fit.family} rate {fit.rate:.6g} (predicted {predicted})")
        records.append(to_decay_dict(f"octet{tuple(octet)}", fit, predicted))
    for name in params.inputs:
        table = storage.load_trajectory(os.path.join(base_dir, name))
        fit = decay_rate_classify(table["rho"].to_numpy(), table["norm"].to_numpy())
        logger.info(f"Input {name}: {fit.family} rate {fit.rate:.6g}")
        records.append(to_decay_dict(name, fit))
    storage.write_jsonl("asymptotics.jsonl", records)
    rows = [{"source": r["source"], "family": r["family"], "rate": next(iter(r["params"].values())),
             "predicted_rate": r["predicted_rate"], "relative_error": r["relative_error"], "tied": r["tied"]}
            for r in records]
    storage.write_table("asymptotics.csv", pd.DataFrame(rows))
    return {"count": len(records), "families": [r["family"] for r in records]}


def _glue_pieces(config: RunConfig, storage: StorageAdapter, base_dir: str):
    params = config.glue
    if params.pieces == "demo":
        return demo_pieces(params.holonomy)
    if params.pieces == "constant":
        return constant_pieces(params.holonomy)
    return storage.load_pieces(os.path.join(base_dir, params.pieces))


def cmd_glue(config: RunConfig, storage: StorageAdapter, seed: int, base_dir: str = ".") -> Dict:
    params = config.glue
    pieces = _glue_pieces(config, storage, base_dir)
    sweep = glue_sweep(params.T_values, pieces, strict=params.strict, solve=params.solve,
                       r0=params.r0, s_window=params.s_window, points=params.points,
                       cutoff=params.cutoff, order=params.order, nu_max=params.nu_max, tol=params.tol)
    traces = []
    for run in sweep.runs:
        if run.newton is not None:
            traces.extend(to_trace_dicts(run.geometry.T, run.newton))
    summary = to_sweep_summary(sweep, params.pieces)
    storage.write_jsonl("glue_trace.jsonl", traces)
    storage.write_json("glue_sweep.json", summary)
    storage.write_table("glue_sweep.csv", pd.DataFrame(summary["runs"]))
    if summary["flagged"]:
        logger.warning("Residual slope undefined for this sweep")
    return {"residual_slope": summary["residual_slope"], "correction_slope": summary["correction_slope"],
            "flagged": summary["flagged"]}


def cmd_geometry(config: RunConfig, storage: StorageAdapter, seed: int) -> Dict:
    params = config.geometry
    table = geometry_table(params.T_values, params.r0)
    storage.write_jsonl("geometry.jsonl", to_geometry_rows(table))
    storage.write_table("geometry.csv", table)
    return {"count": len(table), "max_arc_defect": float(table["arc_defect"].abs().max())}


def _random_connection(rng: np.random.Generator, side: int) -> np.ndarray:
    """Imaginary-valued 1-form modes: b(-m) = -conj(b(m))."""
    b = rng.standard_normal((3, side, side, side)) + 1j * rng.standard_normal((3, side, side, side))
    return np.stack([0.5 * (c - conj_reflect(c)) for c in b])


def cmd_energy(config: RunConfig, storage: StorageAdapter, seed: int) -> Dict:
    params = config.energy
    rng = np.random.default_rng(seed)
    side = 2 * params.cutoff + 1
    b0 = params.amplitude * _random_connection(rng, side)
    psi0 = params.amplitude * (rng.standard_normal((2, side, side, side))
                               + 1j * rng.standard_normal((2, side, side, side)))
    t = np.linspace(0.0, params.t_end, params.samples)
    if params.trajectory == "gradient_flow":
        flow = gradient_flow(b0, psi0, t)
    else:
        flow = Flow3D(t, np.repeat(b0[None], t.size, axis=0), np.repeat(psi0[None], t.size, axis=0))
    report = energy_identity(flow, s0=params.s0)
    record = to_energy_dict(report, params.trajectory)
    storage.write_json("energy.json", record)
    storage.write_table("energy.csv", pd.DataFrame([{k: v for k, v in record.items() if k != "bounds"}]))
    if report.identity_gap > params.gap_tol:
        raise ConsistencyError(
            f"Chern-Simons identity misses by {report.identity_gap:.3e}",
            {"identity_gap": report.identity_gap, "gap_tol": params.gap_tol},
        )
    return {"identity_gap": report.identity_gap, "energy_gap": report.energy_gap}


def cmd_flow(config: RunConfig, storage: StorageAdapter, seed: int) -> Dict:
    params = config.flow
    rng = np.random.default_rng(seed)
    side = 2 * params.cutoff + 1
    state0 = np.zeros((len(SLOTS), side, side, side), dtype=complex)
    if params.amplitude:
        c = params.cutoff
        state0[:, :, c, c] = params.amplitude * (rng.standard_normal((len(SLOTS), side))
                                                 + 1j * rng.standard_normal((len(SLOTS), side)))
    xi0 = integrate_sw(state0, params.span, samples=params.samples, nonlinear=False)
    result = successive_approximation(xi0, params.nu_max, span=params.span,
                                      samples=params.samples, tol=params.tol)
    storage.write_jsonl("flow_iterates.jsonl", to_iterate_dicts(result.iterates, result.distances))
    rows = [{"iterate": nu, "distance": result.distances[nu - 1] if nu else None,
             "sup_norm": traj.sup_norm()} for nu, traj in enumerate(result.iterates)]
    storage.write_table("flow.csv", pd.DataFrame(rows))
    return {"converged": result.converged, "residual": result.residual, "ratios": result.ratios}


COMMAND_HANDLERS: Dict[str, Callable] = {
    "spectrum": cmd_spectrum,
    "asymptotics": cmd_asymptotics,
    "glue": cmd_glue,
    "energy": cmd_energy,
    "geometry": cmd_geometry,
    "flow": cmd_flow,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _seed(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {raw!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neckflow", description="Seiberg-Witten neck-stretching numerics")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--out", default=None, help="output directory (overrides NECKFLOW_OUTPUT_DIR)")
    parser.add_argument("--seed", type=_seed, default=None, help="overrides the config seed")
    return parser


def run(command: str, config_path: str, out: Optional[str] = None, seed: Optional[int] = None) -> int:
    storage = StorageAdapter(output_dir(out))
    try:
        config = storage.load_config(config_path)
        if config.command is not None and config.command != command:
            raise UsageError(f"Config is for '{config.command}', not '{command}'",
                             {"config": config.command, "command": command})
        seed = config.seed if seed is None else seed
        handler = COMMAND_HANDLERS[command]
        logger.info(f"Running {command} (seed {seed}) from {config_path}")
        if command in ("asymptotics", "glue"):
            summary = handler(config, storage, seed, base_dir=os.path.dirname(os.path.abspath(config_path)))
        else:
            summary = handler(config, storage, seed)
        storage.write_json("summary.json", dict(summary, command=command, seed=seed))
        return 0
    except NeckflowError as e:
        logger.error(f"{command} failed ({type(e).__name__}): {e.message}")
        return _report(storage, e)
    except Exception as e:
        logger.exception(f"{command} failed unexpectedly")
        return _report(storage, NeckflowError(str(e), {"type": type(e).__name__}))


def _report(storage: StorageAdapter, error: NeckflowError) -> int:
    try:
        storage.write_error(error)
    except NeckflowError as e:
        logger.error(f"Could not write error record: {e.message}")
    return error.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    return run(args.command, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
