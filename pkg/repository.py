"""
Converters from numerical results to plain output records.
"""

from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from dirac_neck import EigenReport
from gluing_engine import GlueSweep, NewtonResult
from mode_core import Trajectory
from models import (
    BoundRow,
    DecayRecord,
    EigenReportRecord,
    EnergyReportRecord,
    GeometryRow,
    IterateRecord,
    SweepRow,
    SweepSummary,
    TraceRecord,
)
from nonlinear_flow import EnergyReport


def complex_pairs(values) -> List[List[float]]:
    """Complex array -> [[re, im], ...] in C order."""
    flat = np.asarray(values, dtype=complex).ravel()
    return [[float(z.real), float(z.imag)] for z in flat]


def to_eigen_dict(report: EigenReport) -> Dict:
    return EigenReportRecord(
        index=report.index.as_tuple(),
        eta=complex_pairs(report.eta),
        lambdas=complex_pairs(report.lambdas),
        eigenvalues=complex_pairs(report.eigenvalues),
        numeric=complex_pairs(report.numeric),
        max_delta=report.max_mismatch,
        classes=list(report.classes),
        claim_holds=report.claim_holds,
    ).model_dump()


def to_decay_dict(source: str, fit, predicted: Optional[float] = None) -> Dict:
    relative = None
    if predicted:
        relative = abs(fit.rate - predicted) / abs(predicted)
    return DecayRecord(
        source=source,
        family=fit.family,
        params={k: float(v) for k, v in fit.params.items()},
        residuals={k: float(v) for k, v in fit.residuals.items()},
        tied=fit.tied,
        predicted_rate=predicted,
        relative_error=relative,
    ).model_dump()


def to_geometry_rows(table: pd.DataFrame) -> List[Dict]:
    return [GeometryRow(**row).model_dump() for row in table.to_dict(orient="records")]


def to_trace_dicts(T: float, result: NewtonResult) -> List[Dict]:
    return [TraceRecord(T=T, **step.to_dict()).model_dump() for step in result.trace]


def to_sweep_summary(sweep: GlueSweep, pieces: str) -> Dict:
    rows = []
    for run in sweep.runs:
        geo = run.geometry
        row = SweepRow(T=geo.T, R=geo.R, epsilon=geo.epsilon)
        if run.error is not None:
            row.error = run.error["message"]
        else:
            row.residual_norm = run.residual_norm
        if run.newton is not None:
            row.correction_norm = run.newton.correction_norm
            row.contraction = run.newton.contraction
            row.iterations = run.newton.iterations
            row.converged = run.newton.converged
        rows.append(row)
    return SweepSummary(
        pieces=pieces,
        residual_slope=sweep.residual_fit.slope,
        correction_slope=sweep.correction_fit.slope,
        flagged=sweep.residual_fit.flagged,
        t0=sweep.t0,
        runs=rows,
    ).model_dump()


def to_energy_dict(report: EnergyReport, trajectory: str) -> Dict:
    return EnergyReportRecord(
        trajectory=trajectory,
        energy=report.energy,
        csd_initial=report.csd_initial,
        csd_final=report.csd_final,
        topological=report.topological,
        identity_gap=report.identity_gap,
        energy_gap=report.energy_gap,
        s0=report.s0,
        bounds=[BoundRow(tag=b.tag, lhs=b.lhs, rhs=b.rhs, holds=bool(b.holds)) for b in report.bounds],
    ).model_dump()


def to_iterate_dicts(iterates: Iterable[Trajectory], distances: List[float]) -> List[Dict]:
    out = []
    for nu, traj in enumerate(iterates):
        out.append(IterateRecord(
            iterate=nu,
            rho=[float(r) for r in traj.rho],
            distance=distances[nu - 1] if nu > 0 else None,
            sup_norm=traj.sup_norm(),
            states=[complex_pairs(state) for state in traj.states],
        ).model_dump())
    return out
