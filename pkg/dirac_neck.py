"""
Linearised spinor modes on the end.

The Dirac equation in radial gauge splits into real octets.  Each octet
obeys X' = e^rho M X with the 8x8 block-cyclic matrix M built from the
2x2 blocks A and B; the perturbed system adds the n-dependent diagonal.
Eigenvalues come in closed form through eta_0, eta_1, eta_2 and are always
cross-checked against a numerical eigensolve.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib import scimath
from scipy import linalg
from scipy.integrate import solve_ivp
from scipy.optimize import linear_sum_assignment

from errors import ConsistencyError, DegenerateModeError, DomainError, IntegrationError, PreconditionError
from mode_core import ModeIndex, Trajectory
from settings import CENTER_TOL, CONSISTENCY_TOL

logger = logging.getLogger(__name__)

SADDLE = "saddle"
CENTER = "center"
DEGENERATE = "degenerate"


def _as_index(index) -> ModeIndex:
    return index if isinstance(index, ModeIndex) else ModeIndex(*index)


def dirac_blocks(l: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    A = np.array([[l, -k], [l, k]], dtype=float)
    B = 0.5 * np.array([[-l, -k], [l, -k]], dtype=float)
    return A, B


def _block_cyclic(A, B, diagonal=None, dtype=float) -> np.ndarray:
    M = np.zeros((8, 8), dtype=dtype)
    M[0:2, 2:4] = A
    M[2:4, 4:6] = B
    M[4:6, 6:8] = -A
    M[6:8, 0:2] = -B
    if diagonal is not None:
        M[np.diag_indices(8)] += np.repeat(diagonal, 2)
    return M


@dataclass(frozen=True)
class DiracBlock:
    index: ModeIndex

    @property
    def A(self) -> np.ndarray:
        return dirac_blocks(self.index.l, self.index.k)[0]

    @property
    def B(self) -> np.ndarray:
        return dirac_blocks(self.index.l, self.index.k)[1]

    @property
    def M(self) -> np.ndarray:
        return dirac_matrix(self.index)

    def fourth_power_defect(self) -> float:
        """Distance of M^4 from diag((AB)^2, (BA)^2, (AB)^2, (BA)^2)."""
        A, B = self.A, self.B
        M4 = np.linalg.matrix_power(self.M, 4)
        AB2 = np.linalg.matrix_power(A @ B, 2)
        BA2 = np.linalg.matrix_power(B @ A, 2)
        expected = linalg.block_diag(AB2, BA2, AB2, BA2)
        return float(np.max(np.abs(M4 - expected)))


def dirac_matrix(index) -> np.ndarray:
    m = _as_index(index)
    return _block_cyclic(*dirac_blocks(m.l, m.k))


def perturbed_dirac_matrix(index, rho: float) -> np.ndarray:
    m = _as_index(index)
    A, B = dirac_blocks(m.l, m.k)
    n = m.n
    e = math.exp(rho)
    diagonal = np.array([n, -(n + 1), -(n + 2), n + 1], dtype=float)
    return _block_cyclic(e * A, e * B, diagonal, dtype=complex)


# ---------------------------------------------------------------------------
# Eigenvalues
# ---------------------------------------------------------------------------

@dataclass
class EigenReport:
    index: ModeIndex
    eta: np.ndarray
    lambdas: np.ndarray
    eigenvalues: np.ndarray
    numeric: np.ndarray
    max_mismatch: float
    classes: List[str] = field(default_factory=list)
    claim_holds: Optional[bool] = None


def eta_values(l: int, k: int) -> np.ndarray:
    """eta_0 = (k^2 + 6kl + l^2)^{1/2} (principal root), eta_1 = k - l, eta_2 = k + l."""
    eta0 = complex(scimath.sqrt(k * k + 6 * k * l + l * l))
    return np.array([eta0, k - l, k + l], dtype=complex)


def formula_lambdas(l: int, k: int) -> np.ndarray:
    eta0, eta1, eta2 = eta_values(l, k)
    s = eta2 * eta2
    p = eta1 * eta0
    return 0.5 * scimath.sqrt(np.array([s + p, s - p, -s - p, -s + p], dtype=complex))


def dirac_eigenvalues(index, tol: float = CONSISTENCY_TOL) -> EigenReport:
    m = _as_index(index)
    lambdas = formula_lambdas(m.l, m.k)
    signed = np.ravel(np.column_stack([lambdas, -lambdas]))
    numeric = np.linalg.eigvals(dirac_matrix(m)).astype(complex)
    cost = np.abs(signed[:, None] - numeric[None, :])
    rows, cols = linear_sum_assignment(cost)
    matched = numeric[cols[np.argsort(rows)]]
    mismatch = float(np.max(np.abs(matched - signed)))
    scale = max(1.0, float(np.max(np.abs(signed))))
    if mismatch > tol * scale:
        logger.error(f"Eigenvalue formula disagrees with eigensolve for {m.as_tuple()}: {mismatch:.3e}")
        raise ConsistencyError(
            f"Eigenvalue formula and diagonalisation differ by {mismatch:.3e}",
            {"index": m.as_tuple(), "mismatch": mismatch},
        )
    report = EigenReport(m, eta_values(m.l, m.k), lambdas, signed, matched, mismatch)
    report.classes = classify_modes(report)
    if DEGENERATE not in report.classes:
        report.claim_holds = report.classes == [SADDLE, SADDLE, CENTER, CENTER]
        if not report.claim_holds:
            logger.warning(f"{m.as_tuple()}: classes {report.classes} differ from the two-saddle pattern")
    return report


def classify_one(value: complex, tol: float = CENTER_TOL) -> str:
    if abs(value) <= tol:
        return DEGENERATE
    if abs(value.real) > tol:
        return SADDLE
    return CENTER


def classify_modes(report: EigenReport, tol: float = CENTER_TOL) -> List[str]:
    return [classify_one(complex(v), tol) for v in report.lambdas]


# ---------------------------------------------------------------------------
# Finite-energy spinors
# ---------------------------------------------------------------------------

def _normalise(vec: np.ndarray) -> np.ndarray:
    vec = vec / np.linalg.norm(vec)
    lead = vec[np.abs(vec) > 1e-12][0]
    return vec * (abs(lead) / lead)


def stable_rate(value: complex) -> complex:
    """The member of (value, -value) with negative real part."""
    return value if value.real < 0 else -value


def stable_vectors(index) -> Tuple[np.ndarray, np.ndarray]:
    """Stable rates mu_1, mu_2 and unit eigenvectors U_1, U_2 (columns)."""
    report = dirac_eigenvalues(index)
    if report.classes[0] != SADDLE or report.classes[1] != SADDLE:
        raise DegenerateModeError(
            f"Saddle eigenvalues of {report.index.as_tuple()} are {report.classes[:2]}",
            {"index": report.index.as_tuple(), "classes": report.classes},
        )
    M = dirac_matrix(report.index).astype(complex)
    rates = np.array([stable_rate(complex(v)) for v in report.lambdas[:2]])
    vectors = []
    if abs(rates[0] - rates[1]) <= CENTER_TOL:
        basis = linalg.null_space(M - rates[0] * np.eye(8), rcond=1e-10)
        vectors = [basis[:, 0], basis[:, 1]]
    else:
        for mu in rates:
            vectors.append(linalg.null_space(M - mu * np.eye(8), rcond=1e-10)[:, 0])
    return rates, np.column_stack([_normalise(v) for v in vectors])


def finite_energy_spinor(index, c1: complex, c2: complex, tau) -> np.ndarray:
    """sum_i c_i e^{mu_i tau} U_i; mu_i = -|lambda_i| whenever lambda_i is real."""
    rates, vectors = stable_vectors(index)
    tau = np.asarray(tau, dtype=float)
    weights = np.stack([c1 * np.exp(rates[0] * tau), c2 * np.exp(rates[1] * tau)], axis=-1)
    return weights @ vectors.T


def stable_subspace(index, tol: float = CENTER_TOL) -> np.ndarray:
    """Orthonormal basis of the span of eigenvectors of M with Re < 0."""
    values, vectors = np.linalg.eig(dirac_matrix(index))
    picked = vectors[:, values.real < -tol]
    if picked.shape[1] == 0:
        return np.zeros((8, 0), dtype=complex)
    return linalg.orth(picked)


# ---------------------------------------------------------------------------
# Octet integration
# ---------------------------------------------------------------------------

def octet_indices(index) -> List[ModeIndex]:
    m = _as_index(index)
    return [
        ModeIndex(m.n, m.l, m.k),
        ModeIndex(m.n + 1, m.l, m.k),
        ModeIndex(-m.n - 2, -m.l, -m.k),
        ModeIndex(-m.n - 1, -m.l, -m.k),
    ]


def integrate_octet(index, y0, span: Tuple[float, float], cutoff: Optional[int] = None,
                    perturbed: bool = False, samples: int = 201,
                    rtol: float = 1e-12, atol: float = 1e-14) -> Trajectory:
    """Integrate X' = e^rho M X (or the perturbed system) in rho.

    Partners of the octet outside ``cutoff`` are clamped: their components
    are zeroed and decoupled.
    """
    m = _as_index(index)
    start, stop = (float(v) for v in span)
    if not (math.isfinite(start) and math.isfinite(stop)) or stop <= start:
        raise DomainError(f"Integration span must be finite and increasing, got {span}")
    y0 = np.array(y0, dtype=complex)
    if y0.shape != (8,):
        raise PreconditionError(f"Octet state needs 8 entries, got {y0.shape}")

    partners = octet_indices(m)
    keep = np.ones(8, dtype=bool)
    clamped = []
    if cutoff is not None:
        for slot, partner in enumerate(partners):
            if partner.radius > cutoff:
                keep[2 * slot:2 * slot + 2] = False
                clamped.append(partner.as_tuple())
        if clamped:
            logger.warning(f"Octet of {m.as_tuple()} clamped at cutoff {cutoff}: dropped {clamped}")
    mask = np.outer(keep, keep)
    y0[~keep] = 0.0
    M = dirac_matrix(m)

    def rhs(r, y):
        mat = perturbed_dirac_matrix(m, r) if perturbed else math.exp(r) * M
        return (mat * mask) @ y

    grid = np.linspace(start, stop, samples)
    sol = solve_ivp(rhs, (start, stop), y0, method="DOP853", t_eval=grid, rtol=rtol, atol=atol)
    if sol.status != 0:
        last = float(sol.t[-1]) if sol.t.size else start
        raise IntegrationError(
            f"Octet integration failed at rho={last}: {sol.message}",
            {"index": m.as_tuple(), "last_rho": last},
        )
    return Trajectory(sol.t, sol.y.T, m, {
        "method": "DOP853",
        "perturbed": perturbed,
        "octet": [p.as_tuple() for p in partners],
        "clamped": clamped,
    })


# ---------------------------------------------------------------------------
# Decay taxonomy
# ---------------------------------------------------------------------------

EXPONENTIAL = "exponential"
SUPEREXPONENTIAL = "superexponential"
POLYNOMIAL = "polynomial"
MIXED = "mixed"


@dataclass
class DecayFit:
    family: str
    params: Dict[str, float]
    residuals: Dict[str, float]
    tied: bool = False

    @property
    def rate(self) -> float:
        return next(iter(self.params.values()))


def _least_squares(columns: Sequence[np.ndarray], target: np.ndarray):
    design = np.column_stack(list(columns) + [np.ones_like(target)])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = float(np.sqrt(np.mean((design @ coef - target) ** 2)))
    return coef, residual


def decay_rate_classify(rho, norms, tie_ratio: float = 0.10, min_samples: int = 20) -> DecayFit:
    """Fit log norm against the decay families and keep the best.

    Families: -a rho + b, -C e^rho + b, -d log rho + b (rho > 0 only) and
    the mixed n rho - C e^rho + b.  MIXED is returned only when its residual
    is below a tenth of the best two-parameter residual.  Otherwise the best
    two-parameter family wins; when the runner-up is within ``tie_ratio``
    of it the fit is still that family, with ``tied=True``.
    """
    rho = np.asarray(rho, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if rho.size < min_samples:
        raise PreconditionError(f"Decay fit needs at least {min_samples} samples, got {rho.size}")
    if np.any(norms <= 0):
        raise DomainError("Decay fit needs positive norms")
    target = np.log(norms)
    grow = np.exp(rho)

    fits = {}
    coef, res = _least_squares([rho], target)
    fits[EXPONENTIAL] = ({"rate": -coef[0], "offset": coef[1]}, res)
    coef, res = _least_squares([grow], target)
    fits[SUPEREXPONENTIAL] = ({"C": -coef[0], "offset": coef[1]}, res)
    if np.all(rho > 0):
        coef, res = _least_squares([np.log(rho)], target)
        fits[POLYNOMIAL] = ({"degree": -coef[0], "offset": coef[1]}, res)
    coef, res = _least_squares([rho, grow], target)
    mixed = ({"n": coef[0], "C": -coef[1], "offset": coef[2]}, res)

    residuals = {name: r for name, (_, r) in fits.items()}
    residuals[MIXED] = mixed[1]
    ranked = sorted(fits, key=lambda name: fits[name][1])
    best = ranked[0]
    floor = 1e-9 * max(1.0, float(np.max(np.abs(target))))
    best_res = fits[best][1]

    if best_res > floor and mixed[1] < 0.1 * best_res:
        return DecayFit(MIXED, mixed[0], residuals)
    tied = len(ranked) > 1 and best_res > floor and fits[ranked[1]][1] <= (1 + tie_ratio) * best_res
    if tied:
        logger.warning(f"Decay fit tie between {ranked[0]} and {ranked[1]}")
    return DecayFit(best, fits[best][0], residuals, tied)
