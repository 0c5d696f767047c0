"""
Abelian anti-self-dual equation in radial gauge on the end T^2 x R^2.

Per mode (n, l, k) the radial-gauge ASD equation becomes the linear system
X' = M(rho) X for X = (u, v, f), where (u, v) = e^rho (a_x, a_y) and f is
the d-theta component.  This module evaluates that matrix, its reduced
2x2 forms and their eigenvalues, the finite-energy solution families in
real space, their radial limits, the flat-connection gauge normal form,
and integrates single modes.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib import scimath
from scipy import fft as sfft
from scipy.integrate import cumulative_trapezoid, solve_ivp
from scipy.optimize import linear_sum_assignment

from errors import DegenerateModeError, DomainError, IntegrationError, PreconditionError
from mode_core import ModeIndex, Trajectory
from settings import EXACT_TOL, FLATNESS_TOL, RHO_MAX

logger = logging.getLogger(__name__)

VARIANT_L_NONZERO = "l_nonzero"
VARIANT_L_ZERO = "l_zero_k_nonzero"
VARIANT_CONSTANT = "constant_coefficient"


def _as_index(index) -> ModeIndex:
    return index if isinstance(index, ModeIndex) else ModeIndex(*index)


def asd_matrix(index, rho: float) -> np.ndarray:
    m = _as_index(index)
    n, l, k = m.n, m.l, m.k
    e = math.exp(rho)
    return np.array([
        [1.0, -1j * n, 1j * k * e],
        [1j * n, 1.0, -1j * l * e],
        [1j * k * e, -1j * l * e, 0.0],
    ], dtype=complex)


@dataclass(frozen=True)
class AsdModeSystem:
    index: ModeIndex

    @property
    def variant(self) -> str:
        if self.index.l != 0:
            return VARIANT_L_NONZERO
        if self.index.k != 0:
            return VARIANT_L_ZERO
        return VARIANT_CONSTANT

    def matrix(self, rho: float) -> np.ndarray:
        return asd_matrix(self.index, rho)

    def reduced(self, rho: float) -> np.ndarray:
        return reduced_matrix(self.index, rho)

    def leading(self, rho: float) -> np.ndarray:
        return leading_matrix(self.index.l, self.index.k, rho)


def reduced_matrix(index, rho: float) -> np.ndarray:
    """2x2 system left after eliminating one connection component.

    Trace 1 on both branches; the determinant is
    e^{2rho}(k^2+l^2) - n^2 - ink/l for l != 0 and k^2 e^{2rho} - n^2 for l = 0.
    """
    m = _as_index(index)
    n, l, k = m.n, m.l, m.k
    e = math.exp(rho)
    if l != 0:
        return np.array([
            [1j * n * k + l, -1j * (k * k + l * l) * e],
            [1j * (n * n / e - l * l * e), -1j * n * k],
        ], dtype=complex) / l
    if k != 0:
        return np.array([
            [1.0, -1j * k * e],
            [1j * (n * n / e - k * k * e) / k, 0.0],
        ], dtype=complex)
    raise DegenerateModeError(
        "(l, k) = (0, 0) has no reduced system; use the constant-coefficient branch",
        {"index": m.as_tuple()},
    )


def leading_matrix(l: int, k: int, rho: float) -> np.ndarray:
    e = math.exp(rho)
    if l != 0:
        return np.array([[0.0, -1j * (k * k + l * l) * e / l], [-1j * l * e, 0.0]], dtype=complex)
    if k != 0:
        return np.array([[0.0, -1j * k * e], [-1j * k * e, 0.0]], dtype=complex)
    raise DegenerateModeError(
        "(l, k) = (0, 0) has no leading system; use the constant-coefficient branch",
        {"l": l, "k": k},
    )


@dataclass(frozen=True)
class LeadingModes:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    printed_eigenvectors: np.ndarray


def leading_eigenvalues(l: int, k: int, rho: float) -> LeadingModes:
    """lambda_pm = pm i e^rho (k^2+l^2)^{1/2}.

    ``eigenvectors`` (columns) are the eigenvectors of the leading matrix,
    (1, lambda/b) with b its upper-right entry; ``printed_eigenvectors``
    carries the normalisation (1, pm l/(k^2+l^2)^{1/2}).
    """
    lead = leading_matrix(l, k, rho)
    root = math.sqrt(k * k + l * l)
    lam = np.array([1j * math.exp(rho) * root, -1j * math.exp(rho) * root])
    b = lead[0, 1]
    vectors = np.array([[1.0, 1.0], lam / b], dtype=complex)
    printed = np.array([[1.0, 1.0], [l / root, -l / root]], dtype=complex)
    return LeadingModes(lam, vectors, printed)


def perturbed_eigenvalues(index, rho: float) -> np.ndarray:
    """Eigenvalues (1 pm sqrt(1 - 4 det))/2 of the reduced system, principal root."""
    m = _as_index(index)
    n, l, k = m.n, m.l, m.k
    if l == 0 and k == 0:
        raise DegenerateModeError(
            "(l, k) = (0, 0) is the constant-coefficient branch",
            {"index": m.as_tuple()},
        )
    if l != 0:
        det = math.exp(2 * rho) * (k * k + l * l) - n * n - 1j * n * k / l
    else:
        det = k * k * math.exp(2 * rho) - n * n
    root = scimath.sqrt(1 - 4 * det)
    return np.array([(1 + root) / 2, (1 - root) / 2], dtype=complex)


def track_eigenvalues(index, rho_grid) -> np.ndarray:
    """Perturbed eigenvalue pairs along rho, ordered by continuity.

    At each step the pair is matched to the previous one by minimal total
    distance, so branches do not swap where the principal root jumps.
    """
    rho_grid = np.asarray(rho_grid, dtype=float)
    out = np.empty((rho_grid.size, 2), dtype=complex)
    for i, rho in enumerate(rho_grid):
        pair = perturbed_eigenvalues(index, rho)
        if i:
            cost = np.abs(out[i - 1][:, None] - pair[None, :])
            _, cols = linear_sum_assignment(cost)
            pair = pair[cols]
        out[i] = pair
    return out


# ---------------------------------------------------------------------------
# Finite-energy families
# ---------------------------------------------------------------------------

@dataclass
class AsdFiniteEnergyFamily:
    """Coefficients of the finite-energy solutions on the plane.

    ``decaying`` maps n != 0 to u_n; v_n defaults to -i sgn(n) u_n, the only
    value compatible with the equations.  ``disk`` maps (n, l, k) to c_{nlk}.
    """

    u0: complex = 0j
    v0: complex = 0j
    f0: complex = 0j
    decaying: Dict[int, complex] = field(default_factory=dict)
    decaying_v: Optional[Dict[int, complex]] = None
    disk: Dict[Tuple[int, int, int], complex] = field(default_factory=dict)
    real: bool = False

    def __post_init__(self):
        if 0 in self.decaying:
            raise DomainError("Decaying coefficients need n != 0")
        derived = {n: -1j * np.sign(n) * u for n, u in self.decaying.items()}
        if self.decaying_v is None:
            self.decaying_v = derived
        else:
            for n, v in self.decaying_v.items():
                if abs(v - derived.get(n, 0j)) > EXACT_TOL:
                    raise DomainError(
                        f"v_{n} = {v} is incompatible with u_{n}; expected {derived.get(n, 0j)}",
                        {"n": n},
                    )
        if self.real:
            worst = self.reality_defect()
            if worst > EXACT_TOL:
                raise DomainError(
                    f"Reality flag set but coefficients violate it by {worst:.3e}",
                    {"violation": worst},
                )

    def reality_defect(self) -> float:
        """Worst |u_n + conj(u_{-n})| and |c_nlk + conj(c_{-n,-l,-k})|."""
        worst = 0.0
        for n, u in self.decaying.items():
            worst = max(worst, abs(u + np.conj(self.decaying.get(-n, 0j))))
        for key, c in self.disk.items():
            partner = self.disk.get(tuple(-i for i in key), 0j)
            worst = max(worst, abs(c + np.conj(partner)))
        return float(worst)

    def energy_surrogate(self) -> float:
        """Truncated sum of |n u_n|^2 + |(n^2+l^2+k^2) c_nlk|^2."""
        total = sum(abs(n * u) ** 2 for n, u in self.decaying.items())
        total += sum(abs((n * n + l * l + k * k) * c) ** 2 for (n, l, k), c in self.disk.items())
        return float(total)


def _family_terms(fam: AsdFiniteEnergyFamily, x, y, rho, theta, order=(0, 0, 0)):
    """Series for (a_x, a_y, f) with d^order[0]/dx, d^order[1]/dy, d^order[2]/dtheta applied."""
    x, y, rho, theta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, rho, theta)))
    ox, oy, ot = order
    const = 1.0 if order == (0, 0, 0) else 0.0
    ax = np.full(x.shape, fam.u0 * const, dtype=complex)
    ay = np.full(x.shape, fam.v0 * const, dtype=complex)
    f = np.full(x.shape, fam.f0 * const, dtype=complex)
    if ox == 0 and oy == 0:
        for n, u in fam.decaying.items():
            wave = np.exp(-abs(n) * rho + 1j * n * theta) * (1j * n) ** ot
            ax = ax + u * wave
            ay = ay + fam.decaying_v[n] * wave
    for (n, l, k), c in fam.disk.items():
        wave = c * np.exp(1j * (l * x + k * y + n * theta))
        wave = wave * (1j * l) ** ox * (1j * k) ** oy * (1j * n) ** ot
        ax = ax + l * wave
        ay = ay + k * wave
        f = f + n * wave
    return ax, ay, f


def finite_energy_evaluate(fam: AsdFiniteEnergyFamily, w, rho, theta):
    """Return ((a_x, a_y), f) at T^2 point w = (x, y) and polar (rho, theta)."""
    ax, ay, f = _family_terms(fam, w[0], w[1], rho, theta)
    return (ax, ay), f


def asd_residual(fam: AsdFiniteEnergyFamily, w, rho, theta, step: float = 1e-4) -> np.ndarray:
    """Pointwise residuals of the three radial-gauge equations.

    d_rho a_x = -d_theta a_y + d_y f, d_rho a_y = d_theta a_x - d_x f,
    d_rho f = e^{2 rho}(d_y a_x - d_x a_y).  x, y, theta derivatives are
    exact on modes; the rho derivative is a Richardson-extrapolated
    central difference.
    """
    x, y = w

    def d_rho(h):
        plus = np.array(_family_terms(fam, x, y, np.asarray(rho) + h, theta))
        minus = np.array(_family_terms(fam, x, y, np.asarray(rho) - h, theta))
        return (plus - minus) / (2 * h)

    coarse, fine = d_rho(step), d_rho(step / 2)
    drho = (4 * fine - coarse) / 3
    dtheta = np.array(_family_terms(fam, x, y, rho, theta, (0, 0, 1)))
    dx = np.array(_family_terms(fam, x, y, rho, theta, (1, 0, 0)))
    dy = np.array(_family_terms(fam, x, y, rho, theta, (0, 1, 0)))
    e2 = np.exp(2 * np.asarray(rho, dtype=float))
    return np.array([
        drho[0] + dtheta[1] - dy[2],
        drho[1] - dtheta[0] + dx[2],
        drho[2] - e2 * (dy[0] - dx[1]),
    ])


@dataclass(frozen=True)
class RadialLimit:
    a_inf: Tuple[np.ndarray, np.ndarray]
    f_inf: np.ndarray
    gamma: np.ndarray
    gauge_defect: float


def radial_limit(fam: AsdFiniteEnergyFamily, theta, w=(0.0, 0.0)) -> RadialLimit:
    """rho -> infinity limits and the potential gamma with a_inf - (u0, v0) = d gamma."""
    x, y = w
    gamma = np.zeros(np.broadcast(np.asarray(x), np.asarray(y), np.asarray(theta)).shape, dtype=complex)
    ax = np.full(gamma.shape, fam.u0, dtype=complex)
    ay = np.full(gamma.shape, fam.v0, dtype=complex)
    f = np.full(gamma.shape, fam.f0, dtype=complex)
    defect = 0.0
    for (n, l, k), c in fam.disk.items():
        wave = np.exp(1j * (l * np.asarray(x) + k * np.asarray(y) + n * np.asarray(theta)))
        g = -1j * c
        gamma = gamma + g * wave
        ax = ax + l * c * wave
        ay = ay + k * c * wave
        f = f + n * c * wave
        # d_{T^2} of g e^{i(lx+ky)} has coefficients (i l g, i k g)
        defect = max(defect, abs(1j * l * g - l * c), abs(1j * k * g - k * c))
    return RadialLimit((ax, ay), f, gamma, float(defect))


def constant_branch_solution(n: int, y0, rho) -> np.ndarray:
    """Closed form for (l, k) = (0, 0); rho measured from the initial point."""
    u0, v0, f0 = (complex(v) for v in y0)
    rho = np.asarray(rho, dtype=float)
    A = (u0 - 1j * v0) / 2
    B = (u0 + 1j * v0) / 2
    grow = np.exp((1 + n) * rho)
    other = np.exp((1 - n) * rho)
    u = A * grow + B * other
    v = 1j * A * grow - 1j * B * other
    f = np.full(rho.shape, f0, dtype=complex)
    return np.stack([u, v, f], axis=-1)


def integrate_asd(index, y0, span: Tuple[float, float], samples: int = 201,
                  rtol: float = 1e-10, atol: float = 1e-12,
                  rho_max: float = RHO_MAX) -> Trajectory:
    m = _as_index(index)
    start, stop = (float(v) for v in span)
    if not (math.isfinite(start) and math.isfinite(stop)) or stop <= start:
        raise DomainError(f"Integration span must be finite and increasing, got {span}")
    if stop > rho_max:
        raise DomainError(
            f"Span end {stop} exceeds rho_max {rho_max}",
            {"rho_max": rho_max, "span": [start, stop]},
        )
    grid = np.linspace(start, stop, samples)
    y0 = np.asarray(y0, dtype=complex)

    if m.l == 0 and m.k == 0:
        states = constant_branch_solution(m.n, y0, grid - start)
        return Trajectory(grid, states, m, {"method": "closed_form", "variant": VARIANT_CONSTANT})

    sol = solve_ivp(
        lambda r, y: asd_matrix(m, r) @ y,
        (start, stop), y0, method="Radau", t_eval=grid,
        jac=lambda r, y: asd_matrix(m, r), rtol=rtol, atol=atol,
    )
    if sol.status != 0:
        last = float(sol.t[-1]) if sol.t.size else start
        logger.error(f"ASD integration of {m.as_tuple()} failed near rho={last}: {sol.message}")
        raise IntegrationError(
            f"Integration failed at rho={last}: {sol.message}",
            {"index": m.as_tuple(), "last_rho": last},
        )
    return Trajectory(sol.t, sol.y.T, m, {
        "method": "Radau", "rtol": rtol, "atol": atol,
        "variant": AsdModeSystem(m).variant, "nfev": int(sol.nfev),
    })


# ---------------------------------------------------------------------------
# Gauge normal form on T^2 x [r0, inf) x R
# ---------------------------------------------------------------------------

def _spectral_derivative(values: np.ndarray, axis: int) -> np.ndarray:
    size = values.shape[axis]
    wavenumbers = sfft.fftfreq(size, d=1.0 / size)
    shape = [1] * values.ndim
    shape[axis] = size
    spectrum = sfft.fft(values, axis=axis) * (1j * wavenumbers).reshape(shape)
    return sfft.ifft(spectrum, axis=axis)


def flatness_residual(a, f, h, s, t) -> float:
    """Max violation of the flatness system for A = a + i f dt + i h ds.

    Arrays are indexed [x, y, s, t] (a has a leading component axis); the
    torus grid is uniform on [0, 2 pi)^2.
    """
    a = np.asarray(a)
    dt_h = np.gradient(h, t, axis=3, edge_order=2)
    ds_f = np.gradient(f, s, axis=2, edge_order=2)
    worst = float(np.max(np.abs(dt_h - ds_f)))
    for comp, axis in ((0, 0), (1, 1)):
        ds_a = np.gradient(a[comp], s, axis=2, edge_order=2)
        dt_a = np.gradient(a[comp], t, axis=3, edge_order=2)
        worst = max(worst, float(np.max(np.abs(ds_a - 1j * _spectral_derivative(h, axis)))))
        worst = max(worst, float(np.max(np.abs(dt_a - 1j * _spectral_derivative(f, axis)))))
    return worst


@dataclass(frozen=True)
class GaugeFlattening:
    gauge: np.ndarray
    connection: np.ndarray
    constant: np.ndarray
    ds_norm: float
    dt_norm: float
    flatness_residual: float


def flatten_gauge(a, f, h, s, t, tol: float = FLATNESS_TOL) -> GaugeFlattening:
    """Gauge a flat connection on T^2 x [r0, ...] x R into s,t-independent form.

    lambda = exp(-i Phi) with Phi = int_{r0}^s h + int_0^t f(., tau, r0),
    where r0 = s[0]; both integrals are trapezoidal.
    """
    a = np.asarray(a, dtype=complex)
    f = np.asarray(f, dtype=float)
    h = np.asarray(h, dtype=float)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    residual = flatness_residual(a, f, h, s, t)
    if residual > tol:
        raise PreconditionError(
            f"Input is not flat: residual {residual:.3e} > {tol:.1e}",
            {"flatness_residual": residual, "tolerance": tol},
        )

    along_s = cumulative_trapezoid(h, s, axis=2, initial=0.0)
    along_t = cumulative_trapezoid(f[:, :, 0, :], t, axis=2, initial=0.0)
    anchor = np.apply_along_axis(lambda row: np.interp(0.0, t, row), 2, along_t)
    along_t = along_t - anchor[..., None]
    phi = along_s + along_t[:, :, None, :]

    connection = np.stack([
        a[0] - 1j * _spectral_derivative(phi, 0),
        a[1] - 1j * _spectral_derivative(phi, 1),
    ])
    ds_norm = float(np.max(np.abs(np.gradient(connection, s, axis=3, edge_order=2))))
    dt_norm = float(np.max(np.abs(np.gradient(connection, t, axis=4, edge_order=2))))
    constant = connection.mean(axis=(3, 4))
    logger.debug(f"Gauge flattening: ds={ds_norm:.3e} dt={dt_norm:.3e}")
    return GaugeFlattening(np.exp(-1j * phi), connection, constant, ds_norm, dt_norm, residual)
