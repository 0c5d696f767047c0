"""
Nonlinear radial-gauge Seiberg-Witten system on Fourier modes.

State cubes are stacked as (u, v, f, alpha, beta), each of shape
(2N+1,)*3 indexed [n+N, l+N, k+N].  The connection slots use the same
rescaled variables as asd_neck ((u, v) = e^rho (a_x, a_y)), so with the
spinor switched off the right-hand side is the asd_matrix action mode by
mode.  Quadratic terms are Galerkin products (mode_core.convolve_cubes);
products that get shifted in n are formed one mode wider first so the
shift does not lose the edge row.

The second half works on T^3 mode states over a time grid: the
Chern-Simons-Dirac functional, its gradient flow, the energy identity,
and the a-priori estimates checked against their stated bounds.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, linalg
from scipy.interpolate import CubicSpline

from errors import (
    ConvergenceError,
    DegenerateModeError,
    DimensionError,
    DivergenceError,
    DomainError,
    IntegrationError,
    PreconditionError,
)
from mode_core import SLOTS, ModeField, Trajectory, conj_reflect, convolve_cubes
from settings import CENTER_TOL, CONTRACTION_TOL, DIVERGENCE_LIMIT, SPLIT_GAP

logger = logging.getLogger(__name__)

VOLUME_T3 = (2.0 * math.pi) ** 3
_CONSTANT_MODE = (2.0 * math.pi) ** 1.5

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


# ---------------------------------------------------------------------------
# Cube helpers
# ---------------------------------------------------------------------------

def _cutoff_of(cube: np.ndarray) -> int:
    return (cube.shape[-1] - 1) // 2


def _wavenumbers(N: int):
    r = np.arange(-N, N + 1)
    return r[:, None, None], r[None, :, None], r[None, None, :]


def _pad(cube: np.ndarray, N: int) -> np.ndarray:
    d = N - _cutoff_of(cube)
    return np.pad(cube, d) if d > 0 else cube


def _crop(cube: np.ndarray, N: int) -> np.ndarray:
    c = _cutoff_of(cube)
    s = slice(c - N, c + N + 1)
    return cube[s, s, s]


def _shift_down(cube: np.ndarray) -> np.ndarray:
    """Coefficients of e^{-i theta} g: out_n = g_{n+1}."""
    out = np.zeros_like(cube)
    out[:-1] = cube[1:]
    return out


def _shifted_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    N = _cutoff_of(a)
    wide = convolve_cubes(_pad(a, N + 1), _pad(b, N + 1))
    return _crop(_shift_down(wide), N)


def _wide_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Untruncated product, returned at cutoff 2N."""
    N = _cutoff_of(a)
    return convolve_cubes(_pad(a, 2 * N), _pad(b, 2 * N))


def _as_cubes(state) -> np.ndarray:
    if isinstance(state, ModeField):
        return state.dense_all()
    cubes = np.asarray(state, dtype=complex)
    if cubes.ndim != 4 or cubes.shape[0] != len(SLOTS):
        raise DimensionError(f"State must have shape (5, M, M, M), got {cubes.shape}")
    return cubes


# ---------------------------------------------------------------------------
# Perturbation class
# ---------------------------------------------------------------------------

def _nu_matrix(nu: Sequence[float]) -> np.ndarray:
    n1, n2, n0 = nu
    return np.array([[1j * n0, -n1 + 1j * n2], [n1 + 1j * n2, -1j * n0]], dtype=complex)


@dataclass(frozen=True)
class PerturbationSpec:
    """Finite-rank perturbation with weight exp(-delta (r + max(e^rho cos theta, 0))).

    ``mu`` holds constant 1-forms (q_x, q_y, p) feeding the connection
    terms, ``nu`` constant 1-forms (nu_x, nu_y, nu_0) feeding the spinor
    matrix.  ``dU`` / ``dV`` map the functionals tau_j, zeta_j to the
    coefficients dU/dtau_j, dV/dzeta_j; they default to ones and must stay
    below ``coefficient_bound`` in absolute value.  ``potential(tau, zeta)``
    is the U + V correction to the functional, when supplied.
    """

    delta: float
    r: float = 0.0
    mu: Tuple[Tuple[float, float, float], ...] = ()
    nu: Tuple[Tuple[float, float, float], ...] = ()
    dU: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dV: Optional[Callable[[np.ndarray], np.ndarray]] = None
    coefficient_bound: float = 1.0
    theta: float = 0.0
    potential: Optional[Callable[[np.ndarray, np.ndarray], float]] = None

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"Perturbation weight delta must be positive, got {self.delta}")
        if self.coefficient_bound < 0:
            raise DomainError("Coefficient bound must be non-negative")
        object.__setattr__(self, "mu", tuple(tuple(float(c) for c in m) for m in self.mu))
        object.__setattr__(self, "nu", tuple(tuple(float(c) for c in v) for v in self.nu))
        for form in self.mu + self.nu:
            if len(form) != 3:
                raise DimensionError(f"Perturbation 1-forms need 3 components, got {form}")

    def profile(self, rho, theta: Optional[float] = None):
        theta = self.theta if theta is None else theta
        reach = np.maximum(np.exp(rho) * math.cos(theta), 0.0)
        return np.exp(-self.delta * (self.r + reach))

    def cylinder_profile(self, s):
        return np.exp(-self.delta * (np.asarray(s, dtype=float) + self.r))

    @property
    def bound(self) -> float:
        """C(P): coefficient bound times the summed operator norms of the forms."""
        total = sum(np.linalg.norm(_nu_matrix(v), 2) for v in self.nu)
        total += sum(math.sqrt(sum(c * c for c in m)) for m in self.mu)
        return self.coefficient_bound * total

    # Functionals of the state
    def taus(self, connection: np.ndarray) -> np.ndarray:
        """tau_j = <A - A_0, mu_j> from the constant modes of an imaginary-valued 3-vector."""
        N = _cutoff_of(connection)
        zero = np.array([connection[a][N, N, N] for a in range(3)])
        beta = np.real(-1j * zero) * _CONSTANT_MODE
        return np.array([float(np.dot(beta, m)) for m in self.mu])

    def zetas(self, spinor: np.ndarray) -> np.ndarray:
        """zeta_j = int <nu_j . psi, psi> by Parseval."""
        out = []
        for v in self.nu:
            cliff = np.einsum("j,jab->ab", np.asarray(v), PAULI)
            out.append(float(np.real(np.einsum("a...,ab,b...->", spinor.conj(), cliff, spinor))))
        return np.array(out)

    def _coefficients(self, fn, values: np.ndarray) -> np.ndarray:
        if fn is None:
            return np.ones(len(values))
        return np.asarray(fn(values), dtype=float).reshape(len(values))

    def spinor_matrix(self, spinor: np.ndarray) -> np.ndarray:
        if not self.nu:
            return np.zeros((2, 2), dtype=complex)
        coeff = self._coefficients(self.dV, self.zetas(spinor))
        return sum(c * _nu_matrix(v) for c, v in zip(coeff, self.nu))

    def connection_terms(self, connection: np.ndarray) -> np.ndarray:
        """(P_1x, P_1y, P_0) as real numbers."""
        if not self.mu:
            return np.zeros(3)
        coeff = self._coefficients(self.dU, self.taus(connection))
        return sum(c * np.asarray(m) for c, m in zip(coeff, self.mu))


@dataclass
class PerturbationCheck:
    worst_ratio: float
    weight_integral: float
    bound: float
    holds: bool


def perturbation_bound_check(spec: PerturbationSpec, cutoff: int = 1, samples: int = 16,
                             window: Tuple[float, float] = (-3.0, 3.0),
                             theta: Optional[float] = None, seed: int = 0) -> PerturbationCheck:
    """Spot-check |P . (alpha, beta)| <= C(P) |(alpha, beta)| on random spinors."""
    theta = spec.theta if theta is None else theta
    if not -math.pi / 2 < theta < math.pi / 2:
        raise DomainError(f"Weight integral needs theta in (-pi/2, pi/2), got {theta}")
    rng = np.random.default_rng(seed)
    side = 2 * cutoff + 1
    C = spec.bound
    worst = 0.0
    for _ in range(samples):
        psi = rng.standard_normal((2, side, side, side)) + 1j * rng.standard_normal((2, side, side, side))
        image = np.einsum("ab,b...->a...", spec.spinor_matrix(psi), psi)
        lhs = np.linalg.norm(image)
        rhs = C * np.linalg.norm(psi)
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        elif lhs > 0:
            worst = math.inf
    weight, _ = integrate.quad(lambda r: math.exp(-spec.delta * math.exp(r) * math.cos(theta)),
                               window[0], window[1], limit=200)
    holds = worst <= 1.0 + 1e-12
    if not holds:
        logger.warning(f"Perturbation bound exceeded: ratio {worst:.4g} > 1 with C(P)={C:.4g}")
    return PerturbationCheck(worst_ratio=worst, weight_integral=weight, bound=C, holds=holds)


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------

def linear_part(cubes: np.ndarray, rho: float,
                pert: Optional[PerturbationSpec] = None) -> np.ndarray:
    U, V, F, A, B = cubes
    N = _cutoff_of(U)
    n, l, k = _wavenumbers(N)
    e = math.exp(rho)
    D = 1j * l - k
    out = np.empty_like(cubes)
    out[0] = U - 1j * n * V + 1j * k * e * F
    out[1] = V + 1j * n * U - 1j * l * e * F
    out[2] = e * (1j * k * U - 1j * l * V)
    out[3] = -n * A + 0.5j * e * _shift_down(D * conj_reflect(B))
    out[4] = n * B - 1j * e * _shift_down(D * A)
    if pert is not None:
        out += _perturbation_part(cubes, rho, pert)
    return out


def _perturbation_part(cubes: np.ndarray, rho: float, pert: PerturbationSpec) -> np.ndarray:
    U, V, F, A, B = cubes
    N = _cutoff_of(U)
    e = math.exp(rho)
    w = float(pert.profile(rho))
    out = np.zeros_like(cubes)
    if w == 0.0:
        return out
    connection = np.stack([U / e, V / e, F])
    p1x, p1y, p0 = pert.connection_terms(connection)
    # *(q_x dx + q_y dy) = q_x dy - q_y dx
    out[0][N, N, N] += 1j * e * w * (-p1y) * _CONSTANT_MODE
    out[1][N, N, N] += 1j * e * w * p1x * _CONSTANT_MODE
    out[2][N, N, N] += 1j * e * e * w * p0 * _CONSTANT_MODE
    P = pert.spinor_matrix(np.stack([A, B]))
    out[3] = 1j * e * w * _shift_down(P[0, 0] * A + P[0, 1] * B)
    out[4] = -1j * e * w * _shift_down(P[1, 0] * A + P[1, 1] * B)
    return out


def quadratic_part(cubes: np.ndarray, rho: float) -> np.ndarray:
    U, V, F, A, B = cubes
    e = math.exp(rho)
    A_bar, B_bar = conj_reflect(A), conj_reflect(B)
    ab = convolve_cubes(A_bar, B)
    re_ab = 0.5 * (ab + conj_reflect(ab))
    im_ab = (ab - conj_reflect(ab)) / 2j
    density = convolve_cubes(A_bar, A) - convolve_cubes(B_bar, B)
    a_plus = (U + 1j * V) / e
    out = np.empty_like(cubes)
    out[0] = 2j * e * re_ab
    out[1] = 2j * e * im_ab
    out[2] = 0.5j * e * e * density
    out[3] = -0.5j * e * _shifted_product(a_plus, B_bar) + 1j * convolve_cubes(F, A)
    out[4] = -1j * e * _shifted_product(a_plus, A) - 1j * convolve_cubes(F, B)
    return out


def bilinear_part(Y: np.ndarray, X: np.ndarray, rho: float) -> np.ndarray:
    """Symmetric real-bilinear form of quadratic_part, by polarization."""
    if Y.shape != X.shape:
        raise DimensionError(f"State shapes differ: {Y.shape} vs {X.shape}")
    return 0.25 * (quadratic_part(Y + X, rho) - quadratic_part(Y - X, rho))


def sw_rhs(state: ModeField, rho: float, pert: Optional[PerturbationSpec] = None) -> ModeField:
    if state.role != "full":
        raise PreconditionError(f"Nonlinear system needs all five slots, got role {state.role!r}")
    cubes = state.dense_all()
    return ModeField.from_dense(linear_part(cubes, rho, pert) + quadratic_part(cubes, rho))


def integrate_sw(state0, span: Tuple[float, float], samples: int = 101,
                 pert: Optional[PerturbationSpec] = None, nonlinear: bool = True,
                 rtol: float = 1e-10, atol: float = 1e-14) -> Trajectory:
    cubes0 = _as_cubes(state0)
    shape = cubes0.shape
    rho = np.linspace(span[0], span[1], samples)

    def rhs(r, x):
        X = x.reshape(shape)
        dX = linear_part(X, r, pert)
        if nonlinear:
            dX = dX + quadratic_part(X, r)
        return dX.ravel()

    sol = integrate.solve_ivp(rhs, span, cubes0.ravel(), method="DOP853", t_eval=rho,
                              rtol=rtol, atol=atol)
    if not sol.success:
        last = float(sol.t[-1]) if sol.t.size else float(span[0])
        raise IntegrationError(f"Mode-system integration failed: {sol.message}",
                               {"last_rho": last})
    states = sol.y.T.reshape((samples,) + shape)
    meta = {"nonlinear": nonlinear, "perturbed": pert is not None}
    return Trajectory(rho, states, metadata=meta)


# ---------------------------------------------------------------------------
# Successive approximation
# ---------------------------------------------------------------------------

def _spline_evaluator(rho: np.ndarray, states: np.ndarray):
    re = CubicSpline(rho, states.real, axis=0)
    im = CubicSpline(rho, states.imag, axis=0)
    return lambda r: re(r) + 1j * im(r)


def _evaluator(xi0, rho: np.ndarray):
    if isinstance(xi0, Trajectory):
        return _spline_evaluator(xi0.rho, np.asarray(xi0.states, dtype=complex))
    if callable(xi0):
        return lambda r: _as_cubes(xi0(r))
    raise DomainError(f"Initial approximation must be a Trajectory or callable, got {type(xi0).__name__}")


@dataclass
class SuccessiveApproximation:
    iterates: List[Trajectory]
    distances: List[float]
    residual: float
    converged: bool

    @property
    def ratios(self) -> List[float]:
        d = self.distances
        return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] > 0]

    @property
    def limit(self) -> Trajectory:
        return self.iterates[-1]


def successive_approximation(xi0, nu_max: int, span: Tuple[float, float] = (0.0, 3.0),
                             samples: int = 61, pert: Optional[PerturbationSpec] = None,
                             tol: float = CONTRACTION_TOL, rtol: float = 1e-10,
                             atol: float = 1e-14) -> SuccessiveApproximation:
    """Iterate Xi_{nu+1}' = L_{Xi_nu} Xi_{nu+1} with Xi_{nu+1}(span[0]) = Xi_0(span[0]).

    L_Y X is the linear part plus the polarized quadratic B(Y, X), so a
    fixed point solves the full system.
    """
    if nu_max < 1:
        raise DomainError(f"nu_max must be at least 1, got {nu_max}")
    rho = np.linspace(span[0], span[1], samples)
    previous = _evaluator(xi0, rho)
    first = np.stack([previous(r) for r in rho])
    shape = first.shape[1:]
    iterates = [Trajectory(rho, first, metadata={"iterate": 0})]
    x0 = first[0].ravel()
    distances: List[float] = []
    converged = False

    for nu in range(1, nu_max + 1):
        frozen = previous

        def rhs(r, x, frozen=frozen):
            X = x.reshape(shape)
            return (linear_part(X, r, pert) + bilinear_part(frozen(r), X, r)).ravel()

        sol = integrate.solve_ivp(rhs, span, x0, method="DOP853", t_eval=rho,
                                  dense_output=True, rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationError(f"Iterate {nu} failed: {sol.message}", {"iterate": nu})
        states = sol.y.T.reshape((samples,) + shape)
        sup = float(np.max(np.abs(states)))
        if not np.isfinite(sup) or sup > DIVERGENCE_LIMIT:
            raise DivergenceError(f"Iterate {nu} left the divergence limit (sup {sup:.3e})",
                                  {"iterate": nu, "sup_norm": sup})
        dist = float(np.max(np.abs(states - iterates[-1].states)))
        distances.append(dist)
        iterates.append(Trajectory(rho, states, metadata={"iterate": nu}))
        logger.info(f"Successive approximation nu={nu}: sup-distance {dist:.3e}")
        previous = (lambda s: (lambda r: s.sol(r).reshape(shape)))(sol)
        if dist <= tol:
            converged = True
            break

    X = iterates[-1].states
    Y = iterates[-2].states
    residual = max(float(np.max(np.abs(bilinear_part(Y[i] - X[i], X[i], r))))
                   for i, r in enumerate(rho))
    if not converged:
        logger.warning(f"Successive approximation stopped after {nu_max} iterates "
                       f"(last distance {distances[-1]:.3e})")
    return SuccessiveApproximation(iterates, distances, residual, converged)


# ---------------------------------------------------------------------------
# Stable / unstable splitting
# ---------------------------------------------------------------------------

@dataclass
class BlockSplit:
    eigenvalues: np.ndarray
    stable: np.ndarray
    unstable: np.ndarray
    center: np.ndarray
    M_minus: np.ndarray
    M_plus: np.ndarray
    P_stable: np.ndarray
    P_unstable: np.ndarray
    lambda0: float
    window: Tuple[float, float]


def two_block_split(system: Union[np.ndarray, Callable[[float], np.ndarray]], rho0: float = 0.0,
                    center_tol: float = CENTER_TOL, gap: float = SPLIT_GAP) -> BlockSplit:
    M = np.asarray(system(rho0) if callable(system) else system, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"Frozen system must be square, got {M.shape}")
    values, V = linalg.eig(M)
    W = linalg.inv(V)
    re = values.real
    obstructed = (np.abs(re) > center_tol) & (np.abs(re) < gap)
    if np.any(obstructed):
        raise DegenerateModeError(
            f"Eigenvalues with near-zero real part block the splitting: {values[obstructed]}",
            {"rho0": rho0},
        )
    stable = np.flatnonzero(re <= -gap)
    unstable = np.flatnonzero(re >= gap)
    center = np.flatnonzero(np.abs(re) <= center_tol)
    M_minus = W[stable] @ M @ V[:, stable]
    M_plus = W[unstable] @ M @ V[:, unstable]
    lambda0 = float(np.min(np.abs(re[stable]))) if stable.size else math.nan
    if center.size:
        logger.info(f"Centre eigenvalues left out of both blocks: {values[center]}")
    return BlockSplit(
        eigenvalues=values,
        stable=values[stable],
        unstable=values[unstable],
        center=values[center],
        M_minus=M_minus,
        M_plus=M_plus,
        P_stable=V[:, stable] @ W[stable],
        P_unstable=V[:, unstable] @ W[unstable],
        lambda0=lambda0,
        window=(-lambda0, 0.0),
    )


def picard_split_solve(split: BlockSplit, forcing: Callable[[float, np.ndarray], np.ndarray],
                       x0, span: Tuple[float, float], samples: int = 401,
                       max_iter: int = 100, tol: float = 1e-12) -> Trajectory:
    """Fixed point of X(rho) = e^{M^-(rho-rho0)} X0 + int e^{M^-(rho-s)} P^-(s, X(s)) ds."""
    M = split.M_minus
    x0 = np.asarray(x0, dtype=complex).ravel()
    if x0.shape[0] != M.shape[0]:
        raise DimensionError(f"Start value has {x0.shape[0]} entries, stable block is {M.shape[0]}")
    rho = np.linspace(span[0], span[1], samples)
    h = rho[1] - rho[0]
    step = linalg.expm(M * h)
    free = np.empty((samples, x0.shape[0]), dtype=complex)
    free[0] = x0
    for i in range(1, samples):
        free[i] = step @ free[i - 1]

    X = free.copy()
    for it in range(1, max_iter + 1):
        g = np.array([np.asarray(forcing(r, x), dtype=complex).ravel() for r, x in zip(rho, X)])
        acc = np.zeros_like(X)
        for i in range(1, samples):
            acc[i] = step @ (acc[i - 1] + 0.5 * h * g[i - 1]) + 0.5 * h * g[i]
        new = free + acc
        change = float(np.max(np.abs(new - X)))
        X = new
        if change <= tol:
            return Trajectory(rho, X, metadata={"iterations": it, "window": split.window})
    raise ConvergenceError(f"Picard iteration did not settle in {max_iter} steps",
                           {"last_change": change})


# ---------------------------------------------------------------------------
# T^3 modes: Chern-Simons-Dirac functional
# ---------------------------------------------------------------------------

def _wave_vectors(N: int) -> np.ndarray:
    side = 2 * N + 1
    return np.stack(np.broadcast_arrays(*_wavenumbers(N))).astype(float).reshape(3, side, side, side)


def curl_modes(b: np.ndarray) -> np.ndarray:
    """(curl b)_m = i m x b_m on a (3, M, M, M) stack."""
    w = _wave_vectors(_cutoff_of(b))
    return 1j * np.stack([
        w[1] * b[2] - w[2] * b[1],
        w[2] * b[0] - w[0] * b[2],
        w[0] * b[1] - w[1] * b[0],
    ])


def spinor_dirac_modes(b: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """sum_j sigma_j (m_j psi) - i sum_j sigma_j (b_j psi), Galerkin-truncated."""
    w = _wave_vectors(_cutoff_of(psi))
    free = np.einsum("jac,jc...->a...", PAULI, w[:, None] * psi[None])
    coupled = np.array([[convolve_cubes(b[j], psi[c]) for c in range(2)] for j in range(3)])
    return free - 1j * np.einsum("jac,jc...->a...", PAULI, coupled)


def spinor_bilinears(psi: np.ndarray) -> np.ndarray:
    """Coefficients of the real functions psi^dagger sigma_j psi."""
    pairs = [[convolve_cubes(conj_reflect(psi[a]), psi[c]) for c in range(2)] for a in range(2)]
    return np.einsum("jac,ac...->j...", PAULI, np.array(pairs))


def _reference(b: np.ndarray, reference: Optional[np.ndarray]) -> np.ndarray:
    if reference is not None:
        reference = np.asarray(reference, dtype=complex)
        if reference.shape != b.shape:
            raise DimensionError(f"Reference shape {reference.shape} does not match {b.shape}")
        return reference
    N = _cutoff_of(b)
    flat = np.zeros_like(b)
    flat[:, N, N, N] = b[:, N, N, N]
    return flat


def csd_functional(b: np.ndarray, psi: np.ndarray, reference: Optional[np.ndarray] = None,
                   pert: Optional[PerturbationSpec] = None) -> float:
    """(1/2) <b - b0, curl (b - b0)> + Re <psi, D_b psi>, plus U + V when perturbed."""
    b = np.asarray(b, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    rel = b - _reference(b, reference)
    value = 0.5 * float(np.real(np.vdot(rel, curl_modes(rel))))
    value += float(np.real(np.vdot(psi, spinor_dirac_modes(b, psi))))
    if pert is not None and pert.potential is not None:
        value += float(pert.potential(pert.taus(rel), pert.zetas(psi)))
    return value


def csd_gradient(b: np.ndarray, psi: np.ndarray,
                 reference: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    grad_b = curl_modes(b - _reference(b, reference)) + 1j * spinor_bilinears(psi)
    grad_psi = 2.0 * spinor_dirac_modes(b, psi)
    return grad_b, grad_psi


@dataclass
class Flow3D:
    """T^3 mode states sampled on a time grid.

    ``b`` has shape (T, 3, M, M, M) (imaginary-valued connection 1-form
    relative to the trivial one), ``psi`` shape (T, 2, M, M, M).  Exact
    time derivatives may be attached; otherwise finite differences are used.
    """

    t: np.ndarray
    b: np.ndarray
    psi: np.ndarray
    b_dot: Optional[np.ndarray] = None
    psi_dot: Optional[np.ndarray] = None
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.b = np.asarray(self.b, dtype=complex)
        self.psi = np.asarray(self.psi, dtype=complex)
        T = self.t.shape[0]
        if self.b.ndim != 5 or self.b.shape[:2] != (T, 3):
            raise DimensionError(f"Connection samples must have shape (T, 3, M, M, M), got {self.b.shape}")
        if self.psi.shape != (T, 2) + self.b.shape[2:]:
            raise DimensionError(f"Spinor samples must have shape (T, 2, M, M, M), got {self.psi.shape}")
        if T < 2 or np.any(np.diff(self.t) <= 0):
            raise DomainError("Time grid must be strictly increasing with at least two samples")
        if self.reference is None:
            self.reference = _reference(self.b[0], None)

    @property
    def cutoff(self) -> int:
        return _cutoff_of(self.b)

    def derivatives(self) -> Tuple[np.ndarray, np.ndarray]:
        order = 2 if self.t.shape[0] >= 3 else 1
        b_dot = self.b_dot if self.b_dot is not None else np.gradient(self.b, self.t, axis=0, edge_order=order)
        psi_dot = self.psi_dot if self.psi_dot is not None else np.gradient(self.psi, self.t, axis=0, edge_order=order)
        return np.asarray(b_dot, dtype=complex), np.asarray(psi_dot, dtype=complex)

    def window(self, interval: Optional[Tuple[float, float]]) -> np.ndarray:
        if interval is None:
            return np.ones(self.t.shape, dtype=bool)
        t0, t1 = interval
        if t1 <= t0:
            raise DomainError(f"Interval must be increasing, got {interval}")
        mask = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        if mask.sum() < 2:
            raise DomainError(f"Interval {interval} holds fewer than two samples")
        return mask


def gradient_flow(b0: np.ndarray, psi0: np.ndarray, t_grid, reference: Optional[np.ndarray] = None,
                  rtol: float = 1e-12, atol: float = 1e-14) -> Flow3D:
    """Downward gradient flow x' = -grad CSD(x) sampled on ``t_grid``."""
    b0 = np.asarray(b0, dtype=complex)
    psi0 = np.asarray(psi0, dtype=complex)
    ref = _reference(b0, reference)
    t_grid = np.asarray(t_grid, dtype=float)
    nb = b0.size

    def split(x):
        return x[:nb].reshape(b0.shape), x[nb:].reshape(psi0.shape)

    def rhs(_, x):
        gb, gp = csd_gradient(*split(x), reference=ref)
        return -np.concatenate([gb.ravel(), gp.ravel()])

    sol = integrate.solve_ivp(rhs, (t_grid[0], t_grid[-1]), np.concatenate([b0.ravel(), psi0.ravel()]),
                              method="DOP853", t_eval=t_grid, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"Gradient flow failed: {sol.message}")
    b = np.empty((t_grid.size,) + b0.shape, dtype=complex)
    psi = np.empty((t_grid.size,) + psi0.shape, dtype=complex)
    b_dot, psi_dot = np.empty_like(b), np.empty_like(psi)
    for i, x in enumerate(sol.y.T):
        b[i], psi[i] = split(x)
        b_dot[i], psi_dot[i] = split(rhs(None, x))
    return Flow3D(t_grid, b, psi, b_dot=b_dot, psi_dot=psi_dot, reference=ref)


def _time_integral(values: np.ndarray, t: np.ndarray) -> float:
    if t.shape[0] >= 3:
        return float(integrate.simpson(values, x=t))
    return float(integrate.trapezoid(values, t))


# ---------------------------------------------------------------------------
# Energy identity and estimates
# ---------------------------------------------------------------------------

@dataclass
class Bound:
    tag: str
    lhs: float
    rhs: float
    holds: bool


@dataclass
class DecayFit:
    C: float
    c_over_r: float
    c: Optional[float] = None


@dataclass
class EstimateTable:
    s0: float
    energy: float
    length: float
    rows: List[Bound]
    decay: Optional[DecayFit] = None

    def by_tag(self) -> Dict[str, Bound]:
        return {row.tag: row for row in self.rows}


@dataclass
class EnergyReport:
    energy: float
    csd_initial: float
    csd_final: float
    topological: float
    identity_gap: float
    energy_gap: float
    s0: Optional[float] = None
    bounds: List[Bound] = field(default_factory=list)


def _endpoint_residual(flow: Flow3D, b_dot: np.ndarray, psi_dot: np.ndarray, i: int) -> float:
    gb, gp = csd_gradient(flow.b[i], flow.psi[i], flow.reference)
    return float(max(np.max(np.abs(b_dot[i] + gb)), np.max(np.abs(psi_dot[i] + gp))))


def energy_identity(flow: Flow3D, pert: Optional[PerturbationSpec] = None,
                    endpoint_tol: Optional[float] = None, s0: Optional[float] = None,
                    interval: Optional[Tuple[float, float]] = None) -> EnergyReport:
    """Energy, functional drop and the Chern-Simons change along a trajectory.

    The topological term is int Re<b', curl(b - b0)> dt, which must equal
    the change of (1/2)<b - b0, curl(b - b0)>; ``identity_gap`` is the
    difference.  ``energy_gap`` compares the functional drop with the energy,
    exact only for downward gradient trajectories.
    """
    b_dot, psi_dot = flow.derivatives()
    if endpoint_tol is not None:
        for i in (0, -1):
            res = _endpoint_residual(flow, b_dot, psi_dot, i)
            if res > endpoint_tol:
                raise PreconditionError(
                    f"Endpoint t={flow.t[i]:.4g} misses the flow equation by {res:.3e}",
                    {"t": float(flow.t[i]), "residual": res, "tolerance": endpoint_tol},
                )
    ref = flow.reference
    rel = flow.b - ref[None]
    integrand = np.array([np.real(np.vdot(bd, curl_modes(r))) for bd, r in zip(b_dot, rel)])
    topological = _time_integral(integrand, flow.t)
    cs = [0.5 * float(np.real(np.vdot(r, curl_modes(r)))) for r in (rel[0], rel[-1])]
    identity_gap = abs((cs[1] - cs[0]) - topological)

    speed = np.array([np.vdot(bd, bd).real + np.vdot(pd, pd).real for bd, pd in zip(b_dot, psi_dot)])
    energy = _time_integral(speed, flow.t)
    csd0 = csd_functional(flow.b[0], flow.psi[0], ref, pert)
    csd1 = csd_functional(flow.b[-1], flow.psi[-1], ref, pert)
    energy_gap = abs((csd0 - csd1) - energy)
    logger.info(f"Energy identity: E={energy:.6g} CSD drop={csd0 - csd1:.6g} "
                f"Chern-Simons gap={identity_gap:.3e}")

    report = EnergyReport(energy=energy, csd_initial=csd0, csd_final=csd1, topological=topological,
                          identity_gap=identity_gap, energy_gap=energy_gap)
    if s0 is not None:
        table = estimate_suite(flow, s0=s0, interval=interval, pert=pert)
        report.s0 = table.s0
        report.bounds = table.rows
    return report


def _grid_values(cube: np.ndarray, size: int) -> np.ndarray:
    """Point values on the uniform size^3 grid of T^3."""
    N = _cutoff_of(cube)
    if size < 2 * N + 1:
        raise DimensionError(f"Grid of {size} points cannot resolve cutoff {N}")
    placed = np.zeros((size,) * 3, dtype=complex)
    idx = np.arange(-N, N + 1) % size
    placed[np.ix_(idx, idx, idx)] = cube
    return np.fft.ifftn(placed) * size ** 3 * _CONSTANT_MODE / VOLUME_T3


def fit_decay(t: np.ndarray, distances: np.ndarray, r: Optional[float] = None) -> Optional[DecayFit]:
    """Least-squares fit of distances ~ C exp(-(c/r)|t|)."""
    keep = distances > 1e-300
    if keep.sum() < 2:
        logger.warning("Decay fit skipped: fewer than two non-zero distances")
        return None
    slope, intercept = np.polyfit(np.abs(t[keep]), np.log(distances[keep]), 1)
    rate = -float(slope)
    return DecayFit(C=float(math.exp(intercept)), c_over_r=rate, c=None if r is None else rate * r)


def estimate_suite(flow: Flow3D, s0: Optional[float] = None,
                   interval: Optional[Tuple[float, float]] = None,
                   r: Optional[float] = None, limit: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                   scalar_min: Optional[float] = None, pert: Optional[PerturbationSpec] = None,
                   volume: float = VOLUME_T3, grid: Optional[int] = None) -> EstimateTable:
    """Check the integral and pointwise bounds on a trajectory; report only.

    With ``scalar_min`` the constant is s0 = max(-s_min + C(P), 0) (C(P) = 0
    unperturbed); otherwise ``s0`` is used as given.  The L^4 bound is
    checked with constant 4 and also reported with the sharper constant 2.
    """
    if scalar_min is not None:
        s0 = max(-scalar_min + (pert.bound if pert is not None else 0.0), 0.0)
    if s0 is None or s0 < 0:
        raise DomainError(f"s0 must be a non-negative number, got {s0}")
    mask = flow.window(interval)
    t = flow.t[mask]
    length = float(t[-1] - t[0])
    b, psi = flow.b[mask], flow.psi[mask]
    b_dot, psi_dot = (d[mask] for d in flow.derivatives())
    N = flow.cutoff
    w = _wave_vectors(N)

    speed = np.array([np.vdot(x, x).real + np.vdot(y, y).real for x, y in zip(b_dot, psi_dot)])
    energy = _time_integral(speed, t)

    quartic, curvature, covariant, peak = [], [], [], []
    size = grid or max(8, 4 * N + 2)
    for bi, pi in zip(b, psi):
        density = sum(_wide_product(conj_reflect(pi[a]), pi[a]) for a in range(2))
        quartic.append(np.vdot(density, density).real)
        curv = curl_modes(bi - flow.reference)
        curvature.append(np.vdot(curv, curv).real)
        cov = 0.0
        for j in range(3):
            for a in range(2):
                term = _pad(1j * w[j] * pi[a], 2 * N) + _wide_product(bi[j], pi[a])
                cov += np.vdot(term, term).real
        covariant.append(cov)
        values = sum(np.abs(_grid_values(pi[a], size)) ** 2 for a in range(2))
        peak.append(float(np.max(values)))

    base = s0 * s0 * volume * length
    lhs_l4 = _time_integral(np.array(quartic), t)
    lhs_f = _time_integral(np.array(curvature), t)
    lhs_cov = _time_integral(np.array(covariant), t)
    lhs_pt = max(peak)
    rows = [
        Bound("uniform.spinor_L4", lhs_l4, 8 * energy + 4 * base, lhs_l4 <= 8 * energy + 4 * base),
        Bound("uniform.spinor_L4.sharp", lhs_l4, 8 * energy + 2 * base, lhs_l4 <= 8 * energy + 2 * base),
        Bound("uniform.curvature", lhs_f, energy + base, lhs_f <= energy + base),
        Bound("uniform.covariant", lhs_cov, energy + base, lhs_cov <= energy + base),
        Bound("pointwise.spinor", lhs_pt, s0, lhs_pt <= s0 * (1 + 1e-12) + 1e-300),
    ]
    for row in rows:
        if not row.holds:
            logger.warning(f"Bound {row.tag} violated: {row.lhs:.6g} > {row.rhs:.6g}")

    if limit is None:
        limit_b, limit_psi = b[-1], psi[-1]
    else:
        limit_b, limit_psi = (np.asarray(x, dtype=complex) for x in limit)
    dist = np.sqrt([np.vdot(x - limit_b, x - limit_b).real + np.vdot(y - limit_psi, y - limit_psi).real
                    for x, y in zip(b, psi)])
    decay = fit_decay(t, dist, r)
    return EstimateTable(s0=float(s0), energy=energy, length=length, rows=rows, decay=decay)


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------

def clm_counts(dim_ker_V: int, dim_ker_nu: int, dim_ker_Q: int,
               dim_lagrangian_intersection: int) -> Tuple[int, int]:
    """(N_small, N_tiny) eigenvalue counts from the kernel dimensions."""
    dims = (dim_ker_V, dim_ker_nu, dim_ker_Q, dim_lagrangian_intersection)
    if any(int(d) != d or d < 0 for d in dims):
        raise DomainError(f"Dimensions must be non-negative integers, got {dims}")
    if dim_lagrangian_intersection > dim_ker_Q:
        raise DomainError(
            f"Lagrangian intersection ({dim_lagrangian_intersection}) exceeds ker Q ({dim_ker_Q})",
            {"intersection": dim_lagrangian_intersection, "ker_Q": dim_ker_Q},
        )
    base = int(dim_ker_V) + int(dim_ker_nu)
    return base + int(dim_ker_Q), base + int(dim_lagrangian_intersection)
