"""
Discretized linearized operators and surjectivity checks.

Covers the Neumann-series inverse of R^{-1} d/dt + L, the disk operators
D1 + D2 on a (rho, theta) grid, the cylinder operator on T^3 modes, the
Bessel analysis of the cokernel equations, and singular-value reports.

Operators on flat backgrounds decouple over torus modes, so they are
assembled block-diagonally (``OperatorMatrix.block_sizes``) and the
singular-value report works block by block.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, List, Optional, Tuple

import numpy as np
from scipy import linalg, sparse, special
from scipy.sparse import linalg as sparse_linalg
from scipy.integrate import cumulative_trapezoid, solve_ivp

from errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    GridError,
    IntegrationError,
    NumericalError,
    PreconditionError,
)
from settings import BAD_POINT_MARGIN, COKERNEL_THRESHOLD

logger = logging.getLogger(__name__)

SELF_ADJOINT = "self-adjoint"
GENERAL = "general"

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


# ---------------------------------------------------------------------------
# OperatorMatrix
# ---------------------------------------------------------------------------

@dataclass
class OperatorMatrix:
    """Operator with diagonal weights on domain and codomain.

    Sparse input stays sparse.  ``block_sizes`` (optional) declares a
    block-diagonal layout of consecutive square blocks.
    """

    matrix: Any
    domain_weights: Optional[np.ndarray] = None
    codomain_weights: Optional[np.ndarray] = None
    symmetry: str = GENERAL
    provenance: str = ""
    block_sizes: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if sparse.issparse(self.matrix):
            self.matrix = sparse.csr_matrix(self.matrix, dtype=complex)
        else:
            self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=complex))
        rows, cols = self.matrix.shape
        if rows == 0 or cols == 0:
            raise GridError(f"Empty operator for {self.provenance or 'unnamed discretization'}")
        self.domain_weights = self._weights(self.domain_weights, cols, "domain")
        self.codomain_weights = self._weights(self.codomain_weights, rows, "codomain")
        if self.symmetry not in (SELF_ADJOINT, GENERAL):
            raise DomainError(f"Unknown symmetry tag {self.symmetry!r}")
        if self.block_sizes is not None:
            self.block_sizes = tuple(int(b) for b in self.block_sizes)
            if rows != cols or sum(self.block_sizes) != rows:
                raise DimensionError(f"Blocks {self.block_sizes} do not tile a {rows}x{cols} operator")
        if self.symmetry == SELF_ADJOINT and not is_self_adjoint(self):
            raise DomainError(f"Operator {self.provenance!r} tagged self-adjoint but is not")

    @staticmethod
    def _weights(w, size: int, name: str) -> np.ndarray:
        if w is None:
            return np.ones(size)
        w = np.asarray(w, dtype=float).ravel()
        if w.shape[0] != size:
            raise DimensionError(f"{name} weights have {w.shape[0]} entries, need {size}")
        if np.any(w <= 0):
            raise DomainError(f"{name} weights must be positive")
        return w

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else self.matrix

    def weighted(self):
        """The operator between the weighted l^2 spaces in orthonormal coordinates."""
        return _scale(self.matrix, np.sqrt(self.codomain_weights), 1.0 / np.sqrt(self.domain_weights))

    def blocks(self) -> List[np.ndarray]:
        W = self.weighted()
        if self.block_sizes is None:
            return [W.toarray() if sparse.issparse(W) else W]
        out, start = [], 0
        for size in self.block_sizes:
            block = W[start:start + size, start:start + size]
            out.append(block.toarray() if sparse.issparse(block) else block)
            start += size
        return out


def _scale(M, left: np.ndarray, right: np.ndarray):
    """diag(left) M diag(right)."""
    if sparse.issparse(M):
        return sparse.csr_matrix(sparse.diags(left) @ M @ sparse.diags(right))
    return left[:, None] * M * right[None, :]


def _adjoint_matrix(op: OperatorMatrix):
    return _scale(op.matrix.conj().T, 1.0 / op.domain_weights, op.codomain_weights)


def weighted_adjoint(op: OperatorMatrix) -> OperatorMatrix:
    """M* with <M x, y>_codomain = <x, M* y>_domain."""
    return OperatorMatrix(_adjoint_matrix(op), op.codomain_weights, op.domain_weights, GENERAL,
                          f"adjoint of {op.provenance}", op.block_sizes)


def is_self_adjoint(op: OperatorMatrix, tol: float = 1e-10) -> bool:
    if op.shape[0] != op.shape[1]:
        return False
    if not np.allclose(op.domain_weights, op.codomain_weights):
        return False
    gap = op.matrix - _adjoint_matrix(op)
    worst = abs(gap).max() if sparse.issparse(gap) else np.max(np.abs(gap))
    return float(worst) <= tol


# ---------------------------------------------------------------------------
# Time derivative
# ---------------------------------------------------------------------------

def uniform_step(grid: np.ndarray) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise GridError("Grid must be a non-empty 1-d array")
    if grid.size == 1:
        raise GridError("Grid needs at least two points")
    steps = np.diff(grid)
    h = float(steps[0])
    if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * abs(h):
        raise GridError("Grid must be uniform and increasing")
    return h


def derivative_matrix(grid, closure: str = "periodic") -> sparse.csr_matrix:
    """Fourth-order central differences.

    ``periodic`` wraps around (the grid excludes the right endpoint);
    ``one_sided`` closes the first and last two rows with fourth-order
    one-sided stencils; ``backward`` is the first-order backward difference
    with zero data before the first point.
    """
    h = uniform_step(grid)
    n = len(grid)
    c = 1.0 / (12.0 * h)
    if closure == "backward":
        return sparse.diags([np.full(n, 1.0 / h), np.full(n - 1, -1.0 / h)], [0, -1], format="csr")
    if n < 5:
        raise GridError(f"Fourth-order stencils need at least 5 points, got {n}")
    D = sparse.lil_matrix((n, n))
    stencil = c * np.array([1.0, -8.0, 8.0, -1.0])
    offsets = (-2, -1, 1, 2)
    for i in range(n):
        if closure == "periodic":
            for off, w in zip(offsets, stencil):
                D[i, (i + off) % n] += w
        elif closure == "one_sided":
            if i == 0:
                D[i, 0:5] = c * np.array([-25.0, 48.0, -36.0, 16.0, -3.0])
            elif i == 1:
                D[i, 0:5] = c * np.array([-3.0, -10.0, 18.0, -6.0, 1.0])
            elif i == n - 2:
                D[i, n - 5:n] = c * np.array([-1.0, 6.0, -18.0, 10.0, 3.0])
            elif i == n - 1:
                D[i, n - 5:n] = c * np.array([3.0, -16.0, 36.0, -48.0, 25.0])
            else:
                for off, w in zip(offsets, stencil):
                    D[i, i + off] = w
        else:
            raise DomainError(f"Unknown closure {closure!r}")
    return D.tocsr()


# ---------------------------------------------------------------------------
# Neumann series
# ---------------------------------------------------------------------------

@dataclass
class NeumannResult:
    f: np.ndarray
    terms: int
    increments: List[float]
    residual: float
    bound_ratio: float

    @property
    def ratios(self) -> List[float]:
        inc = self.increments
        return [inc[i + 1] / inc[i] for i in range(len(inc) - 1) if inc[i] > 0]


def _operator_bound(L: np.ndarray) -> float:
    smallest = linalg.svdvals(L)[-1]
    return math.inf if smallest == 0 else 1.0 / float(smallest)


def neumann_solve(L: OperatorMatrix, R: float, h, t_grid, C: Optional[float] = None,
                  closure: str = "periodic", forced: bool = False, tol: float = 1e-12,
                  max_terms: int = 500, residual_tol: float = 1e-8) -> NeumannResult:
    """Solve (R^{-1} d/dt + L) f = h by f = sum (-1)^k R^{-k} g_k.

    L g_0 = h and L g_{k+1} = d/dt g_k.  Samples are stacked as (T, dim).
    ``C`` bounds |L^{-1}|; by default it is read off the smallest singular
    value of L.
    """
    if R <= 0:
        raise DomainError(f"R must be positive, got {R}")
    Lm = L.dense()
    if Lm.shape[0] != Lm.shape[1]:
        raise DimensionError(f"L must be square, got {Lm.shape}")
    t_grid = np.asarray(t_grid, dtype=float)
    H = np.asarray(h, dtype=complex).reshape(t_grid.size, -1)
    if H.shape[1] != Lm.shape[0]:
        raise DimensionError(f"Samples have {H.shape[1]} components, L acts on {Lm.shape[0]}")
    C = _operator_bound(Lm) if C is None else float(C)
    ratio = C / R
    if ratio >= 1.0:
        if not forced:
            raise ConvergenceError(f"Series convergence not guaranteed: C/R = {ratio:.4g} >= 1",
                                   {"C": C, "R": R})
        logger.warning(f"Forcing Neumann series with C/R = {ratio:.4g}")
    D = derivative_matrix(t_grid, closure)
    amplification = C * float(sparse_linalg.norm(D, 1)) / R
    if amplification >= 1.0:
        logger.warning(f"Grid-scale components may grow: C |D| / R = {amplification:.3g}; "
                       f"a coarser time grid keeps the series contracting")
    lu = linalg.lu_factor(Lm)

    def solve(rhs):
        return linalg.lu_solve(lu, rhs.T).T

    g = solve(H)
    f = g.copy()
    increments = [float(np.linalg.norm(g))]
    terms = 1
    scale = 1.0
    while terms < max_terms:
        g = solve(D @ g)
        scale *= -1.0 / R
        step = scale * g
        size = float(np.linalg.norm(step))
        if not np.isfinite(size):
            raise NumericalError("Neumann series overflowed", {"terms": terms})
        if size < tol:
            break
        f = f + step
        increments.append(size)
        terms += 1
    else:
        logger.warning(f"Neumann series stopped at {max_terms} terms")

    residual = float(np.max(np.abs((D @ f) / R + f @ Lm.T - H)))
    if residual > residual_tol * max(1.0, float(np.max(np.abs(H)))):
        raise NumericalError(f"Neumann solution residual {residual:.3e} above {residual_tol:.1e}",
                             {"residual": residual, "terms": terms})
    logger.debug(f"Neumann series: {terms} terms, residual {residual:.3e}")
    return NeumannResult(f=f, terms=terms, increments=increments, residual=residual, bound_ratio=ratio)


def space_time_matrix(L: OperatorMatrix, R: float, t_grid, closure: str = "periodic") -> np.ndarray:
    """Dense (R^{-1} D (x) I + I (x) L) on the stacked (T, dim) unknowns."""
    D = derivative_matrix(t_grid, closure).toarray()
    dim = L.matrix.shape[0]
    return np.kron(D, np.eye(dim)) / R + np.kron(np.eye(len(t_grid)), L.dense())


# ---------------------------------------------------------------------------
# Disk operators
# ---------------------------------------------------------------------------

def nearest_bad_point(a) -> Tuple[np.ndarray, float]:
    """Nearest point of the integer lattice and the distance to it."""
    a = np.asarray(a, dtype=float)
    lattice = np.round(a)
    return lattice, float(np.linalg.norm(a - lattice))


def _check_bad_points(samples: np.ndarray, margin: float) -> None:
    flat = samples.reshape(-1, samples.shape[-1])
    lattice = np.round(flat)
    dist = np.linalg.norm(flat - lattice, axis=1)
    worst = int(np.argmin(dist))
    if dist[worst] <= margin:
        raise DomainError(
            f"Flat connection {flat[worst].tolist()} is within {dist[worst]:.3g} of the bad point "
            f"{lattice[worst].tolist()}",
            {"nearest_bad_point": lattice[worst].tolist(), "distance": float(dist[worst]),
             "margin": margin},
        )


def theta_grid(points: int) -> np.ndarray:
    return -math.pi + 2.0 * math.pi * np.arange(points) / points


def assemble_disk_operator(a, R: float, cutoff: int, rho_grid, theta_points: int = 8,
                           margin: float = BAD_POINT_MARGIN) -> OperatorMatrix:
    """D1 + D2 on T^2 modes |l|, |k| <= cutoff over a (rho, theta) grid.

    ``a`` is a flat connection (a_x, a_y), either one point or samples of
    shape (len(rho_grid), theta_points, 2).  d/drho uses the backward
    difference (data vanish before the first node), d/dtheta the periodic
    fourth-order stencil.  Unknowns per mode: (a_x, a_y, f, alpha, beta),
    each on the flattened (rho, theta) grid.
    """
    rho = np.asarray(rho_grid, dtype=float)
    if rho.size == 0 or theta_points <= 0:
        raise GridError("Disk operator needs a non-empty (rho, theta) grid")
    if R <= 0:
        raise DomainError(f"R must be positive, got {R}")
    theta = theta_grid(theta_points)
    samples = np.asarray(a, dtype=float)
    if samples.shape == (2,):
        samples = np.broadcast_to(samples, (rho.size, theta_points, 2))
    if samples.shape != (rho.size, theta_points, 2):
        raise DimensionError(f"Connection samples must have shape {(rho.size, theta_points, 2)}")
    _check_bad_points(samples, margin)

    Dr = sparse.kron(derivative_matrix(rho, "backward") if rho.size > 1 else
                     sparse.identity(1), sparse.identity(theta_points))
    Dt = sparse.kron(sparse.identity(rho.size), derivative_matrix(theta, "periodic")
                     if theta_points >= 5 else sparse.csr_matrix((theta_points, theta_points)))
    P, T = np.meshgrid(rho, theta, indexing="ij")
    e2 = np.exp(2 * P).ravel()
    e_plus = np.exp(P + 1j * T).ravel()
    e_minus = np.exp(P - 1j * T).ravel()
    ax, ay = samples[..., 0].ravel(), samples[..., 1].ravel()
    G = rho.size * theta_points
    I = sparse.identity(G)
    diag = sparse.diags

    blocks = []
    for l in range(-cutoff, cutoff + 1):
        for k in range(-cutoff, cutoff + 1):
            d1 = sparse.bmat([
                [Dr, Dt, (-1j * k / R ** 2) * I],
                [-Dt, Dr, (1j * l / R ** 2) * I],
                [diag(1j * k * e2), diag(-1j * l * e2), Dr],
            ])
            dbar = 1j * (l + ax) - (k + ay)
            dbar_star = -(1j * (l + ax) + (k + ay))
            d2 = sparse.bmat([
                [(Dr - 1j * Dt) / R, diag(-1j * e_plus * dbar_star)],
                [diag(1j * e_minus * dbar), (Dr + 1j * Dt) / R],
            ])
            blocks.append(sparse.block_diag([d1, d2]))
    M = sparse.block_diag(blocks, format="csr")
    logger.debug(f"Disk operator: {len(blocks)} mode blocks of size {5 * G}")
    return OperatorMatrix(M, provenance="D1+D2", block_sizes=(5 * G,) * len(blocks))


def assemble_d4_operator(a_path, R: float, cutoff: int, t_grid,
                         margin: float = BAD_POINT_MARGIN) -> OperatorMatrix:
    """R^{-1} d/dt + [[*d, -d, 0], [-d*, 0, 0], [0, 0, Dirac_a(t)]] on T^3 modes.

    ``a_path`` holds the flat connection a(t) in R^3 at each time node.
    Unknowns per mode: (b_x, b_y, b_z, h, psi_1, psi_2) over the t grid,
    with the backward-difference time closure.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0:
        raise GridError("Cylinder operator needs a non-empty time grid")
    path = np.asarray(a_path, dtype=float)
    if path.shape == (3,):
        path = np.broadcast_to(path, (t.size, 3))
    if path.shape != (t.size, 3):
        raise DimensionError(f"Connection path must have shape {(t.size, 3)}, got {path.shape}")
    _check_bad_points(path, margin)
    Dt = derivative_matrix(t, "backward")
    nt = t.size

    blocks = []
    r = range(-cutoff, cutoff + 1)
    for m1 in r:
        for m2 in r:
            for m3 in r:
                m = np.array([m1, m2, m3], dtype=float)
                curl = 1j * np.array([[0, -m[2], m[1]], [m[2], 0, -m[0]], [-m[1], m[0], 0]])
                form = np.zeros((4, 4), dtype=complex)
                form[:3, :3] = curl
                form[:3, 3] = -1j * m
                form[3, :3] = 1j * m
                local = []
                for i in range(nt):
                    cell = np.zeros((6, 6), dtype=complex)
                    cell[:4, :4] = form
                    cell[4:, 4:] = np.einsum("j,jab->ab", m + path[i], PAULI)
                    local.append(cell)
                blocks.append(sparse.kron(Dt, sparse.identity(6)) / R + sparse.block_diag(local))
    M = sparse.block_diag(blocks, format="csr")
    return OperatorMatrix(M, provenance="D4 cylinder operator", block_sizes=(6 * nt,) * len(blocks))


# ---------------------------------------------------------------------------
# Surjectivity
# ---------------------------------------------------------------------------

@dataclass
class SurjectivityReport:
    sigma_min: float
    cokernel_dim: int
    trailing: List[float]
    threshold: float
    provenance: str = ""


def surjectivity_report(op: OperatorMatrix, threshold: float = COKERNEL_THRESHOLD,
                        trailing: int = 10) -> SurjectivityReport:
    values = np.concatenate([linalg.svdvals(b) for b in op.blocks()])
    rows, cols = op.shape
    # a tall operator has at least rows - cols cokernel directions beyond its singular values
    missing = max(rows - cols, 0) if op.block_sizes is None else 0
    values = np.sort(values)
    count = int(np.sum(values < threshold)) + missing
    report = SurjectivityReport(
        sigma_min=0.0 if missing else float(values[0]),
        cokernel_dim=count,
        trailing=[float(v) for v in values[:trailing]],
        threshold=threshold,
        provenance=op.provenance,
    )
    logger.info(f"Surjectivity of {op.provenance or 'operator'}: sigma_min={report.sigma_min:.3e}, "
                f"cokernel {count}")
    return report


# ---------------------------------------------------------------------------
# Bessel functions
# ---------------------------------------------------------------------------

def _power_series(z, order: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    q = 0.25 * z * z
    term = (0.5 * z) ** order / math.factorial(order)
    total = term.copy() if isinstance(term, np.ndarray) else np.array(term)
    m = 0
    while True:
        m += 1
        term = term * q / (m * (m + order))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)) or m > 500:
            return total


def bessel_i0_series(z) -> np.ndarray:
    """I_0(z) = sum (z^2/4)^m / (m!)^2."""
    return _power_series(z, 0)


def bessel_i1_series(z) -> np.ndarray:
    return _power_series(z, 1)


def _asymptotic_sum(z: np.ndarray, nu: int, alternating: bool) -> np.ndarray:
    mu = 4.0 * nu * nu
    total = np.ones_like(z)
    term = np.ones_like(z)
    for k in range(1, 30):
        nxt = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
        if np.all(np.abs(nxt) >= np.abs(term)):
            break
        term = nxt
        total = total + (-term if alternating and k % 2 else term)
    return total


def bessel_i0_asymptotic(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.exp(z) / np.sqrt(2 * math.pi * z) * _asymptotic_sum(z, 0, alternating=True)


def bessel_k0_asymptotic(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.sqrt(math.pi / (2 * z)) * np.exp(-z) * _asymptotic_sum(z, 0, alternating=False)


def _bessel_k1_asymptotic(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.sqrt(math.pi / (2 * z)) * np.exp(-z) * _asymptotic_sum(z, 1, alternating=False)


def bessel_k0(z) -> np.ndarray:
    """Asymptotic series for large z, scipy reference values below."""
    z = np.asarray(z, dtype=float)
    return np.where(z >= 20.0, bessel_k0_asymptotic(np.maximum(z, 20.0)), special.k0(z))


def bessel_k1(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.where(z >= 20.0, _bessel_k1_asymptotic(np.maximum(z, 20.0)), special.k1(z))


# ---------------------------------------------------------------------------
# Cokernel equations
# ---------------------------------------------------------------------------

def coker_matrix(index, R: float, rho: float, leading: bool = False) -> np.ndarray:
    """Coefficient matrix of (h, u, v)' for the cokernel system of one mode.

    The first row is h' = R^{-2}(ik u - il v), the divergence on T^2.
    """
    n, l, k = index
    e = math.exp(-2.0 * rho)
    M = np.array([
        [0.0, 1j * k / R ** 2, -1j * l / R ** 2],
        [-1j * k * e, 0.0, 1j * n],
        [1j * l * e, -1j * n, 0.0],
    ], dtype=complex)
    if leading:
        M[1, 2] = M[2, 1] = 0.0
    return M


@dataclass
class BesselBranch:
    name: str
    h: np.ndarray
    dh: np.ndarray
    reference: np.ndarray
    max_rel_error: float
    integrable_flat: bool
    integrable_weighted: bool
    pair_integrable_flat: bool
    pair_integrable_weighted: bool


@dataclass
class CokerReport:
    l: int
    k: int
    R: float
    rho: np.ndarray
    z: np.ndarray
    branches: Tuple[BesselBranch, BesselBranch]
    wronskian_drift: float
    growth_fit: float
    growth_expected: float

    @property
    def growth_error(self) -> float:
        return abs(self.growth_fit - self.growth_expected) / abs(self.growth_expected)


def _integrable_toward_minus_infinity(rho: np.ndarray, density: np.ndarray) -> bool:
    """A density whose log rises toward the left edge is not integrable on (-inf, rho_0]."""
    window = max(3, rho.size // 20)
    log_density = np.log(np.maximum(density[:window], 1e-300))
    slope = np.polyfit(rho[:window], log_density, 1)[0]
    return bool(slope > 0)


def _reconstructed_pair(rho, h, l, k, anchor_left: bool):
    """Leading-order (u, v) from u' = -ik e^{-2 rho} h, v' = il e^{-2 rho} h."""
    w = np.exp(-2 * rho) * h
    if anchor_left:
        prim = cumulative_trapezoid(w, rho, initial=0.0)
    else:
        prim = cumulative_trapezoid(w[::-1], rho[::-1], initial=0.0)[::-1]
    return -1j * k * prim, 1j * l * prim


def coker_bessel(l: int, k: int, R: float, span: Tuple[float, float] = (-3.0, 0.0),
                 samples: int = 301, rtol: float = 1e-12, atol: float = 1e-14) -> CokerReport:
    """Fundamental pair of h'' = e^{-2 rho} R^{-2} (k^2 + l^2) h.

    With z = sqrt(k^2 + l^2) R^{-1} e^{-rho} the branches are I_0(z) and
    K_0(z).  The I_0 branch is integrated from the right edge (small z)
    toward growing z, the K_0 branch from the left edge, each in its
    stable direction.
    """
    if l == 0 and k == 0:
        raise PreconditionError("Cokernel analysis needs (l, k) != (0, 0)")
    if R <= 0:
        raise DomainError(f"R must be positive, got {R}")
    lo, hi = float(span[0]), float(span[1])
    if not hi > lo:
        raise DomainError(f"Span must be increasing, got {span}")
    c = math.hypot(l, k)
    rho = np.linspace(lo, hi, samples)
    z = c / R * np.exp(-rho)

    def rhs(r, y):
        zz = c / R * math.exp(-r)
        return [y[1], zz * zz * y[0]]

    def run(start, stop, y0):
        grid = rho if stop > start else rho[::-1]
        floor = min(atol, 1e-6 * rtol * abs(y0[0]))
        sol = solve_ivp(rhs, (start, stop), y0, method="DOP853", t_eval=grid, rtol=rtol, atol=floor)
        if not sol.success:
            raise IntegrationError(f"Cokernel integration failed: {sol.message}",
                                   {"l": l, "k": k, "R": R})
        y = sol.y if stop > start else sol.y[:, ::-1]
        return y[0], y[1]

    z_hi = c / R * math.exp(-hi)
    z_lo = c / R * math.exp(-lo)
    # h' = -z dF/dz, I_0' = I_1, K_0' = -K_1
    h_i, dh_i = run(hi, lo, [float(bessel_i0_series(z_hi)), float(-z_hi * bessel_i1_series(z_hi))])
    h_k, dh_k = run(lo, hi, [float(bessel_k0(z_lo)), float(z_lo * bessel_k1(z_lo))])

    ref_i = bessel_i0_series(z)
    ref_k = bessel_k0(z)
    wronskian = h_i * dh_k - dh_i * h_k
    drift = float(np.max(np.abs(wronskian / wronskian[-1] - 1.0)))

    window = max(3, samples // 20)
    growth = float(np.polyfit(z[:window], np.log(h_i[:window]), 1)[0])
    expected = 1.0 - 1.0 / (2.0 * float(np.mean(z[:window])))

    branches = []
    for name, h, dh, ref, left in (("I0", h_i, dh_i, ref_i, False), ("K0", h_k, dh_k, ref_k, True)):
        err = float(np.max(np.abs(h - ref) / np.abs(ref)))
        dens = np.abs(h) ** 2
        u, v = _reconstructed_pair(rho, h, l, k, anchor_left=left)
        pair = dens + np.abs(u) ** 2 + np.abs(v) ** 2
        branches.append(BesselBranch(
            name=name, h=h, dh=dh, reference=ref, max_rel_error=err,
            integrable_flat=_integrable_toward_minus_infinity(rho, dens),
            integrable_weighted=_integrable_toward_minus_infinity(rho, dens * np.exp(2 * rho)),
            pair_integrable_flat=_integrable_toward_minus_infinity(rho, pair),
            pair_integrable_weighted=_integrable_toward_minus_infinity(rho, pair * np.exp(2 * rho)),
        ))
    if drift > 1e-6:
        logger.warning(f"Wronskian drift {drift:.3e} for (l, k) = ({l}, {k})")
    return CokerReport(l=l, k=k, R=R, rho=rho, z=z, branches=tuple(branches),
                       wronskian_drift=drift, growth_fit=growth, growth_expected=expected)
