"""
Gluing on the stretched neck.

Neck geometry for a gluing parameter T, the five regions of the (s, t)
rectangle and their cutoff partition, T-rescaled norms, the approximate
solution assembled from geometric pieces, the Seiberg-Witten residual on a
window grid and the Newton iteration D D* eta = -sigma with traced
constants.

Coordinates: sigma in [-r, r] runs along the neck with the V end at
sigma = r and the knot-neighbourhood end at sigma = -r; t in [-R, R] is
the flow time.  Window grids are laid out in tau = t / R, so between sweep
points only the R(T) factors change.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import fft as sfft
from scipy import linalg, sparse
from scipy.sparse import linalg as sparse_linalg

from asd_neck import AsdFiniteEnergyFamily, finite_energy_evaluate
from dirac_neck import finite_energy_spinor, octet_indices
from errors import (
    CompatibilityError,
    ContractionError,
    DimensionError,
    DomainError,
    GridError,
    LinearizationError,
)
from linearized_ops import PAULI, OperatorMatrix, derivative_matrix, uniform_step, weighted_adjoint
from mode_core import polar_map
from settings import COKERNEL_THRESHOLD, COLLAR_FACTOR, COMPATIBILITY_TOL, CONTRACTION_TOL

logger = logging.getLogger(__name__)

REGIONS = ("R1", "R2", "R3", "R4", "R5")
CAPS = ("cap_minus", "cap_plus")
ONE_FORMS = "one-forms+spinor"
SELF_DUAL = "self-dual+spinor"

# sup of the quintic smoothstep derivative
SMOOTHSTEP_SLOPE = 15.0 / 8.0
DENSE_SVD_LIMIT = 2500


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NeckGeometry:
    T: float
    r0: float
    R: float
    ell: float
    r: float
    epsilon: float
    half_angle: float

    @property
    def arc_length(self) -> float:
        """Arc of the disk boundary cut out by the small strip."""
        return 2.0 * self.R * self.half_angle

    @property
    def corner_defect(self) -> float:
        return self.ell ** 2 + (self.r - self.r0) ** 2 - self.R ** 2


def neck_geometry(T: float, r0: float = 1.0) -> NeckGeometry:
    if not T > 0:
        raise DomainError(f"Gluing parameter T must be positive, got {T}", {"T": T})
    if not r0 > 0:
        raise DomainError(f"r0 must be positive, got {r0}", {"r0": r0})
    try:
        grow = math.exp(T) + T
    except OverflowError:
        raise DomainError(f"e^T overflows for T = {T}", {"T": T}) from None
    R = grow / math.pi
    half = math.pi * T / grow
    return NeckGeometry(T=float(T), r0=float(r0), R=R, ell=R * math.sin(half),
                        r=r0 + R * math.cos(half), epsilon=1.0 / R, half_angle=half)


def _scalar_or_array(value: np.ndarray):
    return float(value) if value.ndim == 0 else value


def upsilon(t, geo: NeckGeometry):
    """r(T) - (R^2 - t^2)^(1/2): the neck length left of the disk at height t."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > geo.R * (1.0 + 1e-12)):
        raise DomainError(f"upsilon needs |t| <= R = {geo.R:.6g}", {"R": geo.R})
    return _scalar_or_array(geo.r - np.sqrt(np.maximum(geo.R ** 2 - t ** 2, 0.0)))


def upsilon_tilde(t, geo: NeckGeometry):
    """The unit-time version: r0 + cos(half) - min((1 - t^2)^(1/2), cos(half))."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise DomainError("upsilon_tilde needs |t| <= 1")
    c = math.cos(geo.half_angle)
    return _scalar_or_array(geo.r0 + c - np.minimum(np.sqrt(np.maximum(1.0 - t ** 2, 0.0)), c))


def geometry_table(T_values: Sequence[float], r0: float = 1.0) -> pd.DataFrame:
    rows = []
    for T in T_values:
        geo = neck_geometry(T, r0)
        rows.append({
            "T": geo.T,
            "R": geo.R,
            "ell": geo.ell,
            "r": geo.r,
            "epsilon": geo.epsilon,
            "half_angle": geo.half_angle,
            "arc_length": geo.arc_length,
            "arc_defect": geo.arc_length - 2.0 * geo.T,
            "corner_defect": geo.corner_defect,
            "upsilon_at_ell": upsilon(geo.ell, geo),
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------

def region_labels(geo: NeckGeometry, sigma, t) -> Dict[str, np.ndarray]:
    """Membership masks of R1..R5 inside the rectangle; regions overlap."""
    sigma, t = np.broadcast_arrays(np.asarray(sigma, dtype=float), np.asarray(t, dtype=float))
    at = np.abs(t)
    rho = np.hypot(sigma, t)
    inside = (np.abs(sigma) <= geo.r) & (at <= geo.R)
    strip = at >= geo.ell
    return {
        "R1": inside & strip & (sigma >= 0) & (rho >= geo.R),
        "R2": inside & (rho <= geo.R),
        "R3": inside & (at <= geo.ell) & (sigma >= geo.r - geo.r0),
        "R4": inside & strip & (sigma <= 0) & (rho >= geo.R),
        "R5": inside & (at <= geo.ell) & (sigma <= -geo.r + geo.r0),
    }


def region_extents(geo: NeckGeometry) -> Dict[str, Dict[str, float]]:
    R, r, ell, r0 = geo.R, geo.r, geo.ell, geo.r0
    return {
        "R1": {"sigma_min": 0.0, "sigma_max": r, "t_min": -R, "t_max": R, "height": 2.0 * R},
        "R2": {"sigma_min": -R, "sigma_max": R, "t_min": -R, "t_max": R, "height": 2.0 * R},
        "R3": {"sigma_min": r - r0, "sigma_max": r, "t_min": -ell, "t_max": ell, "height": 2.0 * ell},
        "R4": {"sigma_min": -r, "sigma_max": 0.0, "t_min": -R, "t_max": R, "height": 2.0 * R},
        "R5": {"sigma_min": -r, "sigma_max": -r + r0, "t_min": -ell, "t_max": ell, "height": 2.0 * ell},
    }


def region_spinor_weights(geo: NeckGeometry) -> Dict[str, float]:
    """Squared spinor weights of the rescaled norm per region."""
    eps = geo.epsilon
    return {"R1": eps, "R2": eps ** 2, "R3": 1.0, "R4": eps, "R5": 1.0}


@dataclass(frozen=True)
class ModelChart:
    """Linear chart from a model domain S_i onto the region R_i.

    One-form components along sigma and t pull back with the chart scales,
    torus components and spinors are unchanged.
    """

    region: str
    scale: Tuple[float, float]

    @property
    def jacobian(self) -> float:
        return abs(self.scale[0] * self.scale[1])

    def to_region(self, s, t):
        return self.scale[0] * np.asarray(s, dtype=float), self.scale[1] * np.asarray(t, dtype=float)

    def pullback(self, values: "GlueField") -> "GlueField":
        conn = values.connection.copy()
        conn[0] *= self.scale[0]
        conn[1] *= self.scale[1]
        return GlueField(conn, values.spinor.copy())


def model_chart(geo: NeckGeometry, region: str) -> ModelChart:
    if region in ("R1", "R4"):
        return ModelChart(region, (1.0, geo.R))
    if region == "R2":
        return ModelChart(region, (geo.R, geo.R))
    if region in ("R3", "R5"):
        return ModelChart(region, (1.0, 1.0))
    raise DomainError(f"Unknown region {region!r}", {"regions": list(REGIONS)})


# ---------------------------------------------------------------------------
# Cutoff partition
# ---------------------------------------------------------------------------

def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


def _ramp(distance, width: float):
    """1 on the region, 0 one collar width outside it."""
    return 1.0 - smoothstep(distance / width)


def _outside_distances(geo: NeckGeometry, sigma, t) -> Dict[str, np.ndarray]:
    # max of 1-Lipschitz functions; zero exactly on the region
    at = np.abs(t)
    rho = np.hypot(sigma, t)
    below_strip = geo.ell - at
    in_disk = geo.R - rho
    return {
        "R1": np.maximum(np.maximum(below_strip, in_disk), -sigma),
        "R2": rho - geo.R,
        "R3": np.maximum(geo.r - geo.r0 - sigma, at - geo.ell),
        "R4": np.maximum(np.maximum(below_strip, in_disk), sigma),
        "R5": np.maximum(sigma + geo.r - geo.r0, at - geo.ell),
    }


@dataclass
class CutoffPartition:
    """eta_1..eta_5 on the rectangle and the time cutoffs chi, chi_-, chi_+.

    The end strips R3 and R5 take priority; what they leave is shared by
    R1, R2 and R4 in proportion to their bumps.
    """

    geometry: NeckGeometry
    width: float
    spacing: Tuple[float, float]

    @property
    def q(self) -> float:
        """q(T) = epsilon(T)^(1/2), the bound the discrete gradients stay under."""
        return math.sqrt(self.geometry.epsilon)

    @property
    def analytic_bound(self) -> float:
        """Gradient bound from the ramps: at most three meet at a point."""
        return 3.0 * SMOOTHSTEP_SLOPE / self.width

    def evaluate(self, sigma, t) -> np.ndarray:
        sigma, t = np.broadcast_arrays(np.asarray(sigma, dtype=float), np.asarray(t, dtype=float))
        dist = _outside_distances(self.geometry, sigma, t)
        b = {name: _ramp(dist[name], self.width) for name in REGIONS}
        eta3 = b["R3"]
        eta5 = (1.0 - b["R3"]) * b["R5"]
        rest = (1.0 - b["R3"]) * (1.0 - b["R5"])
        total = b["R1"] + b["R2"] + b["R4"]
        share = np.where(total > 0, rest / np.where(total > 0, total, 1.0), 0.0)
        return np.stack([share * b["R1"], share * b["R2"], eta3, share * b["R4"], eta5])

    def chi_values(self, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        chi = 1.0 - smoothstep(np.abs(t) - (self.geometry.R - 1.0))
        outer = 1.0 - chi
        return chi, np.where(t < 0, outer, 0.0), np.where(t > 0, outer, 0.0)

    @cached_property
    def sigma_axis(self) -> np.ndarray:
        r = self.geometry.r
        return np.linspace(-r, r, int(math.ceil(2.0 * r / self.spacing[0])) + 1)

    @cached_property
    def t_axis(self) -> np.ndarray:
        R = self.geometry.R
        return np.linspace(-R, R, int(math.ceil(2.0 * R / self.spacing[1])) + 1)

    @cached_property
    def eta(self) -> np.ndarray:
        return self.evaluate(self.sigma_axis[:, None], self.t_axis[None, :])

    def gradient_sup(self) -> np.ndarray:
        """Discrete sup |grad eta_i| on the rectangle grid."""
        sups = []
        for eta_i in self.eta:
            gs, gt = np.gradient(eta_i, self.sigma_axis, self.t_axis)
            sups.append(float(np.max(np.hypot(gs, gt))))
        return np.array(sups)


def build_partition(geo: NeckGeometry, spacing=None, collar_factor: float = COLLAR_FACTOR) -> CutoffPartition:
    limit = geo.epsilon ** -0.5 / 10.0
    if spacing is None:
        spacing = (limit, limit)
    elif np.isscalar(spacing):
        spacing = (float(spacing), float(spacing))
    spacing = (float(spacing[0]), float(spacing[1]))
    if min(spacing) <= 0 or max(spacing) > limit * (1.0 + 1e-12):
        raise GridError(f"Grid spacing {spacing} does not resolve the collars (need <= {limit:.4g})",
                        {"spacing": list(spacing), "limit": limit})
    width = collar_factor * geo.epsilon ** -0.5
    logger.debug(f"Partition at T={geo.T:g}: collar width {width:.4g}")
    return CutoffPartition(geometry=geo, width=width, spacing=spacing)


# ---------------------------------------------------------------------------
# Window grid and fields
# ---------------------------------------------------------------------------

def _padded_difference(n: int, h: float, order: int) -> np.ndarray:
    """Central differences with zero data outside the window."""
    if order == 2:
        return (np.eye(n, k=1) - np.eye(n, k=-1)) / (2.0 * h)
    return (np.eye(n, k=-2) - 8.0 * np.eye(n, k=-1) + 8.0 * np.eye(n, k=1) - np.eye(n, k=2)) / (12.0 * h)


def _closed_difference(axis: np.ndarray, order: int) -> np.ndarray:
    if order == 4:
        return derivative_matrix(axis, "one_sided").toarray()
    h = uniform_step(axis)
    D = _padded_difference(axis.size, h, 2)
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * h)
    D[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2.0 * h)
    return D


def torus_derivative(points: int) -> np.ndarray:
    """Spectral d/dx on `points` equispaced samples of the circle."""
    if points == 1:
        return np.zeros((1, 1))
    k = sfft.fftfreq(points, d=1.0 / points)
    return np.real(sfft.ifft(1j * k[:, None] * sfft.fft(np.eye(points), axis=0), axis=0))


class CompositeGrid:
    """Nodes (sigma_i, tau_j, x_k, y_l) with t = R tau and torus samples.

    Background fields are differentiated with one-sided closures, Newton
    corrections with zero padding (they vanish outside the window).
    """

    def __init__(self, geometry: NeckGeometry, sigma, tau, cutoff: int = 0, order: int = 2):
        if order not in (2, 4):
            raise DomainError(f"Difference order must be 2 or 4, got {order}")
        if cutoff < 0:
            raise DomainError(f"Torus cutoff must be non-negative, got {cutoff}")
        self.geometry = geometry
        self.sigma = np.asarray(sigma, dtype=float)
        self.tau = np.asarray(tau, dtype=float)
        self.h_sigma = uniform_step(self.sigma)
        self.h_tau = uniform_step(self.tau)
        need = 3 if order == 2 else 5
        if min(self.sigma.size, self.tau.size) < need:
            raise GridError(f"Order-{order} closures need at least {need} points per axis")
        self.cutoff = int(cutoff)
        self.order = order
        M = 2 * self.cutoff + 1
        self.torus = 2.0 * math.pi * np.arange(M) / M
        self.t = geometry.R * self.tau
        self.area = self.h_sigma * geometry.R * self.h_tau * (2.0 * math.pi / M) ** 2
        D_torus = torus_derivative(M)
        self._padded = [
            _padded_difference(self.sigma.size, self.h_sigma, order),
            _padded_difference(self.tau.size, self.h_tau, order) / geometry.R,
            D_torus,
            D_torus,
        ]
        self._closed = [
            _closed_difference(self.sigma, order),
            _closed_difference(self.tau, order) / geometry.R,
            D_torus,
            D_torus,
        ]

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        M = self.torus.size
        return (self.sigma.size, self.tau.size, M, M)

    @property
    def nodes(self) -> int:
        return int(np.prod(self.shape))

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.sigma, self.t, indexing="ij")

    def derivative(self, values: np.ndarray, axis: int, closed: bool = False) -> np.ndarray:
        """d/d(sigma, t, x, y)[axis] of stacked values shaped (c, ns, nt, M, M)."""
        D = (self._closed if closed else self._padded)[axis]
        return np.moveaxis(np.tensordot(D, values, axes=([1], [axis + 1])), 0, axis + 1)

    def gradients(self, values: np.ndarray, closed: bool = False) -> List[np.ndarray]:
        return [self.derivative(values, axis, closed) for axis in range(4)]

    @cached_property
    def operators(self) -> List[sparse.csr_matrix]:
        """Zero-padded derivatives as sparse matrices on raveled nodes."""
        ns, nt, M, _ = self.shape
        eye = sparse.identity
        return [
            sparse.kron(self._padded[0], eye(nt * M * M), format="csr"),
            sparse.kron(eye(ns), sparse.kron(self._padded[1], eye(M * M)), format="csr"),
            sparse.kron(eye(ns * nt), sparse.kron(self._padded[2], eye(M)), format="csr"),
            sparse.kron(eye(ns * nt * M), self._padded[3], format="csr"),
        ]


def window_grid(geo: NeckGeometry, s_window: Tuple[float, float] = (0.0, 2.0),
                tau_window: Tuple[float, float] = (-1.0, 1.0), points: Tuple[int, int] = (12, 12),
                cutoff: int = 0, order: int = 2) -> CompositeGrid:
    """Window at distance s_window from the V end of the neck."""
    s = np.linspace(s_window[0], s_window[1], points[0])
    return CompositeGrid(geo, geo.r - s[::-1], np.linspace(tau_window[0], tau_window[1], points[1]),
                         cutoff=cutoff, order=order)


@dataclass
class GlueField:
    """Real connection components and the complex spinor on the window nodes."""

    connection: np.ndarray
    spinor: np.ndarray

    def __post_init__(self):
        self.connection = np.asarray(self.connection, dtype=float)
        self.spinor = np.asarray(self.spinor, dtype=complex)
        if self.spinor.shape[0] != 2 or self.connection.shape[1:] != self.spinor.shape[1:]:
            raise DimensionError(f"Connection {self.connection.shape} and spinor {self.spinor.shape} "
                                 f"are not sampled on the same nodes")

    @classmethod
    def zeros(cls, grid: CompositeGrid, components: int = 4) -> "GlueField":
        return cls(np.zeros((components,) + grid.shape), np.zeros((2,) + grid.shape, dtype=complex))

    @classmethod
    def unpack(cls, vector, grid: CompositeGrid, components: int = 4) -> "GlueField":
        vector = np.asarray(vector, dtype=float)
        n = grid.nodes
        if vector.shape != ((components + 4) * n,):
            raise DimensionError(f"Vector of length {vector.size} does not match "
                                 f"{components + 4} components on {n} nodes")
        conn = vector[:components * n].reshape((components,) + grid.shape)
        re = vector[components * n:(components + 2) * n].reshape((2,) + grid.shape)
        im = vector[(components + 2) * n:].reshape((2,) + grid.shape)
        return cls(conn, re + 1j * im)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.connection.ravel(), self.spinor.real.ravel(), self.spinor.imag.ravel()])

    def __add__(self, other: "GlueField") -> "GlueField":
        return GlueField(self.connection + other.connection, self.spinor + other.spinor)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def spinor_weights(grid: CompositeGrid, partition: CutoffPartition) -> np.ndarray:
    """Squared spinor weight at every node, blended by the partition."""
    eta = partition.evaluate(*grid.mesh())
    eps = grid.geometry.epsilon
    w = (eta[0] + eta[3]) * eps + (eta[2] + eta[4]) + eta[1] * eps ** 2
    return np.broadcast_to(w[:, :, None, None], grid.shape)


def _weighted_square(conn: np.ndarray, spinor: np.ndarray, w) -> float:
    return float(np.sum(conn ** 2) + np.sum(w * np.abs(spinor) ** 2))


def rescaled_norm(values: GlueField, grid: CompositeGrid, partition: CutoffPartition,
                  degree: int = 0, sector: str = ONE_FORMS) -> float:
    """T-rescaled L^2 (degree 0) or L^2_1 (degree 1) norm on the window."""
    if sector not in (ONE_FORMS, SELF_DUAL):
        raise DomainError(f"Unknown form sector {sector!r}")
    components = 4 if sector == ONE_FORMS else 3
    conn, spinor = values.connection, values.spinor
    if conn.shape != (components,) + grid.shape:
        raise DimensionError(f"{sector} field needs shape {(components,) + grid.shape}, got {conn.shape}")
    if not (np.all(np.isfinite(conn)) and np.all(np.isfinite(spinor))):
        raise DomainError("Field is not sampled on every node of the window")
    if degree not in (0, 1):
        raise DomainError(f"Norm degree must be 0 or 1, got {degree}")
    w = spinor_weights(grid, partition)
    total = _weighted_square(conn, spinor, w)
    if degree == 1:
        for axis in (0, 2, 3):
            total += _weighted_square(grid.derivative(conn, axis), grid.derivative(spinor, axis), w)
        R = grid.geometry.R
        total += _weighted_square(R * grid.derivative(conn, 1), R * grid.derivative(spinor, 1), w)
    return math.sqrt(grid.area * total)


def region_norm(values: GlueField, grid: CompositeGrid, region: str) -> float:
    """Rescaled L^2 norm over the nodes of one region, region weights only."""
    if region not in REGIONS:
        raise DomainError(f"Unknown region {region!r}", {"regions": list(REGIONS)})
    geo = grid.geometry
    mask = region_labels(geo, *grid.mesh())[region][:, :, None, None]
    w = region_spinor_weights(geo)[region]
    total = np.sum(mask * values.connection ** 2) + w * np.sum(mask * np.abs(values.spinor) ** 2)
    return math.sqrt(grid.area * float(total))


# ---------------------------------------------------------------------------
# Pieces
# ---------------------------------------------------------------------------

PIECE_KINDS = ("constant", "gauge_path", "offset", "disk_map")

# boundary angle of the disk, limit name, piece that carries the limit
CORNERS = (
    ("a_inf''", -math.pi, "R5"),
    ("a-", -math.pi / 2, "cap_minus"),
    ("a_inf'", 0.0, "R3"),
    ("a+", math.pi / 2, "cap_plus"),
)


def path_profile(tau):
    """(1 - tau^2)^3 on |tau| < 1, zero outside."""
    tau = np.asarray(tau, dtype=float)
    return np.where(np.abs(tau) < 1.0, (1.0 - tau ** 2) ** 3, 0.0)


def _complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        return complex(float(value[0]), float(value[1]))
    return complex(value)


def disk_coefficients(limits: Sequence[complex], bulge: complex = 0j) -> np.ndarray:
    """Power series of the disk map through the corner limits.

    The cubic part interpolates ``limits`` at the boundary points e^{i angle}
    of CORNERS; ``bulge`` adds bulge * (z^4 - 1), which vanishes at all four.
    """
    limits = np.asarray(limits, dtype=complex)
    if limits.shape != (len(CORNERS),):
        raise DimensionError(f"Disk map needs {len(CORNERS)} corner limits, got {limits.shape}")
    roots = np.exp(1j * np.array([angle for _, angle, _ in CORNERS]))
    # mean first, so equal limits give an exactly constant map
    mean = 0.25 * ((limits[0] + limits[1]) + (limits[2] + limits[3]))
    spread = limits - mean
    coeffs = np.zeros(5, dtype=complex)
    coeffs[0] = mean - bulge
    for m in range(1, 4):
        coeffs[m] = 0.25 * np.sum(spread * roots ** (-m))
    coeffs[4] = bulge
    return coeffs


@dataclass(frozen=True)
class GluePiece:
    """One geometric piece of the approximate solution.

    ``constant``: flat torus connection with holonomy (a_x, a_y) and an
    optional constant spinor.  ``gauge_path``: the flat connection plus the
    path i c beta(s) gamma(t/R) ds, beta a Gaussian in the distance s from
    the V end.  ``offset``: the flat connection shifted by ``shift``.
    ``disk_map``: a_x + i a_y holomorphic in (sigma + i t) / R on D_T, taking
    ``corners`` (a_inf'', a-, a_inf', a+; default ``holonomy`` at all four) at
    the corner angles, plus the same optional path as ``gauge_path``.
    """

    kind: str = "constant"
    holonomy: Tuple[float, float] = (0.0, 0.0)
    spinor: Tuple[complex, complex] = (0j, 0j)
    amplitude: float = 0.0
    center: float = 1.0
    width: float = 0.5
    shift: Tuple[float, float] = (0.0, 0.0)
    corners: Optional[Tuple[Tuple[float, float], ...]] = None
    bulge: complex = 0j

    def __post_init__(self):
        if self.kind not in PIECE_KINDS:
            raise DomainError(f"Unknown piece kind {self.kind!r}", {"kinds": list(PIECE_KINDS)})
        if not self.width > 0:
            raise DomainError(f"Path width must be positive, got {self.width}")
        if self.kind != "constant" and any(self.spinor):
            raise DomainError("Only constant pieces carry a spinor")
        if self.kind != "disk_map" and (self.corners is not None or self.bulge):
            raise DomainError("Only disk_map pieces carry corner limits")
        if self.corners is not None:
            corners = tuple((float(c[0]), float(c[1])) for c in self.corners)
            if len(corners) != len(CORNERS):
                raise DomainError(f"Disk map needs {len(CORNERS)} corner limits, got {len(corners)}",
                                  {"corners": [name for name, _, _ in CORNERS]})
            object.__setattr__(self, "corners", corners)

    @classmethod
    def from_dict(cls, data: Mapping) -> "GluePiece":
        spinor = data.get("spinor", (0, 0))
        corners = data.get("corners")
        return cls(
            kind=data.get("kind", "constant"),
            holonomy=tuple(float(v) for v in data.get("holonomy", (0.0, 0.0))),
            spinor=(_complex(spinor[0]), _complex(spinor[1])),
            amplitude=float(data.get("amplitude", 0.0)),
            center=float(data.get("center", 1.0)),
            width=float(data.get("width", 0.5)),
            shift=tuple(float(v) for v in data.get("shift", (0.0, 0.0))),
            corners=None if corners is None else tuple(tuple(c) for c in corners),
            bulge=_complex(data.get("bulge", 0j)),
        )

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "holonomy": list(self.holonomy),
            "spinor": [[z.real, z.imag] for z in self.spinor],
            "amplitude": self.amplitude,
            "center": self.center,
            "width": self.width,
            "shift": list(self.shift),
            "corners": None if self.corners is None else [list(c) for c in self.corners],
            "bulge": [self.bulge.real, self.bulge.imag],
        }

    @property
    def flat_holonomy(self) -> np.ndarray:
        h = np.array(self.holonomy, dtype=float)
        if self.kind == "offset":
            h = h + np.array(self.shift, dtype=float)
        return h

    @property
    def corner_limits(self) -> np.ndarray:
        if self.corners is None:
            return np.full(len(CORNERS), self.holonomy[0] + 1j * self.holonomy[1])
        return np.array([a + 1j * b for a, b in self.corners])

    def disk_value(self, z):
        """a_x + i a_y at the unit-disk point z."""
        return np.polynomial.polynomial.polyval(z, disk_coefficients(self.corner_limits, self.bulge))

    def holonomy_at(self, sigma, t, radius: float = 1.0) -> np.ndarray:
        """(a_x, a_y) at (sigma, t); only disk maps depend on the point."""
        if self.kind != "disk_map":
            return self.flat_holonomy
        w = self.disk_value((np.asarray(sigma, dtype=float) + 1j * np.asarray(t, dtype=float)) / radius)
        return np.array([np.real(w), np.imag(w)])

    def evaluate(self, grid: CompositeGrid) -> GlueField:
        values = GlueField.zeros(grid)
        if self.kind == "disk_map":
            S, T = grid.mesh()
            h = self.holonomy_at(S, T, grid.geometry.R)[:, :, :, None, None]
        else:
            h = self.flat_holonomy
        values.connection[2] = h[0]
        values.connection[3] = h[1]
        if self.kind in ("gauge_path", "disk_map"):
            s = grid.geometry.r - grid.sigma
            beta = np.exp(-((s - self.center) / self.width) ** 2)
            gamma = path_profile(grid.tau)
            values.connection[0] += self.amplitude * beta[:, None, None, None] * gamma[None, :, None, None]
        values.spinor[0] = self.spinor[0]
        values.spinor[1] = self.spinor[1]
        return values


@dataclass(frozen=True, eq=False)
class FamilyPiece:
    """A piece sampled from the finite-energy families of the end.

    The plane point is z = sigma + i t = e^{rho + i theta}.  The connection
    is the real part of the ASD family, f d theta written in (sigma, t) and
    the torus y axis reversed; in that orientation the family's equations
    read F^+ = 0.  The spinor carries the Dirac octet
    sum_i c_i e^{mu_i |z|} U_i on its four modes e^{i(n theta + l x + k y)}.
    """

    family: Optional[AsdFiniteEnergyFamily] = None
    octet: Optional[Tuple[int, int, int]] = None
    coefficients: Tuple[complex, complex] = (0j, 0j)

    kind = "family"

    def holonomy_at(self, sigma, t, radius: float = 1.0) -> np.ndarray:
        """Torus average of (a_x, a_y) at (sigma, t)."""
        if self.family is None:
            return np.zeros(2)
        fam = self.family
        radial = AsdFiniteEnergyFamily(u0=fam.u0, v0=fam.v0, decaying=dict(fam.decaying),
                                       decaying_v=dict(fam.decaying_v))
        rho, theta = polar_map(sigma, t)
        (ax, ay), _ = finite_energy_evaluate(radial, (0.0, 0.0), rho, theta)
        return np.array([np.real(ax), -np.real(ay)])

    def evaluate(self, grid: CompositeGrid) -> GlueField:
        values = GlueField.zeros(grid)
        rho, theta = polar_map(*grid.mesh())
        rho, theta = rho[:, :, None, None], theta[:, :, None, None]
        # reversed torus y axis
        x, y = grid.torus[:, None], -grid.torus[None, :]
        if self.family is not None:
            (ax, ay), f = finite_energy_evaluate(self.family, (x, y), rho, theta)
            # f d theta = f (sigma dt - t dsigma) / |z|^2
            f = np.real(f) * np.exp(-rho)
            values.connection[0] = -f * np.sin(theta)
            values.connection[1] = f * np.cos(theta)
            values.connection[2] = np.real(ax)
            values.connection[3] = -np.real(ay)
        if self.octet is not None:
            c1, c2 = self.coefficients
            amplitudes = finite_energy_spinor(self.octet, c1, c2, np.exp(rho))
            for slot, mode in enumerate(octet_indices(self.octet)):
                wave = np.exp(1j * (mode.n * theta + mode.l * x + mode.k * y))
                values.spinor[0] += amplitudes[..., 2 * slot] * wave
                values.spinor[1] += amplitudes[..., 2 * slot + 1] * wave
        return values


def demo_pieces(holonomy: Tuple[float, float] = (0.25, 0.35), amplitude: float = 0.2,
                center: float = 1.0, width: float = 0.5, bulge: complex = 0j) -> Dict[str, GluePiece]:
    path = GluePiece(kind="gauge_path", holonomy=holonomy, amplitude=amplitude, center=center, width=width)
    cap = GluePiece(kind="constant", holonomy=holonomy)
    pieces = {name: path for name in REGIONS}
    pieces["R2"] = GluePiece(kind="disk_map", holonomy=holonomy, amplitude=amplitude, center=center,
                             width=width, bulge=bulge)
    pieces.update({name: cap for name in CAPS})
    return pieces


def constant_pieces(holonomy: Tuple[float, float] = (0.25, 0.35)) -> Dict[str, GluePiece]:
    flat = GluePiece(kind="constant", holonomy=holonomy)
    return {name: flat for name in REGIONS + CAPS}


# ---------------------------------------------------------------------------
# Approximate solution and residual
# ---------------------------------------------------------------------------

@dataclass
class GluedConfiguration:
    geometry: NeckGeometry
    partition: CutoffPartition
    grid: CompositeGrid
    pieces: Dict[str, GluePiece]
    field: GlueField
    gradients: Tuple[List[np.ndarray], List[np.ndarray]]
    residual: GlueField
    corner_gaps: Dict[str, float] = field(default_factory=dict)

    @property
    def extents(self) -> Dict[str, Dict[str, float]]:
        return region_extents(self.geometry)


def corner_gaps(pieces: Mapping[str, GluePiece], geo: NeckGeometry) -> Dict[str, float]:
    disk = pieces["R2"]
    gaps = {}
    for name, angle, partner in CORNERS:
        s, t = geo.R * math.cos(angle), geo.R * math.sin(angle)
        gap = disk.holonomy_at(s, t, geo.R) - pieces[partner].holonomy_at(s, t, geo.R)
        gaps[name] = float(np.linalg.norm(gap))
    return gaps


def _pauli(j: int, psi: np.ndarray) -> np.ndarray:
    return np.einsum("ab,b...->a...", PAULI[j], psi)


def sw_map(connection: np.ndarray, spinor: np.ndarray, grad_connection: Sequence[np.ndarray],
           grad_spinor: Sequence[np.ndarray]) -> GlueField:
    """(F^+ - tau(Psi, Psi), D_A Psi) from values and their derivatives.

    F^+ is read in the basis ds^dt + dx^dy, ds^dx + dy^dt, ds^dy + dt^dx.
    """
    def f(i, j):
        return grad_connection[i][j] - grad_connection[j][i]

    alpha, beta = spinor
    cross = alpha * np.conj(beta)
    tau = np.stack([0.5 * (np.abs(alpha) ** 2 - np.abs(beta) ** 2), cross.real, cross.imag])
    curvature = np.stack([f(0, 1) + f(2, 3), f(0, 2) + f(3, 1), f(0, 3) + f(1, 2)])
    dirac = grad_spinor[0] + 1j * connection[0] * spinor
    for j in range(3):
        dirac = dirac + 1j * _pauli(j, grad_spinor[j + 1]) - connection[j + 1] * _pauli(j, spinor)
    return GlueField(curvature - tau, dirac)


def assemble_approximate(pieces: Mapping[str, GluePiece], geo: NeckGeometry, partition: CutoffPartition,
                         grid: Optional[CompositeGrid] = None,
                         tol: float = COMPATIBILITY_TOL) -> GluedConfiguration:
    """chi * sum eta_i piece_i + chi_- cap_- + chi_+ cap_+ on the window, with its residual."""
    missing = [name for name in REGIONS + CAPS if name not in pieces]
    if missing:
        raise DomainError(f"Missing pieces: {', '.join(missing)}", {"missing": missing})
    gaps = corner_gaps(pieces, geo)
    bad = {name: gap for name, gap in gaps.items() if gap > tol}
    if bad:
        raise CompatibilityError(f"Disk map misses the limit value at corner(s) {', '.join(bad)}",
                                 {"corners": bad, "tol": tol})
    grid = grid or window_grid(geo)
    if grid.geometry != geo:
        raise DomainError("Window grid was built for a different gluing parameter",
                          {"grid_T": grid.geometry.T, "T": geo.T})

    eta = partition.evaluate(*grid.mesh())
    chi, chi_minus, chi_plus = partition.chi_values(grid.t)
    sampled = {name: pieces[name].evaluate(grid) for name in REGIONS + CAPS}

    def blend(attr: str) -> np.ndarray:
        inner = sum(eta[i][:, :, None, None] * getattr(sampled[name], attr) for i, name in enumerate(REGIONS))
        return (chi[:, None, None] * inner
                + chi_minus[:, None, None] * getattr(sampled["cap_minus"], attr)
                + chi_plus[:, None, None] * getattr(sampled["cap_plus"], attr))

    values = GlueField(blend("connection"), blend("spinor"))
    gradients = (grid.gradients(values.connection, closed=True), grid.gradients(values.spinor, closed=True))
    residual = sw_map(values.connection, values.spinor, *gradients)
    logger.info(f"Assembled approximate solution at T={geo.T:g} on {grid.nodes} nodes")
    return GluedConfiguration(geometry=geo, partition=partition, grid=grid, pieces=dict(pieces),
                              field=values, gradients=gradients, residual=residual, corner_gaps=gaps)


def sigma(config: GluedConfiguration, correction: Optional[GlueField] = None) -> GlueField:
    """Residual of Xi_0 + correction; the correction vanishes outside the window."""
    if correction is None:
        return config.residual
    grid = config.grid
    state = config.field + correction
    grad_conn = [b + d for b, d in zip(config.gradients[0], grid.gradients(correction.connection))]
    grad_spin = [b + d for b, d in zip(config.gradients[1], grid.gradients(correction.spinor))]
    return sw_map(state.connection, state.spinor, grad_conn, grad_spin)


def linearize_sigma(config: GluedConfiguration, correction: Optional[GlueField] = None) -> OperatorMatrix:
    """Sparse real Jacobian D_T of sigma at Xi_0 + correction.

    Unknowns: a_sigma, a_t, a_x, a_y, Re(alpha, beta), Im(alpha, beta);
    rows: the three F^+ components, Re and Im of the Dirac pair.
    """
    grid = config.grid
    state = config.field if correction is None else config.field + correction
    n = grid.nodes
    P = grid.operators
    a = state.connection.reshape(4, n)
    psi = state.spinor.reshape(2, n)
    p, q = psi[0].real, psi[0].imag
    u, v = psi[1].real, psi[1].imag
    d = sparse.diags

    curvature = [
        [-P[1], P[0], -P[3], P[2]],
        [-P[2], P[3], P[0], -P[1]],
        [-P[3], -P[2], P[1], P[0]],
    ]
    quad_re = [[-d(p), d(u)], [-d(u), -d(p)], [d(v), -d(q)]]
    quad_im = [[-d(q), d(v)], [-d(v), -d(q)], [-d(u), d(p)]]
    upper = sparse.bmat([curvature[k] + quad_re[k] + quad_im[k] for k in range(3)])

    dirac = sparse.kron(np.eye(2), P[0]) + sparse.kron(np.eye(2), d(1j * a[0]))
    for j in range(3):
        dirac = dirac + sparse.kron(1j * PAULI[j], P[j + 1]) - sparse.kron(PAULI[j], d(a[j + 1]))
    dirac = sparse.csr_matrix(dirac)
    A, B = dirac.real, dirac.imag
    coupling = [1j * psi] + [-_pauli(j, psi) for j in range(3)]
    couple_re = [sparse.vstack([d(c[0].real), d(c[1].real)]) for c in coupling]
    couple_im = [sparse.vstack([d(c[0].imag), d(c[1].imag)]) for c in coupling]
    lower = sparse.bmat([couple_re + [A, -B], couple_im + [B, A]])

    matrix = sparse.vstack([upper, lower]).tocsr()
    w = np.tile(spinor_weights(grid, config.partition).ravel(), 4)
    domain = grid.area * np.concatenate([np.ones(4 * n), w])
    codomain = grid.area * np.concatenate([np.ones(3 * n), w])
    return OperatorMatrix(matrix, domain, codomain, provenance=f"D_T at T={config.geometry.T:g}")


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------

class GlueProblem(Protocol):
    epsilon: float
    size: int

    def residual(self, x: np.ndarray) -> np.ndarray: ...

    def linearize(self, x: np.ndarray) -> OperatorMatrix: ...

    def norm0(self, residual: np.ndarray) -> float: ...

    def norm1(self, correction: np.ndarray) -> float: ...


class NeckGlueProblem:
    """sigma_T(Xi_0 + xi) = 0 for corrections xi on the window."""

    def __init__(self, config: GluedConfiguration):
        self.config = config
        self.grid = config.grid
        self.epsilon = config.geometry.epsilon
        n = self.grid.nodes
        self.size = 8 * n
        w = np.tile(spinor_weights(self.grid, config.partition).ravel(), 4)
        self._codomain = self.grid.area * np.concatenate([np.ones(3 * n), w])

    def correction(self, x: np.ndarray) -> GlueField:
        return GlueField.unpack(x, self.grid)

    def residual(self, x: np.ndarray) -> np.ndarray:
        return sigma(self.config, self.correction(x)).pack()

    def linearize(self, x: np.ndarray) -> OperatorMatrix:
        return linearize_sigma(self.config, self.correction(x))

    def norm0(self, residual: np.ndarray) -> float:
        return math.sqrt(float(np.sum(self._codomain * np.asarray(residual) ** 2)))

    def norm1(self, correction: np.ndarray) -> float:
        return rescaled_norm(self.correction(correction), self.grid, self.config.partition, degree=1)


@dataclass
class QuadraticModel:
    """sigma(x) = M x + b + k (x_0^2, x_0 x_1) on R^2."""

    matrix: np.ndarray
    offset: np.ndarray
    strength: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        if self.matrix.shape != (2, 2) or self.offset.shape != (2,):
            raise DimensionError("Quadratic model is two-dimensional")

    @property
    def size(self) -> int:
        return 2

    def residual(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.matrix @ x + self.offset + self.strength * np.array([x[0] ** 2, x[0] * x[1]])

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.matrix + self.strength * np.array([[2.0 * x[0], 0.0], [x[1], x[0]]])

    def linearize(self, x: np.ndarray) -> OperatorMatrix:
        return OperatorMatrix(self.jacobian(x), provenance="quadratic model")

    def norm0(self, residual: np.ndarray) -> float:
        return float(np.linalg.norm(residual))

    def norm1(self, correction: np.ndarray) -> float:
        return float(np.linalg.norm(correction))


@dataclass
class LinearizationCheck:
    error: float
    step: float


def check_linearization(problem: GlueProblem, x, direction, step: float = 1e-6,
                        tol: float = 1e-6) -> LinearizationCheck:
    """Central finite difference of the residual against the analytic D_T."""
    x = np.asarray(x, dtype=float)
    direction = np.asarray(direction, dtype=float)
    predicted = np.real(problem.linearize(x).matrix @ direction)
    fd = (problem.residual(x + step * direction) - problem.residual(x - step * direction)) / (2.0 * step)
    scale = max(float(np.linalg.norm(predicted)), np.finfo(float).tiny)
    error = float(np.linalg.norm(fd - predicted)) / scale
    if error > tol:
        raise LinearizationError(f"Analytic linearization disagrees with finite differences: {error:.3e}",
                                 {"error": error, "step": step})
    return LinearizationCheck(error=error, step=step)


@dataclass
class NewtonStep:
    nu: int
    xi_norm: float
    sigma_norm: float
    c0: float
    c1: float
    c2: float

    def to_dict(self) -> Dict:
        return {"nu": self.nu, "xi_norm": self.xi_norm, "sigma_norm": self.sigma_norm,
                "c0": self.c0, "c1": self.c1, "c2": self.c2}


@dataclass
class NewtonResult:
    solution: np.ndarray
    iterates: List[np.ndarray]
    trace: List[NewtonStep]
    converged: bool
    epsilon: float
    c0: float
    c1: float
    c2: float
    correction_norm: float

    @property
    def contraction(self) -> float:
        return self.c0 * self.c1 ** 2 * self.c2

    @property
    def bound_constant(self) -> float:
        """c with |Xi - Xi_0|_{1,T} <= c eps^(1/2)."""
        return self.c0 * self.c1 / (1.0 - self.contraction)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def smallest_singular_value(op: OperatorMatrix) -> float:
    W = op.weighted()
    if min(op.shape) <= DENSE_SVD_LIMIT:
        dense = W.toarray() if sparse.issparse(W) else W
        return float(linalg.svdvals(dense)[-1])
    gram = sparse.csc_matrix(W @ W.conj().T)
    try:
        value = sparse_linalg.eigsh(gram, k=1, sigma=0, which="LM", return_eigenvectors=False)
    except RuntimeError:
        return 0.0
    return math.sqrt(max(float(np.real(value[0])), 0.0))


def _newton_correction(op: OperatorMatrix, residual: np.ndarray) -> np.ndarray:
    """xi = D* eta with D D* eta = -sigma."""
    adjoint = weighted_adjoint(op).matrix
    gram = op.matrix @ adjoint
    rhs = -np.asarray(residual, dtype=complex)
    try:
        if sparse.issparse(gram):
            eta = sparse_linalg.splu(sparse.csc_matrix(gram)).solve(rhs)
        else:
            eta = linalg.solve(gram, rhs)
    except (RuntimeError, linalg.LinAlgError) as exc:
        raise LinearizationError(f"D D* is singular: {exc}") from exc
    xi = adjoint @ eta
    return np.real(xi) if np.isrealobj(residual) else xi


def newton_glue(problem: GlueProblem, linearization: Optional[Callable[[np.ndarray], OperatorMatrix]] = None,
                nu_max: int = 20, tol: float = CONTRACTION_TOL, start=None,
                threshold: float = COKERNEL_THRESHOLD) -> NewtonResult:
    """Xi_{nu+1} = Xi_nu + D* eta_nu, D D* eta_nu = -sigma(Xi_nu), relinearising each step.

    c0 = |sigma(Xi_0)| / eps^(1/2), c1 = max |xi_nu| / |sigma(Xi_nu)|,
    c2 = max |sigma(Xi_{nu+1})| / |xi_nu|^2; c0 c1^2 c2 >= 1 stops the run.
    """
    linearization = linearization or problem.linearize
    x0 = np.zeros(problem.size) if start is None else np.array(start, dtype=float)
    if x0.shape != (problem.size,):
        raise DimensionError(f"Start has shape {x0.shape}, problem has {problem.size} unknowns")
    root_eps = math.sqrt(problem.epsilon)
    x = x0.copy()
    iterates = [x.copy()]
    trace: List[NewtonStep] = []
    c0 = c1 = c2 = 0.0
    previous_xi = 0.0
    converged = False

    for nu in range(nu_max + 1):
        res = np.asarray(problem.residual(x))
        s_norm = problem.norm0(res)
        if not math.isfinite(s_norm):
            raise ContractionError(f"Residual is not finite at step {nu}", {"nu": nu})
        if nu == 0:
            c0 = s_norm / root_eps
        elif previous_xi > 0:
            c2 = max(c2, s_norm / previous_xi ** 2)
        contraction = c0 * c1 ** 2 * c2
        if contraction >= 1.0:
            raise ContractionError(f"Traced constants give c0 c1^2 c2 = {contraction:.4g} >= 1",
                                   {"c0": c0, "c1": c1, "c2": c2, "nu": nu})
        if s_norm <= tol:
            converged = True
            trace.append(NewtonStep(nu, 0.0, s_norm, c0, c1, c2))
            break
        if nu == nu_max:
            trace.append(NewtonStep(nu, 0.0, s_norm, c0, c1, c2))
            logger.warning(f"Newton stopped after {nu_max} steps with |sigma| = {s_norm:.3e}")
            break
        op = linearization(x)
        smallest = smallest_singular_value(op)
        if smallest < threshold:
            raise LinearizationError(f"D_T degenerate at step {nu}: sigma_min = {smallest:.3e}",
                                     {"sigma_min": smallest, "nu": nu, "threshold": threshold})
        xi = _newton_correction(op, res)
        xi_norm = problem.norm1(xi)
        c1 = max(c1, xi_norm / s_norm)
        trace.append(NewtonStep(nu, xi_norm, s_norm, c0, c1, c2))
        logger.info(f"Newton step {nu}: |sigma| = {s_norm:.3e}, |xi| = {xi_norm:.3e}")
        x = x + xi
        iterates.append(x.copy())
        previous_xi = xi_norm

    result = NewtonResult(solution=x, iterates=iterates, trace=trace, converged=converged,
                          epsilon=problem.epsilon, c0=c0, c1=c1, c2=c2,
                          correction_norm=problem.norm1(x - x0))
    allowed = result.bound_constant * root_eps
    if result.correction_norm > allowed * (1.0 + 1e-9) + 1e-14:
        raise ContractionError(f"Correction {result.correction_norm:.4g} exceeds the traced bound {allowed:.4g}",
                               {"c0": c0, "c1": c1, "c2": c2, "correction": result.correction_norm})
    return result


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class PowerFit:
    R: List[float]
    values: List[float]
    slope: Optional[float]
    intercept: Optional[float]

    @property
    def flagged(self) -> bool:
        return self.slope is None


def fit_power_law(R_values: Sequence[float], values: Sequence[float],
                  negligible: float = CONTRACTION_TOL) -> PowerFit:
    """Least-squares slope of log(values) against log(R).

    Values at or below ``negligible`` count as zero and leave the slope undefined.
    """
    R_arr = np.asarray(R_values, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.size < 2 or np.any(v <= negligible) or np.ptp(R_arr) == 0:
        logger.warning("Power-law slope undefined: fewer than two non-negligible samples")
        return PowerFit(list(map(float, R_arr)), list(map(float, v)), None, None)
    slope, intercept = np.polyfit(np.log(R_arr), np.log(v), 1)
    return PowerFit(list(map(float, R_arr)), list(map(float, v)), float(slope), float(intercept))


@dataclass
class GlueRun:
    geometry: NeckGeometry
    residual_norm: float
    newton: Optional[NewtonResult]
    error: Optional[Dict] = None


@dataclass
class GlueSweep:
    runs: List[GlueRun]
    residual_fit: PowerFit
    correction_fit: PowerFit

    @property
    def t0(self) -> Optional[float]:
        """Smallest sweep value whose traced constants contract."""
        ok = [run.geometry.T for run in self.runs if run.newton is not None and run.newton.contraction < 1.0]
        return min(ok) if ok else None


def glue_run(T: float, pieces: Mapping[str, GluePiece], r0: float = 1.0,
             s_window: Tuple[float, float] = (0.0, 2.0), points: Tuple[int, int] = (12, 12),
             cutoff: int = 0, order: int = 2, nu_max: int = 10, tol: float = CONTRACTION_TOL,
             solve: bool = True) -> GlueRun:
    geo = neck_geometry(T, r0)
    partition = build_partition(geo)
    grid = window_grid(geo, s_window=s_window, points=points, cutoff=cutoff, order=order)
    config = assemble_approximate(pieces, geo, partition, grid)
    residual_norm = rescaled_norm(config.residual, grid, partition, sector=SELF_DUAL)
    newton = newton_glue(NeckGlueProblem(config), nu_max=nu_max, tol=tol) if solve else None
    return GlueRun(geometry=geo, residual_norm=residual_norm, newton=newton)


def glue_sweep(T_values: Sequence[float], pieces: Optional[Mapping[str, GluePiece]] = None,
               strict: bool = True, solve: bool = True, **options) -> GlueSweep:
    """Residual and Newton correction across T, with their eps^(1/2) fits."""
    pieces = pieces or demo_pieces()
    runs = []
    for T in T_values:
        logger.info(f"Glue sweep point T={T:g}")
        try:
            runs.append(glue_run(T, pieces, solve=solve, **options))
        except ContractionError as exc:
            if strict:
                raise
            logger.warning(f"T={T:g} does not contract: {exc.message}")
            runs.append(GlueRun(neck_geometry(T, options.get("r0", 1.0)), math.nan, None, exc.to_dict()))
    good = [run for run in runs if run.error is None]
    residual_fit = fit_power_law([run.geometry.R for run in good], [run.residual_norm for run in good])
    solved = [run for run in good if run.newton is not None]
    correction_fit = fit_power_law([run.geometry.R for run in solved],
                                   [run.newton.correction_norm for run in solved])
    return GlueSweep(runs=runs, residual_fit=residual_fit, correction_fit=correction_fit)


# ---------------------------------------------------------------------------
# Disk map report
# ---------------------------------------------------------------------------

@dataclass
class HolomorphicityReport:
    max_residual: float
    rms_residual: float
    rms_scale: float
    relative: float
    holomorphic: bool


def holomorphicity_report(values, x, y, mask=None, tol: float = 1e-6) -> HolomorphicityReport:
    """Discrete Cauchy-Riemann residual |df/dzbar| of a complex map on an (x, y) grid."""
    values = np.asarray(values, dtype=complex)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if values.shape != (x.size, y.size):
        raise DimensionError(f"Map of shape {values.shape} does not match a {x.size}x{y.size} grid")
    fx, fy = np.gradient(values, x, y, edge_order=2)
    dbar = 0.5 * np.abs(fx + 1j * fy)
    dz = 0.5 * np.abs(fx - 1j * fy)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    res, scale = dbar[mask], dz[mask]
    rms = float(np.sqrt(np.mean(res ** 2)))
    rms_scale = float(np.sqrt(np.mean(scale ** 2)))
    if rms_scale > 0:
        relative = rms / rms_scale
    else:
        relative = 0.0 if rms == 0 else math.inf
    return HolomorphicityReport(max_residual=float(np.max(res)), rms_residual=rms, rms_scale=rms_scale,
                                relative=relative, holomorphic=relative <= tol)


def disk_map_values(piece: GluePiece, geo: NeckGeometry, points: int = 33):
    """Holonomy a_x + i a_y of the disk piece on a Cartesian grid of D_T."""
    axis = np.linspace(-geo.R, geo.R, points)
    S, T = np.meshgrid(axis, axis, indexing="ij")
    h = piece.holonomy_at(S, T, geo.R)
    values = np.broadcast_to(h[0] + 1j * h[1], S.shape).astype(complex)
    mask = np.hypot(S, T) <= geo.R
    return axis, axis, values, mask
