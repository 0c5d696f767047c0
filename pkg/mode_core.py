"""
Fourier-mode bookkeeping on T^2 x S^1.

A mode e^{i(n theta + l x + k y)} is labelled by a ModeIndex (n, l, k).
A ModeField stores, for each index within a cutoff N, the complex
5-tuple (u, v, f, alpha, beta): the three connection slots and the two
spinor slots of the radial-gauge state.  Basis functions carry the
factor (2 pi)^{-3/2}, so convolution products pick up the same factor.

Also houses the polar chart z = s + it = e^{rho + i theta}, the polar
change of the (f, h) components, and the shared Trajectory record.
"""

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import signal
from scipy.interpolate import RegularGridInterpolator

from errors import DimensionError, DomainError, PreconditionError
from settings import EXACT_TOL

logger = logging.getLogger(__name__)

SLOTS = ("u", "v", "f", "alpha", "beta")
CONNECTION_SLOTS = ("u", "v", "f")
SPINOR_SLOTS = ("alpha", "beta")
ROLES = {
    "connection": CONNECTION_SLOTS,
    "spinor": SPINOR_SLOTS,
    "full": SLOTS,
}
NORMALIZATION = (2.0 * math.pi) ** -1.5


@dataclass(frozen=True, order=True)
class ModeIndex:
    n: int
    l: int
    k: int

    @property
    def radius(self) -> int:
        return max(abs(self.n), abs(self.l), abs(self.k))

    def negated(self) -> "ModeIndex":
        return ModeIndex(-self.n, -self.l, -self.k)

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.n, self.l, self.k)


def _slot_position(slot: str) -> int:
    try:
        return SLOTS.index(slot)
    except ValueError:
        raise DomainError(f"Unknown slot {slot!r}", {"slot": slot})


@dataclass(frozen=True)
class ModeField:
    """Truncated coefficient field.

    ``entries`` maps ModeIndex to a length-5 complex array ordered as
    SLOTS.  Slots outside ``role`` are kept at zero.  With ``real`` set the
    connection slots must satisfy u_m = -conj(u_{-m}).
    """

    cutoff: int
    entries: Mapping[ModeIndex, np.ndarray] = field(default_factory=dict)
    role: str = "full"
    real: bool = False

    def __post_init__(self):
        if self.cutoff < 0:
            raise DomainError(f"Cutoff must be non-negative, got {self.cutoff}")
        if self.role not in ROLES:
            raise DomainError(f"Unknown role {self.role!r}")
        cleaned: Dict[ModeIndex, np.ndarray] = {}
        active = [SLOTS.index(s) for s in ROLES[self.role]]
        for index, values in self.entries.items():
            if not isinstance(index, ModeIndex):
                index = ModeIndex(*index)
            if index.radius > self.cutoff:
                raise DimensionError(
                    f"Index {index.as_tuple()} outside cutoff {self.cutoff}",
                    {"index": index.as_tuple(), "cutoff": self.cutoff},
                )
            vec = np.zeros(5, dtype=complex)
            values = np.asarray(values, dtype=complex).ravel()
            if values.size != 5:
                raise DimensionError(f"Mode {index.as_tuple()} needs 5 slots, got {values.size}")
            vec[active] = values[active]
            vec.setflags(write=False)
            cleaned[index] = vec
        object.__setattr__(self, "entries", MappingProxyType(cleaned))
        if self.real:
            ok, worst = reality_check(self)
            if not ok:
                raise DomainError(
                    f"Reality flag set but constraint violated by {worst:.3e}",
                    {"violation": worst},
                )

    # Construction
    @classmethod
    def zeros(cls, cutoff: int, role: str = "full") -> "ModeField":
        return cls(cutoff=cutoff, entries={}, role=role)

    @classmethod
    def from_dense(cls, cubes: np.ndarray, role: str = "full", real: bool = False) -> "ModeField":
        """Build from an array of shape (5, 2N+1, 2N+1, 2N+1); zero modes are dropped."""
        cubes = np.asarray(cubes, dtype=complex)
        if cubes.ndim != 4 or cubes.shape[0] != 5 or len(set(cubes.shape[1:])) != 1:
            raise DimensionError(f"Dense field must have shape (5, M, M, M), got {cubes.shape}")
        size = cubes.shape[1]
        if size % 2 == 0:
            raise DimensionError(f"Dense cube side must be odd, got {size}")
        cutoff = (size - 1) // 2
        entries = {}
        for pos in zip(*np.nonzero(np.any(cubes != 0, axis=0))):
            index = ModeIndex(*(int(p) - cutoff for p in pos))
            entries[index] = cubes[(slice(None),) + tuple(pos)]
        return cls(cutoff=cutoff, entries=entries, role=role, real=real)

    @classmethod
    def single(cls, cutoff: int, index: Tuple[int, int, int], slot: str, value: complex,
               role: str = "full") -> "ModeField":
        vec = np.zeros(5, dtype=complex)
        vec[_slot_position(slot)] = value
        return cls(cutoff=cutoff, entries={ModeIndex(*index): vec}, role=role)

    # Access
    @property
    def side(self) -> int:
        return 2 * self.cutoff + 1

    @property
    def active_slots(self) -> Tuple[str, ...]:
        return ROLES[self.role]

    def indices(self) -> Sequence[ModeIndex]:
        return sorted(self.entries)

    def coefficient(self, index: Tuple[int, int, int], slot: str) -> complex:
        if not isinstance(index, ModeIndex):
            index = ModeIndex(*index)
        vec = self.entries.get(index)
        return 0j if vec is None else complex(vec[_slot_position(slot)])

    def dense(self, slot: str) -> np.ndarray:
        cube = np.zeros((self.side,) * 3, dtype=complex)
        pos = _slot_position(slot)
        N = self.cutoff
        for index, vec in self.entries.items():
            cube[index.n + N, index.l + N, index.k + N] = vec[pos]
        return cube

    def dense_all(self) -> np.ndarray:
        return np.stack([self.dense(s) for s in SLOTS])

    def with_slot(self, slot: str, cube: np.ndarray) -> "ModeField":
        cubes = self.dense_all()
        cubes[_slot_position(slot)] = cube
        role = self.role if slot in self.active_slots else "full"
        return ModeField.from_dense(cubes, role=role)

    def __add__(self, other: "ModeField") -> "ModeField":
        _require_same_cutoff(self, other)
        role = self.role if self.role == other.role else "full"
        return ModeField.from_dense(self.dense_all() + other.dense_all(), role=role)

    def scaled(self, factor: complex) -> "ModeField":
        return ModeField.from_dense(self.dense_all() * factor, role=self.role)

    def is_zero(self) -> bool:
        return all(not np.any(v) for v in self.entries.values())


def _require_same_cutoff(a: ModeField, b: ModeField) -> None:
    if a.cutoff != b.cutoff:
        raise DimensionError(
            f"Cutoff mismatch: {a.cutoff} vs {b.cutoff}",
            {"left": a.cutoff, "right": b.cutoff},
        )


# ---------------------------------------------------------------------------
# Products and symmetries
# ---------------------------------------------------------------------------

def convolve_cubes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(ab)_m = (2 pi)^{-3/2} sum_j a_j b_{m-j}, truncated to the input cutoff."""
    if a.shape != b.shape:
        raise DimensionError(f"Cube shapes differ: {a.shape} vs {b.shape}")
    N = (a.shape[0] - 1) // 2
    full = signal.convolve(a, b, mode="full", method="direct")
    return NORMALIZATION * full[N:3 * N + 1, N:3 * N + 1, N:3 * N + 1]


def conj_reflect(cube: np.ndarray) -> np.ndarray:
    """Coefficients of the complex conjugate function: c_m -> conj(c_{-m})."""
    return np.conj(cube[::-1, ::-1, ::-1])


def convolve(A: ModeField, B: ModeField, slot_a: str, slot_b: str,
             out_slot: Optional[str] = None) -> ModeField:
    _require_same_cutoff(A, B)
    for fld, slot in ((A, slot_a), (B, slot_b)):
        if slot not in fld.active_slots:
            raise PreconditionError(f"Slot {slot!r} is not active for role {fld.role!r}")
    product = convolve_cubes(A.dense(slot_a), B.dense(slot_b))
    cubes = np.zeros((5,) + product.shape, dtype=complex)
    cubes[_slot_position(out_slot or slot_a)] = product
    return ModeField.from_dense(cubes, role="full")


def reality_check(F: ModeField) -> Tuple[bool, float]:
    """Worst |x_m + conj(x_{-m})| over the connection slots."""
    if not set(CONNECTION_SLOTS) & set(F.active_slots):
        raise PreconditionError("Reality check needs connection slots")
    worst = 0.0
    for slot in CONNECTION_SLOTS:
        cube = F.dense(slot)
        worst = max(worst, float(np.max(np.abs(cube + conj_reflect(cube)), initial=0.0)))
    return worst <= EXACT_TOL, worst


def enforce_reality(F: ModeField) -> ModeField:
    cubes = F.dense_all()
    for slot in CONNECTION_SLOTS:
        pos = SLOTS.index(slot)
        cubes[pos] = 0.5 * (cubes[pos] - conj_reflect(cubes[pos]))
    return ModeField.from_dense(cubes, role=F.role, real=True)


def parseval_norm(F: ModeField, weights: Optional[Mapping[str, float]] = None) -> float:
    weights = dict(weights or {})
    for slot, w in weights.items():
        _slot_position(slot)
        if w < 0:
            raise DomainError(f"Negative weight {w} for slot {slot!r}", {"slot": slot})
    w_vec = np.array([weights.get(s, 1.0) for s in SLOTS])
    total = 0.0
    for vec in F.entries.values():
        total += float(np.sum(w_vec * np.abs(vec) ** 2))
    return math.sqrt(total)


def sample_grid(F: ModeField, slot: str, theta: np.ndarray, x: np.ndarray,
                y: np.ndarray) -> np.ndarray:
    """Evaluate one slot on the tensor grid theta x x x y."""
    modes = np.arange(-F.cutoff, F.cutoff + 1)
    e_theta = np.exp(1j * np.outer(modes, np.asarray(theta)))
    e_x = np.exp(1j * np.outer(modes, np.asarray(x)))
    e_y = np.exp(1j * np.outer(modes, np.asarray(y)))
    values = np.einsum("nlk,na,lb,kc->abc", F.dense(slot), e_theta, e_x, e_y, optimize=True)
    return NORMALIZATION * values


# ---------------------------------------------------------------------------
# Polar chart
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolarChart:
    """z = s + it = e^{rho + i theta} with theta in [-pi, pi]."""

    theta_min: float = -math.pi
    theta_max: float = math.pi

    def to_polar(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any((s == 0.0) & (t == 0.0)):
            raise DomainError("Polar chart is undefined at the origin")
        rho = 0.5 * np.log(s * s + t * t)
        theta = np.arctan2(t, s)
        if rho.ndim == 0:
            return float(rho), float(theta)
        return rho, theta

    def to_cartesian(self, rho, theta):
        rho = np.asarray(rho, dtype=float)
        theta = np.asarray(theta, dtype=float)
        r = np.exp(rho)
        s, t = r * np.cos(theta), r * np.sin(theta)
        if s.ndim == 0:
            return float(s), float(t)
        return s, t


DEFAULT_CHART = PolarChart()


def polar_map(s, t):
    return DEFAULT_CHART.to_polar(s, t)


def inverse_polar_map(rho, theta):
    return DEFAULT_CHART.to_cartesian(rho, theta)


def _polar_components(f, h, rho, theta):
    scale = np.exp(-rho)
    c, s = np.cos(theta), np.sin(theta)
    return scale * (c * h - s * f), scale * (c * f + s * h)


def polar_transform_fields(a, f, h, s_grid, t_grid, rho_grid=None, theta_grid=None):
    """Carry (a, f, h) from an (s, t) grid to polar coordinates.

    Arrays have trailing axes (len(s_grid), len(t_grid)).  Without target
    grids the transform is pointwise and returns the polar coordinates of
    the input nodes; with target grids the inputs are bilinearly resampled
    at e^{rho + i theta} first.  ``a`` is carried unchanged.

    Returns (rho, theta, a, f, h) with rho, theta as broadcast meshes.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    a, f, h = (np.asarray(v) for v in (a, f, h))
    if rho_grid is None:
        S, T = np.meshgrid(s_grid, t_grid, indexing="ij")
        rho, theta = DEFAULT_CHART.to_polar(S, T)
        f_p, h_p = _polar_components(f, h, rho, theta)
        return rho, theta, a, f_p, h_p

    if np.any(s_grid == 0.0) and np.any(t_grid == 0.0):
        raise DomainError("Source grid contains the origin")
    rho, theta = np.meshgrid(np.asarray(rho_grid, dtype=float),
                             np.asarray(theta_grid, dtype=float), indexing="ij")
    S, T = DEFAULT_CHART.to_cartesian(rho, theta)
    points = np.stack([S.ravel(), T.ravel()], axis=-1)

    def resample(values):
        lead = values.shape[:-2]
        flat = values.reshape((-1,) + values.shape[-2:])
        out = []
        for sheet in flat:
            interp = RegularGridInterpolator((s_grid, t_grid), sheet, method="linear")
            out.append(interp(points).reshape(rho.shape))
        return np.asarray(out).reshape(lead + rho.shape)

    f_p, h_p = _polar_components(resample(f), resample(h), rho, theta)
    return rho, theta, resample(a), f_p, h_p


def inverse_polar_transform_fields(a, f_p, h_p, rho, theta):
    """Pointwise inverse of polar_transform_fields."""
    scale = np.exp(rho)
    c, s = np.cos(theta), np.sin(theta)
    f = scale * (-s * f_p + c * h_p)
    h = scale * (c * f_p + s * h_p)
    return a, f, h


# ---------------------------------------------------------------------------
# Trajectories and rescalings
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Samples of an integrated state along a rho (or t) grid.

    ``states`` has the grid along axis 0.
    """

    rho: np.ndarray
    states: np.ndarray
    index: Optional[ModeIndex] = None
    metadata: Dict[str, object] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.states = np.asarray(self.states)
        if self.states.shape[0] != self.rho.shape[0]:
            raise DimensionError(
                f"{self.states.shape[0]} states for {self.rho.shape[0]} grid points"
            )

    def norms(self) -> np.ndarray:
        flat = self.states.reshape(self.states.shape[0], -1)
        return np.linalg.norm(flat, axis=1)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.states), initial=0.0))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def rescale_rho(traj: Trajectory, shift: float) -> Trajectory:
    """rho -> rho - shift."""
    meta = dict(traj.metadata, rho_shift=float(shift))
    return Trajectory(traj.rho - shift, traj.states.copy(), traj.index, meta, dict(traj.diagnostics))


def rescale_time(t, shift: float):
    """|t| -> e^{-shift} |t|, sign kept."""
    return np.asarray(t, dtype=float) * math.exp(-shift)


def iter_indices(cutoff: int) -> Iterable[ModeIndex]:
    rng = range(-cutoff, cutoff + 1)
    for n in rng:
        for l in rng:
            for k in rng:
                yield ModeIndex(n, l, k)
