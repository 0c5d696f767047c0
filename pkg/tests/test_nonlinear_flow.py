"""
Tests for the nonlinear mode system, its solvers and the T^3 energy checks.
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from asd_neck import asd_matrix
from dirac_neck import dirac_matrix, stable_subspace
from errors import DegenerateModeError, DimensionError, DomainError, PreconditionError
from mode_core import NORMALIZATION, ModeField, enforce_reality, iter_indices, reality_check
from nonlinear_flow import (
    Flow3D,
    PerturbationSpec,
    clm_counts,
    csd_functional,
    curl_modes,
    energy_identity,
    estimate_suite,
    gradient_flow,
    integrate_sw,
    linear_part,
    perturbation_bound_check,
    picard_split_solve,
    quadratic_part,
    successive_approximation,
    sw_rhs,
    two_block_split,
)


def _zero_modes_only(rng, cutoff=1, scale=1e-4):
    """Random state supported on l = k = 0 (bounded growth on short spans)."""
    side = 2 * cutoff + 1
    cubes = np.zeros((5, side, side, side), dtype=complex)
    cubes[:, :, cutoff, cutoff] = scale * (rng.standard_normal((5, side)) + 1j * rng.standard_normal((5, side)))
    cubes[:3] = 0.5 * (cubes[:3] - np.conj(cubes[:3, ::-1, ::-1, ::-1]))
    return cubes


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------

def test_zero_spinor_reduces_to_asd_matrix(random_field):
    state = random_field(cutoff=1).with_slot("alpha", np.zeros((3, 3, 3))).with_slot("beta", np.zeros((3, 3, 3)))
    rho = 0.7
    out = sw_rhs(state, rho)
    for index in iter_indices(1):
        y = np.array([state.coefficient(index, s) for s in ("u", "v", "f")])
        expected = asd_matrix(index, rho) @ y
        got = np.array([out.coefficient(index, s) for s in ("u", "v", "f")])
        assert np.max(np.abs(got - expected)) <= 1e-14 * max(1.0, np.max(np.abs(expected)))


def test_single_alpha_mode_feeds_only_f():
    a = 0.8 - 0.3j
    state = ModeField.single(1, (1, 0, 0), "alpha", a)
    rho = 0.4
    extra = ModeField.from_dense(quadratic_part(state.dense_all(), rho))
    expected = 0.5j * math.exp(2 * rho) * NORMALIZATION * abs(a) ** 2
    assert extra.coefficient((0, 0, 0), "f") == pytest.approx(expected, abs=1e-15)
    assert not extra.dense("u").any()
    assert not extra.dense("v").any()


def _grid_rhs(cubes, rho, size=8):
    """Independent evaluation on a collocation grid, projected back to modes."""
    N = (cubes.shape[1] - 1) // 2
    r = np.arange(-N, N + 1)
    grid = 2 * math.pi * np.arange(size) / size
    E = np.exp(1j * np.outer(r, grid))

    def values(cube):
        return NORMALIZATION * np.einsum("nlk,na,lb,kc->abc", cube, E, E, E, optimize=True)

    n, l, k = r[:, None, None], r[None, :, None], r[None, None, :]
    U, V, F, A, B = (values(c) for c in cubes)
    dth = lambda c: values(1j * n * c)  # noqa: E731
    dx = lambda c: values(1j * l * c)  # noqa: E731
    dy = lambda c: values(1j * k * c)  # noqa: E731
    e = math.exp(rho)
    theta = grid[:, None, None]
    ab = np.conj(A) * B
    a_plus = (U + 1j * V) / e
    dBbar = np.conj(dx(cubes[4])) + 1j * np.conj(dy(cubes[4]))
    dA = dx(cubes[3]) + 1j * dy(cubes[3])
    rhs = [
        U - dth(cubes[1]) + e * dy(cubes[2]) + 2j * e * ab.real,
        V + dth(cubes[0]) - e * dx(cubes[2]) + 2j * e * ab.imag,
        e * (dy(cubes[0]) - dx(cubes[1])) + 0.5j * e * e * (np.abs(A) ** 2 - np.abs(B) ** 2),
        1j * dth(cubes[3]) + 0.5j * e * np.exp(-1j * theta) * (dBbar - a_plus * np.conj(B)) + 1j * F * A,
        -1j * dth(cubes[4]) - 1j * e * np.exp(-1j * theta) * (dA + a_plus * A) - 1j * F * B,
    ]
    idx = r % size
    out = []
    for g in rhs:
        coeffs = np.fft.fftn(g) * (2 * math.pi) ** 1.5 / size ** 3
        out.append(coeffs[np.ix_(idx, idx, idx)])
    return np.stack(out)


def test_rhs_matches_collocation_oracle(random_field):
    state = random_field(cutoff=1, scale=0.5)
    rho = 0.3
    got = sw_rhs(state, rho).dense_all()
    expected = _grid_rhs(state.dense_all(), rho)
    assert np.max(np.abs(got - expected)) < 1e-11


def test_partial_state_is_rejected(random_field):
    with pytest.raises(PreconditionError):
        sw_rhs(random_field(cutoff=1, role="spinor"), 0.0)


def test_reality_is_preserved_by_the_flow(rng):
    side = 3
    cubes = 1e-6 * (rng.standard_normal((5, side, side, side)) + 1j * rng.standard_normal((5, side, side, side)))
    state = enforce_reality(ModeField.from_dense(cubes))
    traj = integrate_sw(state, (0.0, 2.0), samples=11)
    for cubes_t in traj.states:
        ok, worst = reality_check(ModeField.from_dense(cubes_t))
        assert worst <= 1e-8 * max(1.0, np.max(np.abs(cubes_t)))


def test_perturbation_adds_weighted_spinor_matrix(random_field):
    spec = PerturbationSpec(delta=0.5, nu=((1.0, 0.0, 0.0),), theta=math.pi / 2)
    cubes = random_field(cutoff=1).dense_all()
    diff = linear_part(cubes, 0.2, spec) - linear_part(cubes, 0.2)
    w = math.exp(-0.5 * max(math.exp(0.2) * math.cos(math.pi / 2), 0.0))
    A, B = cubes[3], cubes[4]
    # nu = dx gives P = [[0, -1], [1, 0]]
    expected_alpha = np.zeros_like(A)
    expected_alpha[:-1] = (1j * math.exp(0.2) * w * (-B))[1:]
    assert np.allclose(diff[3], expected_alpha, atol=1e-14)
    assert not np.any(diff[:3])


# ---------------------------------------------------------------------------
# Perturbation class
# ---------------------------------------------------------------------------

def test_profile_and_cylinder_profile():
    spec = PerturbationSpec(delta=0.3, r=2.0)
    assert spec.profile(0.0, theta=0.0) == pytest.approx(math.exp(-0.3 * 3.0))
    assert spec.profile(1.0, theta=math.pi) == pytest.approx(math.exp(-0.6))
    assert spec.cylinder_profile(1.0) == pytest.approx(math.exp(-0.9))


def test_non_positive_delta_is_rejected():
    with pytest.raises(DomainError):
        PerturbationSpec(delta=0.0)


def test_bound_check_passes_for_declared_constant():
    spec = PerturbationSpec(delta=1.0, nu=((1.0, 0.5, -0.2), (0.0, 0.3, 1.0)),
                            dV=lambda z: np.tanh(z))
    check = perturbation_bound_check(spec, samples=8)
    assert check.holds
    assert check.worst_ratio <= 1.0
    assert check.weight_integral > 0


def test_bound_check_flags_undersized_constant():
    spec = PerturbationSpec(delta=1.0, nu=((1.0, 0.0, 0.0),), coefficient_bound=0.5)
    assert not perturbation_bound_check(spec, samples=4).holds


def test_weight_integral_needs_right_half_plane():
    with pytest.raises(DomainError):
        perturbation_bound_check(PerturbationSpec(delta=1.0), theta=math.pi)


# ---------------------------------------------------------------------------
# Successive approximation
# ---------------------------------------------------------------------------

def test_zero_start_stays_zero():
    zero = np.zeros((5, 3, 3, 3), dtype=complex)
    result = successive_approximation(lambda r: zero, nu_max=3, span=(0.0, 1.0), samples=11)
    assert result.converged
    assert all(not np.any(t.states) for t in result.iterates)


def test_constant_connection_converges_at_first_iterate():
    state = ModeField.single(1, (0, 0, 0), "u", 0.2j)
    linear = integrate_sw(state, (0.0, 1.0), samples=21, nonlinear=False)
    result = successive_approximation(linear, nu_max=3, span=(0.0, 1.0), samples=21)
    assert result.distances[0] <= 1e-9
    assert result.converged
    assert len(result.iterates) == 2


def test_small_amplitude_iterates_contract_to_the_nonlinear_solution(rng):
    cubes = _zero_modes_only(rng, scale=1e-3)
    span = (0.0, 1.5)
    linear = integrate_sw(cubes, span, samples=31, nonlinear=False)
    result = successive_approximation(linear, nu_max=8, span=span, samples=31, tol=1e-11)
    assert result.converged
    assert all(ratio <= 0.5 for ratio in result.ratios[:2])
    assert result.residual <= 1e-6
    direct = integrate_sw(cubes, span, samples=31)
    assert np.max(np.abs(result.limit.states - direct.states)) < 1e-8


def test_bad_start_type_is_rejected():
    with pytest.raises(DomainError):
        successive_approximation(3.0, nu_max=1)


# ---------------------------------------------------------------------------
# Block splitting
# ---------------------------------------------------------------------------

def test_diagonal_split():
    split = two_block_split(np.diag([-2.0, -1.0, 1.0, 3.0]))
    assert np.allclose(split.M_minus, np.diag([-2.0, -1.0]))
    assert np.allclose(split.M_plus, np.diag([1.0, 3.0]))
    assert split.lambda0 == pytest.approx(1.0)
    assert split.window == (-1.0, 0.0)


def test_centre_values_are_reported_separately():
    split = two_block_split(np.diag([-1.0, 2j, -2j, 1.0]))
    assert split.stable.size == 1 and split.unstable.size == 1
    assert np.allclose(sorted(split.center, key=lambda z: z.imag), [-2j, 2j])


def test_near_zero_real_part_blocks_the_split():
    with pytest.raises(DegenerateModeError):
        two_block_split(np.diag([-1.0, 1e-8, 1.0]))


def test_dirac_stable_block_matches_stable_subspace():
    split = two_block_split(lambda rho: dirac_matrix((0, 1, 1)))
    assert split.M_minus.shape == (2, 2)
    basis = stable_subspace((0, 1, 1))
    assert np.allclose(split.P_stable @ basis, basis, atol=1e-10)
    assert np.linalg.matrix_rank(split.P_stable, tol=1e-8) == 2


def test_non_square_system_is_rejected():
    with pytest.raises(DimensionError):
        two_block_split(np.zeros((2, 3)))


def test_picard_solution_matches_direct_integration():
    split = two_block_split(np.diag([-1.0, 2.0]))
    traj = picard_split_solve(split, lambda r, x: 0.1 * x ** 2, [1.0], (0.0, 2.0), samples=801)
    sol = solve_ivp(lambda r, x: -x + 0.1 * x ** 2, (0.0, 2.0), [1.0], t_eval=traj.rho,
                    rtol=1e-12, atol=1e-14)
    assert np.max(np.abs(traj.states[:, 0] - sol.y[0])) < 1e-5


# ---------------------------------------------------------------------------
# T^3 energy identity
# ---------------------------------------------------------------------------

def _helical_b(cutoff=1):
    """Imaginary-valued curl eigenvector on the modes +-(1, 0, 0), eigenvalue 1."""
    side = 2 * cutoff + 1
    b = np.zeros((3, side, side, side), dtype=complex)
    c = cutoff
    b[:, c + 1, c, c] = [0, 1j, -1]
    b[:, c - 1, c, c] = [0, 1j, 1]
    return b


def test_helical_mode_is_a_curl_eigenvector():
    b = _helical_b()
    assert np.allclose(curl_modes(b), b)


def test_constant_trajectory_has_zero_energy():
    b = _helical_b()
    t = np.linspace(0, 1, 5)
    flow = Flow3D(t, np.repeat(b[None], 5, axis=0), np.zeros((5, 2, 3, 3, 3)))
    report = energy_identity(flow)
    assert report.energy == 0.0
    assert report.topological == 0.0
    assert report.identity_gap == 0.0


def test_linear_path_identity_is_exact():
    b = _helical_b()
    t = np.linspace(0, 1, 11)
    flow = Flow3D(t, t[:, None, None, None, None] * b[None], np.zeros((11, 2, 3, 3, 3)))
    report = energy_identity(flow)
    assert report.csd_final == pytest.approx(2.0)
    assert report.identity_gap <= 1e-8


def test_identity_gap_has_second_order():
    b = _helical_b()
    gaps = []
    for samples in (11, 21, 41):
        t = np.linspace(0, 1, samples)
        flow = Flow3D(t, np.sin(t)[:, None, None, None, None] * b[None], np.zeros((samples, 2, 3, 3, 3)))
        gaps.append(energy_identity(flow).identity_gap)
    orders = [math.log2(gaps[i] / gaps[i + 1]) for i in range(2)]
    assert min(orders) >= 1.8


def test_gradient_flow_energy_matches_functional_drop():
    side = 3
    b0 = _helical_b() * 0.5
    b0[:, 1, 1, 1] = [0, 0, 0.3j]
    b0[:, 1, 2, 1] = [0.2j, 0, 0.1]
    b0[:, 1, 0, 1] = [0.2j, 0, -0.1]
    flow = gradient_flow(b0, np.zeros((2, side, side, side)), np.linspace(0, 1, 201))
    report = energy_identity(flow, endpoint_tol=1e-6)
    assert report.energy >= 0
    assert report.energy_gap <= 1e-6
    assert report.identity_gap <= 1e-6


def test_non_flow_endpoints_fail_the_precondition():
    b = _helical_b()
    t = np.linspace(0, 1, 5)
    flow = Flow3D(t, t[:, None, None, None, None] * b[None], np.zeros((5, 2, 3, 3, 3)))
    with pytest.raises(PreconditionError):
        energy_identity(flow, endpoint_tol=1e-6)


def test_spinor_functional_is_real_and_vanishes_without_spinor():
    b = _helical_b()
    assert csd_functional(b, np.zeros((2, 3, 3, 3))) == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------

def test_zero_spinor_bounds_hold_trivially():
    b = _helical_b()
    t = np.linspace(0, 1, 9)
    flow = Flow3D(t, np.exp(-t)[:, None, None, None, None] * b[None], np.zeros((9, 2, 3, 3, 3)))
    table = estimate_suite(flow, s0=0.0)
    rows = table.by_tag()
    assert rows["uniform.spinor_L4"].lhs == 0.0 and rows["uniform.spinor_L4"].holds
    assert rows["uniform.covariant"].lhs == 0.0 and rows["uniform.covariant"].holds
    assert rows["pointwise.spinor"].holds


def test_constant_spinor_is_tight_in_the_pointwise_bound():
    s0 = 0.7
    psi = np.zeros((2, 3, 3, 3), dtype=complex)
    psi[0, 1, 1, 1] = math.sqrt(s0) * (2 * math.pi) ** 1.5
    t = np.linspace(0, 1, 5)
    flow = Flow3D(t, np.zeros((5, 3, 3, 3, 3)), np.repeat(psi[None], 5, axis=0))
    row = estimate_suite(flow, s0=s0).by_tag()["pointwise.spinor"]
    assert row.lhs == pytest.approx(s0, rel=1e-12)
    assert row.holds


def test_decay_constant_is_recovered():
    b = _helical_b()
    t = np.linspace(0, 30, 61)
    flow = Flow3D(t, np.exp(-0.1 * t)[:, None, None, None, None] * b[None], np.zeros((61, 2, 3, 3, 3)))
    table = estimate_suite(flow, s0=0.0, r=10.0, limit=(np.zeros_like(b), np.zeros((2, 3, 3, 3))))
    assert table.decay.c_over_r == pytest.approx(0.1, rel=0.05)
    assert table.decay.c == pytest.approx(1.0, rel=0.05)
    assert table.decay.C == pytest.approx(2.0, rel=1e-6)


def test_perturbed_s0_uses_the_perturbation_constant():
    spec = PerturbationSpec(delta=1.0, nu=((1.0, 0.0, 0.0),))
    t = np.linspace(0, 1, 3)
    flow = Flow3D(t, np.zeros((3, 3, 3, 3, 3)), np.zeros((3, 2, 3, 3, 3)))
    table = estimate_suite(flow, scalar_min=0.5, pert=spec)
    assert table.s0 == pytest.approx(max(-0.5 + spec.bound, 0.0))


def test_negative_s0_is_rejected():
    t = np.linspace(0, 1, 3)
    flow = Flow3D(t, np.zeros((3, 3, 3, 3, 3)), np.zeros((3, 2, 3, 3, 3)))
    with pytest.raises(DomainError):
        estimate_suite(flow, s0=-1.0)


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("dims,expected", [
    ((0, 0, 2, 0), (2, 0)),
    ((1, 0, 2, 1), (3, 2)),
    ((0, 0, 0, 0), (0, 0)),
])
def test_clm_counts(dims, expected):
    assert clm_counts(*dims) == expected


def test_intersection_larger_than_ambient_is_rejected():
    with pytest.raises(DomainError):
        clm_counts(0, 0, 1, 2)
