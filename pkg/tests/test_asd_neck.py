"""
Tests for the radial-gauge ASD mode systems, solution families and gauge fixing.
"""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from asd_neck import (
    VARIANT_CONSTANT,
    VARIANT_L_NONZERO,
    VARIANT_L_ZERO,
    AsdFiniteEnergyFamily,
    AsdModeSystem,
    asd_matrix,
    asd_residual,
    constant_branch_solution,
    finite_energy_evaluate,
    flatten_gauge,
    integrate_asd,
    leading_eigenvalues,
    leading_matrix,
    perturbed_eigenvalues,
    radial_limit,
    reduced_matrix,
    track_eigenvalues,
)
from errors import DegenerateModeError, DomainError, PreconditionError
from mode_core import ModeIndex


# ---------------------------------------------------------------------------
# Mode matrices
# ---------------------------------------------------------------------------

def test_zero_mode_matrix():
    assert np.array_equal(asd_matrix((0, 0, 0), 3.7), np.diag([1, 1, 0]).astype(complex))


def test_matrix_for_mixed_mode():
    expected = np.array([[1, -1j, 0], [1j, 1, -1j], [0, -1j, 0]])
    assert np.allclose(asd_matrix((1, 1, 0), 0.0), expected, atol=1e-15)


def test_matrix_picks_up_exponential():
    expected = np.array([[1, 0, 2j], [0, 1, 0], [2j, 0, 0]])
    assert np.allclose(asd_matrix((0, 0, 1), math.log(2.0)), expected, atol=1e-14)


def test_variant_tags():
    assert AsdModeSystem(ModeIndex(0, 2, 1)).variant == VARIANT_L_NONZERO
    assert AsdModeSystem(ModeIndex(3, 0, 1)).variant == VARIANT_L_ZERO
    assert AsdModeSystem(ModeIndex(3, 0, 0)).variant == VARIANT_CONSTANT


@pytest.mark.parametrize("index,rho", [((0, 1, 0), 0.0), ((2, 1, -1), 0.4), ((1, 0, 2), -0.3)])
def test_reduced_matrix_has_unit_trace(index, rho):
    assert np.trace(reduced_matrix(index, rho)) == pytest.approx(1.0, abs=1e-14)


# ---------------------------------------------------------------------------
# Eigenvalues
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("l,k,rho,modulus", [
    (1, 0, 0.0, 1.0),
    (3, 4, 0.0, 5.0),
    (1, 1, math.log(2.0), 2 * math.sqrt(2.0)),
])
def test_leading_eigenvalues_match_eigensolve(l, k, rho, modulus):
    modes = leading_eigenvalues(l, k, rho)
    assert modes.eigenvalues == pytest.approx([1j * modulus, -1j * modulus])
    numeric = sorted(np.linalg.eigvals(leading_matrix(l, k, rho)), key=lambda z: -z.imag)
    assert np.allclose(numeric, modes.eigenvalues, atol=1e-12)


def test_leading_eigenvectors_are_eigenvectors():
    lead = leading_matrix(2, 1, 0.3)
    modes = leading_eigenvalues(2, 1, 0.3)
    for j in range(2):
        vec = modes.eigenvectors[:, j]
        assert np.allclose(lead @ vec, modes.eigenvalues[j] * vec, atol=1e-12)
    assert modes.printed_eigenvectors[1, 0] == pytest.approx(2 / math.sqrt(5))


def test_leading_eigenvalues_reject_constant_branch():
    with pytest.raises(DegenerateModeError):
        leading_eigenvalues(0, 0, 0.0)


def test_perturbed_eigenvalues_at_origin():
    expected = [(1 + 1j * math.sqrt(3)) / 2, (1 - 1j * math.sqrt(3)) / 2]
    values = perturbed_eigenvalues((0, 1, 0), 0.0)
    assert values == pytest.approx(expected)
    numeric = sorted(np.linalg.eigvals(reduced_matrix((0, 1, 0), 0.0)), key=lambda z: -z.imag)
    assert np.allclose(numeric, values, atol=1e-12)


def test_perturbed_eigenvalues_far_down_the_neck():
    values = perturbed_eigenvalues((0, 1, 0), -40.0)
    assert values == pytest.approx([1.0, 0.0], abs=1e-12)


def test_perturbed_eigenvalues_l_zero_branch():
    assert perturbed_eigenvalues((1, 0, 1), 0.0) == pytest.approx([1.0, 0.0])


def test_perturbed_eigenvalues_match_reduced_system_generic(rng):
    for _ in range(5):
        index = tuple(int(v) for v in rng.integers(-3, 4, size=3))
        if index[1] == 0 and index[2] == 0:
            continue
        rho = float(rng.uniform(-1, 1))
        numeric = np.linalg.eigvals(reduced_matrix(index, rho))
        values = perturbed_eigenvalues(index, rho)
        for value in values:
            assert np.min(np.abs(numeric - value)) < 1e-9


def test_perturbed_eigenvalues_reject_constant_branch():
    with pytest.raises(DegenerateModeError):
        perturbed_eigenvalues((2, 0, 0), 0.0)


def test_tracked_eigenvalues_are_pairs_of_the_formula():
    grid = np.linspace(-2.0, 1.0, 31)
    tracked = track_eigenvalues((0, 1, 0), grid)
    assert tracked.shape == (31, 2)
    for rho, row in zip(grid, tracked):
        expected = perturbed_eigenvalues((0, 1, 0), rho)
        assert np.allclose(np.sort_complex(row), np.sort_complex(expected))


# ---------------------------------------------------------------------------
# Finite-energy families
# ---------------------------------------------------------------------------

def test_constant_term_only():
    (ax, ay), f = finite_energy_evaluate(AsdFiniteEnergyFamily(u0=1j), (0.4, 1.1), 0.7, 2.0)
    assert ax == pytest.approx(1j)
    assert ay == pytest.approx(0)
    assert f == pytest.approx(0)


def test_single_disk_coefficient():
    fam = AsdFiniteEnergyFamily(disk={(0, 1, 0): 1j})
    (ax, ay), f = finite_energy_evaluate(fam, (0.3, 0.0), 1.0, 0.5)
    assert ax == pytest.approx(1j * np.exp(0.3j))
    assert ay == pytest.approx(0)
    assert f == pytest.approx(0)


def test_decaying_pair_solves_radial_equations():
    fam = AsdFiniteEnergyFamily(decaying={1: 1j, -1: 1j}, real=True)
    residual = asd_residual(fam, (0.2, 0.9), 1.0, 0.0)
    assert np.max(np.abs(residual)) < 1e-8


def test_mixed_family_residual_on_a_grid(rng):
    fam = AsdFiniteEnergyFamily(
        u0=0.5j, v0=-0.25j, f0=0.1j,
        decaying={1: 1j, -1: 1j, 2: 0.3 + 0.2j, -2: -0.3 + 0.2j},
        disk={(1, 1, 0): 0.2j, (-1, -1, 0): 0.2j, (2, 0, 1): 0.1 + 0.1j, (-2, 0, -1): -0.1 + 0.1j},
        real=True,
    )
    x, y = rng.uniform(0, 2 * math.pi, 2)
    rho = np.linspace(-0.5, 1.5, 7)
    theta = np.linspace(-math.pi, math.pi, 7)
    residual = asd_residual(fam, (x, y), rho, theta)
    assert np.max(np.abs(residual)) < 1e-8


def test_f_does_not_depend_on_rho():
    fam = AsdFiniteEnergyFamily(f0=2j, decaying={1: 1j, -1: 1j}, disk={(1, 0, 1): 1.0, (-1, 0, -1): -1.0})
    _, f_near = finite_energy_evaluate(fam, (0.1, 0.2), 0.0, 0.3)
    _, f_far = finite_energy_evaluate(fam, (0.1, 0.2), 4.0, 0.3)
    assert f_near == pytest.approx(f_far, abs=1e-14)


def test_energy_surrogate_sums_weighted_squares():
    fam = AsdFiniteEnergyFamily(decaying={1: 1j, -1: 1j}, disk={(1, 1, 0): 0.5})
    assert fam.energy_surrogate() == pytest.approx(2.0 + 1.0)


def test_reality_flag_rejects_unpaired_coefficients():
    with pytest.raises(DomainError):
        AsdFiniteEnergyFamily(decaying={1: 1.0, -1: 1.0}, real=True)
    assert AsdFiniteEnergyFamily(disk={(0, 1, 0): 1.0}).reality_defect() == pytest.approx(1.0)


def test_incompatible_v_coefficient_is_rejected():
    with pytest.raises(DomainError):
        AsdFiniteEnergyFamily(decaying={1: 1j}, decaying_v={1: 1j})


# ---------------------------------------------------------------------------
# Radial limits
# ---------------------------------------------------------------------------

def test_radial_limit_without_disk_terms():
    limit = radial_limit(AsdFiniteEnergyFamily(u0=1j, v0=2j), 0.4)
    assert limit.a_inf[0] == pytest.approx(1j)
    assert limit.a_inf[1] == pytest.approx(2j)
    assert limit.gamma == pytest.approx(0)


def test_radial_limit_potential_for_single_coefficient():
    limit = radial_limit(AsdFiniteEnergyFamily(disk={(0, 1, 0): 1.0}), 0.0, (0.7, 0.0))
    assert limit.gamma == pytest.approx(-1j * np.exp(0.7j))
    assert limit.a_inf[0] == pytest.approx(np.exp(0.7j))
    assert limit.gauge_defect == 0.0


def test_decaying_terms_do_not_reach_the_limit():
    plain = radial_limit(AsdFiniteEnergyFamily(u0=1j), 1.0)
    decorated = radial_limit(AsdFiniteEnergyFamily(u0=1j, decaying={3: 1j, -3: 1j}), 1.0)
    assert decorated.a_inf[0] == pytest.approx(plain.a_inf[0])


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def test_zero_mode_exponential():
    traj = integrate_asd((0, 0, 0), [1, 0, 0], (0.0, 1.0))
    assert np.allclose(traj.states[:, 0], np.exp(traj.rho), atol=1e-12)
    assert np.allclose(traj.states[:, 1:], 0)
    assert traj.metadata["method"] == "closed_form"


def test_zero_mode_constant_f():
    traj = integrate_asd((0, 0, 0), [0, 0, 1], (0.0, 2.0))
    assert np.allclose(traj.states, [0, 0, 1])


def test_constant_branch_matches_matrix_exponential():
    y0 = np.array([1.0, 0.5j, 0.2])
    for n in (-2, 1, 3):
        closed = constant_branch_solution(n, y0, 0.8)
        assert np.allclose(closed, expm(asd_matrix((n, 0, 0), 0.0) * 0.8) @ y0, atol=1e-12)


def test_integration_matches_product_integral():
    index = (0, 1, 0)
    y0 = np.array([1.0, 0.5, 0.2j])
    traj = integrate_asd(index, y0, (0.0, 1.0))
    steps = 10_000
    dr = 1.0 / steps
    state = y0.astype(complex)
    for j in range(steps):
        state = expm(asd_matrix(index, (j + 0.5) * dr) * dr) @ state
    assert np.max(np.abs(traj.final - state)) < 1e-7


def test_generic_data_grows_like_e_rho():
    traj = integrate_asd((0, 1, 0), [1.0, 0.3, 0.1], (0.0, 5.0))
    mask = traj.rho >= 3.0
    slope = np.polyfit(traj.rho[mask], np.log(np.abs(traj.states[mask, 0])), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.05)


def test_span_beyond_rho_max_is_rejected():
    with pytest.raises(DomainError):
        integrate_asd((0, 1, 0), [1, 0, 0], (0.0, 7.0))


def test_infinite_span_is_rejected():
    with pytest.raises(DomainError):
        integrate_asd((0, 1, 0), [1, 0, 0], (0.0, math.inf))


# ---------------------------------------------------------------------------
# Gauge flattening
# ---------------------------------------------------------------------------

def _torus(n=8):
    return np.arange(n) * 2 * math.pi / n


def test_trivial_gauge_for_vanishing_f_and_h():
    x = _torus()
    s, t = np.linspace(6.0, 7.0, 5), np.linspace(-1.0, 1.0, 9)
    shape = (8, 8, 5, 9)
    a = np.stack([np.full(shape, 0.3j), np.full(shape, -0.1j)])
    result = flatten_gauge(a, np.zeros(shape), np.zeros(shape), s, t)
    assert np.allclose(result.gauge, 1.0)
    assert np.allclose(result.connection, a)


def test_linear_in_t_connection_becomes_constant():
    x = _torus()
    s, t = np.linspace(6.0, 7.0, 5), np.linspace(-1.0, 1.0, 9)
    X = x[:, None, None, None] * np.ones((1, 8, 5, 9))
    T = t[None, None, None, :] * np.ones((8, 8, 5, 1))
    g = np.cos(X)
    a = np.stack([0.3j + 1j * T * (-np.sin(X)), np.full(X.shape, -0.1j)])
    result = flatten_gauge(a, g, np.zeros(X.shape), s, t)
    assert result.dt_norm < 1e-10
    assert np.allclose(result.constant[0], 0.3j, atol=1e-10)
    assert np.allclose(result.gauge, np.exp(-1j * T * g), atol=1e-12)


def test_non_flat_input_is_rejected():
    s, t = np.linspace(6.0, 7.0, 5), np.linspace(-1.0, 1.0, 9)
    shape = (8, 8, 5, 9)
    f = np.zeros(shape)
    f[:, :, :, :] = s[None, None, :, None]
    with pytest.raises(PreconditionError) as err:
        flatten_gauge(np.zeros((2,) + shape, dtype=complex), f, np.zeros(shape), s, t)
    assert err.value.details["flatness_residual"] > 0.5


def _gauge_transformed_constant(points):
    x = _torus()
    r0 = 6.0
    s = np.linspace(r0, r0 + 2.0, points)
    t = np.linspace(-1.0, 1.0, points)
    X = x[:, None, None, None]
    S = s[None, None, :, None]
    T = t[None, None, None, :]
    phase = np.sin(S - r0 + T) * np.ones((8, 8, 1, 1))
    dx_phi = np.cos(X) * phase
    h = np.sin(X) * np.cos(S - r0 + T) * np.ones((8, 8, 1, 1))
    a = np.stack([0.3j + 1j * dx_phi, np.full(dx_phi.shape, -0.1j)])
    return a, h.copy(), h, s, t


def test_recovered_connection_converges_at_second_order():
    norms = []
    for points in (17, 33, 65):
        a, f, h, s, t = _gauge_transformed_constant(points)
        result = flatten_gauge(a, f, h, s, t, tol=1.0)
        assert np.allclose(result.constant[0], 0.3j, atol=0.05)
        norms.append(max(result.ds_norm, result.dt_norm))
    orders = [math.log2(norms[i] / norms[i + 1]) for i in range(2)]
    assert min(orders) >= 1.9
