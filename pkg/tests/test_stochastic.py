import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from stochbohm.grid_field import GridSpec, PacketParams, synthesize_packets
from stochbohm.stochastic import (AbsoluteStandard, Fixed, Gaussian, ParamDensity, PointerModel, Tied, Uniform,
                                  averaged_density, branch_coherence_matrix, decoherence_matrix,
                                  difference_rule, marginal_from_dict, marginal_to_dict, max_off_diagonal,
                                  overbar_average, phase_coherence_matrix, pointer_overlap,
                                  single_run_density)

GRID = GridSpec((64.0,), (1024,))


def field(center, p=0.0, width=1.0):
    return synthesize_packets(GRID, 1, [(PacketParams(1.0, 0, (p,), (center,), width), 0)])


# overbar_average

def test_constant_average_exact():
    dens = ParamDensity((Uniform(0, 3), Gaussian(1, 2)), Uniform(-0.5, 0.5))
    avg = overbar_average(lambda p: np.full(len(p), 2.5 - 1j), dens)
    assert abs(avg.value - (2.5 - 1j)) < 1e-15


def test_full_period_phase_average_vanishes():
    tau = 0.01
    dens = ParamDensity((Uniform(0.0, 2 * np.pi / tau),))
    avg = overbar_average(lambda p: np.exp(1j * p.etas[:, 0] * tau), dens, use_y=False)
    assert abs(avg.value) < 1e-10


def test_gaussian_characteristic_function():
    s, tau = 3.0, 0.4
    dens = ParamDensity((Gaussian(0.0, s),))
    avg = overbar_average(lambda p: np.cos(p.etas[:, 0] * tau), dens)
    assert abs(avg.value - np.exp(-(s**2) * tau**2 / 2)) < 1e-8


def test_monte_carlo_reports_stderr():
    s, tau = 3.0, 0.4
    dens = ParamDensity((Gaussian(0.0, s),))
    avg = overbar_average(lambda p: np.cos(p.etas[:, 0] * tau), dens, "monte_carlo", samples=20_000, seed=3)
    assert avg.stderr > 0 and avg.evaluations == 20_000
    assert abs(avg.value - np.exp(-(s**2) * tau**2 / 2)) < 4 * avg.stderr


def test_monte_carlo_deterministic_per_seed():
    dens = ParamDensity((Uniform(0, 1),))
    u = lambda p: p.etas[:, 0]  # noqa: E731
    a = overbar_average(u, dens, "monte_carlo", samples=100, seed=4)
    b = overbar_average(u, dens, "monte_carlo", samples=100, seed=4)
    assert a.value == b.value


def test_quadrature_dimension_limit():
    dens = ParamDensity(tuple(Uniform(0, 1) for _ in range(3)), Uniform(0, 1))
    with pytest.raises(ValueError, match="Monte Carlo"):
        overbar_average(lambda p: np.ones(len(p)), dens)
    ok = overbar_average(lambda p: np.ones(len(p)), dens, use_y=False)
    assert abs(ok.value - 1) < 1e-14


def test_non_finite_integrand_rejected():
    with pytest.raises(ValueError):
        overbar_average(lambda p: np.where(p.etas[:, 0] > 0.5, np.inf, 1.0), ParamDensity((Uniform(0, 1),)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 5), st.floats(-2, 2))
def test_average_linear_and_normalised(a, b, spread, shift):
    dens = ParamDensity((Uniform(shift, shift + spread), Gaussian(shift, spread)), Uniform(-1, 1))
    u = lambda p: np.sin(p.etas[:, 0]) + p.y_offset  # noqa: E731
    v = lambda p: np.exp(-1j * p.etas[:, 1])  # noqa: E731
    lhs = overbar_average(lambda p: a * u(p) + b * v(p), dens).value
    rhs = a * overbar_average(u, dens).value + b * overbar_average(v, dens).value
    assert abs(lhs - rhs) < 1e-12
    assert abs(overbar_average(lambda p: np.ones(len(p)), dens).value - 1) < 1e-14


# pointer overlaps

def test_equal_shifts_overlap_is_one():
    assert pointer_overlap(PointerModel(0.7, 25.0), 3.3, 3.3, 0.9) == 1.0


def test_overlap_closed_form_and_quadrature():
    m = PointerModel(1.0, 0.0)
    ov = pointer_overlap(m, 10.0, 0.0, 1.0)
    assert abs(abs(ov) - np.exp(-100 / 8)) < 1e-15
    assert abs(ov - 3.7e-6) < 1e-7
    re = integrate.quad(lambda y: np.real(m.profile(y - 10.0) * np.conj(m.profile(y))), -30, 40, limit=200)[0]
    assert abs(re - ov.real) < 1e-12


def test_overlap_with_carrier_matches_quadrature():
    m = PointerModel(0.5, 4.0)
    a, b = 0.3, -0.2
    f = lambda y: m.profile(y - a) * np.conj(m.profile(y - b))  # noqa: E731
    re = integrate.quad(lambda y: f(y).real, -10, 10, limit=400)[0]
    im = integrate.quad(lambda y: f(y).imag, -10, 10, limit=400)[0]
    assert abs(m.overlap_shift(a, b) - (re + 1j * im)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 2), st.floats(0.1, 3), st.floats(0, 40))
def test_overlap_conjugate_symmetric(e1, e2, tau, w, k0):
    m = PointerModel(w, k0)
    a, b = pointer_overlap(m, e1, e2, tau), pointer_overlap(m, e2, e1, tau)
    assert abs(a - np.conj(b)) < 1e-14 and abs(a) <= 1 + 1e-15


# decoherence matrix

def test_degenerate_density_all_ones():
    dens = ParamDensity((Fixed(2.0), Fixed(2.0), Fixed(2.0)))
    np.testing.assert_allclose(decoherence_matrix(PointerModel(1.0, 30.0), dens, 0.5), np.ones((3, 3)), atol=1e-15)


def test_quasi_classical_wide_spread():
    model = PointerModel(1.0, 20.0)
    assert model.quasi_classical
    dens = ParamDensity((Uniform(0, 50), Uniform(0, 50), Uniform(0, 50)))
    m = decoherence_matrix(model, dens, 1.0)
    np.testing.assert_allclose(np.diag(m), 1.0)
    assert max_off_diagonal(m) < 1e-2


def test_difference_rule_matches_two_dimensional_quadrature():
    model = PointerModel(1.0, 3.0)
    tau = 0.5
    mx, my = Uniform(0, 6), Gaussian(1.0, 2.0)
    xs, ws = difference_rule(mx, my, tau * (3.0 + 1.0))
    one_d = np.sum(ws * model.overlap_shift(xs * tau, 0.0)) / np.sum(ws)
    dens = ParamDensity((mx, my))
    two_d = overbar_average(lambda p: model.overlap_shift(p.etas[:, 0] * tau, p.etas[:, 1] * tau), dens,
                            nodes=96, panels=8, use_y=False).value
    assert abs(one_d - two_d) < 1e-10


def test_matrix_monte_carlo_agrees_with_quadrature():
    model = PointerModel(1.0, 2.0)
    dens = ParamDensity((Uniform(0, 2), Gaussian(0.5, 1.0), Fixed(0.3)))
    quad = decoherence_matrix(model, dens, 0.7)
    mc = decoherence_matrix(model, dens, 0.7, "monte_carlo", samples=40_000, seed=1)
    assert np.max(np.abs(quad - mc)) < 0.02


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["u", "g", "f"]), st.floats(-5, 5), st.floats(0.1, 10)),
                min_size=2, max_size=4),
       st.floats(0.1, 2), st.floats(0, 30))
def test_matrix_hermitian_unit_diagonal(specs, tau, k0):
    margs = []
    for kind, a, b in specs:
        margs.append({"u": Uniform(a, a + b), "g": Gaussian(a, b), "f": Fixed(a)}[kind])
    m = decoherence_matrix(PointerModel(1.0, k0), ParamDensity(tuple(margs)), tau)
    np.testing.assert_allclose(m, m.conj().T, atol=1e-14)
    np.testing.assert_allclose(np.diag(m), 1.0)
    assert np.max(np.abs(m)) <= 1 + 1e-12


def test_gaussian_spread_monotone():
    model = PointerModel(1.0, 20.0)
    spreads = np.geomspace(0.01, 10, 12)
    offs = [max_off_diagonal(decoherence_matrix(model, ParamDensity((Gaussian(0, s), Gaussian(0, s))), 0.5))
            for s in spreads]
    # non-increasing down to the round-off floor of the quadrature
    assert all(a >= b - 1e-15 for a, b in zip(offs, offs[1:]))
    assert offs[0] > 10 * offs[-1]


def test_uniform_spread_monotone_without_carrier():
    model = PointerModel(1.0, 0.0)
    spreads = np.geomspace(0.1, 50, 12)
    offs = [max_off_diagonal(decoherence_matrix(model, ParamDensity((Uniform(0, s), Uniform(0, s))), 1.0))
            for s in spreads]
    assert all(a >= b for a, b in zip(offs, offs[1:]))


def test_narrowing_spread_raises_off_diagonal():
    model = PointerModel(1.0, 20.0)
    wide = ParamDensity((Gaussian(0, 5.0), Gaussian(0, 5.0)))
    narrow = ParamDensity((Gaussian(0, 0.5), Gaussian(0, 0.5)))
    assert max_off_diagonal(decoherence_matrix(model, narrow, 0.2)) > max_off_diagonal(
        decoherence_matrix(model, wide, 0.2))


def test_phase_matrix_tied_parameters_stay_coherent():
    tau = 0.3
    dens = ParamDensity((Uniform(0, 100), Tied(0, 2.0)))
    m = phase_coherence_matrix(dens, tau)
    assert abs(m[0, 1] - np.exp(-1j * tau * (0 - 2.0))) < 1e-15


def test_phase_matrix_full_period_vanishes():
    tau = 0.01
    m = phase_coherence_matrix(ParamDensity((Uniform(0, 2 * np.pi / tau), Fixed(0.0))), tau)
    assert abs(m[0, 1]) < 1e-10


# averaged densities

C = (0.6, 0.8)


def test_single_outcome_keeps_interference():
    a, b = field(-1.0, 1.0), field(1.0, -1.0)
    rho = averaged_density([[C[0], C[1]]], [[a, b]], np.ones((1, 1)))
    coherent = np.abs(C[0] * a.amplitudes[:, 0] + C[1] * b.amplitudes[:, 0]) ** 2
    np.testing.assert_allclose(rho, coherent, atol=1e-15)


def test_ideal_decoherence_drops_cross_terms():
    a, b = field(-1.0, 1.0), field(1.0, -1.0)
    rho = averaged_density([[C[0]], [C[1]]], [[a], [b]], np.eye(2))
    np.testing.assert_allclose(rho, C[0] ** 2 * a.density() + C[1] ** 2 * b.density(), atol=1e-15)


def test_all_ones_matrix_gives_coherent_sum():
    a, b = field(-1.0, 1.0), field(1.0, -1.0)
    rho = averaged_density([[C[0]], [C[1]]], [[a], [b]], np.ones((2, 2)))
    pa, pb = a.amplitudes[:, 0], b.amplitudes[:, 0]
    expected = C[0] ** 2 * abs(pa) ** 2 + C[1] ** 2 * abs(pb) ** 2 + 2 * C[0] * C[1] * np.real(pa * np.conj(pb))
    np.testing.assert_allclose(rho, expected, atol=1e-15)


def test_averaged_density_integrates_to_one():
    a, b = field(-12.0), field(12.0)
    model = PointerModel(1.0, 20.0)
    m = decoherence_matrix(model, ParamDensity((Uniform(0, 30), Uniform(0, 30))), 1.0)
    rho = averaged_density([[C[0]], [C[1]]], [[a], [b]], m)
    assert abs(np.sum(rho) * GRID.spacing[0] - 1) < 1e-6


def test_unnormalised_coefficients_rejected():
    a = field(0.0)
    with pytest.raises(ValueError, match="normalised"):
        averaged_density([[0.9]], [[a]], np.ones((1, 1)))


def test_single_run_density_y_integrated_matches_matrix():
    a, b = field(-1.0, 1.0), field(1.0, -1.0)
    model = PointerModel(1.0, 3.0)
    etas, tau = np.array([0.4, -0.2]), 0.8
    rho = single_run_density([[C[0]], [C[1]]], [[a], [b]], model, etas, tau)
    m = np.array([[1, pointer_overlap(model, etas[0], etas[1], tau)],
                  [pointer_overlap(model, etas[1], etas[0], tau), 1]])
    np.testing.assert_allclose(rho, averaged_density([[C[0]], [C[1]]], [[a], [b]], m), atol=1e-15)


def test_branch_coherence_matrix():
    w = branch_coherence_matrix(C, np.eye(2))
    np.testing.assert_allclose(w, np.diag([0.36, 0.64]))


# absolute standard and serialisation

def test_absolute_standard_neutral_is_orthogonal():
    model = PointerModel(1.0, 20.0)
    std = AbsoluteStandard.build(model, [0.6, 0.8], [3.0, 10.0])
    assert std.check() and std.neutral < 3.0
    y = np.linspace(-40, 30, 20001)
    overlap = np.sum(model.profile(y - std.neutral) * np.conj(model.profile(y - 3.0))) * (y[1] - y[0])
    assert abs(overlap) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["u", "g", "f"]), st.floats(-5, 5), st.floats(0.1, 10)),
                min_size=1, max_size=3))
def test_density_dict_round_trip(specs):
    margs = [{"u": Uniform(a, a + b), "g": Gaussian(a, b), "f": Fixed(a)}[k] for k, a, b in specs]
    margs.append(Tied(0, 1.5))
    dens = ParamDensity(tuple(margs), Uniform(-0.5, 0.5))
    assert ParamDensity.from_dict(dens.to_dict()) == dens
    for m in margs:
        assert marginal_from_dict(marginal_to_dict(m)) == m


def test_invalid_marginals():
    with pytest.raises(ValueError):
        Uniform(1.0, 1.0)
    with pytest.raises(ValueError):
        ParamDensity((Tied(0, 1.0),))
