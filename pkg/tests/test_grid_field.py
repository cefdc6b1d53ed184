import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from stochbohm.grid_field import (CoincidenceError, GridError, GridSpec, PacketParams, Region, WaveField,
                                  apply_piecewise_impulse, apply_sg_deflection, coincidence_report,
                                  commutator_action_check, deflection_multipliers, extended_impulsive_evolve,
                                  free_propagate, impulse_branches, kick_check, momentum_expectation,
                                  overlap_integral, split_step_evolve, split_step_potential,
                                  synthesize_packets, write_snapshot)

GRID = GridSpec((64.0,), (4096,))
SMALL = GridSpec((64.0,), (1024,))


def packet(grid=GRID, center=0.0, p=0.0, width=1.0, weight=1.0, phase=0.0, spin=0, spin_dim=1, normalize=True):
    return synthesize_packets(grid, spin_dim, [(PacketParams(weight, phase, (p,), (center,), width), spin)],
                              normalize=normalize)


def moments(field):
    x = field.grid.axis(0)
    rho = field.density()
    m0 = np.sum(rho)
    mean = np.sum(x * rho) / m0
    return mean, np.sqrt(np.sum((x - mean) ** 2 * rho) / m0)


# grid and regions

def test_grid_centred_coordinates():
    x = SMALL.axis(0)
    assert x[0] == -32.0 and x[512] == 0.0 and np.isclose(x[1] - x[0], 1 / 16)


@pytest.mark.parametrize("points", [1000, 1])
def test_grid_requires_power_of_two(points):
    with pytest.raises(GridError):
        GridSpec((10.0,), (points,))


def test_region_rejects_overlap_with_both_names():
    with pytest.raises(GridError, match="'a'.*'b'"):
        Region((((0.0, 2.0),), ((1.0, 3.0),)), ("a", "b"))


def test_region_misaligned_edge():
    reg = Region((((0.01, 2.0),),))
    with pytest.raises(GridError, match="not on a grid node"):
        reg.masks(SMALL)
    f = packet(SMALL)
    with pytest.raises(GridError):
        apply_piecewise_impulse(f, reg, [1.0], 1.0)


def test_region_locate_half_open():
    reg = Region((((-4.0, -1.0),), ((1.0, 4.0),)), ("1", "2"))
    idx = reg.locate(np.array([-2.5, 2.5, 0.0, 1.0, 4.0]))
    assert [reg.label_of(i) for i in idx] == ["1", "2", "ex", "2", "ex"]


# synthesize_packets

def test_single_packet_real_positive_normalised():
    f = packet()
    psi = f.amplitudes[:, 0]
    assert abs(f.norm() - 1) < 1e-12
    assert np.max(np.abs(psi.imag)) == 0.0 and np.min(psi.real) >= 0.0


def test_disjoint_packets_densities_add():
    c = 1 / np.sqrt(2)
    both = synthesize_packets(GRID, 1, [(PacketParams(c, 0, (0.0,), (-8.0,), 1.0), 0),
                                        (PacketParams(c, 0, (0.0,), (8.0,), 1.0), 0)])
    a, b = packet(center=-8.0, weight=c, normalize=False), packet(center=8.0, weight=c, normalize=False)
    cross = 2 * np.real(a.amplitudes * np.conj(b.amplitudes))
    assert np.max(np.abs(cross)) < 1e-10
    np.testing.assert_allclose(both.density(), a.density() + b.density(), atol=1e-10)


def test_phase_pi_over_two_is_factor_i():
    np.testing.assert_allclose(packet(phase=np.pi / 2, p=1.3).amplitudes, 1j * packet(p=1.3).amplitudes,
                               atol=1e-15)


def test_packet_touching_boundary():
    with pytest.raises(GridError):
        packet(SMALL, center=29.0, width=1.0)


def test_zero_norm_rejected():
    with pytest.raises(ValueError):
        packet(weight=0.0)


# free_propagate

def test_free_zero_duration_identity():
    f = packet(p=1.0)
    assert free_propagate(f, 0.0) is f


def test_free_gaussian_width_and_centre():
    f = packet(SMALL, center=-5.0, p=1.5)
    g = free_propagate(f, 2.0)
    mean, sd = moments(g)
    assert abs(sd - np.sqrt(1 + (2.0 / 2) ** 2)) < 1e-6
    assert abs(mean - (-5.0 + 3.0)) < 1e-6
    assert g.time == 2.0


def test_free_momentum_density_unchanged():
    f = packet(p=2.0)
    g = free_propagate(f, 3.0)
    np.testing.assert_allclose(np.abs(np.fft.fft(g.amplitudes[:, 0])), np.abs(np.fft.fft(f.amplitudes[:, 0])),
                               atol=1e-10)


def test_free_negative_duration():
    with pytest.raises(ValueError):
        free_propagate(packet(), -1.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-10, 10), st.floats(-2, 2), st.floats(0.6, 2.0), st.floats(0.1, 4.0))
def test_free_matches_closed_form_density(x0, p, sigma, t):
    f = packet(GRID, center=x0, p=p, width=sigma)
    g = free_propagate(f, t)
    x = GRID.axis(0)
    st_ = sigma * np.sqrt(1 + (t / (2 * sigma**2)) ** 2)
    exact = np.exp(-((x - x0 - p * t) ** 2) / (2 * st_**2)) / np.sqrt(2 * np.pi * st_**2)
    assert np.max(np.abs(g.density() - exact)) < 1e-6
    assert abs(g.norm() - 1) < 1e-10


# apply_piecewise_impulse

REG2 = Region((((-20.0, -2.0),), ((2.0, 20.0),)), ("1", "2"))


def two_packets():
    return synthesize_packets(GRID, 1, [(PacketParams(0.6, 0, (0.5,), (-10.0,), 1.0), 0),
                                        (PacketParams(0.8, 0, (-0.5,), (10.0,), 1.0), 0)])


def test_impulse_zero_eta_identity():
    f = two_packets()
    np.testing.assert_array_equal(apply_piecewise_impulse(f, REG2, [0.0, 0.0], 1.0).amplitudes, f.amplitudes)


def test_impulse_pi_negates_interior_only():
    f = packet(p=0.7)
    reg = Region((((-10.0, 0.0),),))
    out = apply_piecewise_impulse(f, reg, [np.pi], 1.0)
    inside = reg.masks(GRID)[0]
    np.testing.assert_allclose(out.amplitudes[inside], -f.amplitudes[inside], atol=1e-15)
    np.testing.assert_array_equal(out.amplitudes[~inside], f.amplitudes[~inside])
    assert np.max(np.abs(out.density() - f.density())) < 1e-15


def test_impulse_relative_phase_between_boxes():
    f = two_packets()
    eta, tau = (1.7, -0.4), 0.9
    out = apply_piecewise_impulse(f, REG2, eta, tau)
    x = GRID.axis(0)
    i1, i2 = np.argmin(np.abs(x + 10)), np.argmin(np.abs(x - 10))
    r1 = out.amplitudes[i1, 0] / f.amplitudes[i1, 0]
    r2 = out.amplitudes[i2, 0] / f.amplitudes[i2, 0]
    rel = np.angle(r2 / r1)
    assert abs(np.angle(np.exp(1j * (rel + (eta[1] - eta[0]) * tau)))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2), st.floats(1e-3, 10))
def test_impulse_density_and_norm_invariant(etas, tau):
    f = two_packets()
    out = apply_piecewise_impulse(f, REG2, etas, tau)
    assert np.max(np.abs(out.density() - f.density())) < 1e-15
    assert abs(out.norm() - f.norm()) < 1e-12


# apply_sg_deflection

def spinor(grid=GRID, c=(1 / np.sqrt(2), 1 / np.sqrt(2))):
    return synthesize_packets(grid, len(c), [(PacketParams(cm, 0, (0.0,), (0.0,), 1.0), m) for m, cm in enumerate(c)])


def test_deflection_identity():
    f = spinor()
    np.testing.assert_array_equal(apply_sg_deflection(f, 0.0, 0.0).amplitudes, f.amplitudes)


def test_deflection_momentum_split():
    out = apply_sg_deflection(spinor(), 0.0, 2.0)
    plus, minus = out.components()
    assert abs(momentum_expectation(plus)[0] - 2.0) < 1e-8
    assert abs(momentum_expectation(minus)[0] + 2.0) < 1e-8


def test_deflection_alpha_pi_negates_plus():
    f = spinor()
    out = apply_sg_deflection(f, np.pi, 0.0)
    np.testing.assert_allclose(out.amplitudes[:, 0], -f.amplitudes[:, 0], atol=1e-15)
    np.testing.assert_allclose(out.amplitudes[:, 1], -f.amplitudes[:, 1], atol=1e-15)
    np.testing.assert_allclose(out.density(), f.density(), atol=1e-15)


def test_deflection_multipliers():
    np.testing.assert_array_equal(deflection_multipliers(2), [1, -1])
    np.testing.assert_array_equal(deflection_multipliers(3), [1, 0, -1])


def test_deflection_spin_mismatch():
    with pytest.raises(GridError):
        apply_sg_deflection(spinor(), [0.1, 0.2, 0.3], [1.0, 0.0, -1.0])
    with pytest.raises(GridError):
        apply_sg_deflection(packet(), 0.1, 1.0)


# split-step

def test_split_zero_potential_is_free():
    f = packet(p=1.0)
    out = split_step_potential(f, np.zeros(GRID.shape), 0.01, 100)
    np.testing.assert_allclose(out.amplitudes, free_propagate(f, 1.0).amplitudes, atol=1e-10)


def test_split_constant_potential_global_phase():
    f = packet(p=1.0)
    eta = 3.0
    out = split_step_potential(f, np.full(GRID.shape, eta), 0.01, 100)
    np.testing.assert_allclose(out.amplitudes, np.exp(-1j * eta) * free_propagate(f, 1.0).amplitudes, atol=1e-10)


def test_split_dt_squared_convergence():
    f = packet(SMALL, center=-3.0, p=1.0)
    reg = Region((((-2.0, 4.0),),))
    v = 0.2 * np.cos(SMALL.axis(0) / 3)
    errs = []
    ref = split_step_potential(f, v, 1 / 640, 640)
    for n in (20, 40, 80):
        out = split_step_potential(f, v, 1.0 / n, n)
        errs.append(np.sqrt(np.sum(np.abs(out.amplitudes - ref.amplitudes) ** 2) * SMALL.cell_volume))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2) < 0.15)
    out = split_step_evolve(f, reg, [0.5], 0.01, 100)
    assert abs(out.norm() - 1) < 1e-8


def test_split_accuracy_guard():
    with pytest.raises(ValueError, match="accuracy guard"):
        split_step_evolve(packet(), REG2, [20.0, 0.0], 0.01, 10)


# coincidence and extended impulsive evolution

def test_coincident_packet_passes():
    f = packet(center=10.0)
    rep = coincidence_report(f, Region((((4.0, 16.0),),)))
    b = rep.branches[0]
    # two-sided Gaussian tail beyond 6 sigma
    assert rep.passes and b.interior_mass > 1 - erfc(6 / np.sqrt(2)) - 1e-11
    assert len(b.boundary_derivatives) == 3


def test_edge_packet_fails_with_half_mass():
    f = packet(center=2.0)
    rep = coincidence_report(f, Region((((2.0, 20.0),),)))
    assert not rep.passes
    # the node at the centre adds O(h) mass to the half-open box
    assert abs(rep.branches[0].interior_mass - 0.5) < GRID.spacing[0] * np.max(f.density())


def test_zero_field_vacuous_pass():
    z = WaveField(GRID, np.zeros(GRID.shape))
    rep = coincidence_report(z, REG2)
    assert rep.passes and rep.branches[0].mass == 0.0


def branches(centers, grid=GRID):
    return [packet(grid, center=c, weight=w, normalize=False) for c, w in zip(centers, (0.6, 0.8))]


def test_extended_equal_etas_global_phase():
    br = branches((-10.0, 10.0))
    out = extended_impulsive_evolve(br, REG2, [2.0, 2.0], 0.3)
    ref = free_propagate(br[0] + br[1], 0.3)
    np.testing.assert_allclose(out.amplitudes, np.exp(-0.6j) * ref.amplitudes, atol=1e-14)


def test_extended_refuses_straddling_packet():
    with pytest.raises(CoincidenceError):
        extended_impulsive_evolve(branches((-10.0, 2.0)), REG2, [1.0, -1.0], 0.2)


def test_impulse_branches_phases_each_branch():
    br = branches((-10.0, 10.0))
    out = impulse_branches(br, REG2, [1.0, 3.0], 0.5)
    ref = br[0].scaled(np.exp(-0.5j)) + br[1].scaled(np.exp(-1.5j))
    np.testing.assert_allclose(out.amplitudes, ref.amplitudes, atol=1e-15)


def test_extended_matches_split_step():
    g = GridSpec((128.0,), (2048,))
    reg = Region((((-30.0, -2.0),), ((2.0, 30.0),)))
    br = branches((-10.0, 10.0), g)
    split = split_step_evolve(br[0] + br[1], reg, (3.0, -2.0), 0.2 / 200, 200)
    approx = extended_impulsive_evolve(br, reg, (3.0, -2.0), 0.2)
    assert np.sqrt(np.sum(np.abs(split.amplitudes - approx.amplitudes) ** 2) * g.cell_volume) < 1e-3


# momentum, kick, overlap, commutator

def test_momentum_of_plane_weighted_packet():
    assert abs(momentum_expectation(packet(p=3.0))[0] - 3.0) < 1e-8


def test_linear_potential_kick_exact():
    f = packet(center=1.0, p=0.5)
    g_force, tau = 0.8, 0.05
    rep = kick_check(f, g_force * GRID.axis(0), tau, grad_v=np.full(GRID.shape, g_force))
    assert abs(rep.measured[0] + tau * g_force) < 1e-8


def test_gaussian_bump_kick():
    f = packet(center=1.5, p=0.2)
    x = GRID.axis(0)
    v = 2 * np.exp(-(x**2) / 2)
    rep = kick_check(f, v, 0.05, grad_v=-x * v)
    assert rep.ok(1e-6)


def test_overlap_identical_and_distant():
    f = packet()
    inner, _ = overlap_integral(f, f)
    assert abs(inner - 1) < 1e-12
    _, dens = overlap_integral(packet(center=-10.0), packet(center=10.0))
    assert dens < 1e-20


def test_overlap_parity_orthogonal():
    x = GRID.axis(0)
    even = WaveField(GRID, np.exp(-(x**2) / 4))
    odd = WaveField(GRID, x * np.exp(-(x**2) / 4))
    assert abs(overlap_integral(even, odd)[0]) < 1e-12


def test_overlap_grid_mismatch():
    with pytest.raises(GridError):
        overlap_integral(packet(), packet(SMALL))


def test_commutator_constant_potential_zero():
    rep = commutator_action_check(packet(p=1.0), np.full(GRID.shape, 2.5))
    assert rep.action_max < 1e-10 and rep.passes


def test_commutator_quadratic_potential():
    f = packet(SMALL, center=0.5, p=0.3)
    x = SMALL.axis(0)
    rep = commutator_action_check(f, x**2, grad_v=2 * x, lap_v=np.full(SMALL.shape, 2.0))
    assert rep.deviation < 1e-6


def test_commutator_box_with_coincident_packet():
    f = packet(center=10.0)
    rep = commutator_action_check(f, regions=Region((((-4.0, 24.0),),)), etas=[5.0])
    assert rep.passes


def test_commutator_box_action_shrinks_with_margin():
    f = packet(center=10.0)
    actions = [commutator_action_check(f, regions=Region((((10.0 - m, 10.0 + m),),)), etas=[5.0]).action_max
               for m in (4.0, 6.0, 8.0, 10.0)]
    assert all(a > b for a, b in zip(actions, actions[1:]))


def test_snapshot_files(tmp_path):
    f = spinor(SMALL, (0.6, 0.8))
    write_snapshot(f, tmp_path / "f.csv", tmp_path / "f.json")
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["x", "spin", "re", "im", "density"]
    assert len(rows) == 1 + 1024 * 2
    meta = json.loads((tmp_path / "f.json").read_text())
    assert meta["points"] == [1024] and meta["spin_dim"] == 2


def test_two_dimensional_packet_norm_and_impulse():
    g = GridSpec((32.0, 32.0), (128, 128))
    f = synthesize_packets(g, 1, [(PacketParams(1.0, 0, (0.5, -0.5), (4.0, 0.0), 1.0), 0)])
    assert abs(f.norm() - 1) < 1e-12
    reg = Region((((-4.0, 12.0), (-8.0, 8.0)),))
    rep = coincidence_report(f, reg)
    assert rep.passes
    out = apply_piecewise_impulse(f, reg, [3.0], 0.5)
    assert np.max(np.abs(out.density() - f.density())) < 1e-15
