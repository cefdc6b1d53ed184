import csv

import numpy as np
import pytest
from scipy import stats

from stochbohm.bohmian import (EnsembleSpec, Event, FieldHistory, NodeError, Trajectory, assign_ensemble,
                               default_time_step, detector_assignment, equivariance_distance,
                               integrate_ensemble, integrate_trajectory, ks_critical,
                               sample_quantum_equilibrium, velocity_at, velocity_field,
                               write_trajectories_csv)
from stochbohm.grid_field import (GridSpec, PacketParams, Region, WaveField, apply_piecewise_impulse,
                                  free_propagate, split_step_potential, synthesize_packets)

GRID = GridSpec((64.0,), (1024,))
# p = 2 is a grid wavenumber when L = 32 pi
RING = GridSpec((32 * np.pi,), (1024,))


def gaussians(specs, grid=GRID):
    """``specs``: (weight, momentum, centre, width) per packet, all in spin 0."""
    return synthesize_packets(grid, 1, [(PacketParams(c, 0, (p,), (x0,), w), 0) for c, p, x0, w in specs])


def analytic_psi(x, specs):
    """Unnormalised superposition and its derivative at arbitrary points."""
    psi, dpsi = 0j, 0j
    for c, p, x0, w in specs:
        g = c * w**-0.5 * np.exp(1j * p * x - (x - x0) ** 2 / (4 * w**2))
        psi = psi + g
        dpsi = dpsi + g * (1j * p - (x - x0) / (2 * w**2))
    return psi, dpsi


# velocity

def test_plane_wave_velocity():
    x = RING.axis(0)
    f = WaveField(RING, np.exp(2j * x))
    np.testing.assert_allclose(velocity_at(f, [-3.3, 0.123, 40.0]), 2.0, atol=1e-10)


def test_real_gaussian_at_rest():
    f = gaussians([(1, 0, 0.0, 1.0)])
    assert np.max(np.abs(velocity_at(f, np.linspace(-3, 3, 31)))) < 1e-10


def test_two_packet_velocity_matches_phase_difference():
    specs = [(0.6, 1.0, -2.0, 1.5), (0.8, -0.7, 2.5, 1.2)]
    f = gaussians(specs)
    xs = np.linspace(-4, 4, 57) + 0.0123
    psi, _ = analytic_psi(xs, specs)
    keep = np.abs(psi) ** 2 > 1e-3 * np.max(np.abs(psi) ** 2)
    xs = xs[keep]
    d = 1e-5
    phase_fd = np.angle(analytic_psi(xs + d, specs)[0] / analytic_psi(xs - d, specs)[0]) / (2 * d)
    v = velocity_at(f, xs)[:, 0]
    np.testing.assert_allclose(v, phase_fd, atol=1e-5)
    psi, dpsi = analytic_psi(xs, specs)
    np.testing.assert_allclose(v, np.imag(dpsi / psi), atol=1e-8)


def test_velocity_near_node_raises():
    x = GRID.axis(0)
    f = WaveField(GRID, x * np.exp(-(x**2) / 4))
    with pytest.raises(NodeError):
        velocity_at(f, 0.0)


def test_spin_summed_velocity_is_density_weighted():
    x = GRID.axis(0)
    a, b = np.exp(1j * 0.5 * x - x**2 / 4), 0.5 * np.exp(-1j * 1.0 * x - x**2 / 4)
    f = WaveField(GRID, np.stack([a, b], axis=-1))
    expected = (0.5 * 1.0 - 1.0 * 0.25) / 1.25
    np.testing.assert_allclose(velocity_at(f, [-1.0, 0.5]), expected, atol=1e-10)


def test_velocity_unchanged_inside_box_after_impulse():
    # spectral gradients are global, so the edge amplitude must be below round-off
    f = gaussians([(1, 0.7, 1.0, 1.0)])
    reg = Region((((-14.0, 16.0),),))
    g = apply_piecewise_impulse(f, reg, [17.0], 0.3)
    x = GRID.axis(0)
    inner = (x > -6) & (x < 8)
    assert np.max(np.abs(velocity_field(g)[inner] - velocity_field(f)[inner])) < 1e-10


# trajectories

def test_plane_wave_displacement():
    f = WaveField(RING, np.exp(2j * RING.axis(0)))
    tr = integrate_trajectory(FieldHistory(f), 0.3, 0.05, 1.0)
    assert abs(tr.positions[-1, 0] - 0.3 - 2.0) < 1e-8


def test_gaussian_self_similar_flow():
    sigma = 1.0
    f = gaussians([(1, 0, 0.0, sigma)])
    tr = integrate_trajectory(FieldHistory(f), sigma, 0.01, 3.0)
    for t in (1.0, 2.0, 3.0):
        expected = sigma * np.sqrt(1 + (t / (2 * sigma**2)) ** 2)
        assert abs(tr.position_at(t)[0] - expected) < 1e-4


def test_position_continuous_across_event():
    f = gaussians([(1, 0.5, 0.0, 1.0)])
    reg = Region((((-10.0, 10.0),),))
    ev = Event(1.0, transform=lambda fld: apply_piecewise_impulse(fld, reg, [50.0], 0.1))
    tr = integrate_trajectory(FieldHistory(f, [ev]), 0.4, 0.01, 2.0)
    i = int(np.argmin(np.abs(tr.times - 1.0)))
    assert abs(tr.times[i] - 1.0) < 1e-12
    steps = np.abs(np.diff(tr.positions[:, 0]))
    assert np.max(steps) < GRID.spacing[0]


def test_node_trap_is_flagged():
    x = GRID.axis(0)
    f = WaveField(GRID, x * np.exp(-(x**2) / 4)).normalized()
    ens = integrate_ensemble(FieldHistory(f), [[0.0], [1.5]], 0.01, 0.2)
    assert ens.flagged.tolist() == [True, False]
    assert np.isnan(ens.at(0.2)[0, 0]) and np.isfinite(ens.at(0.2)[1, 0])


def test_trajectory_position_at_interpolates():
    tr = Trajectory([0.0, 1.0], [0.0, 2.0])
    assert tr.position_at(0.25)[0] == 0.5
    with pytest.raises(ValueError):
        tr.position_at(2.0)


# field history

def test_history_right_continuous_at_event():
    f = gaussians([(1, 0.5, 0.0, 1.0)])
    reg = Region((((-10.0, 10.0),),))
    kick = lambda fld: apply_piecewise_impulse(fld, reg, [3.0], 0.5)  # noqa: E731
    hist = FieldHistory(f, [Event(1.0, transform=kick)])
    np.testing.assert_allclose(hist.field_at(1.0).amplitudes, kick(free_propagate(f, 1.0)).amplitudes, atol=1e-13)
    np.testing.assert_allclose(hist.field_at(0.999).amplitudes, free_propagate(f, 0.999).amplitudes, atol=1e-13)


def test_history_potential_stage_matches_split_step():
    f = gaussians([(1, 1.0, -3.0, 1.0)])
    v = 0.3 * np.exp(-GRID.axis(0) ** 2)
    hist = FieldHistory(f, [Event(0.5, potential=v, max_dt=0.01), Event(1.5, clear_potential=True)])
    ref = split_step_potential(free_propagate(f, 0.5), v, 0.01, 100)
    np.testing.assert_allclose(hist.field_at(1.5).amplitudes, ref.amplitudes, atol=1e-12)
    np.testing.assert_allclose(hist.field_at(2.0).amplitudes, free_propagate(ref, 0.5).amplitudes, atol=1e-12)


# equilibrium sampling and equivariance

def test_uniform_density_ks():
    x = GRID.axis(0)
    f = WaveField(GRID, ((x >= -10) & (x < 10)).astype(float)).normalized()
    n = 10_000
    pos = sample_quantum_equilibrium(f, EnsembleSpec(n, 5))[:, 0]
    h = GRID.spacing[0]
    d = stats.kstest(pos, stats.uniform(loc=-10 - h / 2, scale=20).cdf).statistic
    assert d < 1.63 / np.sqrt(n)


def test_two_packet_occupancy_binomial():
    n = 10_000
    f = gaussians([(1, 0, -8.0, 1.0), (1, 0, 8.0, 1.0)])
    pos = sample_quantum_equilibrium(f, EnsembleSpec(n, 2))
    frac = np.mean(pos[:, 0] < 0)
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / n)


def test_sampling_deterministic():
    f = gaussians([(1, 0, 0.0, 1.0)])
    a = sample_quantum_equilibrium(f, EnsembleSpec(500, 9))
    b = sample_quantum_equilibrium(f, EnsembleSpec(500, 9))
    c = sample_quantum_equilibrium(f, EnsembleSpec(500, 10))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_two_dimensional_sampling_marginal():
    g = GridSpec((32.0, 32.0), (128, 128))
    f = synthesize_packets(g, 1, [(PacketParams(1, 0, (0.0, 0.0), (2.0, -1.0), 1.0), 0)])
    pos = sample_quantum_equilibrium(f, EnsembleSpec(5000, 1))
    assert pos.shape == (5000, 2)
    for axis in (0, 1):
        assert equivariance_distance(f, pos, axis) < ks_critical(5000)


def test_null_equivariance_distance():
    f = free_propagate(gaussians([(0.6, 0, -5.0, 1.0), (0.8, 0, 5.0, 1.0)]), 1.5)
    n = 10_000
    assert equivariance_distance(f, sample_quantum_equilibrium(f, EnsembleSpec(n, 3))) < ks_critical(n)


def test_biased_ensemble_detected():
    f = gaussians([(1, 0, 0.0, 1.0)])
    pos = np.abs(sample_quantum_equilibrium(f, EnsembleSpec(2000, 4)))
    assert equivariance_distance(f, pos) > 0.4


def test_ks_critical_value():
    assert abs(ks_critical(10_000) - 1.6276 / 100) < 1e-5


def test_free_transport_equivariance_and_branch_capture():
    n = 10_000
    f = gaussians([(0.6, 0.0, -8.0, 1.0), (0.8, 0.0, 8.0, 1.0)])
    x0 = sample_quantum_equilibrium(f, EnsembleSpec(n, 7))
    hist = FieldHistory(f)
    ens = integrate_ensemble(hist, x0, default_time_step(f), 3.0, record_times=[1.5])
    assert ens.flagged_count == 0
    for t in (1.5, 3.0):
        assert equivariance_distance(hist.field_at(t), ens.at(t)) < ks_critical(n)
    crossed = np.mean(np.sign(ens.at(3.0)[:, 0]) != np.sign(x0[:, 0]))
    assert crossed < 1e-3
    frac1 = np.mean(ens.at(3.0)[:, 0] < 0)
    assert abs(frac1 - 0.36) < 3 * np.sqrt(0.36 * 0.64 / n)


def test_ensemble_thread_count_does_not_change_results():
    f = gaussians([(1, 0.5, 0.0, 1.0)])
    x0 = sample_quantum_equilibrium(f, EnsembleSpec(300, 1))
    hist = FieldHistory(f)
    a = integrate_ensemble(hist, x0, 0.02, 1.0, chunk=64, threads=1)
    b = integrate_ensemble(hist, x0, 0.02, 1.0, chunk=64, threads=3)
    np.testing.assert_array_equal(a.positions, b.positions)


# detectors and output

REG = Region((((-20.0, -2.0),), ((2.0, 20.0),)), ("1", "2"))


def test_detector_assignment_labels():
    tr = Trajectory([0.0, 1.0], [[0.0], [11.0]])
    assert detector_assignment(tr, REG, 1.0) == "2"
    assert detector_assignment(tr, REG, 0.0) == "ex"


def test_assign_ensemble_flagged_is_none():
    assert assign_ensemble(np.array([[-5.0], [np.nan], [30.0]]), REG) == ["1", None, "ex"]


def test_write_trajectories_csv(tmp_path):
    trs = [Trajectory([0.0, 0.5], [[1.0], [1.5]], outcome="2"), Trajectory([0.0, 0.5], [[0.0], [0.0]], flagged=True)]
    write_trajectories_csv(tmp_path / "t.csv", trs, ids=[4, 9])
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["trajectory_id", "t", "x", "outcome"]
    assert rows[1] == ["4", "0", "1", "2"] and rows[-1][-1] == "flagged"
