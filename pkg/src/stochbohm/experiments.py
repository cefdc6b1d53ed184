"""End-to-end scenarios: Stern-Gerlach, two-slit, EPR singlet, point localisation.

Each ``run_*`` takes a resolved :class:`~stochbohm.config.ExperimentConfig`
and returns an :class:`ExperimentResult`.  All randomness comes from the
config seed through named substreams ("sampling" for particle positions,
"stochastic" for apparatus parameters), so reruns are bit-identical.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import operator_algebra as oa
from .bohmian import (Event, FieldHistory, assign_ensemble, default_time_step, equivariance_distance,
                      integrate_ensemble, ks_critical, sample_quantum_equilibrium)
from .config import ExperimentConfig, dump_config
from .grid_field import (CoincidenceError, CoincidenceReport, WaveField, apply_piecewise_impulse, apply_sg_deflection,
                         coincidence_report, extended_impulsive_evolve, free_propagate, impulse_branches,
                         momentum_expectation, overlap_integral, potential_from_regions, synthesize_packets)
from .outputs import atomic_write_text, csv_text, json_text
from .rng import substream
from .stochastic import (ParamDensity, averaged_density, decoherence_matrix, marginal_from_dict,
                         max_off_diagonal, phase_coherence_matrix)

OVERLAP_TOL = 1e-6


class StageError(RuntimeError):
    """A module error annotated with the scenario stage it came from."""

    def __init__(self, stage: str, exc: Exception):
        self.stage = stage
        self.original = exc
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")


@dataclass
class ExperimentResult:
    scenario: str
    seed: int
    counts: dict = dc_field(default_factory=dict)
    flagged: int = 0
    frequencies: dict = dc_field(default_factory=dict)
    expected: dict = dc_field(default_factory=dict)
    envelopes: dict = dc_field(default_factory=dict)
    marginals: dict = dc_field(default_factory=dict)
    visibility: dict = dc_field(default_factory=dict)
    coincidence: list = dc_field(default_factory=list)
    equivariance: dict = dc_field(default_factory=dict)
    decoherence: dict = dc_field(default_factory=dict)
    metrics: dict = dc_field(default_factory=dict)
    checks: dict = dc_field(default_factory=dict)
    tables: dict = dc_field(default_factory=dict)  # name -> (header, rows); written as CSV

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "tables"}
        d["passed"] = self.passed
        d["side_files"] = sorted(f"{name}.csv" for name in self.tables)
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def _matrix(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist(), "max_off_diagonal": max_off_diagonal(m)}


def _stage(name: str):
    """Decorator-free context helper: wrap module errors with the stage name."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def _binomial(counts: dict, expected: dict, n: int):
    freqs, env, ok = {}, {}, True
    for label, p in expected.items():
        f = counts.get(label, 0) / n if n else float("nan")
        e = 3 * np.sqrt(max(p * (1 - p), 0.0) / n) if n else float("nan")
        freqs[label], env[label] = f, e
        ok = ok and abs(f - p) <= e + 1e-12
    return freqs, env, ok


def _trajectory_rows(times, positions, labels, limit):
    rows = []
    for i in range(min(limit, positions.shape[1])):
        outcome = labels[i] if labels[i] is not None else "flagged"
        for t, x in zip(times, positions[:, i, :]):
            rows.append([i, t, *x, outcome])
    return rows


# ----------------------------------------------------------------- Stern-Gerlach

@dataclass
class SternGerlachSetup:
    initial: WaveField
    history: FieldHistory
    at_loc: WaveField
    report: CoincidenceReport
    etas: np.ndarray
    branch_overlap: float


def stern_gerlach_history(cfg: ExperimentConfig) -> SternGerlachSetup:
    """Field history with the deflection and localisation events of one run.

    Raises when the branches are not coincident with the detectors at
    ``t_loc`` or their densities overlap there.
    """
    t = cfg.timings
    t_def, t_loc, tau = t["t_def"], t["t_loc"], t["tau"]
    dfl = cfg.section("deflection")
    regions = cfg.regions
    with _stage("synthesis"):
        f0 = synthesize_packets(cfg.grid, cfg.spin_dim, cfg.packets)
    deflect = lambda f: apply_sg_deflection(f, dfl["alpha"], dfl["delta_p"], dfl["axis"])  # noqa: E731
    pre = FieldHistory(f0, [Event(t_def, transform=deflect, name="deflection")])
    with _stage("coincidence"):
        f_loc = pre.field_at(t_loc)
        rep = coincidence_report(f_loc, regions)
        if not rep.passes:
            raise CoincidenceError(f"branches are not coincident with the detectors at t_loc={t_loc}")
        comps = f_loc.components()
        worst = 0.0
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                worst = max(worst, overlap_integral(comps[i], comps[j])[1])
        if worst > OVERLAP_TOL:
            raise CoincidenceError(f"branch densities overlap at the detectors ({worst:.3g} > {OVERLAP_TOL:g})")
    etas = cfg.density.sample(1, substream(cfg.seed, "stochastic")).etas[0]
    localise = lambda f: impulse_branches(f, regions, etas, tau, report=rep)  # noqa: E731
    history = FieldHistory(f0, [Event(t_def, transform=deflect, name="deflection"),
                                Event(t_loc, transform=localise, name="localisation")])
    return SternGerlachSetup(f0, history, f_loc, rep, etas, worst)


def run_stern_gerlach(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Deflect, propagate to the detectors, localise, and count trajectories."""
    res = ExperimentResult("stern_gerlach", cfg.seed)
    t = cfg.timings
    t_def, t_loc, tau = t["t_def"], t["t_loc"], t["tau"]
    regions = cfg.regions
    density = cfg.density
    setup = stern_gerlach_history(cfg)
    f0, history, f_loc, rep, etas = setup.initial, setup.history, setup.at_loc, setup.report, setup.etas
    res.coincidence = [rep.as_dict()]
    res.metrics["branch_density_overlap"] = setup.branch_overlap
    res.metrics["etas"] = etas.tolist()
    with _stage("localisation"):
        after = history.field_at(t_loc + tau)
        direct = extended_impulsive_evolve(f_loc, regions, etas, tau, report=rep)
        res.metrics["history_vs_extended_impulsive"] = float(np.max(np.abs(after.amplitudes - direct.amplitudes)))
    with _stage("ensemble"):
        spec = cfg.ensemble
        x0 = sample_quantum_equilibrium(f0, spec)
        dt = cfg.section("ensemble").get("dt") or min(default_time_step(f0), default_time_step(history.field_at(t_def)))
        ens = integrate_ensemble(history, x0, dt, t_loc + tau, record_times=[t_loc],
                                 node_epsilon=spec.node_epsilon, threads=threads)
    pos = ens.at(t_loc)
    labels = assign_ensemble(pos, regions)
    n_ok = sum(1 for x in labels if x is not None)
    counts = {lab: 0 for lab in (*regions.labels, "ex")}
    for lab in labels:
        if lab is not None:
            counts[lab] += 1
    res.counts, res.flagged = counts, ens.flagged_count
    expected = {lab: 0.0 for lab in regions.labels}
    for br in rep.branches:
        if br.box != "ex":
            expected[br.box] += br.mass
    res.expected = expected
    res.frequencies, res.envelopes, ok = _binomial(counts, expected, n_ok)
    crit = ks_critical(max(n_ok, 1))
    d_loc = equivariance_distance(f_loc, pos)
    d_after = equivariance_distance(after, ens.at(t_loc + tau))
    res.equivariance = {"ks_t_loc": d_loc, "ks_after_localisation": d_after, "critical_1pct": crit,
                        "count": n_ok, "dt": dt}
    pointer = cfg.pointer
    res.decoherence = {"pointer": _matrix(decoherence_matrix(pointer, density, tau)),
                       "phase": _matrix(phase_coherence_matrix(density, tau, cfg.grid.hbar))}
    res.checks = {
        "coincidence": rep.passes,
        "frequencies_within_3sigma": ok,
        "equivariance_ks": max(d_loc, d_after) < crit,
        "flagged_fraction_below_1e-3": res.flagged < 1e-3 * spec.count,
        "counts_sum": sum(counts.values()) + res.flagged == spec.count,
    }
    out = cfg.section("output")
    if out.get("trajectories", 0):
        header = ["trajectory_id", "t", "x", "y"][: 2 + cfg.grid.dims] + ["outcome"]
        sub = integrate_ensemble(history, x0[: out["trajectories"]], dt, t_loc + tau, record_all=True,
                                 node_epsilon=spec.node_epsilon)
        res.tables["trajectories"] = (header, _trajectory_rows(sub.times, sub.positions, labels, out["trajectories"]))
    if out.get("densities") and cfg.grid.dims == 1:
        x = cfg.grid.axis(0)
        comps = np.abs(f_loc.amplitudes) ** 2
        res.tables["density_t_loc"] = (["x"] + [f"density_{j}" for j in range(cfg.spin_dim)],
                                       [[xi, *row] for xi, row in zip(x, comps)])
    return res


# ------------------------------------------------------------------- two-slit

def fringe_visibility(rho: np.ndarray, x: np.ndarray, center: float, half_width: float) -> float:
    """``(max - min) / (max + min)`` of ``rho`` over ``|x - center| <= half_width``."""
    win = rho[np.abs(x - center) <= half_width]
    if win.size == 0:
        raise ValueError("visibility window holds no grid points")
    hi, lo = float(np.max(win)), float(np.min(win))
    return (hi - lo) / (hi + lo) if hi + lo > 0 else 0.0


def two_slit_branches(cfg: ExperimentConfig):
    """Normalised branch fields at localisation and at the screen, with weights."""
    grid = cfg.grid
    t = cfg.timings
    coeffs, at_loc, at_screen = [], [], []
    for p, _ in cfg.packets:
        coeffs.append(complex(p.weight))
        psi = synthesize_packets(grid, 1, [(dataclasses.replace(p, weight=1.0), 0)])
        loc = free_propagate(psi, t["t_loc"])
        at_loc.append(loc)
        at_screen.append(free_propagate(loc, t["t_screen"] - t["t_loc"]))
    return coeffs, at_loc, at_screen


def run_two_slit(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Screen densities with and without the stochastic first localisation."""
    res = ExperimentResult("two_slit", cfg.seed)
    t = cfg.timings
    tau, hbar, mass = t["tau"], cfg.grid.hbar, cfg.grid.mass
    opts = cfg.section("two_slit")
    regions = cfg.regions
    with _stage("synthesis"):
        coeffs, at_loc, at_screen = two_slit_branches(cfg)
    with _stage("localisation"):
        ovl = overlap_integral(at_loc[0], at_loc[1])[1]
        res.metrics["density_overlap_at_localisation"] = ovl
        if ovl >= OVERLAP_TOL:
            raise CoincidenceError(f"partial waves overlap at localisation ({ovl:.3g}); "
                                   "the detectors cannot tell the paths apart")
        rep = coincidence_report(at_loc, regions)
        res.coincidence = [rep.as_dict()]
        if opts["localise"] and not rep.passes:
            raise CoincidenceError("partial waves are not coincident with their detectors")
    order = [regions.labels.index(b.box) if b.box != "ex" else -1 for b in rep.branches]
    density = cfg.density
    # per-branch eta is the eta of the box the branch sits in
    sel = lambda e: np.array([e[..., k] if k >= 0 else np.zeros(e.shape[:-1]) for k in order]).T  # noqa: E731
    etas = sel(density.sample(1, substream(cfg.seed, "stochastic")).etas)[0]
    branches = [[f] for f in at_screen]
    cs = [[c] for c in coeffs]
    ones = np.ones((2, 2), dtype=complex)
    if opts["localise"]:
        ph = np.exp(-1j * tau * etas / hbar)
        single = np.outer(ph, np.conj(ph))
        branch_density = ParamDensity(tuple(density.etas[k] if k >= 0 else marginal_from_dict(
            {"kind": "fixed", "value": 0.0}) for k in order), density.y)
        averaged = phase_coherence_matrix(branch_density, tau, hbar)
    else:
        single = averaged = ones
    x = cfg.grid.axis(0)
    rho_single = averaged_density(cs, branches, single)
    rho_avg = averaged_density(cs, branches, averaged)
    rho_control = averaged_density(cs, branches, ones)
    rho_incoherent = averaged_density(cs, branches, np.eye(2))
    c1, c2 = (p.center[0] for p, _ in cfg.packets)
    sep = abs(c2 - c1)
    period = 2 * np.pi * hbar * t["t_screen"] / (mass * sep)
    half = opts["window_periods"] * period
    mid = (c1 + c2) / 2
    res.visibility = {
        "single_run": fringe_visibility(rho_single, x, mid, half),
        "averaged": fringe_visibility(rho_avg, x, mid, half),
        "no_localisation": fringe_visibility(rho_control, x, mid, half),
        "incoherent_sum": fringe_visibility(rho_incoherent, x, mid, half),
        "fringe_period": period, "window_half_width": half,
    }
    dev = float(np.max(np.abs(rho_avg - rho_incoherent)))
    res.metrics.update({"etas": etas.tolist(), "averaged_minus_incoherent_max": dev,
                        "phase_coherence_12": complex(averaged[0, 1])})
    res.decoherence = {"phase": _matrix(averaged),
                       "pointer": _matrix(decoherence_matrix(cfg.pointer, density, tau))}
    res.checks = {
        "paths_disjoint_at_localisation": ovl < OVERLAP_TOL,
        "coincidence": rep.passes or not opts["localise"],
        "control_visibility_above_0.9": res.visibility["no_localisation"] > 0.9,
        "averaged_not_more_visible_than_control": res.visibility["averaged"] <= res.visibility["no_localisation"] + 1e-12,
    }
    if cfg.section("output").get("densities"):
        res.tables["screen_density"] = (["x", "single_run", "averaged", "no_localisation", "incoherent_sum"],
                                        [list(r) for r in zip(x, rho_single, rho_avg, rho_control, rho_incoherent)])
    return res


# ------------------------------------------------------------------------ EPR

KET_PZ, KET_MZ = np.array([1.0, 0.0]), np.array([0.0, 1.0])
KET_PX, KET_MX = np.array([1.0, 1.0]) / np.sqrt(2), np.array([1.0, -1.0]) / np.sqrt(2)
SINGLET = (np.kron(KET_PZ, KET_MZ) - np.kron(KET_MZ, KET_PZ)) / np.sqrt(2)


def _proj(v):
    return np.outer(v, np.conj(v))


def epr_state(alpha: float) -> np.ndarray:
    """Singlet after particle 1 picks up ``exp(i alpha)`` on ``+z``."""
    rz = oa.ProjectorPartition((_proj(KET_PZ), _proj(KET_MZ)))
    sx = oa.ProjectorPartition((_proj(KET_PX), _proj(KET_MX)))
    u = oa.two_factor_exp(rz, sx, [[alpha, alpha], [0.0, 0.0]])
    return u @ SINGLET


def epr_tables(alpha: float) -> dict:
    """Brute-force amplitude tables for one phase ``alpha``."""
    psi = epr_state(alpha)
    zs, xs = (KET_PZ, KET_MZ), (KET_PX, KET_MX)
    amp_zx = np.array([[np.vdot(np.kron(a, b), psi) for b in xs] for a in zs])
    amp_xx = np.array([[np.vdot(np.kron(a, b), psi) for b in xs] for a in xs])
    return {
        "coherent": np.abs(amp_zx.sum(axis=0)) ** 2,  # sum amplitudes over s_z, then square
        "born": np.sum(np.abs(amp_zx) ** 2, axis=0),
        "formula": 0.5 * np.array([1 - np.cos(alpha), 1 + np.cos(alpha)]),
        "joint_zx": np.abs(amp_zx) ** 2,
        "joint_xx": np.abs(amp_xx) ** 2,
    }


def dependence_gap(joint: np.ndarray) -> float:
    """``max |p(a,b) - p(a) p(b)|``."""
    joint = np.asarray(joint)
    return float(np.max(np.abs(joint - np.outer(joint.sum(axis=1), joint.sum(axis=0)))))


def epr_averaged(density: ParamDensity) -> dict:
    """Every table averaged over the phase density by quadrature."""
    params, w = density.quadrature(use_y=False)
    w = w / np.sum(w)
    keys = ("coherent", "born", "joint_zx", "joint_xx")
    out = {k: 0.0 for k in keys}
    for a, wi in zip(params.etas[:, 0], w):
        tb = epr_tables(a)
        for k in keys:
            out[k] = out[k] + wi * tb[k]
    return out


def run_epr(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Particle-2 ``sigma_x`` marginals before and after particle 1's deflection."""
    res = ExperimentResult("epr", cfg.seed)
    e = cfg.section("epr")
    alpha = e["alpha"]
    density = ParamDensity((marginal_from_dict(e["alpha_density"]),))
    before, after = epr_tables(0.0), epr_tables(alpha)
    avg = epr_averaged(density)
    rng = substream(cfg.seed, "stochastic")
    drawn = float(density.sample(1, rng).etas[0, 0])
    sampled = epr_tables(drawn)
    scan = []
    worst_formula = 0.0
    for a in list(e["table_alphas"]) + [alpha, drawn]:
        tb = epr_tables(a)
        worst_formula = max(worst_formula, float(np.max(np.abs(tb["coherent"] - tb["formula"]))))
        scan.append([a, *tb["coherent"], *tb["formula"], *tb["born"]])
    lab = ["+x", "-x"]
    res.marginals = {
        "labels": lab,
        "coherent_before": before["coherent"], "coherent_after": after["coherent"],
        "formula_after": after["formula"], "born_before": before["born"], "born_after": after["born"],
        "averaged_coherent": avg["coherent"], "averaged_born": avg["born"],
        "single_draw_alpha": drawn, "single_draw_coherent": sampled["coherent"],
        "joint_zx_before": before["joint_zx"], "joint_zx_after": after["joint_zx"],
        "joint_xx_before": before["joint_xx"], "joint_xx_after": after["joint_xx"],
        "joint_zx_averaged": avg["joint_zx"], "joint_xx_averaged": avg["joint_xx"],
    }
    res.metrics = {
        "alpha": alpha,
        "bell_gap_xx_before": dependence_gap(before["joint_xx"]),
        "bell_gap_xx_after": dependence_gap(after["joint_xx"]),
        "bell_gap_xx_averaged": dependence_gap(avg["joint_xx"]),
        "bell_gap_zx_after": dependence_gap(after["joint_zx"]),
        "formula_max_deviation": worst_formula,
        "joint_xx_change": float(np.max(np.abs(avg["joint_xx"] - before["joint_xx"]))),
    }
    res.checks = {
        "coherent_before_is_0_1": bool(np.max(np.abs(before["coherent"] - [0.0, 1.0])) < 1e-12),
        "formula_matches_amplitudes": worst_formula < 1e-12,
        "born_marginals_alpha_independent": bool(np.max(np.abs(after["born"] - 0.5)) < 1e-12),
        "particle2_averaged_unchanged": bool(np.max(np.abs(avg["born"] - before["born"])) < 1e-10),
        "joint_table_changes": res.metrics["joint_xx_change"] > 1e-6 or abs(np.cos(alpha) - 1) < 1e-12,
    }
    res.tables["marginals_scan"] = (["alpha", "coherent_plus_x", "coherent_minus_x", "formula_plus_x",
                                     "formula_minus_x", "born_plus_x", "born_minus_x"], scan)
    rows = []
    for name in ("joint_zx_before", "joint_zx_after", "joint_xx_before", "joint_xx_after",
                 "joint_zx_averaged", "joint_xx_averaged"):
        tab = res.marginals[name]
        for a in range(2):
            for b in range(2):
                rows.append([name, a, b, tab[a][b]])
    res.tables["joint_tables"] = (["table", "a", "b", "probability"], rows)
    return res


# ------------------------------------------------------------ point localisation

def run_point_localisation(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """A packet meets one region whose potential is switched on for ``tau``."""
    res = ExperimentResult("point_localisation", cfg.seed)
    t = cfg.timings
    t_loc, tau, t_end = t["t_loc"], t["tau"], t["t_end"]
    loc = cfg.section("localisation")
    eta, split_dt = loc["eta"], loc["split_dt"]
    regions, grid = cfg.regions, cfg.grid
    with _stage("synthesis"):
        f0 = synthesize_packets(grid, cfg.spin_dim, cfg.packets)
    with _stage("impulse"):
        f_loc = free_propagate(f0, t_loc)
        kicked = apply_piecewise_impulse(f_loc, regions, [eta], tau)
        drho = float(np.max(np.abs(kicked.density() - f_loc.density())))
    v = potential_from_regions(grid, regions, [eta])
    if split_dt * np.max(np.abs(v)) / grid.hbar >= 0.1:
        raise StageError("split_step", ValueError("split_dt * max|V| must stay below 0.1"))
    history = FieldHistory(f0, [Event(t_loc, potential=v, max_dt=split_dt, name="switch on"),
                                Event(t_loc + tau, clear_potential=True, name="switch off")])
    free = FieldHistory(f0)
    times = sorted(set(np.linspace(0.0, t_end, 13).tolist()) | {t_loc, t_loc + tau})
    p_hist = [float(momentum_expectation(history.field_at(s))[0]) for s in times]
    p_free = [float(momentum_expectation(free.field_at(s))[0]) for s in times]
    with _stage("ensemble"):
        spec = cfg.ensemble
        x0 = sample_quantum_equilibrium(f0, spec)
        dt = cfg.section("ensemble").get("dt") or min(default_time_step(f0), split_dt)
        ens = integrate_ensemble(history, x0, dt, t_end, record_times=[t_loc, t_loc + tau],
                                 node_epsilon=spec.node_epsilon, threads=threads)

    def mean_momentum(s):
        xs = ens.at(s)
        ok = np.all(np.isfinite(xs), axis=1)
        vel, good = history.sampler(s, history.stage_index(s)).velocity(xs[ok], spec.node_epsilon)
        pv = grid.mass * vel[good, 0]
        return float(np.mean(pv)), float(np.std(pv, ddof=1) / np.sqrt(pv.size))

    before, se_b = mean_momentum(t_loc)
    after, se_a = mean_momentum(t_end)
    field_shift = p_hist[times.index(t_end)] - p_hist[times.index(t_loc)]
    ens_shift = after - before
    res.flagged = ens.flagged_count
    res.metrics = {
        "impulse_density_change": drho,
        "impulse_phase_trivial": bool(abs(np.angle(np.exp(-1j * eta * tau / grid.hbar))) < 1e-12),
        "ensemble_mean_momentum_before": before, "ensemble_mean_momentum_after": after,
        "ensemble_momentum_stderr": float(np.hypot(se_a, se_b)),
        "field_momentum_shift": field_shift, "ensemble_momentum_shift": ens_shift,
        "free_momentum_after": p_free[times.index(t_end)],
    }
    res.equivariance = {"ks_t_end": equivariance_distance(history.field_at(t_end), ens.at(t_end)),
                        "critical_1pct": ks_critical(max(spec.count - res.flagged, 1))}
    noise = 3 * res.metrics["ensemble_momentum_stderr"]
    res.checks = {
        "impulse_density_invariant": drho < 1e-12,
        "ensemble_shift_sign_matches_field": abs(field_shift) <= noise or np.sign(ens_shift) == np.sign(field_shift),
    }
    if eta > 0:
        res.checks["positive_eta_slows_packet"] = field_shift < 0 or abs(field_shift) <= 1e-12
    res.tables["momentum_history"] = (["t", "momentum", "momentum_free"],
                                      [list(r) for r in zip(times, p_hist, p_free)])
    out = cfg.section("output")
    if out.get("trajectories", 0):
        k = out["trajectories"]
        sub = integrate_ensemble(history, x0[:k], dt, t_end, record_all=True, node_epsilon=spec.node_epsilon)
        labels = assign_ensemble(sub.positions[-1], regions)
        res.tables["trajectories"] = (["trajectory_id", "t", "x", "y"][: 2 + grid.dims] + ["outcome"],
                                      _trajectory_rows(sub.times, sub.positions, labels, k))
    return res


RUNNERS = {
    "stern_gerlach": run_stern_gerlach,
    "two_slit": run_two_slit,
    "epr": run_epr,
    "point_localisation": run_point_localisation,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    return RUNNERS[cfg.scenario](cfg, threads=threads)


def render_outputs(cfg: ExperimentConfig, result: ExperimentResult) -> dict[str, str]:
    """File name -> text for every output of a run (no timestamps)."""
    files = {"result.json": json_text(result.to_dict()), "resolved_config.json": dump_config(cfg)}
    for name, (header, rows) in result.tables.items():
        files[f"{name}.csv"] = csv_text(header, rows)
    return files


def write_outputs(out_dir, files: dict[str, str]) -> list[Path]:
    out = Path(out_dir)
    return [atomic_write_text(out / name, text) for name, text in sorted(files.items())]
