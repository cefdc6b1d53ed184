"""Named invariant and oracle checks run by ``stochbohm verify``.

Each check returns a :class:`CheckResult`; ``details`` holds the measured
numbers so a failing run can be diagnosed from the report alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import operator_algebra as oa
from .bohmian import (EnsembleSpec, Event, FieldHistory, equivariance_distance, integrate_ensemble,
                      ks_critical, sample_quantum_equilibrium, default_time_step)
from .experiments import epr_averaged, epr_tables, fringe_visibility, two_slit_branches
from .grid_field import (GridSpec, PacketParams, Region, apply_piecewise_impulse, extended_impulsive_evolve,
                         impulse_branches, kick_check, split_step_evolve, synthesize_packets)
from .rng import substream
from .stochastic import (Fixed, ParamDensity, PointerModel, Uniform, averaged_density, decoherence_matrix,
                         max_off_diagonal, phase_coherence_matrix, pointer_overlap)


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = dc_field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}"


def check_operator_identities(cases: int = 100, seed: int = 0) -> CheckResult:
    """Spectral shortcuts against the power-series oracle on random operators."""
    rng = substream(seed, "operator_identities")
    worst = {"coarse_grained": 0.0, "two_factor": 0.0, "tensor_factor": 0.0}
    for _ in range(cases):
        d = int(rng.integers(2, 17))
        part = oa.random_partition(d, int(rng.integers(1, d + 1)), rng)
        al = rng.uniform(-np.pi, np.pi, len(part))
        g = sum(a * p for a, p in zip(al, part.projectors))
        worst["coarse_grained"] = max(worst["coarse_grained"], oa.frobenius(
            oa.coarse_grained_exp(part, al) - oa.matrix_exp_oracle(1j * g)))
        dr, ds = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        pr = oa.random_partition(dr, int(rng.integers(1, dr + 1)), rng)
        ps = oa.random_partition(ds, int(rng.integers(1, ds + 1)), rng)
        a_rs = rng.uniform(-np.pi, np.pi, (len(pr), len(ps)))
        gen = sum(a_rs[r, s] * np.kron(p, q) for r, p in enumerate(pr.projectors) for s, q in enumerate(ps.projectors))
        worst["two_factor"] = max(worst["two_factor"], oa.frobenius(
            oa.two_factor_exp(pr, ps, a_rs) - oa.matrix_exp_oracle(1j * gen)))
        qd, rd = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        qp = oa.random_partition(qd, int(rng.integers(1, qd + 1)), rng)
        qv = rng.uniform(-1.5, 1.5, len(qp))
        qop = sum(v * p for v, p in zip(qv, qp.projectors))
        h = rng.normal(size=(rd, rd)) + 1j * rng.normal(size=(rd, rd))
        rop = (h + h.conj().T) / 2
        worst["tensor_factor"] = max(worst["tensor_factor"], oa.frobenius(
            oa.tensor_factor_exp((qv, qp), rop) - oa.matrix_exp_oracle(1j * np.kron(qop, rop))))
    return CheckResult("operator_identities", max(worst.values()) < 1e-12, {"cases": cases, **worst})


def bch_exponents(pairs: int = 10, seed: int = 0, thetas=(0.05, 0.025, 0.0125)) -> list[float]:
    """Fitted power of the order-3 truncation error under theta-halving."""
    rng = substream(seed, "bch")
    out = []
    for _ in range(pairs):
        mats = []
        for _ in range(2):
            h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            mats.append((h - h.conj().T) / 2)
        errs = []
        for th in thetas:
            a, b = th * mats[0], th * mats[1]
            exact = oa.matrix_exp_oracle(a) @ oa.matrix_exp_oracle(b)
            errs.append(oa.frobenius(oa.matrix_exp_oracle(oa.bch_eta_truncated(a, b, 3)) - exact))
        out.append(float(np.polyfit(np.log(thetas), np.log(errs), 1)[0]))
    return out


def check_bch_scaling() -> CheckResult:
    ex = bch_exponents()
    return CheckResult("bch_scaling", all(3.7 <= e <= 4.3 for e in ex), {"exponents": ex})


def check_impulse_invariance() -> CheckResult:
    g = GridSpec((80.0,), (4096,))
    f = synthesize_packets(g, 1, [(PacketParams(0.6, 0.0, (1.0,), (-10.0,), 1.0), 0),
                                  (PacketParams(0.8, 0.3, (-2.0,), (10.0,), 1.5), 0)])
    reg = Region((((-20.0, -5.0),), ((0.0, 20.0),)))
    out = apply_piecewise_impulse(f, reg, [np.pi, 2.7], 1.0)
    d = float(np.max(np.abs(out.density() - f.density())))
    return CheckResult("impulse_invariance", d < 1e-15, {"max_density_change": d})


def smooth_potentials(x: np.ndarray):
    """Five smooth potentials with analytic gradients."""
    return [
        ("linear", 0.7 * x, np.full_like(x, 0.7)),
        ("harmonic", 0.05 * x**2, 0.1 * x),
        ("gaussian_bump", 2.0 * np.exp(-((x - 1.0) ** 2) / 2), -2.0 * (x - 1.0) * np.exp(-((x - 1.0) ** 2) / 2)),
        ("cosine", 0.5 * np.cos(0.4 * x), -0.2 * np.sin(0.4 * x)),
        ("tanh_step", np.tanh(x + 0.5), 1 / np.cosh(x + 0.5) ** 2),
    ]


def check_kick(tau: float = 0.05) -> CheckResult:
    g = GridSpec((80.0,), (2048,))
    f = synthesize_packets(g, 1, [(PacketParams(1.0, 0.0, (0.5,), (-1.0,), 1.2), 0)])
    x = g.axis(0)
    dev = {}
    for name, v, gv in smooth_potentials(x):
        rep = kick_check(f, v, tau, grad_v=gv)
        dev[name] = float(rep.deviation)
    return CheckResult("kick", max(dev.values()) < 1e-6, dev)


def extended_vs_split(margin_sigma: float = 6.0, straddle: bool = False):
    """L2 distance between the branch-wise impulse formula and full split-step."""
    g = GridSpec((128.0,), (2048,))
    w, tau = 1.0, 0.2
    boxes = (((-30.0, -2.0),), ((2.0, 30.0),))
    reg = Region(boxes, ("1", "2"))
    if straddle:
        centers = (-2.0, 16.0)
    else:
        centers = (-2.0 - margin_sigma * w, 2.0 + margin_sigma * w)
    branches = [synthesize_packets(g, 1, [(PacketParams(c, 0.0, (0.0,), (x0,), w), 0)], normalize=False)
                for c, x0 in zip((0.6, 0.8), centers)]
    total = branches[0] + branches[1]
    etas = (3.0, -2.0)
    steps = 400
    oracle = split_step_evolve(total, reg, etas, tau / steps, steps)
    approx = extended_impulsive_evolve(branches, reg, etas, tau, check=False)
    diff = np.sqrt(np.sum(np.abs(oracle.amplitudes - approx.amplitudes) ** 2) * g.cell_volume)
    return float(diff)


def check_extended_vs_split() -> CheckResult:
    good, bad = extended_vs_split(6.0), extended_vs_split(straddle=True)
    return CheckResult("extended_vs_split", good <= 1e-3 and bad >= 1e-2,
                       {"coincident_l2": good, "straddling_l2": bad})


def check_epr_tables() -> CheckResult:
    before = epr_tables(0.0)
    alphas = np.linspace(0.0, 2 * np.pi, 20, endpoint=False) + 0.1
    dev = max(float(np.max(np.abs(epr_tables(a)["coherent"] - epr_tables(a)["formula"]))) for a in alphas)
    avg = epr_averaged(ParamDensity((Uniform(0.0, 2 * np.pi),)))
    d0 = float(np.max(np.abs(before["coherent"] - [0.0, 1.0])))
    davg = float(np.max(np.abs(avg["coherent"] - 0.5)))
    return CheckResult("epr_tables", d0 < 1e-12 and dev < 1e-12 and davg < 1e-10,
                       {"before_deviation": d0, "formula_deviation": dev, "average_deviation": davg})


def two_slit_default_config():
    from .config import parse_config

    return parse_config('{"scenario": "two_slit"}')


def check_two_slit() -> CheckResult:
    cfg = two_slit_default_config()
    coeffs, _, screen = two_slit_branches(cfg)
    tau = cfg.timings["tau"]
    dens = ParamDensity((Uniform(0.0, 2 * np.pi / tau), Fixed(0.0)))
    m = phase_coherence_matrix(dens, tau)
    cs, br = [[c] for c in coeffs], [[f] for f in screen]
    avg = averaged_density(cs, br, m)
    incoherent = averaged_density(cs, br, np.eye(2))
    control = averaged_density(cs, br, np.ones((2, 2)))
    x = cfg.grid.axis(0)
    period = 2 * np.pi * cfg.timings["t_screen"] / cfg.section("two_slit")["separation"]
    half = cfg.section("two_slit")["window_periods"] * period
    v_avg, v_ctl = fringe_visibility(avg, x, 0.0, half), fringe_visibility(control, x, 0.0, half)
    dev = float(np.max(np.abs(avg - incoherent)))
    return CheckResult("two_slit", dev < 1e-3 and v_avg < 0.05 and v_ctl > 0.9,
                       {"pointwise_deviation": dev, "averaged_visibility": v_avg, "control_visibility": v_ctl})


def equivariance_run(count: int = 10_000, seed: int = 0):
    """Two packets, one coincident impulsive event, then free spreading."""
    g = GridSpec((64.0,), (1024,))
    f0 = synthesize_packets(g, 1, [(PacketParams(0.6, 0.0, (0.0,), (-8.0,), 1.0), 0),
                                   (PacketParams(0.8, 0.0, (0.0,), (8.0,), 1.0), 0)])
    reg = Region((((-16.0, 0.0),), ((0.0, 16.0),)))
    t_event, tau, t_end = 1.0, 0.05, 3.0
    etas = (40.0, -25.0)

    def event(f):
        parts = [f.replace(f.amplitudes * m[:, None]) for m in reg.masks(g)]
        return impulse_branches(parts, reg, etas, tau)

    hist = FieldHistory(f0, [Event(t_event, transform=event, name="localisation")])
    spec = EnsembleSpec(count, seed)
    x0 = sample_quantum_equilibrium(f0, spec)
    dt = default_time_step(f0)
    ens = integrate_ensemble(hist, x0, dt, t_end, record_times=[t_event, 2.0])
    dists = {t: equivariance_distance(hist.field_at(t), ens.at(t)) for t in (t_event, 2.0, t_end)}
    return dists, ens.flagged_count, ks_critical(count - ens.flagged_count)


def check_equivariance() -> CheckResult:
    dists, flagged, crit = equivariance_run()
    return CheckResult("equivariance", max(dists.values()) < crit and flagged < 10,
                       {"ks": {str(k): v for k, v in dists.items()}, "critical_1pct": crit, "flagged": flagged})


def check_decoherence_matrix() -> CheckResult:
    m = PointerModel(1.0, 0.0)
    closed = np.exp(-(10.0**2) / 8)
    y = np.linspace(-60, 60, 240001)
    quad = np.sum(m.profile(y - 10.0) * np.conj(m.profile(y))) * (y[1] - y[0])
    dev_closed = abs(abs(pointer_overlap(m, 10.0, 0.0, 1.0)) - closed)
    dev_quad = abs(quad - pointer_overlap(m, 10.0, 0.0, 1.0))
    qc = PointerModel(1.0, 20.0)
    dens = ParamDensity((Uniform(0.0, 50.0), Uniform(0.0, 50.0), Uniform(0.0, 50.0)))
    off = max_off_diagonal(decoherence_matrix(qc, dens, 1.0))
    return CheckResult("decoherence_matrix", dev_closed < 1e-8 and dev_quad < 1e-8 and off < 1e-2,
                       {"closed_form_deviation": float(dev_closed), "quadrature_deviation": float(dev_quad),
                        "quasi_classical_max_off_diagonal": off})


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "operator_identities": check_operator_identities,
    "bch_scaling": check_bch_scaling,
    "impulse_invariance": check_impulse_invariance,
    "kick": check_kick,
    "extended_vs_split": check_extended_vs_split,
    "epr_tables": check_epr_tables,
    "two_slit": check_two_slit,
    "equivariance": check_equivariance,
    "decoherence_matrix": check_decoherence_matrix,
}


def run_checks(names=None) -> list[CheckResult]:
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(CHECKS)}")
    return [CHECKS[n]() for n in names]
