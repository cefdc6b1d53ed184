"""Guidance-law trajectories, equilibrium sampling and detector assignment.

The velocity field is ``(hbar/m) Im(sum_j psi_j^* grad psi_j) / sum_j |psi_j|^2``.
For a one-component field this is ``(hbar/m) Im(grad psi / psi)``; for spinor
fields whose components have disjoint supports it reduces to the same
expression evaluated on whichever component is present.

Fields between instantaneous events are produced on demand by
:class:`FieldHistory`, so an ensemble of any size shares one sequence of FFTs.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import kstwobign

from .grid_field import GridSpec, Region, WaveField, split_step_potential, _fft, _ifft
from .outputs import write_csv
from .rng import substream

STENCIL = np.arange(-2, 4)  # 6-point Lagrange interpolation


class NodeError(RuntimeError):
    """Velocity requested where the density is numerically zero."""


@dataclass(frozen=True)
class EnsembleSpec:
    count: int
    seed: int = 0
    node_epsilon: float = 1e-8

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("ensemble count must be >= 1")
        if not self.node_epsilon > 0:
            raise ValueError("node_epsilon must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    outcome: str | None = None
    flagged: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def position_at(self, t: float) -> np.ndarray:
        i = np.searchsorted(self.times, t)
        if i < len(self.times) and np.isclose(self.times[i], t, rtol=0, atol=1e-12):
            return self.positions[i]
        if t < self.times[0] or t > self.times[-1]:
            raise ValueError(f"trajectory not defined at t={t}")
        return np.array([np.interp(t, self.times, self.positions[:, a]) for a in range(self.positions.shape[1])])


def _lagrange_weights(frac: np.ndarray) -> np.ndarray:
    """Weights of the 6-point stencil for fractional offsets in [0, 1)."""
    w = np.ones((frac.size, STENCIL.size))
    for i, ni in enumerate(STENCIL):
        for m, nm in enumerate(STENCIL):
            if m != i:
                w[:, i] *= (frac - nm) / (ni - nm)
    return w


def _interp_setup(grid: GridSpec, xs: np.ndarray):
    idx, wts = [], []
    for ax in range(grid.dims):
        s = (xs[:, ax] - grid.origin[ax]) / grid.spacing[ax]
        base = np.floor(s)
        wts.append(_lagrange_weights(s - base))
        idx.append((base.astype(np.int64)[:, None] + STENCIL[None, :]) % grid.points[ax])
    return idx, wts


def _interp(arr: np.ndarray, idx, wts) -> np.ndarray:
    """Interpolate ``arr`` (grid.shape + (c,)) at the prepared points -> (n, c)."""
    if len(idx) == 1:
        return np.einsum("ns,nsc->nc", wts[0], arr[idx[0]])
    vals = arr[idx[0][:, :, None], idx[1][:, None, :]]
    return np.einsum("ns,nt,nstc->nc", wts[0], wts[1], vals)


class _Sampler:
    """psi and grad psi on the grid, ready for pointwise velocity queries."""

    def __init__(self, grid: GridSpec, psi: np.ndarray, grads: list[np.ndarray]):
        self.grid = grid
        self.psi = psi
        self.grads = grads
        self.peak = float(np.max(np.sum(np.abs(psi) ** 2, axis=-1)))

    @classmethod
    def from_field(cls, field: WaveField) -> "_Sampler":
        g = field.grid
        psi_k = _fft(field.amplitudes, g.dims)
        grads = [_ifft(1j * k[..., None] * psi_k, g.dims) for k in g.k_mesh()]
        return cls(g, np.asarray(field.amplitudes), grads)

    def velocity(self, xs: np.ndarray, node_epsilon: float):
        idx, wts = _interp_setup(self.grid, xs)
        psi = _interp(self.psi, idx, wts)
        rho = np.sum(np.abs(psi) ** 2, axis=1)
        ok = rho >= node_epsilon * self.peak
        safe = np.where(ok, rho, 1.0)
        coef = self.grid.hbar / self.grid.mass
        v = np.empty_like(xs)
        for ax, gr in enumerate(self.grads):
            d = _interp(gr, idx, wts)
            v[:, ax] = coef * np.imag(np.sum(np.conj(psi) * d, axis=1)) / safe
        v[~ok] = 0.0
        return v, ok


def _as_points(x, dims: int) -> np.ndarray:
    xs = np.asarray(x, dtype=float)
    if xs.ndim == 0:
        xs = xs.reshape(1, 1)
    elif xs.ndim == 1:
        xs = xs[:, None] if dims == 1 else xs[None, :]
    if xs.shape[1] != dims:
        raise ValueError(f"positions must have {dims} coordinates")
    return xs


def velocity_at(field: WaveField, x, node_epsilon: float = 1e-8) -> np.ndarray:
    """Guidance velocity at one or more positions; raises :class:`NodeError` near nodes."""
    xs = _as_points(x, field.grid.dims)
    v, ok = _Sampler.from_field(field).velocity(xs, node_epsilon)
    if not np.all(ok):
        raise NodeError(f"density below {node_epsilon:g} of peak at {xs[~ok][0]}")
    return v[0] if np.ndim(x) <= (0 if field.grid.dims == 1 else 1) else v


def velocity_field(field: WaveField, node_epsilon: float = 1e-8) -> np.ndarray:
    """Velocity on every grid node (zero where the density is below threshold)."""
    g = field.grid
    samp = _Sampler.from_field(field)
    psi = samp.psi
    rho = np.sum(np.abs(psi) ** 2, axis=-1)
    ok = rho >= node_epsilon * samp.peak
    safe = np.where(ok, rho, 1.0)
    out = [np.where(ok, g.hbar / g.mass * np.imag(np.sum(np.conj(psi) * d, axis=-1)) / safe, 0.0)
           for d in samp.grads]
    return out[0] if g.dims == 1 else np.stack(out, axis=-1)


@dataclass
class _Stage:
    start: float
    potential: np.ndarray | None
    max_dt: float
    field: WaveField | None = None
    psi_k: np.ndarray | None = None


@dataclass(frozen=True)
class Event:
    time: float
    transform: Callable[[WaveField], WaveField] | None = None
    potential: np.ndarray | None = None
    clear_potential: bool = False
    max_dt: float = 0.01
    name: str = ""


class FieldHistory:
    """Time-indexed wavefunction: evolution segments joined by instantaneous events.

    Between events the field evolves freely, or under a static potential
    (split-step with substeps of at most ``max_dt``) when an event switched
    one on.  At an event time the history is right-continuous.
    """

    def __init__(self, initial: WaveField, events: Sequence[Event] = (), cache_size: int = 16):
        self.initial = initial
        self.events = sorted(events, key=lambda e: e.time)
        if any(e.time < initial.time for e in self.events):
            raise ValueError("event before the initial field time")
        self._stages = [_Stage(initial.time, None, 0.01, initial)]
        pot, dt = None, 0.01
        for e in self.events:
            if e.potential is not None:
                pot, dt = np.asarray(e.potential, dtype=float), e.max_dt
            if e.clear_potential:
                pot = None
            self._stages.append(_Stage(e.time, pot, dt))
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.RLock()

    @property
    def grid(self) -> GridSpec:
        return self.initial.grid

    @property
    def event_times(self) -> list[float]:
        return [e.time for e in self.events]

    def stage_index(self, t: float) -> int:
        """Stage active on ``[start, next_start)``."""
        i = 0
        for k, st in enumerate(self._stages):
            if st.start <= t:
                i = k
        return i

    def _stage_field(self, i: int) -> WaveField:
        with self._lock:
            st = self._stages[i]
            if st.field is None:
                prev = self._evolve(i - 1, st.start)
                ev = self.events[i - 1]
                st.field = ev.transform(prev) if ev.transform is not None else prev
                st.field = st.field.replace(time=st.start)
            return st.field

    def _evolve(self, i: int, t: float) -> WaveField:
        st = self._stages[i]
        base = self._stage_field(i)
        dt = t - st.start
        if dt < 0:
            raise ValueError("time before stage start")
        if st.potential is None:
            if dt == 0:
                return base
            g = base.grid
            if st.psi_k is None:
                st.psi_k = _fft(base.amplitudes, g.dims)
            phase = np.exp(-1j * dt * g.hbar * g.k_squared() / (2 * g.mass))
            return base.replace(_ifft(st.psi_k * phase[..., None], g.dims), t)
        n = max(int(np.ceil(dt / st.max_dt - 1e-9)), 1)
        return split_step_potential(base, st.potential, dt / n, n) if dt > 0 else base

    def field_at(self, t: float, stage: int | None = None) -> WaveField:
        """Field at time ``t``; ``stage`` selects a left limit at event times."""
        i = self.stage_index(t) if stage is None else stage
        return self._evolve(i, t)

    def sampler(self, t: float, stage: int) -> _Sampler:
        key = (stage, float(t))
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        samp = _Sampler.from_field(self.field_at(t, stage))
        with self._lock:
            self._cache[key] = samp
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return samp


@dataclass
class Ensemble:
    times: np.ndarray
    positions: np.ndarray  # (T, n, dims); NaN after a trajectory is flagged
    flagged: np.ndarray
    halvings: int = 0

    @property
    def count(self) -> int:
        return self.positions.shape[1]

    @property
    def flagged_count(self) -> int:
        return int(np.sum(self.flagged))

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"time {t} was not recorded")
        return self.positions[i]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.times, self.positions[:, i, :], flagged=bool(self.flagged[i]))


def default_time_step(field: WaveField, node_epsilon: float = 1e-8) -> float:
    """Grid spacing over four times a velocity-scale estimate."""
    g = field.grid
    v = np.abs(velocity_field(field, node_epsilon))
    vmax = float(np.max(v)) if v.size else 0.0
    rho_k = np.sum(np.abs(_fft(field.amplitudes, g.dims)) ** 2, axis=-1)
    k_rms = np.sqrt(np.sum(g.k_squared() * rho_k) / np.sum(rho_k))
    vmax = max(vmax, g.hbar * k_rms / g.mass)
    return min(g.spacing) / (4 * vmax) if vmax > 0 else 0.1


def _breakpoints(t0: float, t_end: float, extra: Sequence[float]) -> list[float]:
    pts = sorted({float(t) for t in extra if t0 < t < t_end} | {float(t_end)})
    return pts


def integrate_ensemble(history: FieldHistory, x0, dt: float, t_end: float, *,
                       record_times: Sequence[float] | None = None, record_all: bool = False,
                       node_epsilon: float = 1e-8, max_halvings: int = 10,
                       threads: int = 1, chunk: int = 4096) -> Ensemble:
    """RK4 transport of many particles through ``history``.

    Steps are uniform inside each interval between breakpoints (events and
    record times), so every event is hit exactly.  A step whose stages meet
    a density below ``node_epsilon`` times the peak is retried with halved
    steps, up to ``max_halvings`` times; after that the particle is flagged
    and its later positions are NaN.
    """
    g = history.grid
    xs0 = _as_points(x0, g.dims)
    t0 = history.initial.time
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < t0:
        raise ValueError("t_end before the initial time")
    rec = {float(t0), float(t_end)} | {float(t) for t in (record_times or ())}
    if any(t < t0 or t > t_end for t in rec):
        raise ValueError("record time outside the integration window")
    stops = _breakpoints(t0, t_end, list(rec) + history.event_times)
    segments = []
    ta = t0
    for tb in stops:
        if tb <= ta:
            continue
        n = max(int(np.ceil((tb - ta) / dt - 1e-9)), 1)
        segments.append((ta, tb, n, history.stage_index(ta)))
        ta = tb

    def run(xs: np.ndarray):
        xs = xs.copy()
        alive = np.ones(xs.shape[0], dtype=bool)
        out_t, out_x = [t0], [xs.copy()]
        depth_used = 0
        for ta, tb, n, stage in segments:
            h = (tb - ta) / n
            for s in range(n):
                t = ta + s * h
                idx = np.flatnonzero(alive)
                new, ok, d = _rk4_adaptive(history, xs[idx], t, h, stage, node_epsilon, max_halvings, 0)
                depth_used = max(depth_used, d)
                xs[idx[ok]] = new[ok]
                alive[idx[~ok]] = False
                xs[idx[~ok]] = np.nan
                if record_all:
                    out_t.append(t + h)
                    out_x.append(xs.copy())
            if not record_all and tb in rec:
                out_t.append(tb)
                out_x.append(xs.copy())
        return np.array(out_t), np.stack(out_x), ~alive, depth_used

    parts = [xs0[i:i + chunk] for i in range(0, xs0.shape[0], chunk)]
    if threads > 1 and len(parts) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]
    times = results[0][0]
    positions = np.concatenate([r[1] for r in results], axis=1)
    flagged = np.concatenate([r[2] for r in results])
    return Ensemble(times, positions, flagged, max(r[3] for r in results))


def _rk4_adaptive(history: FieldHistory, xs, t, h, stage, eps, max_halvings, depth):
    new, ok = _rk4(history, xs, t, h, stage, eps)
    if np.all(ok) or depth >= max_halvings:
        return new, ok, depth
    bad = np.flatnonzero(~ok)
    mid, ok1, d1 = _rk4_adaptive(history, xs[bad], t, h / 2, stage, eps, max_halvings, depth + 1)
    fin, ok2, d2 = _rk4_adaptive(history, np.where(ok1[:, None], mid, xs[bad]), t + h / 2, h / 2,
                                 stage, eps, max_halvings, depth + 1)
    good = ok1 & ok2
    new[bad[good]] = fin[good]
    ok[bad[good]] = True
    return new, ok, max(d1, d2)


def _rk4(history: FieldHistory, xs, t, h, stage, eps):
    k1, o1 = history.sampler(t, stage).velocity(xs, eps)
    mid = history.sampler(t + h / 2, stage)
    k2, o2 = mid.velocity(xs + 0.5 * h * k1, eps)
    k3, o3 = mid.velocity(xs + 0.5 * h * k2, eps)
    k4, o4 = history.sampler(t + h, stage).velocity(xs + h * k3, eps)
    return xs + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), o1 & o2 & o3 & o4


def integrate_trajectory(history: FieldHistory, x0, dt: float, t_end: float,
                         node_epsilon: float = 1e-8) -> Trajectory:
    """Single trajectory, every step recorded."""
    ens = integrate_ensemble(history, _as_points(x0, history.grid.dims)[:1], dt, t_end,
                             record_all=True, node_epsilon=node_epsilon)
    return ens.trajectory(0)


def _cell_cdf(field: WaveField, axis: int = 0):
    g = field.grid
    rho = field.density()
    if g.dims > 1:
        rho = np.sum(rho, axis=tuple(a for a in range(g.dims) if a != axis))
    total = np.sum(rho)
    if total <= 0:
        raise ValueError("zero density")
    p = rho / total
    edges = g.axis(axis) - g.spacing[axis] / 2
    return edges, p, np.concatenate([[0.0], np.cumsum(p)])


def sample_quantum_equilibrium(field: WaveField, spec: EnsembleSpec) -> np.ndarray:
    """``spec.count`` i.i.d. positions with density ``|psi|^2`` (summed over spin).

    1D: exact inverse CDF of the cell-wise constant density, one uniform per
    sample.  2D: rejection from a uniform proposal.  Returns ``(n, dims)``.
    """
    g = field.grid
    rng = substream(spec.seed, "sampling")
    if g.dims == 1:
        edges, p, cdf = _cell_cdf(field)
        u = rng.random(spec.count)
        j = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, p.size - 1)
        while np.any(p[j] == 0):  # u landed exactly on a flat stretch
            j = np.where(p[j] == 0, j + 1, j)
        x = edges[j] + g.spacing[0] * (u - cdf[j]) / p[j]
        return x[:, None]
    rho = field.density()
    peak = np.max(rho)
    if peak <= 0:
        raise ValueError("zero density")
    out = np.empty((0, 2))
    lo = np.array(g.origin) - np.array(g.spacing) / 2
    ext = np.array(g.extent)
    while out.shape[0] < spec.count:
        n = 4 * (spec.count - out.shape[0]) + 64
        cand = lo + ext * rng.random((n, 2))
        ij = [np.clip(np.round((cand[:, a] - g.origin[a]) / g.spacing[a]).astype(int), 0, g.points[a] - 1)
              for a in range(2)]
        keep = rng.random(n) * peak < rho[ij[0], ij[1]]
        out = np.vstack([out, cand[keep]])
    return out[: spec.count]


def ks_critical(n: int, alpha: float = 0.01) -> float:
    """Asymptotic one-sample Kolmogorov-Smirnov critical value."""
    return float(kstwobign.ppf(1 - alpha) / np.sqrt(n))


def equivariance_distance(field: WaveField, positions, axis: int = 0) -> float:
    """KS distance between the ensemble and ``|psi(., t)|^2`` along ``axis``.

    NaN positions (flagged trajectories) are ignored.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 2:
        pos = pos[:, axis]
    pos = np.sort(pos[np.isfinite(pos)])
    n = pos.size
    if n == 0:
        return 0.0
    edges, p, cdf = _cell_cdf(field, axis)
    h = field.grid.spacing[axis]
    j = np.clip(np.floor((pos - edges[0]) / h).astype(int), 0, p.size - 1)
    frac = np.clip((pos - edges[j]) / h, 0.0, 1.0)
    model = np.clip(cdf[j] + p[j] * frac, 0.0, 1.0)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - model), np.max(model - (i - 1) / n)))


def detector_assignment(trajectory: Trajectory, regions: Region, t_loc: float) -> str:
    """Label of the box holding the particle at ``t_loc``; ``"ex"`` otherwise."""
    x = trajectory.position_at(t_loc)
    if not np.all(np.isfinite(x)):
        return "ex"
    return regions.label_of(int(regions.locate(x[None, :])[0]))


def assign_ensemble(positions, regions: Region) -> list[str | None]:
    """Labels for a block of positions; ``None`` for flagged (NaN) entries."""
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    finite = np.all(np.isfinite(pos), axis=1)
    idx = regions.locate(np.where(finite[:, None], pos, 0.0))
    return [regions.label_of(int(k)) if f else None for k, f in zip(idx, finite)]


def write_trajectories_csv(path, trajectories: Sequence[Trajectory], ids: Sequence[int] | None = None):
    """CSV with columns ``trajectory_id, t, x[, y], outcome``."""
    if not trajectories:
        raise ValueError("no trajectories to write")
    dims = trajectories[0].positions.shape[1]
    header = ["trajectory_id", "t"] + ["x", "y"][:dims] + ["outcome"]
    ids = list(ids) if ids is not None else list(range(len(trajectories)))

    def rows():
        for tid, tr in zip(ids, trajectories):
            outcome = tr.outcome or ("flagged" if tr.flagged else "")
            for t, x in zip(tr.times, tr.positions):
                yield [tid, t, *x, outcome]

    return write_csv(path, header, rows())
