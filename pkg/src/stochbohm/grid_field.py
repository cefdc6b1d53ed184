"""Grid-sampled spinor wavefunctions and the unitary steps applied to them.

Coordinates are centred: along each axis ``x_j = -L/2 + j*h`` for
``j = 0..N-1`` with ``h = L/N``.  Boundaries are periodic, so every spectral
step is exact; wrap-around is detected through :func:`boundary_amplitude`
instead of being absorbed.

Amplitude arrays have shape ``grid.shape + (spin_dim,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

BOUNDARY_TOL = 1e-10


class GridError(ValueError):
    """Grid, region or packet geometry is inconsistent."""


class CoincidenceError(RuntimeError):
    """A packet is not confined to its detector box at localisation time."""


def _tuple(v, n=None) -> tuple:
    if np.ndim(v) == 0:
        v = (v,) if n is None else (v,) * n
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class GridSpec:
    extent: tuple[float, ...]
    points: tuple[int, ...]
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        extent = _tuple(self.extent)
        points = tuple(int(p) for p in (self.points if np.ndim(self.points) else (self.points,)))
        if len(extent) != len(points) or len(points) not in (1, 2):
            raise GridError("grid must be 1D or 2D with one extent per axis")
        for n in points:
            if n < 2 or n & (n - 1):
                raise GridError(f"points per axis must be a power of two, got {n}")
        if min(extent) <= 0:
            raise GridError("extent must be positive")
        if self.hbar <= 0 or self.mass <= 0:
            raise GridError("hbar and mass must be positive")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "points", points)

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extent, self.points))

    @property
    def origin(self) -> tuple[float, ...]:
        return tuple(-L / 2 for L in self.extent)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, i: int = 0) -> np.ndarray:
        return self.origin[i] + self.spacing[i] * np.arange(self.points[i])

    def wavenumbers(self, i: int = 0) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points[i], d=self.spacing[i])

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(i) for i in range(self.dims)], indexing="ij")

    def k_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.wavenumbers(i) for i in range(self.dims)], indexing="ij")

    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.k_mesh())


@dataclass(frozen=True)
class WaveField:
    grid: GridSpec
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex)
        if amp.shape == self.grid.shape:
            amp = amp[..., None]
        if amp.shape[:-1] != self.grid.shape:
            raise GridError(f"amplitude shape {amp.shape} does not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(amp)):
            raise ValueError("non-finite amplitudes")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def spin_dim(self) -> int:
        return self.amplitudes.shape[-1]

    def density(self) -> np.ndarray:
        """Position density summed over spin components."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.density()) * self.grid.cell_volume))

    def replace(self, amplitudes=None, time=None) -> "WaveField":
        return WaveField(
            self.grid,
            self.amplitudes if amplitudes is None else amplitudes,
            self.time if time is None else time,
        )

    def normalized(self) -> "WaveField":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize a zero field")
        return self.replace(self.amplitudes / n)

    def scaled(self, c: complex) -> "WaveField":
        return self.replace(self.amplitudes * c)

    def __add__(self, other: "WaveField") -> "WaveField":
        _same_grid(self, other)
        return self.replace(self.amplitudes + other.amplitudes)

    def component(self, j: int) -> "WaveField":
        """Field with only spin component ``j`` kept (same spin_dim)."""
        amp = np.zeros_like(self.amplitudes)
        amp[..., j] = self.amplitudes[..., j]
        return self.replace(amp)

    def components(self) -> list["WaveField"]:
        return [self.component(j) for j in range(self.spin_dim)]


def _same_grid(a: WaveField, b: WaveField) -> None:
    if a.grid != b.grid:
        raise GridError("fields live on different grids")
    if a.spin_dim != b.spin_dim:
        raise GridError("fields have different spin dimensions")


@dataclass(frozen=True)
class PacketParams:
    """One Gaussian packet: ``|psi|^2`` has standard deviation ``width``."""

    weight: complex = 1.0
    phase: float = 0.0
    momentum: tuple[float, ...] = (0.0,)
    center: tuple[float, ...] = (0.0,)
    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise GridError("packet width must be positive")
        object.__setattr__(self, "momentum", _tuple(self.momentum))
        object.__setattr__(self, "center", _tuple(self.center))


@dataclass(frozen=True)
class Region:
    """Disjoint axis-aligned detector boxes ``D_k`` with labels.

    ``boxes[k][axis] = (lo, hi)``; membership is half-open ``lo <= x < hi``.
    """

    boxes: tuple
    labels: tuple = ()

    def __post_init__(self):
        boxes = []
        for b in self.boxes:
            if np.ndim(b) == 1:
                b = (b,)
            box = tuple((float(lo), float(hi)) for lo, hi in b)
            for lo, hi in box:
                if not lo < hi:
                    raise GridError(f"empty interval ({lo}, {hi})")
            boxes.append(box)
        labels = tuple(str(s) for s in self.labels) or tuple(str(k + 1) for k in range(len(boxes)))
        if len(labels) != len(boxes):
            raise GridError("one label per box required")
        if len(set(labels)) != len(labels) or "ex" in labels:
            raise GridError("labels must be unique and must not be 'ex'")
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if len(boxes[i]) != len(boxes[j]):
                    raise GridError("boxes have different dimensions")
                if all(a_lo < b_hi and b_lo < a_hi for (a_lo, a_hi), (b_lo, b_hi) in zip(boxes[i], boxes[j])):
                    raise GridError(f"boxes {labels[i]!r} and {labels[j]!r} overlap")
        object.__setattr__(self, "boxes", tuple(boxes))
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.boxes)

    def index_bounds(self, grid: GridSpec) -> list[tuple[tuple[int, int], ...]]:
        """Index-space ``[ilo, ihi)`` per box and axis; edges must sit on nodes."""
        out = []
        for label, box in zip(self.labels, self.boxes):
            if len(box) != grid.dims:
                raise GridError(f"box {label!r} has {len(box)} axes, grid has {grid.dims}")
            idx = []
            for ax, (lo, hi) in enumerate(box):
                h, x0, n = grid.spacing[ax], grid.origin[ax], grid.points[ax]
                pair = []
                for edge in (lo, hi):
                    f = (edge - x0) / h
                    i = int(round(f))
                    if abs(f - i) > 1e-9 * max(1.0, abs(f)):
                        raise GridError(f"edge {edge} of box {label!r} is not on a grid node")
                    if not 0 <= i <= n:
                        raise GridError(f"edge {edge} of box {label!r} lies outside the grid")
                    pair.append(i)
                idx.append(tuple(pair))
            out.append(tuple(idx))
        return out

    def masks(self, grid: GridSpec) -> list[np.ndarray]:
        masks = []
        for bounds in self.index_bounds(grid):
            m = np.zeros(grid.shape, dtype=bool)
            m[tuple(slice(lo, hi) for lo, hi in bounds)] = True
            masks.append(m)
        return masks

    def locate(self, positions) -> np.ndarray:
        """Box index for each position (shape ``(n, dims)`` or ``(n,)``); -1 is "ex"."""
        pos = np.asarray(positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        out = np.full(pos.shape[0], -1, dtype=int)
        for k, box in enumerate(self.boxes):
            inside = np.ones(pos.shape[0], dtype=bool)
            for ax, (lo, hi) in enumerate(box):
                inside &= (pos[:, ax] >= lo) & (pos[:, ax] < hi)
            out[inside] = k
        return out

    def label_of(self, index: int) -> str:
        return "ex" if index < 0 else self.labels[index]


def _fft(a: np.ndarray, dims: int) -> np.ndarray:
    return np.fft.fftn(a, axes=tuple(range(dims)))


def _ifft(a: np.ndarray, dims: int) -> np.ndarray:
    return np.fft.ifftn(a, axes=tuple(range(dims)))


def boundary_amplitude(field: WaveField) -> float:
    """Largest ``|psi|`` on the outermost grid nodes, relative to the peak."""
    peak = np.max(np.abs(field.amplitudes))
    if peak == 0:
        return 0.0
    edge = 0.0
    a = np.abs(field.amplitudes)
    for ax in range(field.grid.dims):
        edge = max(edge, np.max(np.take(a, [0, -1], axis=ax)))
    return float(edge / peak)


def synthesize_packets(grid: GridSpec, spin_dim: int, params: Sequence[tuple[PacketParams, int]],
                       normalize: bool = True) -> WaveField:
    """Superpose Gaussian packets, each placed in one spin component.

    Packet ``m`` is ``c_m sigma_m^{-d/2} (2 pi)^{-d/4} e^{i alpha_m}
    e^{i p_m x / hbar} exp(-(x - x_m)^2 / 4 sigma_m^2)``.  The momentum phase
    is ``+i p x`` so that the packet carries mean momentum ``+p`` and moves
    with velocity ``+p/m`` under :func:`free_propagate`.
    """
    if spin_dim < 1:
        raise GridError("spin_dim must be positive")
    mesh = grid.mesh()
    amp = np.zeros(grid.shape + (spin_dim,), dtype=complex)
    lo = np.array(grid.origin)
    hi = lo + np.array(grid.extent) - np.array(grid.spacing)
    d = grid.dims
    for p, spin_index in params:
        if not 0 <= spin_index < spin_dim:
            raise GridError(f"spin index {spin_index} out of range")
        if len(p.center) != d or len(p.momentum) != d:
            raise GridError("packet center/momentum dimension does not match the grid")
        c = np.array(p.center)
        if np.any(c - 5 * p.width < lo) or np.any(c + 5 * p.width > hi):
            raise GridError(f"packet at {p.center} with width {p.width} touches the grid boundary")
        r2 = sum((x - xc) ** 2 for x, xc in zip(mesh, p.center))
        kx = sum(x * pk for x, pk in zip(mesh, p.momentum)) / grid.hbar
        amp[..., spin_index] += (
            p.weight * p.width ** (-d / 2) * (2 * np.pi) ** (-d / 4)
            * np.exp(1j * (p.phase + kx) - r2 / (4 * p.width**2))
        )
    out = WaveField(grid, amp)
    if out.norm() == 0:
        raise ValueError("packet superposition has zero norm")
    if boundary_amplitude(out) >= BOUNDARY_TOL:
        raise GridError(f"boundary amplitude {boundary_amplitude(out):.2e} >= {BOUNDARY_TOL}; enlarge the grid")
    return out.normalized() if normalize else out


def free_propagate(field: WaveField, duration: float) -> WaveField:
    """Apply ``exp(-i t P^2 / 2 m hbar)`` in momentum space."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if duration == 0:
        return field
    g = field.grid
    phase = np.exp(-1j * duration * g.hbar * g.k_squared() / (2 * g.mass))
    psi_k = _fft(field.amplitudes, g.dims) * phase[..., None]
    return field.replace(_ifft(psi_k, g.dims), field.time + duration)


def potential_from_regions(grid: GridSpec, regions: Region, etas) -> np.ndarray:
    etas = np.asarray(etas, dtype=float).ravel()
    if etas.size != len(regions):
        raise ValueError(f"{etas.size} energies for {len(regions)} boxes")
    v = np.zeros(grid.shape)
    for mask, eta in zip(regions.masks(grid), etas):
        v[mask] = eta
    return v


def apply_piecewise_impulse(field: WaveField, regions: Region, etas, tau: float) -> WaveField:
    """Multiply amplitudes inside box ``k`` by ``exp(-i eta_k tau / hbar)``."""
    etas = np.asarray(etas, dtype=float).ravel()
    if etas.size != len(regions):
        raise ValueError(f"{etas.size} energies for {len(regions)} boxes")
    factor = np.ones(field.grid.shape, dtype=complex)
    for mask, eta in zip(regions.masks(field.grid), etas):
        if eta != 0.0:
            factor[mask] = np.exp(-1j * eta * tau / field.grid.hbar)
    return field.replace(field.amplitudes * factor[..., None])


def deflection_multipliers(spin_dim: int) -> np.ndarray:
    """``m/s`` for ``m = s, s-1, ..., -s``: +-1 for spin 1/2, (1, 0, -1) for spin 1."""
    if spin_dim < 2:
        raise GridError("deflection needs spin_dim >= 2")
    s = (spin_dim - 1) / 2
    return (s - np.arange(spin_dim)) / s


def apply_sg_deflection(field: WaveField, alpha, delta_p, axis: int = 0) -> WaveField:
    """Stern-Gerlach imprint: component ``m`` gets ``exp(i alpha_m) exp(i z dp_m / hbar)``.

    Scalars are spread over the components with :func:`deflection_multipliers`;
    sequences give ``alpha_m`` and ``dp_m`` per component directly.
    """
    n = field.spin_dim
    if np.ndim(alpha) == 0 or np.ndim(delta_p) == 0:
        mult = deflection_multipliers(n)
    alphas = mult * alpha if np.ndim(alpha) == 0 else np.asarray(alpha, dtype=float)
    kicks = mult * delta_p if np.ndim(delta_p) == 0 else np.asarray(delta_p, dtype=float)
    if alphas.size != n or kicks.size != n:
        raise GridError(f"need {n} per-component deflection values")
    if not 0 <= axis < field.grid.dims:
        raise GridError(f"axis {axis} not in grid")
    z = field.grid.mesh()[axis]
    factor = np.exp(1j * (alphas[None, :] + z.reshape(-1, 1) * kicks[None, :] / field.grid.hbar))
    return field.replace(field.amplitudes * factor.reshape(field.amplitudes.shape))


def split_step_potential(field: WaveField, potential: np.ndarray, dt: float, steps: int) -> WaveField:
    """Strang splitting with a static potential sampled on the grid."""
    g = field.grid
    v = np.asarray(potential, dtype=float)
    if v.shape != g.shape:
        raise GridError("potential does not match the grid")
    if dt <= 0 or steps < 0:
        raise ValueError("need dt > 0 and steps >= 0")
    if dt * np.max(np.abs(v)) / g.hbar >= 0.1:
        raise ValueError(f"accuracy guard: dt*max|V| = {dt * np.max(np.abs(v)):.3g} must be < 0.1")
    if steps == 0:
        return field
    half = np.exp(-0.5j * dt * v / g.hbar)[..., None]
    full = half * half
    kin = np.exp(-1j * dt * g.hbar * g.k_squared() / (2 * g.mass))[..., None]
    psi = field.amplitudes * half
    for s in range(steps):
        psi = _ifft(_fft(psi, g.dims) * kin, g.dims)
        psi = psi * (half if s == steps - 1 else full)
    return field.replace(psi, field.time + dt * steps)


def split_step_evolve(field: WaveField, regions: Region, etas, dt: float, steps: int) -> WaveField:
    """Full ``exp(-i t (K + V))`` for a piecewise-constant box potential."""
    return split_step_potential(field, potential_from_regions(field.grid, regions, etas), dt, steps)


def _as_branches(branches) -> list[WaveField]:
    if isinstance(branches, WaveField):
        return branches.components()
    out = list(branches)
    if not out:
        raise ValueError("no branches given")
    for b in out[1:]:
        _same_grid(out[0], b)
    return out


def _central_derivative(a: np.ndarray, order: int, axis: int, h: float) -> np.ndarray:
    """Central differences along ``axis`` (periodic), built from the 3-point stencils."""
    out = a
    for _ in range(order // 2):
        out = (np.roll(out, -1, axis) - 2 * out + np.roll(out, 1, axis)) / h**2
    if order % 2:
        out = (np.roll(out, -1, axis) - np.roll(out, 1, axis)) / (2 * h)
    return out


@dataclass(frozen=True)
class BranchCoincidence:
    box: str
    mass: float
    interior_mass: float
    other_box_mass: float
    ex_mass: float
    exterior_mass: float
    boundary_derivatives: tuple[float, ...]
    passes: bool

    def as_dict(self) -> dict:
        return {
            "box": self.box, "mass": self.mass, "interior_mass": self.interior_mass,
            "other_box_mass": self.other_box_mass, "ex_mass": self.ex_mass,
            "exterior_mass": self.exterior_mass,
            "boundary_derivatives": list(self.boundary_derivatives), "passes": self.passes,
        }


@dataclass(frozen=True)
class CoincidenceReport:
    branches: tuple[BranchCoincidence, ...]
    order: int
    mass_tol: float
    derivative_tol: float

    @property
    def passes(self) -> bool:
        return all(b.passes for b in self.branches)

    def as_dict(self) -> dict:
        return {"passes": self.passes, "order": self.order, "mass_tol": self.mass_tol,
                "derivative_tol": self.derivative_tol,
                "branches": [b.as_dict() for b in self.branches]}


def coincidence_report(branches, regions: Region, order: int = 2, mass_tol: float = 1e-6,
                       derivative_tol: float = 1e-2) -> CoincidenceReport:
    """Check that each branch sits wholly inside one detector box.

    Each branch is matched to the box holding most of its mass.  Masses are
    absolute; the pass test uses the exterior fraction ``< mass_tol``.
    ``boundary_derivatives[r]`` is ``max |d^r psi|`` over the box edge nodes
    divided by ``max |d^r psi|`` over the whole grid, for ``r = 0..order``;
    each must be ``< derivative_tol``.  A zero branch passes vacuously.
    """
    items = _as_branches(branches)
    grid = items[0].grid
    masks = regions.masks(grid)
    bounds = regions.index_bounds(grid)
    dv = grid.cell_volume
    out = []
    for br in items:
        rho = br.density()
        mass = float(np.sum(rho) * dv)
        box_mass = [float(np.sum(rho[m]) * dv) for m in masks]
        if mass == 0.0 or not masks:
            out.append(BranchCoincidence("ex", mass, 0.0, 0.0, mass, mass,
                                         (0.0,) * (order + 1), mass == 0.0))
            continue
        k = int(np.argmax(box_mass))
        interior = box_mass[k]
        other = sum(box_mass) - interior
        ex = max(mass - sum(box_mass), 0.0)
        exterior = max(mass - interior, 0.0)
        ratios = []
        for r in range(order + 1):
            worst_edge, worst_all = 0.0, 0.0
            for ax in range(grid.dims):
                d = np.abs(_central_derivative(br.amplitudes, r, ax, grid.spacing[ax]))
                worst_all = max(worst_all, float(np.max(d)))
                lo, hi = bounds[k][ax]
                for edge in (lo, hi % grid.points[ax]):
                    sl = [slice(b_lo, b_hi) for b_lo, b_hi in bounds[k]]
                    sl[ax] = edge
                    worst_edge = max(worst_edge, float(np.max(d[tuple(sl)])))
            ratios.append(worst_edge / worst_all if worst_all > 0 else 0.0)
        ok = exterior < mass_tol * mass and all(x < derivative_tol for x in ratios)
        out.append(BranchCoincidence(regions.labels[k], mass, interior, other, ex, exterior,
                                     tuple(ratios), ok))
    return CoincidenceReport(tuple(out), order, mass_tol, derivative_tol)


def impulse_branches(branches, regions: Region, etas, tau: float, check: bool = True,
                     report: CoincidenceReport | None = None) -> WaveField:
    """``sum_m exp(-i tau eta_m) psi_m`` with each branch phased by its own box.

    With ``check`` the strong coincidence report must pass first.
    """
    items = _as_branches(branches)
    etas = np.asarray(etas, dtype=float).ravel()
    if etas.size != len(regions):
        raise ValueError(f"{etas.size} energies for {len(regions)} boxes")
    rep = report if report is not None else coincidence_report(items, regions)
    if check and not rep.passes:
        bad = [b.box for b in rep.branches if not b.passes]
        raise CoincidenceError(f"coincidence condition violated for branches matched to boxes {bad}")
    hbar = items[0].grid.hbar
    total = None
    for br, info in zip(items, rep.branches):
        phase = 1.0 if info.box == "ex" else np.exp(-1j * tau * etas[regions.labels.index(info.box)] / hbar)
        term = br.scaled(phase)
        total = term if total is None else total + term
    return total


def extended_impulsive_evolve(branches, regions: Region, etas, tau: float, check: bool = True,
                              report: CoincidenceReport | None = None) -> WaveField:
    """``sum_m exp(-i tau eta_m) c_m psi_m^free(t + tau)``.

    Each branch takes the phase of the box it is coincident with, then the
    sum is freely propagated for ``tau``.
    """
    return free_propagate(impulse_branches(branches, regions, etas, tau, check, report), tau)


def spectral_gradient(field: WaveField) -> list[np.ndarray]:
    g = field.grid
    psi_k = _fft(field.amplitudes, g.dims)
    return [_ifft(1j * k[..., None] * psi_k, g.dims) for k in g.k_mesh()]


def spectral_laplacian(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Laplacian of an array shaped ``grid.shape + (...)`` via FFT."""
    extra = a.ndim - grid.dims
    k2 = grid.k_squared().reshape(grid.shape + (1,) * extra)
    return _ifft(-k2 * _fft(a, grid.dims), grid.dims)


def momentum_expectation(field: WaveField) -> np.ndarray:
    """``<P>`` per axis, computed in momentum space (normalized by the field norm)."""
    g = field.grid
    w = np.sum(np.abs(_fft(field.amplitudes, g.dims)) ** 2, axis=-1)
    total = np.sum(w)
    if total == 0:
        return np.zeros(g.dims)
    return np.array([g.hbar * np.sum(k * w) / total for k in g.k_mesh()])


@dataclass(frozen=True)
class KickReport:
    measured: np.ndarray
    predicted: np.ndarray

    @property
    def deviation(self) -> float:
        return float(np.max(np.abs(self.measured - self.predicted)))

    def ok(self, tol: float = 1e-6) -> bool:
        return self.deviation < tol


def kick_check(field: WaveField, potential, tau: float, grad_v=None) -> KickReport:
    """Momentum kick of the plain impulsive step ``psi -> exp(-i V tau / hbar) psi``.

    ``measured`` is the spectral ``<P>`` difference; ``predicted`` is
    ``-tau * int grad V |psi|^2`` by grid quadrature.  ``grad_v`` defaults to
    second-order finite differences of ``potential``.
    """
    g = field.grid
    v = np.asarray(potential, dtype=float)
    if v.shape != g.shape:
        raise GridError("potential does not match the grid")
    after = field.replace(field.amplitudes * np.exp(-1j * v * tau / g.hbar)[..., None])
    measured = momentum_expectation(after) - momentum_expectation(field)
    if grad_v is None:
        grad_v = np.gradient(v, *g.spacing, edge_order=2)
        grad_v = [grad_v] if g.dims == 1 else list(grad_v)
    elif g.dims == 1 and np.ndim(grad_v) == 1:
        grad_v = [grad_v]
    rho = field.density()
    mass = np.sum(rho)
    predicted = np.array([-tau * np.sum(np.asarray(gv) * rho) / mass for gv in grad_v])
    return KickReport(measured, predicted)


def overlap_integral(f1: WaveField, f2: WaveField) -> tuple[complex, float]:
    """``<f1|f2>`` and ``int |f1|^2 |f2|^2`` by grid quadrature."""
    _same_grid(f1, f2)
    dv = f1.grid.cell_volume
    inner = complex(np.sum(np.conj(f1.amplitudes) * f2.amplitudes) * dv)
    dens = float(np.sum(f1.density() * f2.density()) * dv)
    return inner, dens


@dataclass(frozen=True)
class CommutatorReport:
    action_max: float
    reference_max: float | None
    deviation: float | None
    psi_max: float
    tol: float = 1e-6

    @property
    def passes(self) -> bool:
        if self.deviation is not None:
            return self.deviation < self.tol * max(self.reference_max, self.psi_max, 1e-300)
        return self.action_max < self.tol * self.psi_max


def commutator_action_check(field: WaveField, potential=None, *, regions: Region | None = None,
                            etas=None, grad_v=None, lap_v=None, tol: float = 1e-6) -> CommutatorReport:
    """Evaluate ``[K, V] psi`` on the grid with ``K = -(hbar^2/2m) Laplacian``.

    With a smooth ``potential`` the result is compared against
    ``-(hbar^2/2m)(Lap V psi + 2 grad V . grad psi)``.  With ``regions`` and
    ``etas`` the potential is the box step and only the size of the action is
    reported; it should vanish when the branch edges carry no amplitude.
    """
    g = field.grid
    if regions is not None:
        v = potential_from_regions(g, regions, etas)
    elif potential is not None:
        v = np.asarray(potential, dtype=float)
    else:
        raise ValueError("give a smooth potential or regions with etas")
    coef = -(g.hbar**2) / (2 * g.mass)
    psi = field.amplitudes
    vv = v[..., None]
    action = coef * (spectral_laplacian(vv * psi, g) - vv * spectral_laplacian(psi, g))
    psi_max = float(np.max(np.abs(psi)))
    if regions is not None:
        return CommutatorReport(float(np.max(np.abs(action))), None, None, psi_max, tol)
    if grad_v is None:
        gv = np.gradient(v, *g.spacing, edge_order=2)
        grad_v = [gv] if g.dims == 1 else list(gv)
    elif g.dims == 1 and np.ndim(grad_v) == 1:
        grad_v = [grad_v]
    if lap_v is None:
        lap_v = sum(np.gradient(gv, g.spacing[i], axis=i, edge_order=2) for i, gv in enumerate(grad_v))
    grad_psi = spectral_gradient(field)
    ref = coef * (np.asarray(lap_v)[..., None] * psi
                  + 2 * sum(np.asarray(gv)[..., None] * dp for gv, dp in zip(grad_v, grad_psi)))
    return CommutatorReport(float(np.max(np.abs(action))), float(np.max(np.abs(ref))),
                            float(np.max(np.abs(action - ref))), psi_max, tol)


def impulsive_timescale(field: WaveField, potential) -> float:
    """``Delta K / |d<K>/dt|`` for ``H = K + V`` (diagnostic only).

    Returns ``inf`` when the potential does not change ``<K>`` at this instant.
    """
    g = field.grid
    v = np.asarray(potential, dtype=float)[..., None]
    psi = field.amplitudes
    coef = -(g.hbar**2) / (2 * g.mass)
    k_psi = coef * spectral_laplacian(psi, g)
    dv = g.cell_volume
    n2 = np.sum(np.abs(psi) ** 2) * dv
    k_mean = np.real(np.sum(np.conj(psi) * k_psi) * dv) / n2
    k2_mean = np.sum(np.abs(k_psi) ** 2) * dv / n2
    spread = np.sqrt(max(k2_mean - k_mean**2, 0.0))
    # d<K>/dt = (i/hbar) <[V, K]>
    comm = np.sum(np.conj(psi) * (v * k_psi)) - np.sum(np.conj(psi) * coef * spectral_laplacian(v * psi, g))
    rate = abs(np.real(1j * comm * dv / n2 / g.hbar))
    return float(spread / rate) if rate > 0 else float("inf")


def snapshot_rows(field: WaveField):
    """Rows ``(coords..., spin, re, im, density)`` for every node and component."""
    g = field.grid
    coords = [m.ravel() for m in g.mesh()]
    amp = field.amplitudes.reshape(-1, field.spin_dim)
    for n in range(amp.shape[0]):
        for j in range(field.spin_dim):
            z = amp[n, j]
            yield [*(c[n] for c in coords), j, z.real, z.imag, abs(z) ** 2]


def write_snapshot(field: WaveField, csv_path, json_path=None):
    """Field values as CSV plus optional grid/time metadata as JSON."""
    from .outputs import write_csv, write_json

    header = ["x", "y"][: field.grid.dims] + ["spin", "re", "im", "density"]
    write_csv(csv_path, header, snapshot_rows(field))
    if json_path is not None:
        g = field.grid
        write_json(json_path, {"extent": list(g.extent), "points": list(g.points), "hbar": g.hbar,
                               "mass": g.mass, "spin_dim": field.spin_dim, "time_stamp": field.time})
