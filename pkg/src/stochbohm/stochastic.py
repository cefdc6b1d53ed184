"""Stochastic apparatus parameters, pointer overlaps and averaged densities.

An apparatus pointer ``Phi0(y)`` is a normalised Gaussian of width ``w`` with
an optional carrier ``exp(i k0 y)``.  An outcome ``k`` shifts it by
``eta_k * tau``.  Cross-branch interference in the system density is weighted
by the pointer overlap, averaged over the parameter density; a wide density
against a rapidly oscillating pointer drives the off-diagonal weights to zero
while leaving the diagonal at one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.stats import norm

from .grid_field import WaveField, _same_grid
from .outputs import write_csv
from .rng import substream

QUAD_NODES = 64
MAX_QUAD_DIMS = 3


# ---------------------------------------------------------------- marginals

@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high) and self.high > self.low):
            raise ValueError(f"uniform marginal needs low < high, got [{self.low}, {self.high}]")

    @property
    def spread(self) -> float:
        return self.high - self.low

    def nodes(self, n: int = QUAD_NODES, panels: int = 1):
        x, w = leggauss(n)
        edges = np.linspace(self.low, self.high, panels + 1)
        half = np.diff(edges) / 2
        mid = (edges[:-1] + edges[1:]) / 2
        xs = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        ws = (half[:, None] * w[None, :]).ravel() / self.spread
        return xs, ws

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, n)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and self.std > 0):
            raise ValueError("gaussian marginal needs a finite mean and std > 0")

    @property
    def spread(self) -> float:
        return self.std

    def nodes(self, n: int = QUAD_NODES, panels: int = 1):
        x, w = hermegauss(n)
        return self.mean + self.std * x, w / np.sqrt(2 * np.pi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.std, n)


@dataclass(frozen=True)
class Fixed:
    value: float

    spread = 0.0

    def nodes(self, n: int = QUAD_NODES, panels: int = 1):
        return np.array([float(self.value)]), np.array([1.0])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, float(self.value))


@dataclass(frozen=True)
class Tied:
    """This parameter always equals parameter ``source`` plus ``offset``."""

    source: int
    offset: float = 0.0


Marginal = Uniform | Gaussian | Fixed


def marginal_from_dict(d: dict):
    kind = d["kind"]
    if kind == "uniform":
        return Uniform(d["low"], d["high"])
    if kind == "gaussian":
        return Gaussian(d["mean"], d["std"])
    if kind == "fixed":
        return Fixed(d["value"])
    if kind == "tied":
        return Tied(int(d["source"]), d.get("offset", 0.0))
    raise ValueError(f"unknown marginal kind {kind!r}")


def marginal_to_dict(m) -> dict:
    if isinstance(m, Uniform):
        return {"kind": "uniform", "low": m.low, "high": m.high}
    if isinstance(m, Gaussian):
        return {"kind": "gaussian", "mean": m.mean, "std": m.std}
    if isinstance(m, Fixed):
        return {"kind": "fixed", "value": m.value}
    return {"kind": "tied", "source": m.source, "offset": m.offset}


# ------------------------------------------------------------ params/density

@dataclass
class StochasticParams:
    """Batch of parameter draws: ``etas`` is ``(M, n)``, ``y_offset`` is ``(M,)``."""

    etas: np.ndarray
    y_offset: np.ndarray

    def __post_init__(self):
        self.etas = np.atleast_2d(np.asarray(self.etas, dtype=float))
        self.y_offset = np.broadcast_to(np.asarray(self.y_offset, dtype=float), (self.etas.shape[0],))
        if not (np.all(np.isfinite(self.etas)) and np.all(np.isfinite(self.y_offset))):
            raise ValueError("stochastic parameters must be finite")

    def __len__(self) -> int:
        return self.etas.shape[0]


@dataclass(frozen=True)
class ParamDensity:
    """Product density over ``eta_1..eta_n`` and the pointer offset ``y``.

    Marginals may be :class:`Tied` to an earlier-or-later free parameter, which
    expresses perfectly correlated phases without a joint density.
    """

    etas: tuple
    y: Uniform | Gaussian | Fixed = Fixed(0.0)

    def __post_init__(self):
        etas = tuple(self.etas)
        object.__setattr__(self, "etas", etas)
        if not etas:
            raise ValueError("density needs at least one eta marginal")
        for k, m in enumerate(etas):
            if isinstance(m, Tied):
                if not 0 <= m.source < len(etas) or isinstance(etas[m.source], Tied):
                    raise ValueError(f"eta {k} is tied to an invalid source {m.source}")

    @property
    def n(self) -> int:
        return len(self.etas)

    @property
    def independent(self) -> bool:
        return not any(isinstance(m, Tied) for m in self.etas)

    def free_of(self, k: int) -> int:
        m = self.etas[k]
        return m.source if isinstance(m, Tied) else k

    def marginal(self, k: int):
        m = self.etas[k]
        if isinstance(m, Tied):
            src = self.etas[m.source]
            if isinstance(src, Uniform):
                return Uniform(src.low + m.offset, src.high + m.offset)
            if isinstance(src, Gaussian):
                return Gaussian(src.mean + m.offset, src.std)
            return Fixed(src.value + m.offset)
        return m

    def _expand(self, free_vals: dict[int, np.ndarray], size: int) -> np.ndarray:
        etas = np.zeros((size, self.n))
        for k, m in enumerate(self.etas):
            if isinstance(m, Tied):
                etas[:, k] = free_vals[m.source] + m.offset
            elif k in free_vals:
                etas[:, k] = free_vals[k]
            else:
                etas[:, k] = np.nan
        return etas

    def quadrature(self, needed: Sequence[int] | None = None, use_y: bool = True,
                   nodes: int = QUAD_NODES, panels: int | Sequence[int] = 1):
        """Tensor-product nodes over the free parameters ``needed`` depends on."""
        needed = range(self.n) if needed is None else needed
        free = sorted({self.free_of(k) for k in needed})
        margs = [self.etas[k] for k in free] + ([self.y] if use_y else [])
        if np.ndim(panels) == 0:
            panels = [int(panels)] * len(margs)
        rules = [m.nodes(nodes, p) for m, p in zip(margs, panels)]
        active = sum(1 for m in margs if not isinstance(m, Fixed))
        if active > MAX_QUAD_DIMS:
            raise ValueError(f"{active} stochastic dimensions exceed the quadrature limit "
                             f"of {MAX_QUAD_DIMS}; use Monte Carlo")
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        wgrid = np.ones(grids[0].shape)
        for i, r in enumerate(rules):
            shape = [1] * len(rules)
            shape[i] = -1
            wgrid = wgrid * r[1].reshape(shape)
        size = wgrid.size
        vals = {k: g.ravel() for k, g in zip(free, grids)}
        y = grids[-1].ravel() if use_y else np.zeros(size)
        etas = self._expand(vals, size)
        if needed is not None:
            missing = [k for k in range(self.n) if self.free_of(k) not in free]
            etas[:, missing] = 0.0
        return StochasticParams(etas, y), wgrid.ravel()

    def sample(self, n: int, rng: np.random.Generator) -> StochasticParams:
        vals = {k: m.sample(rng, n) for k, m in enumerate(self.etas) if not isinstance(m, Tied)}
        y = self.y.sample(rng, n)
        return StochasticParams(self._expand(vals, n), y)

    def to_dict(self) -> dict:
        return {"etas": [marginal_to_dict(m) for m in self.etas], "y": marginal_to_dict(self.y)}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamDensity":
        return cls(tuple(marginal_from_dict(m) for m in d["etas"]),
                   marginal_from_dict(d.get("y", {"kind": "fixed", "value": 0.0})))

    @classmethod
    def default(cls, intervals: Sequence[tuple[float, float]], pointer_width: float) -> "ParamDensity":
        """Independent uniform ``eta_k`` and ``y`` uniform over one pointer width."""
        return cls(tuple(Uniform(a, b) for a, b in intervals),
                   Uniform(-pointer_width / 2, pointer_width / 2))


@dataclass(frozen=True)
class Average:
    value: complex
    stderr: float = 0.0
    method: str = "quadrature"
    evaluations: int = 0

    def __complex__(self) -> complex:
        return complex(self.value)

    @property
    def real(self) -> float:
        return float(np.real(self.value))


def overbar_average(u: Callable[[StochasticParams], np.ndarray], density: ParamDensity,
                    method: str = "quadrature", *, samples: int = 100_000, seed: int = 0,
                    needed: Sequence[int] | None = None, use_y: bool = True,
                    nodes: int = QUAD_NODES, panels: int | Sequence[int] = 1) -> Average:
    """Normalised expectation of ``u`` over ``density``.

    ``u`` is vectorised: it receives a batch of draws and returns one value
    per draw.  ``needed`` lists the eta indices ``u`` depends on; the rest
    integrate out to one because the density is a product.
    """
    if method == "quadrature":
        params, w = density.quadrature(needed, use_y, nodes, panels)
        vals = np.asarray(u(params), dtype=complex)
        if vals.shape != (len(params),):
            raise ValueError("u must return one value per parameter draw")
        if not np.all(np.isfinite(vals)):
            raise ValueError("u is not finite on the density support")
        return Average(complex(np.sum(w * vals) / np.sum(w)), 0.0, method, len(params))
    if method == "monte_carlo":
        rng = substream(seed, "stochastic")
        params = density.sample(samples, rng)
        vals = np.asarray(u(params), dtype=complex)
        if not np.all(np.isfinite(vals)):
            raise ValueError("u produced non-finite samples")
        err = float(np.std(vals, ddof=1) / np.sqrt(samples)) if samples > 1 else float("inf")
        return Average(complex(np.mean(vals)), err, method, samples)
    raise ValueError(f"unknown averaging method {method!r}")


# ------------------------------------------------------------------ pointers

@dataclass(frozen=True)
class PointerModel:
    """``Phi0(y) = (2 pi w^2)^(-1/4) exp(-y^2 / 4w^2) exp(i k0 y)``."""

    width: float
    k0: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("pointer width must be positive")

    @property
    def quasi_classical(self) -> bool:
        return self.k0 * self.width >= 20

    def profile(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        w = self.width
        return (2 * np.pi * w * w) ** -0.25 * np.exp(-(y * y) / (4 * w * w) + 1j * self.k0 * y)

    def overlap_shift(self, a, b) -> np.ndarray:
        """``int dy Phi0(y - a) Phi0*(y - b)`` in closed form."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return np.exp(-1j * self.k0 * d - d * d / (8 * self.width**2))


def pointer_overlap(model: PointerModel, eta_k, eta_kp, tau: float):
    """Overlap of the pointers shifted by ``eta_k tau`` and ``eta_k' tau``."""
    out = model.overlap_shift(np.multiply(eta_k, tau), np.multiply(eta_kp, tau))
    return complex(out) if np.ndim(out) == 0 else out


def _panel_rule(edges: np.ndarray, n: int = QUAD_NODES):
    x, w = leggauss(n)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _split(breaks: Sequence[float], scale: float) -> np.ndarray:
    """Panel edges through ``breaks``, each panel holding a few oscillations of ``scale``."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    edges = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        m = int(np.clip(np.ceil((b - a) * scale / (2 * np.pi * 4)), 1, 4096))
        edges.extend(np.linspace(a, b, m + 1)[1:])
    return np.array(edges)


def difference_rule(mx, my, scale: float, n: int = QUAD_NODES):
    """Nodes and weights for the density of ``X - Y`` with independent marginals.

    ``scale`` is the largest angular frequency of the integrand in ``X - Y``;
    panels are sized so each holds a few periods.  Kinks of the trapezoidal
    uniform-minus-uniform density sit on panel edges.
    """
    if isinstance(mx, Fixed) and isinstance(my, Fixed):
        return np.array([mx.value - my.value]), np.array([1.0])
    if isinstance(my, Fixed):
        mx, shift, sign = mx, -my.value, 1.0
    elif isinstance(mx, Fixed):
        mx, shift, sign = my, mx.value, -1.0
    else:
        shift = None
    if shift is not None:  # one random variable, shifted and possibly reflected
        if isinstance(mx, Uniform):
            xs, ws = _panel_rule(_split([mx.low, mx.high], scale), n)
            ws = ws / mx.spread
        else:
            xs, ws = _panel_rule(_split([mx.mean - 12 * mx.std, mx.mean + 12 * mx.std], scale), n)
            ws = ws * norm.pdf(xs, mx.mean, mx.std)
        return sign * xs + shift, ws
    if isinstance(mx, Uniform) and isinstance(my, Uniform):
        lo, hi = mx.low - my.high, mx.high - my.low
        xs, ws = _panel_rule(_split([lo, mx.low - my.low, mx.high - my.high, hi], scale), n)
        over = np.minimum(mx.high, xs + my.high) - np.maximum(mx.low, xs + my.low)
        return xs, ws * np.maximum(over, 0.0) / (mx.spread * my.spread)
    if isinstance(mx, Gaussian) and isinstance(my, Gaussian):
        mu, sd = mx.mean - my.mean, np.hypot(mx.std, my.std)
        xs, ws = _panel_rule(_split([mu - 12 * sd, mu + 12 * sd], scale), n)
        return xs, ws * norm.pdf(xs, mu, sd)
    if isinstance(mx, Gaussian):  # X - Y = -(Y - X)
        xs, ws = difference_rule(my, mx, scale, n)
        return -xs, ws
    u, g = mx, my
    lo, hi = u.low - g.mean - 12 * g.std, u.high - g.mean + 12 * g.std
    xs, ws = _panel_rule(_split([lo, u.low - g.mean, u.high - g.mean, hi], scale), n)
    dens = (norm.cdf((u.high - xs - g.mean) / g.std) - norm.cdf((u.low - xs - g.mean) / g.std)) / u.spread
    return xs, ws * dens


def _pairwise(density: ParamDensity, fn: Callable[[np.ndarray], np.ndarray],
              method: str, scale: float, samples: int, seed: int) -> np.ndarray:
    """Hermitian matrix of averages of ``fn(eta_k - eta_k')``, unit diagonal."""
    n = density.n
    mat = np.eye(n, dtype=complex)
    for k, kp in itertools.combinations(range(n), 2):
        if method == "quadrature":
            if density.free_of(k) == density.free_of(kp):
                off = [m.offset if isinstance(m, Tied) else 0.0 for m in (density.etas[k], density.etas[kp])]
                xs, ws = np.array([off[0] - off[1]]), np.array([1.0])
            else:
                xs, ws = difference_rule(density.marginal(k), density.marginal(kp), scale)
            vals = fn(xs)
            if not np.all(np.isfinite(vals)):
                raise ValueError("integrand is not finite on the density support")
            value = complex(np.sum(ws * vals) / np.sum(ws))
        else:
            value = overbar_average(lambda p: fn(p.etas[:, k] - p.etas[:, kp]), density, method,
                                    samples=samples, seed=seed).value
        mat[k, kp] = value
        mat[kp, k] = np.conj(value)
    return mat


def decoherence_matrix(model: PointerModel, density: ParamDensity, tau: float,
                       method: str = "quadrature", *, samples: int = 100_000, seed: int = 0) -> np.ndarray:
    """Averaged pointer overlaps over ``(k, k')``; unit diagonal, Hermitian.

    The closed-form overlap is already integrated over ``y``, so the
    ``y``-marginal does not enter.
    """
    scale = tau * (abs(model.k0) + 1.0 / model.width)
    return _pairwise(density, lambda d: model.overlap_shift(d * tau, 0.0), method, scale, samples, seed)


def phase_coherence_matrix(density: ParamDensity, tau: float, hbar: float = 1.0,
                           method: str = "quadrature", *, samples: int = 100_000, seed: int = 0) -> np.ndarray:
    """Average of ``exp(-i tau (eta_k - eta_k') / hbar)``: the weight of the
    cross term between branches that received different impulse phases."""
    scale = tau / hbar
    return _pairwise(density, lambda d: np.exp(-1j * tau * d / hbar), method, scale, samples, seed)


def max_off_diagonal(matrix: np.ndarray) -> float:
    m = np.abs(np.asarray(matrix))
    if m.shape[0] < 2:
        return 0.0
    return float(np.max(m[~np.eye(m.shape[0], dtype=bool)]))


# --------------------------------------------------------------- densities

def _branch_sums(coeffs, branches) -> list[np.ndarray]:
    """``Phi_k = sum_lambda c_{k,lambda} psi_{k,lambda}`` as amplitude arrays."""
    if len(coeffs) != len(branches):
        raise ValueError("coefficient and branch lists differ in length")
    flat = [f for fs in branches for f in fs]
    for f in flat[1:]:
        _same_grid(flat[0], f)
    total = sum(abs(complex(c)) ** 2 for cs in coeffs for c in cs)
    if abs(total - 1) > 1e-6:
        raise ValueError(f"coefficients are not normalised: sum |c|^2 = {total:.9g}")
    out = []
    for cs, fs in zip(coeffs, branches):
        if len(cs) != len(fs):
            raise ValueError("each k needs one coefficient per lambda branch")
        out.append(sum(complex(c) * np.asarray(f.amplitudes) for c, f in zip(cs, fs)))
    return out


def averaged_density(coeffs: Sequence[Sequence[complex]], branches: Sequence[Sequence[WaveField]],
                     matrix: np.ndarray) -> np.ndarray:
    """``sum_{k,k'} M_{kk'} Phi_k Phi_{k'}^*`` summed over spin, as a real array.

    ``coeffs[k][lam]`` and ``branches[k][lam]`` give the ``lambda`` branches of
    outcome ``k``; coherence inside each ``k`` is always kept.
    """
    sums = _branch_sums(coeffs, branches)
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (len(sums), len(sums)):
        raise ValueError("weight matrix does not match the number of outcomes")
    rho = np.zeros(sums[0].shape[:-1])
    for k, a in enumerate(sums):
        for kp, b in enumerate(sums):
            if matrix[k, kp] != 0:
                rho = rho + np.real(matrix[k, kp] * np.sum(a * np.conj(b), axis=-1))
    return rho


def single_run_density(coeffs, branches, model: PointerModel, etas: Sequence[float], tau: float,
                       y: float | None = None) -> np.ndarray:
    """System density for one draw of the parameters.

    With ``y=None`` the pointer coordinate is integrated out (overlap weights);
    otherwise the joint density at that pointer position is returned.
    """
    etas = np.asarray(etas, dtype=float)
    if y is None:
        m = model.overlap_shift(etas[:, None] * tau, etas[None, :] * tau)
        return averaged_density(coeffs, branches, m)
    phi = model.profile(y - etas * tau)
    return averaged_density(coeffs, branches, np.outer(phi, np.conj(phi)))


def branch_coherence_matrix(weights: Sequence[complex], matrix: np.ndarray) -> np.ndarray:
    """``W_{kk'} = c_k c_k'^* M_{kk'}``: the coarse-grained density-matrix report."""
    c = np.asarray(weights, dtype=complex)
    return np.outer(c, np.conj(c)) * np.asarray(matrix)


def write_matrix_csv(path, matrix: np.ndarray):
    m = np.asarray(matrix, dtype=complex)
    rows = ([k, kp, m[k, kp].real, m[k, kp].imag, abs(m[k, kp])]
            for k in range(m.shape[0]) for kp in range(m.shape[1]))
    return write_csv(path, ["k", "k_prime", "re", "im", "abs"], rows)


# --------------------------------------------------------- absolute standard

def neutral_shift(model: PointerModel, shift_low: float, tol: float = 1e-12) -> float:
    """Pointer displacement for the neutral component, below all outcome shifts,
    far enough that every overlap with a shifted pointer is below ``tol``."""
    gap = model.width * np.sqrt(8 * np.log(1 / tol))
    return float(shift_low - 1.25 * gap)


@dataclass
class AbsoluteStandard:
    """Apparatus state ``Phi_perp + sum_q a_q A_q`` with ``A_q = Phi0(y - s_q)``.

    The neutral component is the same pointer profile displaced to
    ``neutral``, which keeps it numerically orthogonal to every ``A_q``.
    """

    model: PointerModel
    weights: np.ndarray
    shifts: np.ndarray
    neutral: float
    neutral_weight: complex = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=complex)
        self.shifts = np.asarray(self.shifts, dtype=float)
        if self.weights.shape != self.shifts.shape:
            raise ValueError("one weight per pointer shift")

    @classmethod
    def build(cls, model: PointerModel, weights, shifts, tol: float = 1e-12, neutral_weight: complex = 1.0):
        shifts = np.asarray(shifts, dtype=float)
        return cls(model, weights, shifts, neutral_shift(model, shifts.min(), tol), neutral_weight)

    def orthogonality(self) -> float:
        """Largest ``|<Phi_perp | A_q>|``."""
        return float(np.max(np.abs(self.model.overlap_shift(self.neutral, self.shifts))))

    def check(self, tol: float = 1e-12) -> bool:
        return self.orthogonality() < tol

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = self.neutral_weight * self.model.profile(y - self.neutral)
        for a, s in zip(self.weights, self.shifts):
            out = out + a * self.model.profile(y - s)
        return out
