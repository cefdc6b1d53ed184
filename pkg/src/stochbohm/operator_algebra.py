"""Finite-dimensional spectral calculus on dense complex matrices.

Operators are plain ``numpy`` arrays of shape ``(dim, dim)``.  Projector
families are wrapped in :class:`ProjectorPartition`, which validates
orthogonality eagerly.  :func:`matrix_exp_oracle` is a scaling-and-squaring
power series that never looks at a spectral decomposition, so it can be used
to check every spectral shortcut in this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TOL = 1e-12


class PartitionError(ValueError):
    """A projector family is not orthogonal or not complete."""


def _as_operator(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("operator has non-finite entries")
    return a


def frobenius(a) -> float:
    return float(np.linalg.norm(a, "fro"))


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conjugate(a).T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def is_hermitian(a, tol: float = TOL) -> bool:
    a = np.asarray(a)
    return frobenius(a - dagger(a)) < tol


def is_unitary(u, tol: float = TOL) -> bool:
    u = np.asarray(u)
    return frobenius(dagger(u) @ u - np.eye(u.shape[0])) < tol


def is_projector(p, tol: float = TOL) -> bool:
    p = np.asarray(p)
    return frobenius(p @ p - p) < tol and is_hermitian(p, tol)


def make_projector(basis_vectors: Sequence) -> np.ndarray:
    """Orthogonal projector onto the span of ``basis_vectors``.

    The vectors are orthonormalized with modified Gram-Schmidt, run twice per
    vector.  Linearly dependent vectors are dropped silently; a zero vector is
    an error.
    """
    vecs = [np.asarray(v, dtype=complex).ravel() for v in basis_vectors]
    if not vecs:
        raise ValueError("need at least one basis vector")
    dim = vecs[0].size
    if any(v.size != dim for v in vecs):
        raise ValueError("basis vectors have inconsistent dimensions")
    ortho: list[np.ndarray] = []
    for v in vecs:
        scale = np.linalg.norm(v)
        if scale == 0.0 or not np.isfinite(scale):
            raise ValueError("zero (or non-finite) basis vector")
        w = v.copy()
        for _ in range(2):
            for q in ortho:
                w -= np.vdot(q, w) * q
        n = np.linalg.norm(w)
        if n > 1e-10 * scale:
            ortho.append(w / n)
    q = np.column_stack(ortho)
    return q @ dagger(q)


@dataclass(frozen=True)
class ProjectorPartition:
    """Ordered family of mutually orthogonal projectors.

    ``has_complement`` marks that the last member is the "ex" block added to
    complete the family to the identity.
    """

    projectors: tuple[np.ndarray, ...]
    has_complement: bool = False

    def __post_init__(self):
        projs = tuple(np.array(_as_operator(p)) for p in self.projectors)
        if not projs:
            raise PartitionError("empty partition")
        dim = projs[0].shape[0]
        for k, p in enumerate(projs):
            if p.shape[0] != dim:
                raise PartitionError(f"projector {k} has dim {p.shape[0]}, expected {dim}")
            if not is_projector(p):
                raise PartitionError(f"member {k} is not an orthogonal projector")
        for k in range(len(projs)):
            for j in range(k + 1, len(projs)):
                if frobenius(projs[k] @ projs[j]) > TOL:
                    raise PartitionError(f"members {k} and {j} are not orthogonal")
        for p in projs:
            p.setflags(write=False)
        object.__setattr__(self, "projectors", projs)

    @classmethod
    def with_complement(cls, projectors: Sequence) -> "ProjectorPartition":
        """Append ``I - sum(projectors)`` as the trailing "ex" member."""
        projs = [_as_operator(p) for p in projectors]
        rest = np.eye(projs[0].shape[0]) - sum(projs)
        if frobenius(rest) < TOL:
            return cls(tuple(projs))
        return cls(tuple(projs) + (rest,), has_complement=True)

    @classmethod
    def from_basis(cls, basis: np.ndarray, sizes: Sequence[int]) -> "ProjectorPartition":
        """Split the columns of a unitary ``basis`` into consecutive blocks."""
        basis = np.asarray(basis, dtype=complex)
        if sum(sizes) != basis.shape[1]:
            raise PartitionError("block sizes do not add up to the basis size")
        edges = np.cumsum([0, *sizes])
        projs = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            q = basis[:, lo:hi]
            projs.append(q @ dagger(q))
        return cls(tuple(projs))

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def __len__(self) -> int:
        return len(self.projectors)

    @property
    def is_complete(self) -> bool:
        return frobenius(sum(self.projectors) - np.eye(self.dim)) < TOL

    def require_complete(self) -> None:
        if not self.is_complete:
            raise PartitionError("partition does not sum to the identity")


def matrix_exp_oracle(a) -> np.ndarray:
    """Dense matrix exponential by scaling and squaring of the Taylor series."""
    a = _as_operator(a)
    n = a.shape[0]
    norm = np.linalg.norm(a, 1)
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    b = a / (2.0**s)
    result = np.eye(n, dtype=complex)
    term = np.eye(n, dtype=complex)
    for k in range(1, 60):
        term = term @ b / k
        result = result + term
        if np.linalg.norm(term, 1) <= 1e-18 * np.linalg.norm(result, 1):
            break
    for _ in range(s):
        result = result @ result
    return result


def coarse_grained_exp(partition: ProjectorPartition, alphas) -> np.ndarray:
    """``sum_k exp(i alpha_k) P_k`` for a complete partition."""
    alphas = np.asarray(alphas, dtype=float).ravel()
    if alphas.size != len(partition):
        raise ValueError(f"{alphas.size} phases for a partition of size {len(partition)}")
    if not np.all(np.isfinite(alphas)):
        raise ValueError("non-finite phase")
    partition.require_complete()
    return sum(np.exp(1j * a) * p for a, p in zip(alphas, partition.projectors))


def two_factor_exp(partition_r: ProjectorPartition, partition_s: ProjectorPartition, alphas_rs) -> np.ndarray:
    """``sum_{r,s} exp(i alpha_rs) P_r (x) P_s`` on the product space.

    Zero phases contribute the bare product projector, never a dropped term.
    """
    alphas_rs = np.asarray(alphas_rs, dtype=float)
    if alphas_rs.shape != (len(partition_r), len(partition_s)):
        raise ValueError(f"phase matrix shape {alphas_rs.shape} does not match partitions "
                         f"({len(partition_r)}, {len(partition_s)})")
    partition_r.require_complete()
    partition_s.require_complete()
    out = np.zeros((partition_r.dim * partition_s.dim,) * 2, dtype=complex)
    for r, pr in enumerate(partition_r.projectors):
        for s, ps in enumerate(partition_s.projectors):
            out += np.exp(1j * alphas_rs[r, s]) * np.kron(pr, ps)
    return out


def tensor_factor_exp(q_spectral, r_op) -> np.ndarray:
    """``exp(i Q (x) R)`` as ``sum_q P_q (x) exp(i q R)``.

    ``q_spectral`` is ``(eigenvalues, projectors)`` with the projectors forming
    a complete partition.
    """
    eigenvalues, projectors = q_spectral
    partition = projectors if isinstance(projectors, ProjectorPartition) else ProjectorPartition(tuple(projectors))
    eigenvalues = np.asarray(eigenvalues, dtype=float).ravel()
    if eigenvalues.size != len(partition):
        raise ValueError("eigenvalue count does not match projector count")
    partition.require_complete()
    r_op = _as_operator(r_op)
    return sum(np.kron(p, matrix_exp_oracle(1j * q * r_op)) for q, p in zip(eigenvalues, partition.projectors))


def bch_eta_truncated(a, b, order: int = 3) -> np.ndarray:
    """Truncated Campbell-Hausdorff exponent: ``exp(a) exp(b) ~ exp(eta)``.

    order 1: a + b; order 2 adds [a,b]/2; order 3 adds
    ([[a,b],b] + [[b,a],a]) / 12.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"unsupported order {order}; use 1, 2 or 3")
    a = _as_operator(a)
    b = _as_operator(b)
    if a.shape != b.shape:
        raise ValueError("operands have different dimensions")
    eta = a + b
    if order >= 2:
        ab = commutator(a, b)
        eta = eta + 0.5 * ab
    if order >= 3:
        eta = eta + (commutator(ab, b) + commutator(-ab, a)) / 12.0
    return eta


def projector_logic(op: str, p1, p2=None) -> np.ndarray:
    """Yes-no propositions on projectors: ``"or"``, ``"and"``, ``"not"``."""
    p1 = _as_operator(p1)
    if op == "not":
        return np.eye(p1.shape[0]) - p1
    if p2 is None:
        raise ValueError(f"'{op}' needs two operands")
    p2 = _as_operator(p2)
    if op == "or":
        if frobenius(p1 @ p2) > TOL:
            raise PartitionError("'or' is only defined here for orthogonal (disjoint) projectors")
        return p1 + p2
    if op == "and":
        return p1 @ p2
    raise ValueError(f"unknown operation {op!r}")


def operator_to_json(a) -> str:
    """Row-major ``[re, im]`` pairs, for debugging dumps."""
    a = np.asarray(a, dtype=complex)
    entries = [[[float(z.real), float(z.imag)] for z in row] for row in a]
    return json.dumps({"dim": int(a.shape[0]), "entries": entries})


def operator_from_json(text: str) -> np.ndarray:
    data = json.loads(text)
    arr = np.array([[complex(re, im) for re, im in row] for row in data["entries"]], dtype=complex)
    if arr.shape != (data["dim"], data["dim"]):
        raise ValueError("entries do not match declared dim")
    return arr


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random unitary from the QR decomposition of a Ginibre matrix."""
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_partition(dim: int, blocks: int, rng: np.random.Generator) -> ProjectorPartition:
    """Random complete partition of ``C^dim`` into ``blocks`` nonempty blocks."""
    if not 1 <= blocks <= dim:
        raise ValueError("need 1 <= blocks <= dim")
    cuts = np.sort(rng.choice(np.arange(1, dim), size=blocks - 1, replace=False)) if blocks > 1 else []
    sizes = np.diff([0, *cuts, dim])
    return ProjectorPartition.from_basis(random_unitary(dim, rng), [int(s) for s in sizes])
