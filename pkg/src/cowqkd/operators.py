"""Dense Hermitian operators on tensor-product Hilbert spaces.

Every operator in the block model (states, POVM elements, constraint
operators, the phase-error objective) is a :class:`HermitianOperator`: a
dense complex matrix together with the list of local dimensions that make up
its Hilbert space.  Subsystems are indexed from 0 in layout order, which by
convention is (Alice bit qubits..., shield, Bob).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import CapacityError, NumericError

DIMENSION_CEILING = 1024
HERMITICITY_TOL = 1e-12


@dataclass(frozen=True)
class SubsystemLayout:
    dims: tuple[int, ...]
    ceiling: int = DIMENSION_CEILING

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValueError("layout needs at least one subsystem")
        if any(d < 1 for d in dims):
            raise ValueError(f"subsystem dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        if self.total > self.ceiling:
            raise CapacityError(
                f"total dimension {self.total} exceeds ceiling {self.ceiling}"
            )

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self):
        return len(self.dims)

    def concat(self, other: "SubsystemLayout") -> "SubsystemLayout":
        return SubsystemLayout(self.dims + other.dims, max(self.ceiling, other.ceiling))


def _as_layout(layout) -> SubsystemLayout:
    if isinstance(layout, SubsystemLayout):
        return layout
    if isinstance(layout, (int, np.integer)):
        return SubsystemLayout((int(layout),))
    return SubsystemLayout(tuple(layout))


class HermitianOperator:
    """Immutable dense Hermitian matrix with a subsystem layout.

    The input matrix is symmetrized on construction.  Inputs whose
    anti-Hermitian part exceeds ``HERMITICITY_TOL`` (relative to the largest
    entry, floored at 1) are rejected rather than silently repaired.
    """

    __slots__ = ("layout", "_m")

    def __init__(self, matrix, layout=None, *, check: bool = True):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        layout = _as_layout(m.shape[0] if layout is None else layout)
        if layout.total != m.shape[0]:
            raise ValueError(
                f"layout {layout.dims} has total {layout.total}, matrix is {m.shape[0]}"
            )
        if check and m.size:
            drift = np.max(np.abs(m - m.conj().T))
            if drift > HERMITICITY_TOL * max(1.0, np.max(np.abs(m))):
                raise ValueError(f"matrix is not Hermitian (drift {drift:.3e})")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        self.layout = layout
        self._m = m

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.layout.dims

    def is_real(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self._m.imag), initial=0.0) <= tol)

    def trace(self) -> float:
        return float(np.trace(self._m).real)

    def expectation(self, rho: "HermitianOperator | np.ndarray") -> float:
        """Return tr(rho @ self), real by Hermiticity."""
        r = rho.matrix if isinstance(rho, HermitianOperator) else np.asarray(rho)
        return float(np.sum(self._m.T * r).real)

    def hs_inner(self, other: "HermitianOperator") -> float:
        return float(np.sum(self._m.conj() * other.matrix).real)

    def _check_compatible(self, other):
        if self.layout.dims != other.layout.dims:
            raise ValueError(f"layout mismatch: {self.dims} vs {other.dims}")

    def __add__(self, other):
        if not isinstance(other, HermitianOperator):
            return NotImplemented
        self._check_compatible(other)
        return HermitianOperator(self._m + other.matrix, self.layout, check=False)

    def __sub__(self, other):
        if not isinstance(other, HermitianOperator):
            return NotImplemented
        self._check_compatible(other)
        return HermitianOperator(self._m - other.matrix, self.layout, check=False)

    def __neg__(self):
        return HermitianOperator(-self._m, self.layout, check=False)

    def __mul__(self, scalar):
        if not np.isscalar(scalar) or np.iscomplexobj(scalar):
            return NotImplemented
        return HermitianOperator(float(scalar) * self._m, self.layout, check=False)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def conjugate_by(self, a: np.ndarray, layout=None) -> "HermitianOperator":
        """Return a @ self @ a^dagger (a need not be square)."""
        a = np.asarray(a)
        return HermitianOperator(a @ self._m @ a.conj().T, layout or a.shape[0], check=False)

    def allclose(self, other: "HermitianOperator", atol: float = 1e-12) -> bool:
        return self.dims == other.dims and np.allclose(self._m, other.matrix, rtol=0, atol=atol)

    def __repr__(self):
        return f"HermitianOperator(dims={self.dims})"


def identity(layout) -> HermitianOperator:
    layout = _as_layout(layout)
    return HermitianOperator(np.eye(layout.total), layout, check=False)


def zeros(layout) -> HermitianOperator:
    layout = _as_layout(layout)
    return HermitianOperator(np.zeros((layout.total, layout.total)), layout, check=False)


def diag(values, layout=None) -> HermitianOperator:
    values = np.asarray(values, dtype=float)
    return HermitianOperator(np.diag(values), layout, check=False)


def projector(vector, layout=None) -> HermitianOperator:
    """Return |v><v| for a (not necessarily normalized) vector."""
    v = np.asarray(vector, dtype=complex).ravel()
    return HermitianOperator(np.outer(v, v.conj()), layout, check=False)


def basis_vector(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim)
    v[index] = 1.0
    return v


def kron(a: HermitianOperator, b: HermitianOperator) -> HermitianOperator:
    layout = a.layout.concat(b.layout)
    return HermitianOperator(np.kron(a.matrix, b.matrix), layout, check=False)


def kron_all(ops: Iterable[HermitianOperator]) -> HermitianOperator:
    return reduce(kron, ops)


def partial_trace(m: HermitianOperator, keep: Iterable[int]) -> HermitianOperator:
    """Trace out every subsystem not listed in ``keep``.

    The kept subsystems appear in their original layout order regardless of
    the order in which they are given.
    """
    dims = m.dims
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise ValueError(f"subsystem indices {keep} out of range for {n} subsystems")
    if not keep:
        return HermitianOperator([[m.trace()]], check=False)
    traced = [k for k in range(n) if k not in keep]
    t = m.matrix.reshape(dims + dims)
    # trace pairs from the highest index down so remaining axis numbers stay valid
    for count, k in enumerate(sorted(traced, reverse=True)):
        cur = n - count
        t = np.trace(t, axis1=k, axis2=k + cur)
    kept = tuple(dims[k] for k in keep)
    d = int(np.prod(kept))
    return HermitianOperator(t.reshape(d, d), kept, check=False)


def hermitian_basis(d: int) -> list[HermitianOperator]:
    """Orthonormal (Hilbert-Schmidt) basis of the d x d Hermitian matrices.

    Ordering: the d diagonal units, then for each j < k the symmetric
    element (E_jk + E_kj)/sqrt2 followed by the antisymmetric one
    -i(E_jk - E_kj)/sqrt2.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    out = []
    for j in range(d):
        e = np.zeros((d, d), dtype=complex)
        e[j, j] = 1.0
        out.append(HermitianOperator(e, check=False))
    s = 1.0 / np.sqrt(2.0)
    for j in range(d):
        for k in range(j + 1, d):
            e = np.zeros((d, d), dtype=complex)
            e[j, k] = e[k, j] = s
            out.append(HermitianOperator(e, check=False))
            e = np.zeros((d, d), dtype=complex)
            e[j, k] = -1j * s
            e[k, j] = 1j * s
            out.append(HermitianOperator(e, check=False))
    return out


def eigvalsh(m: HermitianOperator | np.ndarray) -> np.ndarray:
    a = m.matrix if isinstance(m, HermitianOperator) else np.asarray(m)
    try:
        return scipy.linalg.eigvalsh(a, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc


def min_eigenvalue(m: HermitianOperator | np.ndarray) -> float:
    return float(eigvalsh(m)[0])


def max_eigenvalue(m: HermitianOperator | np.ndarray) -> float:
    return float(eigvalsh(m)[-1])


def embed(op: HermitianOperator, positions: Sequence[int], layout) -> HermitianOperator:
    """Place ``op`` on the subsystems ``positions`` of ``layout``, identity elsewhere.

    ``positions`` may be in any order; op's k-th tensor factor lands on
    subsystem ``positions[k]``.
    """
    layout = _as_layout(layout)
    dims = layout.dims
    n = len(dims)
    positions = [int(p) for p in positions]
    if sorted(set(positions)) != sorted(positions) or any(p < 0 or p >= n for p in positions):
        raise ValueError(f"bad subsystem positions {positions}")
    if tuple(dims[p] for p in positions) != op.dims:
        raise ValueError(f"operator dims {op.dims} do not fit positions {positions} of {dims}")
    rest = [k for k in range(n) if k not in positions]
    rest_dim = int(np.prod([dims[k] for k in rest])) if rest else 1
    full = np.kron(op.matrix, np.eye(rest_dim))
    order = positions + rest
    cur_dims = [dims[k] for k in order]
    t = full.reshape(cur_dims + cur_dims)
    inv = np.argsort(order)
    t = t.transpose(list(inv) + [n + i for i in inv])
    return HermitianOperator(t.reshape(layout.total, layout.total), layout, check=False)
