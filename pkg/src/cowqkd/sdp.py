"""Dense primal-dual interior-point solver with duality certificates.

Problems are posed in maximization form::

    max  tr(C X)   s.t.  tr(A_i X) = b_i,  X >= 0

with dual ``min b.y  s.t.  S = sum_i y_i A_i - C >= 0``.  Any ``y`` gives the
upper bound ``b.y + max(0, -lambda_min(S)) * T`` on the optimum whenever every
feasible ``X`` has trace at most ``T``; :func:`certified_bound` evaluates it.
A positive diagonal ``trace_weight`` E generalizes this: the eigenvalue is
taken of ``E^-1/2 S E^-1/2`` and ``T`` bounds ``tr(E X)``.

The iteration is infeasible-start path following with the HKM search
direction and a Mehrotra predictor-corrector step.  Complex Hermitian data
are handled through the real symmetric embedding
``H -> [[Re H, -Im H], [Im H, Re H]]``; purely real data are solved directly.
Declared diagonal blocks are solved as a direct sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, InfeasibleError, NumericError
from .operators import HermitianOperator, min_eigenvalue

log = logging.getLogger(__name__)

DROP_TOL = 1e-10
CONSISTENCY_TOL = 1e-8
STEP_FRACTION = 0.98


@dataclass
class SdpProblem:
    objective: HermitianOperator
    constraints: list[tuple[HermitianOperator, float]]
    blocks: list[np.ndarray] | None = None
    trace_bound: float | None = None
    trace_weight: np.ndarray | None = None

    def __post_init__(self):
        n = self.objective.dim
        for a, _ in self.constraints:
            if a.dim != n:
                raise ValueError("constraint and objective dimensions differ")
        if self.blocks is not None:
            self.blocks = [np.asarray(b, dtype=int) for b in self.blocks]
            flat = np.sort(np.concatenate(self.blocks))
            if not np.array_equal(flat, np.arange(n)):
                raise ValueError("blocks must partition the matrix indices")
            mask = self.block_mask()
            for op in [self.objective] + [a for a, _ in self.constraints]:
                if np.max(np.abs(op.matrix[~mask]), initial=0.0) > 1e-12:
                    raise ValueError("operator is not block diagonal w.r.t. the declared blocks")

    @property
    def dim(self) -> int:
        return self.objective.dim

    def block_mask(self) -> np.ndarray:
        n = self.dim
        mask = np.zeros((n, n), dtype=bool)
        for b in self.blocks or [np.arange(n)]:
            mask[np.ix_(b, b)] = True
        return mask

    @property
    def b(self) -> np.ndarray:
        return np.array([v for _, v in self.constraints], dtype=float)

    def with_constraints(self, constraints) -> "SdpProblem":
        return replace(self, constraints=list(constraints))

    def dump(self, path) -> None:
        """Write the problem as plain-text sparse triplets.

        One line per nonzero: ``index row col real imag rhs`` where index 0 is
        the objective (rhs 0) and index i >= 1 the i-th constraint.  Entries are
        upper-triangular only.
        """
        with open(path, "w") as fh:
            fh.write(f"# dim {self.dim} constraints {len(self.constraints)}\n")
            ops = [(self.objective, 0.0)] + list(self.constraints)
            for idx, (op, rhs) in enumerate(ops):
                rows, cols = np.nonzero(np.triu(op.matrix))
                for r, c in zip(rows, cols):
                    v = op.matrix[r, c]
                    fh.write(f"{idx} {r} {c} {v.real:.17g} {v.imag:.17g} {rhs:.17g}\n")


@dataclass
class SdpCertificate:
    primal_matrix: np.ndarray
    dual_vector: np.ndarray
    primal_value: float
    dual_value: float
    primal_residual: float
    dual_slack_mineig: float
    trace_bound: float | None
    iterations: int = 0
    status: str = "optimal"
    history: list = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return self.dual_value - self.primal_value

    @property
    def relative_gap(self) -> float:
        return abs(self.gap) / max(1.0, abs(self.primal_value), abs(self.dual_value))


def _op_vectors(ops: Sequence[HermitianOperator]) -> np.ndarray:
    """Real vectors whose dot products are Hilbert-Schmidt inner products."""
    v = np.array([o.matrix.ravel() for o in ops])
    return np.concatenate([v.real, v.imag], axis=1)


def independent_constraints(p: SdpProblem) -> SdpProblem:
    """Drop linearly dependent constraints, checking the dropped ones agree.

    Operators are compared after normalization to unit Frobenius norm; a
    dropped constraint whose right-hand side disagrees with the value implied
    by the retained ones by more than ``CONSISTENCY_TOL`` makes the problem
    infeasible.
    """
    if not p.constraints:
        return p
    ops = [a for a, _ in p.constraints]
    b = p.b
    vecs = _op_vectors(ops)
    norms = np.linalg.norm(vecs, axis=1)
    zero = norms <= DROP_TOL
    if np.any(np.abs(b[zero]) > CONSISTENCY_TOL):
        raise InfeasibleError("a zero constraint operator has a nonzero right-hand side")
    idx = np.flatnonzero(~zero)
    if idx.size == 0:
        return p.with_constraints([])
    v = vecs[idx] / norms[idx, None]
    bn = b[idx] / norms[idx]
    v = v[:, np.any(v != 0, axis=0)]
    q, r, piv = scipy.linalg.qr(v.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > DROP_TOL * max(diag[0], 1.0)))
    kept, dropped = piv[:rank], piv[rank:]
    if dropped.size:
        coef = scipy.linalg.solve_triangular(r[:rank, :rank], r[:rank, rank:])
        implied = coef.T @ bn[kept]
        bad = np.abs(implied - bn[dropped])
        if np.any(bad > CONSISTENCY_TOL):
            raise InfeasibleError(
                f"inconsistent dependent constraints (mismatch {bad.max():.3e})"
            )
    keep = np.sort(idx[kept])
    return p.with_constraints([p.constraints[i] for i in keep])


# ------------------------------------------------------------- internals


def _to_blocks(op: np.ndarray, blocks) -> list[np.ndarray]:
    return [op[np.ix_(b, b)] for b in blocks]


def _embed(h: np.ndarray) -> np.ndarray:
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def _unembed(y: np.ndarray) -> np.ndarray:
    n = y.shape[0] // 2
    return 0.5 * (y[:n, :n] + y[n:, n:]) + 0.5j * (y[n:, :n] - y[:n, n:])


class _RealProblem:
    """Block-diagonal real symmetric form of an SdpProblem."""

    def __init__(self, p: SdpProblem):
        self.blocks = p.blocks if p.blocks is not None else [np.arange(p.dim)]
        ops = [p.objective] + [a for a, _ in p.constraints]
        self.complex = any(not o.is_real() for o in ops)
        self.b = p.b.copy()
        c_blocks = _to_blocks(p.objective.matrix, self.blocks)
        a_blocks = [
            np.array([a.matrix[np.ix_(blk, blk)] for a, _ in p.constraints]).reshape(
                len(p.constraints), len(blk), len(blk)
            )
            for blk in self.blocks
        ]
        if self.complex:
            self.C = [0.5 * _embed(c) for c in c_blocks]
            self.A = [np.array([0.5 * _embed(a) for a in ab]).reshape(len(self.b), 2 * ab.shape[1], 2 * ab.shape[1]) for ab in a_blocks]
        else:
            self.C = [c.real.copy() for c in c_blocks]
            self.A = [ab.real.copy() for ab in a_blocks]
        self.sizes = [c.shape[0] for c in self.C]
        self.k = len(self.b)
        # row scaling keeps the Schur complement well conditioned
        norms = np.sqrt(sum(np.einsum("kij,kij->k", a, a) for a in self.A))
        norms[norms == 0] = 1.0
        self.row_scale = norms
        self.A = [a / norms[:, None, None] for a in self.A]
        self.bs = self.b / norms
        self.A_flat = [a.reshape(self.k, -1) for a in self.A]
        # constraints that touch each block; the Schur complement is assembled per block
        self.active = [np.flatnonzero(np.any(af != 0, axis=1)) for af in self.A_flat]

    def op(self, X) -> np.ndarray:
        return sum(af @ x.ravel() for af, x in zip(self.A_flat, X))

    def adj(self, y) -> list[np.ndarray]:
        return [(y @ af).reshape(n, n) for af, n in zip(self.A_flat, self.sizes)]

    def to_matrix(self, X, dim) -> np.ndarray:
        out = np.zeros((dim, dim), dtype=complex)
        for blk, x in zip(self.blocks, X):
            xb = _unembed(x) if self.complex else x
            out[np.ix_(blk, blk)] = xb
        return out


def _inner(U, V) -> float:
    return float(sum(np.vdot(u, v).real for u, v in zip(U, V)))


def _sym(x):
    return 0.5 * (x + x.T)


def _max_step(X, dX) -> float:
    """Largest alpha with X + alpha dX PSD (X positive definite)."""
    alpha = np.inf
    for x, dx in zip(X, dX):
        try:
            lc = np.linalg.cholesky(x)
        except np.linalg.LinAlgError as exc:
            raise NumericError("iterate lost positive definiteness") from exc
        t = scipy.linalg.solve_triangular(lc, dx, lower=True)
        t = scipy.linalg.solve_triangular(lc, t.T, lower=True)
        lo = np.linalg.eigvalsh(_sym(t))[0]
        if lo < 0:
            alpha = min(alpha, -1.0 / lo)
    return alpha


def solve(
    p: SdpProblem,
    tol: float = 1e-8,
    max_iter: int = 100,
    feas_tol: float = 1e-9,
    reduce: bool = True,
) -> SdpCertificate:
    """Solve ``p`` and return a certificate evaluated on the original data."""
    original = p
    if reduce:
        p = independent_constraints(p)
    rp_ = _RealProblem(p)
    k = rp_.k
    C, A_flat, bs = rp_.C, rp_.A_flat, rp_.bs
    n_tot = sum(rp_.sizes)

    c_norm = max(np.sqrt(sum(np.sum(c * c) for c in C)), 1.0)
    b_norm = max(np.linalg.norm(bs), 1.0)
    xi = max(10.0, np.sqrt(n_tot), n_tot * np.max((1 + np.abs(bs)), initial=1.0))
    zeta = max(10.0, np.sqrt(n_tot), c_norm)
    X = [xi * np.eye(n) for n in rp_.sizes]
    Z = [zeta * np.eye(n) for n in rp_.sizes]
    y = np.zeros(k)

    history = []
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        AX = rp_.op(X)
        rp = bs - AX
        ATy = rp_.adj(y)
        Rd = [c + z - a for c, z, a in zip(C, Z, ATy)]
        pobj = _inner(C, X)
        dobj = float(bs @ y)
        mu = _inner(X, Z) / n_tot
        pinf = np.linalg.norm(rp) / b_norm
        dinf = np.sqrt(sum(np.sum(r * r) for r in Rd)) / c_norm
        relgap = abs(dobj - pobj) / (1 + abs(pobj) + abs(dobj))
        history.append((it, pobj, dobj, pinf, dinf, relgap))
        if relgap <= tol and pinf <= feas_tol and dinf <= feas_tol:
            status = "optimal"
            break
        if k and np.linalg.norm(y) > 1e12 * (1 + np.linalg.norm(bs)):
            _farkas_check(rp_, y)

        try:
            Zinv = [np.linalg.inv(z) for z in Z]
            Zinv = [_sym(zi) for zi in Zinv]
            if k:
                M = np.zeros((k, k))
                for af, a, x, zi, act in zip(A_flat, rp_.A, X, Zinv, rp_.active):
                    if act.size == 0:
                        continue
                    G = np.matmul(np.matmul(x, a[act]), zi)  # X A_j Z^-1
                    M[np.ix_(act, act)] += af[act] @ G.transpose(0, 2, 1).reshape(act.size, -1).T
                M = _sym(M)
                try:
                    cho = scipy.linalg.cho_factor(M)
                    msolve = lambda r: scipy.linalg.cho_solve(cho, r)  # noqa: E731
                except np.linalg.LinAlgError:
                    lu = scipy.linalg.lu_factor(M + 1e-14 * np.trace(M) / k * np.eye(k))
                    msolve = lambda r: scipy.linalg.lu_solve(lu, r)  # noqa: E731
            XRdZ = [x @ r @ zi for x, r, zi in zip(X, Rd, Zinv)]

            def direction(target):
                # target: list of matrices T with dX = T - X dZ Z^-1
                rhs = rp_.op([t + xr for t, xr in zip(target, XRdZ)]) - rp
                dy = msolve(rhs) if k else np.zeros(0)
                dZ = [a - r for a, r in zip(rp_.adj(dy), Rd)]
                dX = [_sym(t - x @ dz @ zi) for t, x, dz, zi in zip(target, X, dZ, Zinv)]
                return dX, dy, dZ

            # predictor
            dXa, dya, dZa = direction([-x for x in X])
            ap = min(1.0, STEP_FRACTION * _max_step(X, dXa))
            ad = min(1.0, STEP_FRACTION * _max_step(Z, dZa))
            mu_aff = _inner([x + ap * d for x, d in zip(X, dXa)], [z + ad * d for z, d in zip(Z, dZa)]) / n_tot
            sigma = min(1.0, (mu_aff / mu) ** 3)
            # corrector
            target = [
                sigma * mu * zi - x - dxa @ dza @ zi
                for zi, x, dxa, dza in zip(Zinv, X, dXa, dZa)
            ]
            dX, dy, dZ = direction(target)
            ap = min(1.0, STEP_FRACTION * _max_step(X, dX))
            ad = min(1.0, STEP_FRACTION * _max_step(Z, dZ))
            X = [_sym(x + ap * d) for x, d in zip(X, dX)]
            y = y + ad * dy
            Z = [_sym(z + ad * d) for z, d in zip(Z, dZ)]
            if ap < 1e-12 and ad < 1e-12:
                status = "stalled"
                break
        except (np.linalg.LinAlgError, NumericError) as exc:
            log.debug("SDP iteration %d hit a numerical wall: %s", it, exc)
            status = "numerical"
            break

    if status != "optimal":
        _, _, _, pinf, dinf, relgap = history[-1]
        if relgap <= 1e3 * tol and pinf <= 1e3 * feas_tol and dinf <= 1e3 * feas_tol:
            status = "near_optimal"
    y_orig_kept = y / rp_.row_scale
    cert = _certificate(original, p, rp_, X, y_orig_kept, it, status, history)
    if status not in ("optimal", "near_optimal"):
        log.debug("SDP stopped with status %s after %d iterations", status, it)
        raise ConvergenceError(f"SDP solver did not converge ({status})", cert)
    return cert


def _farkas_check(rp_: _RealProblem, y: np.ndarray) -> None:
    """Raise if the exploding dual iterate is a primal infeasibility ray."""
    u = y / np.linalg.norm(y)
    ATu = rp_.adj(u)
    lo = min(np.linalg.eigvalsh(a)[0] for a in ATu)
    if lo >= -1e-8 and float(rp_.bs @ u) < -1e-8:
        raise InfeasibleError("primal infeasibility certificate found")


def _trace_bound(p: SdpProblem) -> float | None:
    """Common value of tr(E X) over the feasible set, if E lies in the constraint span.

    E is the diagonal ``trace_weight`` (identity by default).
    """
    if p.trace_bound is not None:
        return p.trace_bound
    if not p.constraints:
        return None
    mask = p.block_mask()
    ops = [a.matrix[mask] for a, _ in p.constraints]
    weight = np.ones(p.dim) if p.trace_weight is None else np.asarray(p.trace_weight, dtype=float)
    target = np.diag(weight)[mask]
    a = np.array(ops).T
    a_ri = np.concatenate([a.real, a.imag])
    t_ri = np.concatenate([target.real, target.imag])
    # QR-based driver: the SVD one occasionally fails to converge on these matrices
    coef, *_ = scipy.linalg.lstsq(a_ri, t_ri, lapack_driver="gelsy")
    if np.max(np.abs(a_ri @ coef - t_ri)) > 1e-9:
        return None
    return float(coef @ p.b)


def _certificate(original, reduced, rp_, X, y, it, status, history) -> SdpCertificate:
    rho = rp_.to_matrix(X, reduced.dim)
    rho = 0.5 * (rho + rho.conj().T)
    ops = [a for a, _ in reduced.constraints]
    b = reduced.b
    primal_value = reduced.objective.expectation(rho)
    resid = max((abs(a.expectation(rho) - v) for a, v in reduced.constraints), default=0.0)
    slack = -reduced.objective.matrix.copy()
    for yi, a in zip(y, ops):
        slack = slack + yi * a.matrix
    if reduced.trace_weight is not None:
        w = 1.0 / np.sqrt(np.asarray(reduced.trace_weight, dtype=float))
        slack = w[:, None] * slack * w[None, :]
    if reduced.blocks is not None:
        mineig = min(min_eigenvalue(0.5 * (s + s.conj().T)) for s in _to_blocks(slack, reduced.blocks))
    else:
        mineig = min_eigenvalue(0.5 * (slack + slack.conj().T))
    return SdpCertificate(
        primal_matrix=rho,
        dual_vector=y,
        primal_value=float(primal_value),
        dual_value=float(b @ y),
        primal_residual=float(resid),
        dual_slack_mineig=float(mineig),
        trace_bound=_trace_bound(reduced),
        iterations=it,
        status=status,
        history=history,
    )


def certified_bound(c: SdpCertificate) -> float:
    """Rigorous upper bound on the maximum, up to floating-point rounding."""
    shortfall = max(0.0, -c.dual_slack_mineig)
    if shortfall == 0.0:
        return c.dual_value
    if c.trace_bound is None:
        return np.inf
    return c.dual_value + shortfall * c.trace_bound
