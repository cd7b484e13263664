"""Key-rate bound: phase-error SDP, rate formula, intensity search and loss sweeps.

The phase-error SDP is not solved in the raw form produced by
:func:`cowqkd.channel.observed_constraints`.  Two exact reductions make it
numerically tractable at high loss:

* Bob's inconclusive level ``|a>`` enters no Bob-outcome operator and no
  objective term, so coherences between it and the single-photon sector can
  be pinched away.  The variable splits into a single-photon block and an
  ``|a>`` block per shield level.
* Alice's marginal is fixed, so every feasible state can be written as
  ``(W (x) D) Y (W (x) D)^+`` with ``W = V sqrt(Lambda)`` built from the
  eigen-decomposition of the marginal (restricted to its support) and
  ``D = diag(sqrt(x),..., sqrt(x), 1)`` rescaling the single-photon sector.
  The marginal constraint becomes ``x tr_S Y_S + Y_a = 1``, which keeps the
  whitened variable of order one regardless of the loss.

The dual bound is certified against the weighted trace ``tr(E Y)`` with
``E = x 1_S (+) 1_a``, which the marginal constraint pins to the support rank.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelParams, ConstraintSet, observed_constraints
from .errors import ConvergenceError, NumericError
from .operators import HermitianOperator, hermitian_basis
from .protocol import BlockConfig, phase_error_x, reduced_alice_state
from .sdp import SdpCertificate, SdpProblem, certified_bound, solve

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-15
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def binary_entropy(x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ValueError(f"binary entropy needs x in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def key_fraction(e_bar: float, delta_max: float, G: float) -> float:
    """Unclamped bracket ``1 - h2(e) - h2(min(delta/G, 1/2))``; -1 without gain."""
    if G <= 0.0:
        return -1.0
    ratio = min(max(delta_max / G, 0.0), 0.5)
    return 1.0 - binary_entropy(min(max(e_bar, 0.0), 0.5)) - binary_entropy(ratio)


def rate_from_statistics(G: float, e_bar: float, delta_max: float, m: int) -> float:
    """Per-pulse rate ``max(0, G [1 - h2(e) - h2(delta/G)]) / 2m``."""
    if G <= 0.0:
        return 0.0
    if e_bar >= 0.5:
        return 0.0
    ratio = min(max(delta_max / G, 0.0), 0.5)
    key = G * (1.0 - binary_entropy(min(max(e_bar, 0.0), 1.0)) - binary_entropy(ratio))
    return max(0.0, key) / (2 * m)


# ----------------------------------------------------------- phase-error SDP


@dataclass
class PhaseErrorResult:
    delta_max: float
    gain: float
    bit_error: float
    visibility: float
    certificate: SdpCertificate
    scale: float

    @property
    def solver_gap(self) -> float:
        """Certified bound minus primal value, in units of delta."""
        return self.gain * (certified_bound(self.certificate) - self.certificate.primal_value)


def _shield_indices(config: BlockConfig, s: int) -> np.ndarray:
    nb = config.bob_dim
    ns = config.shield_dim if config.randomized else 1
    bits = np.arange(2**config.m)
    alice = bits * ns + s
    return (alice[:, None] * nb + np.arange(nb)[None, :]).ravel()


def _alice_support(rho_bits: np.ndarray) -> np.ndarray:
    """``V sqrt(Lambda)`` over the eigenvalues above ``SUPPORT_TOL``."""
    w, v = np.linalg.eigh(rho_bits)
    keep = w > SUPPORT_TOL * max(1.0, w[-1])
    return v[:, keep] * np.sqrt(w[keep])[None, :]


def _whitening(config: BlockConfig, scale: float, restrict: bool = True) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Per shield level: (full-space indices, W (x) D, support rank).

    With ``restrict`` False a randomized configuration is whitened as one
    piece over the support of the whole marginal, shield coherences included.
    """
    m = config.m
    d = np.concatenate([np.full(2 * m, math.sqrt(scale)), [1.0]])
    if not config.randomized:
        # product of |+>,|-> eigenvectors; expm1 keeps the small eigenvalue exact
        lam = np.array([1.0 - 0.5 * -math.expm1(-config.mu), 0.5 * -math.expm1(-config.mu)])
        v = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
        w1 = v * np.sqrt(lam)[None, :]
        w = w1
        for _ in range(m - 1):
            w = np.kron(w, w1)
        return [(_shield_indices(config, 0), np.kron(w, np.diag(d)), 2**m)]
    rho_a = reduced_alice_state(config).matrix.real
    if not restrict:
        w = _alice_support(rho_a)
        return [(np.arange(config.layout.total), np.kron(w, np.diag(d)), w.shape[1])]
    nshield = config.shield_dim
    pieces = []
    for s in range(nshield):
        alice_idx = np.arange(2**m) * nshield + s
        w = _alice_support(rho_a[np.ix_(alice_idx, alice_idx)])
        if w.shape[1]:
            pieces.append((_shield_indices(config, s), np.kron(w, np.diag(d)), w.shape[1]))
    return pieces


def lift_state(config: BlockConfig, scale: float, y: np.ndarray, restrict: bool = True) -> HermitianOperator:
    """Map a whitened variable back to a density operator on the full space."""
    nb = config.bob_dim
    rho = np.zeros((config.layout.total,) * 2, dtype=complex)
    pos = 0
    for idx, t, r in _whitening(config, scale, restrict):
        blk = y[pos : pos + r * nb, pos : pos + r * nb]
        rho[np.ix_(idx, idx)] = t @ blk @ t.conj().T
        pos += r * nb
    return HermitianOperator(rho, config.layout, check=False)


def whitened_problem(
    config: BlockConfig,
    cs: ConstraintSet,
    objective: HermitianOperator,
    scale: float,
    restrict: bool = True,
) -> SdpProblem:
    """Exact reformulation of ``max tr(objective rho)`` over the constraint set.

    ``cs`` supplies the Bob-outcome constraints; the tomography group is
    replaced by the whitened marginal condition.  ``restrict`` False skips
    both the shield-level split and the single-photon/|a> pinching, leaving
    one dense block.
    """
    m = config.m
    nb = config.bob_dim
    ns_single = 2 * m
    bob = cs.group("data") + cs.group("monitor")
    pieces = _whitening(config, scale, restrict)

    blocks, offset = [], 0
    for _, _, r in pieces:
        sing = np.array([k * nb + b for k in range(r) for b in range(ns_single)]) + offset
        aux = np.array([k * nb + ns_single for k in range(r)]) + offset
        blocks.extend([sing, aux])
        offset += r * nb
    dim = offset
    if not restrict:
        blocks = None

    def transform(op: np.ndarray) -> np.ndarray:
        out = np.zeros((dim, dim), dtype=op.dtype)
        pos = 0
        for idx, t, r in pieces:
            sub = t.conj().T @ op[np.ix_(idx, idx)] @ t
            out[pos : pos + r * nb, pos : pos + r * nb] = sub
            pos += r * nb
        if blocks is not None:
            # pinch away single-photon/|a> coherences
            mask = np.zeros((dim, dim), dtype=bool)
            for b in blocks:
                mask[np.ix_(b, b)] = True
            out[~mask] = 0.0
        return out

    constraints = []
    for op, k in bob:
        constraints.append((HermitianOperator(transform(op.matrix), check=False), k))
    pos = 0
    weight = np.zeros(dim)
    for _, _, r in pieces:
        diag_w = np.concatenate([np.full(ns_single, scale), [1.0]])
        weight[pos : pos + r * nb] = np.tile(diag_w, r)
        for t in hermitian_basis(r):
            full = np.zeros((dim, dim), dtype=complex)
            full[pos : pos + r * nb, pos : pos + r * nb] = np.kron(t.matrix, np.diag(diag_w))
            constraints.append((HermitianOperator(full, check=False), t.trace()))
        pos += r * nb
    obj = HermitianOperator(transform(objective.matrix), check=False)
    return SdpProblem(obj, constraints, blocks=blocks, trace_weight=weight)


def _single_photon_scale(cs: ConstraintSet) -> float:
    mass = sum(k for _, k in cs.group("data"))
    return max(mass, 1e-300)


def max_phase_error(
    config: BlockConfig,
    params: ChannelParams,
    tol: float = 1e-8,
    flip_labels: bool = False,
    constraints: ConstraintSet | None = None,
    restrict: bool = True,
) -> PhaseErrorResult:
    """Certified upper bound on the averaged phase error for one parameter point.

    Solves ``max tr(-X rho) / G`` over the feasible set and returns
    ``delta_max = G/2 + G * certified_bound``.  ``restrict`` False solves the
    unsplit problem (see :func:`whitened_problem`).
    """
    cs = constraints if constraints is not None else observed_constraints(config, params)
    G = cs.gain
    if G <= 0.0:
        raise NumericError("no conclusive events: gain is zero")
    objective = -phase_error_x(config, flip_labels=flip_labels) / G
    scale = _single_photon_scale(cs)
    problem = whitened_problem(config, cs, objective, scale, restrict)
    try:
        cert = solve(problem, tol=tol)
    except ConvergenceError as exc:
        cert = exc.certificate
        if cert is None:
            raise
        log.warning("phase-error SDP stopped early (%s); using its certified bound", cert.status)
    bound = certified_bound(cert)
    if not np.isfinite(bound):
        raise NumericError("phase-error SDP produced no finite certified bound")
    delta = G / 2.0 + G * bound
    delta = min(max(delta, 0.0), G)
    return PhaseErrorResult(delta, G, cs.bit_error, cs.visibility, cert, scale)


def raw_phase_error_problem(config: BlockConfig, params: ChannelParams, flip_labels: bool = False) -> SdpProblem:
    """Untransformed phase-error SDP over the whole (dense) variable.

    Only suited to benign parameter points; used to validate the reductions.
    """
    cs = observed_constraints(config, params)
    objective = -phase_error_x(config, flip_labels=flip_labels) / cs.gain
    return SdpProblem(objective, cs.constraints)


# ------------------------------------------------------------- rate points


@dataclass
class RatePoint:
    loss_db: float
    mu: float
    m: int
    G: float
    e_bar: float
    delta_max: float
    rate_per_pulse: float
    solver_gap: float
    visibility: float = float("nan")
    status: str = "optimal"
    flagged: bool = False

    @property
    def key_fraction(self) -> float:
        return key_fraction(self.e_bar, self.delta_max, self.G)

    @property
    def score(self) -> float:
        """Search objective: the rate when positive, else ``key_fraction - 1`` (< 0)."""
        if self.rate_per_pulse > 0.0:
            return self.rate_per_pulse
        return min(self.key_fraction, 0.0) - 1.0

    def as_dict(self) -> dict:
        return {
            "loss_db": self.loss_db,
            "mu": self.mu,
            "m": self.m,
            "G": self.G,
            "e_bar": self.e_bar,
            "delta_max": self.delta_max,
            "rate_per_pulse": self.rate_per_pulse,
            "solver_gap": self.solver_gap,
        }


def compute_rate_point(config: BlockConfig, params: ChannelParams, tol: float = 1e-8) -> RatePoint:
    cs = observed_constraints(config, params)
    if cs.gain <= 0.0 or cs.bit_error >= 0.5:
        return RatePoint(params.loss_db, config.mu, config.m, cs.gain, cs.bit_error, cs.gain, 0.0, 0.0, cs.visibility)
    res = max_phase_error(config, params, tol=tol, constraints=cs)
    rate = rate_from_statistics(res.gain, res.bit_error, res.delta_max, config.m)
    return RatePoint(
        loss_db=params.loss_db,
        mu=config.mu,
        m=config.m,
        G=res.gain,
        e_bar=res.bit_error,
        delta_max=res.delta_max,
        rate_per_pulse=rate,
        solver_gap=res.solver_gap,
        visibility=res.visibility,
        status=res.certificate.status,
    )


# ------------------------------------------------------- intensity search


def _evaluate_many(fn, args, workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args))


def optimize_intensity(
    config: BlockConfig,
    params: ChannelParams,
    mu_range: tuple[float, float] = (1e-4, 0.5),
    tol: float = 1e-8,
    rel_tol: float = 1e-3,
    grid_points: int = 12,
    workers: int = 1,
) -> tuple[float, RatePoint]:
    """Maximize the per-pulse rate over the intensity.

    A log-spaced pre-scan picks the best bracket, then golden-section search
    on log(mu) refines it to ``rel_tol``.  Points with zero rate are ranked
    by their (negative) unclamped key fraction, so the search still climbs
    toward the positive window when it is narrower than the pre-scan spacing.
    If no positive rate is found the (geometric) midpoint is returned with
    ``flagged`` set.
    """
    lo, hi = float(mu_range[0]), float(mu_range[1])
    if not 0.0 < lo < hi <= 1.0:
        raise ValueError(f"intensity range must satisfy 0 < lo < hi <= 1, got {mu_range}")
    cache: dict[float, RatePoint] = {}

    def point(log_mu: float) -> RatePoint:
        if log_mu not in cache:
            cache[log_mu] = compute_rate_point(config.with_mu(math.exp(log_mu)), params, tol)
        return cache[log_mu]

    grid = list(np.linspace(math.log(lo), math.log(hi), grid_points))
    scan = _evaluate_many(lambda g: compute_rate_point(config.with_mu(math.exp(g)), params, tol), grid, workers)
    cache.update(zip(grid, scan))
    best = int(np.argmax([p.score for p in scan]))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    # log-space width maps to relative tolerance in mu
    while b - a > rel_tol:
        if point(c).score >= point(d).score:
            b, d = d, c
            c = b - GOLDEN * (b - a)
        else:
            a, c = c, d
            d = a + GOLDEN * (b - a)
    candidates = [grid[best], c, d]
    top = max(candidates, key=lambda g: point(g).score)
    if point(top).rate_per_pulse <= 0.0:
        mid = math.exp(0.5 * (math.log(lo) + math.log(hi)))
        p = compute_rate_point(config.with_mu(mid), params, tol)
        return mid, replace(p, rate_per_pulse=0.0, flagged=True)
    return math.exp(top), point(top)


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepResult:
    points: list[RatePoint]
    cutoff_loss_db: float | None
    failures: list[tuple[float, str]] = field(default_factory=list)


def _point_at(config, params, loss, mu_range, tol):
    p = params.with_loss_db(loss)
    if mu_range is None:
        return compute_rate_point(config, p, tol)
    return optimize_intensity(config, p, mu_range, tol)[1]


def sweep_and_cutoff(
    config: BlockConfig,
    params: ChannelParams,
    loss_grid_db,
    mu_range: tuple[float, float] | None = (1e-4, 0.5),
    tol: float = 1e-8,
    resolution_db: float = 0.1,
    workers: int = 1,
    refine: bool = True,
) -> SweepResult:
    """Rate curve over the loss grid plus the refined cutoff loss.

    With ``mu_range`` None the intensity of ``config`` is used throughout.
    The cutoff is the largest loss with a positive rate, bisected to
    ``resolution_db`` between the last positive and first zero grid points.
    """
    grid = [float(x) for x in loss_grid_db]
    if not grid:
        raise ValueError("empty loss grid")
    diffs = np.diff(grid)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError("loss grid must be strictly monotone")

    def run(loss):
        try:
            return _point_at(config, params, loss, mu_range, tol), None
        except (NumericError, ConvergenceError) as exc:
            return None, str(exc)

    results = _evaluate_many(run, grid, workers)
    points, failures = [], []
    for loss, (pt, err) in zip(grid, results):
        if pt is None:
            failures.append((loss, err))
        else:
            points.append(pt)
    ordered = sorted(points, key=lambda p: p.loss_db)
    positive = [p.loss_db for p in ordered if p.rate_per_pulse > 0]
    if not positive:
        return SweepResult(points, None, failures)
    last = max(positive)
    above = [p.loss_db for p in ordered if p.loss_db > last]
    if not refine or not above:
        return SweepResult(points, last, failures)
    lo, hi = last, min(above)
    while hi - lo > resolution_db:
        mid = 0.5 * (lo + hi)
        pt, err = run(mid)
        if pt is not None and pt.rate_per_pulse > 0:
            lo = mid
        else:
            hi = mid
    return SweepResult(points, lo, failures)
