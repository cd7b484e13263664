"""Honest-channel detection statistics and the SDP constraint set they imply.

The channel is a beamsplitter of transmittance ``eta_sys`` (fibre loss times
detector efficiency), an incoherent swap of the two slots of each bit with
probability ``e_d``, a wrong-port error ``e_m`` in the monitoring
interferometer and dark counts of probability ``epsilon`` per slot.  Only
blocks with exactly one registered photon are conclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg

from .errors import ConsistencyError
from .operators import (
    HermitianOperator,
    basis_vector,
    hermitian_basis,
    identity,
    kron,
    projector,
)
from .protocol import (
    BlockConfig,
    announcements,
    bit_patterns,
    bob_povm,
    monitoring_outcomes,
    occupied_slots,
    reduced_alice_state,
)

Pattern = Literal["same_10", "same_01", "different"]


@dataclass(frozen=True)
class ChannelParams:
    eta_channel: float
    eta_det: float = 1.0
    epsilon: float = 1e-7
    e_d: float = 0.01
    e_m: float = 0.005

    def __post_init__(self):
        if not 0 < self.eta_channel <= 1:
            raise ValueError(f"channel transmittance must lie in (0, 1], got {self.eta_channel}")
        if not 0 < self.eta_det <= 1:
            raise ValueError(f"detector efficiency must lie in (0, 1], got {self.eta_det}")
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"dark count probability must lie in [0, 1), got {self.epsilon}")
        if not 0 <= self.e_d < 0.5:
            raise ValueError(f"e_d must lie in [0, 1/2), got {self.e_d}")
        if not 0 <= self.e_m < 0.5:
            raise ValueError(f"e_m must lie in [0, 1/2), got {self.e_m}")

    @classmethod
    def from_loss_db(cls, loss_db: float, **kw) -> "ChannelParams":
        """Put the whole system loss into the channel (detector efficiency 1)."""
        if loss_db < 0:
            raise ValueError("loss must be non-negative")
        return cls(eta_channel=10 ** (-loss_db / 10), **kw)

    @property
    def eta_sys(self) -> float:
        return self.eta_channel * self.eta_det

    @property
    def loss_db(self) -> float:
        return -10 * math.log10(self.eta_sys) + 0.0  # no negative zero

    def with_loss_db(self, loss_db: float) -> "ChannelParams":
        return ChannelParams.from_loss_db(
            loss_db, epsilon=self.epsilon, e_d=self.e_d, e_m=self.e_m
        )


def _dark_and_signal(config: BlockConfig, params: ChannelParams) -> tuple[float, float]:
    """Per-outcome dark-count term and the coefficient of single-photon light."""
    m, eps, eta = config.m, params.epsilon, params.eta_sys
    survive = math.exp(-eta * config.lam)
    dark = eps * (1 - eps) ** (2 * m - 1) * survive
    signal = (1 - eps) ** (2 * m) * eta * config.mu * survive
    return dark, signal


def data_click_probs(config: BlockConfig, params: ChannelParams) -> tuple[float, float, float]:
    """(p_correct, p_error, p_inc) for a data-line measurement of one block.

    p_correct is the probability of a lone click in a given lit slot,
    p_error in a given dark slot.
    """
    dark, signal = _dark_and_signal(config, params)
    p_correct = dark + signal * (1 - params.e_d)
    p_error = dark + signal * params.e_d
    return p_correct, p_error, 1 - config.m * (p_correct + p_error)


def pattern_class(bit_a: int, bit_b: int) -> Pattern:
    """Monitoring pattern of two adjacent bits.

    ``same_10`` means both bits were sent as |alpha, 0> (pulses in the odd
    slots), ``same_01`` both as |0, alpha>.
    """
    if bit_a != bit_b:
        return "different"
    return "same_10" if bit_a == 0 else "same_01"


def monitoring_click_probs(
    config: BlockConfig, params: ChannelParams, pattern: Pattern
) -> tuple[float, float, float, float]:
    """(p_odd+, p_odd-, p_even+, p_even-) for the interferometer on bits l, l+1.

    Each entry is the probability of a single photon in that output port and
    nothing anywhere else in the block.
    """
    dark, signal = _dark_and_signal(config, params)
    ed, em = params.e_d, params.e_m
    if pattern == "different":
        plus = 2 * ed * (1 - ed) * (1 - em) + (1 + 2 * ed**2 - 2 * ed) / 2
        minus = 2 * ed * (1 - ed) * em + (1 + 2 * ed**2 - 2 * ed) / 2
        p = (dark + signal * plus, dark + signal * minus)
        return p + p
    lit = (
        dark + signal * (2 * (1 - ed) ** 2 * (1 - em) + ed * (1 - ed)),
        dark + signal * (2 * (1 - ed) ** 2 * em + ed * (1 - ed)),
    )
    unlit = (
        dark + signal * (2 * ed**2 * (1 - em) + ed * (1 - ed)),
        dark + signal * (2 * ed**2 * em + ed * (1 - ed)),
    )
    if pattern == "same_10":
        return lit + unlit
    if pattern == "same_01":
        return unlit + lit
    raise ValueError(f"unknown monitoring pattern {pattern!r}")


def visibility(config: BlockConfig, params: ChannelParams) -> float:
    """Interference contrast of the bright pair when both bits are equal."""
    plus, minus, _, _ = monitoring_click_probs(config, params, "same_10")
    total = plus + minus
    return (plus - minus) / total if total > 0 else 0.0


def data_outcome_prob(config: BlockConfig, params: ChannelParams, pattern, slot: int) -> float:
    p_correct, p_error, _ = data_click_probs(config, params)
    return p_correct if slot in occupied_slots(pattern) else p_error


def sifted_statistics(config: BlockConfig, params: ChannelParams) -> tuple[float, float]:
    """Gain G and averaged bit error by enumerating patterns, clicks and announcements."""
    m = config.m
    conclusive = 0.0
    errors = 0.0
    anns = announcements(m)
    for pattern in bit_patterns(m):
        lit = set(occupied_slots(pattern))
        for d in range(1, 2 * m + 1):
            p_click = data_outcome_prob(config, params, pattern, d) / 2**m
            for a in anns:
                if d not in a.slots:
                    continue
                s1, s2 = a.slots
                if (s1 in lit) == (s2 in lit):
                    continue  # Alice cannot tell which slot Bob meant
                conclusive += a.weight * p_click
                if d not in lit:
                    errors += a.weight * p_click
    if conclusive <= 0:
        return 0.0, 0.5
    return conclusive, errors / conclusive


# ------------------------------------------------------------ constraints


@dataclass
class ConstraintSet:
    constraints: list[tuple[HermitianOperator, float]]
    labels: list[tuple] = field(default_factory=list)
    gain: float = 0.0
    bit_error: float = 0.0
    visibility: float = 0.0

    def __len__(self):
        return len(self.constraints)

    def group(self, name: str) -> list[tuple[HermitianOperator, float]]:
        return [c for c, lab in zip(self.constraints, self.labels) if lab[0] == name]


def _alice_projector(config: BlockConfig, pattern) -> HermitianOperator:
    """|i><i| on the bit qubits, identity on the shield."""
    idx = int("".join(map(str, pattern)), 2)
    p = projector(basis_vector(2**config.m, idx))
    if config.randomized:
        p = kron(p, identity(config.shield_dim))
        return HermitianOperator(p.matrix, config.alice_dims, check=False)
    return HermitianOperator(p.matrix, config.alice_dims, check=False)


def bob_constraints(config: BlockConfig, params: ChannelParams):
    """Groups (a) and (b): Bob-outcome expectations for every Alice pattern.

    Yields ``(label, operator, value)``.
    """
    m = config.m
    povm = bob_povm(config)
    weight = 2.0**-m
    for pattern in bit_patterns(m):
        a_proj = _alice_projector(config, pattern)
        for d in range(1, 2 * m + 1):
            k = weight * data_outcome_prob(config, params, pattern, d)
            yield ("data", pattern, d), kron(a_proj, povm.data[d]), k
        for l in range(1, m):
            probs = monitoring_click_probs(
                config, params, pattern_class(pattern[l - 1], pattern[l])
            )
            for outcome, p in zip(monitoring_outcomes(l), probs):
                yield ("monitor", pattern, outcome), kron(a_proj, povm.monitoring[l][outcome]), weight * p


def observed_constraints(config: BlockConfig, params: ChannelParams) -> ConstraintSet:
    constraints, labels = [], []
    for label, op, k in bob_constraints(config, params):
        constraints.append((op, k))
        labels.append(label)
    rho_a = reduced_alice_state(config)
    eye_b = identity(config.bob_dim)
    for idx, t in enumerate(hermitian_basis(config.alice_dim)):
        t = HermitianOperator(t.matrix, config.alice_dims, check=False)
        constraints.append((kron(t, eye_b), t.expectation(rho_a)))
        labels.append(("tomography", idx))
    constraints.append((identity(config.layout), 1.0))
    labels.append(("normalization",))

    cs = ConstraintSet(constraints, labels)
    cs.gain, cs.bit_error = sifted_statistics(config, params)
    cs.visibility = visibility(config, params)
    for _, k in cs.group("data") + cs.group("monitor"):
        if not -1e-15 <= k <= weight_bound(config) + 1e-15:
            raise ConsistencyError(f"observed probability {k} outside [0, 2^-m]")
    return cs


def weight_bound(config: BlockConfig) -> float:
    return 2.0**-config.m


def span_expectation(op: HermitianOperator, cs: ConstraintSet, tol: float = 1e-9) -> float:
    """Expectation of ``op`` implied by the constraints, if op lies in their span.

    Solves op = sum_i c_i K_i in the least-squares sense and returns
    sum_i c_i k_i.  Raises if the residual shows op is not determined.
    """
    mats = np.array([k.matrix.ravel() for k, _ in cs.constraints])
    # restrict to entries where some operator is non-zero; all others must vanish in op too
    support = np.flatnonzero(np.any(mats != 0, axis=0) | (op.matrix.ravel() != 0))
    a = mats[:, support].T
    target = op.matrix.ravel()[support]
    a_ri = np.concatenate([a.real, a.imag])
    t_ri = np.concatenate([target.real, target.imag])
    coef, *_ = scipy.linalg.lstsq(a_ri, t_ri, lapack_driver="gelsy")
    resid = np.max(np.abs(a_ri @ coef - t_ri), initial=0.0)
    if resid > tol * max(1.0, np.max(np.abs(t_ri), initial=0.0)):
        raise ConsistencyError(f"operator is not fixed by the constraints (residual {resid:.2e})")
    return float(coef @ np.array([k for _, k in cs.constraints]))


# --------------------------------------------------------- honest state


def _flip_averaged_single_photon(config: BlockConfig, params: ChannelParams, i, j) -> np.ndarray:
    """E_flips[|s_i><s_j|] with inter-bit coherences damped by the monitoring noise.

    |s_i> is the (unnormalized) sum of the lit slots of pattern i.  Each bit
    is swapped independently with probability e_d.  The wrong-port error is
    realised as an independent pi phase flip per bit with probability q,
    where (1 - 2q)^2 = 1 - 2 e_m; it damps coherence between different bits.
    """
    m = config.m
    ed = params.e_d
    damp = 1 - 2 * params.e_m
    out = np.zeros((2 * m, 2 * m))
    for l in range(m):
        for lp in range(m):
            if l == lp:
                for flip, p in ((0, 1 - ed), (1, ed)):
                    r = 2 * l + (i[l] ^ flip)
                    c = 2 * lp + (j[lp] ^ flip)
                    out[r, c] += p
            else:
                for f1, p1 in ((0, 1 - ed), (1, ed)):
                    for f2, p2 in ((0, 1 - ed), (1, ed)):
                        r = 2 * l + (i[l] ^ f1)
                        c = 2 * lp + (j[lp] ^ f2)
                        out[r, c] += p1 * p2 * damp
    return out


def _squashed_block(config, params, i, j, vac: float, single: float, total: float) -> np.ndarray:
    """Bob's squashed operator for Alice entry (i, j).

    ``vac`` and ``single`` weight the vacuum and one-photon sectors, ``total``
    is the full overlap; whatever is not a conclusive single photon goes to |a>.
    """
    m, eps = config.m, params.epsilon
    dark = eps * (1 - eps) ** (2 * m - 1)
    keep = (1 - eps) ** (2 * m)
    b = np.zeros((2 * m + 1, 2 * m + 1))
    b[: 2 * m, : 2 * m] = keep * single * _flip_averaged_single_photon(config, params, i, j)
    b[: 2 * m, : 2 * m] += vac * dark * np.eye(2 * m)
    b[-1, -1] = total - np.trace(b)
    return b


def _honest_bits_state(config, params, weight_fn) -> np.ndarray:
    m = config.m
    pats = bit_patterns(m)
    d_b = 2 * m + 1
    out = np.zeros((2**m, d_b, 2**m, d_b))
    for a, i in enumerate(pats):
        for b, j in enumerate(pats):
            delta = sum(x != y for x, y in zip(i, j))
            vac, single, total = weight_fn(delta)
            out[a, :, b, :] = _squashed_block(config, params, i, j, vac, single, total) / 2**m
    return out.reshape(2**m * d_b, 2**m * d_b)


def honest_state(config: BlockConfig, params: ChannelParams) -> HermitianOperator:
    """Squashed Alice-Bob state produced by the honest channel.

    This is an explicit feasible point of the constraint set and the
    reference for the honest phase error.
    """
    m, mu, eta = config.m, config.mu, params.eta_sys
    lam = config.lam

    def pure_weights(delta):
        env = math.exp(-(1 - eta) * mu * delta)
        vac = env * math.exp(-eta * lam)
        return vac, vac * eta * mu, math.exp(-mu * delta)

    pure = _honest_bits_state(config, params, pure_weights)
    if not config.randomized:
        return HermitianOperator(pure, config.layout, check=False)

    blocks = []
    for n in range(1, config.n_cut + 1):

        def shell(delta, n=n):
            t = (1 - eta) * mu * (m - delta)
            base = math.exp(-lam)
            vac = base * t**n / math.factorial(n)
            single = base * t ** (n - 1) / math.factorial(n - 1) * eta * mu
            total = base * (mu * (m - delta)) ** n / math.factorial(n)
            return vac, single, total

        blocks.append(_honest_bits_state(config, params, shell))
    blocks.append(pure - sum(blocks))
    d_ab = 2**m
    d_b = config.bob_dim
    s = config.shield_dim
    out = np.zeros((d_ab, s, d_b, d_ab, s, d_b))
    for k, blk in enumerate(blocks):
        out[:, k, :, :, k, :] = blk.reshape(d_ab, d_b, d_ab, d_b)
    n = d_ab * s * d_b
    return HermitianOperator(out.reshape(n, n), config.layout, check=False)


# ------------------------------------------------------ Monte-Carlo oracle


@dataclass
class OracleResult:
    samples: int
    counts: dict

    def frequency(self, outcome) -> float:
        return self.counts.get(outcome, 0) / self.samples

    def stderr(self, outcome) -> float:
        p = self.frequency(outcome)
        return math.sqrt(max(p * (1 - p), 0.0) / self.samples)

    def table(self) -> dict:
        return {k: (self.frequency(k), self.stderr(k)) for k in sorted(self.counts, key=str)}


def _simulate_shard(config, params, pattern, setting, n, rng) -> dict:
    m = config.m
    slots = 2 * m
    inten = np.zeros((n, slots))
    for s in occupied_slots(pattern):
        inten[:, s - 1] = config.mu
    inten *= params.eta_sys
    # incoherent swap of the two slots of each bit
    flips = rng.random((n, m)) < params.e_d
    pairs = inten.reshape(n, m, 2)
    pairs[flips] = pairs[flips][:, ::-1]
    inten = pairs.reshape(n, slots)

    if setting == "data":
        labels = list(range(1, slots + 1))
        out_int = inten
    else:
        l = int(setting)
        if not 1 <= l < m:
            raise ValueError(f"monitoring setting must lie in 1..{m - 1}")
        amp = np.sqrt(inten)
        out_int = inten.copy()
        labels = list(range(1, slots + 1))
        for c in (2 * l - 1, 2 * l):
            a1, a2 = amp[:, c - 1], amp[:, c + 1]
            plus = (a1 + a2) ** 2 / 2
            minus = (a1 - a2) ** 2 / 2
            wrong = rng.random(n) < params.e_m
            plus, minus = np.where(wrong, minus, plus), np.where(wrong, plus, minus)
            out_int[:, c - 1] = plus
            out_int[:, c + 1] = minus
            labels[c - 1] = (c, +1)
            labels[c + 1] = (c, -1)

    counts = rng.poisson(out_int) + (rng.random((n, slots)) < params.epsilon)
    single = counts.sum(axis=1) == 1
    where = np.argmax(counts, axis=1)
    tally = np.bincount(where[single], minlength=slots)
    res = {}
    for idx, lab in enumerate(labels):
        if setting != "data" and not isinstance(lab, tuple):
            continue  # a lone photon outside the interferometer is inconclusive
        res[lab] = int(tally[idx])
    res["inc"] = n - sum(res.values())
    return res


def monte_carlo_oracle(
    config: BlockConfig,
    params: ChannelParams,
    pattern,
    setting="data",
    samples: int = 1_000_000,
    seed: int = 0,
    shard_size: int = 1 << 17,
) -> OracleResult:
    """Sample the optical chain shot by shot and tally single-click outcomes.

    The stream is split into fixed-size shards, each with its own Philox
    generator derived from ``seed``, so the result does not depend on how
    shards are scheduled.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pattern = tuple(int(b) for b in pattern)
    if len(pattern) != config.m:
        raise ValueError(f"pattern must have {config.m} bits")
    n_shards = -(-samples // shard_size)
    children = np.random.SeedSequence(seed).spawn(n_shards)
    totals: dict = {}
    for k, child in enumerate(children):
        n = min(shard_size, samples - k * shard_size)
        rng = np.random.Generator(np.random.Philox(child))
        for lab, c in _simulate_shard(config, params, pattern, setting, n, rng).items():
            totals[lab] = totals.get(lab, 0) + c
    return OracleResult(samples, totals)
