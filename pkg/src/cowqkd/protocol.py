"""Finite-dimensional block model of the coherent-one-way protocol.

A block carries ``m`` key bits in ``2m`` temporal slots; bit ``l`` (1-based)
owns slots ``2l-1`` and ``2l``.  Alice's bit value 0 puts the pulse in the
first slot of the pair, value 1 in the second.

Bob's squashed space has dimension ``2m + 1``: index ``s - 1`` holds a single
photon in slot ``s`` and the last index is the auxiliary state ``|a>`` that
carries every inconclusive event.

Alice's space is ``m`` qubits, optionally followed by a shield of
``n_cut + 1`` levels (photon numbers ``1..n_cut`` and a collector ``N``) when
blocks are phase randomized.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Sequence

import numpy as np
from scipy.special import gammainc
from scipy.stats import poisson

from .operators import (
    HermitianOperator,
    SubsystemLayout,
    basis_vector,
    embed,
    identity,
    kron,
    kron_all,
    projector,
    zeros,
)

PhaseMode = Literal["pure", "randomized"]
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class BlockConfig:
    m: int
    mu: float
    phase_mode: PhaseMode = "pure"
    n_cut: int = 2

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"block size m must be an integer >= 2, got {self.m}")
        if not np.isfinite(self.mu) or self.mu <= 0:
            raise ValueError(f"mean photon number must be positive, got {self.mu}")
        if self.phase_mode not in ("pure", "randomized"):
            raise ValueError(f"unknown phase mode {self.phase_mode!r}")
        if int(self.n_cut) != self.n_cut or self.n_cut < 1:
            raise ValueError(f"n_cut must be an integer >= 1, got {self.n_cut}")

    @property
    def lam(self) -> float:
        """Mean photon number of a whole block."""
        return self.m * self.mu

    @property
    def randomized(self) -> bool:
        return self.phase_mode == "randomized"

    @property
    def shield_dim(self) -> int:
        return self.n_cut + 1 if self.randomized else 1

    @property
    def alice_dims(self) -> tuple[int, ...]:
        dims = (2,) * self.m
        return dims + (self.n_cut + 1,) if self.randomized else dims

    @property
    def alice_dim(self) -> int:
        return 2**self.m * self.shield_dim

    @property
    def bob_dim(self) -> int:
        return 2 * self.m + 1

    @property
    def layout(self) -> SubsystemLayout:
        return SubsystemLayout(self.alice_dims + (self.bob_dim,))

    def with_mu(self, mu: float) -> "BlockConfig":
        return BlockConfig(self.m, mu, self.phase_mode, self.n_cut)


def bit_patterns(m: int) -> list[tuple[int, ...]]:
    """All m-bit strings in the computational-basis order of the Alice register."""
    return list(itertools.product((0, 1), repeat=m))


def occupied_slots(pattern: Sequence[int]) -> list[int]:
    """1-based slots that carry a pulse for the given bit pattern."""
    return [2 * l + 1 + b for l, b in enumerate(pattern)]


def hamming(i: Sequence[int], j: Sequence[int]) -> int:
    if len(i) != len(j):
        raise ValueError(f"bit strings differ in length: {len(i)} vs {len(j)}")
    return sum(a != b for a, b in zip(i, j))


def _bits(x) -> tuple[int, ...]:
    if isinstance(x, str):
        return tuple(int(c) for c in x)
    return tuple(int(c) for c in x)


def gram_overlap(m: int, n: int, i, j) -> float:
    """Overlap of the n-photon projections of the block states for strings i, j."""
    i, j = _bits(i), _bits(j)
    if len(i) != m or len(j) != m:
        raise ValueError(f"bit strings must have length {m}")
    if n < 0:
        raise ValueError("photon number must be >= 0")
    return ((m - hamming(i, j)) / m) ** n


@lru_cache(maxsize=None)
def _hamming_matrix(m: int) -> np.ndarray:
    pats = np.array(bit_patterns(m))
    return (pats[:, None, :] != pats[None, :, :]).sum(axis=2)


def photon_number_block(m: int, n: int) -> np.ndarray:
    """Normalized Alice-bit state conditioned on n photons in the block."""
    r = (m - _hamming_matrix(m)) / m
    return r**n / 2**m


def reduced_alice_state(config: BlockConfig) -> HermitianOperator:
    m = config.m
    if not config.randomized:
        e = np.exp(-config.mu)
        single = HermitianOperator([[0.5, 0.5 * e], [0.5 * e, 0.5]], check=False)
        return kron_all([single] * m)
    lam = config.lam
    r = (m - _hamming_matrix(m)) / m
    blocks = []
    for n in range(1, config.n_cut + 1):
        blocks.append(poisson.pmf(n, lam) * photon_number_block(m, n))
    # collector: vacuum plus every n > n_cut, summed in closed form
    tail = np.exp(-lam * (1 - r)) * gammainc(config.n_cut + 1, lam * r)
    tail = np.where(r > 0, tail, 0.0)
    blocks.append((np.exp(-lam) + tail) / 2**m)
    s = config.shield_dim
    dim_b = 2**m
    out = np.zeros((dim_b, s, dim_b, s))
    for k, blk in enumerate(blocks):
        out[:, k, :, k] = blk
    return HermitianOperator(out.reshape(dim_b * s, dim_b * s), config.alice_dims, check=False)


def shield_weights(config: BlockConfig) -> np.ndarray:
    """Probability of each shield level (1..n_cut, then the collector)."""
    lam = config.lam
    w = [poisson.pmf(n, lam) for n in range(1, config.n_cut + 1)]
    w.append(poisson.pmf(0, lam) + poisson.sf(config.n_cut, lam))
    return np.array(w)


# ---------------------------------------------------------------- Bob side


def bob_ket(config_or_m, slot: int | None = None) -> np.ndarray:
    """Basis vector of Bob's squashed space; ``slot=None`` gives ``|a>``."""
    m = config_or_m.m if isinstance(config_or_m, BlockConfig) else int(config_or_m)
    dim = 2 * m + 1
    return basis_vector(dim, dim - 1 if slot is None else slot - 1)


def chi(m: int, c: int, sign: int) -> np.ndarray:
    """Single photon in the superposition of slots c and c+2."""
    return (bob_ket(m, c) + sign * bob_ket(m, c + 2)) / np.sqrt(2.0)


@dataclass(frozen=True)
class BobPovm:
    """Squashed measurement elements, keyed by outcome label.

    ``data`` maps slot ``d`` (1..2m) and ``"inc"`` to operators.
    ``monitoring[l]`` maps ``(c, sign)`` for ``c in (2l-1, 2l)`` and
    ``"inc"`` to operators of the setting that interferes bits l and l+1.
    """

    data: dict
    monitoring: dict

    def settings(self):
        yield "data", self.data
        for l, elems in self.monitoring.items():
            yield l, elems


def monitoring_outcomes(l: int) -> list[tuple[int, int]]:
    return [(2 * l - 1, +1), (2 * l - 1, -1), (2 * l, +1), (2 * l, -1)]


def bob_povm(config: BlockConfig) -> BobPovm:
    m = config.m
    dim = config.bob_dim
    eye = identity(dim)
    data = {d: projector(bob_ket(m, d)) for d in range(1, 2 * m + 1)}
    data["inc"] = projector(bob_ket(m, None))
    monitoring = {}
    for l in range(1, m):
        elems = {(c, s): projector(chi(m, c, s)) for c, s in monitoring_outcomes(l)}
        conclusive = sum(elems.values(), zeros(dim))
        elems["inc"] = eye - conclusive
        monitoring[l] = elems
    return BobPovm(data, monitoring)


# ------------------------------------------------------------ announcements


@dataclass(frozen=True)
class Announcement:
    """Bob's public declaration of two same-parity slots at cyclic distance 2.

    ``slots`` is ordered along the chain: a click in ``slots[0]`` is read as
    sifted bit 0, a click in ``slots[1]`` as bit 1.  ``bits`` are the
    (1-based) key bits owning those slots.
    """

    parity: Literal["odd", "even"]
    slots: tuple[int, int]
    bits: tuple[int, int]
    weight: float


def announcements(m: int) -> list[Announcement]:
    if m < 2:
        raise ValueError("the closed chain needs m >= 2")
    out = []
    seen = {}
    for parity, offset in (("odd", 1), ("even", 0)):
        for l in range(1, m + 1):
            first = 2 * l - offset
            second = (first + 1) % (2 * m) + 1
            key = frozenset((first, second))
            nxt = l % m + 1
            if key in seen:
                # m == 2: both neighbours of a slot coincide
                idx = seen[key]
                a = out[idx]
                out[idx] = Announcement(a.parity, a.slots, a.bits, a.weight + 0.5)
                continue
            seen[key] = len(out)
            out.append(Announcement(parity, (first, second), (l, nxt), 0.5))
    return out


@dataclass(frozen=True)
class SiftingMaps:
    announcement: Announcement
    filter_alice: np.ndarray  # 2 x 4, acting on qubits announcement.bits (in that order)
    filter_bob: np.ndarray  # 2 x (2m+1)

    @property
    def bob_effect(self) -> np.ndarray:
        return self.filter_bob.T @ self.filter_bob

    @property
    def alice_effect(self) -> np.ndarray:
        return self.filter_alice.T @ self.filter_alice


def _alice_filter(parity: str, flip: bool) -> np.ndarray:
    # rows: sifted bit 0, 1; columns: |00>,|01>,|10>,|11> of (first bit, second bit).
    # Odd pair: pattern 01 leaves the first slot lit and the second dark, which is
    # what Bob reads as 0.  Even pair: the roles of 01 and 10 swap.
    f = np.zeros((2, 4))
    zero, one = (1, 2) if parity == "odd" else (2, 1)
    f[0, zero] = 1.0
    f[1, one] = 1.0
    return SIGMA_X @ f if flip else f


def announcement_filters(config: BlockConfig, flip_labels: bool = False) -> list[SiftingMaps]:
    m = config.m
    out = []
    for a in announcements(m):
        fb = np.zeros((2, config.bob_dim))
        fb[0, a.slots[0] - 1] = np.sqrt(a.weight)
        fb[1, a.slots[1] - 1] = np.sqrt(a.weight)
        out.append(SiftingMaps(a, _alice_filter(a.parity, flip_labels), fb))
    return out


def _full(config: BlockConfig, alice_pair_op: np.ndarray, bits: tuple[int, int], bob_op) -> HermitianOperator:
    """alice_pair_op on qubits ``bits`` (identity elsewhere, incl. shield) times bob_op."""
    a_layout = SubsystemLayout(config.alice_dims)
    positions = [bits[0] - 1, bits[1] - 1]
    alice = embed(HermitianOperator(alice_pair_op, (2, 2), check=False), positions, a_layout)
    return kron(alice, HermitianOperator(bob_op, check=False))


def gain_operator(config: BlockConfig, flip_labels: bool = False) -> HermitianOperator:
    total = zeros(config.layout)
    for sm in announcement_filters(config, flip_labels):
        total = total + _full(config, sm.alice_effect, sm.announcement.bits, sm.bob_effect)
    return total


def phase_error_x(config: BlockConfig, flip_labels: bool = False) -> HermitianOperator:
    """Operator whose expectation is subtracted from G/2 to give the phase error."""
    total = zeros(config.layout)
    for sm in announcement_filters(config, flip_labels):
        xa = sm.filter_alice.T @ SIGMA_X @ sm.filter_alice
        xb = sm.filter_bob.T @ SIGMA_X @ sm.filter_bob
        total = total + 0.5 * _full(config, xa, sm.announcement.bits, xb)
    return total


def phase_error_objective(config: BlockConfig, flip_labels: bool = False) -> HermitianOperator:
    return 0.5 * gain_operator(config, flip_labels) - phase_error_x(config, flip_labels)


def bit_error_operator(config: BlockConfig, flip_labels: bool = False) -> HermitianOperator:
    """Conclusive events whose sifted bits disagree, summed over announcements."""
    total = zeros(config.layout)
    for sm in announcement_filters(config, flip_labels):
        for bit in (0, 1):
            fa = sm.filter_alice[bit]
            fb = sm.filter_bob[1 - bit]
            total = total + _full(config, np.outer(fa, fa), sm.announcement.bits, np.outer(fb, fb))
    return total
