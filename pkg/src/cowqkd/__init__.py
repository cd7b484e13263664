"""Finite-block security bound for the coherent-one-way QKD protocol."""

from .channel import ChannelParams, observed_constraints, sifted_statistics
from .keyrate import (
    RatePoint,
    binary_entropy,
    compute_rate_point,
    max_phase_error,
    optimize_intensity,
    rate_from_statistics,
    sweep_and_cutoff,
)
from .protocol import BlockConfig
from .sdp import SdpProblem, certified_bound, solve

__all__ = [
    "BlockConfig",
    "ChannelParams",
    "RatePoint",
    "SdpProblem",
    "binary_entropy",
    "certified_bound",
    "compute_rate_point",
    "max_phase_error",
    "observed_constraints",
    "optimize_intensity",
    "rate_from_statistics",
    "sifted_statistics",
    "solve",
    "sweep_and_cutoff",
]
