import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cowqkd.channel import (
    ChannelParams,
    data_click_probs,
    honest_state,
    monitoring_click_probs,
    monte_carlo_oracle,
    observed_constraints,
    pattern_class,
    sifted_statistics,
    span_expectation,
    visibility,
)
from cowqkd.errors import ConsistencyError
from cowqkd.operators import HermitianOperator, min_eigenvalue
from cowqkd.protocol import BlockConfig, bit_error_operator, bit_patterns, gain_operator, monitoring_outcomes


def test_params_validation_and_loss():
    p = ChannelParams.from_loss_db(20.0)
    assert p.eta_sys == pytest.approx(0.01)
    assert p.loss_db == pytest.approx(20.0)
    assert ChannelParams(0.5, eta_det=0.2).loss_db == pytest.approx(10.0)
    assert (p.epsilon, p.e_d, p.e_m) == (1e-7, 0.01, 0.005)
    for bad in (dict(eta_channel=0), dict(eta_channel=1.5), dict(eta_channel=1, e_d=0.5), dict(eta_channel=1, e_m=0.6), dict(eta_channel=1, epsilon=1)):
        with pytest.raises(ValueError):
            ChannelParams(**bad)
    with pytest.raises(ValueError):
        ChannelParams.from_loss_db(-1)


# ------------------------------------------------------------ closed forms


def test_data_click_noiseless():
    cfg = BlockConfig(3, 0.05)
    p = ChannelParams(0.4, epsilon=0, e_d=0)
    pc, pe, pinc = data_click_probs(cfg, p)
    assert pc == pytest.approx(0.4 * 0.05 * math.exp(-0.4 * 0.15))
    assert pe == 0
    assert pinc == pytest.approx(1 - 3 * pc)


def test_data_click_dark_only_limit():
    cfg = BlockConfig(2, 0.05)
    p = ChannelParams(1e-300, epsilon=1e-3)
    pc, pe, _ = data_click_probs(cfg, p)
    expected = 1e-3 * (1 - 1e-3) ** 3
    assert pc == pytest.approx(expected) and pe == pytest.approx(expected)


def test_data_click_m2_example():
    pc, pe, _ = data_click_probs(BlockConfig(2, 0.01), ChannelParams(1.0, epsilon=0, e_d=0))
    assert pc == pytest.approx(0.01 * math.exp(-0.02))
    assert pc == pytest.approx(9.802e-3, abs=5e-7)


def test_monitoring_ideal_limits():
    cfg = BlockConfig(3, 0.05)
    p = ChannelParams(0.5, epsilon=0, e_d=0, e_m=0)
    base = 0.5 * 0.05 * math.exp(-0.5 * 0.15)
    op, om, ep, em = monitoring_click_probs(cfg, p, "same_10")
    assert op == pytest.approx(2 * base) and om == 0
    assert ep == 0 and em == 0
    op, om, ep, em = monitoring_click_probs(cfg, p, "same_01")
    assert ep == pytest.approx(2 * base) and op == 0
    op, om, ep, em = monitoring_click_probs(cfg, p, "different")
    assert op == pytest.approx(base / 2) and om == pytest.approx(base / 2)
    assert ep == pytest.approx(base / 2) and em == pytest.approx(base / 2)


def test_intrinsic_visibility():
    cfg = BlockConfig(3, 0.05)
    assert visibility(cfg, ChannelParams(0.5, epsilon=0, e_d=0)) == pytest.approx(0.99)


def test_pattern_class():
    assert pattern_class(0, 0) == "same_10"
    assert pattern_class(1, 1) == "same_01"
    assert pattern_class(0, 1) == pattern_class(1, 0) == "different"


@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("pattern", ["same_10", "same_01", "different"])
def test_per_setting_probabilities_sum_to_one(m, pattern):
    cfg = BlockConfig(m, 0.1)
    p = ChannelParams(0.3, epsilon=1e-3, e_d=0.03, e_m=0.02)
    pc, pe, pinc = data_click_probs(cfg, p)
    assert m * (pc + pe) + pinc == pytest.approx(1.0, abs=1e-15)
    conclusive = sum(monitoring_click_probs(cfg, p, pattern))
    assert 0 < conclusive < 1


# --------------------------------------------------------- sifted statistics


@pytest.mark.parametrize("m", [2, 3, 4])
@pytest.mark.parametrize("loss", [0.0, 10.0, 25.0])
def test_bit_error_equals_ed_without_darks(m, loss):
    p = ChannelParams.from_loss_db(loss, epsilon=0.0, e_d=0.013)
    _, e = sifted_statistics(BlockConfig(m, 0.05), p)
    assert e == pytest.approx(0.013, abs=1e-14)


def test_bit_error_tends_to_half_in_dark_regime():
    p = ChannelParams(1e-12, epsilon=1e-4)
    g, e = sifted_statistics(BlockConfig(3, 0.05), p)
    assert g > 0 and e == pytest.approx(0.5, abs=1e-6)


def test_gain_zero_without_light_or_darks():
    g, e = sifted_statistics(BlockConfig(3, 1e-300), ChannelParams(1.0, epsilon=0.0))
    assert g == pytest.approx(0.0, abs=1e-290)


def test_gain_monotone_in_loss():
    cfg = BlockConfig(3, 0.05)
    gains = [sifted_statistics(cfg, ChannelParams.from_loss_db(x, epsilon=0.0))[0] for x in range(0, 30, 3)]
    assert all(a >= b for a, b in zip(gains, gains[1:]))


def test_bit_error_monotone():
    cfg = BlockConfig(3, 0.01)
    errs = [sifted_statistics(cfg, ChannelParams.from_loss_db(x))[1] for x in range(10, 40, 3)]
    assert all(a <= b + 1e-15 for a, b in zip(errs, errs[1:]))
    by_ed = [sifted_statistics(cfg, ChannelParams(0.1, e_d=x))[1] for x in (0.0, 0.01, 0.05, 0.2)]
    assert all(a <= b for a, b in zip(by_ed, by_ed[1:]))


# ------------------------------------------------------------ constraints


def test_constraint_count_m2():
    cs = observed_constraints(BlockConfig(2, 0.1), ChannelParams(0.5))
    assert len(cs.group("data")) == 16
    assert len(cs.group("monitor")) == 16
    assert len(cs.group("tomography")) == 16
    assert len(cs.group("normalization")) == 1
    assert len(cs) == 49


@pytest.mark.parametrize("m", [2, 3])
def test_observed_probabilities_bounded(m):
    cs = observed_constraints(BlockConfig(m, 0.3), ChannelParams(0.7, epsilon=1e-3, e_d=0.1, e_m=0.1))
    for _, k in cs.group("data") + cs.group("monitor"):
        assert 0 <= k <= 2.0**-m
    for op, _ in cs.group("data") + cs.group("monitor"):
        ev = np.linalg.eigvalsh(op.matrix)
        assert ev[0] >= -1e-14 and ev[-1] <= 1 + 1e-14


@pytest.mark.parametrize("m", [2, 3])
def test_bob_statistics_phase_mode_independent(m):
    p = ChannelParams(0.2)
    pure = observed_constraints(BlockConfig(m, 0.05), p)
    rnd = observed_constraints(BlockConfig(m, 0.05, "randomized"), p)
    for group in ("data", "monitor"):
        assert [k for _, k in pure.group(group)] == [k for _, k in rnd.group(group)]


@pytest.mark.parametrize("mode", ["pure", "randomized"])
@pytest.mark.parametrize("m", [2, 3])
def test_gain_and_error_two_paths(mode, m):
    cfg = BlockConfig(m, 0.07, mode)
    p = ChannelParams.from_loss_db(7.0, epsilon=1e-5)
    cs = observed_constraints(cfg, p)
    g = span_expectation(gain_operator(cfg), cs)
    e = span_expectation(bit_error_operator(cfg), cs) / g
    assert (cs.gain, cs.bit_error) == pytest.approx((g, e), abs=1e-12)
    assert (cs.gain, cs.bit_error) == sifted_statistics(cfg, p)


def test_span_expectation_rejects_unfixed_operator():
    cfg = BlockConfig(2, 0.1)
    cs = observed_constraints(cfg, ChannelParams(0.5))
    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 20))
    with pytest.raises(ConsistencyError):
        span_expectation(HermitianOperator(a + a.T, cfg.layout), cs)


# ----------------------------------------------------------- honest state


@pytest.mark.parametrize("mode", ["pure", "randomized"])
@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("loss", [0.0, 12.0, 30.0])
def test_honest_state_is_feasible(mode, m, loss):
    cfg = BlockConfig(m, 0.2, mode)
    p = ChannelParams.from_loss_db(loss, epsilon=1e-4, e_d=0.02, e_m=0.01)
    rho = honest_state(cfg, p)
    assert rho.trace() == pytest.approx(1.0, abs=1e-12)
    assert min_eigenvalue(rho) >= -1e-12
    cs = observed_constraints(cfg, p)
    worst = max(abs(op.expectation(rho) - k) for op, k in cs.constraints)
    assert worst < 1e-12
    assert gain_operator(cfg).expectation(rho) == pytest.approx(cs.gain, abs=1e-14)


# ------------------------------------------------------- Monte-Carlo oracle

MC_PARAMS = ChannelParams(0.5, epsilon=2e-3, e_d=0.05, e_m=0.04)


def _within(result, outcome, expected, k=4.0):
    f = result.frequency(outcome)
    se = math.sqrt(max(expected * (1 - expected), 1e-300) / result.samples)
    return abs(f - expected) <= k * se


def test_oracle_vacuum_input():
    res = monte_carlo_oracle(BlockConfig(2, 1e-300), ChannelParams(1.0, epsilon=0.0), "01", samples=10_000)
    assert res.frequency("inc") == 1.0


def test_oracle_deterministic_and_shard_independent():
    cfg = BlockConfig(2, 0.2)
    a = monte_carlo_oracle(cfg, MC_PARAMS, "01", samples=50_000, seed=3)
    b = monte_carlo_oracle(cfg, MC_PARAMS, "01", samples=50_000, seed=3)
    assert a.counts == b.counts
    c = monte_carlo_oracle(cfg, MC_PARAMS, "01", samples=50_000, seed=4)
    assert a.counts != c.counts


def test_oracle_rejects_bad_input():
    with pytest.raises(ValueError):
        monte_carlo_oracle(BlockConfig(2, 0.1), MC_PARAMS, "01", samples=0)
    with pytest.raises(ValueError):
        monte_carlo_oracle(BlockConfig(2, 0.1), MC_PARAMS, "011", samples=10)
    with pytest.raises(ValueError):
        monte_carlo_oracle(BlockConfig(2, 0.1), MC_PARAMS, "01", setting=2, samples=10)


def test_oracle_m2_data_example():
    cfg = BlockConfig(2, 0.01)
    p = ChannelParams(1.0, epsilon=0.0, e_d=0.0)
    res = monte_carlo_oracle(cfg, p, "01", samples=1_000_000, seed=11)
    pc, _, _ = data_click_probs(cfg, p)
    assert _within(res, 1, pc) and _within(res, 4, pc)
    assert res.frequency(2) == 0 and res.frequency(3) == 0


def test_oracle_visibility():
    cfg = BlockConfig(2, 0.2)
    res = monte_carlo_oracle(cfg, MC_PARAMS, "00", setting=1, samples=1_000_000, seed=5)
    plus, minus = res.frequency((1, 1)), res.frequency((1, -1))
    v_emp = (plus - minus) / (plus + minus)
    v = visibility(cfg, MC_PARAMS)
    # delta method for the contrast of two multinomial cells
    n = res.samples
    var = 4 * (minus**2 * plus + plus**2 * minus) / ((plus + minus) ** 4 * n)
    assert abs(v_emp - v) <= 4 * math.sqrt(var)


def oracle_mismatches(m, samples=1_000_000, params=MC_PARAMS, mu=0.2):
    """Every closed-form single-click probability versus the sampled frequency."""
    cfg = BlockConfig(m, mu)
    pc, pe, pinc = data_click_probs(cfg, params)
    bad = []
    for idx, pat in enumerate(bit_patterns(m)):
        res = monte_carlo_oracle(cfg, params, pat, samples=samples, seed=100 + idx)
        lit = [2 * l + 1 + b for l, b in enumerate(pat)]
        checks = [(d, pc if d in lit else pe) for d in range(1, 2 * m + 1)] + [("inc", pinc)]
        for outcome, expected in checks:
            if not _within(res, outcome, expected):
                bad.append((pat, "data", outcome, res.frequency(outcome), expected))
        for l in range(1, m):
            res = monte_carlo_oracle(cfg, params, pat, setting=l, samples=samples, seed=1000 * l + idx)
            probs = monitoring_click_probs(cfg, params, pattern_class(pat[l - 1], pat[l]))
            for outcome, expected in zip(monitoring_outcomes(l), probs):
                if not _within(res, outcome, expected):
                    bad.append((pat, l, outcome, res.frequency(outcome), expected))
    return bad


@pytest.mark.parametrize("m", [2, 3])
def test_oracle_matches_closed_forms(m):
    assert oracle_mismatches(m) == []


@settings(max_examples=10, deadline=None)
@given(
    st.floats(min_value=1e-3, max_value=1.0),
    st.floats(min_value=0.01, max_value=1.0),
    st.floats(min_value=0, max_value=0.4),
    st.floats(min_value=0, max_value=0.4),
)
def test_monitoring_probabilities_valid(mu, eta, ed, em):
    cfg = BlockConfig(3, mu)
    p = ChannelParams(eta, epsilon=1e-6, e_d=ed, e_m=em)
    for pat in ("same_10", "same_01", "different"):
        probs = monitoring_click_probs(cfg, p, pat)
        assert all(0 <= x <= 1 for x in probs)
        assert sum(probs) <= 1
