import math

import pytest

from dqps import (
    ParameterError,
    RateInputs,
    SweepSpec,
    active_switch_crossover,
    active_switch_optimum,
    asymptotic_optimum,
    channel_q,
    key_rate,
    optimize_mu,
    sweep,
)


def rate_at(L, eta, error_rate, mu):
    Q = channel_q(L, mu, eta)
    inputs = RateInputs.from_error_rates(L, mu, 1.0, Q, error_rate, error_rate)
    return key_rate(inputs).rate_per_pulse


def test_optimize_mu_tracks_small_loss_limit():
    mu_opt, rate = optimize_mu(2, 1e-4, 0.0)
    ref_mu, ref_rate = asymptotic_optimum(2, 1e-4)
    assert mu_opt == pytest.approx(ref_mu, rel=0.05)
    assert rate == pytest.approx(ref_rate, rel=0.05)


def test_optimize_mu_result_is_self_consistent():
    mu_opt, rate = optimize_mu(4, 0.05, 0.02)
    assert mu_opt is not None
    assert rate == pytest.approx(rate_at(4, 0.05, 0.02, mu_opt), rel=1e-12)
    # a genuine interior maximum: nearby intensities do worse
    assert rate >= rate_at(4, 0.05, 0.02, mu_opt * 1.01)
    assert rate >= rate_at(4, 0.05, 0.02, mu_opt * 0.99)


def test_optimize_mu_infeasible_everywhere():
    # error rate past the distillation threshold kills every intensity
    result = optimize_mu(2, 0.5, 0.4)
    assert result.mu_opt is None
    assert result.rate == 0.0


def test_optimize_mu_validation():
    with pytest.raises(ParameterError, match="'eta'"):
        optimize_mu(2, 0.0, 0.03)
    with pytest.raises(ParameterError, match="'eta'"):
        optimize_mu(2, 1.5, 0.03)
    with pytest.raises(ParameterError, match="mu_bounds"):
        optimize_mu(2, 0.5, 0.03, mu_bounds=(0.1, 0.1))


def test_asymptotic_optimum_values():
    mu, rate = asymptotic_optimum(2, 1e-2)
    assert mu == pytest.approx(2.5e-3, rel=1e-15)
    assert rate == pytest.approx(1e-4 / 16, rel=1e-15)
    mu20, rate20 = asymptotic_optimum(20, 1e-2)
    assert mu20 == pytest.approx(19e-2 / 58, rel=1e-12)
    assert rate20 == pytest.approx(361e-4 / (40 * 58), rel=1e-12)


def test_active_switch_is_four_times_the_two_pulse_rate():
    eta = 3e-3
    assert active_switch_optimum(eta) == pytest.approx(
        4 * asymptotic_optimum(2, eta)[1], rel=1e-15
    )


def test_active_switch_crossover_balances_long_block_limit():
    # at the crossover switch loss, the active setup ties eta^2 / 6
    loss = active_switch_crossover()
    assert loss == pytest.approx(1 - math.sqrt(2 / 3), rel=1e-15)
    eta = 0.02
    assert active_switch_optimum(eta, switch_loss=loss) == pytest.approx(
        eta**2 / 6, rel=1e-12
    )


def test_sweep_is_L_major_and_eta_ascending():
    spec = SweepSpec(
        L_values=(4, 2),
        eta_values=(0.5, 0.1, 0.9),
        error_rate=0.03,
    )
    rows = sweep(spec)
    assert [(r.L, r.eta) for r in rows] == [
        (4, 0.1), (4, 0.5), (4, 0.9),
        (2, 0.1), (2, 0.5), (2, 0.9),
    ]


def test_sweep_rate_monotone_in_eta():
    spec = SweepSpec(
        L_values=(4,),
        eta_values=tuple(0.01 * k for k in range(1, 11)),
        error_rate=0.03,
    )
    rows = sweep(spec)
    rates = [r.rate for r in rows]
    for lo, hi in zip(rates, rates[1:]):
        assert hi >= lo * (1 - 1e-9)


def test_sweep_marks_dead_rows_without_aborting():
    spec = SweepSpec(
        L_values=(2,),
        eta_values=(1e-4, 0.8),
        error_rate=0.11,  # hopeless at strong loss, fine near unity
    )
    rows = sweep(spec)
    dead = rows[0]
    assert dead.mu_opt is None
    assert dead.rate == 0.0
    assert math.isnan(dead.Q) and math.isnan(dead.rtag)
    alive = rows[1]
    assert alive.mu_opt is not None and alive.rate > 0.0


def test_sweep_rows_carry_consistent_Q_and_rtag():
    spec = SweepSpec(L_values=(4,), eta_values=(0.2,), error_rate=0.02)
    row = sweep(spec)[0]
    assert row.Q == pytest.approx(channel_q(4, row.mu_opt, 0.2), rel=1e-15)
    assert row.rate == pytest.approx(rate_at(4, 0.2, 0.02, row.mu_opt), rel=1e-12)


def test_sweep_spec_validation():
    with pytest.raises(ParameterError, match="error_rate"):
        SweepSpec(L_values=(2,), eta_values=(0.1,), error_rate=0.6)
    with pytest.raises(ParameterError, match="eta"):
        SweepSpec(L_values=(2,), eta_values=(0.0,), error_rate=0.03)
    with pytest.raises(ParameterError, match="L_values"):
        SweepSpec(L_values=(1,), eta_values=(0.1,), error_rate=0.03)
