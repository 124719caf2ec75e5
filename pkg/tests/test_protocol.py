import math
import warnings

import numpy as np
import pytest

from dqps import (
    ChannelModel,
    ParameterError,
    ProtocolParams,
    TagParams,
    ThinStatisticsWarning,
    channel_q,
    detection_means,
    estimate_key_rate,
    key_rate,
    rtag_coherent,
    run_simulation,
    simulate_block,
)
from dqps.keyrate import RateInputs
from dqps.protocol import BATCH_BLOCKS


def quiet_run(params, channel, n_jobs=1):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ThinStatisticsWarning)
        return run_simulation(params, channel, n_jobs=n_jobs)


def test_params_validation():
    with pytest.raises(ParameterError, match="'L'"):
        ProtocolParams(L=1, mu=0.1, p1=0.5, n_blocks=10, seed=0)
    with pytest.raises(ParameterError, match="'mu'"):
        ProtocolParams(L=2, mu=0.0, p1=0.5, n_blocks=10, seed=0)
    with pytest.raises(ParameterError, match="'p1'"):
        ProtocolParams(L=2, mu=0.1, p1=1.0, n_blocks=10, seed=0)
    with pytest.raises(ParameterError, match="'seed'"):
        ProtocolParams(L=2, mu=0.1, p1=0.5, n_blocks=10, seed=-1)
    with pytest.raises(ParameterError, match="'e_mis'"):
        ChannelModel(eta=0.5, e_mis=0.6)
    with pytest.raises(ParameterError, match="'p_dark'"):
        ChannelModel(eta=0.5, p_dark=1.0)


def test_detection_means_conserve_flux():
    params = ProtocolParams(L=6, mu=0.08, p1=0.5, n_blocks=1, seed=0)
    channel = ChannelModel(eta=0.7, e_mis=0.3)
    rng = np.random.default_rng(11)
    a = rng.integers(0, 2, size=(40, 6))
    c = rng.integers(0, 2, size=40)
    d = rng.integers(0, 2, size=40)
    means = detection_means(params, channel, a, c, d)
    assert means.shape == (40, 5, 2)
    assert means.min() >= 0.0
    total = means.sum(axis=2)
    assert np.allclose(total, params.mu * channel.eta, atol=1e-12)


def test_detection_means_matched_basis_routes_to_key_bit():
    # with aligned bases all light exits the port named by the key bit
    params = ProtocolParams(L=5, mu=0.1, p1=0.5, n_blocks=1, seed=0)
    channel = ChannelModel(eta=1.0)
    rng = np.random.default_rng(5)
    a = rng.integers(0, 2, size=(30, 5))
    for basis in (0, 1):
        c = np.full(30, basis)
        means = detection_means(params, channel, a, c, c)
        bits = a[:, :-1] ^ a[:, 1:]
        rows = np.arange(30)[:, None]
        cols = np.arange(4)[None, :]
        on_port = means[rows, cols, bits]
        off_port = means[rows, cols, 1 - bits]
        assert np.allclose(on_port, params.mu, atol=1e-9)
        assert np.allclose(off_port, 0.0, atol=1e-9)


def test_detection_means_mismatched_basis_splits_evenly():
    params = ProtocolParams(L=4, mu=0.2, p1=0.5, n_blocks=1, seed=0)
    channel = ChannelModel(eta=0.6)
    rng = np.random.default_rng(7)
    a = rng.integers(0, 2, size=(20, 4))
    c = np.zeros(20, dtype=int)
    d = np.ones(20, dtype=int)
    means = detection_means(params, channel, a, c, d)
    assert np.allclose(means, 0.5 * params.mu * channel.eta, atol=1e-12)


def test_detection_means_detector_swap_is_alternating_flip():
    # adding pi to every difference phase relabels the two output ports
    params = ProtocolParams(L=6, mu=0.05, p1=0.5, n_blocks=1, seed=0)
    channel = ChannelModel(eta=0.9, e_mis=0.15)
    rng = np.random.default_rng(3)
    a = rng.integers(0, 2, size=(25, 6))
    c = rng.integers(0, 2, size=25)
    d = rng.integers(0, 2, size=25)
    flipped = a ^ (np.arange(6) % 2)
    direct = detection_means(params, channel, a, c, d)
    swapped = detection_means(params, channel, flipped, c, d)
    assert np.allclose(direct, swapped[:, :, ::-1], atol=1e-12)


def test_simulate_block_fields():
    params = ProtocolParams(L=4, mu=2.0, p1=0.5, n_blocks=1, seed=0)
    channel = ChannelModel(eta=1.0)
    rng = np.random.default_rng(0)
    saw_detection = False
    for _ in range(50):
        outcome = simulate_block(params, channel, rng)
        assert outcome.c in (0, 1) and outcome.d in (0, 1)
        assert 0 <= outcome.j <= params.L - 1
        assert outcome.clicks.shape == (params.L - 1, 2)
        if outcome.j == 0:
            assert outcome.a is None and outcome.b is None
            assert not outcome.clicks.any()
        else:
            saw_detection = True
            assert outcome.a in (0, 1) and outcome.b in (0, 1)
            if outcome.c == outcome.d:
                assert outcome.b == outcome.a  # noiseless matched basis
    assert saw_detection


def test_run_simulation_counters_are_consistent():
    params = ProtocolParams(L=5, mu=0.3, p1=0.4, n_blocks=BATCH_BLOCKS + 17, seed=9)
    stats = quiet_run(params, ChannelModel(eta=0.8))
    n = params.n_blocks
    assert stats.n_rep == n
    assert sum(stats.j_hist_d0) + sum(stats.j_hist_d1) == n
    assert stats.errors_data <= stats.sifted_data
    assert stats.errors_check <= stats.sifted_check
    assert stats.tagged_data <= stats.sifted_data
    assert stats.Q_hat == pytest.approx(stats.sifted_data / (n * 0.6**2))
    assert stats.E1_hat == pytest.approx(stats.errors_check / (n * 0.4**2))


def test_run_simulation_deterministic_across_jobs():
    params = ProtocolParams(L=4, mu=0.05, p1=0.5, n_blocks=3 * BATCH_BLOCKS, seed=42)
    channel = ChannelModel(eta=0.3, p_dark=1e-4)
    serial = quiet_run(params, channel, n_jobs=1)
    threaded = quiet_run(params, channel, n_jobs=4)
    assert serial == threaded
    again = quiet_run(params, channel, n_jobs=4)
    assert serial == again


def test_noiseless_run_has_no_errors():
    params = ProtocolParams(L=8, mu=0.1, p1=0.5, n_blocks=40000, seed=1)
    stats = quiet_run(params, ChannelModel(eta=0.5))
    assert stats.errors_data == 0
    assert stats.errors_check == 0
    assert stats.sifted_data > 0


def test_yield_matches_channel_model():
    params = ProtocolParams(L=6, mu=0.04, p1=0.5, n_blocks=200000, seed=2)
    channel = ChannelModel(eta=0.25)
    stats = quiet_run(params, channel)
    expected = channel_q(params.L, params.mu, channel.eta)
    sigma = math.sqrt(expected / (params.n_blocks * 0.25))
    assert abs(stats.Q_hat - expected) < 3 * sigma


def test_misalignment_phase_sets_error_rate():
    delta = 0.4
    params = ProtocolParams(L=4, mu=0.1, p1=0.5, n_blocks=150000, seed=3)
    stats = quiet_run(params, ChannelModel(eta=0.5, e_mis=delta))
    expected = math.sin(delta / 2) ** 2
    observed = stats.errors_data / stats.sifted_data
    sigma = math.sqrt(expected / stats.sifted_data)
    assert abs(observed - expected) < 3 * sigma
    # both bases suffer the same phase error
    observed_check = stats.errors_check / stats.sifted_check
    sigma_check = math.sqrt(expected / stats.sifted_check)
    assert abs(observed_check - expected) < 3 * sigma_check


def test_bit_flip_channel_sets_error_rate():
    params = ProtocolParams(L=3, mu=0.2, p1=0.5, n_blocks=100000, seed=4)
    stats = quiet_run(params, ChannelModel(eta=0.5, p_flip=0.25))
    observed = stats.errors_data / stats.sifted_data
    sigma = math.sqrt(0.25 / stats.sifted_data)
    assert abs(observed - 0.25) < 3 * sigma


def test_dark_counts_alone_still_click():
    params = ProtocolParams(L=4, mu=0.01, p1=0.5, n_blocks=120000, seed=5)
    stats = quiet_run(params, ChannelModel(eta=0.0, p_dark=0.01))
    # all clicks are dark, so bits are coin flips against the sender's key
    expected_q = 1 - (1 - 0.01) ** (2 * 3)
    sigma = math.sqrt(expected_q / (params.n_blocks * 0.25))
    assert abs(stats.Q_hat - expected_q) < 3 * sigma
    ratio = stats.errors_data / stats.sifted_data
    assert abs(ratio - 0.5) < 3 * math.sqrt(0.25 / stats.sifted_data)


def test_tagged_fraction_tracks_rtag():
    params = ProtocolParams(L=3, mu=0.3, p1=0.5, n_blocks=120000, seed=6)
    stats = quiet_run(params, ChannelModel(eta=1.0))
    rtag = rtag_coherent(TagParams(params.L, params.mu))
    sigma = math.sqrt(rtag * (1 - rtag) / stats.sifted_data)
    assert abs(stats.Delta_hat - rtag) < 3 * sigma


def test_thin_statistics_warning():
    params = ProtocolParams(L=2, mu=0.001, p1=0.5, n_blocks=1000, seed=7)
    with pytest.warns(ThinStatisticsWarning):
        run_simulation(params, ChannelModel(eta=0.01))


def test_estimate_key_rate_consistency():
    params = ProtocolParams(L=10, mu=0.02, p1=0.5, n_blocks=300000, seed=8)
    stats = quiet_run(params, ChannelModel(eta=0.5))
    report = estimate_key_rate(stats, params)
    inputs = RateInputs(
        L=params.L, mu=params.mu, p0=0.5,
        Q=stats.Q_hat, E0=stats.E0_hat, E1=stats.E1_hat,
    )
    direct = key_rate(inputs, rtag_override=rtag_coherent(TagParams(10, 0.02)))
    assert report == direct
    assert report.rate_per_pulse > 0.0


def test_estimate_key_rate_requires_detections():
    params = ProtocolParams(L=2, mu=0.001, p1=0.5, n_blocks=100, seed=9)
    stats = quiet_run(params, ChannelModel(eta=0.0))
    with pytest.raises(ParameterError, match="Q_hat"):
        estimate_key_rate(stats, params)
