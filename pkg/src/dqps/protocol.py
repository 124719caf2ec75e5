"""Photon-level Monte Carlo of the block protocol.

Each round prepares an L-pulse phase-randomized coherent block with per-pulse
bits a_l and basis c, sends it through a lossy channel into a one-pulse-delay
interferometer, and applies threshold detectors at the L-1 valid timings.
Because such light produces independent Poissonian clicks per output mode,
the simulator draws clicks from per-timing mean photon numbers instead of
propagating amplitudes; this is exact for the modeled source and detectors.

Blocks are simulated in fixed-size batches of ``BATCH_BLOCKS``; every batch
owns an RNG stream spawned from (seed, batch index) and draws fixed-shape
arrays in a fixed order, so results are bit-identical for a given seed
regardless of thread count.  Changing ``BATCH_BLOCKS`` would select a
different (equally valid) random stream.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ThinStatisticsWarning
from .keyrate import KeyRateReport, RateInputs, key_rate
from .tagging import TagParams, rtag_coherent

BATCH_BLOCKS = 32768


@dataclass(frozen=True)
class ProtocolParams:
    """Sender-side protocol choices: block length, intensity, basis bias, size."""

    L: int
    mu: float
    p1: float
    n_blocks: int
    seed: int

    def __post_init__(self):
        if not isinstance(self.L, int) or self.L < 2:
            raise ParameterError("L", "block length must be an integer >= 2")
        if not math.isfinite(self.mu) or self.mu <= 0:
            raise ParameterError("mu", "mean photon number must be finite and > 0")
        if not 0 < self.p1 < 1:
            raise ParameterError("p1", "check-basis probability must be in (0, 1)")
        if not isinstance(self.n_blocks, int) or self.n_blocks < 1:
            raise ParameterError("n_blocks", "must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ParameterError("seed", "must be an integer in [0, 2^64)")

    @property
    def p0(self) -> float:
        return 1.0 - self.p1


@dataclass(frozen=True)
class ChannelModel:
    """Channel and receiver imperfections.

    eta is the overall transmission including detector efficiency; p_dark a
    per-detector per-valid-timing dark-click probability; e_mis a fixed
    extra phase on the interferometer's long arm, in radians, producing a
    basis-symmetric error rate sin^2(e_mis/2) on weak pulses; p_flip an
    optional direct bit-flip probability applied to the measured bit.
    """

    eta: float
    p_dark: float = 0.0
    e_mis: float = 0.0
    p_flip: float = 0.0

    def __post_init__(self):
        if not 0 <= self.eta <= 1:
            raise ParameterError("eta", "transmission must be in [0, 1]")
        if not 0 <= self.p_dark < 1:
            raise ParameterError("p_dark", "dark-click probability must be in [0, 1)")
        if not 0 <= self.e_mis < 0.5:
            raise ParameterError("e_mis", "misalignment phase must be in [0, 0.5) rad")
        if not 0 <= self.p_flip < 0.5:
            raise ParameterError("p_flip", "bit-flip probability must be in [0, 0.5)")


@dataclass(frozen=True)
class BlockOutcome:
    """One simulated round.

    j = 0 means no valid-timing click; a and b are only defined for j != 0.
    clicks[t, s] is the click of detector s at valid timing t+1.
    """

    c: int
    d: int
    j: int
    a: int | None
    b: int | None
    tagged: bool
    clicks: np.ndarray


@dataclass(frozen=True)
class ObservedStats:
    """Aggregated counters and the derived empirical estimates.

    Q_hat, E0_hat are normalized by n_rep * p0^2 and E1_hat by n_rep * p1^2.
    Delta_hat is the tagged fraction of the sifted data-basis key (0 when
    nothing was sifted); it is a diagnostic only, since no receiver can
    observe which rounds were tagged.  j_hist_d0/d1 count the detection
    timing j in 0..L-1 split by the measurement basis d.
    """

    n_rep: int
    sifted_data: int
    errors_data: int
    sifted_check: int
    errors_check: int
    tagged_data: int
    Q_hat: float
    E0_hat: float
    E1_hat: float
    Delta_hat: float
    j_hist_d0: tuple[int, ...]
    j_hist_d1: tuple[int, ...]


def detection_means(
    params: ProtocolParams,
    channel: ChannelModel,
    a_bits: np.ndarray,
    c: np.ndarray,
    d: np.ndarray,
) -> np.ndarray:
    """Mean photon number per valid timing and detector.

    a_bits has shape (n, L) (or (L,) for a single block), c and d are the
    basis bits.  Pulse l carries phase a_l*pi + (pi/2)*l*c; the receiver
    offsets the interfering pair by (pi/2)*d plus the misalignment phase.
    Detector 0 is the constructive port at zero relative phase.  The two
    detector means always sum to mu*eta.
    """
    a = np.atleast_2d(np.asarray(a_bits))
    c_arr = np.atleast_1d(np.asarray(c)).astype(np.float64)
    d_arr = np.atleast_1d(np.asarray(d)).astype(np.float64)
    pulse_idx = np.arange(params.L)
    theta = a * np.pi + 0.5 * np.pi * pulse_idx * c_arr[:, None]
    relative = np.diff(theta, axis=1) - 0.5 * np.pi * d_arr[:, None] - channel.e_mis
    base = 0.5 * params.mu * channel.eta
    cos_rel = np.cos(relative)
    return np.stack([base * (1.0 + cos_rel), base * (1.0 - cos_rel)], axis=-1)


def _simulate_batch(
    params: ProtocolParams,
    channel: ChannelModel,
    rng: np.random.Generator,
    n: int,
):
    """Simulate n blocks; returns counters plus per-block arrays.

    Draw order is fixed: c, d, a-bits, signal clicks, dark clicks, tie
    bits, flip draws, emission counts.  All shapes depend only on (n, L).
    """
    L = params.L
    c = rng.random(n) < params.p1
    d = rng.random(n) < params.p1
    a = rng.integers(0, 2, size=(n, L), dtype=np.int8)

    means = detection_means(params, channel, a, c, d)
    signal = rng.poisson(means) >= 1
    dark = rng.random((n, L - 1, 2)) < channel.p_dark
    clicks = signal | dark

    tie = rng.integers(0, 2, size=n, dtype=np.int8)
    flip = rng.random(n) < channel.p_flip
    emitted = rng.poisson(params.mu, size=(n, L))

    any_click = clicks.any(axis=2)
    has_click = any_click.any(axis=1)
    t = np.argmax(any_click, axis=1)  # first clicked timing index, j = t + 1
    j = np.where(has_click, t + 1, 0)

    rows = np.arange(n)
    click0 = clicks[rows, t, 0]
    click1 = clicks[rows, t, 1]
    b = np.where(click0 & click1, tie, click1.astype(np.int8))
    b = b ^ flip.astype(np.int8)
    a_key = a[rows, t] ^ a[rows, t + 1]  # t <= L-2 always

    tagged = (emitted >= 2).any(axis=1)
    tagged |= ((emitted[:, :-1] + emitted[:, 1:]) >= 2).any(axis=1)

    error = a_key != b
    data = ~c & ~d & has_click
    check = c & d & has_click
    counters = (
        int(data.sum()),
        int((data & error).sum()),
        int(check.sum()),
        int((check & error).sum()),
        int((data & tagged).sum()),
        np.bincount(j[~d], minlength=L),
        np.bincount(j[d], minlength=L),
    )
    per_block = (c, d, j, a_key, b, tagged, clicks)
    return counters, per_block


def simulate_block(
    params: ProtocolParams, channel: ChannelModel, rng: np.random.Generator
) -> BlockOutcome:
    """One round: basis and bit draws, clicks, timing selection, key bit."""
    _, (c, d, j, a_key, b, tagged, clicks) = _simulate_batch(params, channel, rng, 1)
    detected = int(j[0]) != 0
    return BlockOutcome(
        c=int(c[0]),
        d=int(d[0]),
        j=int(j[0]),
        a=int(a_key[0]) if detected else None,
        b=int(b[0]) if detected else None,
        tagged=bool(tagged[0]),
        clicks=clicks[0],
    )


def run_simulation(
    params: ProtocolParams, channel: ChannelModel, n_jobs: int = 1
) -> ObservedStats:
    """Simulate params.n_blocks rounds and aggregate the sifted statistics.

    Deterministic for a fixed seed: the batch partition depends only on
    n_blocks, each batch consumes its own spawned stream, and results fold
    in batch order whatever the thread count.
    """
    if not isinstance(n_jobs, int) or n_jobs < 1:
        raise ParameterError("n_jobs", "must be a positive integer")
    n_batches = (params.n_blocks + BATCH_BLOCKS - 1) // BATCH_BLOCKS
    children = np.random.SeedSequence(params.seed).spawn(n_batches)
    sizes = [
        min(BATCH_BLOCKS, params.n_blocks - i * BATCH_BLOCKS) for i in range(n_batches)
    ]

    def run_batch(args):
        child, size = args
        counters, _ = _simulate_batch(params, channel, np.random.default_rng(child), size)
        return counters

    if n_jobs == 1:
        results = [run_batch(job) for job in zip(children, sizes)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run_batch, zip(children, sizes)))

    sifted_data = errors_data = sifted_check = errors_check = tagged_data = 0
    hist_d0 = np.zeros(params.L, dtype=np.int64)
    hist_d1 = np.zeros(params.L, dtype=np.int64)
    for sd, ed, sc, ec, tg, h0, h1 in results:
        sifted_data += sd
        errors_data += ed
        sifted_check += sc
        errors_check += ec
        tagged_data += tg
        hist_d0 += h0
        hist_d1 += h1

    if sifted_check < 100:
        warnings.warn(
            f"only {sifted_check} check-basis detections; error estimate is noise",
            ThinStatisticsWarning,
            stacklevel=2,
        )
    norm_data = params.n_blocks * params.p0 ** 2
    norm_check = params.n_blocks * params.p1 ** 2
    return ObservedStats(
        n_rep=params.n_blocks,
        sifted_data=sifted_data,
        errors_data=errors_data,
        sifted_check=sifted_check,
        errors_check=errors_check,
        tagged_data=tagged_data,
        Q_hat=sifted_data / norm_data,
        E0_hat=errors_data / norm_data,
        E1_hat=errors_check / norm_check,
        Delta_hat=tagged_data / sifted_data if sifted_data else 0.0,
        j_hist_d0=tuple(int(x) for x in hist_d0),
        j_hist_d1=tuple(int(x) for x in hist_d1),
    )


def estimate_key_rate(stats: ObservedStats, params: ProtocolParams) -> KeyRateReport:
    """Key rate from simulated estimates.

    Uses the closed-form tagging probability for (L, mu): the tagged
    fraction is not observable in the protocol, so Delta_hat never enters
    the rate.  Statistical pathologies (for example E1_hat above Q_hat on
    a tiny sample) surface as ParameterError from the input validation.
    """
    if stats.Q_hat <= 0.0:
        raise ParameterError("Q_hat", "no detections; key rate undefined")
    rtag = rtag_coherent(TagParams(params.L, params.mu))
    inputs = RateInputs(
        L=params.L,
        mu=params.mu,
        p0=params.p0,
        Q=stats.Q_hat,
        E0=stats.E0_hat,
        E1=stats.E1_hat,
    )
    return key_rate(inputs, rtag_override=rtag)
