"""Off-line source calibration by coincidence counting.

Estimates an upper bound on the tagging probability of an L-pulse source
from test measurements alone.  Mode 2: a beam splitter feeds two threshold
detectors and every double coincidence in neighboring pulse slots is
counted.  Mode 3 tolerates detector dead time: an absorber attenuates the
train, one splitter taps off to a third detector, and a triple-coincidence
term compensates for the doubles that dead time can hide.

Both bounds divide observed counts by declared lower bounds on the
efficiencies, never by the simulator's ground truth, so overstating a
detector only loosens the result.  Photons route independently, which is
exact for the Poissonian and diagonal sources in scope.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ThinStatisticsWarning
from .tagging import SourceDistribution, TagParams, rtag_coherent, rtag_general

BATCH_TRAINS = 32768
_BOUND_TOL = 1e-12


def _check_prob(name: str, value: float, lo_open: bool = False) -> None:
    lo_ok = value > 0 if lo_open else value >= 0
    if not (lo_ok and value <= 1):
        interval = "(0, 1]" if lo_open else "[0, 1]"
        raise ParameterError(name, f"must be in {interval}")


@dataclass(frozen=True)
class CalibSetup2:
    """Two-detector test bench.

    eta1 and eta2 are the experimenter's declared lower bounds on the
    splitter-times-detector efficiencies of the two arms; true_T, true_R,
    true_eff1, true_eff2 are the ground truth the simulator runs with.
    A source distribution replaces the Poissonian input when given.
    """

    L: int
    mu: float
    eta1: float
    eta2: float
    true_T: float
    true_R: float
    true_eff1: float
    true_eff2: float
    n_test: int
    source: SourceDistribution | None = None

    def __post_init__(self):
        if not isinstance(self.L, int) or self.L < 2:
            raise ParameterError("L", "train length must be an integer >= 2")
        if not math.isfinite(self.mu) or self.mu < 0:
            raise ParameterError("mu", "mean photon number must be finite and >= 0")
        _check_prob("eta1", self.eta1, lo_open=True)
        _check_prob("eta2", self.eta2, lo_open=True)
        for name in ("true_T", "true_R", "true_eff1", "true_eff2"):
            _check_prob(name, getattr(self, name))
        if self.true_T + self.true_R > 1 + _BOUND_TOL:
            raise ParameterError("true_T", "splitter outputs true_T + true_R exceed 1")
        if self.eta1 > self.true_T * self.true_eff1 + _BOUND_TOL:
            raise ParameterError("eta1", "declared bound exceeds true_T * true_eff1")
        if self.eta2 > self.true_R * self.true_eff2 + _BOUND_TOL:
            raise ParameterError("eta2", "declared bound exceeds true_R * true_eff2")
        if not isinstance(self.n_test, int) or self.n_test < 1:
            raise ParameterError("n_test", "must be a positive integer")
        if self.source is not None and self.source.L != self.L:
            raise ParameterError("source", "distribution length differs from L")


@dataclass(frozen=True)
class CalibSetup3:
    """Three-detector test bench with dead time.

    Layout: absorber, then splitter 1 whose reflected arm feeds detector 3,
    then splitter 2 feeding detectors 1 and 2.  Declared lower bounds:
    eta1 <= T1*T2*eff1, eta2 <= T1*R2*eff2, eta3 <= R1*eff3, and eta_abs
    for the absorber.  dead_time = 0 models idealized always-ready
    detectors, used only as a cross-check against the two-detector mode.
    """

    L: int
    mu: float
    eta1: float
    eta2: float
    eta3: float
    eta_abs: float
    true_T1: float
    true_R1: float
    true_T2: float
    true_R2: float
    true_eff1: float
    true_eff2: float
    true_eff3: float
    true_eta_abs: float
    dead_time: int
    n_test: int

    def __post_init__(self):
        if not isinstance(self.L, int) or self.L < 2:
            raise ParameterError("L", "train length must be an integer >= 2")
        if not math.isfinite(self.mu) or self.mu < 0:
            raise ParameterError("mu", "mean photon number must be finite and >= 0")
        for name in ("eta1", "eta2", "eta3", "eta_abs"):
            _check_prob(name, getattr(self, name), lo_open=True)
        for name in (
            "true_T1",
            "true_R1",
            "true_T2",
            "true_R2",
            "true_eff1",
            "true_eff2",
            "true_eff3",
            "true_eta_abs",
        ):
            _check_prob(name, getattr(self, name))
        if self.true_T1 + self.true_R1 > 1 + _BOUND_TOL:
            raise ParameterError("true_T1", "splitter 1 outputs exceed 1")
        if self.true_T2 + self.true_R2 > 1 + _BOUND_TOL:
            raise ParameterError("true_T2", "splitter 2 outputs exceed 1")
        pairs = (
            ("eta1", self.eta1, self.true_T1 * self.true_T2 * self.true_eff1),
            ("eta2", self.eta2, self.true_T1 * self.true_R2 * self.true_eff2),
            ("eta3", self.eta3, self.true_R1 * self.true_eff3),
            ("eta_abs", self.eta_abs, self.true_eta_abs),
        )
        for name, declared, truth in pairs:
            if declared > truth + _BOUND_TOL:
                raise ParameterError(name, "declared bound exceeds the true efficiency")
        if not isinstance(self.dead_time, int) or self.dead_time < 0:
            raise ParameterError("dead_time", "must be an integer >= 0 pulse slots")
        if not isinstance(self.n_test, int) or self.n_test < 1:
            raise ParameterError("n_test", "must be a positive integer")


@dataclass(frozen=True)
class CalibrationReport:
    """Outcome of one calibration run.

    slack = bound - true_rtag should stay above about -3 * sigma; sigma is
    a Poisson-style standard error of the bound (floored at one count, and
    ignoring the positive double/triple correlation in mode 3, which only
    makes it conservative to compare slack against -3 sigma).  events, when
    requested, holds one row per train in simulation order: [double] for
    mode 2, [double, triple] for mode 3.
    """

    mode: str
    n_test: int
    n_double: int
    n_triple: int | None
    bound: float
    true_rtag: float
    slack: float
    sigma: float
    events: np.ndarray | None = None


def q3_bound(n_triple: int, n_test: int, eta1: float, eta2: float, eta3: float) -> float:
    """Bound on the three-or-more-photon emission probability per train."""
    if not isinstance(n_triple, int) or n_triple < 0:
        raise ParameterError("n_triple", "must be a non-negative integer")
    if not isinstance(n_test, int) or n_test < 1:
        raise ParameterError("n_test", "must be a positive integer")
    for name, value in (("eta1", eta1), ("eta2", eta2), ("eta3", eta3)):
        _check_prob(name, value, lo_open=True)
    return (n_triple / n_test) / (6.0 * eta1 * eta2 * eta3)


def relative_slack_limit(L: int, mu: float) -> float:
    """Guaranteed relative overshoot of the two-detector bound.

    For exact declared efficiencies and Poissonian input with small mu, the
    expected bound exceeds the true tagging probability by at most this
    fraction of it: mu * (3*mu*L/4 + 20/9).
    """
    if not isinstance(L, int) or L < 2:
        raise ParameterError("L", "train length must be an integer >= 2")
    if not math.isfinite(mu) or mu < 0:
        raise ParameterError("mu", "mean photon number must be finite and >= 0")
    return mu * (0.75 * mu * L + 20.0 / 9.0)


def _neighbor_or(clicks: np.ndarray) -> np.ndarray:
    """OR of each slot with its immediate neighbors, per train."""
    out = clicks.copy()
    out[:, :-1] |= clicks[:, 1:]
    out[:, 1:] |= clicks[:, :-1]
    return out


def _double_coincidence(clicks1: np.ndarray, clicks2: np.ndarray) -> np.ndarray:
    """Trains where the detectors clicked within one slot of each other."""
    return (clicks1 & _neighbor_or(clicks2)).any(axis=1)


def _apply_dead_time(raw: np.ndarray, dead_time: int) -> np.ndarray:
    """Drop clicks while a detector is recovering from an earlier one."""
    if dead_time == 0:
        return raw
    n, L = raw.shape
    masked = np.zeros_like(raw)
    blind_until = np.full(n, -1, dtype=np.int64)
    for t in range(L):
        ok = raw[:, t] & (t > blind_until)
        masked[:, t] = ok
        blind_until = np.where(ok, t + dead_time, blind_until)
    return masked


def _split_binomial(photons: np.ndarray, taken: float, remaining: float, rng) -> np.ndarray:
    """Photons routed to the next output, conditioned on earlier routing."""
    if remaining <= 0.0:
        return np.zeros_like(photons)
    return rng.binomial(photons, min(1.0, taken / remaining))


def _draw_counts(setup, rng, n: int) -> np.ndarray:
    if setup.source is None:
        return rng.poisson(setup.mu, size=(n, setup.L))
    configs, probs = setup.source.as_arrays()
    idx = rng.choice(len(probs), size=n, p=probs / probs.sum())
    return configs[idx]


def _two_detector_batch(setup: CalibSetup2, rng, n: int):
    counts = _draw_counts(setup, rng, n)
    q1 = setup.true_T * setup.true_eff1
    q2 = setup.true_R * setup.true_eff2
    n1 = rng.binomial(counts, q1)
    n2 = _split_binomial(counts - n1, q2, 1.0 - q1, rng)
    double = _double_coincidence(n1 >= 1, n2 >= 1)
    return int(double.sum()), 0, double[:, None]


def _three_detector_batch(setup: CalibSetup3, rng, n: int):
    counts = rng.poisson(setup.mu, size=(n, setup.L))
    survived = rng.binomial(counts, setup.true_eta_abs)
    q1 = setup.true_T1 * setup.true_T2 * setup.true_eff1
    q2 = setup.true_T1 * setup.true_R2 * setup.true_eff2
    q3 = setup.true_R1 * setup.true_eff3
    n1 = rng.binomial(survived, q1)
    n2 = _split_binomial(survived - n1, q2, 1.0 - q1, rng)
    n3 = _split_binomial(survived - n1 - n2, q3, 1.0 - q1 - q2, rng)
    m1 = _apply_dead_time(n1 >= 1, setup.dead_time)
    m2 = _apply_dead_time(n2 >= 1, setup.dead_time)
    m3 = _apply_dead_time(n3 >= 1, setup.dead_time)
    double = _double_coincidence(m1, m2)
    triple = m1.any(axis=1) & m2.any(axis=1) & m3.any(axis=1)
    return int(double.sum()), int(triple.sum()), np.stack([double, triple], axis=1)


def _run_batches(setup, seed: int, n_jobs: int, collect_events: bool, kernel):
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ParameterError("seed", "must be an integer in [0, 2^64)")
    if not isinstance(n_jobs, int) or n_jobs < 1:
        raise ParameterError("n_jobs", "must be a positive integer")
    if setup.n_test < 10**4:
        warnings.warn(
            f"{setup.n_test} test trains give a statistically meaningless bound",
            ThinStatisticsWarning,
            stacklevel=3,
        )
    n_batches = (setup.n_test + BATCH_TRAINS - 1) // BATCH_TRAINS
    children = np.random.SeedSequence(seed).spawn(n_batches)
    sizes = [
        min(BATCH_TRAINS, setup.n_test - i * BATCH_TRAINS) for i in range(n_batches)
    ]

    def run(args):
        child, size = args
        return kernel(setup, np.random.default_rng(child), size)

    if n_jobs == 1:
        results = [run(job) for job in zip(children, sizes)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, zip(children, sizes)))

    n_double = sum(r[0] for r in results)
    n_triple = sum(r[1] for r in results)
    events = np.concatenate([r[2] for r in results]) if collect_events else None
    return n_double, n_triple, events


def simulate_two_detector(
    setup: CalibSetup2, seed: int = 0, n_jobs: int = 1, collect_events: bool = False
) -> CalibrationReport:
    """Run the two-detector experiment and bound the tagging probability.

    The bound is (n_double / n_test) / (2 * eta1 * eta2) with the declared
    efficiency bounds, valid for any photon-number-diagonal source.
    """
    n_double, _, events = _run_batches(
        setup, seed, n_jobs, collect_events, _two_detector_batch
    )
    scale = 2.0 * setup.eta1 * setup.eta2
    bound = (n_double / setup.n_test) / scale
    sigma = math.sqrt(max(n_double, 1)) / setup.n_test / scale
    if setup.source is None:
        true_rtag = rtag_coherent(TagParams(setup.L, setup.mu))
    else:
        true_rtag = rtag_general(setup.source)
    return CalibrationReport(
        mode="2det",
        n_test=setup.n_test,
        n_double=n_double,
        n_triple=None,
        bound=bound,
        true_rtag=true_rtag,
        slack=bound - true_rtag,
        sigma=sigma,
        events=events,
    )


def simulate_three_detector(
    setup: CalibSetup3, seed: int = 0, n_jobs: int = 1, collect_events: bool = False
) -> CalibrationReport:
    """Run the dead-time-tolerant experiment and bound the tagging probability.

    Doubles lost to dead time are compensated by the triple-coincidence
    term: bound = (n_double/n_test + q3_bound) / (2 * eta1 * eta2 * eta_abs^2),
    with every efficiency a declared lower bound.
    """
    n_double, n_triple, events = _run_batches(
        setup, seed, n_jobs, collect_events, _three_detector_batch
    )
    q3 = q3_bound(n_triple, setup.n_test, setup.eta1, setup.eta2, setup.eta3)
    scale = 2.0 * setup.eta1 * setup.eta2 * setup.eta_abs**2
    bound = (n_double / setup.n_test + q3) / scale
    triple_weight = 1.0 / (6.0 * setup.eta1 * setup.eta2 * setup.eta3)
    sigma = (
        math.sqrt(max(n_double, 1) + max(n_triple, 1) * triple_weight**2)
        / setup.n_test
        / scale
    )
    true_rtag = rtag_coherent(TagParams(setup.L, setup.mu))
    return CalibrationReport(
        mode="3det",
        n_test=setup.n_test,
        n_double=n_double,
        n_triple=n_triple,
        bound=bound,
        true_rtag=true_rtag,
        slack=bound - true_rtag,
        sigma=sigma,
        events=events,
    )
