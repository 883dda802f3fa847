"""
Monte Carlo engine: Rician fading across L receive antennas, the bank of M
correlators behind each antenna, equal gain combining, MAP decisions and
error counting.

Random numbers come from numpy's counter-based Philox generator. Batch b of
a run seeded with s draws from SeedSequence(s, spawn_key=(b,)), so a batch
produces the same numbers whatever the batch count or thread layout.
"""

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.stats import binomtest
from tqdm import tqdm

from .detector import DetectionParams, Scenario, detect_many, threshold_coherent
from .errors import ChannelSpecError, DomainError

logger = logging.getLogger(__name__)

BATCH_SIZE = 2**16
EARLY_STOP_RATIO = 0.05


@dataclass(frozen=True)
class ModulationSpec:
    """
    M-ary OOFSK at duty cycle v and average SNR snr_db.

    SNR is the average symbol energy over N0, so the peak amplitude A obeys
    A^2 v = SNR. This is the only place dB values become linear.
    """

    M: int
    v: float
    snr_db: float

    def __post_init__(self):
        if self.M < 2 or int(self.M) != self.M:
            raise DomainError(f"M must be an integer >= 2, got {self.M}")
        if not 0 < self.v <= 1:
            raise DomainError(f"duty cycle v must lie in (0, 1], got {self.v}")
        if math.isnan(self.snr_db) or self.snr_db == math.inf:
            raise DomainError(f"snr_db must be finite or -inf, got {self.snr_db}")

    @property
    def snr_linear(self):
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def amplitude(self):
        return math.sqrt(self.snr_linear / self.v)

    @property
    def priors(self):
        """Probabilities of symbols 0..M: 1-v for the off symbol, v/M per tone."""
        return np.array([1.0 - self.v] + [self.v / self.M] * self.M)


class Correlation(enum.Enum):
    """How a single coefficient rho fills the L x L correlation matrix."""

    CONSTANT = "constant"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class AntennaChannelSpec:
    """
    Rician fading h = d + diffuse part on L antennas, normalized to
    E|h_l|^2 = 1: sigma^2 = 1/(1+K) and |d_l|^2 = K/(1+K) on every antenna,
    with d_l real and equal. rho = 0 means independent antennas.
    """

    L: int
    rician_k: float = 0.0
    rho: float = 0.0
    correlation: Correlation = Correlation.CONSTANT

    def __post_init__(self):
        if self.L < 1 or int(self.L) != self.L:
            raise ChannelSpecError(f"L must be a positive integer, got {self.L}")
        if not self.rician_k >= 0:
            raise ChannelSpecError(f"Rician factor K must be >= 0, got {self.rician_k}")
        if not 0 <= self.rho < 1:
            raise ChannelSpecError(f"correlation coefficient rho must lie in [0, 1), got {self.rho}")
        object.__setattr__(self, "correlation", Correlation(self.correlation))
        # fail early on a matrix that cannot be factored
        self.cholesky_factor

    @property
    def independent(self):
        return self.rho == 0

    @property
    def sigma_sq(self):
        """Variance of the diffuse part of each h_l."""
        if math.isinf(self.rician_k):
            return 0.0
        return 1.0 / (1.0 + self.rician_k)

    @property
    def los_power(self):
        """|d_l|^2 on each antenna."""
        if math.isinf(self.rician_k):
            return 1.0
        return self.rician_k / (1.0 + self.rician_k)

    @property
    def s_sq(self):
        return self.L * self.los_power

    @property
    def mean_vector(self):
        return np.full(self.L, math.sqrt(self.los_power), dtype=complex)

    @property
    def correlation_matrix(self):
        offsets = np.abs(np.subtract.outer(np.arange(self.L), np.arange(self.L)))
        if self.correlation is Correlation.EXPONENTIAL:
            return self.rho ** offsets.astype(float)
        return np.where(offsets == 0, 1.0, self.rho)

    @property
    def covariance(self):
        return self.sigma_sq * self.correlation_matrix

    @cached_property
    def cholesky_factor(self):
        try:
            factor = np.linalg.cholesky(self.correlation_matrix)
        except np.linalg.LinAlgError as e:
            raise ChannelSpecError(f"correlation matrix is not positive definite: {e}") from e
        return math.sqrt(self.sigma_sq) * factor


def batch_generator(seed, index):
    """Independent Philox stream for batch `index` of a run seeded with `seed`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _circular_normal(rng, shape):
    # unit total variance, 1/2 per real dimension
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def gen_fading(channel, rng, size=None):
    """Draw h = d + C z, one row of L coefficients per trial."""
    shape = (channel.L,) if size is None else (size, channel.L)
    z = _circular_normal(rng, shape)
    return channel.mean_vector + z @ channel.cholesky_factor.T


def draw_symbol(spec, rng, size=None):
    """0 with probability 1-v, each tone 1..M with probability v/M."""
    symbols = rng.choice(spec.M + 1, size=size, p=spec.priors)
    if size is None:
        return int(symbols)
    return symbols


def gen_correlator_outputs(h, k, spec, rng, noise=True):
    """
    Correlator outputs Y[l, m] = A h_l e^{j theta} + n_{l,m} on the sent tone
    and n_{l,m} elsewhere; k = 0 leaves every entry pure noise.

    h has shape (L,) with scalar k, or (N, L) with k of shape (N,). The
    phase theta is uniform per symbol; it cannot change any energy.
    Set noise=False to see the signal part alone.
    """
    h = np.asarray(h, dtype=complex)
    k = np.asarray(k)
    batch_shape = k.shape
    if h.shape[:-1] != batch_shape:
        raise DomainError(f"fading shape {h.shape} does not match symbol shape {k.shape}")
    if np.any((k < 0) | (k > spec.M)):
        raise DomainError(f"symbols must lie in 0..{spec.M}")
    L = h.shape[-1]

    theta = rng.uniform(0.0, 2.0 * math.pi, size=batch_shape or None)
    shape = batch_shape + (L, spec.M)
    Y = _circular_normal(rng, shape) if noise else np.zeros(shape, dtype=complex)
    signal = spec.amplitude * h * np.exp(1j * np.asarray(theta))[..., np.newaxis]

    if not batch_shape:
        if k > 0:
            Y[:, int(k) - 1] += signal
        return Y
    rows = np.flatnonzero(k > 0)
    Y[rows, :, k[rows] - 1] += signal[rows]
    return Y


def combine_energies(Y):
    """Equal gain combining: R_m = sum_l |Y_{l,m}|^2."""
    return np.sum(Y.real**2 + Y.imag**2, axis=-2)


@dataclass(frozen=True, eq=False)
class ErrorStats:
    """Counts from a Monte Carlo run; rows are sent symbols, columns decisions."""

    confusion: np.ndarray

    @classmethod
    def empty(cls, M):
        return cls(np.zeros((M + 1, M + 1), dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, ErrorStats):
            return NotImplemented
        return np.array_equal(self.confusion, other.confusion)

    @property
    def trials(self):
        return int(self.confusion.sum())

    @property
    def errors(self):
        return self.trials - int(np.trace(self.confusion))

    @property
    def symbol_trials(self):
        return self.confusion.sum(axis=1)

    @property
    def p_hat(self):
        if self.trials == 0:
            raise DomainError("no trials recorded")
        return self.errors / self.trials

    def wilson_interval(self, confidence=0.95):
        if self.trials == 0:
            raise DomainError("no trials recorded")
        ci = binomtest(self.errors, self.trials).proportion_ci(confidence_level=confidence, method="wilson")
        return ci.low, ci.high

    @property
    def ci_halfwidth(self):
        low, high = self.wilson_interval()
        return 0.5 * (high - low)

    def merge(self, other):
        if self.confusion.shape != other.confusion.shape:
            raise DomainError("cannot merge statistics of different alphabet sizes")
        return ErrorStats(self.confusion + other.confusion)


def binomial_sigma(p, n):
    """Standard deviation of an error-rate estimate from n trials at rate p."""
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def noncoherent_detector_params(spec, channel):
    """
    What a noncoherent receiver knows: xi = A^2 s^2 and
    sigma_y^2 = A^2 sigma^2 + 1, as if the antennas were independent.
    """
    a_sq = spec.amplitude**2
    return DetectionParams.noncoherent(
        xi=a_sq * channel.s_sq,
        sigma_y_sq=a_sq * channel.sigma_sq + 1.0,
        L=channel.L,
        M=spec.M,
        v=spec.v,
    )


def _simulate_batch(spec, channel, scenario, detector_params, n, rng):
    symbols = draw_symbol(spec, rng, size=n)
    h = gen_fading(channel, rng, size=n)
    R = combine_energies(gen_correlator_outputs(h, symbols, spec, rng))

    if scenario is Scenario.COHERENT:
        xi = spec.amplitude**2 * np.sum(h.real**2 + h.imag**2, axis=-1)
        tau = threshold_coherent(xi, channel.L, spec.M, spec.v)
    else:
        tau = detector_params.tau
    decisions = detect_many(R, tau)

    size = spec.M + 1
    counts = np.bincount(symbols * size + decisions, minlength=size * size)
    return ErrorStats(counts.reshape(size, size).astype(np.int64))


def run_monte_carlo(
    spec,
    channel,
    scenario,
    n_trials,
    seed,
    detector_params=None,
    batch_size=BATCH_SIZE,
    early_stop=False,
    workers=1,
    progress=False,
):
    """
    Simulate n_trials symbols and count MAP decision errors.

    The coherent receiver sees the realized fading of every trial. The
    noncoherent receiver only gets detector_params, by default built from
    the channel statistics as if the antennas were independent, even when
    the simulated channel is correlated.
    """
    if n_trials < 1:
        raise DomainError(f"n_trials must be >= 1, got {n_trials}")
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    scenario = Scenario(scenario)
    if scenario is Scenario.NONCOHERENT and detector_params is None:
        detector_params = noncoherent_detector_params(spec, channel)

    n_batches = math.ceil(n_trials / batch_size)
    sizes = [batch_size] * (n_batches - 1) + [n_trials - batch_size * (n_batches - 1)]

    def run_batch(index):
        rng = batch_generator(seed, index)
        return _simulate_batch(spec, channel, scenario, detector_params, sizes[index], rng)

    stats = ErrorStats.empty(spec.M)
    desc = f"{scenario.value} M={spec.M} L={channel.L} v={spec.v} {spec.snr_db} dB"
    if workers > 1 and not early_stop:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for part in tqdm(pool.map(run_batch, range(n_batches)), total=n_batches, desc=desc, disable=not progress):
                stats = stats.merge(part)
        return stats

    for index in tqdm(range(n_batches), desc=desc, disable=not progress):
        stats = stats.merge(run_batch(index))
        if early_stop and stats.errors > 0 and stats.ci_halfwidth < EARLY_STOP_RATIO * stats.p_hat:
            logger.info("early stop after %d trials, p_hat=%.4g", stats.trials, stats.p_hat)
            break
    return stats
