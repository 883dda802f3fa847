"""
Error probabilities of MAP-detected OOFSK with L-antenna equal gain
combining, without simulation.

The probability that the sent tone is detected correctly, P_c1, is
computed two ways:

* series: binomial expansion of [1 - Q(L, x)]^{M-1}, multinomial expansion
  of its powers, a closed form for each full-range moment of the sent-tone
  energy and a short quadrature over [0, tau] for the part below the
  threshold;
* quadrature: the defining integral over [tau, inf) evaluated directly.

The sent-tone energy is a scaled noncentral chi-square with 2L degrees of
freedom. With per-antenna variance s = sigma_y^2 (s = 1 for the coherent
receiver) its full-range moments are

    int_0^inf x^i e^{-nx} f(x) dx
        = Gamma(i+L)/Gamma(L) * s^i / (1+ns)^{i+L} * e^{-n xi/(1+ns)}
          * F(-i, L; -xi/(s(1+ns))).

The coherent error rate is averaged over the fading energy chi with a
second quadrature; closed forms cover independent antennas only.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.special import binom, gammaln

from .channel import noncoherent_detector_params
from .detector import threshold_coherent
from .errors import AnalyticScopeError, ConvergenceError, DomainError
from .specfun import hyp1f1_poly, log_bessel_i, multinomial_coeffs, regularized_gamma_sum

logger = logging.getLogger(__name__)

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-11
PARTIAL_EPSREL = 1e-12
QUAD_LIMIT = 200
# integrals whose error estimate stays below this are accepted even when
# QUADPACK complains about roundoff
QUAD_MAX_ERROR = 1e-8
AVERAGE_EPSREL = 1e-7
CANCELLATION_LIMIT = 1e8
PROBABILITY_SLACK = 1e-7

# breakpoints around the sent-tone energy peak, in standard deviations
_PEAK_OFFSETS = (-12.0, -4.0, 0.0, 4.0, 12.0, 40.0)
_FADE_TAIL_STD = 40.0

METHODS = ("series", "quadrature")


def _quad(func, a, b, points=None, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL):
    """scipy quad with warnings turned into ConvergenceError above QUAD_MAX_ERROR."""
    if not b > a:
        return 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        result = integrate.quad(
            func, a, b, points=points, epsabs=epsabs, epsrel=epsrel, limit=QUAD_LIMIT, full_output=1
        )
    value, abserr = result[0], result[1]
    if len(result) > 3:
        if not abserr <= QUAD_MAX_ERROR:
            raise ConvergenceError(f"quadrature over [{a:.6g}, {b:.6g}] did not converge: {result[3]}", achieved=abserr)
        logger.debug("quadrature over [%.4g, %.4g] accepted with error %.2g", a, b, abserr)
    return value, abserr


def _log_signal_density(x, xi, s, L):
    """ln of the pdf of the combined energy of the sent tone."""
    nu = L - 1
    if x <= 0:
        if nu > 0:
            return -math.inf
        return -math.log(s) - xi / s
    if xi > 0:
        return (
            -math.log(s)
            + 0.5 * nu * (math.log(x) - math.log(xi))
            - (x + xi) / s
            + log_bessel_i(nu, 2.0 * math.sqrt(x * xi) / s)
        )
    return -L * math.log(s) + nu * math.log(x) - x / s - gammaln(L)


def _energy_moments(xi, s, L):
    """Mean and standard deviation of the sent-tone energy."""
    return L * s + xi, math.sqrt(L * s * s + 2.0 * s * xi)


def _tail_integral(integrand, lo, center, width):
    """Integrate over [lo, inf), splitting finite pieces around the peak."""
    edges = [lo] + [e for e in (center + k * width for k in _PEAK_OFFSETS) if e > lo]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        total += _quad(integrand, a, b)[0]
    total += _quad(integrand, edges[-1], np.inf)[0]
    return total


def _pc1_quadrature(xi, s, L, M, tau):
    if math.isinf(tau):
        return 0.0

    def integrand(x):
        below = 1.0 - regularized_gamma_sum(L, x)
        return below ** (M - 1) * math.exp(_log_signal_density(x, xi, s, L))

    center, width = _energy_moments(xi, s, L)
    return _tail_integral(integrand, tau, center, width)


def _log_full_range_moment(n, i, xi, s, L):
    q = 1.0 + n * s
    y = xi / (s * q)
    return (
        gammaln(i + L)
        - gammaln(L)
        + i * math.log(s)
        - (i + L) * math.log(q)
        - n * xi / q
        + math.log(hyp1f1_poly(i, L, -y))
    )


def _series_indices(L, M):
    return [(n, i) for n in range(M) for i in range(n * (L - 1) + 1)]


def _partial_moments(xi, s, L, M, tau):
    """
    int_0^tau x^i e^{-nx} f(x) dx for every (n, i) of the series at once,
    written in t = sqrt(x).
    """
    indices = np.array(_series_indices(L, M), dtype=float)
    ns, powers = indices[:, 0], 2.0 * indices[:, 1] + 1.0

    def integrand(t):
        if t <= 0:
            return np.zeros(len(ns))
        x = t * t
        return np.exp(math.log(2.0) + powers * math.log(t) - ns * x + _log_signal_density(x, xi, s, L))

    center, width = _energy_moments(xi, s, L)
    peak = math.sqrt(center)
    # x^i e^{-nx} f(x) has no mass left beyond the last peak offset
    upper = min(math.sqrt(tau), math.sqrt(center + _PEAK_OFFSETS[-1] * width))
    points = [peak] if 0 < peak < upper else None
    value, abserr, info = integrate.quad_vec(
        integrand, 0.0, upper, epsabs=QUAD_EPSABS, epsrel=PARTIAL_EPSREL, norm="max", points=points, full_output=True
    )
    if info.status != 0:
        if not abserr <= QUAD_MAX_ERROR:
            raise ConvergenceError(f"partial moments over [0, {tau:.6g}] did not converge: {info.message}", achieved=abserr)
        logger.debug("partial moments accepted with error %.2g", abserr)
    return value


def _pc1_series_terms(xi, s, L, M, tau):
    terms = []
    for n, i in _series_indices(L, M):
        weight = (-1) ** n * binom(M - 1, n) * multinomial_coeffs(n, L)[i]
        terms.append(weight * math.exp(_log_full_range_moment(n, i, xi, s, L)))
    if tau > 0:
        partial = _partial_moments(xi, s, L, M, tau)
        for (n, i), moment in zip(_series_indices(L, M), partial):
            weight = (-1) ** n * binom(M - 1, n) * multinomial_coeffs(n, L)[i]
            terms.append(-weight * moment)
    return terms


def _pc1_series(xi, s, L, M, tau, fallback=True):
    if math.isinf(tau):
        return 0.0
    terms = _pc1_series_terms(xi, s, L, M, tau)
    total = math.fsum(terms)
    magnitude = math.fsum(abs(t) for t in terms)
    if fallback and (total == 0 or magnitude > CANCELLATION_LIMIT * abs(total)):
        logger.debug(
            "series cancels (sum %.3g of terms totalling %.3g), using direct quadrature", total, magnitude
        )
        return _pc1_quadrature(xi, s, L, M, tau)
    return total


def _pc1(xi, s, L, M, tau, method):
    if method == "series":
        return _pc1_series(xi, s, L, M, tau)
    if method == "quadrature":
        return _pc1_quadrature(xi, s, L, M, tau)
    raise DomainError(f"unknown method {method!r}, expected one of {METHODS}")


def _check_pc1_args(xi, L, M, v, tau):
    if not xi > 0:
        raise DomainError(f"xi must be > 0, got {xi}")
    if L < 1 or M < 1:
        raise DomainError(f"L and M must be positive, got L={L}, M={M}")
    if not 0 < v <= 1:
        raise DomainError(f"duty cycle v must lie in (0, 1], got {v}")
    if not tau >= 0:
        raise DomainError(f"tau must be >= 0, got {tau}")


def pc1_coherent_series(xi, L, M, v, tau, fallback=True):
    """
    P_c1 for known fading from the closed-form series. When the alternating
    sum loses more than CANCELLATION_LIMIT in relative terms the direct
    quadrature is used instead, unless fallback is False.
    """
    _check_pc1_args(xi, L, M, v, tau)
    return _pc1_series(float(xi), 1.0, int(L), int(M), float(tau), fallback=fallback)


def pc1_direct_quadrature(xi, L, M, v, tau):
    """P_c1 for known fading as int_tau^inf P(L, x)^{M-1} f(x) dx."""
    _check_pc1_args(xi, L, M, v, tau)
    return _pc1_quadrature(float(xi), 1.0, int(L), int(M), float(tau))


def pc1_noncoherent_series(xi, sigma_y_sq, L, M, v, tau, fallback=True):
    """Noncoherent counterpart of pc1_coherent_series; xi = 0 is allowed."""
    _check_pc1_args(xi if xi > 0 else 1.0, L, M, v, tau)
    if sigma_y_sq < 1:
        raise DomainError(f"sigma_y^2 must be >= 1, got {sigma_y_sq}")
    return _pc1_series(float(xi), float(sigma_y_sq), int(L), int(M), float(tau), fallback=fallback)


def pc1_noncoherent_quadrature(xi, sigma_y_sq, L, M, v, tau):
    _check_pc1_args(xi if xi > 0 else 1.0, L, M, v, tau)
    if sigma_y_sq < 1:
        raise DomainError(f"sigma_y^2 must be >= 1, got {sigma_y_sq}")
    return _pc1_quadrature(float(xi), float(sigma_y_sq), int(L), int(M), float(tau))


def pc0(tau, L, M):
    """Probability that every tone energy stays below tau when nothing is sent."""
    if not tau >= 0:
        raise DomainError(f"tau must be >= 0, got {tau}")
    if math.isinf(tau):
        return 1.0
    return (1.0 - regularized_gamma_sum(L, tau)) ** M


def prior_error_floor(M, v):
    """Error rate of a receiver that sees pure noise and decides by the priors."""
    return 1.0 - max(v / M, 1.0 - v)


def _combine(v, p1, p0):
    pe = 1.0 - (v * p1 + (1.0 - v) * p0)
    if not -PROBABILITY_SLACK <= pe <= 1.0 + PROBABILITY_SLACK:
        raise ConvergenceError(f"error probability {pe!r} left [0, 1]", achieved=abs(pe - min(max(pe, 0.0), 1.0)))
    return min(max(pe, 0.0), 1.0)


@dataclass(frozen=True)
class ChannelEnergy:
    """
    Statistics of chi = sum_l |h_l|^2 over independent antennas: chi / (sigma^2/2)
    is noncentral chi-square with 2L degrees of freedom and noncentrality
    2 s^2 / sigma^2.
    """

    s_sq: float
    sigma_sq: float
    L: int

    @classmethod
    def of(cls, channel):
        if not channel.independent:
            raise AnalyticScopeError("closed-form fading averages need independent antennas")
        return cls(s_sq=channel.s_sq, sigma_sq=channel.sigma_sq, L=channel.L)

    @property
    def mean(self):
        return self.L * self.sigma_sq + self.s_sq

    @property
    def std(self):
        return math.sqrt(self.L * self.sigma_sq**2 + 2.0 * self.sigma_sq * self.s_sq)

    @property
    def upper_cut(self):
        """chi beyond which the remaining probability mass is negligible."""
        return self.mean + _FADE_TAIL_STD * self.std

    def distribution(self):
        if self.sigma_sq <= 0:
            raise DomainError("without a diffuse component chi is a point mass at s^2")
        scale = 0.5 * self.sigma_sq
        if self.s_sq == 0:
            return stats.chi2(df=2 * self.L, scale=scale)
        return stats.ncx2(df=2 * self.L, nc=2.0 * self.s_sq / self.sigma_sq, scale=scale)

    def pdf(self, chi):
        return self.distribution().pdf(chi)


def pe_conditional_coherent(chi, spec, L, method="series"):
    """Symbol error probability of the coherent receiver for a given chi."""
    if not chi >= 0:
        raise DomainError(f"chi must be >= 0, got {chi}")
    xi = spec.amplitude**2 * chi
    tau = threshold_coherent(xi, L, spec.M, spec.v)
    p1 = _pc1(xi, 1.0, L, spec.M, tau, method)
    return _combine(spec.v, p1, pc0(tau, L, spec.M))


def pe_average_coherent(spec, channel, method="series"):
    """Coherent symbol error probability averaged over the fading energy."""
    energy = ChannelEnergy.of(channel)
    L = channel.L
    if energy.sigma_sq == 0:
        return pe_conditional_coherent(energy.s_sq, spec, L, method)

    density = energy.distribution()

    def integrand(chi):
        return pe_conditional_coherent(chi, spec, L, method) * density.pdf(chi)

    upper = energy.upper_cut
    # deep fades (xi of order one) dominate at high SNR
    a_sq = spec.amplitude**2
    scales = [energy.mean]
    if a_sq > 0:
        scales += [1.0 / a_sq, 10.0 / a_sq, 100.0 / a_sq]
    points = sorted({p for p in scales if 0 < p < upper})
    value, abserr = _quad(integrand, 0.0, upper, points=points, epsabs=QUAD_EPSABS, epsrel=AVERAGE_EPSREL)
    logger.debug("average coherent P_e=%.6g (+/- %.2g)", value, abserr)
    return min(max(value, 0.0), 1.0)


def pe_noncoherent(spec, channel, method="series"):
    """Symbol error probability of the noncoherent receiver, independent antennas."""
    if not channel.independent:
        raise AnalyticScopeError("closed-form noncoherent error rates need independent antennas")
    params = noncoherent_detector_params(spec, channel)
    p1 = _pc1(params.xi, params.sigma_y_sq, params.L, params.M, params.tau, method)
    return _combine(spec.v, p1, pc0(params.tau, params.L, params.M))
