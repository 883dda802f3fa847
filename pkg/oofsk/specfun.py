"""
Special functions behind the OOFSK error-rate formulas.

The detector thresholds contain e^xi with xi growing linearly in SNR and in
the number of antennas, so every Bessel value is handed out as a logarithm.
Array inputs are accepted wherever a Monte Carlo batch needs them; scalar
inputs come back as plain floats.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import factorial, gammaincc, gammaln, ive, logsumexp

from .errors import DomainError

logger = logging.getLogger(__name__)

# ive() results below the smallest normal double have lost their precision,
# those points are recomputed from the power series.
_TINY = np.finfo(float).tiny
_SERIES_TERMS = 60


def _scalar_or_array(values):
    if np.ndim(values) == 0:
        return float(values)
    return values


def _check_order(order):
    if order < 0 or int(order) != order:
        raise DomainError(f"Bessel order must be a nonnegative integer, got {order}")
    return int(order)


def log_factorial(n):
    """ln(n!) for nonnegative n."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise DomainError("log_factorial is defined for n >= 0 only")
    return _scalar_or_array(gammaln(n + 1.0))


def pochhammer(a, k):
    """Rising factorial (a)_k, built by repeated multiplication."""
    if k < 0:
        raise DomainError(f"Pochhammer index must be >= 0, got {k}")
    result = 1.0
    for j in range(k):
        result *= a + j
    return result


def _log_bessel_series(order, z):
    """ln I_order(z) from the ascending series, exact at z = 0."""
    k = np.arange(_SERIES_TERMS, dtype=float).reshape((-1,) + (1,) * z.ndim)
    positive = z > 0
    log_half_z = np.log(np.where(positive, z, 2.0) / 2.0)
    terms = (2.0 * k + order) * log_half_z - gammaln(k + 1.0) - gammaln(k + order + 1.0)
    series = logsumexp(terms, axis=0)
    at_zero = 0.0 if order == 0 else -np.inf
    return np.where(positive, series, at_zero)


def log_bessel_i(order, z):
    """
    Natural log of the modified Bessel function of the first kind I_order(z).

    The exponentially scaled ive() keeps arguments up to ~1e6 finite. Where
    the scaled value underflows (tiny z against a large order, or z == 0),
    the ascending series takes over, so ln I_nu(0) is 0 for nu == 0 and
    -inf otherwise.
    """
    order = _check_order(order)
    z = np.asarray(z, dtype=float)
    if np.any(np.isnan(z)) or np.any(z < 0):
        raise DomainError("log_bessel_i needs z >= 0")

    scaled = ive(order, z)
    with np.errstate(divide="ignore"):
        out = np.log(scaled) + z
    lost = ~(scaled >= _TINY)
    if np.any(lost):
        out = np.where(lost, _log_bessel_series(order, z), out)
    return _scalar_or_array(out)


def hyp1f1_poly(i, c, x):
    """
    Terminating confluent hypergeometric function F(-i, c; x).

    With a nonpositive integer as first parameter the series stops after
    i + 1 terms, so the sum is exact up to rounding.
    """
    if i < 0 or int(i) != i:
        raise DomainError(f"i must be a nonnegative integer, got {i}")
    if c < 1 or int(c) != c:
        raise DomainError(f"c must be a positive integer, got {c}")
    # (-i)_k / ((c)_k k!), exact zero for every k > i
    coeffs = [pochhammer(-int(i), k) / pochhammer(c, k) / pochhammer(1, k) for k in range(int(i) + 1)]
    return _scalar_or_array(np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coeffs))


def regularized_gamma_sum(L, x):
    """
    e^{-x} * sum_{l<L} x^l / l!, the probability that a central chi-square
    energy with 2L degrees of freedom (unit noise) exceeds x.

    This is the regularized upper incomplete gamma function Q(L, x), which
    scipy evaluates without forming the large partial sums.
    """
    if L < 1 or int(L) != L:
        raise DomainError(f"L must be a positive integer, got {L}")
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("regularized_gamma_sum needs x >= 0")
    return _scalar_or_array(gammaincc(L, x))


@dataclass(frozen=True)
class CoefficientTable:
    """Coefficients c_in of [sum_{l<L} x^l/l!]^n = sum_i c_in x^i."""

    n: int
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        expected = self.n * (self.order - 1) + 1
        if len(self.coeffs) != expected:
            raise DomainError(
                f"coefficient table for n={self.n}, L={self.order} needs "
                f"{expected} entries, got {len(self.coeffs)}"
            )

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i]


@lru_cache(maxsize=256)
def _coefficients(n, L):
    base = 1.0 / factorial(np.arange(L), exact=False)
    coeffs = np.ones(1)
    # c_in = sum_q c_q(n-1) / (i-q)! over the window max(0, i-L+1) <= q <= min(i, (n-1)(L-1))
    for _ in range(n):
        coeffs = np.convolve(coeffs, base)
    return tuple(coeffs)


def multinomial_coeffs(n, L):
    """Expand the n-th power of the truncated exponential series of order L."""
    if n < 0 or int(n) != n:
        raise DomainError(f"n must be a nonnegative integer, got {n}")
    if L < 1 or int(L) != L:
        raise DomainError(f"L must be a positive integer, got {L}")
    coeffs = np.array(_coefficients(int(n), int(L)))
    coeffs.setflags(write=False)
    return CoefficientTable(n=int(n), order=int(L), coeffs=coeffs)
