"""
MAP detection of OOFSK symbols from equal-gain-combined tone energies.

Both receivers reduce to the same rule: take the strongest tone, and
declare it only if its energy clears a threshold tau, otherwise declare the
zero (off) symbol. tau is the inverse of a monotone likelihood statistic
(g1 when the fading is known, g2 when only its statistics are) evaluated
at a prior-weighted constant. All comparisons happen in the log domain.
"""

import enum
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .errors import ConvergenceError, DomainError
from .specfun import log_bessel_i

logger = logging.getLogger(__name__)

THRESHOLD_XTOL = 1e-12
_MAX_DOUBLINGS = 200
_MAX_BISECTIONS = 400
_EPS = np.finfo(float).eps


class Scenario(enum.Enum):
    """What the receiver knows about the fading."""

    COHERENT = "coherent"
    NONCOHERENT = "noncoherent"


def _check_detector_args(L, M, v):
    if L < 1 or int(L) != L:
        raise DomainError(f"L must be a positive integer, got {L}")
    if M < 2 or int(M) != M:
        raise DomainError(f"M must be an integer >= 2, got {M}")
    if not 0 < v <= 1:
        raise DomainError(f"duty cycle v must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class DetectionParams:
    """Everything the detector needs for one decision (or one batch)."""

    scenario: Scenario
    xi: float
    sigma_y_sq: float
    L: int
    M: int
    v: float
    tau: float = 0.0

    def __post_init__(self):
        _check_detector_args(self.L, self.M, self.v)
        if self.xi < 0:
            raise DomainError(f"xi must be >= 0, got {self.xi}")
        if self.sigma_y_sq < 1:
            raise DomainError(f"sigma_y^2 must be >= 1, got {self.sigma_y_sq}")
        if self.scenario is Scenario.COHERENT and self.sigma_y_sq != 1:
            raise DomainError("coherent detection uses sigma_y^2 = 1")
        if not self.tau >= 0:
            raise DomainError(f"tau must be >= 0, got {self.tau}")
        if self.v == 1 and self.tau != 0:
            raise DomainError("a full duty cycle has no zero symbol, tau must be 0")

    @classmethod
    def coherent(cls, xi, L, M, v):
        params = cls(Scenario.COHERENT, float(xi), 1.0, int(L), int(M), float(v))
        return replace(params, tau=threshold_coherent(xi, L, M, v))

    @classmethod
    def noncoherent(cls, xi, sigma_y_sq, L, M, v):
        params = cls(Scenario.NONCOHERENT, float(xi), float(sigma_y_sq), int(L), int(M), float(v))
        return replace(params, tau=threshold_noncoherent(params))


def _log_target(xi, sigma_y_sq, L, M, v):
    # ln T (sigma_y^2 = 1) or ln T2; the xi^{(L-1)/2} factor is left out at xi = 0
    # together with the matching factor of the statistic.
    xi = np.asarray(xi, dtype=float)
    positive = xi > 0
    log_xi_power = np.where(positive, 0.5 * (L - 1) * np.log(np.where(positive, xi, 1.0)), 0.0)
    return (
        np.log(M * (1.0 - v) / v)
        + np.log(sigma_y_sq)
        + log_xi_power
        + xi / sigma_y_sq
        - gammaln(L)
    )


def _log_gap(xi, sigma_y_sq, L, M, v):
    # ln T2 minus the x -> 0+ limit of ln g2; tau is zero when this is <= 0
    return np.log(M * (1.0 - v) / v) + L * np.log(sigma_y_sq) + np.asarray(xi, dtype=float) / sigma_y_sq


def log_threshold_coherent(xi, L, M, v):
    """ln T = ln[M(1-v) e^xi xi^{(L-1)/2} / (v (L-1)!)]."""
    _check_detector_args(L, M, v)
    if v == 1:
        return -np.inf
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise DomainError("ln T needs xi > 0")
    out = _log_target(xi, 1.0, L, M, v)
    return float(out) if out.ndim == 0 else out


def log_threshold_noncoherent(xi, sigma_y_sq, L, M, v):
    """
    ln T2 = ln[M(1-v) sigma_y^2 xi^{(L-1)/2} e^{xi/sigma_y^2} / (v Gamma(L))].

    For xi == 0 the xi^{(L-1)/2} factor is dropped, matching g2_log.
    """
    _check_detector_args(L, M, v)
    if v == 1:
        return -np.inf
    if xi < 0:
        raise DomainError("ln T2 needs xi >= 0")
    return float(_log_target(xi, sigma_y_sq, L, M, v))


def g1_log(x, xi, L):
    """ln g1(x) = -((L-1)/2) ln x + ln I_{L-1}(2 sqrt(x xi)), increasing in x."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("g1 is defined for x > 0")
    if np.any(~(xi > 0)):
        raise DomainError("g1 is defined for xi > 0")
    nu = L - 1
    out = -0.5 * nu * np.log(x) + log_bessel_i(nu, 2.0 * np.sqrt(x * xi))
    return float(out) if np.ndim(out) == 0 else out


def g1_log_limit(xi, L):
    """ln g1(0+) = ((L-1)/2) ln xi - ln (L-1)!, the left end of every threshold bracket."""
    xi = np.asarray(xi, dtype=float)
    if np.any(~(xi > 0)):
        raise DomainError("g1 is defined for xi > 0")
    out = 0.5 * (L - 1) * np.log(xi) - gammaln(L)
    return float(out) if out.ndim == 0 else out


def _g2_log(x, xi, sigma_y_sq, L):
    nu = L - 1
    tilt = x * (sigma_y_sq - 1.0) / sigma_y_sq
    if xi > 0:
        return -0.5 * nu * np.log(x) + tilt + log_bessel_i(nu, 2.0 * np.sqrt(x * xi) / sigma_y_sq)
    # d_l = 0: exact small-argument limit, scaled by xi^{-(L-1)/2}
    return tilt - nu * np.log(sigma_y_sq) - gammaln(L)


def g2_log(x, params):
    """
    ln g2(x) = -((L-1)/2) ln x + x A^2 sigma^2 / sigma_y^2
               + ln I_{L-1}(2 sqrt(x xi) / sigma_y^2).

    With xi == 0 (no line-of-sight component) the statistic is returned
    divided by xi^{(L-1)/2}, which leaves the detection rule unchanged.
    """
    if params.scenario is not Scenario.NONCOHERENT:
        raise DomainError("g2 belongs to the noncoherent receiver")
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("g2 is defined for x > 0")
    out = _g2_log(x, params.xi, params.sigma_y_sq, params.L)
    return float(out) if np.ndim(out) == 0 else out


def _bisect_increasing(g_log, target, xtol=THRESHOLD_XTOL):
    """
    Solve g_log(x) = target elementwise for an increasing g_log whose
    x -> 0+ limit lies below target. Works on whole arrays at once.
    """
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    for _ in range(_MAX_DOUBLINGS):
        short = g_log(hi) < target
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2.0 * hi, hi)
    else:
        raise ConvergenceError("could not bracket the detection threshold", achieved=float(np.max(hi)))
    if np.max(hi) > 1.0:
        logger.debug("threshold bracket grown to %.3g", np.max(hi))

    for _ in range(_MAX_BISECTIONS):
        if np.all(hi - lo <= xtol + 4.0 * _EPS * hi):
            break
        mid = 0.5 * (lo + hi)
        above = g_log(mid) >= target
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    else:
        raise ConvergenceError("threshold bisection stalled", achieved=float(np.max(hi - lo)))
    return 0.5 * (lo + hi)


def threshold_coherent(xi, L, M, v):
    """
    tau = g1^{-1}(T) for the coherent receiver. xi may be an array, one
    threshold per fading realization.

    tau is 0 when T lies below inf g1 (always for v == 1). A realization
    with xi == 0 makes g1 constant: the receiver then falls back on the
    priors and tau is either 0 (argmax) or +inf (always the zero symbol).
    """
    _check_detector_args(L, M, v)
    xi = np.asarray(xi, dtype=float)
    if np.any(np.isnan(xi)) or np.any(xi < 0):
        raise DomainError("xi must be >= 0")
    flat = np.atleast_1d(xi).astype(float).ravel()
    tau = np.zeros_like(flat)
    if v < 1:
        tau[(flat == 0) & (M * (1.0 - v) > v)] = np.inf
        positive = np.flatnonzero(flat > 0)
        if positive.size:
            xs = flat[positive]
            target = log_threshold_coherent(xs, L, M, v)
            # T below inf g1 = g1(0+) leaves tau at 0
            solve = target > g1_log_limit(xs, L)
            if np.any(solve):
                xs, target = xs[solve], target[solve]
                tau[positive[solve]] = _bisect_increasing(lambda x: g1_log(x, xs, L), target)
    tau = tau.reshape(xi.shape)
    return float(tau) if tau.ndim == 0 else tau


def threshold_noncoherent(params):
    """tau2 = g2^{-1}(T2); the tau field of params is ignored."""
    if params.scenario is not Scenario.NONCOHERENT:
        raise DomainError("threshold_noncoherent needs noncoherent parameters")
    xi, s, L, M, v = params.xi, params.sigma_y_sq, params.L, params.M, params.v
    if v == 1:
        return 0.0
    if _log_gap(xi, s, L, M, v) <= 0:
        return 0.0
    if xi == 0 and s == 1:
        # no signal energy at all, g2 is flat
        return np.inf
    target = np.atleast_1d(log_threshold_noncoherent(xi, s, L, M, v))
    tau = _bisect_increasing(lambda x: _g2_log(x, xi, s, L), target)
    return float(tau[0])


def detect_many(R, tau):
    """
    Vectorized decision rule over the last axis of R: 1-based index of the
    strongest tone if it exceeds tau, else 0. Ties go to the lowest index.
    """
    R = np.asarray(R, dtype=float)
    best = np.argmax(R, axis=-1)
    peak = np.take_along_axis(R, best[..., np.newaxis], axis=-1)[..., 0]
    return np.where(peak > tau, best + 1, 0)


def detect(R, params):
    """Decide one symbol in {0, ..., M} from its energy vector."""
    R = np.asarray(R, dtype=float)
    if R.shape != (params.M,):
        raise DomainError(f"energy vector must have {params.M} entries, got shape {R.shape}")
    return int(detect_many(R, params.tau))
