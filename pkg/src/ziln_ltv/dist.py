"""Lognormal and zero-inflated lognormal probability math.

Everything here is scalar and pure. Vectorised counterparts used on the
training path live in :mod:`ziln_ltv.loss` and :mod:`ziln_ltv.model`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# exp() overflows float64 above this argument.
EXP_LIMIT = 709.0


class OutOfRangeError(OverflowError):
    """A closed-form value would overflow double precision."""


@dataclass(frozen=True)
class LognormalParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError(f"non-finite lognormal parameters ({self.mu}, {self.sigma})")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class ZilnParams:
    """Mixture of a point mass at zero and a lognormal.

    ``p`` is the probability of a nonzero value.
    """

    p: float
    lognormal: LognormalParams

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"p must lie in (0, 1), got {self.p}")

    @property
    def mu(self) -> float:
        return self.lognormal.mu

    @property
    def sigma(self) -> float:
        return self.lognormal.sigma


def _check_positive(x: float, what: str = "x") -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"{what} must be finite, got {x}")
    if x <= 0:
        raise ValueError(f"{what} must be > 0, got {x}; gate zero labels before calling")
    return x


def lognormal_neg_loglik(x: float, params: LognormalParams) -> float:
    """Negative log-density of ``x`` under ``Lognormal(mu, sigma**2)``."""
    x = _check_positive(x)
    z = math.log(x) - params.mu
    return math.log(x) + math.log(params.sigma) + LOG_SQRT_2PI + z * z / (2.0 * params.sigma**2)


def lognormal_mean(params: LognormalParams) -> float:
    arg = params.mu + 0.5 * params.sigma**2
    if arg > EXP_LIMIT:
        raise OutOfRangeError(f"exp({arg}) overflows double precision")
    return math.exp(arg)


def ziln_mean(params: ZilnParams) -> float:
    """Expected value of the mixture, used as the point LTV prediction."""
    return params.p * lognormal_mean(params.lognormal)


# Wichura (1988), algorithm AS241 PPND16; relative accuracy about 1e-16.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coefs, r):
    acc = 0.0
    for c in reversed(coefs):
        acc = acc * r + c
    return acc


def norm_ppf(q: float) -> float:
    """Inverse of the standard normal CDF."""
    q = float(q)
    if not (0.0 < q < 1.0):
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    d = q - 0.5
    if abs(d) <= 0.425:
        r = 0.180625 - d * d
        return d * _poly(_A, r) / _poly(_B, r)
    r = math.sqrt(-math.log(min(q, 1.0 - q)))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if d < 0 else val


def lognormal_quantile(q: float, params: LognormalParams) -> float:
    return math.exp(params.mu + params.sigma * norm_ppf(q))


class Estimator(str, Enum):
    AVG = "AVG"
    MLE = "MLE"
    FINNEY = "FINNEY"


@dataclass(frozen=True)
class EstimatorReport:
    theta_avg: float
    theta_mle: float
    theta_finney: float
    y_bar: float
    s_y_sq: float
    n: int

    def value(self, method: Estimator | str) -> float:
        method = Estimator(method)
        return {
            Estimator.AVG: self.theta_avg,
            Estimator.MLE: self.theta_mle,
            Estimator.FINNEY: self.theta_finney,
        }[method]


def finney_correction(sigma_sq: float, n: int) -> float:
    """Bracketed series factor of the Finney estimator, with ``n**-2`` in both terms."""
    n2 = float(n) * float(n)
    s2 = sigma_sq
    return (1.0
            - s2 * (s2 + 2.0) / (4.0 * n2)
            + s2 * s2 * (3.0 * s2 * s2 + 44.0 * s2 + 84.0) / (96.0 * n2))


def estimate_mean(samples: Iterable[float]) -> EstimatorReport:
    """Estimate the mean of a lognormal sample three ways.

    Sums use :func:`math.fsum` so the result does not depend on summation
    order. The Finney plug-ins are ``mu_hat = y_bar`` and
    ``sigma_hat**2 = s_y_sq / n``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("all samples must be finite and > 0")

    y = np.log(x)
    theta_avg = math.fsum(x) / n
    y_bar = math.fsum(y) / n
    s_y_sq = math.fsum((y - y_bar) ** 2)
    sigma_sq = s_y_sq / n

    theta_mle = math.exp(y_bar + s_y_sq / (2.0 * n))
    theta_finney = math.exp(y_bar + 0.5 * sigma_sq) * finney_correction(sigma_sq, n)
    return EstimatorReport(theta_avg, theta_mle, theta_finney, y_bar, s_y_sq, n)


def theoretical_rel_efficiency(sigma: float, n: int) -> float:
    """Large-sample MSE ratio of the sample mean to the Finney estimator."""
    sigma = float(sigma)
    if not (math.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    s2 = sigma * sigma
    num = s2 + s2**2 / 2.0 + (s2**3 + s2**4 / 4.0) / (2.0 * n)
    return num / math.expm1(s2)
