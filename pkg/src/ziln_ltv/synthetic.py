"""Synthetic zero-inflated lognormal data with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ziln_ltv.data import FeatureMatrix, FeatureSchema
from ziln_ltv.loss import sigmoid


@dataclass(frozen=True)
class ZilnGenerator:
    """``P(x > 0) = sigmoid(p_weights @ f + p_bias)``, ``log x ~ N(mu_weights @ f + mu_bias, sigma**2)``.

    Features ``f`` are iid standard normal.
    """

    p_weights: tuple[float, ...] = (1.0, -0.5, 0.0)
    p_bias: float = 0.0
    mu_weights: tuple[float, ...] = (0.5, 0.3, -0.4)
    mu_bias: float = 0.5
    sigma: float = 1.0

    @property
    def n_features(self) -> int:
        return len(self.p_weights)

    def schema(self) -> FeatureSchema:
        return FeatureSchema(numeric_features=tuple(f"f{i}" for i in range(self.n_features)))

    def true_params(self, numerics: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = sigmoid(numerics @ np.asarray(self.p_weights) + self.p_bias)
        mu = numerics @ np.asarray(self.mu_weights) + self.mu_bias
        return np.atleast_1d(p), np.atleast_1d(mu)

    def oracle_mean(self, numerics: np.ndarray) -> np.ndarray:
        p, mu = self.true_params(numerics)
        return p * np.exp(mu + 0.5 * self.sigma**2)

    def sample(self, n: int, seed) -> tuple[FeatureMatrix, np.ndarray]:
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((n, self.n_features))
        p, mu = self.true_params(f)
        returning = rng.random(n) < p
        values = np.exp(mu + self.sigma * rng.standard_normal(n))
        return FeatureMatrix(f), np.where(returning, values, 0.0)

    def zero_fraction(self, n: int = 200_000, seed=12345) -> float:
        """Monte-Carlo estimate of ``P(x == 0)``."""
        f = np.random.default_rng(seed).standard_normal((n, self.n_features))
        return float(1.0 - self.true_params(f)[0].mean())

    def with_zero_fraction(self, target: float, tol: float = 1e-6) -> "ZilnGenerator":
        """Copy with ``p_bias`` set so that ``P(x == 0)`` is ``target``."""
        if not (0.0 < target < 1.0):
            raise ValueError("target must lie in (0, 1)")
        f = np.random.default_rng(12345).standard_normal((200_000, self.n_features))
        base = f @ np.asarray(self.p_weights)
        lo, hi = -30.0, 30.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if 1.0 - sigmoid(base + mid).mean() > target:
                lo = mid
            else:
                hi = mid
        return replace(self, p_bias=0.5 * (lo + hi))
