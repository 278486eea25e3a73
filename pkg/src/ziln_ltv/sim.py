"""Monte-Carlo efficiency study of lognormal mean estimators.

Each replication draws ``n`` values from ``Lognormal(0, sigma**2)``, splits
them in half, estimates the mean on the first half with the sample mean,
the MLE and the Finney estimator, and scores each estimate two ways:

* test MSE: mean of ``(x_j - theta_hat)**2`` over the held-out half, i.e.
  the estimate used as a constant predictor;
* true MSE: ``(theta_hat - exp(sigma**2 / 2))**2`` against the known mean.

The first is what the ``mse_*`` / ``rel_eff_*`` columns report. It carries
the irreducible variance of the test points and so pushes every ratio
towards 1; the ``true_*`` columns isolate estimator error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from ziln_ltv.dist import estimate_mean, theoretical_rel_efficiency

DEFAULT_SIGMAS = tuple(0.25 * k for k in range(1, 9))
CSV_COLUMNS = ("sigma", "n", "reps", "mse_avg", "mse_mle", "mse_finney",
               "rel_eff_mle", "rel_eff_finney", "theoretical")


def sample_lognormal(mu: float, sigma: float, n: int, seed) -> np.ndarray:
    """``exp(mu + sigma * z)`` with ``z`` from numpy's PCG64 ziggurat normals."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    z = np.random.default_rng(seed).standard_normal(n)
    return np.exp(mu + sigma * z)


@dataclass(frozen=True)
class EfficiencyRow:
    sigma: float
    n: int
    reps: int
    mse_avg: float
    mse_mle: float
    mse_finney: float
    rel_eff_mle: float
    rel_eff_finney: float
    theoretical: float
    true_mse_avg: float
    true_mse_mle: float
    true_mse_finney: float
    # mean and standard error over replications of sqerr_avg - sqerr_mle
    true_gap: float
    true_gap_se: float

    @property
    def true_rel_eff_mle(self) -> float:
        return self.true_mse_avg / self.true_mse_mle

    @property
    def true_rel_eff_finney(self) -> float:
        return self.true_mse_avg / self.true_mse_finney

    @property
    def true_gap_z(self) -> float:
        return self.true_gap / self.true_gap_se if self.true_gap_se > 0 else math.inf


@dataclass
class Replications:
    """Per-replication squared errors, columns ordered AVG, MLE, FINNEY."""

    test_mse: np.ndarray
    true_sq_err: np.ndarray


def replicate(sigma: float, n: int, reps: int, seed: int, sigma_index: int = 0) -> Replications:
    if reps < 2:
        raise ValueError("reps must be >= 2")
    if n < 4 or n % 2:
        raise ValueError("n must be even and >= 4")
    half = n // 2
    truth = math.exp(0.5 * sigma * sigma)
    test_mse = np.empty((reps, 3))
    true_sq = np.empty((reps, 3))
    for r in range(reps):
        x = sample_lognormal(0.0, sigma, n, [seed, sigma_index, r])
        # the draws are iid, so a contiguous split is a random split
        train, test = x[:half], x[half:]
        rep = estimate_mean(train)
        est = np.array([rep.theta_avg, rep.theta_mle, rep.theta_finney])
        # mean((x - t)^2) = var_pop(x) + (mean(x) - t)^2, evaluated stably
        t_mean = math.fsum(test) / half
        t_var = math.fsum((test - t_mean) ** 2) / half
        test_mse[r] = t_var + (t_mean - est) ** 2
        true_sq[r] = (est - truth) ** 2
    if not (np.all(np.isfinite(test_mse)) and np.all(np.isfinite(true_sq))):
        raise FloatingPointError(f"non-finite MSE at sigma={sigma}")
    return Replications(test_mse, true_sq)


def summarize(sigma: float, n: int, reps: Replications) -> EfficiencyRow:
    k = reps.test_mse.shape[0]
    mse = [math.fsum(reps.test_mse[:, j]) / k for j in range(3)]
    true = [math.fsum(reps.true_sq_err[:, j]) / k for j in range(3)]
    gap = reps.true_sq_err[:, 0] - reps.true_sq_err[:, 1]
    gap_mean = math.fsum(gap) / k
    gap_se = math.sqrt(math.fsum((gap - gap_mean) ** 2) / (k - 1) / k)
    return EfficiencyRow(
        sigma=sigma, n=n, reps=k,
        mse_avg=mse[0], mse_mle=mse[1], mse_finney=mse[2],
        rel_eff_mle=mse[0] / mse[1], rel_eff_finney=mse[0] / mse[2],
        theoretical=theoretical_rel_efficiency(sigma, n // 2),
        true_mse_avg=true[0], true_mse_mle=true[1], true_mse_finney=true[2],
        true_gap=gap_mean, true_gap_se=gap_se,
    )


def run_efficiency_study(sigmas: Sequence[float] = DEFAULT_SIGMAS, n: int = 10_000, reps: int = 2_000,
                         seed: int = 0) -> list[EfficiencyRow]:
    """One :class:`EfficiencyRow` per sigma; deterministic in ``seed``."""
    return [summarize(float(s), n, replicate(float(s), n, reps, seed, i)) for i, s in enumerate(sigmas)]


def write_efficiency_csv(path, rows: Sequence[EfficiencyRow], extended: bool = False) -> None:
    """Write the study table; ``extended`` appends the true-mean columns."""
    cols = list(CSV_COLUMNS)
    if extended:
        cols += [f.name for f in fields(EfficiencyRow) if f.name not in CSV_COLUMNS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(getattr(row, c)) for c in cols])
