# %% [markdown]
# # Estimating a lognormal mean: sample average, MLE and Finney
# Draw n values, fit on one half, score on the other half. "MSE" is read two
# ways: against the held-out raw values and against the known true mean.

# %%
import numpy as np

from ziln_ltv import sim
from ziln_ltv.dist import estimate_mean, theoretical_rel_efficiency

x = sim.sample_lognormal(0.0, 1.5, 10_000, seed=3)
r = estimate_mean(x[:5000])
print(f"truth {np.exp(1.5**2 / 2):.4f}  avg {r.theta_avg:.4f}  mle {r.theta_mle:.4f}  finney {r.theta_finney:.4f}")

# %%
rows = sim.run_efficiency_study([0.25, 0.5, 1.0, 1.5, 2.0], n=10_000, reps=200, seed=0)
print(f"{'sigma':>6s}{'test-set AVG/MLE':>18s}{'true AVG/MLE':>14s}{'z':>7s}{'formula':>9s}")
for row in rows:
    print(f"{row.sigma:6.2f}{row.rel_eff_mle:18.5f}{row.true_rel_eff_mle:14.3f}{row.true_gap_z:7.2f}{row.theoretical:9.3f}")

# %% [markdown]
# Against held-out raw values every ratio sits near 1: the variance of the
# test points dwarfs the estimator error. Against the true mean the MLE wins
# more and more as sigma grows, while the closed-form column (evaluated as
# printed) falls below 1. At small sigma the two estimators are nearly the same
# and a few hundred replications cannot separate them.

# %%
print([round(theoretical_rel_efficiency(s, 5000), 3) for s in (0.25, 1.0, 2.0)])
