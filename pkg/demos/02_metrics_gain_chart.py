# %% [markdown]
# # Ranking metrics for heavy-tailed value
# Gini from the cumulative gain chart, decile calibration, and the classic
# classification scores on the "did they return" indicator.

# %%
import numpy as np

from ziln_ltv import metrics

rng = np.random.default_rng(0)
n = 5000
returned = rng.random(n) < 0.45
value = np.where(returned, np.exp(rng.normal(2.0, 1.3, n)), 0.0)

# a noisy but informative model
pred = np.where(returned, 0.8, 0.3) * np.exp(rng.normal(2.0, 1.0, n) + 0.5 * (np.log1p(value) - 1))

# %%
rep = metrics.normalized_gini(pred, value)
print(f"label gini {rep.label_gini:.4f}  model gini {rep.model_gini:.4f}  normalized {rep.normalized_gini:.4f}")

# the normalized gini equals 2 * AUC - 1 on a binary target
labels = returned.astype(float)
g = metrics.normalized_gini(pred, labels).normalized_gini
print(f"binary: normalized gini {g:.6f}  2*AUC-1 {2 * metrics.auc_roc(labels, pred) - 1:.6f}")

# %%
# gain chart as text: share of value captured by the top x% of customers
curve = metrics.gain_curve(pred, value)
for frac in (0.05, 0.1, 0.2, 0.5):
    k = int(frac * n)
    print(f"top {frac:4.0%}: model {curve[k, 1]:.3f}  perfect {metrics.gain_curve(value, value)[k, 1]:.3f}")

# %% [markdown]
# ## Decile table
# Predictions are on a different scale from the labels here, so the decile MAPE
# (a sum over ten deciles) is large even though the ranking is good.

# %%
table = metrics.decile_table(pred, value)
for row in table:
    print(f"{row.decile_index:2d}  pred {row.mean_prediction:9.2f}  label {row.mean_label:9.2f}  n={row.count}")
print("decile MAPE", metrics.decile_mape(table))

# %%
print("spearman", metrics.spearman(pred, value))
print("AUC-PR", metrics.auc_pr(labels, pred), "base rate", labels.mean())
print("hit rate top 10%", metrics.hit_rate(pred, value, 0.1))
print("profit at cost 0.68", metrics.total_profit(pred / 10, value, 0.68))
