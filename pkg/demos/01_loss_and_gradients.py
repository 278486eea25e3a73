# %% [markdown]
# # The zero-inflated lognormal loss
# One network output triple (p_logit, mu_raw, sigma_raw) per customer. The loss
# splits into a churn term for every customer and a lognormal term for the ones
# who came back.

# %%
import numpy as np

from ziln_ltv.dist import LognormalParams, lognormal_neg_loglik
from ziln_ltv.loss import RawLogits, cross_entropy_from_logit, softplus, ziln_loss, ziln_mean_from_logits

logits = RawLogits(p_logit=0.4, mu_raw=1.2, sigma_raw=0.3)
params = logits.activate()
p, mu, sigma = params.p, params.mu, params.sigma
print(f"p={p:.4f} mu={mu:.4f} sigma={sigma:.4f}")

# %%
# a non-returning customer only pays the classification term
print(ziln_loss(0.0, logits).value, cross_entropy_from_logit(0, 0.4).value)

# %%
# a returning one adds the lognormal negative log-likelihood
x = 7.5
parts = cross_entropy_from_logit(1, 0.4).value + lognormal_neg_loglik(x, LognormalParams(mu, sigma))
print(ziln_loss(x, logits).value, parts)

# %% [markdown]
# ## Gradients against central differences

# %%
r = ziln_loss(x, logits)
v = logits.as_array()
h = 1e-6
for i, name in enumerate(["d_p_logit", "d_mu_raw", "d_sigma_raw"]):
    up, dn = v.copy(), v.copy()
    up[i] += h
    dn[i] -= h
    fd = (ziln_loss(x, RawLogits(*up)).value - ziln_loss(x, RawLogits(*dn)).value) / (2 * h)
    print(f"{name:12s} analytic {getattr(r, name): .10f}  numeric {fd: .10f}")

# %% [markdown]
# ## Mean and quantiles
# The expected LTV is p * exp(mu + sigma^2 / 2). It sits well above the median
# when sigma is large, which is the whole point of modelling the tail.

# %%
for s_raw in (-1.0, 0.0, 1.0, 2.0):
    lg = np.array([[0.4, 1.2, s_raw]])
    s = softplus(s_raw)
    print(f"sigma={s:.3f}  spend median {np.exp(1.2):.3f}  spend mean {np.exp(1.2 + s * s / 2):8.3f}"
          f"  expected LTV {ziln_mean_from_logits(lg)[0]:8.3f}")
