"""Training losses with hand-derived gradients.

All gradients are taken with respect to the raw pre-activation outputs of
the network. The three ZILN heads are activated as::

    p     = sigmoid(p_logit)
    mu    = mu_raw
    sigma = softplus(sigma_raw) + SIGMA_FLOOR
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ziln_ltv.dist import LOG_SQRT_2PI, LognormalParams, ZilnParams

SIGMA_FLOOR = 1e-6


class LossKind(str, Enum):
    ZILN = "ZILN"
    MSE = "MSE"
    BCE = "BCE"

    @classmethod
    def parse(cls, value) -> "LossKind":
        return value if isinstance(value, cls) else cls(str(value).upper())


@dataclass(frozen=True)
class RawLogits:
    p_logit: float
    mu_raw: float
    sigma_raw: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.p_logit, self.mu_raw, self.sigma_raw)):
            raise ValueError(f"non-finite logits {self}")

    def activate(self) -> ZilnParams:
        a = activate(np.array([[self.p_logit, self.mu_raw, self.sigma_raw]]))[0]
        return ZilnParams(float(a[0]), LognormalParams(float(a[1]), float(a[2])))

    def as_array(self) -> np.ndarray:
        return np.array([self.p_logit, self.mu_raw, self.sigma_raw], dtype=np.float64)


@dataclass(frozen=True)
class LossGrad:
    value: float
    d_p_logit: float = 0.0
    d_mu_raw: float = 0.0
    d_sigma_raw: float = 0.0


def softplus(z):
    """``log(1 + exp(z))`` without overflow; works on scalars and arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return float(out) if out.ndim == 0 else out


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def activate(logits: np.ndarray) -> np.ndarray:
    """Map raw ``(n, 3)`` outputs to ``(p, mu, sigma)`` columns."""
    logits = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(logits)
    out[:, 0] = sigmoid(logits[:, 0])
    out[:, 1] = logits[:, 1]
    out[:, 2] = softplus(logits[:, 2]) + SIGMA_FLOOR
    return out


def ziln_mean_from_logits(logits: np.ndarray) -> np.ndarray:
    a = activate(logits)
    return a[:, 0] * np.exp(a[:, 1] + 0.5 * a[:, 2] ** 2)


def _check_labels(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("labels must be finite")
    if np.any(x < 0):
        raise ValueError("labels must be >= 0")
    return x


def ziln_loss_arrays(x: np.ndarray, logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example ZILN loss and its ``(n, 3)`` gradient.

    Zero labels contribute ``-log(1 - p)`` only; positive labels contribute
    ``-log p`` plus the lognormal negative log-likelihood.
    """
    x = _check_labels(x)
    logits = np.asarray(logits, dtype=np.float64)
    z, m, s = logits[:, 0], logits[:, 1], logits[:, 2]
    positive = x > 0

    sigma = softplus(s) + SIGMA_FLOOR
    p = sigmoid(z)

    # -log(1-p) = softplus(z); -log(p) = softplus(-z)
    value = np.where(positive, softplus(-z), softplus(z))
    d_z = np.where(positive, p - 1.0, p)

    safe_x = np.where(positive, x, 1.0)
    log_x = np.log(safe_x)
    resid = log_x - m
    lognormal = log_x + np.log(sigma) + LOG_SQRT_2PI + resid**2 / (2.0 * sigma**2)
    d_m = -resid / sigma**2
    d_sigma = 1.0 / sigma - resid**2 / sigma**3

    value = value + np.where(positive, lognormal, 0.0)
    grads = np.stack(
        [
            d_z,
            np.where(positive, d_m, 0.0),
            np.where(positive, d_sigma * sigmoid(s), 0.0),
        ],
        axis=1,
    )
    return value, grads


def bce_loss_arrays(indicator: np.ndarray, logit: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(indicator, dtype=np.float64)
    z = np.asarray(logit, dtype=np.float64)
    # y*softplus(-z) + (1-y)*softplus(z) == softplus(z) - y*z
    value = softplus(z) - y * z
    return np.atleast_1d(value), np.atleast_1d(sigmoid(z) - y)


def mse_loss_arrays(prediction: np.ndarray, label: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = np.asarray(prediction, dtype=np.float64) - np.asarray(label, dtype=np.float64)
    # overflow to inf is reported by the trainer as a non-finite loss
    with np.errstate(over="ignore"):
        return diff**2, 2.0 * diff


def ziln_loss(x: float, logits: RawLogits) -> LossGrad:
    x = float(x)
    if not math.isfinite(x) or x < 0:
        raise ValueError(f"label must be finite and >= 0, got {x}")
    value, grads = ziln_loss_arrays(np.array([x]), logits.as_array()[None, :])
    g = grads[0]
    return LossGrad(float(value[0]), float(g[0]), float(g[1]), float(g[2]))


def cross_entropy_from_logit(indicator: int, p_logit: float) -> LossGrad:
    if indicator not in (0, 1):
        raise ValueError(f"indicator must be 0 or 1, got {indicator}")
    if not math.isfinite(p_logit):
        raise ValueError("logit must be finite")
    value, grad = bce_loss_arrays(np.array([indicator]), np.array([p_logit]))
    return LossGrad(float(value[0]), d_p_logit=float(grad[0]))


def mse_loss(prediction: float, label: float) -> LossGrad:
    """Squared error; the gradient is reported in the ``d_p_logit`` slot."""
    value, grad = mse_loss_arrays(np.array([prediction]), np.array([label]))
    return LossGrad(float(value[0]), d_p_logit=float(grad[0]))


def _mean_head_mse(labels, logits):
    a = activate(logits)
    p, mu, sigma = a[:, 0], a[:, 1], a[:, 2]
    mean = p * np.exp(mu + 0.5 * sigma**2)
    value, d_mean = mse_loss_arrays(mean, labels)
    grads = np.stack(
        [
            d_mean * mean * (1.0 - p),
            d_mean * mean,
            d_mean * mean * sigma * sigmoid(logits[:, 2]),
        ],
        axis=1,
    )
    return value, grads


def batch_loss(labels, outputs, kind: LossKind | str, mean_head: bool = False):
    """Mean loss over a batch and per-example gradients scaled by ``1/n``.

    ``outputs`` is ``(n, 3)`` raw ZILN logits for ``ZILN`` (and for ``MSE``
    with ``mean_head=True``), otherwise a single scalar output per example,
    shape ``(n,)`` or ``(n, 1)``. The returned gradient has the shape of
    ``outputs``.
    """
    kind = LossKind.parse(kind)
    labels = _check_labels(labels).ravel()
    outputs = np.asarray(outputs, dtype=np.float64)
    n = labels.size
    if n == 0:
        raise ValueError("empty batch")
    if outputs.shape[0] != n:
        raise ValueError(f"length mismatch: {n} labels vs {outputs.shape[0]} outputs")

    if kind is LossKind.ZILN or (kind is LossKind.MSE and mean_head):
        if outputs.ndim != 2 or outputs.shape[1] != 3:
            raise ValueError(f"{kind.value} loss needs (n, 3) outputs, got {outputs.shape}")
        if kind is LossKind.ZILN:
            values, grads = ziln_loss_arrays(labels, outputs)
        else:
            values, grads = _mean_head_mse(labels, outputs)
    else:
        flat = outputs.reshape(n, -1)
        if flat.shape[1] != 1:
            raise ValueError(f"{kind.value} loss needs a single output per example")
        if kind is LossKind.MSE:
            values, g = mse_loss_arrays(flat[:, 0], labels)
        else:
            values, g = bce_loss_arrays((labels > 0).astype(np.float64), flat[:, 0])
        grads = g.reshape(outputs.shape)

    # fsum keeps the reduction independent of evaluation order.
    return math.fsum(values) / n, grads / n
