"""Evaluation metrics for heavy-tailed LTV predictions.

Every ranking here sorts descending with a stable sort, so tied keys keep
their input order. Shuffle the inputs first for tie-neutral results.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _vec(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).ravel()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _pair(a, b, names=("a", "b"), min_len: int = 1):
    a, b = _vec(a, names[0]), _vec(b, names[1])
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {a.size}")
    return a, b


def descending_order(key: np.ndarray) -> np.ndarray:
    """Indices sorting ``key`` high to low, ties in input order."""
    return np.argsort(-np.asarray(key, dtype=np.float64), kind="stable")


def average_ranks(a: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given their average rank."""
    a = np.asarray(a, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    sorted_a = a[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_a[1:] != sorted_a[:-1]])
    ends = np.r_[starts[1:], a.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(a.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(a, b) -> float:
    a, b = _pair(a, b, min_len=2)
    ra, rb = average_ranks(a), average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0:
        raise ValueError("Spearman correlation is undefined for a constant input")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class CurvePoint:
    x: float
    y: float


def gain_curve(sort_key, value) -> np.ndarray:
    """``(n + 1, 2)`` array of cumulative customer share vs. value share."""
    sort_key, value = _pair(sort_key, value, ("sort_key", "value"))
    if np.any(value < 0):
        raise ValueError("values must be non-negative")
    total = math.fsum(value)
    if total <= 0:
        raise ValueError("total value must be positive")
    n = value.size
    cum = np.concatenate([[0.0], np.cumsum(value[descending_order(sort_key)])])
    y = cum / cum[-1]
    return np.column_stack([np.arange(n + 1) / n, y])


def _gini_from_curve(curve: np.ndarray) -> float:
    x, y = curve[:, 0], curve[:, 1]
    area = float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)
    return 2.0 * (area - 0.5)


def gini(sort_key, value) -> tuple[float, list[CurvePoint]]:
    """Gini coefficient of ``value`` ranked by ``sort_key``, and its curve.

    Twice the area between the gain curve and the diagonal, trapezoid rule.
    Use ``sort_key=value`` for the label Gini, predictions for the model
    Gini and first-purchase values for the baseline Gini.
    """
    curve = gain_curve(sort_key, value)
    return _gini_from_curve(curve), [CurvePoint(float(x), float(y)) for x, y in curve]


@dataclass
class GiniReport:
    label_gini: float
    model_gini: float
    normalized_gini: float
    baseline_gini: float | None = None
    normalized_baseline_gini: float | None = None
    model_curve: np.ndarray | None = field(default=None, repr=False)
    label_curve: np.ndarray | None = field(default=None, repr=False)


def normalized_gini(predictions, labels, first_purchase=None) -> GiniReport:
    """Model Gini divided by label Gini (unclamped; negative for anti-ranking)."""
    predictions, labels = _pair(predictions, labels, ("predictions", "labels"))
    label_curve = gain_curve(labels, labels)
    model_curve = gain_curve(predictions, labels)
    g_label = _gini_from_curve(label_curve)
    g_model = _gini_from_curve(model_curve)
    if g_label == 0:
        raise ValueError("label Gini is zero; normalized Gini undefined")
    report = GiniReport(g_label, g_model, g_model / g_label, model_curve=model_curve, label_curve=label_curve)
    if first_purchase is not None:
        g_base = _gini_from_curve(gain_curve(first_purchase, labels))
        report.baseline_gini = g_base
        report.normalized_baseline_gini = g_base / g_label
    return report


@dataclass(frozen=True)
class DecileRow:
    decile_index: int
    mean_prediction: float
    mean_label: float
    count: int


def decile_sizes(n: int, groups: int = 10) -> list[int]:
    q, r = divmod(n, groups)
    return [q + 1] * r + [q] * (groups - r)


def decile_table(predictions, labels) -> list[DecileRow]:
    predictions, labels = _pair(predictions, labels, ("predictions", "labels"))
    n = predictions.size
    if n < 10:
        raise ValueError(f"decile table needs at least 10 rows, got {n}")
    order = descending_order(predictions)
    rows, start = [], 0
    for i, size in enumerate(decile_sizes(n), start=1):
        idx = order[start:start + size]
        rows.append(DecileRow(i, math.fsum(predictions[idx]) / size, math.fsum(labels[idx]) / size, size))
        start += size
    return rows


def decile_mape(table: Sequence[DecileRow]) -> float:
    """Sum over deciles of ``|mean_prediction - mean_label| / mean_label``.

    Note this is a sum over the ten deciles, not an average; divide by 10
    to compare with conventional MAPE figures.
    """
    terms = []
    for row in table:
        if row.mean_label == 0:
            raise ZeroDivisionError(f"decile {row.decile_index} has mean label 0")
        terms.append(abs(row.mean_prediction - row.mean_label) / row.mean_label)
    return math.fsum(terms)


def _binary(labels) -> np.ndarray:
    y = _vec(labels, "labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return y


def auc_roc(labels, scores) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    y = _binary(labels)
    s = _vec(scores, "scores")
    if y.size != s.size:
        raise ValueError("length mismatch")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = average_ranks(s)
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_pr(labels, scores) -> float:
    """Non-interpolated average precision."""
    y = _binary(labels)
    s = _vec(scores, "scores")
    if y.size != s.size:
        raise ValueError("length mismatch")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    hits = y[descending_order(s)]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, y.size + 1)
    return float(math.fsum(precision[hits == 1]) / n_pos)


def hit_rate(predictions, labels, top_fraction: float) -> float:
    predictions, labels = _pair(predictions, labels, ("predictions", "labels"))
    if not (0.0 < top_fraction < 1.0):
        raise ValueError("top_fraction must lie in (0, 1)")
    k = math.ceil(top_fraction * predictions.size)
    top_label = set(descending_order(labels)[:k].tolist())
    top_pred = set(descending_order(predictions)[:k].tolist())
    return len(top_label & top_pred) / k


def total_profit(predicted_value, donation, cost: float) -> float:
    """Net return of mailing everyone whose predicted value exceeds ``cost``."""
    predicted_value, donation = _pair(predicted_value, donation, ("predicted_value", "donation"))
    if np.any(donation < 0):
        raise ValueError("donations must be non-negative")
    if cost < 0:
        raise ValueError("cost must be non-negative")
    mailed = predicted_value > cost
    return math.fsum(donation[mailed] - cost)


def write_curve_csv(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction_customers", "fraction_value"])
        for x, y in np.asarray(curve, dtype=np.float64):
            w.writerow([repr(float(x)), repr(float(y))])


def write_deciles_csv(path, table: Sequence[DecileRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["decile", "mean_prediction", "mean_label", "count"])
        for r in table:
            w.writerow([r.decile_index, repr(r.mean_prediction), repr(r.mean_label), r.count])
