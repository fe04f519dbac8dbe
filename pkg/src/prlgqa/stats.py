"""Correlation and ranking statistics for judging quality predictors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedCorrelationError(ValueError):
    pass


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if len(y) != len(y_hat):
        raise ValueError(f"length mismatch: {len(y)} vs {len(y_hat)}")
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_hat))):
        raise ValueError("scores must be finite")
    return y, y_hat


def plcc(y, y_hat):
    """Pearson linear correlation of raw scores (no logistic fitting)."""
    y, y_hat = _pair(y, y_hat)
    dy = y - y.mean()
    dh = y_hat - y_hat.mean()
    den = np.sqrt(np.sum(dy**2) * np.sum(dh**2))
    if den == 0:
        raise UndefinedCorrelationError("PLCC undefined for a constant vector")
    return float(np.clip(np.sum(dy * dh) / den, -1.0, 1.0))


def krcc(y, y_hat):
    """Kendall tau-a: 2(N_c - N_d) / (N(N-1)); tied pairs count in neither."""
    y, y_hat = _pair(y, y_hat)
    n = len(y)
    iu = np.triu_indices(n, k=1)
    sy = np.sign(y[:, None] - y[None, :])[iu]
    sh = np.sign(y_hat[:, None] - y_hat[None, :])[iu]
    prod = sy * sh
    n_c = int(np.sum(prod > 0))
    n_d = int(np.sum(prod < 0))
    return 2.0 * (n_c - n_d) / (n * (n - 1))


def srcc(y, y_hat):
    """1 - 6 sum(d^2) / (N(N^2-1)) on average ranks."""
    y, y_hat = _pair(y, y_hat)
    n = len(y)
    d = rankdata(y, method="average") - rankdata(y_hat, method="average")
    return float(1.0 - 6.0 * np.sum(d**2) / (n * (n * n - 1)))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def accuracy(self):
        if self.total == 0:
            raise ValueError("no decisions counted")
        return (self.tp + self.tn) / self.total


def confusion_counts(decisions):
    """Count ``(predicted_a_better, true_a_better)`` decisions; "A better" is positive."""
    tp = tn = fp = fn = 0
    for pred, true in decisions:
        if true:
            tp += bool(pred)
            fn += not pred
        else:
            tn += not pred
            fp += bool(pred)
    return ConfusionCounts(tp, tn, fp, fn)


def ranking_accuracy(decisions):
    decisions = list(decisions)
    if not decisions:
        raise ValueError("no decisions")
    return confusion_counts(decisions).accuracy()


def l_test(cells, higher_is_better=True, contents=None, kinds=None):
    """Mean SRCC between distortion levels and oriented quality scores.

    ``cells`` maps ``(content, kind)`` to ``(levels, scores)``. Scores from a
    higher-better predictor are negated so that quality falling with level
    counts as perfect agreement (1.0); lower-better error scores already rise
    with level. When ``contents`` and ``kinds`` are given every combination
    must be present.
    """
    if contents is not None and kinds is not None:
        missing = [(c, k) for c in contents for k in kinds if (c, k) not in cells]
        if missing:
            raise KeyError(f"missing (content, distortion) cells: {missing}")
    if not cells:
        raise ValueError("no cells")
    sign = -1.0 if higher_is_better else 1.0
    total = 0.0
    for key in sorted(cells, key=str):
        levels, scores = cells[key]
        levels = np.asarray(levels, dtype=np.float64)
        scores = np.asarray(scores, dtype=np.float64)
        if len(levels) < 2 or len(levels) != len(scores):
            raise ValueError(f"cell {key} needs equal-length vectors of length >= 2")
        total += srcc(levels, sign * scores)
    return total / len(cells)


def format_report(rows, columns, title=None, digits=3):
    """Tab-separated table: one row per method, one column per distortion plus the mean.

    ``rows`` maps a method name to ``{column: value}``; missing cells print as ``-``.
    """
    lines = [] if title is None else [f"# {title}"]
    lines.append("\t".join(["method", *columns, "mean"]))
    for name, vals in rows.items():
        present = [vals[c] for c in columns if c in vals and vals[c] is not None]
        cells = [f"{vals[c]:.{digits}f}" if vals.get(c) is not None else "-" for c in columns]
        mean = f"{np.mean(present):.{digits}f}" if present else "-"
        lines.append("\t".join([name, *cells, mean]))
    return "\n".join(lines) + "\n"
