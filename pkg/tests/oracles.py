"""Reference computations the tests check the package against.

These are deliberately naive (exact rationals, all-pairs loops) and share
no code with the package.
"""
from fractions import Fraction

import numpy as np


def exact_column_stats(values):
    """(max, min, median, mean, population variance) via exact rationals."""
    xs = sorted(Fraction(v) for v in values)
    n = len(xs)
    if n % 2:
        median = xs[n // 2]
    else:
        median = (xs[n // 2 - 1] + xs[n // 2]) / 2
    mean = sum(xs) / n
    var = sum((x - mean) ** 2 for x in xs) / n
    return tuple(float(v) for v in (xs[-1], xs[0], median, mean, var))


def brute_force_auc(scores, is_attack):
    """Fraction of (attack, benign) pairs ordered correctly, ties worth 1/2."""
    scores = np.asarray(scores, dtype=float)
    pos = scores[np.asarray(is_attack, dtype=bool)]
    neg = scores[~np.asarray(is_attack, dtype=bool)]
    if len(pos) == 0 or len(neg) == 0:
        return None
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return wins / (len(pos) * len(neg))


def direct_f1_recall(tp, fp, fn):
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, recall


def count_confusion(predicted, truth):
    """Count (tp, fp, tn, fn) from parallel 'Attack'/'Benign' string lists."""
    tp = sum(p == "Attack" and t == "Attack" for p, t in zip(predicted, truth))
    fp = sum(p == "Attack" and t == "Benign" for p, t in zip(predicted, truth))
    tn = sum(p == "Benign" and t == "Benign" for p, t in zip(predicted, truth))
    fn = sum(p == "Benign" and t == "Attack" for p, t in zip(predicted, truth))
    return tp, fp, tn, fn
