"""Classification metrics over node splits."""

from __future__ import annotations

import numpy as np


def micro_f1(pred, truth, mask):
    """Micro-averaged F1; identical to accuracy for single-label data."""
    pred, truth, mask = _checked(pred, truth, mask)
    return float(np.mean(pred[mask] == truth[mask]))


def macro_f1(pred, truth, mask):
    """Unweighted mean of per-class F1; classes absent from both sides skipped."""
    pred, truth, mask = _checked(pred, truth, mask)
    p, t = pred[mask], truth[mask]
    scores = []
    for c in np.union1d(np.unique(p), np.unique(t)):
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def _checked(pred, truth, mask):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise ValueError("metric needs a nonempty mask")
    return pred, truth, mask
