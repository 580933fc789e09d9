"""Independent oracles shared by the test modules.

These deliberately re-derive expected values by the slowest, most direct
route available (pairwise enumeration, per-threshold recounting, finite
differences) so they stay decoupled from the implementations they check.
"""

import numpy as np

from enrollnet.features import FeatureBundle
from enrollnet.model import ModelDims


def brute_force_roc_auc(scores, labels) -> float:
    """All positive-negative pairs, ties credited 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def brute_force_pr_auc(scores, labels) -> float:
    """Average precision by recounting the confusion at every distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    thresholds = sorted(set(scores.tolist()), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for t in thresholds:
        predicted = scores >= t
        tp = int(np.sum(predicted & (labels == 1)))
        fp = int(np.sum(predicted & (labels == 0)))
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def max_relative_error(analytic: dict, numeric: dict) -> float:
    """Worst per-component |a - n| / max(|a|, |n|, 1e-6) over parameter arrays.

    The 1e-6 floor keeps components whose true gradient is essentially zero
    from inflating the ratio past the finite-difference noise floor.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_bundle(rng, dims: ModelDims, n_inclusion=None, n_exclusion=None, max_words=4):
    """A synthetic FeatureBundle with uniform(-1, 1) inputs."""
    if n_inclusion is None:
        n_inclusion = int(rng.integers(0, 4))
    if n_exclusion is None:
        n_exclusion = int(rng.integers(0, 4))

    def group(count):
        return [
            rng.uniform(-1.0, 1.0, size=(int(rng.integers(1, max_words + 1)), dims.word_dim))
            for _ in range(count)
        ]

    return FeatureBundle(
        nct_id="NCT00000000",
        cross_input=rng.uniform(-1.0, 1.0, size=dims.cross_width),
        inclusion_words=group(n_inclusion),
        exclusion_words=group(n_exclusion),
        label=int(rng.integers(0, 2)),
    )
