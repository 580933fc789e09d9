"""Binary-classification metrics, logistic baseline, permutation importance.

Scores and labels travel as parallel arrays.  Both AUCs are rank-based:
ROC-AUC is the probability a random positive outranks a random negative
(ties credited 0.5) and PR-AUC is step-wise average precision with tie
groups processed as blocks, so both are invariant under strictly monotone
score transforms and checkable by brute-force enumeration.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .training import SingleClassDataset


class EmptyPredictions(ValueError):
    pass


class OneClassOnly(ValueError):
    pass


class NoPositives(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    threshold: float
    confusion: ConfusionCounts
    pr_auc: float | None = None
    roc_auc: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _ranked(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be parallel 1-D arrays")
    if scores.size == 0:
        raise EmptyPredictions("no predictions to evaluate")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def classification_metrics(scores, labels, threshold: float = 0.5) -> MetricReport:
    """Point metrics at a threshold (score >= threshold predicts positive).

    Zero-denominator conventions: precision=0 when nothing is predicted
    positive, recall=0 when there are no positives, F1=0 when both are 0.
    """
    scores, labels = _ranked(scores, labels)
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    predicted = scores >= threshold
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    tn = int(np.sum(~predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / (tp + fp + tn + fn)
    return MetricReport(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        threshold=threshold,
        confusion=ConfusionCounts(tp, fp, tn, fn),
    )


def roc_auc(scores, labels) -> float:
    """P(score of random positive > score of random negative), ties at 0.5.

    Computed with midranks; equals the trapezoid-integrated ROC curve.
    """
    scores, labels = _ranked(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC-AUC needs at least one example of each class")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(labels.size, dtype=np.float64)
    ordered = scores[order]
    i = 0
    while i < ordered.size:
        j = i
        while j + 1 < ordered.size and ordered[j + 1] == ordered[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pr_auc(scores, labels) -> float:
    """Average precision over descending-score ranks, tie groups as blocks."""
    scores, labels = _ranked(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("PR-AUC needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    ordered_scores = scores[order]
    ordered_labels = labels[order]
    ap = 0.0
    tp = 0
    i = 0
    while i < ordered_scores.size:
        j = i
        while j + 1 < ordered_scores.size and ordered_scores[j + 1] == ordered_scores[i]:
            j += 1
        block_tp = int(ordered_labels[i : j + 1].sum())
        tp += block_tp
        if block_tp:
            ap += (tp / (j + 1)) * (block_tp / n_pos)
        i = j + 1
    return ap


def metric_report(scores, labels, threshold: float = 0.5) -> MetricReport:
    """All six metrics; requires both classes present."""
    report = classification_metrics(scores, labels, threshold)
    report.roc_auc = roc_auc(scores, labels)
    report.pr_auc = pr_auc(scores, labels)
    return report


def format_metric_table(report: MetricReport, name: str = "model") -> str:
    header = f"{'Model':<12} {'PR-AUC':>8} {'ROC-AUC':>8} {'F1':>8} {'Precision':>10} {'Recall':>8} {'Accuracy':>9}"
    fmt = lambda v: "     n/a" if v is None else f"{v:8.4f}"
    row = (
        f"{name:<12} {fmt(report.pr_auc)} {fmt(report.roc_auc)} {report.f1:8.4f} "
        f"{report.precision:10.4f} {report.recall:8.4f} {report.accuracy:9.4f}"
    )
    return header + "\n" + row


def _expit(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LogisticConfig:
    max_iter: int = 5000
    tol: float = 1e-6  # gradient-norm convergence threshold


@dataclass
class LogisticModel:
    """Sigmoid linear model over standardized features."""

    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def decision(self, features) -> np.ndarray:
        standardized = (np.asarray(features, dtype=np.float64) - self.feature_mean) / self.feature_scale
        return standardized @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        return _expit(self.decision(features))


def logistic_baseline(features, labels, cfg: LogisticConfig | None = None) -> LogisticModel:
    """Full-batch gradient descent on mean BCE from zero-initialized weights.

    Features are standardized internally (constant columns left untouched);
    the step size comes from the Lipschitz bound sigma_max(X')^2 / (4n) of the
    logistic loss, so descent is monotone.  Stops when the gradient norm
    drops below cfg.tol or max_iter is reached.
    """
    cfg = cfg or LogisticConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with matching labels")
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClassDataset("logistic_baseline needs both classes present")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Xs = (X - mean) / scale
    n = Xs.shape[0]

    augmented = np.hstack([Xs, np.ones((n, 1))])
    lipschitz = np.linalg.norm(augmented, 2) ** 2 / (4.0 * n)
    lr = 1.0 / max(lipschitz, 1e-12)

    w = np.zeros(Xs.shape[1])
    b = 0.0
    for _ in range(cfg.max_iter):
        residual = _expit(Xs @ w + b) - y
        grad_w = Xs.T @ residual / n
        grad_b = float(residual.mean())
        if np.sqrt(float(grad_w @ grad_w) + grad_b**2) < cfg.tol:
            break
        w -= lr * grad_w
        b -= lr * grad_b
    return LogisticModel(weights=w, bias=b, feature_mean=mean, feature_scale=scale)


@dataclass
class ImportanceEntry:
    name: str
    mean_drop: float
    std_drop: float
    drops: list


@dataclass
class ImportanceReport:
    baseline_pr_auc: float
    repeats: int
    entries: list

    def to_dict(self) -> dict:
        return {
            "baseline_pr_auc": self.baseline_pr_auc,
            "repeats": self.repeats,
            "entries": [asdict(e) for e in self.entries],
        }


def permutation_importance(
    predict,
    features,
    labels,
    groups,
    repeats: int = 3,
    seed: int = 0,
    per_scalar: bool = False,
) -> ImportanceReport:
    """PR-AUC drop when one feature group's rows are shuffled jointly.

    `predict` maps a feature matrix to scores; `groups` are objects carrying
    name/offset/width (an embedding block shuffles as one unit).  Each repeat
    draws from an independent generator seeded seed + repeat index, and the
    report carries mean and population std of the drops.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    baseline = pr_auc(predict(X), y)

    targets = []
    for group in groups:
        if per_scalar and group.width > 1:
            targets.extend(
                (f"{group.name}[{i}]", group.offset + i, 1) for i in range(group.width)
            )
        else:
            targets.append((group.name, group.offset, group.width))

    drops = {name: [] for name, _, _ in targets}
    for repeat in range(repeats):
        rng = np.random.default_rng(seed + repeat)
        for name, offset, width in targets:
            permutation = rng.permutation(X.shape[0])
            shuffled = X.copy()
            shuffled[:, offset : offset + width] = X[permutation, offset : offset + width]
            drops[name].append(baseline - pr_auc(predict(shuffled), y))

    entries = [
        ImportanceEntry(
            name=name,
            mean_drop=float(np.mean(values)),
            std_drop=float(np.std(values)),
            drops=[float(v) for v in values],
        )
        for name, values in drops.items()
    ]
    return ImportanceReport(baseline_pr_auc=baseline, repeats=repeats, entries=entries)
