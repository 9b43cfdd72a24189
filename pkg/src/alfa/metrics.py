"""Image-level and pixel-level anomaly detection metrics: AUROC, AUPR,
F1-max, pAUROC, PRO, pF1-max."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class MetricError(Exception):
    pass


def _check_scores(scores, labels, need_negative=True):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(int)
    if s.shape != y.shape:
        raise MetricError(f"scores/labels length mismatch: {s.shape} vs {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0/1")
    if y.sum() == 0:
        raise MetricError("no positive labels")
    if need_negative and y.sum() == len(y):
        raise MetricError("no negative labels")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney statistic; ties count 1/2."""
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _threshold_sweep(s: np.ndarray, y: np.ndarray):
    """Cumulative TP/FP at each descending unique score value."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    # last index of each unique-value run
    last = np.nonzero(np.diff(s_sorted, append=np.nan))[0]
    return tp[last], fp[last]


def aupr(scores, labels) -> float:
    """Average precision: sum of (delta recall) x precision, step interpolation."""
    s, y = _check_scores(scores, labels, need_negative=False)
    tp, fp = _threshold_sweep(s, y)
    n_pos = int(y.sum())
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev) * precision))


def f1_max(scores, labels) -> float:
    """Maximum F1 over thresholds at the unique score values (positive = anomalous)."""
    s, y = _check_scores(scores, labels, need_negative=False)
    tp, fp = _threshold_sweep(s, y)
    n_pos = int(y.sum())
    fn = n_pos - tp
    f1 = 2 * tp / (2 * tp + fp + fn)
    return float(f1.max())


@dataclass
class PixelEval:
    prediction: np.ndarray   # [H, W] in [0, 1]
    mask: np.ndarray         # [H, W] in {0, 1}

    def __post_init__(self):
        self.prediction = np.asarray(self.prediction, dtype=np.float64)
        self.mask = np.asarray(self.mask).astype(int)
        if self.prediction.shape != self.mask.shape:
            raise MetricError(
                f"prediction/mask shape mismatch: "
                f"{self.prediction.shape} vs {self.mask.shape}")


def pro(evals: list[PixelEval], fpr_limit: float = 0.3) -> float:
    """Per-region overlap integrated over FPR in [0, fpr_limit], normalized.

    Ground-truth regions are 8-connected components; the descending
    threshold sweep uses every unique predicted value across the set.
    Computed via a per-pixel weight trick: at any threshold, the mean
    component overlap equals the cumulative sum of weights 1/(K * |region|)
    over predicted pixels.
    """
    if not 0 < fpr_limit <= 1:
        raise MetricError("fpr_limit must be in (0, 1]")
    scores, weights, is_normal = [], [], []
    n_components = 0
    comp_sizes = []
    comp_labels_per_eval = []
    for ev in evals:
        labeled, n = ndimage.label(ev.mask, structure=EIGHT_CONNECTED)
        sizes = ndimage.sum_labels(np.ones_like(labeled), labeled,
                                   index=np.arange(1, n + 1)) if n else np.array([])
        comp_labels_per_eval.append(labeled)
        comp_sizes.append(sizes)
        n_components += n
        scores.append(ev.prediction.ravel())
        is_normal.append((ev.mask == 0).ravel())
    if n_components == 0:
        raise MetricError("no anomalous regions in any mask")

    for labeled, sizes in zip(comp_labels_per_eval, comp_sizes):
        w = np.zeros(labeled.size)
        flat = labeled.ravel()
        inside = flat > 0
        w[inside] = 1.0 / (n_components * sizes[flat[inside] - 1])
        weights.append(w)

    s = np.concatenate(scores)
    w = np.concatenate(weights)
    normal = np.concatenate(is_normal)
    n_normal = int(normal.sum())
    if n_normal == 0:
        raise MetricError("no normal pixels; FPR undefined")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    overlap_cum = np.cumsum(w[order])
    fpr_cum = np.cumsum(normal[order]) / n_normal
    last = np.nonzero(np.diff(s_sorted, append=np.nan))[0]
    fpr = fpr_cum[last]
    overlap = overlap_cum[last]

    # curve from FPR 0 upward; prepend the empty-prediction point if needed
    if fpr[0] > 0:
        fpr = np.concatenate(([0.0], fpr))
        overlap = np.concatenate(([0.0], overlap))

    # clip the curve at fpr_limit with linear interpolation
    if fpr[-1] < fpr_limit:
        limit_overlap = overlap[-1]
    else:
        limit_overlap = float(np.interp(fpr_limit, fpr, overlap))
    keep = fpr < fpr_limit
    fpr_c = np.concatenate((fpr[keep], [fpr_limit]))
    overlap_c = np.concatenate((overlap[keep], [limit_overlap]))
    return float(np.trapezoid(overlap_c, fpr_c) / fpr_limit)


def pixel_metrics(evals: list[PixelEval], fpr_limit: float = 0.3
                  ) -> tuple[float, float, float]:
    """(pAUROC, PRO, pF1-max) over the flattened pixel set."""
    if not evals:
        raise MetricError("no pixel evaluations")
    s = np.concatenate([ev.prediction.ravel() for ev in evals])
    y = np.concatenate([ev.mask.ravel() for ev in evals])
    return auroc(s, y), pro(evals, fpr_limit), f1_max(s, y)
