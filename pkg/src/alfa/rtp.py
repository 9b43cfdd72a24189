"""Per-image prompt filtering: contextual scores over polarity similarity
intervals, keeping only prompts without cross-semantic overlap."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RtpError(Exception):
    pass


@dataclass
class RtpConfig:
    k: float = 1.0          # logistic slope
    epsilon: float = 1e-6   # keep tolerance: kept iff score > epsilon

    def validate(self) -> None:
        if self.k <= 0:
            raise RtpError("k must be positive")
        if self.epsilon < 0:
            raise RtpError("epsilon must be non-negative")


def interval_distance(point: float, lo: float, hi: float) -> float:
    """Distance from a point to the interval [lo, hi]; 0 inside."""
    if lo > hi:
        raise RtpError(f"invalid interval [{lo}, {hi}]")
    return max(0.0, max(lo - point, point - hi))


def contextual_score(d_x: float, normal_interval: tuple[float, float],
                     abnormal_interval: tuple[float, float],
                     config: RtpConfig | None = None) -> float:
    """Rescaled logistic of the gap between distances to the two intervals.

    Returns 2*sigmoid(k*delta) - 1 in [0, 1): zero exactly when the
    similarity straddles both intervals, approaching 1 as the gap grows.
    """
    config = config or RtpConfig()
    config.validate()
    d_pos = interval_distance(d_x, *normal_interval)
    d_neg = interval_distance(d_x, *abnormal_interval)
    delta = abs(d_pos - d_neg)
    return 2.0 / (1.0 + np.exp(-config.k * delta)) - 1.0


@dataclass
class ScoredPrompt:
    index: int              # index within its polarity block
    polarity: str
    similarity: float
    score: float
    kept: bool
    fallback: bool = False  # kept only to avoid an empty polarity


@dataclass
class AdaptResult:
    kept_normal: np.ndarray      # bool [n+]
    kept_abnormal: np.ndarray    # bool [n-]
    sims_normal: np.ndarray
    sims_abnormal: np.ndarray
    scores_normal: np.ndarray
    scores_abnormal: np.ndarray
    normal_interval: tuple[float, float]
    abnormal_interval: tuple[float, float]
    diagnostics: list[ScoredPrompt] = field(default_factory=list)


def _interval(sims: np.ndarray) -> tuple[float, float]:
    return float(sims.min()), float(sims.max())


def adapt_prompts(image_embedding: np.ndarray, normal_embeddings: np.ndarray,
                  abnormal_embeddings: np.ndarray,
                  config: RtpConfig | None = None) -> AdaptResult:
    """Filter the vanilla pool for one image.

    Similarity intervals are built once from the full pool (single pass).
    A polarity that would end up empty retains its single highest-scoring
    prompt, since downstream softmax scoring needs both polarities.
    """
    config = config or RtpConfig()
    config.validate()
    x = np.asarray(image_embedding, dtype=np.float64)
    pos = np.asarray(normal_embeddings, dtype=np.float64)
    neg = np.asarray(abnormal_embeddings, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise RtpError("vanilla pool needs at least one prompt per polarity")
    if pos.shape[1] != x.shape[0] or neg.shape[1] != x.shape[0]:
        raise RtpError(
            f"dimension mismatch: image d={x.shape[0]}, "
            f"normal d={pos.shape[1]}, abnormal d={neg.shape[1]}")

    sims_pos = pos @ x
    sims_neg = neg @ x
    iv_pos = _interval(sims_pos)
    iv_neg = _interval(sims_neg)

    def scores_for(sims: np.ndarray) -> np.ndarray:
        return np.array([contextual_score(s, iv_pos, iv_neg, config) for s in sims])

    scores_pos = scores_for(sims_pos)
    scores_neg = scores_for(sims_neg)
    kept_pos = scores_pos > config.epsilon
    kept_neg = scores_neg > config.epsilon

    fb_pos = fb_neg = -1
    if not kept_pos.any():
        fb_pos = int(np.argmax(scores_pos))
        kept_pos[fb_pos] = True
    if not kept_neg.any():
        fb_neg = int(np.argmax(scores_neg))
        kept_neg[fb_neg] = True

    diagnostics = [
        ScoredPrompt(i, "normal", float(sims_pos[i]), float(scores_pos[i]),
                     bool(kept_pos[i]), fallback=(i == fb_pos))
        for i in range(len(sims_pos))
    ] + [
        ScoredPrompt(j, "abnormal", float(sims_neg[j]), float(scores_neg[j]),
                     bool(kept_neg[j]), fallback=(j == fb_neg))
        for j in range(len(sims_neg))
    ]
    return AdaptResult(kept_pos, kept_neg, sims_pos, sims_neg,
                       scores_pos, scores_neg, iv_pos, iv_neg, diagnostics)
