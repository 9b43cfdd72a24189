"""Global anomaly score, per-scale local maps, harmonic fusion, and the
combined image score."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

HARMONIC_EPS = 1e-8


class ScoringError(Exception):
    pass


@dataclass
class ScoringConfig:
    tau: float = 1.0                      # temperature on cosine logits
    scales: tuple[int, ...] = (2, 3)
    sigma: float = 4.0                    # Gaussian smoothing, patch units
    upsample: str = "bilinear"
    memory_weight: float = 0.5            # weight of the memory score in refinement

    def validate(self) -> None:
        if self.tau <= 0:
            raise ScoringError("tau must be positive")
        if not self.scales or any(s < 1 for s in self.scales):
            raise ScoringError("scales must be non-empty, each >= 1")
        if self.sigma < 0:
            raise ScoringError("sigma must be non-negative")
        if self.upsample != "bilinear":
            raise ScoringError(f"unsupported upsample mode {self.upsample!r}")
        if not 0.0 <= self.memory_weight <= 1.0:
            raise ScoringError("memory_weight must be in [0, 1]")


def softmax_anomaly(sim_pos, sim_neg, tau: float = 1.0):
    """exp(s-/tau) / (exp(s+/tau) + exp(s-/tau)), stable, elementwise."""
    a = np.asarray(sim_neg, dtype=np.float64) / tau
    b = np.asarray(sim_pos, dtype=np.float64) / tau
    m = np.maximum(a, b)
    ea, eb = np.exp(a - m), np.exp(b - m)
    return ea / (ea + eb)


def global_score(f_x: np.ndarray, proto_pos: np.ndarray, proto_neg: np.ndarray,
                 tau: float = 1.0) -> float:
    """Class-token anomaly score: two-way softmax toward the abnormal prototype."""
    f_x = np.asarray(f_x, dtype=np.float64)
    return float(softmax_anomaly(f_x @ proto_pos, f_x @ proto_neg, tau))


def local_map(local_embeddings: np.ndarray, local_proto_pos: np.ndarray,
              local_proto_neg: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Per-position anomaly scores.

    local_embeddings is [H, W, d]; prototypes either [d] (shared) or
    [H, W, d] (per-position, the aligner's output).
    """
    emb = np.asarray(local_embeddings, dtype=np.float64)
    p_pos = np.asarray(local_proto_pos, dtype=np.float64)
    p_neg = np.asarray(local_proto_neg, dtype=np.float64)
    sim_pos = np.sum(emb * np.broadcast_to(p_pos, emb.shape), axis=-1)
    sim_neg = np.sum(emb * np.broadcast_to(p_neg, emb.shape), axis=-1)
    return softmax_anomaly(sim_pos, sim_neg, tau)


def harmonic_fuse(grids: list[np.ndarray], eps: float = HARMONIC_EPS) -> np.ndarray:
    """Per-cell harmonic mean across scales, epsilon-guarded at zero."""
    if not grids:
        raise ScoringError("no grids to fuse")
    shape = grids[0].shape
    for g in grids:
        if g.shape != shape:
            raise ScoringError(f"shape mismatch in fusion: {g.shape} vs {shape}")
    stack = np.stack([np.asarray(g, dtype=np.float64) for g in grids])
    return len(grids) / np.sum(1.0 / (stack + eps), axis=0) - eps


def memory_refine(language_grid: np.ndarray, memory_grid: np.ndarray,
                  memory_weight: float = 0.5) -> np.ndarray:
    """Blend the language map with the nearest-neighbor memory map (default mean)."""
    lang = np.asarray(language_grid, dtype=np.float64)
    mem = np.asarray(memory_grid, dtype=np.float64)
    if lang.shape != mem.shape:
        raise ScoringError(f"shape mismatch: {lang.shape} vs {mem.shape}")
    return (1.0 - memory_weight) * lang + memory_weight * mem


def upsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear upsampling to (out_h, out_w)."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    ys = np.linspace(0.0, h - 1.0, out_h) if h > 1 else np.zeros(out_h)
    xs = np.linspace(0.0, w - 1.0, out_w) if w > 1 else np.zeros(out_w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest")


@dataclass
class AnomalyMap:
    per_scale: dict[int, np.ndarray]      # scale -> [H_p, W_p]
    fused: np.ndarray                     # [H_p, W_p]
    smoothed: np.ndarray                  # fused grid after Gaussian smoothing
    full: np.ndarray                      # upsampled [H, W]


@dataclass
class AnomalyResult:
    s_global: float
    max_local: float
    score: float
    map: AnomalyMap
    kept_normal: int = 0
    kept_abnormal: int = 0
    meta: dict = field(default_factory=dict)


def finalize(fused_grid: np.ndarray, s_global: float, image_h: int, image_w: int,
             config: ScoringConfig, per_scale: dict[int, np.ndarray] | None = None
             ) -> AnomalyResult:
    """Smooth, upsample, and combine: S = (S_G + max smoothed cell) / 2.

    The max is taken on the smoothed patch grid, pre-upsampling; bilinear
    interpolation cannot exceed grid extrema.
    """
    config.validate()
    fused = np.asarray(fused_grid, dtype=np.float64)
    smoothed = ndimage.gaussian_filter(fused, config.sigma) if config.sigma > 0 else fused
    full = np.clip(upsample_bilinear(smoothed, image_h, image_w), 0.0, 1.0)
    max_local = float(smoothed.max())
    score = (s_global + max_local) / 2.0
    return AnomalyResult(
        s_global=float(s_global), max_local=max_local, score=score,
        map=AnomalyMap(per_scale=dict(per_scale or {}), fused=fused,
                       smoothed=smoothed, full=full),
    )


def rank_descriptors(f_x: np.ndarray, descriptors: list[tuple[str, np.ndarray]],
                     k: int) -> list[tuple[str, float]]:
    """Top-k descriptors by cosine similarity to the image; ties keep input order."""
    f_x = np.asarray(f_x, dtype=np.float64)
    sims = [(text, float(np.asarray(emb, dtype=np.float64) @ f_x))
            for text, emb in descriptors]
    order = sorted(range(len(sims)), key=lambda i: (-sims[i][1], i))
    return [sims[i] for i in order[:max(k, 0)]]
