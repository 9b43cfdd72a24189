"""Per-image pipeline: load bundles, adapt prompts, align, score, fuse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bundle as bundlefmt
from .aligner import make_prototypes, project_prototypes_grid
from .memory import MemoryBank, memory_map
from .rtp import AdaptResult, RtpConfig, adapt_prompts
from .scoring import (
    AnomalyResult,
    ScoringConfig,
    finalize,
    global_score,
    harmonic_fuse,
    local_map,
    memory_refine,
)


class PipelineError(Exception):
    pass


@dataclass
class ImageView:
    """Decoded image bundle: embeddings, value summaries, metadata."""

    cls_embedding: np.ndarray                 # [d]
    local_cls: dict[int, np.ndarray]          # scale -> [H_p, W_p, d]
    value_global: np.ndarray                  # [d]
    value_local: dict[int, np.ndarray]        # scale -> [H_p, W_p, d]
    image_h: int
    image_w: int
    gt_mask: np.ndarray | None = None         # [H, W] u8
    meta: dict | None = None

    @property
    def scales(self) -> tuple[int, ...]:
        return tuple(sorted(self.local_cls))


def load_image_view(path) -> ImageView:
    b = bundlefmt.read_bundle(path)
    if b.meta.get("kind") != "image":
        raise PipelineError(f"{path}: expected an image bundle, got kind={b.meta.get('kind')!r}")
    local_cls, value_local = {}, {}
    for name in b.names:
        if name.startswith("local_cls/s"):
            local_cls[int(name[len("local_cls/s"):])] = np.asarray(b[name], dtype=np.float64)
        elif name.startswith("value_summary_local/s"):
            value_local[int(name[len("value_summary_local/s"):])] = np.asarray(
                b[name], dtype=np.float64)
    return ImageView(
        cls_embedding=np.asarray(b["cls_embedding"], dtype=np.float64),
        local_cls=local_cls,
        value_global=np.asarray(b["value_summary_global"], dtype=np.float64),
        value_local=value_local,
        image_h=int(b.meta["image_h"]),
        image_w=int(b.meta["image_w"]),
        gt_mask=np.asarray(b["gt_mask"]) if "gt_mask" in b else None,
        meta=dict(b.meta),
    )


@dataclass
class PromptPool:
    """Prompt embeddings split by polarity, with the source texts."""

    normal_embeddings: np.ndarray      # [n+, d]
    abnormal_embeddings: np.ndarray    # [n-, d]
    normal_texts: list[str]
    abnormal_texts: list[str]


def load_prompt_pool(path) -> PromptPool:
    b = bundlefmt.read_bundle(path)
    if b.meta.get("kind") != "text":
        raise PipelineError(f"{path}: expected a text bundle, got kind={b.meta.get('kind')!r}")
    pos = np.asarray(b["emb_normal"], dtype=np.float64)
    neg = np.asarray(b["emb_abnormal"], dtype=np.float64)
    pos_texts = b.meta.get("texts_normal", "").split("\x1f")
    neg_texts = b.meta.get("texts_abnormal", "").split("\x1f")
    if len(pos_texts) != pos.shape[0]:
        pos_texts = [f"normal[{i}]" for i in range(pos.shape[0])]
    if len(neg_texts) != neg.shape[0]:
        neg_texts = [f"abnormal[{i}]" for i in range(neg.shape[0])]
    return PromptPool(pos, neg, pos_texts, neg_texts)


def write_prompt_pool(path, pool: PromptPool) -> None:
    meta = {
        "kind": "text",
        "embed_dim": pool.normal_embeddings.shape[1],
        "texts_normal": "\x1f".join(pool.normal_texts),
        "texts_abnormal": "\x1f".join(pool.abnormal_texts),
    }
    bundlefmt.write_bundle(path, meta, {
        "emb_normal": pool.normal_embeddings.astype(np.float32),
        "emb_abnormal": pool.abnormal_embeddings.astype(np.float32),
    })


def score_image(view: ImageView, pool: PromptPool,
                scoring_config: ScoringConfig | None = None,
                rtp_config: RtpConfig | None = None,
                bank: MemoryBank | None = None,
                adapt: bool = True) -> AnomalyResult:
    """Full per-image scoring; pure given immutable inputs."""
    cfg = scoring_config or ScoringConfig()
    cfg.validate()
    for s in cfg.scales:
        if s not in view.local_cls or s not in view.value_local:
            raise PipelineError(f"image bundle missing tensors for scale {s}")

    if adapt:
        res: AdaptResult = adapt_prompts(
            view.cls_embedding, pool.normal_embeddings, pool.abnormal_embeddings,
            rtp_config)
        pos = pool.normal_embeddings[res.kept_normal]
        neg = pool.abnormal_embeddings[res.kept_abnormal]
        kept_pos, kept_neg = int(res.kept_normal.sum()), int(res.kept_abnormal.sum())
        adapt_diag = res
    else:
        pos, neg = pool.normal_embeddings, pool.abnormal_embeddings
        kept_pos, kept_neg = pos.shape[0], neg.shape[0]
        adapt_diag = None

    proto_pos, proto_neg = make_prototypes(pos, neg)
    s_g = global_score(view.cls_embedding, proto_pos, proto_neg, cfg.tau)

    per_scale: dict[int, np.ndarray] = {}
    for s in cfg.scales:
        local_pos, _ = project_prototypes_grid(
            view.value_global, view.value_local[s], proto_pos)
        local_neg, _ = project_prototypes_grid(
            view.value_global, view.value_local[s], proto_neg)
        per_scale[s] = local_map(view.local_cls[s], local_pos, local_neg, cfg.tau)

    fused = harmonic_fuse([per_scale[s] for s in cfg.scales])
    if bank is not None:
        fused = memory_refine(
            fused, memory_map(view.local_cls, bank, cfg.scales), cfg.memory_weight)

    result = finalize(fused, s_g, view.image_h, view.image_w, cfg, per_scale)
    result.kept_normal = kept_pos
    result.kept_abnormal = kept_neg
    if view.meta:
        result.meta = {"source_path": view.meta.get("source_path", ""),
                       "class": view.meta.get("class", "")}
    if adapt_diag is not None:
        result.meta["adapt"] = adapt_diag
    return result


def result_json(result: AnomalyResult, image: str = "") -> dict:
    return {
        "image": image or result.meta.get("source_path", ""),
        "class": result.meta.get("class", ""),
        "score": result.score,
        "S_G": result.s_global,
        "max_local": result.max_local,
        "kept": {"normal": result.kept_normal, "abnormal": result.kept_abnormal},
    }


def write_map_bundle(path, result: AnomalyResult, gt_mask: np.ndarray | None = None,
                     source_path: str = "", class_name: str = "") -> None:
    tensors = {"anomaly_map": result.map.full.astype(np.float32),
               "fused_grid": result.map.fused.astype(np.float32)}
    for s, g in result.map.per_scale.items():
        tensors[f"grid/s{s}"] = g.astype(np.float32)
    if gt_mask is not None:
        tensors["gt_mask"] = np.asarray(gt_mask).astype(np.uint8)
    bundlefmt.write_bundle(path, {"kind": "map", "source_path": source_path,
                                  "class": class_name}, tensors)


def merge_tile_maps(maps: list[tuple[np.ndarray, int, int]],
                    image_h: int, image_w: int) -> np.ndarray:
    """Max-merge per-tile full-resolution maps into the source image frame.

    Each entry is (map [h, w], offset_y, offset_x) in source pixels.
    """
    out = np.zeros((image_h, image_w))
    for m, oy, ox in maps:
        h, w = m.shape
        region = out[oy:oy + h, ox:ox + w]
        np.maximum(region, m, out=region)
    return out
