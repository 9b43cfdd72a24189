"""Deterministic synthetic fixture generator for end-to-end tests.

Prompt embeddings live in two separated cones; normal images sit near the
normal cone and abnormal images carry a contiguous defect region pulled
toward the abnormal cone, with matching value summaries and ground-truth
masks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import bundle as bundlefmt
from .pipeline import PromptPool, write_prompt_pool


@dataclass
class SynthConfig:
    seed: int = 0
    d: int = 64
    grid: tuple[int, int] = (15, 15)
    patch: int = 16
    scales: tuple[int, ...] = (2, 3)
    separation: float = 1.0          # 0 = cones coincide, 1 = orthogonal
    n_normal: int = 100
    n_abnormal: int = 100
    n_prompts: int = 24              # per polarity
    poison_fraction: float = 0.0     # abnormal prompts placed inside the normal cone
    poison_tilt: float = 0.85        # cosine of poison prompts toward the normal axis
    poison_coherence: float = 0.0    # poison component along a shared nuisance axis
    image_nuisance: float = 0.0      # std of per-image coefficient on that axis
    nuisance_bias: float = 0.0       # mean nuisance coefficient of normal images
    normal_wide_fraction: float = 0.0  # normal prompts drawn from a wider cone
    normal_wide_spread: float = 3.0
    prompt_noise: float = 0.05
    image_noise: float = 0.03
    cell_noise: float = 0.05
    cls_mix: float = 0.5             # abnormal-axis weight in abnormal image cls
    cls_mix_jitter: float = 0.0      # per-image spread of the abnormal mix weight
    normal_drift: float = 0.0        # max abnormal-axis weight leaked into normals
    defect_mix: float = 0.8          # abnormal-axis weight inside defect cells
    class_name: str = "widget"


@dataclass
class SynthFixture:
    prompt_bundle: str
    image_bundles: list[str]
    labels: list[int]                # 1 = abnormal
    config: SynthConfig = field(repr=False, default=None)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _near(rng: np.random.Generator, axis: np.ndarray, noise: float,
          n: int | tuple = 1) -> np.ndarray:
    shape = (n, axis.shape[0]) if isinstance(n, int) else (*n, axis.shape[0])
    return _unit(axis + noise * rng.standard_normal(shape))


def generate_fixture(out_dir, config: SynthConfig) -> SynthFixture:
    if config.d < 3:
        raise ValueError("d must be >= 3")
    rng = np.random.default_rng(config.seed)
    os.makedirs(out_dir, exist_ok=True)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)

    # orthonormal normal axis and off-axis; abnormal axis interpolates by separation
    basis = np.linalg.qr(rng.standard_normal((config.d, 3)))[0].T
    n_axis = basis[0]
    b_axis = basis[2]                # nuisance direction shared by prompts/images
    mix = (1.0 - config.separation) * n_axis + config.separation * basis[1]
    a_axis = _unit(mix) if np.linalg.norm(mix) > 1e-12 else n_axis

    n_poison = int(round(config.poison_fraction * config.n_prompts))
    n_wide = int(round(config.normal_wide_fraction * config.n_prompts))
    pos_bulk = _near(rng, n_axis, config.prompt_noise, config.n_prompts - n_wide)
    pos_wide = _near(rng, n_axis, config.normal_wide_spread * config.prompt_noise,
                     n_wide)
    pos_emb = np.concatenate([pos_bulk, pos_wide], axis=0)
    neg_clean = _near(rng, a_axis, config.prompt_noise, config.n_prompts - n_poison)
    # Poisoned abnormal prompts sit at a fixed angle off the normal axis: their
    # image similarities land inside the span of the normal pool (below the
    # tight bulk, above the wide stragglers) without grazing its extremes.
    tilt = float(np.clip(config.poison_tilt, -1.0, 1.0))
    coh = float(np.clip(config.poison_coherence, -1.0, 1.0))
    ortho = rng.standard_normal((n_poison, config.d))
    for ax in (n_axis, b_axis):
        ortho -= ortho @ ax[:, None] * ax
    ortho /= np.maximum(np.linalg.norm(ortho, axis=1, keepdims=True), 1e-12)
    rest = coh * b_axis + np.sqrt(1.0 - coh * coh) * ortho
    neg_poison = tilt * n_axis + np.sqrt(1.0 - tilt * tilt) * rest
    neg_emb = np.concatenate([neg_clean, neg_poison], axis=0)
    pool = PromptPool(
        pos_emb.astype(np.float32), neg_emb.astype(np.float32),
        [f"a synthetic image of a normal {config.class_name} ({i})"
         for i in range(config.n_prompts)],
        [f"a synthetic image of an abnormal {config.class_name} ({i})"
         for i in range(config.n_prompts)],
    )
    prompt_path = os.path.join(out_dir, "prompts.alfb")
    write_prompt_pool(prompt_path, pool)

    gh, gw = config.grid
    image_h, image_w = gh * config.patch, gw * config.patch
    paths, labels = [], []
    for idx in range(config.n_normal + config.n_abnormal):
        abnormal = idx >= config.n_normal
        if abnormal:
            w = config.cls_mix + config.cls_mix_jitter * rng.uniform(-1.0, 1.0)
        else:
            w = config.normal_drift * rng.uniform()
        w = float(np.clip(w, 0.0, 1.0))
        g = config.image_nuisance * rng.standard_normal()
        if not abnormal:
            g += config.nuisance_bias
        base = _unit(_unit((1 - w) * n_axis + w * a_axis) + g * b_axis)
        cls = _near(rng, base, config.image_noise, 1)[0]

        defect = np.zeros((gh, gw), dtype=bool)
        if abnormal:
            dh = int(rng.integers(3, min(7, gh + 1)))
            dw = int(rng.integers(3, min(7, gw + 1)))
            oy = int(rng.integers(0, gh - dh + 1))
            ox = int(rng.integers(0, gw - dw + 1))
            defect[oy:oy + dh, ox:ox + dw] = True

        vs_global = _near(rng, n_axis, config.image_noise, 1)[0]
        defect_axis = _unit((1 - config.defect_mix) * vs_global
                            + config.defect_mix * a_axis)
        defect_cell_axis = _unit((1 - config.defect_mix) * n_axis
                                 + config.defect_mix * a_axis)

        tensors = {"cls_embedding": cls.astype(np.float32),
                   "value_summary_global": vs_global.astype(np.float32)}
        cell_axis = _unit(n_axis + g * b_axis)
        for s in config.scales:
            cells = _near(rng, cell_axis, config.cell_noise, (gh, gw))
            cells[defect] = _near(rng, _unit(defect_cell_axis + g * b_axis),
                                  config.cell_noise, int(defect.sum()))
            vs_local = np.broadcast_to(vs_global, (gh, gw, config.d)).copy()
            vs_local[defect] = defect_axis
            tensors[f"local_cls/s{s}"] = cells.astype(np.float32)
            tensors[f"value_summary_local/s{s}"] = vs_local.astype(np.float32)

        mask = np.kron(defect.astype(np.uint8),
                       np.ones((config.patch, config.patch), dtype=np.uint8))
        tensors["gt_mask"] = mask

        name = f"img_{idx:04d}"
        path = os.path.join(img_dir, name + ".alfb")
        bundlefmt.write_bundle(path, {
            "kind": "image", "embed_dim": config.d,
            "grid_h": gh, "grid_w": gw,
            "scales": ",".join(str(s) for s in config.scales),
            "image_h": image_h, "image_w": image_w,
            "source_path": name, "class": config.class_name,
            "label": int(abnormal),
        }, tensors)
        paths.append(path)
        labels.append(int(abnormal))

    return SynthFixture(prompt_path, paths, labels, config)
