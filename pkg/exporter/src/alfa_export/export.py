"""Bundle export: image, text, and dataset-tree entry points."""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import container
from .encoders import EncoderError, make_encoder
from .preprocess import MEAN, STD, PreprocessError, load_rgb, prepare_tiles


class ExportError(Exception):
    pass


@dataclass
class ExportConfig:
    model: str = "ViT-B-16-plus-240"
    scales: tuple[int, ...] = (2, 3)
    layer: int = -1
    tiling: bool = True
    out_dir: str = "."

    def __post_init__(self):
        if not self.scales or any(s < 1 for s in self.scales):
            raise ExportError(f"scales must all be >= 1, got {self.scales}")

    def dump(self) -> dict:
        return {"model": self.model, "scales": list(self.scales),
                "layer": self.layer, "tiling": self.tiling,
                "mean": list(MEAN), "std": list(STD)}


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)


def _windows(grid: np.ndarray, scale: int) -> np.ndarray:
    """Unit-normalized mean over an edge-clamped scale x scale window at
    every grid position."""
    gh, gw, _ = grid.shape
    s = min(scale, gh, gw)
    out = np.empty_like(grid)
    for i in range(gh):
        r = min(max(i - (s - 1) // 2, 0), gh - s)
        for j in range(gw):
            c = min(max(j - (s - 1) // 2, 0), gw - s)
            out[i, j] = grid[r:r + s, c:c + s].mean(axis=(0, 1))
    return _unit(out)


def _load_mask(path, h: int, w: int) -> np.ndarray:
    with Image.open(path) as im:
        mask = np.asarray(im.convert("L").resize((w, h), Image.NEAREST))
    return (mask > 0).astype(np.uint8)


def export_image(image_path, config: ExportConfig, encoder=None,
                 mask_path=None, class_name: str = "", label: int | None = None,
                 zero_mask: bool = False) -> list[str]:
    """Export one image (one bundle per tile); returns written paths."""
    encoder = encoder or make_encoder(config.model, config.layer)
    arr = load_rgb(image_path)
    orig_h, orig_w = arr.shape[:2]
    tiles = prepare_tiles(arr, encoder.resolution, config.tiling)
    g = encoder.resolution // encoder.patch_size

    mask_full = None
    if mask_path is not None:
        if len(tiles) == 1:
            mask_full = _load_mask(mask_path, encoder.resolution, encoder.resolution)
        else:
            # masks live in the resized (short side = resolution) frame
            rh = tiles[-1][0] + encoder.resolution
            rw = tiles[-1][1] + encoder.resolution
            mask_full = _load_mask(mask_path, rh, rw)

    out_paths = []
    stem = Path(image_path).stem
    os.makedirs(config.out_dir, exist_ok=True)
    for idx, (row, col, tile) in enumerate(tiles):
        out = encoder.encode_image(tile)
        tensors = {"cls_embedding": out.cls.astype(np.float32),
                   "value_summary_global": _unit(out.values.mean(axis=(0, 1))).astype(np.float32)}
        for s in config.scales:
            tensors[f"local_cls/s{s}"] = _windows(out.patches, s).astype(np.float32)
            tensors[f"value_summary_local/s{s}"] = _windows(out.values, s).astype(np.float32)
        if mask_full is not None:
            tensors["gt_mask"] = mask_full[row:row + encoder.resolution,
                                           col:col + encoder.resolution]
        elif zero_mask:
            tensors["gt_mask"] = np.zeros(
                (encoder.resolution, encoder.resolution), np.uint8)
        meta = {"kind": "image", "embed_dim": encoder.embed_dim,
                "grid_h": g, "grid_w": g,
                "scales": ",".join(str(s) for s in config.scales),
                "image_h": encoder.resolution, "image_w": encoder.resolution,
                "source_path": str(image_path), "class": class_name,
                "orig_h": orig_h, "orig_w": orig_w,
                "tile_row": row, "tile_col": col,
                "tile_index": idx, "tile_count": len(tiles),
                "model": config.model, "layer": config.layer}
        if label is not None:
            meta["label"] = label
        suffix = f".tile{idx}" if len(tiles) > 1 else ""
        path = os.path.join(config.out_dir, f"{stem}{suffix}{container.EXTENSION}")
        container.write_bundle(path, meta, tensors)
        out_paths.append(path)
    return out_paths


def export_text(prompt_json_path, config: ExportConfig, encoder=None) -> str:
    """Embed every prompt of a prompt-set JSON into a text bundle."""
    encoder = encoder or make_encoder(config.model, config.layer)
    with open(prompt_json_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    normal = [p["text"] for p in doc["prompts"] if p["polarity"] == "normal"]
    abnormal = [p["text"] for p in doc["prompts"] if p["polarity"] == "abnormal"]
    if not normal or not abnormal:
        raise ExportError("prompt set needs at least one prompt per polarity")

    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir,
                        Path(prompt_json_path).stem + container.EXTENSION)
    container.write_bundle(path, {
        "kind": "text", "embed_dim": encoder.embed_dim,
        "class": doc.get("class", ""), "model": config.model,
        "texts_normal": "\x1f".join(normal),
        "texts_abnormal": "\x1f".join(abnormal),
    }, {
        "emb_normal": encoder.encode_text(normal).astype(np.float32),
        "emb_abnormal": encoder.encode_text(abnormal).astype(np.float32),
    })
    return path


_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm")


def _find_mask(class_dir: Path, defect: str, stem: str) -> Path | None:
    gt = class_dir / "ground_truth" / defect
    if gt.is_dir():
        for cand in sorted(gt.iterdir()):
            if cand.stem in (stem, stem + "_mask") and cand.suffix.lower() in _IMAGE_EXTS:
                return cand
    return None


def export_dataset(root, classes: list[str], config: ExportConfig, encoder=None) -> str:
    """Walk test splits of ``root/<class>``, mirror the tree with bundles,
    and write a manifest JSON; returns the manifest path."""
    encoder = encoder or make_encoder(config.model, config.layer)
    root = Path(root)
    manifest = []
    for cls in classes:
        test_dir = root / cls / "test"
        if not test_dir.is_dir():
            raise ExportError(f"{test_dir}: missing test split")
        for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
            defect = defect_dir.name
            for img in sorted(defect_dir.iterdir()):
                if img.suffix.lower() not in _IMAGE_EXTS:
                    continue
                entry = {"image": str(img), "class": cls, "defect": defect,
                         "label": int(defect != "good")}
                mask = None
                if defect != "good":
                    mask = _find_mask(root / cls, defect, img.stem)
                    if mask is None:
                        entry["error"] = "missing ground-truth mask"
                        manifest.append(entry)
                        continue
                sub = ExportConfig(model=config.model, scales=config.scales,
                                   layer=config.layer, tiling=config.tiling,
                                   out_dir=os.path.join(config.out_dir, cls, defect))
                entry["bundles"] = export_image(
                    img, sub, encoder, mask_path=mask, class_name=cls,
                    label=entry["label"], zero_mask=mask is None)
                manifest.append(entry)

    os.makedirs(config.out_dir, exist_ok=True)
    manifest_path = os.path.join(config.out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"config": config.dump(), "images": manifest}, fh, indent=1,
                  sort_keys=True)
    return manifest_path
