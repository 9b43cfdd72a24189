import json

import numpy as np
import pytest
from PIL import Image

from alfa_export.encoders import EncoderError, StubEncoder
from alfa_export.export import ExportConfig, ExportError, export_dataset, export_image, export_text
from alfa_export.preprocess import MEAN, STD, prepare_tiles, standardize, tile_layout

from alfa import bundle as engine_bundle
from alfa.pipeline import load_image_view, load_prompt_pool


def _write_png(path, h, w, color=(120, 80, 200), rng=None):
    if rng is None:
        arr = np.full((h, w, 3), color, dtype=np.uint8)
    else:
        arr = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)
    return path


@pytest.fixture()
def cfg(tmp_path):
    return ExportConfig(model="stub", out_dir=str(tmp_path / "out"))


def test_preprocessing_constants_exact():
    assert MEAN == (0.48145466, 0.4578275, 0.40821073)
    assert STD == (0.26862954, 0.26130258, 0.27577711)
    x = np.ones((1, 1, 3), dtype=np.float32)
    got = standardize(x)[0, 0]
    for c in range(3):
        assert got[c] == pytest.approx((1.0 - MEAN[c]) / STD[c], abs=1e-6)


def test_grid_is_fifteen_by_fifteen(tmp_path, cfg):
    img = _write_png(tmp_path / "a.png", 240, 240)
    path, = export_image(img, cfg, StubEncoder())
    b = engine_bundle.read_bundle(path)
    assert b.meta["grid_h"] == "15" and b.meta["grid_w"] == "15"
    assert b["local_cls/s2"].shape == (15, 15, 64)


def test_solid_color_self_similarity(tmp_path, cfg):
    img = _write_png(tmp_path / "solid.png", 100, 100)
    path, = export_image(img, cfg, StubEncoder())
    local = np.asarray(engine_bundle.read_bundle(path)["local_cls/s2"], dtype=np.float64)
    flat = local.reshape(-1, local.shape[-1])
    sims = flat @ flat.T
    assert sims.min() >= 0.99


def test_all_embeddings_unit_norm(tmp_path, cfg):
    rng = np.random.default_rng(0)
    img = _write_png(tmp_path / "r.png", 64, 64, rng=rng)
    path, = export_image(img, cfg, StubEncoder())
    b = engine_bundle.read_bundle(path)
    for name in b.names:
        if name == "gt_mask":
            continue
        arr = np.asarray(b[name], dtype=np.float64)
        norms = np.linalg.norm(arr.reshape(-1, arr.shape[-1]), axis=1)
        assert np.all(np.abs(norms - 1.0) <= 1e-5), name


def test_image_bundle_loads_in_engine(tmp_path, cfg):
    rng = np.random.default_rng(1)
    img = _write_png(tmp_path / "r.png", 80, 80, rng=rng)
    mask = tmp_path / "m.png"
    Image.fromarray((rng.integers(0, 2, (80, 80)) * 255).astype(np.uint8)).save(mask)
    path, = export_image(img, cfg, StubEncoder(), mask_path=mask, class_name="bottle")
    view = load_image_view(path)
    assert view.cls_embedding.shape == (64,)
    assert view.scales == (2, 3)
    assert view.gt_mask is not None and view.gt_mask.shape == (240, 240)


def test_export_determinism(tmp_path):
    rng = np.random.default_rng(2)
    img = _write_png(tmp_path / "r.png", 90, 90, rng=rng)
    blobs = []
    for tag in ("a", "b"):
        cfg = ExportConfig(model="stub", out_dir=str(tmp_path / tag))
        path, = export_image(img, cfg, StubEncoder())
        blobs.append(open(path, "rb").read())
    assert blobs[0] == blobs[1]


def test_text_bundle_shapes_and_texts(tmp_path, cfg):
    doc = {"class": "bottle",
           "prompts": [{"text": "a photo of a bottle", "polarity": "normal", "source": "template"},
                       {"text": "a photo of a bottle", "polarity": "normal", "source": "template"},
                       {"text": "a damaged bottle", "polarity": "abnormal", "source": "template"}]}
    p = tmp_path / "prompts.json"
    p.write_text(json.dumps(doc))
    out = export_text(p, cfg, StubEncoder())
    pool = load_prompt_pool(out)
    assert pool.normal_embeddings.shape == (2, 64)
    assert pool.abnormal_embeddings.shape == (1, 64)
    # identical texts produce identical rows
    assert np.array_equal(pool.normal_embeddings[0], pool.normal_embeddings[1])
    assert pool.normal_texts == ["a photo of a bottle"] * 2


def test_text_bundle_empty_polarity_rejected(tmp_path, cfg):
    p = tmp_path / "prompts.json"
    p.write_text(json.dumps({"class": "c", "prompts": [
        {"text": "x", "polarity": "normal", "source": "template"}]}))
    with pytest.raises(ExportError):
        export_text(p, cfg, StubEncoder())


def test_tiling_non_square(tmp_path, cfg):
    rng = np.random.default_rng(3)
    img = _write_png(tmp_path / "wide.png", 100, 300, rng=rng)
    paths = export_image(img, cfg, StubEncoder())
    assert len(paths) >= 2
    offsets = set()
    for p in paths:
        b = engine_bundle.read_bundle(p)
        offsets.add((b.meta["tile_row"], b.meta["tile_col"]))
        assert b.meta["tile_count"] == str(len(paths))
    assert len(offsets) == len(paths)


def test_tile_layout_minimal_overlap():
    assert tile_layout(240, 240, 240) == [(0, 0)]
    # long side 480 at size 240 -> two abutting tiles
    assert tile_layout(240, 480, 240) == [(0, 0), (0, 240)]
    # long side 500 -> three evenly spaced starts 0, 130, 260
    assert tile_layout(500, 240, 240) == [(0, 0), (130, 0), (260, 0)]


def test_tiling_off_single_square_resize(tmp_path):
    cfg = ExportConfig(model="stub", tiling=False, out_dir=str(tmp_path / "o"))
    img = _write_png(tmp_path / "wide.png", 100, 300)
    paths = export_image(img, cfg, StubEncoder())
    assert len(paths) == 1


def test_prepare_tiles_square_shape():
    arr = np.random.default_rng(4).uniform(0, 1, (100, 300, 3)).astype(np.float32)
    tiles = prepare_tiles(arr, 240, True)
    assert all(t.shape == (240, 240, 3) for _, _, t in tiles)


def test_dataset_walk_and_manifest(tmp_path):
    rng = np.random.default_rng(5)
    root = tmp_path / "data"
    for i in range(2):
        _write_png_dirs(root / "widget" / "test" / "good" / f"{i:03d}.png", rng)
    for i in range(2):
        img = root / "widget" / "test" / "crack" / f"{i:03d}.png"
        _write_png_dirs(img, rng)
        gt = root / "widget" / "ground_truth" / "crack" / f"{i:03d}_mask.png"
        gt.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray((rng.integers(0, 2, (64, 64)) * 255).astype(np.uint8)).save(gt)
    cfg = ExportConfig(model="stub", out_dir=str(tmp_path / "out"))
    manifest_path = export_dataset(root, ["widget"], cfg, StubEncoder())
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    assert len(manifest["images"]) == 4
    assert manifest["config"]["mean"] == list(MEAN)
    for entry in manifest["images"]:
        assert "error" not in entry
        view = load_image_view(entry["bundles"][0])
        assert view.gt_mask is not None
        if entry["label"] == 0:
            assert not view.gt_mask.any()


def test_dataset_missing_mask_recorded(tmp_path):
    rng = np.random.default_rng(6)
    root = tmp_path / "data"
    _write_png_dirs(root / "widget" / "test" / "crack" / "000.png", rng)
    cfg = ExportConfig(model="stub", out_dir=str(tmp_path / "out"))
    with open(export_dataset(root, ["widget"], cfg, StubEncoder())) as fh:
        manifest = json.load(fh)
    assert len(manifest["images"]) == 1
    assert manifest["images"][0]["error"] == "missing ground-truth mask"
    assert "bundles" not in manifest["images"][0]


def test_bad_scales_rejected():
    with pytest.raises(ExportError):
        ExportConfig(scales=(0, 2))


def test_stub_resolution_patch_mismatch():
    with pytest.raises(EncoderError):
        StubEncoder(resolution=241)


def _write_png_dirs(path, rng):
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_png(path, 64, 64, rng=rng)
