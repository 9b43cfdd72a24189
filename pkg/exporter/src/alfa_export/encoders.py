"""Encoder backends.

``StubEncoder`` is a deterministic content-hash feature extractor used for
tests and pipeline plumbing without model weights.  ``ClipEncoder`` wraps a
pretrained contrastive image-text transformer and captures the value-pathway
tokens of the chosen block alongside the usual patch tokens.
"""

import hashlib
from dataclasses import dataclass

import numpy as np


class EncoderError(Exception):
    pass


@dataclass
class EncoderOutput:
    cls: np.ndarray           # [d]
    patches: np.ndarray       # [H_p, W_p, d] joint-space patch tokens
    values: np.ndarray        # [H_p, W_p, d] joint-space value-pathway tokens


def _unit(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=axis, keepdims=True), 1e-12)


class StubEncoder:
    """Deterministic stand-in: patch features are fixed random projections of
    per-patch color statistics, so identical content yields identical
    embeddings and solid images yield a uniform grid."""

    def __init__(self, resolution: int = 240, patch_size: int = 16,
                 embed_dim: int = 64, seed: int = 0):
        if resolution % patch_size:
            raise EncoderError("resolution must be a multiple of patch size")
        self.resolution = resolution
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        rng = np.random.default_rng(seed)
        self._w_patch = rng.standard_normal((6, embed_dim))
        self._w_value = rng.standard_normal((6, embed_dim))
        self._w_cls = rng.standard_normal((6, embed_dim))

    def _stats(self, tile: np.ndarray) -> np.ndarray:
        g = self.resolution // self.patch_size
        p = tile.reshape(g, self.patch_size, g, self.patch_size, 3)
        return np.concatenate([p.mean(axis=(1, 3)), p.std(axis=(1, 3))], axis=-1)

    def encode_image(self, tile: np.ndarray) -> EncoderOutput:
        if tile.shape != (self.resolution, self.resolution, 3):
            raise EncoderError(f"expected {self.resolution}^2 RGB tile, got {tile.shape}")
        stats = self._stats(tile)
        patches = _unit(np.tanh(stats @ self._w_patch))
        values = _unit(np.tanh(stats @ self._w_value))
        cls = _unit(np.tanh(stats.mean(axis=(0, 1)) @ self._w_cls))
        return EncoderOutput(cls=cls, patches=patches, values=values)

    def encode_text(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            rows.append(rng.standard_normal(self.embed_dim))
        return _unit(np.asarray(rows))


class ClipEncoder:
    """Pretrained backend (optional dependency)."""

    def __init__(self, model_id: str = "ViT-B-16-plus-240", layer: int = -1,
                 pretrained: str = "laion400m_e32"):
        try:
            import open_clip
            import torch
        except ImportError as exc:
            raise EncoderError(
                "pretrained backend needs the [clip] extra (torch + open_clip_torch)"
            ) from exc
        self._torch = torch
        model, _, _ = open_clip.create_model_and_transforms(model_id, pretrained=pretrained)
        model.eval()
        self._model = model
        self._tokenizer = open_clip.get_tokenizer(model_id)
        visual = model.visual
        self.resolution = visual.image_size[0] if isinstance(visual.image_size, (tuple, list)) \
            else visual.image_size
        self.patch_size = visual.patch_size[0] if isinstance(visual.patch_size, (tuple, list)) \
            else visual.patch_size
        self.embed_dim = model.text_projection.shape[1]
        self._layer = layer
        self._captured = {}
        block = visual.transformer.resblocks[layer]
        block.attn.register_forward_hook(self._hook)

    def _hook(self, module, inputs, output):
        # value-pathway: tokens through V and the attention output projection
        x = inputs[0]
        d = module.embed_dim
        w_v = module.in_proj_weight[2 * d:]
        b_v = module.in_proj_bias[2 * d:] if module.in_proj_bias is not None else 0
        v = x @ w_v.T + b_v
        self._captured["values"] = module.out_proj(v)

    def encode_image(self, tile: np.ndarray) -> EncoderOutput:
        torch = self._torch
        visual = self._model.visual
        g = self.resolution // self.patch_size
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(tile.transpose(2, 0, 1)))[None].float()
            tokens = visual.forward(x)  # pooled joint-space cls
            cls = tokens[0].numpy()
            values = self._captured["values"]  # [seq, batch, d_model] or [batch, seq, d_model]
            if values.shape[1] == 1:
                values = values.permute(1, 0, 2)
            vals = values[0, 1:]  # drop class token
            vals = visual.ln_post(vals) @ visual.proj
            # second pass grabbing pre-pool patch tokens from the last block
            feats = visual.conv1(x).flatten(2).permute(0, 2, 1)
            feats = torch.cat([visual.class_embedding.expand(1, 1, -1), feats], dim=1)
            feats = feats + visual.positional_embedding
            feats = visual.ln_pre(feats).permute(1, 0, 2)
            feats = visual.transformer(feats).permute(1, 0, 2)
            patches = visual.ln_post(feats[0, 1:]) @ visual.proj
        return EncoderOutput(
            cls=_unit(cls),
            patches=_unit(patches.numpy()).reshape(g, g, -1),
            values=_unit(vals.numpy()).reshape(g, g, -1),
        )

    def encode_text(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            emb = self._model.encode_text(self._tokenizer(texts)).numpy()
        return _unit(emb)


def make_encoder(model_id: str, layer: int = -1):
    if model_id == "stub" or model_id.startswith("stub:"):
        d = int(model_id.split(":", 1)[1]) if ":" in model_id else 64
        return StubEncoder(embed_dim=d)
    return ClipEncoder(model_id=model_id, layer=layer)
