"""Few-shot memory bank of normal patch features with exact cosine
nearest-neighbor distances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bundle as bundlefmt
from .scoring import harmonic_fuse


class MemoryError_(Exception):
    pass


@dataclass
class MemoryBank:
    """Immutable per-scale [N_ref, d] matrices of unit-norm reference features."""

    rows: dict[int, np.ndarray]
    provenance: list[str] = field(default_factory=list)

    @property
    def scales(self) -> tuple[int, ...]:
        return tuple(sorted(self.rows))

    @property
    def embed_dim(self) -> int:
        return next(iter(self.rows.values())).shape[1]

    def save(self, path) -> None:
        meta = {"kind": "bank", "embed_dim": self.embed_dim,
                "scales": ",".join(str(s) for s in self.scales),
                "provenance": ";".join(self.provenance)}
        tensors = {f"bank/s{s}": self.rows[s].astype(np.float32) for s in self.scales}
        bundlefmt.write_bundle(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "MemoryBank":
        b = bundlefmt.read_bundle(path)
        if b.meta.get("kind") != "bank":
            raise MemoryError_(f"{path}: not a bank bundle")
        rows = {}
        for name in b.names:
            if name.startswith("bank/s"):
                rows[int(name[len("bank/s"):])] = np.asarray(b[name], dtype=np.float64)
        if not rows:
            raise MemoryError_(f"{path}: bank bundle has no bank tensors")
        prov = b.meta.get("provenance", "")
        return cls(rows, prov.split(";") if prov else [])


def build_bank(local_grids: list[dict[int, np.ndarray]],
               scales: tuple[int, ...],
               provenance: list[str] | None = None) -> MemoryBank:
    """Concatenate every position of every reference image, per scale.

    ``local_grids`` holds one {scale: [H_p, W_p, d]} dict per reference image.
    """
    if not local_grids:
        raise MemoryError_("empty reference list")
    rows: dict[int, np.ndarray] = {}
    shape0 = None
    for s in scales:
        chunks = []
        for grids in local_grids:
            if s not in grids:
                raise MemoryError_(f"reference image missing scale {s}")
            g = np.asarray(grids[s], dtype=np.float64)
            if shape0 is None:
                shape0 = g.shape
            elif g.shape != shape0:
                raise MemoryError_(
                    f"inconsistent reference grids: {g.shape} vs {shape0}")
            chunks.append(g.reshape(-1, g.shape[-1]))
        rows[s] = np.concatenate(chunks, axis=0)
    return MemoryBank(rows, provenance or [])


def memory_score(local_grid: np.ndarray, bank: MemoryBank, scale: int) -> np.ndarray:
    """(1 - max cosine to any bank row) / 2 per position, clamped to [0, 1]."""
    if scale not in bank.rows:
        raise MemoryError_(f"bank has no scale {scale}")
    rows = bank.rows[scale]
    if rows.shape[0] == 0:
        raise MemoryError_("empty bank")
    g = np.asarray(local_grid, dtype=np.float64)
    h, w, d = g.shape
    if d != rows.shape[1]:
        raise MemoryError_(f"dimension mismatch: query d={d}, bank d={rows.shape[1]}")
    sims = g.reshape(-1, d) @ rows.T                 # [H*W, N_ref], full scan
    best = sims.max(axis=1).reshape(h, w)
    return np.clip((1.0 - best) / 2.0, 0.0, 1.0)


def memory_map(local_grids: dict[int, np.ndarray], bank: MemoryBank,
               scales: tuple[int, ...]) -> np.ndarray:
    """Per-scale memory scores fused with the same harmonic rule as language maps."""
    return harmonic_fuse([memory_score(local_grids[s], bank, s) for s in scales])
