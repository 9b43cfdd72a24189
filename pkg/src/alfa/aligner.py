"""Global-to-local projection of text prototypes.

Each grid position gets the identity-anchored rank-one map W satisfying
W u_G = u_L exactly; global text prototypes pushed through W and
re-normalized become that position's local prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AlignerError(Exception):
    pass


class DegenerateMeanError(AlignerError):
    """Polarity member embeddings average to (numerically) zero."""


class SingularInputError(AlignerError):
    pass


_ZERO_TOL = 1e-12


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(n <= _ZERO_TOL):
        raise DegenerateMeanError("cannot normalize a zero vector")
    return v / n


def make_prototype(embeddings: np.ndarray) -> np.ndarray:
    """Unit-norm arithmetic mean of member embeddings."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise AlignerError("need a non-empty [n, d] embedding matrix")
    return normalize(emb.mean(axis=0))


def make_prototypes(normal_embeddings: np.ndarray,
                    abnormal_embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return make_prototype(normal_embeddings), make_prototype(abnormal_embeddings)


@dataclass
class ProjectionMatrix:
    """W = I + (u_L - u_G) u_G^T / (u_G . u_G), applied without materializing."""

    u_g: np.ndarray
    u_l: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        """W @ v for v of shape [..., d]."""
        coeff = np.tensordot(v, self.u_g, axes=([-1], [0])) / (self.u_g @ self.u_g)
        return v + coeff[..., None] * (self.u_l - self.u_g)

    @property
    def matrix(self) -> np.ndarray:
        d = self.u_g.shape[0]
        return np.eye(d) + np.outer(self.u_l - self.u_g, self.u_g) / (self.u_g @ self.u_g)


def solve_projection(u_g: np.ndarray, u_l: np.ndarray) -> ProjectionMatrix:
    """Minimum-correction solution of W u_G = u_L, anchored at the identity."""
    u_g = np.asarray(u_g, dtype=np.float64)
    u_l = np.asarray(u_l, dtype=np.float64)
    if np.linalg.norm(u_g) <= _ZERO_TOL:
        raise SingularInputError("global value summary is zero")
    return ProjectionMatrix(u_g, u_l)


def project_prototypes(proj: ProjectionMatrix,
                       prototypes: np.ndarray) -> tuple[np.ndarray, bool]:
    """Push prototypes [..., d] through W and re-normalize.

    Returns (local prototypes, degenerate flag); on a degenerate projection
    (W p = 0) the global prototypes are returned unchanged so the position
    can still be scored, with the flag set for diagnostics.
    """
    out = proj.apply(np.asarray(prototypes, dtype=np.float64))
    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    if np.any(norms <= _ZERO_TOL):
        return np.asarray(prototypes, dtype=np.float64), True
    return out / norms, False


def project_prototypes_grid(u_g: np.ndarray, u_l_grid: np.ndarray,
                            prototype: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-position projection of one prototype over a value grid.

    u_l_grid is [H, W, d]; returns ([H, W, d] unit rows, bool [H, W] flags
    marking positions that fell back to the global prototype).
    """
    u_g = np.asarray(u_g, dtype=np.float64)
    u_l = np.asarray(u_l_grid, dtype=np.float64)
    p = np.asarray(prototype, dtype=np.float64)
    gg = u_g @ u_g
    if gg <= _ZERO_TOL:
        raise SingularInputError("global value summary is zero")
    coeff = (u_g @ p) / gg                       # scalar: same for every position
    out = p[None, None, :] + coeff * (u_l - u_g[None, None, :])
    norms = np.linalg.norm(out, axis=-1, keepdims=True)
    degenerate = norms[..., 0] <= _ZERO_TOL
    safe = np.where(degenerate[..., None], 1.0, norms)
    out = np.where(degenerate[..., None], p[None, None, :], out / safe)
    return out, degenerate
