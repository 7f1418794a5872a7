"""View-set data model, coupling-weight design, and embedding fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError, ZeroNormError
from .transport import validate_simplex

MODALITIES = ("image", "text")

ZERO_NORM_EPS = 1e-12


def _as_matrix(views) -> np.ndarray:
    mat = np.asarray(getattr(views, "views", views), dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2:
        raise DimensionMismatchError(f"expected (n, d) views, got shape {mat.shape}")
    return mat


def _renormalized(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm < ZERO_NORM_EPS:
        raise ZeroNormError(f"cannot renormalize vector with norm {norm!r}")
    return vec / norm


@dataclass(eq=False)
class ViewSet:
    """Ordered views of one listing in one modality; row 0 is the primary view
    (the seller-curated image or the title)."""

    views: np.ndarray
    modality: str

    def __post_init__(self):
        mat = np.asarray(self.views, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise DimensionMismatchError(
                f"views must be a non-empty (n, d) matrix, got shape {mat.shape}"
            )
        if not np.all(np.isfinite(mat)):
            raise ValueError("view embeddings must be finite")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        self.views = mat

    @property
    def primary(self) -> np.ndarray:
        return self.views[0]

    @property
    def dim(self) -> int:
        return self.views.shape[1]

    def __len__(self) -> int:
        return self.views.shape[0]


@dataclass(frozen=True)
class WeightScheme:
    """Fixed weight on the primary view; the rest is split evenly across
    auxiliary views."""

    alpha: float = 0.6

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")


def design_weights(view_count: int, scheme: WeightScheme) -> np.ndarray:
    """Simplex weights [alpha, (1-alpha)/(n-1), ...] for n views.

    A single-view listing gets all mass on its primary view.
    """
    if view_count < 1:
        raise ConfigError(f"view_count must be >= 1, got {view_count}")
    if view_count == 1:
        return np.array([1.0])
    weights = np.full(view_count, (1.0 - scheme.alpha) / (view_count - 1))
    weights[0] = scheme.alpha
    return validate_simplex(weights)


def fuse(views, weights, renormalize: bool = False) -> np.ndarray:
    """Weighted sum of view vectors, optionally renormalized to unit length.

    `views` may be a ViewSet or a plain (n, d) array.
    """
    mat = _as_matrix(views)
    w = validate_simplex(weights)
    if w.size != mat.shape[0]:
        raise DimensionMismatchError(
            f"{w.size} weights for {mat.shape[0]} views"
        )
    fused = w @ mat
    if renormalize:
        fused = _renormalized(fused)
    return fused


def fuse_rolled(primary, auxiliary, scheme: WeightScheme, renormalize: bool = False) -> np.ndarray:
    """Two-view fusion alpha * primary + (1 - alpha) * auxiliary.

    Delegates to fuse() over the stacked pair, so the two paths agree
    bit-for-bit.
    """
    p = np.asarray(primary, dtype=np.float64)
    x = np.asarray(auxiliary, dtype=np.float64)
    if p.shape != x.shape or p.ndim != 1:
        raise DimensionMismatchError(
            f"primary shape {p.shape} vs auxiliary shape {x.shape}"
        )
    weights = np.array([scheme.alpha, 1.0 - scheme.alpha])
    return fuse(np.stack([p, x]), weights, renormalize=renormalize)


def fuse_multimodal(text_fused, image_fused, renormalize: bool = False) -> np.ndarray:
    """Element-wise mean of the text and image fused embeddings."""
    t = np.asarray(text_fused, dtype=np.float64)
    i = np.asarray(image_fused, dtype=np.float64)
    if t.shape != i.shape or t.ndim != 1:
        raise DimensionMismatchError(f"text shape {t.shape} vs image shape {i.shape}")
    fused = (t + i) / 2.0
    if renormalize:
        fused = _renormalized(fused)
    return fused
