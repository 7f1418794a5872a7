"""Offline fused-embedding index, exact cosine k-NN, and retrieval evaluation.

Item vectors are built offline and cached; queries are encoded online with
the text encoder only. Search is an exact full scan over unit vectors with
ties broken by ascending listing id.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .datagen import Interaction, Listing
from .encoder import EncoderPair, EncoderParams, encode_batch
from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmptyIndexError,
    FormatError,
    MissingViewError,
    UnknownListingError,
)
from .fusion import WeightScheme, design_weights, fuse, fuse_multimodal

INDEX_MAGIC = b"FTAI"
INDEX_VERSION = 1
UNIT_NORM_ATOL = 1e-6

MODALITY_CHOICES = ("multimodal", "text_only", "image_only")

# View roles for cross-view retrieval: (modality, view row). "Non-primary"
# roles use the first auxiliary view.
VIEW_ROLES = {
    "title": ("text", 0),
    "pseudo_query": ("text", 1),
    "primary_image": ("image", 0),
    "nonprimary_image": ("image", 1),
}


@dataclass(eq=False)
class EmbeddingIndex:
    """One cached unit vector per listing, stored at float32 precision."""

    dim: int
    ids: list[str]
    vectors: np.ndarray
    categories: dict[str, str] | None = None

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape != (len(self.ids), self.dim):
            raise DimensionMismatchError(
                f"vectors shape {vectors.shape} does not match "
                f"({len(self.ids)}, {self.dim})"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ConfigError("listing ids must be unique")
        self.vectors = vectors
        self._vectors64 = vectors.astype(np.float64)
        if len(self.ids):
            norms = np.linalg.norm(self._vectors64, axis=1)
            worst = float(np.max(np.abs(norms - 1.0)))
            if worst > UNIT_NORM_ATOL:
                raise ConfigError(
                    f"index vectors must be unit-norm within {UNIT_NORM_ATOL}, "
                    f"worst deviation {worst:.3e}"
                )
        id_array = np.array(self.ids) if self.ids else np.empty(0, dtype=str)
        self._order_by_id = np.argsort(id_array, kind="stable")
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[self._order_by_id] = np.arange(len(self.ids))
        self._position = {lid: pos for pos, lid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)


def build_index(
    catalog: list[Listing],
    encoders: EncoderPair,
    scheme: WeightScheme,
    modality: str = "multimodal",
    primary_only: bool = False,
) -> EmbeddingIndex:
    """Encode and fuse every listing offline.

    Per modality the views are fused with the primary-weight scheme and
    renormalized; multimodal vectors are the renormalized element-wise mean
    of the two. `primary_only` restricts each modality to its primary view
    (the single-view indexing baseline). text_only performs no image encoder
    calls and vice versa.
    """
    if modality not in MODALITY_CHOICES:
        raise ConfigError(f"modality must be one of {MODALITY_CHOICES}, got {modality!r}")
    if not catalog:
        raise ConfigError("catalog must be non-empty")
    rows = []
    for listing in catalog:
        text_vec = image_vec = None
        if modality != "image_only":
            text_vec = _fused_listing_vector(
                encoders.text, listing.text_view_features, scheme, primary_only
            )
        if modality != "text_only":
            image_vec = _fused_listing_vector(
                encoders.image, listing.image_view_features, scheme, primary_only
            )
        if modality == "multimodal":
            rows.append(fuse_multimodal(text_vec, image_vec, renormalize=True))
        elif modality == "text_only":
            rows.append(text_vec)
        else:
            rows.append(image_vec)
    vectors = np.asarray(np.stack(rows), dtype=np.float32)
    return EmbeddingIndex(
        dim=vectors.shape[1],
        ids=[listing.id for listing in catalog],
        vectors=vectors,
        categories={listing.id: listing.category for listing in catalog},
    )


def _fused_listing_vector(params: EncoderParams, views: np.ndarray, scheme, primary_only):
    views = np.asarray(views, dtype=np.float64)
    if primary_only:
        views = views[:1]
    encoded = encode_batch(params, views)
    return fuse(encoded, design_weights(encoded.shape[0], scheme), renormalize=True)


def save_index(index: EmbeddingIndex, path) -> None:
    """Write the FTAI binary format; byte-identical for identical indexes."""
    chunks = [
        INDEX_MAGIC,
        struct.pack("<II", INDEX_VERSION, index.dim),
        struct.pack("<Q", len(index)),
    ]
    for lid, vec in zip(index.ids, index.vectors):
        id_bytes = lid.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise FormatError(f"listing id too long to serialize ({len(id_bytes)} bytes)")
        chunks.append(struct.pack("<H", len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(np.ascontiguousarray(vec, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_index(path) -> EmbeddingIndex:
    """Read an FTAI file; raises FormatError on corruption, never a partial index."""
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise FormatError(f"truncated index file: wanted {count} bytes at offset {pos}")
        out = data[pos : pos + count]
        pos += count
        return out

    magic = take(4)
    if magic != INDEX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {INDEX_MAGIC!r}")
    version, dim = struct.unpack("<II", take(8))
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}")
    (count,) = struct.unpack("<Q", take(8))
    ids = []
    vectors = np.empty((count, dim), dtype=np.float32)
    for row in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        try:
            ids.append(take(id_len).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {row}: invalid UTF-8 id") from exc
        vectors[row] = np.frombuffer(take(4 * dim), dtype="<f4")
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after index payload")
    return EmbeddingIndex(dim=dim, ids=ids, vectors=vectors)


def knn(index: EmbeddingIndex, query, k: int) -> list[tuple[str, float]]:
    """Exact top-k by cosine similarity (dot product of unit vectors).

    Descending score, ties broken by ascending listing id.
    """
    if len(index) == 0:
        raise EmptyIndexError("cannot search an empty index")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dim,):
        raise DimensionMismatchError(f"query shape {q.shape}, expected ({index.dim},)")
    scores = index._vectors64 @ q
    # Stable sort over id-ordered scores: equal scores keep ascending-id order.
    by_id = index._order_by_id
    ranking = np.argsort(-scores[by_id], kind="stable")
    top = by_id[ranking[:k]]
    return [(index.ids[i], float(scores[i])) for i in top]


def _ranks_of_clicked(index: EmbeddingIndex, queries: np.ndarray, clicked_pos: np.ndarray) -> np.ndarray:
    """1-based rank of each clicked listing under the knn ordering."""
    scores = queries @ index._vectors64.T
    clicked_scores = scores[np.arange(len(clicked_pos)), clicked_pos]
    higher = (scores > clicked_scores[:, None]).sum(axis=1)
    tied = scores == clicked_scores[:, None]
    earlier_id = index._id_rank[None, :] < index._id_rank[clicked_pos][:, None]
    tie_before = (tied & earlier_id).sum(axis=1)
    return higher + tie_before + 1


@dataclass
class EvalReport:
    """Recall at each cutoff, overall and per category."""

    recall: dict[int, float]
    num_queries: int
    per_category: dict[str, dict[int, float]] | None = None
    category_counts: dict[str, int] | None = None

    def to_dict(self) -> dict:
        out = {"num_queries": self.num_queries, "recall": dict(self.recall)}
        if self.per_category is not None:
            out["per_category"] = {c: dict(r) for c, r in sorted(self.per_category.items())}
            out["category_counts"] = dict(sorted(self.category_counts.items()))
        return out


def _check_ks(ks) -> list[int]:
    ks = [int(k) for k in ks]
    if not ks:
        raise ConfigError("at least one cutoff k is required")
    if any(k < 1 for k in ks):
        raise ConfigError(f"cutoffs must be >= 1, got {ks}")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError(f"cutoffs must be strictly ascending, got {ks}")
    return ks


def recall_at_k(
    index: EmbeddingIndex,
    encoders: EncoderPair,
    interactions: list[Interaction],
    ks,
) -> EvalReport:
    """Zero-shot query-to-item recall: queries are encoded with the text
    encoder and searched against the cached item vectors."""
    ks = _check_ks(ks)
    if len(index) == 0:
        raise EmptyIndexError("cannot evaluate against an empty index")
    if not interactions:
        raise ConfigError("no interactions to evaluate")
    clicked_pos = np.empty(len(interactions), dtype=np.int64)
    for row, inter in enumerate(interactions):
        pos = index._position.get(inter.clicked_listing_id)
        if pos is None:
            raise UnknownListingError(
                f"clicked listing {inter.clicked_listing_id!r} is not in the index"
            )
        clicked_pos[row] = pos
    queries = encode_batch(
        encoders.text, np.stack([i.query_features for i in interactions])
    )
    ranks = _ranks_of_clicked(index, queries, clicked_pos)
    recall = {k: float(np.mean(ranks <= k)) for k in ks}
    per_category = None
    category_counts = None
    if index.categories:
        cats = np.array([index.categories[i.clicked_listing_id] for i in interactions])
        per_category = {}
        category_counts = {}
        for cat in sorted(set(cats.tolist())):
            mask = cats == cat
            per_category[cat] = {k: float(np.mean(ranks[mask] <= k)) for k in ks}
            category_counts[cat] = int(mask.sum())
    return EvalReport(
        recall=recall,
        num_queries=len(interactions),
        per_category=per_category,
        category_counts=category_counts,
    )


def _view_role_features(catalog: list[Listing], role: str) -> tuple[str, np.ndarray]:
    if role not in VIEW_ROLES:
        raise ConfigError(f"unknown view role {role!r}, expected one of {sorted(VIEW_ROLES)}")
    modality, row = VIEW_ROLES[role]
    rows = []
    for listing in catalog:
        views = (
            listing.text_view_features if modality == "text" else listing.image_view_features
        )
        if views.shape[0] <= row:
            raise MissingViewError(
                f"listing {listing.id} has no {role} view (needs view row {row})"
            )
        rows.append(views[row])
    return modality, np.stack(rows)


def cross_view_eval(
    catalog: list[Listing],
    encoders: EncoderPair,
    source_view: str,
    target_view: str,
    k: int = 1,
) -> float:
    """Self-retrieval recall@k using one view as query against an index of
    another view, one vector per listing."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not catalog:
        raise ConfigError("catalog must be non-empty")
    src_modality, src_rows = _view_role_features(catalog, source_view)
    tgt_modality, tgt_rows = _view_role_features(catalog, target_view)
    enc = {"image": encoders.image, "text": encoders.text}
    target_vectors = encode_batch(enc[tgt_modality], tgt_rows)
    index = EmbeddingIndex(
        dim=target_vectors.shape[1],
        ids=[listing.id for listing in catalog],
        vectors=np.asarray(target_vectors, dtype=np.float32),
    )
    queries = encode_batch(enc[src_modality], src_rows)
    self_pos = np.arange(len(catalog), dtype=np.int64)
    ranks = _ranks_of_clicked(index, queries, self_pos)
    return float(np.mean(ranks <= k))
