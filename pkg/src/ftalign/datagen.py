"""Seeded synthetic multi-view catalogs and interaction logs.

Each listing has a hidden latent split into a core block and a detail block.
Primary views (first image, title) expose only the core; auxiliary views
additionally expose a random subset of detail coordinates, so auxiliaries
carry information the primaries lack. Interaction queries project the full
latent through the text modality, standing in for shoppers who ask about
details the title cannot convey.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import ConfigError, FormatError

LISTINGS_FILE = "listings.jsonl"
INTERACTIONS_FILE = "interactions.jsonl"

# Sub-stream labels mixed into the seed so catalog, listings, and
# interactions draw from independent deterministic streams.
_STREAM_MODEL = 0
_STREAM_LISTINGS = 1
_STREAM_INTERACTIONS = 2


@dataclass(frozen=True)
class SyntheticConfig:
    num_listings: int = 1000
    num_categories: int = 10
    image_views_n: int = 6
    text_views_m: int = 10
    latent_core_dim: int = 8
    latent_detail_dim: int = 8
    raw_dim: int = 32
    view_noise: float = 0.05
    query_noise: float = 0.05
    interactions_per_listing_rate: float = 0.29
    seed: int = 0

    def __post_init__(self):
        if self.num_listings < 1 or self.num_categories < 1:
            raise ConfigError("num_listings and num_categories must be >= 1")
        if self.image_views_n < 1 or self.text_views_m < 1:
            raise ConfigError("view counts must be >= 1")
        if self.latent_core_dim < 1 or self.raw_dim < 1:
            raise ConfigError("latent_core_dim and raw_dim must be >= 1")
        if self.latent_detail_dim < 0:
            raise ConfigError("latent_detail_dim must be >= 0")
        if self.view_noise < 0 or self.query_noise < 0:
            raise ConfigError("noise levels must be >= 0")
        if not (0.0 <= self.interactions_per_listing_rate <= 1.0):
            raise ConfigError("interactions_per_listing_rate must lie in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass(eq=False)
class Listing:
    """One catalog item: multi-view raw features plus its generating latent
    (kept for diagnostics; not serialized)."""

    id: str
    category: str
    image_view_features: np.ndarray  # (n, raw_dim), row 0 = primary image
    text_view_features: np.ndarray  # (m, raw_dim), row 0 = title
    latent: np.ndarray | None = None


@dataclass(eq=False)
class Interaction:
    """A search query with the listing the user clicked."""

    query_features: np.ndarray
    clicked_listing_id: str


class PseudoQueryProvider(Protocol):
    """Produces auxiliary text views imitating shopper search phrases.

    An external generator (e.g. an LLM working from the listing title) would
    implement this same protocol; the package ships only deterministic
    feature-space providers.
    """

    def generate(self, title_features: np.ndarray, count: int) -> np.ndarray:
        """Return a (count, raw_dim) array of query feature vectors."""
        ...


@dataclass(frozen=True)
class TitleJitterProvider:
    """Deterministic example provider: noisy copies of the title features."""

    seed: int = 0
    noise: float = 0.05

    def generate(self, title_features: np.ndarray, count: int) -> np.ndarray:
        title = np.asarray(title_features, dtype=np.float64)
        digest = hashlib.blake2b(title.tobytes(), digest_size=8).digest()
        rng = np.random.default_rng([self.seed, int.from_bytes(digest, "little")])
        return title[None, :] + rng.normal(0.0, self.noise, size=(count, title.size))


def _latent_model(config: SyntheticConfig):
    """Category centroids and the two fixed modality projections."""
    rng = np.random.default_rng([config.seed, _STREAM_MODEL])
    latent_dim = config.latent_core_dim + config.latent_detail_dim
    centroids = rng.normal(0.0, 1.0, size=(config.num_categories, latent_dim))
    scale = 1.0 / np.sqrt(latent_dim)
    proj_image = rng.normal(0.0, scale, size=(config.raw_dim, latent_dim))
    proj_text = rng.normal(0.0, scale, size=(config.raw_dim, latent_dim))
    return centroids, proj_image, proj_text


def _render_views(rng, projection, latent, core_dim, num_views, noise):
    """Primary view from the core block only, auxiliaries from core plus a
    random half of the detail coordinates."""
    detail_dim = latent.size - core_dim
    rows = np.empty((num_views, projection.shape[0]))
    masked = latent.copy()
    masked[core_dim:] = 0.0
    rows[0] = projection @ masked + rng.normal(0.0, noise, size=projection.shape[0])
    for k in range(1, num_views):
        masked = latent.copy()
        if detail_dim > 0:
            keep = rng.random(detail_dim) < 0.5
            masked[core_dim:] *= keep
        rows[k] = projection @ masked + rng.normal(0.0, noise, size=projection.shape[0])
    return rows


def generate_catalog(
    config: SyntheticConfig,
    pseudo_query_provider: PseudoQueryProvider | None = None,
) -> list[Listing]:
    """Deterministic synthetic catalog; same config always yields the same bytes."""
    centroids, proj_image, proj_text = _latent_model(config)
    rng = np.random.default_rng([config.seed, _STREAM_LISTINGS])
    latent_dim = config.latent_core_dim + config.latent_detail_dim
    listings = []
    for idx in range(config.num_listings):
        cat = int(rng.integers(config.num_categories))
        latent = centroids[cat] + rng.normal(0.0, 1.0, size=latent_dim)
        image_views = _render_views(
            rng, proj_image, latent, config.latent_core_dim,
            config.image_views_n, config.view_noise,
        )
        if pseudo_query_provider is None:
            text_views = _render_views(
                rng, proj_text, latent, config.latent_core_dim,
                config.text_views_m, config.view_noise,
            )
        else:
            masked = latent.copy()
            masked[config.latent_core_dim:] = 0.0
            title = proj_text @ masked + rng.normal(0.0, config.view_noise, size=config.raw_dim)
            text_views = np.vstack([
                title[None, :],
                pseudo_query_provider.generate(title, config.text_views_m - 1),
            ]) if config.text_views_m > 1 else title[None, :]
        listings.append(
            Listing(
                id=f"L{idx:06d}",
                category=f"cat{cat:02d}",
                image_view_features=image_views,
                text_view_features=text_views,
                latent=latent,
            )
        )
    return listings


def generate_interactions(config: SyntheticConfig, catalog: list[Listing]) -> list[Interaction]:
    """One query per sampled distinct listing; coverage fraction equals the
    configured rate. Queries project the full latent (core + detail) through
    the text modality plus query noise."""
    if not catalog:
        raise ConfigError("catalog must be non-empty")
    _, _, proj_text = _latent_model(config)
    rng = np.random.default_rng([config.seed, _STREAM_INTERACTIONS])
    count = int(round(config.interactions_per_listing_rate * len(catalog)))
    if count == 0:
        return []
    chosen = rng.choice(len(catalog), size=count, replace=False)
    interactions = []
    for idx in chosen:
        listing = catalog[int(idx)]
        if listing.latent is None:
            raise ConfigError(
                f"listing {listing.id} has no latent vector; "
                "interactions can only be generated alongside the catalog"
            )
        query = proj_text @ listing.latent + rng.normal(
            0.0, config.query_noise, size=config.raw_dim
        )
        interactions.append(Interaction(query_features=query, clicked_listing_id=listing.id))
    return interactions


def serialize_dataset(catalog: list[Listing], interactions: list[Interaction], out_dir) -> None:
    """Write listings.jsonl and interactions.jsonl under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / LISTINGS_FILE, "w", encoding="utf-8") as fh:
        for listing in catalog:
            fh.write(json.dumps({
                "id": listing.id,
                "category": listing.category,
                "image_views": listing.image_view_features.tolist(),
                "text_views": listing.text_view_features.tolist(),
            }) + "\n")
    with open(out / INTERACTIONS_FILE, "w", encoding="utf-8") as fh:
        for inter in interactions:
            fh.write(json.dumps({
                "query": inter.query_features.tolist(),
                "clicked": inter.clicked_listing_id,
            }) + "\n")


def _parse_lines(path: Path, parse_one):
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                items.append(parse_one(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path.name}: {exc}", line=lineno) from exc
    return items


def _listing_from_record(record: dict) -> Listing:
    image_views = np.asarray(record["image_views"], dtype=np.float64)
    text_views = np.asarray(record["text_views"], dtype=np.float64)
    if image_views.ndim != 2 or text_views.ndim != 2:
        raise ValueError("view arrays must be rectangular and two-dimensional")
    return Listing(
        id=str(record["id"]),
        category=str(record["category"]),
        image_view_features=image_views,
        text_view_features=text_views,
    )


def _interaction_from_record(record: dict) -> Interaction:
    query = np.asarray(record["query"], dtype=np.float64)
    if query.ndim != 1:
        raise ValueError("query must be a flat array of numbers")
    return Interaction(query_features=query, clicked_listing_id=str(record["clicked"]))


def load_dataset(data_dir) -> tuple[list[Listing], list[Interaction]]:
    """Inverse of serialize_dataset (latents are not stored, so they load as None)."""
    base = Path(data_dir)
    catalog = _parse_lines(base / LISTINGS_FILE, _listing_from_record)
    interactions = _parse_lines(base / INTERACTIONS_FILE, _interaction_from_record)
    return catalog, interactions
