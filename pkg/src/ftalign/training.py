"""Rolling-sampling contrastive training of the two encoders.

Each step encodes the primary view plus one uniformly sampled auxiliary view
per modality per listing, fuses them with a fixed primary-view weight, and
applies the symmetric temperature-scaled InfoNCE loss with in-batch
negatives. Per-step encoder work is constant in the number of views.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import Listing
from .encoder import (
    EncoderConfig,
    EncoderPair,
    EncoderParams,
    GradientBuffer,
    encode_batch,
    encode_backward_batch,
    init_params,
)
from .errors import ConfigError, DimensionMismatchError, TooFewViewsError
from .fusion import WeightScheme, design_weights, fuse_rolled

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

SAMPLING_MODES = ("independent", "round_robin")


@dataclass(frozen=True)
class TrainConfig:
    scheme: WeightScheme = WeightScheme(0.6)
    temperature: float = 0.07
    batch_size: int = 32
    grad_accum: int = 1
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 3
    seed: int = 0
    embed_dim: int = 16
    hidden_dim: int | None = None
    multiview: bool = True
    sampling: str = "independent"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.grad_accum < 1:
            raise ConfigError(f"grad_accum must be >= 1, got {self.grad_accum}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")


@dataclass(eq=False)
class BatchSample:
    """One listing's contribution to a training batch."""

    listing_id: str
    fused_image: np.ndarray
    fused_text: np.ndarray
    aux_image_index: int | None
    aux_text_index: int | None
    listing: Listing


@dataclass(eq=False)
class AdamState:
    """First/second moment accumulators, one per parameter tensor."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: EncoderParams) -> "AdamState":
        tensors = params.tensors()
        return cls(m=[np.zeros_like(p) for p in tensors], v=[np.zeros_like(p) for p in tensors])


@dataclass
class TrainStats:
    """Per-step records (JSONL-ready dicts) plus mean loss per epoch."""

    steps: list[dict] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)


def sample_rolling(listing: Listing, rng: np.random.Generator) -> tuple[int | None, int | None]:
    """Uniform auxiliary indices (i, j), independently per modality.

    Returns None for a modality with only the primary view.
    """
    n = listing.image_view_features.shape[0]
    m = listing.text_view_features.shape[0]
    i = int(rng.integers(1, n)) if n > 1 else None
    j = int(rng.integers(1, m)) if m > 1 else None
    return i, j


def _round_robin_indices(listing: Listing, visits: dict) -> tuple[int | None, int | None]:
    n = listing.image_view_features.shape[0]
    m = listing.text_view_features.shape[0]
    visit = visits.get(listing.id, 0)
    visits[listing.id] = visit + 1
    i = 1 + visit % (n - 1) if n > 1 else None
    j = 1 + visit % (m - 1) if m > 1 else None
    return i, j


def build_batch(
    listings: list[Listing],
    encoders: EncoderPair,
    config: TrainConfig,
    rng: np.random.Generator,
    rolling_state: dict | None = None,
) -> list[BatchSample]:
    """Encode primary + sampled auxiliary views and fuse them per listing.

    Exactly two forward calls per modality per listing when an auxiliary
    exists, one otherwise; view counts never change the per-listing work.
    """
    aux_indices = []
    for listing in listings:
        if not config.multiview:
            aux_indices.append((None, None))
        elif config.sampling == "round_robin":
            aux_indices.append(_round_robin_indices(listing, rolling_state if rolling_state is not None else {}))
        else:
            aux_indices.append(sample_rolling(listing, rng))

    fused_image = _encode_and_fuse(
        encoders.image,
        [lst.image_view_features for lst in listings],
        [ij[0] for ij in aux_indices],
        config.scheme,
    )
    fused_text = _encode_and_fuse(
        encoders.text,
        [lst.text_view_features for lst in listings],
        [ij[1] for ij in aux_indices],
        config.scheme,
    )
    return [
        BatchSample(
            listing_id=listing.id,
            fused_image=fused_image[k],
            fused_text=fused_text[k],
            aux_image_index=aux_indices[k][0],
            aux_text_index=aux_indices[k][1],
            listing=listing,
        )
        for k, listing in enumerate(listings)
    ]


def _encode_and_fuse(params, view_arrays, aux_indices, scheme, count_calls=True):
    primaries = np.stack([views[0] for views in view_arrays])
    encoded_primary = encode_batch(params, primaries, count_calls=count_calls)
    with_aux = [k for k, idx in enumerate(aux_indices) if idx is not None]
    if with_aux:
        aux_rows = np.stack([view_arrays[k][aux_indices[k]] for k in with_aux])
        encoded_aux = encode_batch(params, aux_rows, count_calls=count_calls)
    fused = [None] * len(view_arrays)
    pos = 0
    for k in range(len(view_arrays)):
        if aux_indices[k] is None:
            fused[k] = encoded_primary[k]
        else:
            fused[k] = fuse_rolled(encoded_primary[k], encoded_aux[pos], scheme, renormalize=True)
            pos += 1
    return fused


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(peak, axis=axis) + np.log(np.sum(np.exp(x - peak), axis=axis))


def _infonce_from_logits(logits: np.ndarray) -> float:
    """Symmetric cross-entropy over the scaled similarity matrix."""
    count = logits.shape[0]
    diag = np.diag(logits)
    row_terms = diag - _logsumexp(logits, axis=1)
    col_terms = diag - _logsumexp(logits, axis=0)
    return float(-(row_terms.sum() + col_terms.sum()) / (2.0 * count))


def clip_infonce_loss(fused_images, fused_texts, temperature: float) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over in-batch pairs; returns (loss, similarity matrix).

    similarity[k, l] = <image_k, text_l> / temperature.
    """
    imgs = np.asarray(fused_images, dtype=np.float64)
    txts = np.asarray(fused_texts, dtype=np.float64)
    if imgs.ndim != 2 or imgs.shape != txts.shape:
        raise DimensionMismatchError(
            f"fused batches must share one (B, d) shape, got {imgs.shape} vs {txts.shape}"
        )
    if imgs.shape[0] < 1:
        raise DimensionMismatchError("batch must contain at least one pair")
    logits = (imgs @ txts.T) / temperature
    return _infonce_from_logits(logits), logits


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=axis, keepdims=True)


def _loss_upstreams(fused_images: np.ndarray, fused_texts: np.ndarray, temperature: float):
    """Gradients of the InfoNCE loss w.r.t. the fused image/text matrices."""
    count = fused_images.shape[0]
    logits = (fused_images @ fused_texts.T) / temperature
    p_row = _softmax(logits, axis=1)
    p_col = _softmax(logits, axis=0)
    d_logits = (p_row + p_col - 2.0 * np.eye(count)) / (2.0 * count)
    d_images = (d_logits @ fused_texts) / temperature
    d_texts = (d_logits.T @ fused_images) / temperature
    return d_images, d_texts


def loss_backward(
    batch: list[BatchSample],
    encoders: EncoderPair,
    config: TrainConfig,
) -> tuple[GradientBuffer, GradientBuffer]:
    """Exact gradients of the batch loss w.r.t. both encoders' parameters.

    Recomputes the per-modality forward quantities internally (without
    touching the forward-call counters) using the sampled indices stored in
    the batch.
    """
    fused_images = np.stack([s.fused_image for s in batch])
    fused_texts = np.stack([s.fused_text for s in batch])
    d_images, d_texts = _loss_upstreams(fused_images, fused_texts, config.temperature)
    image_buf = _modality_backward(
        encoders.image,
        [s.listing.image_view_features for s in batch],
        [s.aux_image_index for s in batch],
        d_images,
        config.scheme,
    )
    text_buf = _modality_backward(
        encoders.text,
        [s.listing.text_view_features for s in batch],
        [s.aux_text_index for s in batch],
        d_texts,
        config.scheme,
    )
    return image_buf, text_buf


def _modality_backward(params, view_arrays, aux_indices, d_fused, scheme):
    """Chain the fused-embedding gradient back through fusion, normalization,
    and the encoder for one modality."""
    primaries = np.stack([views[0] for views in view_arrays])
    u_primary = encode_batch(params, primaries, count_calls=False)
    with_aux = [k for k, idx in enumerate(aux_indices) if idx is not None]
    u_aux = None
    aux_rows = None
    if with_aux:
        aux_rows = np.stack([view_arrays[k][aux_indices[k]] for k in with_aux])
        u_aux = encode_batch(params, aux_rows, count_calls=False)

    alpha = scheme.alpha
    d_primary = np.empty_like(d_fused)
    d_aux = []
    for k, idx in enumerate(aux_indices):
        if idx is None:
            d_primary[k] = d_fused[k]  # fused output was the encoded primary itself
    for pos, k in enumerate(with_aux):
        raw = alpha * u_primary[k] + (1.0 - alpha) * u_aux[pos]
        norm = float(np.linalg.norm(raw))
        unit = raw / norm
        g = d_fused[k]
        d_raw = (g - np.dot(g, unit) * unit) / norm
        d_primary[k] = alpha * d_raw
        d_aux.append((1.0 - alpha) * d_raw)

    rows = [primaries]
    upstreams = [d_primary]
    if with_aux:
        rows.append(aux_rows)
        upstreams.append(np.stack(d_aux))
    return encode_backward_batch(params, np.vstack(rows), np.vstack(upstreams))


def adam_step(params: EncoderParams, grads: GradientBuffer, state: AdamState, config: TrainConfig) -> None:
    """In-place AdamW update: bias-corrected Adam step, then decoupled decay
    p <- p - lr * wd * p."""
    state.t += 1
    t = state.t
    lr = config.learning_rate
    for p, g, m, v in zip(params.tensors(), grads.tensors(), state.m, state.v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if config.weight_decay:
            p -= lr * config.weight_decay * p


def default_encoders(image_raw_dim: int, text_raw_dim: int, config: TrainConfig) -> EncoderPair:
    """Fresh encoders sized for the dataset; seeds derive from config.seed."""
    image = init_params(EncoderConfig(
        input_dim=image_raw_dim, output_dim=config.embed_dim,
        hidden_dim=config.hidden_dim, seed=config.seed,
    ))
    text = init_params(EncoderConfig(
        input_dim=text_raw_dim, output_dim=config.embed_dim,
        hidden_dim=config.hidden_dim, seed=config.seed + 1,
    ))
    return EncoderPair(image=image, text=text)


def train(
    dataset: list[Listing],
    config: TrainConfig,
    encoders: EncoderPair | None = None,
) -> tuple[EncoderPair, TrainStats]:
    """Full training loop; deterministic given (dataset, config)."""
    if not dataset:
        raise ConfigError("dataset must be non-empty")
    if encoders is None:
        encoders = default_encoders(
            dataset[0].image_view_features.shape[1],
            dataset[0].text_view_features.shape[1],
            config,
        )
    state_image = AdamState.for_params(encoders.image)
    state_text = AdamState.for_params(encoders.text)
    rng = np.random.default_rng(config.seed)
    rolling_state: dict = {}
    stats = TrainStats()
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        batches = [
            [dataset[i] for i in order[start : start + config.batch_size]]
            for start in range(0, len(order), config.batch_size)
        ]
        epoch_losses = []
        for group_start in range(0, len(batches), config.grad_accum):
            group = batches[group_start : group_start + config.grad_accum]
            t0 = time.perf_counter()
            calls_before = encoders.total_forward_calls()
            image_grads = GradientBuffer.zeros_like(encoders.image)
            text_grads = GradientBuffer.zeros_like(encoders.text)
            losses = []
            for listings in group:
                batch = build_batch(listings, encoders, config, rng, rolling_state)
                loss, _ = clip_infonce_loss(
                    np.stack([s.fused_image for s in batch]),
                    np.stack([s.fused_text for s in batch]),
                    config.temperature,
                )
                g_img, g_txt = loss_backward(batch, encoders, config)
                image_grads.accumulate(g_img)
                text_grads.accumulate(g_txt)
                losses.append(loss)
            adam_step(encoders.image, image_grads, state_image, config)
            adam_step(encoders.text, text_grads, state_text, config)
            step += 1
            step_loss = float(np.mean(losses))
            epoch_losses.append(step_loss)
            stats.steps.append({
                "step": step,
                "epoch": epoch,
                "loss": step_loss,
                "fwd_calls": encoders.total_forward_calls() - calls_before,
                "ms_per_step": (time.perf_counter() - t0) * 1000.0,
            })
        stats.epoch_loss.append(float(np.mean(epoch_losses)))
    return encoders, stats


def estimate_unbiasedness(listing: Listing, encoders: EncoderPair, alpha: float) -> tuple[float, float]:
    """Exhaustive mean of the rolled similarity vs the fully fused similarity.

    Both sides use raw (un-renormalized) fusion, where the expectation
    identity holds exactly; they agree to float precision.
    """
    n = listing.image_view_features.shape[0]
    m = listing.text_view_features.shape[0]
    if n < 2 or m < 2:
        raise TooFewViewsError(f"need >= 2 views per modality, got n={n}, m={m}")
    scheme = WeightScheme(alpha)
    u = encode_batch(encoders.image, listing.image_view_features)
    t = encode_batch(encoders.text, listing.text_view_features)
    rolled_images = alpha * u[0][None, :] + (1.0 - alpha) * u[1:]
    rolled_texts = alpha * t[0][None, :] + (1.0 - alpha) * t[1:]
    exhaustive_mean = float(np.mean(rolled_images @ rolled_texts.T))
    full_image = design_weights(n, scheme) @ u
    full_text = design_weights(m, scheme) @ t
    full_fused = float(full_image @ full_text)
    return exhaustive_mean, full_fused
