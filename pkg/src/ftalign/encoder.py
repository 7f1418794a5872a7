"""Small trainable encoders mapping raw view features to unit embeddings.

One affine layer by default, optionally a tanh hidden layer, always followed
by Euclidean normalization. Forward, exact reverse-mode gradients, and a
binary model file format with bit-exact round trips.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatchError, FormatError, ZeroNormError

MODEL_MAGIC = b"FTAM"
MODEL_VERSION = 1

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    output_dim: int
    hidden_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError(
                f"dims must be >= 1, got input {self.input_dim}, output {self.output_dim}"
            )
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1 or None, got {self.hidden_dim}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) per affine layer."""
        if self.hidden_dim is None:
            return [(self.output_dim, self.input_dim)]
        return [
            (self.hidden_dim, self.input_dim),
            (self.output_dim, self.hidden_dim),
        ]


@dataclass(eq=False)
class EncoderParams:
    config: EncoderConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    forward_calls: int = 0

    def tensors(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W then b per layer."""
        return [t for w, b in zip(self.weights, self.biases) for t in (w, b)]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass(eq=False)
class GradientBuffer:
    """Accumulated parameter gradients, shape-compatible with EncoderParams."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "GradientBuffer":
        return cls(
            d_weights=[np.zeros_like(w) for w in params.weights],
            d_biases=[np.zeros_like(b) for b in params.biases],
        )

    def tensors(self) -> list[np.ndarray]:
        return [t for w, b in zip(self.d_weights, self.d_biases) for t in (w, b)]

    def accumulate(self, other: "GradientBuffer") -> None:
        for mine, theirs in zip(self.tensors(), other.tensors()):
            mine += theirs


def init_params(config: EncoderConfig) -> EncoderParams:
    """Glorot-uniform weights, zero biases, deterministic given config.seed."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_out, fan_in in config.layer_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(config=config, weights=weights, biases=biases)


def _forward_core(params: EncoderParams, X: np.ndarray):
    """Batched forward pass without touching the call counter.

    Returns (unit outputs, pre-normalization outputs, norms, layer inputs).
    """
    acts = [X]
    z = X
    last = len(params.weights) - 1
    for li, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ W.T + b
        if li < last:
            z = np.tanh(z)
            acts.append(z)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < _NORM_EPS):
        raise ZeroNormError(f"pre-normalization output norm {norms.min()!r} too small")
    u = z / norms[:, None]
    return u, z, norms, acts


def _check_input(params: EncoderParams, raws: np.ndarray, batch: bool) -> np.ndarray:
    X = np.asarray(raws, dtype=np.float64)
    want = params.config.input_dim
    if batch:
        if X.ndim != 2 or X.shape[1] != want:
            raise DimensionMismatchError(f"expected (B, {want}) inputs, got {X.shape}")
    else:
        if X.shape != (want,):
            raise DimensionMismatchError(f"expected input of length {want}, got {X.shape}")
    return X


def encode(params: EncoderParams, raw) -> np.ndarray:
    """Encode one raw feature vector to a unit-norm embedding."""
    X = _check_input(params, raw, batch=False)
    u, *_ = _forward_core(params, X[None, :])
    params.forward_calls += 1
    return u[0]


def encode_batch(params: EncoderParams, raws, count_calls: bool = True) -> np.ndarray:
    """Encode a (B, input_dim) batch; counts one forward call per row."""
    X = _check_input(params, raws, batch=True)
    u, *_ = _forward_core(params, X)
    if count_calls:
        params.forward_calls += X.shape[0]
    return u


def _backward_core(
    params: EncoderParams,
    X: np.ndarray,
    upstream: np.ndarray,
    include_normalization: bool = True,
) -> GradientBuffer:
    """Gradient of sum_b <upstream[b], encode(params, X[b])> w.r.t. parameters.

    With include_normalization=False the output is treated as the raw affine
    result (test hook for the normalization-free derivative).
    """
    u, z, norms, acts = _forward_core(params, X)
    if include_normalization:
        # Jacobian of z / |z| is (I - u u^T) / |z|.
        d = (upstream - np.sum(upstream * u, axis=1, keepdims=True) * u) / norms[:, None]
    else:
        d = upstream
    n_layers = len(params.weights)
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers
    for li in range(n_layers - 1, -1, -1):
        inp = acts[li]
        d_weights[li] = d.T @ inp
        d_biases[li] = d.sum(axis=0)
        if li > 0:
            d = (d @ params.weights[li]) * (1.0 - acts[li] ** 2)
    return GradientBuffer(d_weights=d_weights, d_biases=d_biases)


def encode_backward(params: EncoderParams, raw, upstream) -> GradientBuffer:
    """Exact reverse-mode gradient of <upstream, encode(params, raw)>."""
    X = _check_input(params, raw, batch=False)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (params.config.output_dim,):
        raise DimensionMismatchError(
            f"upstream shape {g.shape}, expected ({params.config.output_dim},)"
        )
    return _backward_core(params, X[None, :], g[None, :])


def encode_backward_batch(params: EncoderParams, raws, upstreams) -> GradientBuffer:
    """Summed gradients over a batch of (raw, upstream) rows."""
    X = _check_input(params, raws, batch=True)
    G = np.asarray(upstreams, dtype=np.float64)
    if G.shape != (X.shape[0], params.config.output_dim):
        raise DimensionMismatchError(
            f"upstreams shape {G.shape}, expected ({X.shape[0]}, {params.config.output_dim})"
        )
    return _backward_core(params, X, G)


@dataclass(eq=False)
class EncoderPair:
    """The image and text encoders trained and persisted together."""

    image: EncoderParams
    text: EncoderParams

    def total_forward_calls(self) -> int:
        return self.image.forward_calls + self.text.forward_calls


def _params_to_bytes(params: EncoderParams) -> bytes:
    cfg = params.config
    chunks = [struct.pack("<III", cfg.input_dim, cfg.output_dim, cfg.hidden_dim or 0)]
    for W, b in zip(params.weights, params.biases):
        chunks.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatError(
                f"truncated model file: wanted {count} bytes at offset {self.pos}"
            )
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out


def _params_from_reader(reader: _Reader) -> EncoderParams:
    input_dim, output_dim, hidden_raw = struct.unpack("<III", reader.take(12))
    config = EncoderConfig(
        input_dim=input_dim,
        output_dim=output_dim,
        hidden_dim=hidden_raw or None,
    )
    weights, biases = [], []
    for fan_out, fan_in in config.layer_shapes:
        w_bytes = reader.take(8 * fan_out * fan_in)
        weights.append(np.frombuffer(w_bytes, dtype="<f8").reshape(fan_out, fan_in).copy())
        b_bytes = reader.take(8 * fan_out)
        biases.append(np.frombuffer(b_bytes, dtype="<f8").copy())
    return EncoderParams(config=config, weights=weights, biases=biases)


def save_model(pair: EncoderPair, path) -> None:
    """Write both encoders to `path` in the FTAM binary format."""
    payload = (
        MODEL_MAGIC
        + struct.pack("<I", MODEL_VERSION)
        + _params_to_bytes(pair.image)
        + _params_to_bytes(pair.text)
    )
    with open(path, "wb") as fh:
        fh.write(payload)


def load_model(path) -> EncoderPair:
    """Read an FTAM model file; round-trips with save_model bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    reader = _Reader(data)
    magic = reader.take(4)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    (version,) = struct.unpack("<I", reader.take(4))
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    image = _params_from_reader(reader)
    text = _params_from_reader(reader)
    if reader.pos != len(data):
        raise FormatError(f"{len(data) - reader.pos} trailing bytes after model payload")
    return EncoderPair(image=image, text=text)
