"""Encoder module: init, forward, reverse-mode gradients, model file IO."""

import numpy as np
import pytest

from ftalign.encoder import (
    EncoderConfig,
    EncoderPair,
    EncoderParams,
    GradientBuffer,
    _backward_core,
    encode,
    encode_backward,
    encode_backward_batch,
    encode_batch,
    init_params,
    load_model,
    save_model,
)
from ftalign.errors import ConfigError, DimensionMismatchError, FormatError, ZeroNormError
from helpers import fd_gradient, max_rel_error


def identity_linear_params(dim):
    cfg = EncoderConfig(dim, dim)
    params = init_params(cfg)
    params.weights[0] = np.eye(dim)
    params.biases[0] = np.zeros(dim)
    return params


# ---------------------------------------------------------------- init

def test_init_params_deterministic():
    cfg = EncoderConfig(8, 4, hidden_dim=3, seed=99)
    a = init_params(cfg)
    b = init_params(cfg)
    for x, y in zip(a.tensors(), b.tensors()):
        assert np.array_equal(x, y)


def test_init_params_zero_biases():
    params = init_params(EncoderConfig(8, 4, hidden_dim=5, seed=1))
    for b in params.biases:
        assert np.all(b == 0.0)


def test_init_params_glorot_bound():
    params = init_params(EncoderConfig(8, 4, seed=2))
    bound = np.sqrt(6.0 / 12.0)
    assert bound == pytest.approx(0.7071, abs=1e-4)
    assert np.max(np.abs(params.weights[0])) <= bound


def test_encoder_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(0, 4)
    with pytest.raises(ConfigError):
        EncoderConfig(4, 4, hidden_dim=0)


# ---------------------------------------------------------------- forward

def test_encode_identity_map():
    params = identity_linear_params(4)
    e1 = np.array([1.0, 0.0, 0.0, 0.0])
    assert np.allclose(encode(params, e1), e1)


def test_encode_output_unit_norm():
    rng = np.random.default_rng(3)
    for hidden in (None, 5):
        params = init_params(EncoderConfig(6, 4, hidden_dim=hidden, seed=7))
        for _ in range(20):
            out = encode(params, rng.normal(size=6))
            assert abs(np.linalg.norm(out) - 1.0) <= 1e-9


def test_encode_matches_reimplementation_oracle():
    rng = np.random.default_rng(5)
    params = init_params(EncoderConfig(6, 4, hidden_dim=3, seed=11))
    raw = rng.normal(size=6)
    hidden = np.tanh(params.weights[0] @ raw + params.biases[0])
    out = params.weights[1] @ hidden + params.biases[1]
    expected = out / np.linalg.norm(out)
    assert np.allclose(encode(params, raw), expected, atol=1e-12)


def test_encode_counts_forward_calls():
    params = init_params(EncoderConfig(4, 4, seed=0))
    rng = np.random.default_rng(1)
    encode(params, rng.normal(size=4))
    encode_batch(params, rng.normal(size=(5, 4)))
    assert params.forward_calls == 6
    encode_batch(params, rng.normal(size=(2, 4)), count_calls=False)
    assert params.forward_calls == 6


def test_encode_dimension_mismatch():
    params = init_params(EncoderConfig(4, 4, seed=0))
    with pytest.raises(DimensionMismatchError):
        encode(params, np.zeros(5))


def test_encode_zero_norm_error():
    params = identity_linear_params(3)
    with pytest.raises(ZeroNormError):
        encode(params, np.zeros(3))


def test_encode_deterministic_output():
    params = init_params(EncoderConfig(5, 4, hidden_dim=3, seed=13))
    raw = np.linspace(-1.0, 1.0, 5)
    assert np.array_equal(encode(params, raw), encode(params, raw))


# ---------------------------------------------------------------- backward

def test_encode_backward_zero_upstream():
    params = init_params(EncoderConfig(5, 4, seed=17))
    buf = encode_backward(params, np.ones(5), np.zeros(4))
    for g in buf.tensors():
        assert np.all(g == 0.0)


def test_encode_backward_raw_output_outer_product():
    """With normalization removed, d/dW of <g, W x + b> is the outer product."""
    params = init_params(EncoderConfig(5, 4, seed=19))
    raw = np.arange(1.0, 6.0)
    g = np.array([0.5, -1.0, 2.0, 0.25])
    buf = _backward_core(params, raw[None, :], g[None, :], include_normalization=False)
    assert np.array_equal(buf.d_weights[0], np.outer(g, raw))
    assert np.array_equal(buf.d_biases[0], g)


def test_encode_backward_matches_finite_differences():
    """100 seeded (params, input, upstream) triples across both architectures."""
    rng = np.random.default_rng(23)
    worst = 0.0
    for trial in range(100):
        hidden = None if trial % 2 == 0 else 3
        params = init_params(EncoderConfig(5, 4, hidden_dim=hidden, seed=1000 + trial))
        raw = rng.normal(size=5)
        g = rng.normal(size=4)
        buf = encode_backward(params, raw, g)

        analytic, numeric = [], []
        for tensor, grad in zip(params.tensors(), buf.tensors()):
            fd = fd_gradient(
                lambda: float(g @ encode_batch(params, raw[None, :], count_calls=False)[0]),
                tensor,
            )
            analytic.append(grad)
            numeric.append(fd)
        worst = max(worst, max_rel_error(analytic, numeric))
    assert worst <= 1e-4


def test_encode_backward_batch_sums_rows():
    rng = np.random.default_rng(29)
    params = init_params(EncoderConfig(5, 4, hidden_dim=3, seed=31))
    raws = rng.normal(size=(3, 5))
    ups = rng.normal(size=(3, 4))
    batched = encode_backward_batch(params, raws, ups)
    summed = GradientBuffer.zeros_like(params)
    for row in range(3):
        summed.accumulate(encode_backward(params, raws[row], ups[row]))
    for got, want in zip(batched.tensors(), summed.tensors()):
        assert np.allclose(got, want, atol=1e-12)


# ---------------------------------------------------------------- model file

def test_model_round_trip_bit_exact(tmp_path):
    pair = EncoderPair(
        image=init_params(EncoderConfig(6, 4, hidden_dim=3, seed=1)),
        text=init_params(EncoderConfig(5, 4, seed=2)),
    )
    path = tmp_path / "model.ftam"
    save_model(pair, path)
    first = path.read_bytes()
    loaded = load_model(path)
    for got, want in zip(loaded.image.tensors(), pair.image.tensors()):
        assert np.array_equal(got, want)
    for got, want in zip(loaded.text.tensors(), pair.text.tensors()):
        assert np.array_equal(got, want)
    save_model(loaded, path)
    assert path.read_bytes() == first


def test_model_file_layout(tmp_path):
    """Magic, version, then per encoder: dims then row-major float64 payload."""
    pair = EncoderPair(
        image=init_params(EncoderConfig(2, 2, seed=3)),
        text=init_params(EncoderConfig(2, 2, seed=4)),
    )
    path = tmp_path / "model.ftam"
    save_model(pair, path)
    blob = path.read_bytes()
    assert blob[:4] == b"FTAM"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 2  # image input_dim
    assert int.from_bytes(blob[12:16], "little") == 2  # image output_dim
    assert int.from_bytes(blob[16:20], "little") == 0  # no hidden layer
    w = np.frombuffer(blob[20:52], dtype="<f8").reshape(2, 2)
    assert np.array_equal(w, pair.image.weights[0])


def test_model_bad_magic(tmp_path):
    path = tmp_path / "bad.ftam"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError):
        load_model(path)


def test_model_truncated(tmp_path):
    pair = EncoderPair(
        image=init_params(EncoderConfig(4, 3, seed=5)),
        text=init_params(EncoderConfig(4, 3, seed=6)),
    )
    path = tmp_path / "model.ftam"
    save_model(pair, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(FormatError):
        load_model(path)
