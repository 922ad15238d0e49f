"""Layer engine: forward oracles, gradients, SGD, and shape validation."""

import numpy as np
import pytest

from fedwarm import rng
from fedwarm.errors import ConfigError, ContractError, ShapeError
from fedwarm.nn import (
    Batch,
    Conv2d,
    Dense,
    Flatten,
    ModelSpec,
    ModelWeights,
    Relu,
    backward,
    forward,
    frozen_region,
    gradient_check,
    init_weights,
    layer_shapes,
    layer_slices,
    loss_at,
    predict,
    sgd_step,
    softmax_cross_entropy,
    validate_spec,
)
from fedwarm.presets import GRADCHECK_SETUPS, build_model_preset


def dense_spec():
    return ModelSpec((Dense(5, 4), Relu(), Dense(4, 3)), (5,), 3)


def conv_spec(stride=1):
    h_out = (6 - 3) // stride + 1
    return ModelSpec(
        (Conv2d(2, 3, 3, stride=stride), Relu(), Flatten(), Dense(3 * h_out * h_out, 4)),
        (6, 6, 2),
        4,
    )


# ---------------------------------------------------------------------------
# forward oracles


def naive_dense_forward(params, sl, layer, x):
    block = params[sl]
    w = block[: layer.in_dim * layer.out_dim].reshape(layer.in_dim, layer.out_dim)
    b = block[layer.in_dim * layer.out_dim :]
    out = np.zeros((x.shape[0], layer.out_dim), dtype=np.float64)
    for r in range(x.shape[0]):
        for j in range(layer.out_dim):
            out[r, j] = float(np.dot(x[r].astype(np.float64), w[:, j])) + b[j]
    return out


def test_dense_forward_matches_naive_loops():
    spec = dense_spec()
    weights = init_weights(spec, 3)
    gen = rng.stream(99, 0)
    x = gen.random((4, 5)).astype(np.float32)
    logits, _ = forward(spec, weights, Batch(x, np.zeros(4, dtype=np.int64)))

    slices = layer_slices(weights)
    h = naive_dense_forward(weights.params, slices[0], spec.layers[0], x)
    h = np.maximum(h, 0.0)
    ref = naive_dense_forward(weights.params, slices[1], spec.layers[2], h)
    np.testing.assert_allclose(logits, ref, rtol=1e-5, atol=1e-6)


def naive_conv_forward(params, sl, layer, x_chw):
    k, s = layer.kernel_size, layer.stride
    block = params[sl]
    w = block[: layer.out_channels * layer.in_channels * k * k].reshape(
        layer.out_channels, layer.in_channels, k, k
    )
    b = block[layer.out_channels * layer.in_channels * k * k :]
    bsz, c, h, wd = x_chw.shape
    ho, wo = (h - k) // s + 1, (wd - k) // s + 1
    out = np.zeros((bsz, layer.out_channels, ho, wo), dtype=np.float64)
    for r in range(bsz):
        for oc in range(layer.out_channels):
            for i in range(ho):
                for j in range(wo):
                    patch = x_chw[r, :, i * s : i * s + k, j * s : j * s + k]
                    out[r, oc, i, j] = float(np.sum(patch.astype(np.float64) * w[oc])) + b[oc]
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_forward_matches_naive_loops(stride):
    spec = conv_spec(stride)
    weights = init_weights(spec, 5)
    gen = rng.stream(17, 0)
    # rows are flattened (h, w, c); the engine works channel-first internally
    x_hwc = gen.random((2, 6, 6, 2)).astype(np.float32)
    x_flat = x_hwc.reshape(2, -1)
    logits, _ = forward(spec, weights, Batch(x_flat, np.zeros(2, dtype=np.int64)))

    x_chw = x_hwc.transpose(0, 3, 1, 2)
    slices = layer_slices(weights)
    conv_out = naive_conv_forward(weights.params, slices[0], spec.layers[0], x_chw)
    h = np.maximum(conv_out, 0.0)
    flat = h.reshape(2, -1)  # engine flattens channel-first
    ref = naive_dense_forward(weights.params, slices[1], spec.layers[3], flat)
    np.testing.assert_allclose(logits, ref, rtol=1e-5, atol=1e-6)


def test_forward_rejects_wrong_feature_count():
    spec = dense_spec()
    weights = init_weights(spec, 0)
    with pytest.raises(ShapeError):
        forward(spec, weights, Batch(np.zeros((2, 7), dtype=np.float32),
                                     np.zeros(2, dtype=np.int64)))


# ---------------------------------------------------------------------------
# cross-entropy


def test_cross_entropy_uniform_logits():
    logits = np.zeros((3, 5), dtype=np.float32)
    loss, grad = softmax_cross_entropy(logits, np.array([0, 2, 4]))
    assert loss == pytest.approx(np.log(5.0), rel=1e-6)
    # each row: (1/M - onehot) / batch
    expected = np.full((3, 5), 0.2 / 3)
    expected[0, 0] -= 1 / 3
    expected[1, 2] -= 1 / 3
    expected[2, 4] -= 1 / 3
    np.testing.assert_allclose(grad, expected, rtol=1e-5, atol=1e-7)


def test_cross_entropy_hand_example():
    # single row [ln 1, ln 3]: softmax = [0.25, 0.75]
    logits = np.array([[0.0, np.log(3.0)]], dtype=np.float64)
    loss, grad = softmax_cross_entropy(logits, np.array([1]))
    assert loss == pytest.approx(-np.log(0.75), rel=1e-9)
    np.testing.assert_allclose(grad, [[0.25, -0.25]], rtol=1e-9)


def test_cross_entropy_confident_wrong_is_finite():
    logits = np.array([[1000.0, -1000.0]], dtype=np.float64)
    loss, _ = softmax_cross_entropy(logits, np.array([1]))
    assert np.isfinite(loss)
    assert loss == pytest.approx(-np.log(1e-12), rel=1e-6)


def test_cross_entropy_grad_matches_finite_differences():
    gen = rng.stream(7, 0)
    logits = gen.standard_normal((4, 6))
    labels = gen.integers(0, 6, size=4)
    _, grad = softmax_cross_entropy(logits, labels)
    eps = 1e-6
    for r in range(4):
        for c in range(6):
            bumped = logits.copy()
            bumped[r, c] += eps
            lp, _ = softmax_cross_entropy(bumped, labels)
            bumped[r, c] -= 2 * eps
            lm, _ = softmax_cross_entropy(bumped, labels)
            fd = (lp - lm) / (2 * eps)
            assert grad[r, c] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(ContractError):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


# ---------------------------------------------------------------------------
# backward / gradient check


def test_backward_requires_matching_cache():
    spec = dense_spec()
    w1 = init_weights(spec, 1)
    w2 = init_weights(spec, 2)
    x = np.zeros((2, 5), dtype=np.float32)
    batch = Batch(x, np.zeros(2, dtype=np.int64))
    logits, cache = forward(spec, w1, batch)
    _, grad_logits = softmax_cross_entropy(logits, batch.labels)
    with pytest.raises(ContractError):
        backward(spec, w2, cache, grad_logits)


@pytest.mark.parametrize("preset", sorted(GRADCHECK_SETUPS))
def test_gradient_check_all_presets(preset):
    input_shape, num_classes, batch_rows = GRADCHECK_SETUPS[preset]
    spec = build_model_preset(preset, input_shape, num_classes)
    weights = init_weights(spec, 42)
    gen = rng.stream(42, rng.GRADCHECK)
    features = int(np.prod(input_shape))
    inputs = gen.random((batch_rows, features)).astype(np.float32)
    labels = gen.integers(0, num_classes, size=batch_rows)
    weights.params[:] += gen.uniform(-0.05, 0.05, size=weights.params.shape[0]).astype(np.float32)
    err = gradient_check(spec, weights, Batch(inputs, labels), epsilon=1e-4)
    assert err < 1e-4


def test_gradient_check_is_tight_without_relu():
    # no kinks anywhere: every parameter participates and the match is sharp
    spec = ModelSpec((Dense(3, 2),), (3,), 2)
    weights = init_weights(spec, 0)
    weights.params[:] += 0.3
    gen = rng.stream(1, 0)
    batch = Batch(gen.random((3, 3)).astype(np.float32), gen.integers(0, 2, size=3))
    err = gradient_check(spec, weights, batch, epsilon=1e-4)
    assert err < 1e-6


def test_loss_at_matches_forward_plus_cross_entropy():
    spec = dense_spec()
    weights = init_weights(spec, 21)
    gen = rng.stream(21, 0)
    x = gen.random((3, 5)).astype(np.float32)
    labels = gen.integers(0, 3, size=3)
    logits, _ = forward(spec, weights, Batch(x, labels))
    expected, _ = softmax_cross_entropy(logits, labels)
    got = loss_at(spec, weights.params, x, labels)
    assert got == pytest.approx(expected, rel=1e-6)


# ---------------------------------------------------------------------------
# sgd_step and freezing


def test_sgd_step_arithmetic():
    spec = ModelSpec((Dense(1, 1),), (1,), 1)
    weights = ModelWeights(np.array([1.0, 0.0], dtype=np.float32), (0,), 0)
    out = sgd_step(weights, np.array([0.5, 0.0], dtype=np.float32), 0.1)
    assert out.params[0] == pytest.approx(0.95)
    assert weights.params[0] == 1.0  # input untouched


def test_sgd_step_skips_frozen_prefix():
    spec = ModelSpec((Dense(2, 2), Relu(), Dense(2, 2)), (2,), 2)
    weights = init_weights(spec, 8)
    frozen = ModelWeights(weights.params.copy(), weights.layer_offsets, 1)
    grad = np.ones_like(frozen.params)
    stepped = sgd_step(frozen, grad, 0.5)
    region = frozen_region(frozen)
    assert np.array_equal(stepped.params[region], frozen.params[region])
    live = slice(region.stop, frozen.params.shape[0])
    np.testing.assert_allclose(stepped.params[live], frozen.params[live] - 0.5)


def test_sgd_step_rejects_nonpositive_lr():
    weights = ModelWeights(np.zeros(2, dtype=np.float32), (0,), 0)
    with pytest.raises(ConfigError):
        sgd_step(weights, np.zeros(2, dtype=np.float32), 0.0)


# ---------------------------------------------------------------------------
# predict


def test_predict_breaks_ties_to_lowest_index():
    # one dense layer with zero weights: all logits equal
    spec = ModelSpec((Dense(2, 3),), (2,), 3)
    weights = ModelWeights(np.zeros(2 * 3 + 3, dtype=np.float32), (0,), 0)
    preds = predict(spec, weights, np.ones((4, 2), dtype=np.float32))
    assert preds.tolist() == [0, 0, 0, 0]


def test_predict_chunking_is_invisible():
    spec = dense_spec()
    weights = init_weights(spec, 4)
    gen = rng.stream(11, 0)
    x = gen.random((4100, 5)).astype(np.float32)  # crosses the 2048 chunk edge
    whole = predict(spec, weights, x)
    parts = np.concatenate([predict(spec, weights, x[:3000]), predict(spec, weights, x[3000:])])
    assert np.array_equal(whole, parts)


# ---------------------------------------------------------------------------
# shapes, validation, init


def test_layer_shapes_tracks_conv_geometry():
    spec = conv_spec(stride=1)
    shapes = layer_shapes(spec)
    assert shapes[0] == (3, 4, 4)
    assert shapes[2] == (48,)
    assert shapes[3] == (4,)


def test_validate_spec_names_offending_pair():
    spec = ModelSpec((Dense(5, 4), Dense(3, 2)), (5,), 2)
    with pytest.raises(ShapeError, match="layer 1"):
        validate_spec(spec)


def test_validate_spec_rejects_conv_after_flatten():
    spec = ModelSpec((Flatten(), Conv2d(1, 2, 3)), (4, 4, 1), 2)
    with pytest.raises(ShapeError, match="conv2d"):
        validate_spec(spec)


def test_validate_spec_rejects_wrong_tail_width():
    spec = ModelSpec((Dense(5, 4),), (5,), 3)
    with pytest.raises(ShapeError, match="expected"):
        validate_spec(spec)


def test_kernel_larger_than_input_is_rejected():
    spec = ModelSpec((Conv2d(1, 2, 5), Flatten(), Dense(2, 2)), (4, 4, 1), 2)
    with pytest.raises(ShapeError, match="kernel"):
        validate_spec(spec)


def test_init_weights_deterministic_and_bounded():
    spec = dense_spec()
    a = init_weights(spec, 123)
    b = init_weights(spec, 123)
    c = init_weights(spec, 124)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)

    slices = layer_slices(a)
    first = spec.layers[0]
    bound = np.sqrt(6.0 / (first.in_dim + first.out_dim))
    block = a.params[slices[0]]
    w = block[: first.in_dim * first.out_dim]
    bias = block[first.in_dim * first.out_dim :]
    assert np.all(np.abs(w) <= bound)
    assert np.all(bias == 0.0)


def test_batch_validation():
    with pytest.raises(ShapeError):
        Batch(np.zeros((3, 2, 1), dtype=np.float32), np.zeros(3, dtype=np.int64))
    with pytest.raises(ShapeError):
        Batch(np.zeros((3, 2), dtype=np.float32), np.zeros(4, dtype=np.int64))


def test_rng_streams_are_independent():
    a = rng.stream(1, 2, 3).random(4)
    b = rng.stream(1, 2, 3).random(4)
    c = rng.stream(1, 2, 4).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        rng.stream(-1, 0)
