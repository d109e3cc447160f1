"""Tests for the dense network and the Adam optimizer."""

import numpy as np
import pytest

from cwbc.nn import AdamConfig, AdamState, DenseNet, NetCheckpoint, adam_step


def numeric_gradient(
    net: DenseNet, inputs: np.ndarray, targets: np.ndarray, h: float = 1e-5
) -> list[np.ndarray]:
    """Central finite differences of the mean squared error."""
    grads = []
    for param in net.parameters():
        grad = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + h
            plus = net.backward(inputs, targets).loss
            param[index] = original - h
            minus = net.backward(inputs, targets).loss
            param[index] = original
            grad[index] = (plus - minus) / (2 * h)
        grads.append(grad)
    return grads


def test_init_is_deterministic() -> None:
    """Parameters are fully determined by the seed."""
    first = DenseNet.init((3, 5, 2), seed=7)
    second = DenseNet.init((3, 5, 2), seed=7)
    third = DenseNet.init((3, 5, 2), seed=8)

    for a, b in zip(first.parameters(), second.parameters(), strict=True):
        assert np.array_equal(a, b)
    assert not np.array_equal(first.weights[0], third.weights[0])


def test_forward_accepts_vectors_and_batches() -> None:
    """Single inputs give single outputs; batches keep their leading dimension."""
    net = DenseNet.init((3, 4, 2), seed=0)
    batch = np.arange(6, dtype=np.float64).reshape(2, 3)

    assert net.forward(batch).shape == (2, 2)
    assert np.array_equal(net.forward(batch[0]), net.forward(batch)[0])
    with pytest.raises(ValueError):
        net.forward(np.zeros(4))


def test_backward_matches_finite_differences() -> None:
    """Analytic gradients agree with central differences."""
    rng = np.random.default_rng(1)
    net = DenseNet.init((3, 6, 5, 2), seed=2)
    for bias in net.biases:
        bias[...] = rng.normal(scale=0.1, size=bias.shape)
    inputs = rng.normal(size=(8, 3))
    targets = rng.normal(size=(8, 2))

    result = net.backward(inputs, targets)
    expected = numeric_gradient(net, inputs, targets)

    for analytic, numeric in zip(result.grads, expected, strict=True):
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_backward_reports_weighted_loss() -> None:
    """The loss is the weighted sum of per-sample squared errors."""
    net = DenseNet.init((2, 3, 1), seed=0)
    inputs = np.array([[0.0, 1.0], [1.0, 0.0]])
    targets = np.array([[1.0], [-1.0]])
    result = net.backward(inputs, targets, sample_weights=[0.25, 0.75])

    expected = 0.25 * result.sample_errors[0] + 0.75 * result.sample_errors[1]

    assert result.loss == pytest.approx(expected)
    with pytest.raises(ValueError):
        net.backward(inputs, targets, sample_weights=[1.0])


def test_dropout_only_applies_in_training_mode() -> None:
    """Inference ignores dropout and training needs a generator."""
    net = DenseNet.init((2, 16, 1), seed=0, dropout=0.5)
    inputs = np.ones((4, 2))
    plain = DenseNet(net.dims, net.weights, net.biases)

    assert np.array_equal(net.forward(inputs), plain.forward(inputs))
    with pytest.raises(ValueError, match="random generator"):
        net.forward(inputs, mode="train")

    first = net.forward(inputs, mode="train", rng=np.random.default_rng(3))
    second = net.forward(inputs, mode="train", rng=np.random.default_rng(3))
    assert np.array_equal(first, second)


def test_dropout_is_inverted() -> None:
    """Scaled masks keep hidden activations unbiased."""
    net = DenseNet.init((1, 1, 1), seed=0, dropout=0.25)
    net.weights[0][...] = 1.0
    net.weights[1][...] = 1.0
    inputs = np.ones((200_000, 1))
    outputs = net.forward(inputs, mode="train", rng=np.random.default_rng(0))

    assert np.unique(outputs) == pytest.approx([0.0, 1 / 0.75])
    assert outputs.mean() == pytest.approx(1.0, abs=0.01)


def test_invalid_shapes_are_rejected() -> None:
    """Layer shapes must agree with the declared dimensions."""
    with pytest.raises(ValueError):
        DenseNet((2, 3), [np.zeros((3, 2))], [np.zeros(3)])
    with pytest.raises(ValueError):
        DenseNet.init((2, 3), seed=0, dropout=1.0)


def test_checkpoint_restores_identical_network() -> None:
    """A restored network has bit-identical parameters."""
    net = DenseNet.init((3, 7, 2), seed=4, dropout=0.1)
    restored = DenseNet.from_checkpoint(
        NetCheckpoint.model_validate_json(
            net.to_checkpoint("abc").model_dump_json()
        )
    )

    assert restored.dims == net.dims
    assert restored.dropout == net.dropout
    for a, b in zip(net.parameters(), restored.parameters(), strict=True):
        assert np.array_equal(a, b)


def test_first_adam_step_moves_by_learning_rate() -> None:
    """Bias correction makes the first update the sign of the gradient."""
    params = [np.array([1.0, -2.0, 3.0])]
    grads = [np.array([0.5, -4.0, 0.0])]
    state = AdamState.create(params, AdamConfig(learning_rate=0.1, weight_decay=0.0))

    adam_step(params, grads, state)

    assert state.step == 1
    assert params[0] == pytest.approx([0.9, -1.9, 3.0])


def test_adam_steps_stay_at_learning_rate_under_constant_gradient() -> None:
    """A constant gradient moves the parameters by the learning rate at every step."""
    params = [np.array([1.0, -2.0])]
    grads = [np.array([0.5, -3.0])]
    state = AdamState.create(params, AdamConfig(learning_rate=0.01, weight_decay=0.0))

    previous = params[0].copy()
    for _ in range(100):
        adam_step(params, grads, state)
        assert params[0] - previous == pytest.approx([-0.01, 0.01], rel=1e-6)
        previous = params[0].copy()

    assert state.step == 100
    assert params[0] == pytest.approx([0.0, -1.0], abs=1e-6)


def test_adam_applies_decoupled_weight_decay() -> None:
    """With zero gradients, parameters shrink by the decay rate."""
    params = [np.array([2.0])]
    state = AdamState.create(params, AdamConfig(learning_rate=0.1, weight_decay=0.5))

    adam_step(params, [np.zeros(1)], state)

    assert params[0] == pytest.approx([1.9])


def test_adam_rejects_mismatched_gradients() -> None:
    """Gradients must match the parameters."""
    params = [np.zeros(2)]
    state = AdamState.create(params)

    with pytest.raises(ValueError):
        adam_step(params, [np.zeros(3)], state)
