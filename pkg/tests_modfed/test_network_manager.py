from dataclasses import replace

import numpy as np
import pytest

from autodiff import Tensor, gradients, softmax_cross_entropy
from errors import ArchitectureError, EmptyDataError, ShapeError
from network_manager import (
    OPEN_GATE_VALUE, ArchConfig, ModulationParams, base_forward, gate, init_global, modulator_forward,
)


def batch_for(arch, seed, size=7):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(size, arch.input_dim)), rng.integers(0, arch.n_classes, size=size)


def model_loss(model, x, y):
    zeta = modulator_forward((x, y), model.mu, model.arch)
    return softmax_cross_entropy(base_forward(x, model.psi, zeta), y)


def with_random_biases(model, seed, scale=0.1):
    """Zero biases put rows with a dead first layer exactly on the next ReLU kink."""
    rng = np.random.default_rng(seed + 7_000)
    tensors = [
        Tensor(t.data + rng.normal(0.0, scale, size=t.shape), requires_grad=True) if t.data.ndim == 1 else t
        for t in model.tensors()
    ]
    return model.with_tensors(tensors)


def check_model_gradient(arch, seed):
    model = with_random_biases(init_global(arch, seed), seed)
    x, y = batch_for(arch, seed)
    params = model.tensors()
    analytic = gradients(model_loss(model, x, y), params)

    numeric = []
    for index, param in enumerate(params):
        grad = np.zeros(param.shape)
        for pos in np.ndindex(param.shape):
            values = []
            for sign in (1.0, -1.0):
                data = param.numpy()
                data[pos] += sign * 1e-5
                shifted = params[:index] + [Tensor(data)] + params[index + 1:]
                values.append(model_loss(model.with_tensors(shifted), x, y).item())
            grad[pos] = (values[0] - values[1]) / 2e-5
        numeric.append(grad)

    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    assert np.linalg.norm(a - n) / (np.linalg.norm(a) + np.linalg.norm(n)) < 1e-4
    return a


@pytest.mark.parametrize("seed", range(20))
def test_modulated_network_gradient_matches_finite_differences(tiny_arch, seed):
    check_model_gradient(tiny_arch, seed)


@pytest.mark.parametrize("seed", range(5))
def test_affine_network_gradient_matches_finite_differences(tiny_arch, seed):
    check_model_gradient(replace(tiny_arch, modulation_mode="affine"), seed)


def test_modulator_gradient_is_nonzero(tiny_arch):
    model = init_global(tiny_arch, 0)
    x, y = batch_for(tiny_arch, 0)
    grads = gradients(model_loss(model, x, y), model.mu.tensors())
    assert any(np.any(g != 0) for g in grads)


def test_init_is_deterministic(tiny_arch):
    a, b = init_global(tiny_arch, 5), init_global(tiny_arch, 5)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.tensors(), b.tensors()))
    c = init_global(tiny_arch, 6)
    assert not np.array_equal(a.psi.weights[0].data, c.psi.weights[0].data)


def test_parameter_shapes(tiny_arch):
    model = init_global(tiny_arch, 0)
    assert [w.shape for w in model.psi.weights] == [(4, 6), (6, 5), (5, 3)]
    assert model.mu.joint.weights[0].shape == (5 + 3, 5)
    assert model.mu.head.weights[-1].shape == (4, 11)
    assert all(np.array_equal(b.data, np.zeros(b.shape)) for b in model.psi.biases)


@pytest.mark.parametrize("seed", range(100))
def test_modulator_is_permutation_invariant(tiny_arch, seed):
    model = init_global(tiny_arch, seed % 7)
    x, y = batch_for(tiny_arch, seed, size=9)
    perm = np.random.default_rng(seed + 500).permutation(9)
    original = modulator_forward((x, y), model.mu, tiny_arch).as_arrays()
    permuted = modulator_forward((x[perm], y[perm]), model.mu, tiny_arch).as_arrays()
    for a, b in zip(original, permuted):
        assert np.max(np.abs(a - b)) < 1e-9


def test_modulator_output_widths(tiny_arch):
    model = init_global(tiny_arch, 0)
    zeta = modulator_forward(batch_for(tiny_arch, 0), model.mu, tiny_arch)
    assert [t.shape for t in zeta.scales] == [(6,), (5,)]
    assert zeta.shifts == ()

    affine = replace(tiny_arch, modulation_mode="affine")
    film = modulator_forward(batch_for(affine, 0), init_global(affine, 0).mu, affine)
    assert [t.shape for t in film.shifts] == [(6,), (5,)]


def test_gate_factors_lie_strictly_between_zero_and_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        activations = Tensor(np.abs(rng.normal(size=(4, 6))) + 0.1)
        zeta = Tensor(rng.uniform(-10, 10, size=6))
        factors = gate(activations, zeta).data / activations.data
        assert np.all(factors > 0.0) and np.all(factors < 1.0)


def test_saturated_gates_pass_or_block_activations():
    activations = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
    opened = gate(activations, Tensor(np.full(4, OPEN_GATE_VALUE))).data
    closed = gate(activations, Tensor(np.full(4, -OPEN_GATE_VALUE))).data
    assert np.max(np.abs(opened - activations.data)) < 1e-9
    assert np.max(np.abs(closed)) < 1e-9


def test_gate_width_mismatch():
    with pytest.raises(ShapeError):
        gate(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_open_mode_matches_plain_network(tiny_arch):
    arch = replace(tiny_arch, modulation_mode="open")
    model = init_global(arch, 2)
    x, y = batch_for(arch, 2)
    zeta = modulator_forward((x, y), model.mu, arch)
    assert zeta.mode == "open"
    assert np.array_equal(base_forward(x, model.psi, zeta).data, base_forward(x, model.psi).data)


def test_identity_film_matches_plain_network(tiny_arch):
    model = init_global(tiny_arch, 4)
    x, _ = batch_for(tiny_arch, 4)
    zeta = ModulationParams.identity_film(tiny_arch.hidden_widths)
    assert np.allclose(base_forward(x, model.psi, zeta).data, base_forward(x, model.psi).data)


def test_empty_modulation_batch(tiny_arch):
    model = init_global(tiny_arch, 0)
    with pytest.raises(EmptyDataError, match="empty modulation batch"):
        modulator_forward((np.zeros((0, 4)), np.zeros(0, dtype=int)), model.mu, tiny_arch)


def test_base_forward_shape_errors(tiny_arch):
    model = init_global(tiny_arch, 0)
    with pytest.raises(ShapeError):
        base_forward(np.ones((2, 5)), model.psi)
    with pytest.raises(ShapeError):
        base_forward(np.ones((2, 4)), model.psi, ModulationParams.open_gates((6,)))


def test_with_tensors_rejects_wrong_shapes(tiny_arch):
    model = init_global(tiny_arch, 0)
    tensors = model.tensors()
    tensors[-1] = Tensor(np.zeros(7))
    with pytest.raises(ShapeError):
        model.with_tensors(tensors)


@pytest.mark.parametrize("kwargs", [
    {"input_dim": 0},
    {"n_classes": 1},
    {"hidden_widths": ()},
    {"hidden_widths": (4, 0)},
    {"modulation_mode": "bogus"},
])
def test_invalid_architecture(tiny_arch, kwargs):
    with pytest.raises(ArchitectureError):
        replace(tiny_arch, **kwargs).validate()


def test_zeta_width_doubles_in_affine_mode(tiny_arch):
    assert tiny_arch.zeta_width == 11
    assert replace(tiny_arch, modulation_mode="affine").zeta_width == 22
    assert isinstance(tiny_arch.validate(), ArchConfig)


def test_modulator_ignores_duplicated_examples(tiny_arch):
    model = init_global(tiny_arch, 3)
    x, y = batch_for(tiny_arch, 3, size=6)
    once = modulator_forward((x, y), model.mu, tiny_arch).as_arrays()
    twice = modulator_forward((np.concatenate([x, x]), np.concatenate([y, y])), model.mu, tiny_arch).as_arrays()
    for a, b in zip(once, twice):
        assert np.max(np.abs(a - b)) < 1e-12


def dense_relu(x, stack, relu_last):
    pairs = list(zip(stack.weights, stack.biases))
    for index, (w, b) in enumerate(pairs):
        x = x @ w.data + b.data
        if relu_last or index < len(pairs) - 1:
            x = np.maximum(x, 0.0)
    return x


def test_modulator_matches_straight_line_recomputation(tiny_arch):
    model = with_random_biases(init_global(tiny_arch, 8), 8)
    x = np.array([[0.5, -1.0, 2.0, 0.0], [1.5, 0.25, -0.5, 1.0]])
    y = np.array([2, 0])

    features = dense_relu(x, model.mu.feature, relu_last=True)
    joint = dense_relu(np.hstack([features, np.eye(3)[y]]), model.mu.joint, relu_last=True)
    z = joint.mean(axis=0)
    flat = dense_relu(z.reshape(1, -1), model.mu.head, relu_last=False).reshape(-1)

    zeta = modulator_forward((x, y), model.mu, tiny_arch)
    assert np.allclose(zeta.scales[0].data, flat[:6], rtol=0, atol=1e-12)
    assert np.allclose(zeta.scales[1].data, flat[6:11], rtol=0, atol=1e-12)


def test_two_layer_base_forward_matches_hand_rolled_pass():
    arch = ArchConfig(input_dim=3, hidden_widths=(4,), n_classes=2,
                      modulator_feature_dims=(3,), modulator_head_dims=(3,))
    model = with_random_biases(init_global(arch, 11), 11)
    (w1, b1, w2, b2) = [t.data for t in model.psi.tensors()]
    x = np.random.default_rng(11).normal(size=(5, 3))
    zeta = np.array([-1.0, 0.0, 0.5, 2.0])

    hidden = np.maximum(x @ w1 + b1, 0.0) * (1.0 / (1.0 + np.exp(-zeta)))
    expected = hidden @ w2 + b2
    logits = base_forward(x, model.psi, ModulationParams(scales=(Tensor(zeta),)))
    assert np.allclose(logits.data, expected, rtol=0, atol=1e-12)


def test_closed_gates_leave_only_the_output_bias(tiny_arch):
    model = with_random_biases(init_global(tiny_arch, 6), 6)
    x, _ = batch_for(tiny_arch, 6)
    closed = ModulationParams(scales=tuple(Tensor(np.full(w, -OPEN_GATE_VALUE)) for w in tiny_arch.hidden_widths))
    logits = base_forward(x, model.psi, closed).data
    expected = np.broadcast_to(model.psi.biases[-1].data, logits.shape)
    assert np.max(np.abs(logits - expected)) < 1e-9


def test_init_weight_scale_follows_fan_in():
    arch = ArchConfig(input_dim=1000, hidden_widths=(1000,), n_classes=2,
                      modulator_feature_dims=(4,), modulator_head_dims=(4,))
    weights = init_global(arch, 0).psi.weights[0].data
    target = 1.0 / np.sqrt(1000)
    assert abs(weights.std() - target) < 0.2 * target
