import json

import numpy as np
import pytest

from dsgp4kit.mlp import Adam, Mlp, Sgd


def numeric_grads(net, x, grad_out, h=1e-6):
    """Central differences of loss = sum(output * grad_out) per param."""
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = float(np.sum(net(x) * grad_out))
            p[idx] = orig - h
            down = float(np.sum(net(x) * grad_out))
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def test_zero_head_outputs_zero():
    net = Mlp((4, 8, 3), seed=1)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert np.all(net(rng.standard_normal(4)) == 0.0)
    assert np.all(net.weights[-1] == 0.0)
    assert all(np.all(b == 0.0) for b in net.biases)


def test_n_params_matches_layer_arithmetic():
    net = Mlp((7, 35, 35, 35, 6))
    expected = (7 * 35 + 35) + 2 * (35 * 35 + 35) + (35 * 6 + 6)
    assert net.n_params == expected
    assert len(net.params()) == 8


def test_needs_two_sizes():
    with pytest.raises(ValueError):
        Mlp((5,))


def test_forward_shapes_and_batch_consistency():
    net = Mlp((3, 6, 2), seed=2, zero_head=False)
    x1 = np.array([0.1, -0.4, 0.7])
    x2 = np.array([-0.3, 0.9, 0.2])
    single = net(x1)
    assert single.shape == (2,)
    batch = net(np.stack([x1, x2]))
    assert batch.shape == (2, 2)
    assert np.allclose(batch[0], single, rtol=1e-14, atol=1e-16)


def test_backward_matches_finite_differences():
    net = Mlp((3, 5, 4), seed=3, zero_head=False)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3))
    grad_out = rng.standard_normal((2, 4))
    _, cache = net.forward(x)
    grads, _ = net.backward(cache, grad_out)
    numeric = numeric_grads(net, x, grad_out)
    for g, ng in zip(grads, numeric):
        scale = max(np.abs(ng).max(), 1e-12)
        assert np.abs(g - ng).max() / scale < 1e-7


def test_backward_input_gradient_matches_finite_differences():
    net = Mlp((3, 5, 2), seed=5, zero_head=False)
    rng = np.random.default_rng(6)
    x = rng.standard_normal(3)
    grad_out = rng.standard_normal(2)
    _, cache = net.forward(x)
    _, gx = net.backward(cache, grad_out)
    h = 1e-6
    numeric = np.zeros(3)
    for k in range(3):
        up = np.array(x)
        up[k] += h
        down = np.array(x)
        down[k] -= h
        numeric[k] = float(np.sum((net(up) - net(down)) * grad_out)) / (2.0 * h)
    assert np.abs(gx[0] - numeric).max() < 1e-7


def test_seed_determinism():
    a = Mlp((4, 7, 2), seed=9)
    b = Mlp((4, 7, 2), seed=9)
    c = Mlp((4, 7, 2), seed=10)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc)
               for wa, wc in zip(a.weights, c.weights))


def test_copy_is_independent():
    net = Mlp((2, 3, 1), seed=0, zero_head=False)
    dup = net.copy()
    dup.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != dup.weights[0][0, 0]
    assert dup.sizes == net.sizes


def test_json_round_trip():
    net = Mlp((3, 4, 2), seed=7, zero_head=False)
    back = Mlp.from_json_dict(json.loads(json.dumps(net.to_json_dict())))
    assert back.sizes == net.sizes
    for wa, wb in zip(net.weights, back.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(net.biases, back.biases):
        assert np.array_equal(ba, bb)
    x = np.array([0.3, -0.2, 0.5])
    assert np.array_equal(back(x), net(x))


def test_sgd_step_is_plain_descent():
    p = np.array([1.0, 2.0])
    opt = Sgd([p], lr=0.5)
    opt.step([p], [np.array([0.2, -0.4])])
    assert np.array_equal(p, np.array([0.9, 2.2]))


def test_adam_first_step_is_signed_learning_rate():
    # bias correction makes the first update lr * g / (|g| + eps)
    p = np.array([0.0])
    opt = Adam([p], lr=0.01)
    opt.step([p], [np.array([5.0])])
    assert p[0] == pytest.approx(-0.01, rel=1e-6)


def test_adam_minimizes_quadratic():
    p = np.array([0.0])
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        opt.step([p], [2.0 * (p - 3.0)])
    assert abs(p[0] - 3.0) < 1e-3
