import numpy as np
import pytest

from solo9.autodiff import (ACTIVATIONS, Adam, Grads, NetParams, NonFiniteError, TapeError,
                            backward, forward, gradient_penalty, input_gradient_norm,
                            load_checkpoint, save_checkpoint)

SMOOTH = ["tanh", "elu", "softplus", "linear"]


def naive_forward(net, x):
    """Plain loop re-implementation used as the forward oracle."""
    h = list(x)
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = [sum(h[i] * w[i, j] for i in range(len(h))) + b[j] for j in range(w.shape[1])]
        z = np.array(z)
        if act == "tanh":
            h = list(np.tanh(z))
        elif act == "linear":
            h = list(z)
        elif act == "relu":
            h = list(np.maximum(z, 0))
        elif act == "elu":
            h = list(np.where(z > 0, z, np.exp(z) - 1))
        elif act == "softplus":
            h = list(np.log1p(np.exp(z)))
    return np.array(h)


def fd_param_grads(fn, net, h=1e-6):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = fn()
            p[idx] = old - h
            fm = fn()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_err(a, b):
    scale = max(np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / scale


def test_zero_net_gives_zero():
    net = NetParams.init([4, 5, 3], rng=0)
    for w, b in zip(net.weights, net.biases):
        w[:] = 0
        b[:] = 0
    y, _ = forward(net, np.arange(4.0))
    assert np.all(y == 0)


def test_identity_layer():
    net = NetParams([np.eye(3)], [np.zeros(3)], ["linear"])
    x = np.array([0.3, -2.0, 5.0])
    y, _ = forward(net, x)
    assert np.array_equal(y, x)


@pytest.mark.parametrize("act", SMOOTH + ["relu"])
def test_forward_matches_naive_oracle(act):
    rng = np.random.default_rng(1)
    net = NetParams.init([5, 7, 3], activation=act, rng=rng)
    x = rng.normal(size=5)
    y, _ = forward(net, x)
    np.testing.assert_allclose(y, naive_forward(net, x), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("act", SMOOTH)
def test_backward_matches_finite_differences(act):
    rng = np.random.default_rng(2)
    net = NetParams.init([4, 6, 5, 2], activation=act, rng=rng)
    x = rng.normal(size=(3, 4))
    dy = rng.normal(size=(3, 2))
    _, tape = forward(net, x)
    g = backward(tape, dy)
    fd = fd_param_grads(lambda: float((forward(net, x)[0] * dy).sum()), net)
    for a, b in zip(g.params(), fd):
        assert max_rel_err(a, b) < 1e-4


def test_input_gradient_of_linear_net_is_transpose_product():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 3))
    net = NetParams([w], [rng.normal(size=3)], ["linear"])
    dy = rng.normal(size=3)
    _, tape = forward(net, rng.normal(size=4))
    np.testing.assert_array_equal(backward(tape, dy).input, w @ dy)


def test_zero_dy_gives_zero_grads():
    net = NetParams.init([3, 4, 2], rng=4)
    _, tape = forward(net, np.ones(3))
    g = backward(tape, np.zeros(2))
    assert all(np.all(p == 0) for p in g.params())
    assert np.all(g.input == 0)


def test_reused_tape_raises():
    net = NetParams.init([3, 2], rng=0)
    _, tape = forward(net, np.ones(3))
    backward(tape, np.ones(2))
    with pytest.raises(TapeError):
        backward(tape, np.ones(2))


def test_shape_mismatch_raises():
    net = NetParams.init([3, 2], rng=0)
    with pytest.raises(ValueError):
        forward(net, np.ones(4))


def test_non_finite_output_raises():
    net = NetParams.init([2, 1], activation="linear", rng=0)
    with pytest.raises(NonFiniteError):
        forward(net, np.array([np.nan, 0.0]))


def test_input_gradient_norm_cases():
    const = NetParams([np.zeros((3, 1))], [np.array([2.0])], ["linear"])
    assert input_gradient_norm(const, np.ones(3)) == 0.0
    w = np.array([[3.0], [4.0]])
    lin = NetParams([w], [np.zeros(1)], ["linear"])
    assert input_gradient_norm(lin, np.array([0.1, 0.2])) == 5.0


def test_input_gradient_norm_matches_fd_jacobian():
    rng = np.random.default_rng(5)
    net = NetParams.init([4, 8, 1], rng=rng)
    x = rng.normal(size=4)
    h = 1e-6
    jac = np.array([(forward(net, x + h * e)[0][0] - forward(net, x - h * e)[0][0]) / (2 * h)
                    for e in np.eye(4)])
    assert abs(input_gradient_norm(net, x) - np.linalg.norm(jac)) < 1e-4 * np.linalg.norm(jac)


@pytest.mark.parametrize("act", ["tanh", "elu", "softplus"])
def test_gradient_penalty_matches_finite_differences(act):
    rng = np.random.default_rng(6)
    net = NetParams.init([3, 6, 5, 1], activation=act, rng=rng)
    x = rng.normal(size=(4, 3))
    p, g = gradient_penalty(net, x)
    np.testing.assert_allclose(p, input_gradient_norm(net, x) ** 2, rtol=1e-12)
    fd = fd_param_grads(lambda: float(gradient_penalty(net, x)[0].mean()), net)
    for a, b in zip(g.params(), fd):
        assert max_rel_err(a, b) < 1e-4


def test_adam_zero_grad_from_fresh_state_leaves_params():
    p = [np.array([1.0, -2.0])]
    opt = Adam(lr=0.1)
    opt.step(p, [np.zeros(2)])
    assert np.array_equal(p[0], [1.0, -2.0])
    assert np.all(opt.m[0] == 0) and np.all(opt.v[0] == 0)


def test_adam_moments_decay_on_zero_grad():
    p = [np.array([0.0])]
    opt = Adam(lr=0.1)
    opt.step(p, [np.array([1.0])])
    m, v = opt.m[0].copy(), opt.v[0].copy()
    opt.step(p, [np.array([0.0])])
    assert opt.m[0][0] == pytest.approx(0.9 * m[0])
    assert opt.v[0][0] == pytest.approx(0.999 * v[0])


def test_adam_hand_computed_three_steps():
    # hand calculation, lr=0.1, b1=0.9, b2=0.999, eps=1e-8, grads 1, -2, 0.5
    theta = 1.0
    m = v = 0.0
    for t, g in enumerate([1.0, -2.0, 0.5], start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    p = [np.array([1.0])]
    opt = Adam(lr=0.1)
    for g in [1.0, -2.0, 0.5]:
        opt.step(p, [np.array([g])])
    assert p[0][0] == pytest.approx(theta, abs=1e-15)
    # first step of Adam moves by exactly lr (up to eps)
    assert theta != 1.0


def test_adam_identical_nets_identical_updates():
    a = NetParams.init([3, 4, 1], rng=7)
    b = a.copy()
    g = [np.full_like(p, 0.3) for p in a.params()]
    oa, ob = Adam(), Adam()
    oa.step(a.params(), g)
    ob.step(b.params(), g)
    for x, y in zip(a.params(), b.params()):
        assert np.array_equal(x, y)


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        Adam().step([np.zeros(2)], [np.array([np.inf, 0.0])])


def test_checkpoint_round_trip(tmp_path):
    net = NetParams.init([3, 4, 2], rng=8)
    opt = Adam(lr=1e-3)
    opt.step(net.params(), [np.ones_like(p) for p in net.params()])
    path = tmp_path / "ck.npz"
    save_checkpoint(path, {"actor": net}, {"actor": opt}, step=17,
                    extra_arrays={"log_std": np.array([0.1, 0.2])}, meta={"seed": 3})
    ck = load_checkpoint(path)
    assert ck["step"] == 17 and ck["meta"] == {"seed": 3}
    for a, b in zip(ck["nets"]["actor"].params(), net.params()):
        assert np.array_equal(a, b)
    assert ck["optimizers"]["actor"].t == 1
    assert np.array_equal(ck["extra"]["log_std"], [0.1, 0.2])


def test_grads_helpers():
    net = NetParams.init([2, 2], rng=0)
    z = Grads.zeros_like(net)
    assert all(np.all(p == 0) for p in (z + z).scale(3.0).params())
    assert set(ACTIVATIONS) >= {"tanh", "linear", "relu", "elu", "softplus"}
