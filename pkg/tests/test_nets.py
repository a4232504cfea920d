"""Unit and oracle tests for the MLP, its autodiff paths, Adam, EMA, checkpoints."""

import math

import numpy as np
import pytest

from otmeanflow import nets


def make_params(rng, data_dim=2, width=8, depth=2, embed_dim=4, activation="tanh"):
    return nets.init_mlp(
        data_dim=data_dim,
        hidden_width=width,
        hidden_depth=depth,
        activation=activation,
        time_embed_dim=embed_dim,
        rng=rng,
    )


def zero_params(data_dim=2, width=8, embed_dim=4):
    p = make_params(np.random.default_rng(0), data_dim, width, 1, embed_dim)
    for W in p.weights:
        W[:] = 0.0
    for b in p.biases:
        b[:] = 0.0
    return p


def reference_forward(params, x, t, r):
    """Independent re-implementation of the forward pass with plain loops."""
    x = np.atleast_2d(np.asarray(x, float))
    out = []
    for i in range(x.shape[0]):
        ti = float(np.broadcast_to(t, (x.shape[0],))[i])
        ri = float(np.broadcast_to(r, (x.shape[0],))[i])
        feats = list(x[i])
        for s in (ti, ti - ri):
            for f in params.time_embed.frequencies:
                feats.append(math.sin(f * s))
            for f in params.time_embed.frequencies:
                feats.append(math.cos(f * s))
        a = np.array(feats)
        for k, (W, b) in enumerate(zip(params.weights, params.biases)):
            z = W @ a + b
            if k == len(params.weights) - 1:
                a = z
            elif params.activation == "tanh":
                a = np.tanh(z)
            else:
                raise NotImplementedError
        out.append(a)
    return np.array(out)


# ---------------------------------------------------------------------------
# forward


def test_forward_zero_network_returns_zero():
    p = zero_params()
    out = nets.forward(p, np.array([[0.3, -1.2], [2.0, 0.1]]), 0.7, 0.2)
    np.testing.assert_array_equal(out, np.zeros((2, 2)))


def test_forward_single_linear_identity_on_x_channels():
    p = zero_params()
    # collapse to one linear layer passing x straight through
    p.weights = [np.zeros((2, p.input_dim))]
    p.biases = [np.zeros(2)]
    p.weights[0][0, 0] = 1.0
    p.weights[0][1, 1] = 1.0
    out = nets.forward(p, np.array([1.0, 2.0]), 0.5, 0.5)
    np.testing.assert_allclose(out, [[1.0, 2.0]], atol=0)


def test_forward_matches_reference_implementation():
    p = make_params(np.random.default_rng(7))
    x = np.array([[0.3, -0.1], [1.5, 0.4], [-2.0, 0.9]])
    got = nets.forward(p, x, 0.7, 0.2)
    want = reference_forward(p, x, 0.7, 0.2)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_forward_rejects_bad_inputs():
    p = make_params(np.random.default_rng(0))
    with pytest.raises(ValueError):
        nets.forward(p, np.array([[np.nan, 0.0]]), 0.5, 0.2)
    with pytest.raises(ValueError):
        nets.forward(p, np.array([[0.0, 0.0]]), 0.2, 0.5)  # r > t
    with pytest.raises(ValueError):
        nets.forward(p, np.zeros((1, 3)), 0.5, 0.2)  # wrong dim


# ---------------------------------------------------------------------------
# forward-mode JVP


def test_jvp_zero_direction_gives_zero_tangent():
    p = make_params(np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(4, 2))
    value, tangent = nets.forward_jvp(p, x, 0.8, 0.3, np.zeros_like(x), 0.0, 0.0)
    np.testing.assert_array_equal(tangent, np.zeros_like(x))
    np.testing.assert_array_equal(value, nets.forward(p, x, 0.8, 0.3))


def test_jvp_is_linear_in_the_direction():
    rng = np.random.default_rng(3)
    p = make_params(rng)
    x = rng.normal(size=(3, 2))
    dx = rng.normal(size=(3, 2))
    _, tan1 = nets.forward_jvp(p, x, 0.9, 0.1, dx, 0.5, -0.3)
    _, tan2 = nets.forward_jvp(p, x, 0.9, 0.1, 2 * dx, 1.0, -0.6)
    np.testing.assert_allclose(tan2, 2.0 * tan1, rtol=1e-12)


def _fd_tangent(p, x, t, r, dx, dt, dr, h=1e-5):
    hi = nets.forward(p, x + h * dx, t + h * dt, r + h * dr)
    lo = nets.forward(p, x - h * dx, t - h * dt, r - h * dr)
    return (hi - lo) / (2 * h)


def test_jvp_matches_central_finite_differences():
    rng = np.random.default_rng(4)
    for trial in range(120):
        p = make_params(rng, width=int(rng.integers(3, 10)), depth=int(rng.integers(1, 4)))
        x = rng.normal(size=(1, 2))
        t = float(rng.uniform(0.3, 0.9))
        r = float(rng.uniform(0.1, t - 0.2))
        dx = rng.normal(size=(1, 2))
        dt = float(rng.normal())
        dr = float(rng.normal())
        _, tangent = nets.forward_jvp(p, x, t, r, dx, dt, dr)
        fd = _fd_tangent(p, x, t, r, dx, dt, dr)
        denom = np.abs(fd) + 1e-8
        assert np.max(np.abs(tangent - fd) / denom) < 1e-4, f"trial {trial}"


def test_jvp_value_bit_equals_forward():
    rng = np.random.default_rng(5)
    p = make_params(rng)
    x = rng.normal(size=(6, 2))
    value, _ = nets.forward_jvp(p, x, 0.6, 0.2, rng.normal(size=(6, 2)), 1.0, 0.0)
    np.testing.assert_array_equal(value, nets.forward(p, x, 0.6, 0.2))


# ---------------------------------------------------------------------------
# reverse-mode parameter gradients


def test_backward_zero_gradient_at_perfect_fit():
    rng = np.random.default_rng(6)
    p = make_params(rng)
    x = rng.normal(size=(5, 2))
    y = nets.forward(p, x, 0.7, 0.1)
    loss, gw, gb = nets.backward(p, x, 0.7, 0.1, y)
    assert loss == 0.0
    for g in gw + gb:
        np.testing.assert_allclose(g, 0.0, atol=1e-14)


def test_backward_single_linear_layer_closed_form():
    p = zero_params()
    rng = np.random.default_rng(8)
    W = rng.normal(size=(2, p.input_dim))
    p.weights = [W.copy()]
    p.biases = [np.zeros(2)]
    x = rng.normal(size=(1, 2))
    y = rng.normal(size=(1, 2))
    loss, gw, gb = nets.backward(p, x, 0.4, 0.4, y)
    z = np.concatenate(
        [x[0], p.time_embed.embed(np.array([0.4]))[0], p.time_embed.embed(np.array([0.0]))[0]]
    )
    pred = W @ z
    np.testing.assert_allclose(gw[0], np.outer(2 * (pred - y[0]), z), rtol=1e-12)
    np.testing.assert_allclose(gb[0], 2 * (pred - y[0]), rtol=1e-12)
    np.testing.assert_allclose(loss, np.sum((pred - y[0]) ** 2), rtol=1e-12)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(9)
    for trial in range(110):
        p = make_params(rng, width=int(rng.integers(3, 7)), depth=int(rng.integers(1, 3)))
        n = int(rng.integers(1, 4))
        x = rng.normal(size=(n, 2))
        t = rng.uniform(0.5, 1.0, size=n)
        r = rng.uniform(0.0, 0.5, size=n)
        y = rng.normal(size=(n, 2))
        _, gw, gb = nets.backward(p, x, t, r, y)

        def loss_at(p2):
            diff = nets.forward(p2, x, t, r) - y
            return float(np.mean(np.sum(diff * diff, axis=1)))

        # a few random coordinates per trial keep the suite fast
        li = int(rng.integers(0, len(p.weights)))
        W = p.weights[li]
        i0 = int(rng.integers(0, W.shape[0]))
        j0 = int(rng.integers(0, W.shape[1]))
        h = 1e-5
        W[i0, j0] += h
        hi = loss_at(p)
        W[i0, j0] -= 2 * h
        lo = loss_at(p)
        W[i0, j0] += h
        fd = (hi - lo) / (2 * h)
        assert abs(gw[li][i0, j0] - fd) / (abs(fd) + 1e-8) < 1e-4, f"trial {trial}"


def test_backward_rejects_empty_batch():
    p = make_params(np.random.default_rng(0))
    with pytest.raises(ValueError):
        nets.backward(p, np.zeros((0, 2)), 0.5, 0.2, np.zeros((0, 2)))


# ---------------------------------------------------------------------------
# Adam and EMA


def test_adam_zero_gradient_leaves_params_unchanged():
    p = make_params(np.random.default_rng(10))
    before = [W.copy() for W in p.weights]
    st = nets.adam_init(p)
    gz = [np.zeros_like(W) for W in p.weights]
    gbz = [np.zeros_like(b) for b in p.biases]
    nets.adam_step(p, gz, gbz, st, lr=1e-3)
    assert st.step == 1
    for W, W0 in zip(p.weights, before):
        np.testing.assert_array_equal(W, W0)


def test_adam_scalar_hand_computation():
    # one update from zero moments: m = (1-b1) g, v = (1-b2) g^2, both
    # bias-corrected back to g and g^2, so delta = -lr * g / (|g| + eps)
    p = zero_params()
    p.weights = [np.zeros((2, p.input_dim))]
    p.biases = [np.array([0.5, 0.0])]
    st = nets.adam_init(p)
    g = 3.0
    gb = [np.array([g, 0.0])]
    gw = [np.zeros_like(p.weights[0])]
    lr, eps = 1e-3, 1e-8
    nets.adam_step(p, gw, gb, st, lr=lr, eps=eps)
    expected = 0.5 - lr * g / (abs(g) + eps)
    np.testing.assert_allclose(p.biases[0][0], expected, rtol=1e-12)


def test_adam_two_steps_match_reference_trace():
    def run(seed):
        rng = np.random.default_rng(seed)
        p = make_params(rng)
        st = nets.adam_init(p)
        g_rng = np.random.default_rng(99)
        for _ in range(2):
            gw = [g_rng.normal(size=W.shape) for W in p.weights]
            gb = [g_rng.normal(size=b.shape) for b in p.biases]
            nets.adam_step(p, gw, gb, st, lr=1e-2)
        return p

    a, b = run(11), run(11)
    for Wa, Wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(Wa, Wb)


def test_adam_rejects_non_finite_gradient():
    p = make_params(np.random.default_rng(12))
    st = nets.adam_init(p)
    gw = [np.zeros_like(W) for W in p.weights]
    gb = [np.zeros_like(b) for b in p.biases]
    gw[0][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        nets.adam_step(p, gw, gb, st, lr=1e-3)


def test_ema_boundary_behaviors():
    live = make_params(np.random.default_rng(13))
    shadow = make_params(np.random.default_rng(14))
    nets.ema_update(shadow, live, decay=0.0)
    for Ws, Wl in zip(shadow.weights, live.weights):
        np.testing.assert_array_equal(Ws, Wl)
    frozen = [W.copy() for W in shadow.weights]
    nets.ema_update(shadow, live, decay=1.0 - 1e-15)
    for Ws, W0 in zip(shadow.weights, frozen):
        np.testing.assert_allclose(Ws, W0, rtol=1e-12)


def test_ema_midpoint():
    shadow = zero_params()
    live = zero_params()
    for W in live.weights:
        W[:] = 2.0
    for b in live.biases:
        b[:] = 2.0
    nets.ema_update(shadow, live, decay=0.5)
    for W in shadow.weights:
        np.testing.assert_array_equal(W, np.full_like(W, 1.0))


# ---------------------------------------------------------------------------
# checkpoints and determinism


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    p = make_params(rng)
    ema = make_params(rng)
    path = tmp_path / "ck.npz"
    nets.save_checkpoint(path, p, ema, step=42, extra={"note": "x"})
    p2, ema2, step, extra = nets.load_checkpoint(path)
    assert step == 42 and extra == {"note": "x"}
    for Wa, Wb in zip(p.weights, p2.weights):
        np.testing.assert_array_equal(Wa, Wb)
    for Wa, Wb in zip(ema.weights, ema2.weights):
        np.testing.assert_array_equal(Wa, Wb)
    out = nets.forward(p2, np.array([[0.1, 0.2]]), 0.9, 0.3)
    np.testing.assert_array_equal(out, nets.forward(p, np.array([[0.1, 0.2]]), 0.9, 0.3))


def test_corrupt_checkpoint_raises(tmp_path):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"not an npz archive")
    with pytest.raises(ValueError, match="corrupt"):
        nets.load_checkpoint(path)


def test_init_is_deterministic_per_seed():
    a = make_params(np.random.default_rng(16))
    b = make_params(np.random.default_rng(16))
    for Wa, Wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(Wa, Wb)


def test_time_embedding_invariants():
    emb = nets.TimeEmbedding(dim=8)
    assert np.all(np.diff(emb.frequencies) > 0)
    vals = emb.embed(np.linspace(0, 1, 50))
    assert np.all(np.abs(vals) <= 1.0)
    with pytest.raises(ValueError):
        nets.TimeEmbedding(dim=5)
