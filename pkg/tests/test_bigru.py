import math

import numpy as np
import pytest

from pricecast.bigru import (
    PARAM_NAMES,
    BiGruStack,
    GruCellParams,
    OutputHead,
    bigru_backward,
    bigru_forward,
    gru_cell_backward,
    gru_cell_forward,
    gru_sequence_backward,
    gru_sequence_forward,
    output_head_backward,
    output_head_forward,
)
from pricecast.errors import DimensionError
from pricecast.numeric import RngStream
from support import rel_err


def random_params(input_dim, hidden, seed, scale=0.6):
    rng = np.random.default_rng(seed)
    shapes = {"w": (hidden, input_dim), "u": (hidden, hidden), "b": (hidden,)}
    return GruCellParams(**{n: rng.normal(scale=scale, size=shapes[n[0]]) for n in PARAM_NAMES})


def scalar_cell(p: GruCellParams, x, h):
    """Element-by-element oracle of one GRU step using math.exp / math.tanh."""
    H = p.hidden_dim

    def affine(w, u, b, hv):
        return [b[i] + sum(w[i, j] * x[j] for j in range(len(x))) + sum(u[i, j] * hv[j] for j in range(H))
                for i in range(H)]

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    r = [sig(v) for v in affine(p.w_r, p.u_r, p.b_r, h)]
    z = [sig(v) for v in affine(p.w_z, p.u_z, p.b_z, h)]
    rh = [r[i] * h[i] for i in range(H)]
    hc = [math.tanh(v) for v in affine(p.w_h, p.u_h, p.b_h, rh)]
    return np.array([(1 - z[i]) * h[i] + z[i] * hc[i] for i in range(H)])


def test_cell_matches_scalar_oracle():
    for seed in range(5):
        p = random_params(3, 4, seed)
        rng = np.random.default_rng(100 + seed)
        x, h = rng.normal(size=3), rng.normal(size=4)
        np.testing.assert_allclose(gru_cell_forward(p, x, h)[0], scalar_cell(p, x, h), rtol=1e-13, atol=1e-14)


def test_zero_params_halve_previous_state():
    p = GruCellParams.zeros(2, 3)
    v = np.array([1.0, -2.0, 4.0])
    h, cache = gru_cell_forward(p, np.array([0.3, 0.7]), v)
    np.testing.assert_allclose(cache.r, 0.5)
    np.testing.assert_allclose(cache.z, 0.5)
    np.testing.assert_allclose(cache.hc, 0.0)
    np.testing.assert_allclose(h, 0.5 * v)


def test_zero_previous_state_gives_z_times_candidate():
    p = random_params(2, 3, 7)
    h, cache = gru_cell_forward(p, np.array([0.4, -1.1]), np.zeros(3))
    np.testing.assert_array_equal(h, (cache.z * cache.hc)[0])


def test_gates_in_open_unit_interval():
    # float64 sigmoid rounds to exactly 1.0 past ~37, so the open interval is
    # checked for moderate pre-activations and the closed one for extreme inputs.
    p = random_params(2, 5, 8, scale=1.0)
    for x in np.random.default_rng(0).normal(scale=3, size=(50, 2)):
        _, c = gru_cell_forward(p, x, np.zeros(5))
        assert np.all((c.r > 0) & (c.r < 1) & (c.z > 0) & (c.z < 1))
    _, c = gru_cell_forward(p, np.array([1e6, -1e6]), np.zeros(5))
    assert np.all((c.r >= 0) & (c.r <= 1) & (c.z >= 0) & (c.z <= 1))


def test_sequence_t1_equals_cell_and_zero_params_stay_zero():
    p = random_params(3, 2, 1)
    x = np.random.default_rng(1).normal(size=(1, 3))
    hs, _ = gru_sequence_forward(p, x)
    np.testing.assert_array_equal(hs[0], gru_cell_forward(p, x[0], np.zeros(2))[0])
    hs0, _ = gru_sequence_forward(GruCellParams.zeros(3, 2), np.ones((6, 3)))
    assert not hs0.any()


def test_sequence_matches_cell_loop():
    p = random_params(3, 4, 2)
    xs = np.random.default_rng(2).normal(size=(6, 3))
    hs, _ = gru_sequence_forward(p, xs)
    h = np.zeros(4)
    for t in range(6):
        h = scalar_cell(p, xs[t], h)
        np.testing.assert_allclose(hs[t], h, rtol=1e-12, atol=1e-13)


def test_sequence_is_causal():
    p = random_params(2, 3, 3)
    xs = np.random.default_rng(3).normal(size=(8, 2))
    hs, _ = gru_sequence_forward(p, xs)
    xs2 = xs.copy()
    xs2[5] += 10.0
    hs2, _ = gru_sequence_forward(p, xs2)
    np.testing.assert_array_equal(hs[:5], hs2[:5])
    assert not np.allclose(hs[5], hs2[5])


def _fd_check(fn, arrays_and_grads, h=1e-5):
    for arr, grad in arrays_and_grads:
        for i in range(arr.size):
            old = arr.flat[i]
            arr.flat[i] = old + h
            lp = fn()
            arr.flat[i] = old - h
            lm = fn()
            arr.flat[i] = old
            assert rel_err(float(grad.flat[i]), (lp - lm) / (2 * h)) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_sequence_backward_finite_differences(seed):
    p = random_params(3, 4, seed)
    rng = np.random.default_rng(50 + seed)
    xs = rng.normal(size=(2, 5, 3))
    proj = rng.normal(size=(2, 5, 4))
    hs, cache = gru_sequence_forward(p, xs)
    dxs, _, grads = gru_sequence_backward(cache, proj)
    loss = lambda: float(np.sum(proj * gru_sequence_forward(p, xs)[0]))  # noqa: E731
    _fd_check(loss, [(getattr(p, n), grads[n]) for n in PARAM_NAMES] + [(xs, dxs)])


def test_sequence_backward_h0_gradient():
    p = random_params(2, 3, 9)
    rng = np.random.default_rng(9)
    xs, h0, proj = rng.normal(size=(4, 2)), rng.normal(size=3), rng.normal(size=(4, 3))
    _, cache = gru_sequence_forward(p, xs, h0)
    _, dh0, _ = gru_sequence_backward(cache, proj)
    _fd_check(lambda: float(np.sum(proj * gru_sequence_forward(p, xs, h0)[0])), [(h0, dh0)])


def test_single_step_gradients_match_cell_backward():
    p = random_params(3, 2, 4)
    rng = np.random.default_rng(4)
    x, g = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
    _, scache = gru_sequence_forward(p, x)
    dxs, dh0, sgrads = gru_sequence_backward(scache, g)
    _, ccache = gru_cell_forward(p, x[0], np.zeros(2))
    dx, dh, cgrads = gru_cell_backward(p, ccache, g[0])
    np.testing.assert_allclose(dxs[0], dx, rtol=1e-13)
    np.testing.assert_allclose(dh0, dh, rtol=1e-13)
    for n in PARAM_NAMES:
        np.testing.assert_allclose(sgrads[n], cgrads[n], rtol=1e-13, atol=1e-15)


def test_zero_upstream_gradient_gives_zero_gradients():
    p = random_params(3, 2, 5)
    _, cache = gru_sequence_forward(p, np.ones((4, 3)))
    dxs, dh0, grads = gru_sequence_backward(cache, np.zeros((4, 2)))
    assert not dxs.any() and not dh0.any()
    assert all(not g.any() for g in grads.values())


def _stack(input_dim, hidden, layers, bidirectional, seed):
    return BiGruStack.glorot(input_dim, hidden, layers, bidirectional, RngStream(seed))


def test_bigru_width_and_dead_backward_direction():
    stack = _stack(3, 4, 1, True, 0)
    ys, _ = bigru_forward(stack, np.ones((5, 3)))
    assert ys.shape == (5, 8)
    dead = BiGruStack([(stack.layers[0][0], GruCellParams.zeros(3, 4))])
    ys, _ = bigru_forward(dead, np.random.default_rng(0).normal(size=(5, 3)))
    assert not ys[:, 4:].any()
    uni = _stack(3, 4, 2, False, 0)
    assert bigru_forward(uni, np.ones((5, 3)))[0].shape == (5, 4)


def test_bigru_reversal_symmetry():
    fwd, bwd = random_params(2, 3, 10), random_params(2, 3, 11)
    xs = np.random.default_rng(10).normal(size=(6, 2))
    ys, _ = bigru_forward(BiGruStack([(fwd, bwd)]), xs)
    ys_rev, _ = bigru_forward(BiGruStack([(bwd, fwd)]), xs[::-1])
    np.testing.assert_allclose(ys_rev[::-1, :3], ys[:, 3:], rtol=1e-14)
    np.testing.assert_allclose(ys_rev[::-1, 3:], ys[:, :3], rtol=1e-14)


@pytest.mark.parametrize("bidirectional", [True, False])
def test_bigru_backward_finite_differences(bidirectional):
    stack = _stack(3, 4, 2, bidirectional, 12)
    rng = np.random.default_rng(12)
    xs = rng.normal(size=(2, 5, 3))
    ys, cache = bigru_forward(stack, xs)
    proj = rng.normal(size=ys.shape)
    dxs, grads = bigru_backward(cache, proj)
    pairs = [(xs, dxs)]
    for (f, b), (gf, gb) in zip(stack.layers, grads):
        pairs += [(getattr(f, n), gf[n]) for n in PARAM_NAMES]
        if b is not None:
            pairs += [(getattr(b, n), gb[n]) for n in PARAM_NAMES]
    _fd_check(lambda: float(np.sum(proj * bigru_forward(stack, xs)[0])), pairs)


def test_bigru_backward_rejects_wrong_shape():
    stack = _stack(2, 3, 1, True, 0)
    _, cache = bigru_forward(stack, np.ones((4, 2)))
    with pytest.raises(DimensionError):
        bigru_backward(cache, np.ones((4, 5)))


def test_output_head_modes():
    feats = np.array([0.3, -1.2, 2.0])
    head = OutputHead(np.zeros((2, 3)), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(output_head_forward(head, feats), [1.0, -1.0])
    ident = OutputHead(np.eye(3), np.zeros(3))
    np.testing.assert_array_equal(output_head_forward(ident, feats), feats)
    soft = OutputHead(np.random.default_rng(0).normal(size=(4, 3)), np.zeros(4), "softmax")
    assert output_head_forward(soft, feats).sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("activation", ["identity", "softmax"])
def test_output_head_backward_finite_differences(activation):
    rng = np.random.default_rng(6)
    head = OutputHead(rng.normal(size=(4, 5)), rng.normal(size=4), activation)
    feats = rng.normal(size=(3, 5))
    proj = rng.normal(size=(3, 4))
    y = output_head_forward(head, feats)
    gf, gw, gb = output_head_backward(head, feats, y, proj)
    loss = lambda: float(np.sum(proj * output_head_forward(head, feats)))  # noqa: E731
    _fd_check(loss, [(head.weight, gw), (head.bias, gb), (feats, gf)])
