"""MLP core: forward/backward correctness, persistence format, Adam."""

from __future__ import annotations

import numpy as np
import pytest

from highway_ast import mlp
from highway_ast.mlp import Mlp, WeightFormatError, load_mlp, save_mlp, softmax

MAGIC = b"TEST"


def finite_difference_grads(net: Mlp, x, loss_of_output, eps=1e-6):
    """Central differences on every weight for an arbitrary scalar loss."""
    grads = []
    for li in range(len(net.weights)):
        dW = np.zeros_like(net.weights[li])
        db = np.zeros_like(net.biases[li])
        for idx in np.ndindex(net.weights[li].shape):
            keep = net.weights[li][idx]
            net.weights[li][idx] = keep + eps
            up = loss_of_output(net.forward(x))
            net.weights[li][idx] = keep - eps
            down = loss_of_output(net.forward(x))
            net.weights[li][idx] = keep
            dW[idx] = (up - down) / (2 * eps)
        for idx in np.ndindex(net.biases[li].shape):
            keep = net.biases[li][idx]
            net.biases[li][idx] = keep + eps
            up = loss_of_output(net.forward(x))
            net.biases[li][idx] = keep - eps
            down = loss_of_output(net.forward(x))
            net.biases[li][idx] = keep
            db[idx] = (up - down) / (2 * eps)
        grads.append((dW, db))
    return grads


def test_forward_zero_weights_gives_zero_output():
    net = Mlp.create((3, 4, 5), seed=0)
    for W in net.weights:
        W[:] = 0.0
    for b in net.biases:
        b[:] = 0.0
    out = net.forward(np.ones((1, 3)))
    assert np.all(out == 0.0)


def test_forward_matches_hand_computation():
    # 2 -> 2 -> 1 with identity-ish weights picked for easy arithmetic
    net = Mlp.create((2, 2, 1), seed=0)
    net.weights[0][:] = np.array([[1.0, -1.0], [2.0, 0.5]])
    net.biases[0][:] = np.array([0.0, 1.0])
    net.weights[1][:] = np.array([[1.0], [1.0]])
    net.biases[1][:] = np.array([-0.5])
    x = np.array([[1.0, 2.0]])
    # hidden pre-act: (1*1+2*2, 1*-1+2*0.5+1) = (5, 1); relu keeps both
    # output: 5 + 1 - 0.5 = 5.5
    assert net.forward(x)[0, 0] == pytest.approx(5.5, abs=1e-12)


def test_forward_is_deterministic():
    net = Mlp.create((4, 8, 3), seed=1)
    x = np.linspace(-1, 1, 4).reshape(1, 4)
    assert np.array_equal(net.forward(x), net.forward(x))


def test_backward_matches_finite_differences():
    net = Mlp.create((3, 4, 2), seed=2)
    x = np.array([[0.3, -0.7, 1.1]])

    def loss(out):
        return float(np.sum(out**2))

    out, cache = net.forward_cached(x, dropout_p=0.0, rng=None)
    analytic = net.backward(cache, 2.0 * out)
    numeric = finite_difference_grads(net, x, loss)
    for (aW, ab), (nW, nb) in zip(analytic, numeric):
        assert np.allclose(aW, nW, rtol=1e-4, atol=1e-7)
        assert np.allclose(ab, nb, rtol=1e-4, atol=1e-7)


def test_dropout_masks_drop_and_outputs_rescale():
    net = Mlp.create((2, 200, 1), seed=3)
    rng = np.random.default_rng(0)
    x = np.ones((1, 2))
    net.weights[1][:] = 1.0
    net.biases[1][:] = 0.0
    out_plain = net.forward(x)
    keep_fracs = []
    for trial in range(50):
        _, cache = net.forward_cached(x, dropout_p=0.5, rng=rng)
        masks = cache[2]
        keep_fracs.append(masks[0].mean())
    # roughly half the units survive each pass
    assert 0.4 < np.mean(keep_fracs) < 0.6
    # inverted scaling keeps the expected output near the plain pass
    outs = [net.forward_cached(x, dropout_p=0.5, rng=rng)[0][0, 0] for _ in range(300)]
    assert np.mean(outs) == pytest.approx(out_plain[0, 0], rel=0.15)


def test_dropout_without_rng_is_an_error():
    net = Mlp.create((2, 4, 1), seed=3)
    with pytest.raises(ValueError):
        net.forward_cached(np.ones((1, 2)), dropout_p=0.3, rng=None)


def test_softmax_rows_sum_to_one_and_are_stable():
    z = np.array([[1000.0, 1000.0], [-5.0, 5.0]])
    p = softmax(z)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert p[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert np.all(p >= 0.0)


def test_adam_reduces_simple_quadratic_loss():
    net = Mlp.create((1, 8, 1), seed=4)
    opt = mlp.Adam(lr=1e-2)
    x = np.linspace(-1, 1, 16).reshape(-1, 1)
    target = 3.0 * x

    def current_loss():
        return float(np.mean((net.forward(x) - target) ** 2))

    first = current_loss()
    for _ in range(200):
        out, cache = net.forward_cached(x, dropout_p=0.0, rng=None)
        grads = net.backward(cache, 2.0 * (out - target) / len(x))
        opt.step(net, grads)
    assert current_loss() < first * 0.1


class TestPersistence:
    def test_round_trip_preserves_every_weight(self, tmp_path):
        net = Mlp.create((6, 5, 4), seed=5)
        p = tmp_path / "m.bin"
        save_mlp(p, net, MAGIC, 1, extras=(0.25,))
        loaded, extras = load_mlp(p, MAGIC, 1)
        assert extras == (0.25,)
        for a, b in zip(net.weights, loaded.weights):
            assert np.array_equal(a, b)
        for a, b in zip(net.biases, loaded.biases):
            assert np.array_equal(a, b)

    def test_truncated_file_is_rejected(self, tmp_path):
        net = Mlp.create((6, 5, 4), seed=5)
        p = tmp_path / "m.bin"
        save_mlp(p, net, MAGIC, 1)
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(WeightFormatError):
            load_mlp(p, MAGIC, 1)

    def test_wrong_version_is_rejected(self, tmp_path):
        net = Mlp.create((3, 3), seed=6)
        p = tmp_path / "m.bin"
        save_mlp(p, net, MAGIC, 2)
        with pytest.raises(WeightFormatError):
            load_mlp(p, MAGIC, 1)

    def test_wrong_magic_is_rejected(self, tmp_path):
        net = Mlp.create((3, 3), seed=6)
        p = tmp_path / "m.bin"
        save_mlp(p, net, b"AAAA", 1)
        with pytest.raises(WeightFormatError):
            load_mlp(p, MAGIC, 1)

    def test_empty_file_is_rejected(self, tmp_path):
        p = tmp_path / "m.bin"
        p.write_bytes(b"")
        with pytest.raises(WeightFormatError):
            load_mlp(p, MAGIC, 1)

    def test_trailing_garbage_is_rejected(self, tmp_path):
        net = Mlp.create((3, 3), seed=6)
        p = tmp_path / "m.bin"
        save_mlp(p, net, MAGIC, 1)
        p.write_bytes(p.read_bytes() + b"\x00\x01")
        with pytest.raises(WeightFormatError):
            load_mlp(p, MAGIC, 1)
