import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slufuse.nn import (
    Adam,
    Checkpoint,
    NonFiniteGradientError,
    ParameterSet,
    ShapeError,
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    cross_entropy,
    dropout,
    glu_backward,
    glu_forward,
    linear_backward,
    linear_forward,
    lstm_step,
    lstm_step_backward,
    lstmp_backward,
    lstmp_forward,
    numerical_gradient,
    relative_error,
    rnn_backward,
    rnn_forward,
    softmax,
    swish_backward,
    swish_forward,
)

from conftest import GRAD_SEEDS, GRAD_TOL, projected_loss_check


class TestLinear:
    def test_identity_weights(self):
        y, _ = linear_forward(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(y, [[1.0, 2.0]])

    def test_zero_weights_pass_bias(self):
        y, _ = linear_forward(np.array([[1.0, 2.0]]), np.zeros((2, 2)), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(y, [[3.0, 4.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 3\).*\(2, 2\)"):
            linear_forward(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_gradients(self, seed):
        r = np.random.default_rng(seed)
        inputs = {"x": r.standard_normal((2, 3)), "w": r.standard_normal((3, 4)), "b": r.standard_normal(4)}

        def bwd(d, cache):
            dx, dw, db = linear_backward(d, cache)
            return {"x": dx, "w": dw, "b": db}

        errs = projected_loss_check(linear_forward, bwd, inputs, seed)
        assert max(errs.values()) < GRAD_TOL, errs


class TestConv1d:
    def test_impulse_response_is_causal(self):
        x = np.zeros((6, 1))
        x[0, 0] = 1.0
        # causal tap order: weight[k-1] multiplies the current frame
        w = np.array([[1.0], [0.0], [0.0]])
        y, _ = conv1d_forward(x, w, causal=True, depthwise=True)
        assert y.shape == (6, 1)
        # the tap on the oldest frame delays the impulse by k-1 frames
        np.testing.assert_array_equal(y[:, 0], [0, 0, 1, 0, 0, 0])
        w_now = np.array([[0.0], [0.0], [1.0]])
        y_now, _ = conv1d_forward(x, w_now, causal=True, depthwise=True)
        np.testing.assert_array_equal(y_now[:, 0], x[:, 0])

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((9, 4))
        y, _ = conv1d_forward(x, np.eye(4)[None], np.zeros(4))
        np.testing.assert_array_equal(y, x)

    def test_output_length_formula(self, rng):
        x = rng.standard_normal((2, 23, 3))
        for k, s in [(1, 1), (3, 2), (4, 3), (10, 5)]:
            y, _ = conv1d_forward(x, rng.standard_normal((k, 3, 2)), stride=s)
            assert y.shape == (2, (23 - k) // s + 1, 2)
            yc, _ = conv1d_forward(x, rng.standard_normal((k, 3, 2)), stride=s, causal=True)
            assert yc.shape == (2, (23 + k - 1 - k) // s + 1, 2)

    def test_too_short_without_padding(self):
        with pytest.raises(ValueError, match="empty"):
            conv1d_forward(np.ones((2, 1)), np.ones((3, 1, 1)))

    def test_depthwise_requires_matching_channels(self):
        with pytest.raises(ShapeError):
            conv1d_forward(np.ones((5, 3)), np.ones((3, 2)), depthwise=True)

    @given(t=st.integers(2, 12), k=st.integers(1, 5), cut=st.integers(0, 11), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_causal_output_ignores_future(self, t, k, cut, seed):
        cut = min(cut, t - 1)
        r = np.random.default_rng(seed)
        x = r.standard_normal((t, 3))
        w = r.standard_normal((k, 3))
        y1, _ = conv1d_forward(x, w, causal=True, depthwise=True)
        x2 = x.copy()
        x2[cut + 1:] += r.standard_normal(x2[cut + 1:].shape)
        y2, _ = conv1d_forward(x2, w, causal=True, depthwise=True)
        np.testing.assert_array_equal(y1[: cut + 1], y2[: cut + 1])

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    @pytest.mark.parametrize("mode", ["dense", "strided", "causal-depthwise"])
    def test_gradients(self, seed, mode):
        r = np.random.default_rng(seed)
        if mode == "causal-depthwise":
            inputs = {"x": r.standard_normal((2, 7, 3)), "weight": r.standard_normal((3, 3)), "bias": r.standard_normal(3)}
            kw = dict(causal=True, depthwise=True)
        elif mode == "strided":
            inputs = {"x": r.standard_normal((2, 11, 2)), "weight": r.standard_normal((4, 2, 3)), "bias": r.standard_normal(3)}
            kw = dict(stride=3)
        else:
            inputs = {"x": r.standard_normal((1, 6, 2)), "weight": r.standard_normal((2, 2, 3)), "bias": r.standard_normal(3)}
            kw = dict(causal=True)

        def fwd(x, weight, bias):
            return conv1d_forward(x, weight, bias, **kw)

        def bwd(d, cache):
            dx, dw, db = conv1d_backward(d, cache)
            return {"x": dx, "weight": dw, "bias": db}

        errs = projected_loss_check(fwd, bwd, inputs, seed)
        assert max(errs.values()) < GRAD_TOL, errs


class TestGLU:
    def test_half_gate(self):
        y, _ = glu_forward(np.array([1.0, 0.0]))
        np.testing.assert_allclose(y, [0.5])

    def test_zeros(self):
        y, _ = glu_forward(np.zeros((3, 4)))
        np.testing.assert_array_equal(y, np.zeros((3, 2)))

    def test_saturation(self):
        y, _ = glu_forward(np.array([2.0, 20.0]))
        expected = 2.0 / (1.0 + math.exp(-20.0))
        assert abs(y[0] - expected) < 1e-12
        assert abs(y[0] - 2.0) < 1e-6

    def test_odd_channels(self):
        with pytest.raises(ShapeError):
            glu_forward(np.ones((2, 3)))

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_gradients(self, seed):
        r = np.random.default_rng(seed)

        def bwd(d, cache):
            return {"x": glu_backward(d, cache)}

        errs = projected_loss_check(glu_forward, bwd, {"x": r.standard_normal((3, 6))}, seed)
        assert errs["x"] < GRAD_TOL

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_swish_gradients(self, seed):
        r = np.random.default_rng(seed)

        def bwd(d, cache):
            return {"x": swish_backward(d, cache)}

        errs = projected_loss_check(swish_forward, bwd, {"x": 2 * r.standard_normal((3, 4))}, seed)
        assert errs["x"] < GRAD_TOL


class TestBatchNorm:
    def test_train_standardises(self, rng):
        x = 5.0 + 2.0 * rng.standard_normal((4000, 3))
        x = (x - x.mean(0)) / x.std(0) * 2.0 + 5.0
        y, _, _ = batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), train=True)
        np.testing.assert_allclose(y.mean(0), 0.0, atol=1e-4)
        np.testing.assert_allclose(y.var(0), 1.0, atol=1e-4)

    def test_affine(self, rng):
        x = rng.standard_normal((5000, 2))
        x = (x - x.mean(0)) / x.std(0)
        y, _, _ = batchnorm_forward(x, np.full(2, 2.0), np.full(2, 3.0), np.zeros(2), np.ones(2), train=True)
        np.testing.assert_allclose(y.mean(0), 3.0, atol=1e-4)
        np.testing.assert_allclose(y.std(0), 2.0, atol=1e-3)

    def test_running_stats_ema(self, rng):
        x = 4.0 + rng.standard_normal((100, 2))
        _, _, (m, v) = batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), train=True)
        np.testing.assert_allclose(m, 0.1 * x.mean(0))
        np.testing.assert_allclose(v, 0.9 + 0.1 * x.var(0, ddof=1))

    def test_eval_uses_running_stats(self):
        y, _, _ = batchnorm_forward(np.array([[3.0]]), np.ones(1), np.zeros(1), np.array([1.0]), np.array([4.0]),
                                    train=False, eps=0.0)
        np.testing.assert_allclose(y, [[1.0]])

    def test_mask_excludes_padding(self, rng):
        x = rng.standard_normal((2, 5, 3))
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
        y, _, _ = batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), train=True, mask=mask)
        y_ref, _, _ = batchnorm_forward(x[mask], np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), train=True)
        np.testing.assert_allclose(y[mask], y_ref)

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    @pytest.mark.parametrize("masked", [False, True])
    def test_gradients(self, seed, masked):
        r = np.random.default_rng(seed)
        mask = r.random((2, 4)) > 0.3 if masked else None
        if mask is not None:
            mask[0, 0] = True
        inputs = {"x": r.standard_normal((2, 4, 3)), "gamma": r.standard_normal(3), "beta": r.standard_normal(3)}

        def fwd(x, gamma, beta):
            y, cache, _ = batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3), train=True, mask=mask)
            return y, cache

        def bwd(d, cache):
            dx, dg, db = batchnorm_backward(d, cache)
            return {"x": dx, "gamma": dg, "beta": db}

        errs = projected_loss_check(fwd, bwd, inputs, seed)
        assert max(errs.values()) < GRAD_TOL, errs


class TestLSTM:
    def test_zero_everything(self):
        h, c, _ = lstm_step(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)),
                            np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        np.testing.assert_array_equal(h, 0)
        np.testing.assert_array_equal(c, 0)

    @given(arrays(np.float64, (2, 3), elements=st.floats(-1e3, 1e3)), st.integers(0, 2**16))
    @settings(max_examples=50, deadline=None)
    def test_hidden_bounded(self, x, seed):
        r = np.random.default_rng(seed)
        h, _, _ = lstm_step(x, r.standard_normal((2, 4)), 10 * r.standard_normal((2, 4)),
                            10 * r.standard_normal((3, 16)), r.standard_normal((4, 16)), r.standard_normal(16))
        assert np.all(np.abs(h) <= 1.0)

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_step_gradients_five_steps(self, seed):
        r = np.random.default_rng(seed)
        n_steps, hidden = 5, 3
        inputs = {
            "x": r.standard_normal((n_steps, 2, 4)),
            "wx": 0.5 * r.standard_normal((4, 4 * hidden)),
            "wh": 0.5 * r.standard_normal((hidden, 4 * hidden)),
            "b": 0.5 * r.standard_normal(4 * hidden),
        }

        def fwd(x, wx, wh, b):
            h = np.zeros((2, hidden))
            c = np.zeros((2, hidden))
            steps = []
            for t in range(n_steps):
                h_prev = h
                h, c, cell = lstm_step(x[t], h_prev, c, wx, wh, b)
                steps.append((x[t], h_prev, cell))
            return h, (steps, wx, wh)

        def bwd(dh, cache):
            steps, wx, wh = cache
            grads = {"x": np.zeros((n_steps, 2, 4)), "wx": np.zeros_like(wx), "wh": np.zeros_like(wh), "b": np.zeros(4 * hidden)}
            dc = np.zeros_like(dh)
            for t in range(n_steps - 1, -1, -1):
                x_t, h_prev, cell = steps[t]
                dx, dh, dc, dwx, dwh, db = lstm_step_backward(dh, dc, x_t, h_prev, wx, wh, cell)
                grads["x"][t] = dx
                grads["wx"] += dwx
                grads["wh"] += dwh
                grads["b"] += db
            return grads

        errs = projected_loss_check(fwd, bwd, inputs, seed)
        assert max(errs.values()) < GRAD_TOL, errs

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_lstmp_sequence_gradients(self, seed):
        r = np.random.default_rng(seed)
        inputs = {
            "x": r.standard_normal((2, 5, 3)),
            "wx": 0.5 * r.standard_normal((3, 16)),
            "wh": 0.5 * r.standard_normal((2, 16)),
            "b": 0.5 * r.standard_normal(16),
            "w_proj": 0.5 * r.standard_normal((4, 2)),
        }

        def fwd(**kw):
            _, rs, cache = lstmp_forward(**kw)
            return rs, cache

        def bwd(d, cache):
            dx, dwx, dwh, db, dp = lstmp_backward(None, d, cache)
            return {"x": dx, "wx": dwx, "wh": dwh, "b": db, "w_proj": dp}

        errs = projected_loss_check(fwd, bwd, inputs, seed)
        assert max(errs.values()) < GRAD_TOL, errs

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_rnn_gradients(self, seed):
        r = np.random.default_rng(seed)
        inputs = {"x": r.standard_normal((2, 5, 3)), "wx": 0.7 * r.standard_normal((3, 4)),
                  "wh": 0.7 * r.standard_normal((4, 4)), "b": r.standard_normal(4)}

        def bwd(d, cache):
            dx, dwx, dwh, db = rnn_backward(d, cache)
            return {"x": dx, "wx": dwx, "wh": dwh, "b": db}

        errs = projected_loss_check(rnn_forward, bwd, inputs, seed)
        assert max(errs.values()) < GRAD_TOL, errs


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_direct_evaluation(self):
        e0, e1 = math.exp(0.7), math.exp(0.3)
        expected = [e0 / (e0 + e1), e1 / (e0 + e1)]
        got = softmax(np.array([0.7, 0.3]))
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        np.testing.assert_allclose(got, [0.5987, 0.4013], atol=1e-4)

    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.full(3, 7.5)), np.full(3, 1 / 3))

    def test_empty(self):
        with pytest.raises(ValueError):
            softmax(np.array([]))

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e4, 1e4)))
    def test_normalised_and_argmax_preserving(self, z):
        p = softmax(z)
        assert abs(p.sum() - 1.0) < 1e-6
        assert np.all(p >= 0)
        assert np.argmax(p) == np.argmax(z) or p[np.argmax(p)] == p[np.argmax(z)]


class TestCrossEntropy:
    def test_uniform_logits(self):
        for n in (2, 6, 31):
            loss, _ = cross_entropy(np.zeros(n), 1)
            assert abs(loss - math.log(n)) < 1e-12

    def test_peaked(self):
        loss, _ = cross_entropy(np.array([50.0, 0.0, 0.0]), 0)
        assert loss < 1e-12

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros(3), 3)

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_gradient(self, seed):
        r = np.random.default_rng(seed)
        z = r.standard_normal(5)
        label = int(r.integers(5))
        _, grad = cross_entropy(z, label)
        onehot = np.eye(5)[label]
        np.testing.assert_allclose(grad, softmax(z) - onehot, atol=1e-15)
        numeric = numerical_gradient(lambda: cross_entropy(z, label)[0], z)
        assert relative_error(grad, numeric) < 1e-4

    def test_batch_gradient(self, rng):
        z = rng.standard_normal((4, 3))
        y = np.array([0, 2, 1, 1])
        _, grad = cross_entropy(z, y)
        numeric = numerical_gradient(lambda: cross_entropy(z, y)[0], z)
        assert relative_error(grad, numeric) < 1e-4


class TestAdam:
    def test_zero_gradient_no_decay(self, rng):
        params = ParameterSet({"w": rng.standard_normal(4)})
        before = params["w"].copy()
        opt = Adam()
        for _ in range(10):
            opt.step(params, lr=1e-2)
        np.testing.assert_array_equal(params["w"], before)

    def test_unit_step_property(self):
        params = ParameterSet({"w": np.zeros(3)})
        params.grads["w"][:] = [0.5, -3.0, 1e-3]
        opt = Adam()
        prev = params["w"].copy()
        for _ in range(200):
            opt.step(params, lr=1e-3)
            delta = np.abs(params["w"] - prev)
            prev = params["w"].copy()
        np.testing.assert_allclose(delta, 1e-3, rtol=1e-4)

    def test_decoupled_weight_decay(self):
        params = ParameterSet({"w": np.array([1.0, -2.0])})
        opt = Adam(weight_decay=0.002)
        for step in range(1, 6):
            opt.step(params, lr=1e-4)
            np.testing.assert_allclose(params["w"], np.array([1.0, -2.0]) * (1 - 2e-7) ** step, rtol=1e-15)

    def test_non_finite_gradient_names_path(self):
        params = ParameterSet({"enc.w": np.zeros(2), "cls.b": np.zeros(1)})
        params.grads["cls.b"][0] = np.nan
        with pytest.raises(NonFiniteGradientError, match="cls.b"):
            Adam().step(params, lr=1e-3)


class TestDropout:
    def test_p_zero(self, rng):
        x = rng.standard_normal(100)
        y, _ = dropout(x, 0.0, True, rng)
        np.testing.assert_array_equal(x, y)

    def test_eval_identity(self, rng):
        x = rng.standard_normal(100)
        y, _ = dropout(x, 0.9, False, rng)
        np.testing.assert_array_equal(x, y)

    def test_drop_fraction(self):
        r = np.random.default_rng(7)
        y, _ = dropout(np.ones(1_000_000), 0.3, True, r)
        assert abs(np.mean(y == 0) - 0.30) < 0.005
        np.testing.assert_allclose(y[y != 0], 1 / 0.7)

    def test_invalid_p(self, rng):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 1.0, True, rng)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        arrays = {
            "a.w": rng.standard_normal((3, 4)).astype(np.float32),
            "a.b": rng.standard_normal(4),
            "ids": np.arange(5, dtype=np.int64),
            "scalar": np.array(np.pi, dtype=np.float32),
        }
        ck = Checkpoint("demo", arrays, {"kind": "test", "dims": [1, 2]})
        ck.save(tmp_path / "x.ckpt")
        back = Checkpoint.load(tmp_path / "x.ckpt")
        assert back.name == "demo"
        assert back.metadata == {"kind": "test", "dims": [1, 2]}
        assert list(back.arrays) == list(arrays)
        for k, v in arrays.items():
            assert back.arrays[k].dtype == v.dtype
            assert back.arrays[k].tobytes() == v.tobytes()
        ck2 = Checkpoint.load(tmp_path / "x.ckpt")
        ck2.save(tmp_path / "y.ckpt")
        assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"nope")
        with pytest.raises(ValueError, match="magic"):
            Checkpoint.load(tmp_path / "bad")
