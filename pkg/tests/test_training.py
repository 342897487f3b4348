"""MSE loss, reverse-mode gradients vs finite differences, Adam, train loop."""

import numpy as np
import pytest

from msemg import blocks, data, training
from msemg.errors import TrainingDivergedError, ValidationError
from test_blocks import tiny_config


def rel_err(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class TestMseLoss:
    def test_equal_is_zero(self, rng):
        x = rng.normal(size=20)
        assert training.mse_loss(x, x) == 0.0

    def test_unit_offset(self, rng):
        x = rng.normal(size=20)
        assert training.mse_loss(x + 1.0, x) == pytest.approx(1.0, rel=1e-12)

    def test_matches_two_pass_reference(self, rng):
        a = rng.normal(size=500)
        b = rng.normal(size=500)
        # independent two-pass accumulation in plain python floats
        total = 0.0
        for xa, xb in zip(a.tolist(), b.tolist()):
            d = xa - xb
            total += d * d
        assert training.mse_loss(a, b) == pytest.approx(total / 500, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            training.mse_loss(np.ones(3), np.ones(4))


class TestBackward:
    def test_zero_gradient_at_minimum(self, rng):
        params = blocks.init_model(tiny_config(seed=4))
        x = rng.normal(size=24)
        target = blocks.msemg_forward(x, params)  # pred == target
        loss, grads = training.backward(x, target, params)
        assert loss == 0.0
        for g in grads.values():
            np.testing.assert_allclose(g, 0.0, atol=1e-300)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed + 50)
        params = blocks.init_model(tiny_config(seed=seed))
        x = rng.normal(size=16)
        target = rng.normal(size=16)
        _, grads = training.backward(x, target, params)
        fd = training.finite_difference_grad(x, target, params, eps=1e-4)
        for name in fd:
            scale = max(np.max(np.abs(fd[name])), 1e-6)
            worst = np.max(np.abs(grads[name] - fd[name])) / scale
            assert worst <= 1e-4, f"{name}: rel err {worst:.2e}"

    def test_loss_scale_is_linear(self, rng):
        params = blocks.init_model(tiny_config(seed=7))
        x = rng.normal(size=16)
        target = rng.normal(size=16)
        _, g1 = training.backward(x, target, params, loss_scale=1.0)
        _, g2 = training.backward(x, target, params, loss_scale=2.0)
        for name in g1:
            np.testing.assert_array_equal(2.0 * g1[name], g2[name])

    def test_params_not_mutated(self, rng):
        params = blocks.init_model(tiny_config(seed=2))
        before = {k: v.copy() for k, v in blocks.param_items(params)}
        training.backward(rng.normal(size=16), rng.normal(size=16), params)
        for name, arr in blocks.param_items(params):
            np.testing.assert_array_equal(arr, before[name])


class TestFiniteDifferences:
    def test_quadratic_toy_exact(self):
        # mse((x - t)) gradient checked on the model is covered above; here
        # the helper's order of accuracy on a controlled scalar map
        params = blocks.init_model(tiny_config(seed=1))
        x = np.zeros(8)
        target = np.ones(8)
        fd_big = training.finite_difference_grad(x, target, params, eps=2e-3)
        fd_small = training.finite_difference_grad(x, target, params, eps=1e-3)
        _, analytic = training.backward(x, target, blocks.cast_model(params, "f8"))
        err_big = max(np.max(np.abs(fd_big[n] - analytic[n])) for n in analytic)
        err_small = max(np.max(np.abs(fd_small[n] - analytic[n])) for n in analytic)
        # central differences: halving eps shrinks the truncation error ~4x
        assert err_small <= err_big / 2.5

    def test_rejects_bad_eps(self, rng):
        params = blocks.init_model(tiny_config())
        with pytest.raises(ValidationError):
            training.finite_difference_grad(np.ones(4), np.ones(4), params, eps=0.0)


class TestAdam:
    def test_zero_gradient_leaves_params(self, rng):
        params = blocks.init_model(tiny_config(seed=3))
        state = training.AdamState.init(params)
        zero = {name: np.zeros_like(arr) for name, arr in blocks.param_items(params)}
        new_params, new_state = training.adam_step(params, zero, state)
        for (_, a), (_, b) in zip(blocks.param_items(params),
                                  blocks.param_items(new_params)):
            np.testing.assert_array_equal(a, b)
        assert new_state.step == 1

    def test_constant_gradient_reaches_lr_magnitude(self):
        # closed form: with constant g, m_hat -> g and v_hat -> g^2, so the
        # update magnitude tends to lr * g / (|g| + eps) ~ lr
        params = blocks.init_model(tiny_config(seed=5))
        lr = 1e-3
        state = training.AdamState.init(params, learning_rate=lr)
        ones = {name: np.ones_like(arr) for name, arr in blocks.param_items(params)}
        prev = params
        for _ in range(200):
            new, state = training.adam_step(prev, ones, state)
            prev_arrays = dict(blocks.param_items(prev))
            deltas = [np.max(np.abs(arr - prev_arrays[name]))
                      for name, arr in blocks.param_items(new)]
            prev = new
        assert max(deltas) == pytest.approx(lr, rel=1e-4)

    def test_descends_1d_quadratic(self):
        # scalar simulation of the same update rule
        theta = 1.0
        m = v = 0.0
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        loss = lambda t: 0.5 * t * t
        start = loss(theta)
        for step in range(1, 51):
            g = theta
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + eps)
        assert loss(theta) < start

    def test_single_small_step_does_not_increase_batch_loss(self):
        ok = 0
        trials = 100
        for seed in range(trials):
            rng = np.random.default_rng(seed)
            params = blocks.init_model(tiny_config(seed=seed))
            x = rng.normal(size=16)
            target = rng.normal(size=16)
            loss0, grads = training.backward(x, target, params)
            state = training.AdamState.init(params, learning_rate=1e-5)
            new_params, _ = training.adam_step(params, grads, state)
            loss1 = training.mse_loss(blocks.msemg_forward(x, new_params), target)
            ok += int(loss1 <= loss0)
        assert ok >= 95

    def test_shape_mismatch_rejected(self):
        params = blocks.init_model(tiny_config())
        state = training.AdamState.init(params)
        bad = {name: np.zeros(arr.size + 1) for name, arr in blocks.param_items(params)}
        with pytest.raises(ValidationError):
            training.adam_step(params, bad, state)


def make_pairs(rng, n, length=64, fs=1000.0):
    pairs = []
    for i in range(n):
        clean = data.Signal(samples=rng.normal(size=length), fs=fs)
        artifact = data.Signal(samples=rng.normal(size=length), fs=fs)
        pairs.append(data.mix_at_snr(clean, artifact, -10.0))
    return pairs


class TestTrainLoop:
    def test_zero_lr_keeps_initial_params(self, rng):
        pairs = make_pairs(rng, 4)
        cfg = training.TrainConfig(epochs=1, batch_size=2, learning_rate=0.0, seed=0)
        result = training.train(pairs, pairs[:2], tiny_config(dtype="f4"), cfg)
        init = blocks.init_model(tiny_config(dtype="f4"))
        for (_, a), (_, b) in zip(blocks.param_items(result.final_params),
                                  blocks.param_items(init)):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_identical_logs_and_checkpoints(self, rng):
        pairs = make_pairs(rng, 6)
        cfg = training.TrainConfig(epochs=2, batch_size=3, seed=11)
        r1 = training.train(pairs, pairs[:2], tiny_config(dtype="f4"), cfg)
        r2 = training.train(pairs, pairs[:2], tiny_config(dtype="f4"), cfg)
        assert r1.log_jsonl() == r2.log_jsonl()
        assert (blocks.checkpoint_to_bytes(r1.best_params)
                == blocks.checkpoint_to_bytes(r2.best_params))

    def test_log_shape(self, rng):
        pairs = make_pairs(rng, 4)
        cfg = training.TrainConfig(epochs=3, batch_size=2, seed=1)
        result = training.train(pairs, pairs[:2], tiny_config(dtype="f4"), cfg)
        assert [r.epoch for r in result.log] == [0, 1, 2, 3]
        assert result.log[0].train_loss is None
        assert all(r.train_loss is not None for r in result.log[1:])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_loss_aborts(self, rng):
        pairs = make_pairs(rng, 2)
        cfg = training.TrainConfig(epochs=3, batch_size=2, learning_rate=1e12,
                                   clip_norm=0.0, seed=0)
        with pytest.raises(TrainingDivergedError):
            training.train(pairs, pairs[:1], tiny_config(dtype="f4"), cfg)

    def test_empty_dataset_rejected(self):
        cfg = training.TrainConfig(epochs=1)
        with pytest.raises(ValidationError):
            training.train([], [], tiny_config(), cfg)

    def test_crop_training_runs(self, rng):
        pairs = make_pairs(rng, 4, length=128)
        cfg = training.TrainConfig(epochs=1, batch_size=2, segment_len=32, seed=0)
        result = training.train(pairs, pairs[:2], tiny_config(dtype="f4"), cfg)
        assert len(result.log) == 2

    def test_training_reduces_loss_on_learnable_task(self, rng):
        # denoising task where artifact is pure low-frequency sine
        fs = 1000.0
        t = np.arange(256) / fs
        pairs = []
        for i in range(8):
            clean = data.Signal(samples=rng.normal(size=256), fs=fs)
            artifact = data.Signal(samples=np.sin(2 * np.pi * 8.0 * t + i), fs=fs)
            pairs.append(data.mix_at_snr(clean, artifact, -10.0))
        cfg = training.TrainConfig(epochs=8, batch_size=4, learning_rate=3e-3, seed=0)
        result = training.train(pairs, pairs[:3], tiny_config(dtype="f4", d_model=8), cfg)
        losses = [r.train_loss for r in result.log[1:]]
        assert losses[-1] < losses[0]
        assert result.best_val_snr_imp_db >= result.log[0].val_snr_imp_db
