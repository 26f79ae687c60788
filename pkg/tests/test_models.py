"""Tests for histoad.models: heads, objectives, SGD, gradient checks, training."""

import math

import numpy as np
import pytest

from histoad.errors import ConfigurationError, FeatureFileError, InvalidInputError, NumericalError
from histoad.features.io import FeatureMatrix, PatchMeta
from histoad.models.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint, write_loss_trace
from histoad.models.gradcheck import check_vector_gradient, finite_diff_check
from histoad.models.losses import (
    autoencoder_loss_grad,
    bce_loss_grad,
    compactness_loss_grad,
    deepsad_loss_grad,
    hsc_loss_grad,
    objective_loss_grad,
)
from histoad.models.mlp import DenseLayer, MlpParams, forward, head_dims, identity_params, init_mlp
from histoad.models.optim import SgdState, clip_gradients, sgd_step
from histoad.models.trainer import ModelConfig, TrainConfig, TrainingPools, compute_center, train


def _single(weight, bias, activation="identity"):
    return MlpParams([DenseLayer(np.asarray(weight, dtype=float), np.asarray(bias, dtype=float), activation)])


def _features(rows, prefix="s"):
    rows = np.asarray(rows, dtype=np.float32)
    return FeatureMatrix(rows=rows, meta=[PatchMeta(f"{prefix}-{i // 10}", i, 0) for i in range(len(rows))])


def _relu_margin(params, x):
    """Smallest |pre-activation| feeding a relu, over the batch."""
    a, margin = x, np.inf
    for layer in params.layers:
        z = a @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            margin = min(margin, float(np.abs(z).min()))
            a = np.maximum(z, 0.0)
        else:
            a = z
    return margin


def _gradcheck_config(objective, seed):
    """Random head, batch, labels and center; redrawn while a relu sits on its kink."""
    rng = np.random.default_rng(seed)
    while True:
        in_dim, hidden, emb = (int(v) for v in rng.integers(2, 7, size=3))
        dims, acts = head_dims(objective, in_dim, hidden, emb)
        params = init_mlp(dims, acts, rng)
        n = int(rng.integers(2, 8))
        x = rng.standard_normal((n, in_dim))
        labels = (rng.random(n) < 0.5).astype(int)
        center = 0.5 * rng.standard_normal(emb)
        if _relu_margin(params, x) > 1e-3:
            return params, x, labels, center


def _cluster(rng, center, n, sigma=0.3):
    return np.asarray(center) + sigma * rng.standard_normal((n, len(center)))


class TestForward:
    def test_identity_layer(self):
        x = np.array([0.5, -2.0, 3.0])
        np.testing.assert_array_equal(forward(identity_params(3), x), x)

    def test_hand_relu_layer(self):
        params = _single([[2, 0], [0, 3]], [1, -1], "relu")
        np.testing.assert_array_equal(forward(params, np.array([1.0, -1.0])), [3.0, 0.0])

    def test_zero_weights_give_activated_bias(self):
        params = _single(np.zeros((2, 4)), [0.7, -0.2], "relu")
        for x in (np.zeros(4), np.ones(4) * 9.0):
            np.testing.assert_array_equal(forward(params, x), [0.7, 0.0])

    def test_batch_and_width_check(self):
        params = _single(np.eye(2), np.zeros(2))
        assert forward(params, np.ones((5, 2))).shape == (5, 2)
        with pytest.raises(InvalidInputError):
            forward(params, np.ones(3))

    def test_incompatible_layers(self):
        with pytest.raises(InvalidInputError):
            MlpParams([DenseLayer(np.ones((3, 2)), np.zeros(3)), DenseLayer(np.ones((1, 4)), np.zeros(1))])

    def test_head_dims(self):
        assert head_dims("bce", 16, 128, 32) == ([16, 128, 1], ["relu", "identity"])
        assert head_dims("hsc", 16, 128, 32)[0] == [16, 128, 32]
        assert head_dims("autoencoder", 16, 8, 32)[0] == [16, 8, 4, 8, 16]


class TestLosses:
    def test_bce_examples(self):
        loss, grad = bce_loss_grad(0.0, 1)
        assert loss == pytest.approx(0.6931472, abs=1e-7)
        assert grad == pytest.approx(-0.5)

        loss, grad = bce_loss_grad(50.0, 1)
        assert loss <= 1e-20
        assert abs(grad) < 1e-20

        loss, grad = bce_loss_grad(1.0, 0)
        assert loss == pytest.approx(1.3132617, abs=1e-6)
        assert grad == pytest.approx(0.7310586, abs=1e-6)

    def test_bce_no_overflow_for_large_negative_logit(self):
        loss, _ = bce_loss_grad(-800.0, 1)
        assert loss == pytest.approx(800.0)

    def test_hsc_examples(self):
        loss, grad = hsc_loss_grad(np.zeros(3), 0)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros(3))

        loss, _ = hsc_loss_grad(np.array([math.sqrt(3.0)]), 0)
        assert loss == pytest.approx(1.0)

        loss, grad = hsc_loss_grad(np.zeros(2), 1)
        assert loss == pytest.approx(20.72, abs=0.01)
        assert np.all(np.isfinite(grad))

    def test_deepsad_examples(self):
        c = np.array([0.5, -1.0])
        loss, grad = deepsad_loss_grad(c.copy(), c, 0)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, [0.0, 0.0])

        loss, grad = deepsad_loss_grad(c + [1.0, 2.0], c, 0)
        assert loss == pytest.approx(5.0)
        np.testing.assert_allclose(grad, [2.0, 4.0])

        loss, _ = deepsad_loss_grad(c.copy(), c, 1)
        assert loss == pytest.approx(1e6)

    def test_compactness_examples(self):
        assert compactness_loss_grad(np.ones(2), np.ones(2))[0] == 0.0
        assert compactness_loss_grad(np.array([3.0, 4.0]), np.zeros(2))[0] == pytest.approx(25.0)

        center = compute_center(identity_params(2), np.array([[0.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_array_equal(center, [1.0, 0.0])
        assert compactness_loss_grad(np.zeros(2), center)[0] == pytest.approx(1.0)

    def test_center_width_checked(self):
        with pytest.raises(InvalidInputError):
            compactness_loss_grad(np.zeros(3), np.zeros(2))

    def test_autoencoder_identity_is_lossless(self, rng):
        loss, _ = autoencoder_loss_grad(identity_params(4, n_layers=2), rng.standard_normal(4))
        assert loss == 0.0

    def test_autoencoder_zero_decoder(self):
        params = MlpParams([
            DenseLayer(np.eye(4), np.zeros(4), "identity"),
            DenseLayer(np.zeros((4, 4)), np.zeros(4), "identity"),
        ])
        loss, _ = autoencoder_loss_grad(params, np.array([1.0, -1.0, 1.0, -1.0]))
        assert loss == pytest.approx(1.0)

    def test_autoencoder_hand_two_one_two(self):
        params = MlpParams([
            DenseLayer(np.array([[1.0, 2.0]]), np.array([0.5]), "identity"),
            DenseLayer(np.array([[2.0], [-1.0]]), np.array([0.0, 1.0]), "identity"),
        ])
        loss, _ = autoencoder_loss_grad(params, np.array([1.0, 0.0]))
        # hidden 1.5, output (3, -0.5), residual (2, -0.5)
        assert loss == pytest.approx((4.0 + 0.25) / 2)

    def test_batch_matches_single_samples(self, rng):
        phi = rng.standard_normal((4, 3))
        labels = np.array([0, 1, 0, 1])
        batch_loss, batch_grad = hsc_loss_grad(phi, labels)
        for i in range(4):
            loss, grad = hsc_loss_grad(phi[i], labels[i])
            assert batch_loss[i] == pytest.approx(loss)
            np.testing.assert_allclose(batch_grad[i], grad)


class TestSgd:
    def test_plain_step(self):
        params, grads = _single([[1.0]], [0.0]), _single([[2.0]], [0.0])
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0)

        new, state = sgd_step(params, grads, SgdState.zeros_like(params), cfg)

        assert new.layers[0].weight[0, 0] == pytest.approx(0.8)
        assert state.step == 1
        assert params.layers[0].weight[0, 0] == 1.0

    def test_clipping_scales_to_max_norm(self):
        grads = _single([[0.6, 0.8]], [0.0])
        clipped, norm = clip_gradients(grads, 1e-3)

        assert norm == pytest.approx(1.0)
        np.testing.assert_allclose(clipped.layers[0].weight, [[0.6e-3, 0.8e-3]])
        assert clip_gradients(grads, None)[0] is grads

    def test_two_momentum_steps(self):
        params, grads = _single([[1.0]], [0.0]), _single([[1.0]], [0.0])
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        state = SgdState.zeros_like(params)

        params, state = sgd_step(params, grads, state, cfg)
        params, state = sgd_step(params, grads, state, cfg)

        assert params.layers[0].weight[0, 0] == pytest.approx(1.0 - 0.1 * (1.0 + 1.9))

    def test_weight_decay_adds_to_velocity(self):
        params, grads = _single([[2.0]], [0.0]), _single([[0.0]], [0.0])
        cfg = TrainConfig(learning_rate=0.5, momentum=0.0, weight_decay=0.1)
        new, _ = sgd_step(params, grads, SgdState.zeros_like(params), cfg)
        assert new.layers[0].weight[0, 0] == pytest.approx(2.0 - 0.5 * 0.2)

    def test_non_finite_gradient(self):
        params, grads = _single([[1.0]], [0.0]), _single([[np.nan]], [0.0])
        with pytest.raises(NumericalError):
            sgd_step(params, grads, SgdState.zeros_like(params), TrainConfig())


class TestGradCheck:
    def test_bce_linear_head(self, rng):
        params = _single(rng.standard_normal((1, 5)), rng.standard_normal(1))
        x = rng.standard_normal((6, 5))
        labels = np.array([0, 1, 0, 1, 1, 0])

        report = finite_diff_check(params, lambda p, v: objective_loss_grad(p, v, labels, "bce"), x,
                                   tolerance=1e-6)

        assert report.passed, str(report)
        assert report.n_checked == 6

    @pytest.mark.parametrize("objective", ["bce", "hsc", "deepsad", "compactness", "autoencoder"])
    def test_every_objective_over_seeded_configs(self, objective):
        failures = []
        for seed in range(100):
            params, x, labels, center = _gradcheck_config(objective, seed)
            report = finite_diff_check(
                params, lambda p, v: objective_loss_grad(p, v, labels, objective, center), x,
                tolerance=1e-4)
            if not report.passed:
                failures.append((seed, str(report)))

        assert failures == []

    def test_hsc_at_origin(self):
        report = check_vector_gradient(lambda v: hsc_loss_grad(v, 0), np.zeros(3))
        assert report.passed
        assert report.max_rel_error == 0.0

    def test_corrupted_gradient_fails(self, rng):
        params = _single(rng.standard_normal((1, 3)), rng.standard_normal(1))
        x = rng.standard_normal((4, 3))
        labels = np.array([0, 1, 1, 0])

        def corrupted(p, v):
            loss, grads = objective_loss_grad(p, v, labels, "bce")
            grads.layers[0].weight[0, 1] += 0.1
            return loss, grads

        report = finite_diff_check(params, corrupted, x)

        assert not report.passed
        assert report.worst_index == 1


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.batch_size) == (5e-4, 0.9, 1e-4, 32)
        assert cfg.grad_clip_norm is None

    def test_one_class_settings(self):
        cfg = TrainConfig().for_objective("compactness")
        assert cfg.learning_rate == 1e-2
        assert cfg.grad_clip_norm == 1e-3
        assert cfg.momentum == 0.0 and cfg.weight_decay == 0.0
        assert TrainConfig().for_objective("hsc").learning_rate == 5e-4

    def test_unknown_objective(self):
        with pytest.raises(ConfigurationError, match="Unknown objective"):
            TrainConfig(objective="svm")


class TestTrain:
    @pytest.fixture
    def separable(self):
        rng = np.random.default_rng(0)
        return TrainingPools(
            normal=_features(_cluster(rng, (-2.0, -2.0), 200), "normal"),
            near=_features(_cluster(rng, (2.0, 2.0), 200), "near"),
            far=_features(_cluster(rng, (4.0, -1.0), 200), "far"),
        )

    def test_bce_fits_separable_clusters(self, separable):
        cfg = TrainConfig(objective="bce", learning_rate=0.05, steps=500, seed=1, log_every=0)
        result = train(separable, cfg, ModelConfig(hidden_width=16))

        assert len(result.loss_trace) == 500
        assert result.final_loss < 0.1

    def test_zero_steps_returns_initialization(self, separable):
        init = init_mlp([2, 8, 4], ["relu", "identity"], np.random.default_rng(3))
        cfg = TrainConfig(objective="compactness", steps=0)

        result = train(separable, cfg, init_params=init)

        np.testing.assert_array_equal(result.params.flatten(), init.flatten())
        assert result.loss_trace == []
        assert math.isnan(result.final_loss)

    @pytest.mark.parametrize("objective", ["bce", "hsc", "deepsad", "compactness", "autoencoder"])
    def test_same_seed_same_trajectory(self, separable, objective):
        cfg = TrainConfig(objective=objective, steps=20, seed=9, log_every=0)
        model_cfg = ModelConfig(hidden_width=8, embedding_dim=4)

        first = train(separable, cfg, model_cfg)
        second = train(separable, cfg, model_cfg)

        assert first.params.flatten().tobytes() == second.params.flatten().tobytes()
        assert first.loss_trace == second.loss_trace

    def test_different_seed_different_init(self, separable):
        a = train(separable, TrainConfig(objective="hsc", steps=0, seed=1))
        b = train(separable, TrainConfig(objective="hsc", steps=0, seed=2))
        assert not np.array_equal(a.params.flatten(), b.params.flatten())

    def test_center_only_for_center_objectives(self, separable):
        model_cfg = ModelConfig(hidden_width=8, embedding_dim=4)
        assert train(separable, TrainConfig(objective="deepsad", steps=1), model_cfg).center.shape == (4,)
        assert train(separable, TrainConfig(objective="hsc", steps=1), model_cfg).center is None

    def test_oe_objective_needs_oe_pools(self, separable):
        pools = TrainingPools(normal=separable.normal)
        with pytest.raises(ConfigurationError, match="near-OE"):
            train(pools, TrainConfig(objective="hsc", steps=1))

    def test_compactness_needs_no_oe(self, separable):
        result = train(TrainingPools(normal=separable.normal), TrainConfig(objective="compactness", steps=5))
        assert len(result.loss_trace) == 5

    def test_divergence_carries_trace(self):
        pools = TrainingPools(normal=_features(np.full((10, 2), np.nan)))
        with pytest.raises(NumericalError) as info:
            train(pools, TrainConfig(objective="compactness", steps=3))
        assert info.value.step == 0
        assert len(info.value.loss_trace) == 1


class TestCheckpoint:
    def _result(self):
        rng = np.random.default_rng(2)
        pools = TrainingPools(normal=_features(rng.standard_normal((30, 3))))
        return train(pools, TrainConfig(objective="compactness", steps=3, seed=4),
                     ModelConfig(hidden_width=5, embedding_dim=2))

    def test_round_trip(self, tmp_path):
        result = self._result()
        path = tmp_path / "model.hadm"

        save_checkpoint(result, path)
        loaded = load_checkpoint(path)

        assert loaded.objective == "compactness"
        assert loaded.config == result.config
        assert loaded.model_config == result.model_config
        np.testing.assert_array_equal(loaded.params.flatten(), result.params.flatten())
        np.testing.assert_array_equal(loaded.center, result.center)
        assert [l.activation for l in loaded.params.layers] == ["relu", "identity"]

    def test_bytes_are_deterministic(self):
        assert checkpoint_bytes(self._result()) == checkpoint_bytes(self._result())

    def test_corrupt_files(self, tmp_path):
        data = checkpoint_bytes(self._result())
        bad_magic = tmp_path / "magic.hadm"
        bad_magic.write_bytes(b"XXXX" + data[4:])
        short = tmp_path / "short.hadm"
        short.write_bytes(data[:-8])

        with pytest.raises(FeatureFileError) as info:
            load_checkpoint(bad_magic)
        assert info.value.code == "magic"
        with pytest.raises(FeatureFileError) as info:
            load_checkpoint(short)
        assert info.value.code == "truncated"
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.hadm")

    def test_loss_trace_csv(self, tmp_path):
        path = tmp_path / "loss.csv"
        write_loss_trace([0.5, 0.25, 1.0 / 3.0], path)
        assert path.read_text().splitlines() == ["step,loss", "0,0.5", "1,0.25", "2,0.333333333"]
