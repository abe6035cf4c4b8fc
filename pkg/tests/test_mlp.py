import json
import math

import numpy as np
import pytest

from scenesense.errors import TrainingDivergedError, ValidationError
from scenesense.mlp import (
    AdamState,
    MlpHead,
    TrainConfig,
    accuracy,
    cross_entropy,
    head_document,
    load_head,
    loss_and_gradients,
    save_head,
    train_classifier,
)


def numeric_gradients(head, x, y, h=1e-5):
    """Central finite differences over every parameter entry."""
    grads = []
    for param in head.parameters():
        grad = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = param[idx]
            param[idx] = original + h
            up = cross_entropy(head, x, y)
            param[idx] = original - h
            down = cross_entropy(head, x, y)
            param[idx] = original
            grad[idx] = (up - down) / (2 * h)
            it.iternext()
        grads.append(grad)
    return grads


def random_problem(rng, away_from_kinks=True):
    d_in = int(rng.integers(2, 9))
    hidden = int(rng.integers(2, 9))
    n_out = int(rng.integers(2, 6))
    head = MlpHead.initialize([d_in, hidden, n_out], rng)
    for _ in range(100):
        x = rng.normal(size=(6, d_in))
        pre = x @ head.weights[0].T + head.biases[0]
        if not away_from_kinks or np.min(np.abs(pre)) > 1e-3:
            break
    y = rng.integers(0, n_out, size=6)
    return head, x, y


class TestGradients:
    def test_matches_central_differences_on_random_nets(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            head, x, y = random_problem(rng)
            _, analytic = loss_and_gradients(head, x, y)
            numeric = numeric_gradients(head, x, y)
            flat_a = np.concatenate([g.ravel() for g in analytic])
            flat_n = np.concatenate([g.ravel() for g in numeric])
            rel = np.linalg.norm(flat_a - flat_n) / max(np.linalg.norm(flat_a) + np.linalg.norm(flat_n), 1e-12)
            assert rel < 1e-4

    def test_loss_agrees_with_cross_entropy(self):
        rng = np.random.default_rng(1)
        head, x, y = random_problem(rng, away_from_kinks=False)
        loss, _ = loss_and_gradients(head, x, y)
        assert loss == pytest.approx(cross_entropy(head, x, y), abs=1e-12)


class TestAdam:
    def test_first_step_magnitude(self):
        # bias-corrected first step moves by ~lr regardless of gradient scale
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
        param = np.array([1.0])
        state = AdamState([param])
        state.step([param], [np.array([0.5])], lr=0.1, cfg=cfg)
        assert param[0] == pytest.approx(0.9, abs=1e-7)

    def test_weight_decay_pulls_toward_zero(self):
        cfg = TrainConfig(learning_rate=0.1, weight_decay=1.0)
        param = np.array([1.0])
        state = AdamState([param])
        state.step([param], [np.array([0.0])], lr=0.1, cfg=cfg)
        assert param[0] < 1.0


class TestSchedule:
    def test_lr_quartered_after_25_epochs(self):
        cfg = TrainConfig(learning_rate=1e-4, lr_step=10, lr_gamma=0.5)
        assert cfg.lr_at_epoch(0) == 1e-4
        assert cfg.lr_at_epoch(9) == 1e-4
        assert cfg.lr_at_epoch(10) == pytest.approx(5e-5)
        assert cfg.lr_at_epoch(25) == pytest.approx(0.25 * 1e-4)

    def test_recorded_in_curve(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(8, 4))
        y = rng.integers(0, 3, size=8)
        cfg = TrainConfig(epochs=12, batch_size=8, learning_rate=1e-3, lr_step=10, lr_gamma=0.5, seed=0)
        _, curve = train_classifier(x, y, [4, 8, 3], cfg)
        assert curve.learning_rates[0] == 1e-3
        assert curve.learning_rates[11] == pytest.approx(5e-4)


class TestTraining:
    def test_memorizes_ten_rows(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(10, 16))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        y = np.arange(10) % 5
        cfg = TrainConfig(epochs=500, batch_size=512, learning_rate=1e-2, lr_step=200, seed=0)
        head, curve = train_classifier(x, y, [16, 32, 5], cfg)
        assert curve.train_accuracy[-1] >= 0.99

    def test_initial_loss_near_log_k_for_balanced_labels(self):
        rng = np.random.default_rng(4)
        n_labels = 23
        x = rng.normal(size=(2 * n_labels, 32))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        y = np.repeat(np.arange(n_labels), 2)
        head = MlpHead.initialize([32, 256, n_labels], np.random.default_rng(0))
        loss = cross_entropy(head, x, y)
        assert abs(loss - math.log(n_labels)) / math.log(n_labels) < 0.02

    def test_bit_reproducible(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 8))
        y = rng.integers(0, 4, size=40)
        cfg = TrainConfig(epochs=20, batch_size=16, learning_rate=1e-3, seed=123)
        head1, curve1 = train_classifier(x, y, [8, 16, 4], cfg)
        head2, curve2 = train_classifier(x, y, [8, 16, 4], cfg)
        for w1, w2 in zip(head1.parameters(), head2.parameters()):
            np.testing.assert_array_equal(w1, w2)
        assert curve1.train_loss == curve2.train_loss

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_loss_aborts_with_diagnostics(self):
        # one step at this rate inflates weights until logits overflow to
        # inf, and the next forward pass produces inf - inf = nan
        rng = np.random.default_rng(6)
        x = rng.normal(size=(16, 4))
        y = rng.integers(0, 3, size=16)
        cfg = TrainConfig(epochs=50, batch_size=8, learning_rate=1e160, weight_decay=0.0, seed=0)
        with pytest.raises(TrainingDivergedError) as err:
            train_classifier(x, y, [4, 8, 3], cfg)
        assert err.value.epoch >= 0 and err.value.step > 0

    def test_dimension_mismatch_rejected(self):
        x = np.zeros((4, 5))
        y = np.zeros(4, dtype=int)
        with pytest.raises(ValidationError, match="input dim"):
            train_classifier(x, y, [4, 8, 3], TrainConfig(epochs=1))

    def test_validation_curve_tracked(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(30, 6))
        y = rng.integers(0, 3, size=30)
        cfg = TrainConfig(epochs=5, batch_size=16, learning_rate=1e-3, seed=0)
        _, curve = train_classifier(x, y, [6, 8, 3], cfg, x_val=x[:10], y_val=y[:10])
        assert len(curve.val_loss) == 5 and len(curve.val_accuracy) == 5


class TestDefaults:
    def test_train_config_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 200
        assert cfg.batch_size == 512
        assert cfg.learning_rate == 1e-4
        assert cfg.adam_betas == (0.9, 0.999)
        assert cfg.weight_decay == 1e-3
        assert cfg.lr_step == 10
        assert cfg.lr_gamma == 0.5

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)
        with pytest.raises(ValidationError):
            TrainConfig(adam_betas=(1.5, 0.999))


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        head = MlpHead.initialize([4, 8, 3], rng)
        path = tmp_path / "head.json"
        save_head(path, head, ["a", "b", "c"], "hash-embedder-4-0", 4)
        loaded, labels, meta = load_head(path)
        assert labels == ["a", "b", "c"]
        assert meta == {"name": "hash-embedder-4-0", "dimension": 4}
        x = rng.normal(size=(5, 4))
        np.testing.assert_allclose(loaded.logits(x), head.logits(x), atol=0, rtol=0)

    def test_label_count_must_match(self):
        head = MlpHead.initialize([4, 8, 3], np.random.default_rng(0))
        with pytest.raises(ValidationError):
            head_document(head, ["a", "b"], "e", 4)

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"dims": [2, 2]}')
        with pytest.raises(ValidationError, match="head file"):
            load_head(path)

    def test_permuting_hidden_units_preserves_predictions(self):
        rng = np.random.default_rng(9)
        head = MlpHead.initialize([6, 10, 4], rng)
        perm = rng.permutation(10)
        permuted = MlpHead(
            [6, 10, 4],
            [head.weights[0][perm], head.weights[1][:, perm]],
            [head.biases[0][perm], head.biases[1]],
        )
        x = rng.normal(size=(50, 6))
        np.testing.assert_allclose(permuted.logits(x), head.logits(x), atol=1e-12)
        assert (permuted.logits(x).argmax(axis=1) == head.logits(x).argmax(axis=1)).all()
