import csv
import math

import numpy as np
import pytest

from gradreg.dataio import Dataset, split, synthetic_blobs
from gradreg.errors import DivergedTrainingError, InvalidParameterError
from gradreg.model import Layer, MlpModel, init_mlp
from gradreg.numcore import make_rng
from gradreg.perturb import PerturbSpec
from gradreg.train import (
    TrainConfig,
    dataset_loss,
    evaluate_error,
    select_sigma,
    sgd_epoch,
    train,
    train_two_stage,
)


@pytest.fixture
def blobs():
    return synthetic_blobs(make_rng(0), 60, 6, 3, 0.05)


def fresh(data, hidden=(), seed=1):
    return init_mlp(make_rng(seed), data.dim, hidden, data.num_classes)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"learning_rate": 0.0},
            {"batch_size": 0},
            {"momentum": 1.0},
            {"momentum": -0.1},
            {"weight_decay": -1.0},
            {"max_norm": 0.0},
        ],
    )
    def test_rejects(self, kwargs):
        base = {"learning_rate": 0.1, "epochs": 1}
        with pytest.raises(InvalidParameterError):
            TrainConfig(**{**base, **kwargs})


class TestSgdEpoch:
    def test_plain_sgd_loss_decreases(self, blobs):
        cfg = TrainConfig(learning_rate=0.5, epochs=5, batch_size=20)
        history = train(fresh(blobs), blobs, cfg).history
        losses = [rec.train_loss for rec in history]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_injection_raises_loss_most_steps(self, blobs):
        cfg = TrainConfig(learning_rate=0.1, epochs=1, batch_size=1, spec=PerturbSpec(2, 1.0))
        result = sgd_epoch(fresh(blobs), blobs, cfg, make_rng(3))
        assert result.loss_increase_fraction >= 0.95
        assert result.mean_loss > result.mean_clean_loss

    def test_deterministic(self, blobs):
        cfg = TrainConfig(learning_rate=0.3, epochs=2, batch_size=16, seed=5, spec=PerturbSpec(3, 0.3), max_norm=2.0)
        a = train(fresh(blobs, hidden=(7,)), blobs, cfg).model
        b = train(fresh(blobs, hidden=(7,)), blobs, cfg).model
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weight, lb.weight)
            np.testing.assert_array_equal(la.bias, lb.bias)

    def test_small_sigma_approaches_plain(self, blobs):
        model = fresh(blobs, hidden=(6,))
        plain = TrainConfig(learning_rate=0.2, epochs=1, batch_size=10)
        a = sgd_epoch(model, blobs, plain, make_rng(0)).model

        def gap(sigma):
            injected = TrainConfig(learning_rate=0.2, epochs=1, batch_size=10, spec=PerturbSpec(2, sigma))
            b = sgd_epoch(model, blobs, injected, make_rng(0)).model
            return max(float(np.max(np.abs(la.weight - lb.weight))) for la, lb in zip(a.layers, b.layers))

        coarse, fine = gap(1e-2), gap(1e-4)
        assert coarse < 0.1
        assert fine < coarse / 20

    def test_max_norm_holds_after_epoch(self, blobs):
        cfg = TrainConfig(learning_rate=2.0, epochs=1, batch_size=5, max_norm=0.5)
        model = sgd_epoch(fresh(blobs, hidden=(4,)), blobs, cfg, make_rng(0)).model
        assert np.all(np.linalg.norm(model.layers[0].weight, axis=0) <= 0.5 + 1e-12)

    def test_divergence(self, blobs):
        layers = (Layer(np.full((blobs.dim, 3), 1e300), np.zeros(3)),)
        model = MlpModel(layers)
        cfg = TrainConfig(learning_rate=1e300, epochs=1, batch_size=10, weight_decay=1.0)
        with pytest.raises(DivergedTrainingError, match="epoch 0, step 0"):
            sgd_epoch(model, blobs, cfg, make_rng(0))


class TestEvaluateError:
    def test_perfect(self):
        weight = np.eye(2) * 10
        model = MlpModel((Layer(weight, np.zeros(2)),))
        data = Dataset(np.eye(2), np.array([0, 1]), 2)
        assert evaluate_error(model, data) == 0.0

    def test_complement(self):
        model = init_mlp(make_rng(2), 3, (), 2)
        data = synthetic_blobs(make_rng(4), 20, 3, 2, 0.2)
        flipped = Dataset(data.inputs, 1 - data.labels, 2)
        assert evaluate_error(model, data) + evaluate_error(model, flipped) == pytest.approx(1.0)

    def test_separable_blobs(self):
        data = synthetic_blobs(make_rng(0), 200, 2, 2, 0.02)
        train_set, test_set = split(data, 300)
        model = train(fresh(data), train_set, TrainConfig(learning_rate=1.0, epochs=10, batch_size=20)).model
        assert evaluate_error(model, test_set) <= 0.01


class TestTrainLoop:
    def test_metrics_csv(self, blobs, tmp_path):
        train_set, val = split(blobs, 150)
        path = tmp_path / "metrics.csv"
        train(fresh(blobs), train_set, TrainConfig(learning_rate=0.5, epochs=3, batch_size=25), val=val, csv_path=path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["epoch", "train_loss", "val_error", "mean_input_grad_norm"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
        assert all(0.0 <= float(r[2]) <= 1.0 for r in rows[1:])

    def test_dataset_loss_includes_decay(self, blobs):
        model = fresh(blobs)
        plain = dataset_loss(model, blobs, TrainConfig(learning_rate=0.1, epochs=1))
        decayed = dataset_loss(model, blobs, TrainConfig(learning_rate=0.1, epochs=1, weight_decay=0.5))
        assert decayed - plain == pytest.approx(0.5 * model.weight_sq_sum())

    def test_perturbed_loss_is_larger(self, blobs):
        model = fresh(blobs)
        plain = dataset_loss(model, blobs, TrainConfig(learning_rate=0.1, epochs=1))
        perturbed = dataset_loss(model, blobs, TrainConfig(learning_rate=0.1, epochs=1, spec=PerturbSpec(2, 0.5)))
        assert perturbed > plain


class TestTwoStage:
    def test_rejects_empty_holdout(self, blobs):
        cfg = TrainConfig(learning_rate=0.5, epochs=1)
        with pytest.raises(InvalidParameterError):
            train_two_stage(fresh(blobs), blobs, len(blobs), cfg)
        with pytest.raises(InvalidParameterError):
            train_two_stage(fresh(blobs), blobs, 0, cfg)

    def test_reaches_target(self, blobs):
        train_set, test_set = split(blobs, 150)
        cfg = TrainConfig(learning_rate=0.5, epochs=5, batch_size=15)
        result = train_two_stage(fresh(blobs), train_set, 120, cfg, test=test_set)
        assert result.stopped_by == "target"
        assert 1 <= result.stage2_epochs <= 10
        assert set(result.test_errors) == {"stage1", "stage2"}
        assert len(result.history) == 5 + result.stage2_epochs

    def conflicting_halves(self):
        # the held-out half relabels the same two inputs the other way round
        inputs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        return Dataset(inputs, np.array([0, 1, 1, 0]), 2)

    def zero_model(self):
        return MlpModel((Layer(np.zeros((2, 2)), np.zeros(2)),))

    @pytest.mark.parametrize("cap,expected", [(3, 3), (None, 4)])
    def test_cap(self, cap, expected):
        # full-batch plain GD keeps every margin positive, so the held-out loss stays above log 2 > L*
        cfg = TrainConfig(learning_rate=0.5, epochs=2, batch_size=4, momentum=0.0)
        result = train_two_stage(self.zero_model(), self.conflicting_halves(), 2, cfg, max_stage2_epochs=cap)
        assert result.target_loss < math.log(2)
        assert result.stopped_by == "cap"
        assert result.stage2_epochs == expected
        assert len(result.history) == 2 + expected
        held_out = self.conflicting_halves().subset(slice(2, 4))
        assert dataset_loss(result.model, held_out, cfg) > math.log(2)


class TestSelectSigma:
    def test_picks_lowest_error(self, blobs):
        train_set, val = split(blobs, 150)
        cfg = TrainConfig(learning_rate=0.5, epochs=2, batch_size=25)
        result = select_sigma(fresh(blobs), train_set, val, cfg, sigmas=(0.05, 5.0))
        assert set(result.errors) == {0.05, 5.0}
        assert result.errors[result.best_sigma] == min(result.errors.values())
        assert not math.isnan(result.errors[0.05])
