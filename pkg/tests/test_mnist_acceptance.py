"""
Softmax and MLP checks on real MNIST at desk scale.

Skipped unless the four IDX files (raw or .gz) are under MNIST_DIR.
"""

from pathlib import Path

import pytest

from config import config
from gradreg.commands import cmd_robust
from gradreg.dataio import load_mnist, resolve_mnist_file, split
from gradreg.model import init_mlp, save_model
from gradreg.numcore import make_rng, substream
from gradreg.perturb import PerturbSpec
from gradreg.robust import (
    NoiseModel,
    actual_additional_missrate,
    linear_density_missrate,
    min_perturb_stats,
    noise_misclassification,
    predict_missrate,
)
from gradreg.runconfig import RunConfig
from gradreg.train import TrainConfig, evaluate_error, mean_input_grad_norm, train

MNIST_DIR = Path(config["mnist_dir"])
STEMS = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")

pytestmark = [
    pytest.mark.mnist,
    pytest.mark.slow,
    pytest.mark.skipif(
        not all(resolve_mnist_file(MNIST_DIR, stem).exists() for stem in STEMS),
        reason=f"MNIST files not found under {MNIST_DIR}",
    ),
]


@pytest.fixture(scope="module")
def mnist():
    return load_mnist(MNIST_DIR)


@pytest.fixture(scope="module")
def softmax_models(mnist):
    train_set, _ = mnist
    models = {}
    for decay in (1e-4, 1e-2, 1.0):
        cfg = TrainConfig(learning_rate=0.1, epochs=10, batch_size=100, weight_decay=decay)
        models[decay] = train(init_mlp(make_rng(0), train_set.dim, (), 10), train_set, cfg).model
    return models


@pytest.fixture(scope="module")
def softmax_stats(mnist, softmax_models):
    train_set, _ = mnist
    return {decay: min_perturb_stats(model, train_set) for decay, model in softmax_models.items()}


def test_min_perturbation_moments(softmax_stats):
    stats = softmax_stats[1e-4]
    assert 0.19 <= stats.mu_a <= 0.36
    assert 0.10 <= stats.sigma_a <= 0.20
    means = [softmax_stats[decay].mu_a for decay in (1e-4, 1e-2, 1.0)]
    assert means[0] < means[1] < means[2]


def test_noisy_error_and_prediction(mnist, softmax_models, softmax_stats):
    _, test_set = mnist
    model, stats = softmax_models[1e-4], softmax_stats[1e-4]
    noise = NoiseModel(0.1, test_set.dim)
    actual = noise_misclassification(model, test_set, noise, 1, substream(0, 1))
    assert abs(actual - 0.1199) <= 0.03
    predicted = predict_missrate(evaluate_error(model, test_set), stats, noise)
    assert abs(predicted - 0.1212) <= 0.02


def test_strong_decay_flattens(mnist, softmax_models):
    _, test_set = mnist
    actual = noise_misclassification(softmax_models[1.0], test_set, NoiseModel(0.3, test_set.dim), 1, substream(0, 2))
    assert actual < 0.15


def test_near_zero_estimate(mnist, softmax_models, softmax_stats):
    _, test_set = mnist
    model, stats = softmax_models[1e-4], softmax_stats[1e-4]
    noise = NoiseModel(0.01, test_set.dim)
    predicted = linear_density_missrate(stats, evaluate_error(model, test_set), noise)
    assert 1e-4 <= predicted <= 1.5e-3
    assert actual_additional_missrate(model, test_set, noise, 1, substream(0, 3)) >= -0.01


def test_injection_regularizes_mlp(mnist):
    train_full, test_set = mnist
    train_set, _ = split(train_full, 10_000)
    plain_cfg = TrainConfig(learning_rate=0.1, epochs=10, batch_size=100)
    injected_cfg = TrainConfig(learning_rate=0.1, epochs=10, batch_size=100, spec=PerturbSpec(2, 1.0))
    start = init_mlp(make_rng(0), train_set.dim, (100, 100), 10)
    plain = train(start, train_set, plain_cfg).model
    injected = train(start, train_set, injected_cfg).model

    noise = NoiseModel(0.3, test_set.dim)
    assert noise_misclassification(injected, test_set, noise, 1, substream(0, 4)) < noise_misclassification(
        plain, test_set, noise, 1, substream(0, 4)
    )
    assert evaluate_error(injected, test_set) <= evaluate_error(plain, test_set) + 0.01
    assert mean_input_grad_norm(injected, test_set) < mean_input_grad_norm(plain, test_set)


def test_clean_error(mnist, softmax_models):
    _, test_set = mnist
    assert 0.06 <= evaluate_error(softmax_models[1e-4], test_set) <= 0.085


def test_noisy_error_grows_with_noise(mnist, softmax_models):
    _, test_set = mnist
    model = softmax_models[1e-4]
    rates = [
        noise_misclassification(model, test_set, NoiseModel(level, test_set.dim), 1, substream(0, 5, k))
        for k, level in enumerate((0.0, 0.1, 0.3))
    ]
    assert rates[0] <= rates[1] <= rates[2]
    assert abs(rates[2] - 0.4007) <= 0.08


def test_decay_lowers_actual_and_predicted(mnist, softmax_models, softmax_stats):
    _, test_set = mnist
    noise = NoiseModel(0.3, test_set.dim)
    actual, predicted = [], []
    for k, decay in enumerate((1e-4, 1e-2, 1.0)):
        model = softmax_models[decay]
        actual.append(noise_misclassification(model, test_set, noise, 1, substream(0, 6, k)))
        predicted.append(predict_missrate(evaluate_error(model, test_set), softmax_stats[decay], noise))
    assert actual[0] > actual[1] > actual[2]
    assert predicted[0] > predicted[1] > predicted[2]


def test_robust_command_on_strong_decay(mnist, softmax_models, tmp_path):
    save_model(softmax_models[1.0], tmp_path / "model.bin")
    cfg = RunConfig.parse(f"dataset=mnist\nmnist_dir={MNIST_DIR}\nlambda=1\nnoise_levels=0,0.1,0.3\n")
    summary = cmd_robust(cfg, tmp_path, model_path=tmp_path / "model.bin")
    row = next(r for r in summary["reports"] if r["sigma_noise"] == 0.3)
    assert abs(row["actual_rate"] - 0.1133) <= 0.04
    assert abs(row["predicted_rate"] - 0.1263) <= 0.04
