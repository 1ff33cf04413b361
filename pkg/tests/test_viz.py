import csv

import numpy as np
import pytest

from gradreg.dataio import Dataset, synthetic_blobs
from gradreg.errors import InvalidParameterError, ShapeError
from gradreg.model import init_mlp, predict, predict_proba
from gradreg.numcore import make_rng
from gradreg.perturb import PerturbSpec, perturb_rows
from gradreg.train import TrainConfig, train
from gradreg.viz import (
    ImageGrid,
    compose,
    render_noise_panel,
    render_perturbation_panel,
    tile_shape_for,
    write_histogram_csv,
    write_pgm_grid,
)


def read_pgm(path):
    raw = path.read_bytes()
    magic, size, maxval, pixels = raw.split(b"\n", 3)
    width, height = (int(v) for v in size.split())
    assert magic == b"P5" and maxval == b"255"
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


@pytest.fixture
def panel_data():
    inputs = np.random.default_rng(0).uniform(0.3, 0.7, size=(3, 4))
    return Dataset(inputs, np.array([0, 1, 0]), 2)


class TestGrid:
    def test_single_pixel(self, tmp_path):
        write_pgm_grid(ImageGrid((np.array([[1.0]]),), 1), tmp_path / "one.pgm")
        assert (tmp_path / "one.pgm").read_bytes() == b"P5\n1 1\n255\n\xff"

    def test_clamps_low(self):
        np.testing.assert_array_equal(compose(ImageGrid((np.array([[-0.2]]),), 1)), [[0]])

    def test_two_tiles_layout(self, tmp_path):
        tiles = (np.ones((2, 2)), np.zeros((2, 2)))
        path = tmp_path / "two.pgm"
        write_pgm_grid(ImageGrid(tiles, cols=2, padding=1), path)
        expected = b"P5\n5 2\n255\n" + bytes([255, 255, 255, 0, 0] * 2)
        assert path.read_bytes() == expected

    def test_empty_slots_are_white(self):
        canvas = compose(ImageGrid((np.zeros((1, 1)),) * 3, cols=2, padding=0))
        np.testing.assert_array_equal(canvas, [[0, 0], [0, 255]])

    def test_rejects_mixed_shapes(self):
        with pytest.raises(ShapeError):
            ImageGrid((np.zeros((2, 2)), np.zeros((1, 4))), 2)

    def test_rejects_zero_cols(self):
        with pytest.raises(InvalidParameterError):
            ImageGrid((np.zeros((2, 2)),), 0)

    def test_tile_shape(self):
        assert tile_shape_for(784) == (28, 28)
        assert tile_shape_for(6) == (1, 6)


class TestPanels:
    def test_writes_three_grids(self, panel_data, tmp_path):
        model = init_mlp(make_rng(0), 4, (), 2)
        paths = render_perturbation_panel(model, panel_data, PerturbSpec(2, 0.1), 10.0, tmp_path)
        assert [p.name for p in paths] == ["originals.pgm", "perturbed.pgm", "perturbation.pgm"]
        assert all(p.exists() for p in paths)

    def test_zero_magnify_is_mid_gray(self, panel_data, tmp_path):
        model = init_mlp(make_rng(0), 4, (), 2)
        render_perturbation_panel(model, panel_data, PerturbSpec(2, 0.1), 0.0, tmp_path)
        canvas = read_pgm(tmp_path / "perturbation.pgm")
        for k in range(3):
            np.testing.assert_array_equal(canvas[:, 3 * k : 3 * k + 2], np.full((2, 2), 128))

    def test_delta_matches_epsilon(self, panel_data, tmp_path):
        model = init_mlp(make_rng(0), 4, (), 2)
        spec = PerturbSpec(2, 0.1)
        render_perturbation_panel(model, panel_data, spec, 10.0, tmp_path)
        originals = read_pgm(tmp_path / "originals.pgm").astype(np.float64) / 255
        perturbed = read_pgm(tmp_path / "perturbed.pgm").astype(np.float64) / 255
        eps = perturb_rows(model, panel_data.inputs, panel_data.targets, spec)
        for k in range(3):
            delta = (perturbed - originals)[:, 3 * k : 3 * k + 2].ravel()
            np.testing.assert_allclose(delta, eps[k], atol=1 / 255 + 1e-12)

    def test_l2_budget_spreads_over_pixels(self, panel_data, tmp_path):
        model = init_mlp(make_rng(0), 4, (), 2)
        spec = PerturbSpec(2, 0.1)
        render_perturbation_panel(model, panel_data, spec, 10.0, tmp_path)
        delta = read_pgm(tmp_path / "perturbed.pgm").astype(np.float64) - read_pgm(tmp_path / "originals.pgm")
        per_pixel = spec.sigma / np.sqrt(panel_data.dim)
        for k in range(3):
            tile = delta[:, 3 * k : 3 * k + 2].ravel() / 255
            # rounding moves each pixel by at most 1/255
            assert np.sqrt(np.mean(tile**2)) == pytest.approx(per_pixel, abs=1 / 255 + 1e-12)
            assert np.mean(np.abs(tile)) <= per_pixel + 1 / 255

    def test_large_budget_flips_uncertain_examples(self, tmp_path):
        data = synthetic_blobs(make_rng(0), 80, 6, 3, 0.15)
        model = init_mlp(make_rng(1), 6, (), 3)
        model = train(model, data, TrainConfig(learning_rate=0.5, epochs=4, batch_size=20)).model
        spec = PerturbSpec(2, 10.0)
        render_perturbation_panel(model, data, spec, 1.0, tmp_path)

        proba = predict_proba(model, data.inputs)
        correct = np.flatnonzero(proba.argmax(axis=1) == data.labels)
        uncertain = correct[np.argsort(proba[correct].max(axis=1))[: max(1, len(correct) // 3)]]
        subset = data.subset(uncertain)
        eps = perturb_rows(model, subset.inputs, subset.targets, spec)
        flipped = predict(model, subset.inputs + eps) != subset.labels
        assert flipped.mean() >= 0.8

    def test_byte_identical_reruns(self, panel_data, tmp_path):
        model = init_mlp(make_rng(0), 4, (), 2)
        render_perturbation_panel(model, panel_data, PerturbSpec(3, 0.2), 10.0, tmp_path / "a")
        render_perturbation_panel(model, panel_data, PerturbSpec(3, 0.2), 10.0, tmp_path / "b")
        for name in ("originals.pgm", "perturbed.pgm", "perturbation.pgm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_dataset(self, tmp_path):
        empty = Dataset(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), 2)
        with pytest.raises(InvalidParameterError):
            render_perturbation_panel(init_mlp(make_rng(0), 4, (), 2), empty, PerturbSpec(2, 1), 10.0, tmp_path)

    def test_noise_panel(self, panel_data, tmp_path):
        path = render_noise_panel(panel_data, 0.3, make_rng(1), tmp_path)
        assert path.name == "noise_0.3.pgm"
        clean = render_noise_panel(panel_data, 0.0, make_rng(1), tmp_path)
        render_perturbation_panel(init_mlp(make_rng(0), 4, (), 2), panel_data, PerturbSpec(2, 0.1), 1.0, tmp_path)
        np.testing.assert_array_equal(read_pgm(clean), read_pgm(tmp_path / "originals.pgm"))


class TestHistogramCsv:
    def test_two_bins(self, tmp_path):
        path = tmp_path / "hist.csv"
        write_histogram_csv([0.05, 0.15], 0.1, path)
        rows = list(csv.reader(path.open()))
        assert rows == [["bin_lower", "bin_upper", "count"], ["0", "0.1", "1"], ["0.1", "0.2", "1"]]

    def test_empty(self, tmp_path):
        path = tmp_path / "hist.csv"
        write_histogram_csv([], 0.1, path)
        assert list(csv.reader(path.open())) == [["bin_lower", "bin_upper", "count"]]

    def test_counts_sum(self, tmp_path):
        values = np.random.default_rng(3).uniform(0, 2, size=500)
        path = tmp_path / "hist.csv"
        write_histogram_csv(values, 0.07, path)
        rows = list(csv.reader(path.open()))[1:]
        assert sum(int(r[2]) for r in rows) == 500
