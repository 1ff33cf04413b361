"""
Robustness under Gaussian input noise.

Measures noisy misclassification, finds the minimum gradient-direction step
that flips each correct prediction, and turns those statistics into predicted
missrates:

    P(miss) + (1 - P(miss)) * min(1, n * P(delta >= 0)),
    delta ~ N(-mu_a, sigma_noise^2 + sigma_a^2)

plus a near-zero estimator that assumes the density of minimum perturbations
is linear around 0.
"""

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import simpson
from tqdm.auto import tqdm

from gradreg.dataio import Dataset
from gradreg.errors import EstimatorUndefinedError, InvalidParameterError
from gradreg.model import MlpModel, input_gradients, predict
from gradreg.numcore import as_vector, gaussian_cdf, gaussian_sample, histogram_counts, substream
from gradreg.perturb import PerturbSpec, perturb_rows
from gradreg.train import evaluate_error

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.01
DEFAULT_T_MAX = 20.0
DEFAULT_CUTOFF = 0.1
QUADRATURE_NODES = 2001
MIN_MC_TRIALS = 10_000
# scan this many line-search points per forward pass
SCAN_CHUNK = 64


@dataclass(frozen=True)
class NoiseModel:
    sigma_noise: float
    d: int

    def __post_init__(self):
        if not (self.sigma_noise >= 0 and math.isfinite(self.sigma_noise)):
            raise InvalidParameterError(f"sigma_noise must be non-negative, got {self.sigma_noise}")
        if self.d < 1:
            raise InvalidParameterError(f"input dimension must be positive, got {self.d}")


@dataclass(frozen=True)
class MinPerturbStats:
    """Minimum flipping steps over the correctly classified examples."""

    samples: np.ndarray
    mu_a: float
    sigma_a: float
    bin_width: float
    counts: np.ndarray
    n_correct: int = 0
    n_unflipped: int = 0
    n_zero_grad: int = 0
    indices: Optional[np.ndarray] = None

    @classmethod
    def from_samples(
        cls,
        samples: Sequence[float],
        bin_width: float,
        n_correct: Optional[int] = None,
        n_unflipped: int = 0,
        n_zero_grad: int = 0,
        indices: Optional[Sequence[int]] = None,
    ) -> "MinPerturbStats":
        values = np.asarray(samples, dtype=np.float64).ravel()
        counts = histogram_counts(values, bin_width)
        if values.size:
            mu = float(values.mean())
            sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
        else:
            logger.warning("No minimum perturbations collected; mu_a and sigma_a are undefined")
            mu = sd = math.nan
        return cls(
            values,
            mu,
            sd,
            bin_width,
            counts,
            values.size if n_correct is None else n_correct,
            n_unflipped,
            n_zero_grad,
            None if indices is None else np.asarray(indices, dtype=np.int64),
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "mu_a": self.mu_a,
            "sigma_a": self.sigma_a,
            "n_samples": int(self.samples.size),
            "n_correct": self.n_correct,
            "n_unflipped": self.n_unflipped,
            "n_zero_grad": self.n_zero_grad,
            "bin_width": self.bin_width,
        }


@dataclass(frozen=True)
class RiskReport:
    sigma_noise: float
    p_miss_clean: float
    predicted_rate: float
    actual_rate: float
    n_directions: int = 1

    def __post_init__(self):
        for name in ("p_miss_clean", "predicted_rate", "actual_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidParameterError(f"{name} must be a rate in [0, 1], got {value}")

    def to_dict(self) -> Dict[str, object]:
        return {
            "sigma_noise": self.sigma_noise,
            "p_miss_clean": self.p_miss_clean,
            "predicted_rate": self.predicted_rate,
            "actual_rate": self.actual_rate,
            "n_directions": self.n_directions,
        }


def _check_rate(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise InvalidParameterError(f"{name} must be in [0, 1], got {value}")


def noise_misclassification(
    model: MlpModel,
    data: Dataset,
    noise: NoiseModel,
    trials: int,
    rng: np.random.Generator,
    progress: bool = False,
) -> float:
    """
    Mean error over ``trials`` corruptions x + eta per example, no clamping.

    Example i draws its noise from a substream keyed on (run seed, i), the run
    seed being one draw from ``rng``.
    """
    if trials < 1:
        raise InvalidParameterError(f"trials must be at least 1, got {trials}")
    if noise.d != data.dim:
        raise InvalidParameterError(f"noise dimension {noise.d} does not match data dimension {data.dim}")
    if noise.sigma_noise == 0.0:
        return evaluate_error(model, data)
    if len(data) == 0:
        return 0.0
    seed = int(rng.integers(2**63))
    wrong = 0
    for i in tqdm(range(len(data)), desc=f"noise {noise.sigma_noise:g}", leave=False, disable=not progress):
        eta = substream(seed, i).normal(0.0, noise.sigma_noise, size=(trials, data.dim))
        wrong += int(np.count_nonzero(predict(model, data.inputs[i] + eta) != data.labels[i]))
    return wrong / (len(data) * trials)


def actual_additional_missrate(
    model: MlpModel, data: Dataset, noise: NoiseModel, trials: int, rng: np.random.Generator
) -> float:
    """Measured noisy error minus clean error."""
    return noise_misclassification(model, data, noise, trials, rng) - evaluate_error(model, data)


class ScanOutcome(Enum):
    FLIPPED = "flipped"
    ZERO_GRADIENT = "zero_gradient"
    NO_FLIP = "no_flip"


def _scan(model: MlpModel, x: np.ndarray, label: int, grad: np.ndarray, step: float, t_max: float):
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        return None, ScanOutcome.ZERO_GRADIENT
    e = grad / norm
    n_steps = int(math.floor(t_max / step + 1e-9))
    for first in range(1, n_steps + 1, SCAN_CHUNK):
        ks = np.arange(first, min(first + SCAN_CHUNK, n_steps + 1))
        flipped = np.flatnonzero(predict(model, x + (ks * step)[:, None] * e) != label)
        if flipped.size:
            return float(ks[flipped[0]] * step), ScanOutcome.FLIPPED
    return None, ScanOutcome.NO_FLIP


def _check_scan_args(step: float, t_max: float) -> None:
    if not step > 0:
        raise InvalidParameterError(f"line-search step must be positive, got {step}")
    if not t_max >= step:
        raise InvalidParameterError(f"t_max={t_max} must be at least one step ({step})")


def min_perturbation_line_search(
    model: MlpModel, x, t, step: float = DEFAULT_STEP, t_max: float = DEFAULT_T_MAX
) -> Optional[float]:
    """
    Smallest ``k * step <= t_max`` at which x + k*step*e is misclassified, with
    e the unit input gradient at x held fixed. None when x is already wrong,
    the gradient vanishes, or nothing flips by t_max.
    """
    _check_scan_args(step, t_max)
    x = as_vector(x, "x")
    t = as_vector(t, "t")
    label = int(np.argmax(t))
    if int(predict(model, x[None, :])[0]) != label:
        return None
    grad = input_gradients(model, x[None, :], t[None, :])[0]
    found, outcome = _scan(model, x, label, grad, step, t_max)
    if outcome is ScanOutcome.ZERO_GRADIENT:
        logger.warning("Zero input gradient at a correctly classified point; no search direction")
    return found


def min_perturb_stats(
    model: MlpModel,
    data: Dataset,
    step: float = DEFAULT_STEP,
    t_max: float = DEFAULT_T_MAX,
    bin_width: float = 0.01,
    progress: bool = False,
) -> MinPerturbStats:
    _check_scan_args(step, t_max)
    correct = np.flatnonzero(predict(model, data.inputs) == data.labels)
    grads = input_gradients(model, data.inputs[correct], data.targets[correct])
    samples, indices = [], []
    tally = {outcome: 0 for outcome in ScanOutcome}
    for row, i in enumerate(tqdm(correct, desc="line search", leave=False, disable=not progress)):
        found, outcome = _scan(model, data.inputs[i], int(data.labels[i]), grads[row], step, t_max)
        tally[outcome] += 1
        if found is not None:
            samples.append(found)
            indices.append(int(i))
    if tally[ScanOutcome.ZERO_GRADIENT]:
        logger.warning("%d correct examples had a zero input gradient", tally[ScanOutcome.ZERO_GRADIENT])
    if tally[ScanOutcome.NO_FLIP]:
        logger.info("%d correct examples did not flip by t_max=%g", tally[ScanOutcome.NO_FLIP], t_max)
    stats = MinPerturbStats.from_samples(
        samples,
        bin_width,
        n_correct=int(correct.size),
        n_unflipped=tally[ScanOutcome.NO_FLIP],
        n_zero_grad=tally[ScanOutcome.ZERO_GRADIENT],
        indices=indices,
    )
    logger.info("min perturbation over %d samples: mu_a=%.4f sigma_a=%.4f", stats.samples.size, stats.mu_a, stats.sigma_a)
    return stats


def adversarial_bound(n: int, per_direction: float) -> float:
    """Union bound over n directions: min(1, n * per_direction)."""
    if n < 1:
        raise InvalidParameterError(f"n must be at least 1, got {n}")
    _check_rate("per_direction", per_direction)
    return min(1.0, n * per_direction)


def isotropic_bound(n: int, d: int) -> float:
    """Bound for equal-length directions with sigma^2 = ||a||^2 / d: n * (1 - Phi(sqrt(d)))."""
    if d < 1:
        raise InvalidParameterError(f"d must be positive, got {d}")
    return adversarial_bound(n, gaussian_cdf(-math.sqrt(d)))


def flip_probability(mu_a: float, sigma_a: float, sigma_noise: float) -> float:
    """P(delta >= 0) for delta ~ N(-mu_a, sigma_noise^2 + sigma_a^2)."""
    if not (math.isfinite(mu_a) and math.isfinite(sigma_a)):
        raise EstimatorUndefinedError("minimum-perturbation moments are undefined")
    if sigma_a < 0 or sigma_noise < 0:
        raise InvalidParameterError("standard deviations must be non-negative")
    scale = math.sqrt(sigma_noise**2 + sigma_a**2)
    if scale == 0.0:
        return 0.0 if mu_a > 0 else 1.0
    return gaussian_cdf(-mu_a / scale)


def predict_missrate_from_moments(
    p_miss: float, mu_a: float, sigma_a: float, sigma_noise: float, n: int = 1
) -> float:
    _check_rate("p_miss", p_miss)
    extra = adversarial_bound(n, flip_probability(mu_a, sigma_a, sigma_noise))
    return min(1.0, max(0.0, p_miss + (1.0 - p_miss) * extra))


def predict_missrate(p_miss: float, stats: MinPerturbStats, noise: NoiseModel, n: int = 1) -> float:
    return predict_missrate_from_moments(p_miss, stats.mu_a, stats.sigma_a, noise.sigma_noise, n)


def linear_density_missrate(
    stats: MinPerturbStats, p_miss: float, noise: NoiseModel, cutoff: float = DEFAULT_CUTOFF
) -> float:
    """
    Additional misclassification from minimum perturbations near zero.

    Fits f(a) = c*a on [0, cutoff] by least squares against the histogram mass
    of each bin (count / correct examples, expected mass c*(hi^2 - lo^2)/2),
    then integrates (1 - p_miss) * c*a * (1 - Phi(a / sigma_noise)).
    """
    _check_rate("p_miss", p_miss)
    if not cutoff > 0:
        raise InvalidParameterError(f"cutoff must be positive, got {cutoff}")
    n_bins = int(math.floor(cutoff / stats.bin_width + 1e-9))
    if n_bins == 0:
        raise EstimatorUndefinedError(f"bin width {stats.bin_width} leaves no bins below cutoff {cutoff}")
    if stats.n_correct == 0:
        raise EstimatorUndefinedError("no correctly classified examples to estimate a density from")
    counts = np.zeros(n_bins)
    kept = stats.counts[:n_bins]
    counts[: kept.size] = kept
    if not counts.any():
        raise EstimatorUndefinedError(f"no minimum perturbations below cutoff {cutoff}")

    edges = np.arange(n_bins + 1) * stats.bin_width
    basis = 0.5 * (edges[1:] ** 2 - edges[:-1] ** 2)
    mass = counts / stats.n_correct
    slope = float(basis @ mass / (basis @ basis))
    logger.debug("near-zero density slope c=%.6g over %d bins", slope, n_bins)

    if noise.sigma_noise == 0.0:
        return 0.0
    upper = n_bins * stats.bin_width
    a = np.linspace(0.0, upper, QUADRATURE_NODES)
    integrand = slope * a * gaussian_cdf(-a / noise.sigma_noise)
    return float((1.0 - p_miss) * simpson(integrand, x=a))


def monte_carlo_missrate(
    p_miss: float,
    stats: MinPerturbStats,
    noise: NoiseModel,
    trials: int,
    rng: np.random.Generator,
    n: int = 1,
) -> float:
    """Simulate a ~ N(mu_a, sigma_a^2) against eta0 ~ N(0, sigma_noise^2) and apply the missrate formula."""
    _check_rate("p_miss", p_miss)
    if trials < MIN_MC_TRIALS:
        raise InvalidParameterError(f"trials must be at least {MIN_MC_TRIALS}, got {trials}")
    if not (math.isfinite(stats.mu_a) and math.isfinite(stats.sigma_a)):
        raise EstimatorUndefinedError("minimum-perturbation moments are undefined")
    a = gaussian_sample(rng, stats.mu_a, stats.sigma_a, trials)
    eta = gaussian_sample(rng, 0.0, noise.sigma_noise, trials)
    events = float(np.mean(eta >= a))
    return min(1.0, p_miss + (1.0 - p_miss) * adversarial_bound(n, events))


def transfer_error(source: MlpModel, target: MlpModel, data: Dataset, spec: PerturbSpec) -> float:
    """Error of ``target`` on perturbations computed against ``source``."""
    if len(data) == 0:
        return 0.0
    eps = perturb_rows(source, data.inputs, data.targets, spec)
    return float(np.mean(predict(target, data.inputs + eps) != data.labels))


def risk_reports(
    model: MlpModel,
    data: Dataset,
    stats: MinPerturbStats,
    noise_levels: Sequence[float],
    trials: int,
    seed: int,
    n: int = 1,
    progress: bool = False,
) -> List[RiskReport]:
    """Actual against predicted rates, one report per noise level; level k uses substream (seed, k)."""
    p_miss = evaluate_error(model, data)
    reports = []
    for k, level in enumerate(noise_levels):
        noise = NoiseModel(level, data.dim)
        actual = noise_misclassification(model, data, noise, trials, substream(seed, k), progress)
        predicted = predict_missrate(p_miss, stats, noise, n)
        logger.info("sigma_noise=%g actual=%.4f predicted=%.4f", level, actual, predicted)
        reports.append(RiskReport(level, p_miss, predicted, actual, n))
    return reports


def write_min_perturbations_csv(stats: MinPerturbStats, path: Union[str, Path]) -> None:
    indices = stats.indices if stats.indices is not None else np.arange(stats.samples.size)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("example", "min_perturbation"))
        for i, a in zip(indices, stats.samples):
            writer.writerow((int(i), f"{a:.10g}"))
