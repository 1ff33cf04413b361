"""
Worst-case Lp perturbations of the linearized loss.

For a loss gradient g and budget sigma the maximizer of g.eps over
``||eps||_p <= sigma`` is

    eps = sigma * sign(g) * (|g| / ||g||_{p*}) ** (1 / (p - 1))

and the attained value sigma * ||g||_{p*} is the induced regularizer. p = inf
reduces to the sign method, p = 1 puts the whole budget on the largest
gradient entry, p = 2 is the normalized gradient.

All epsilon functions accept a single gradient or a matrix of gradient rows.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog, minimize

from gradreg.errors import InvalidParameterError
from gradreg.model import MlpModel, backprop, forward, input_gradients, loss_xent, presoftmax_jacobian
from gradreg.numcore import INF, as_vector, canonical_p, dual_exponent, lp_norm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerturbSpec:
    p: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "p", canonical_p(self.p))
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidParameterError(f"perturbation budget sigma must be positive, got {self.sigma}")

    @property
    def dual(self) -> float:
        return dual_exponent(self.p)


def epsilon_sign(grad, sigma: float) -> np.ndarray:
    return sigma * np.sign(np.asarray(grad, dtype=np.float64))


def epsilon_argmax(grad, sigma: float) -> np.ndarray:
    """Whole budget on the largest-magnitude entry (lowest index on ties), with its sign."""
    g = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    eps = np.zeros_like(g)
    rows = np.arange(g.shape[0])
    top = np.argmax(np.abs(g), axis=1)
    eps[rows, top] = sigma * np.sign(g[rows, top])
    return eps.reshape(np.shape(grad))


def epsilon_l2(grad, sigma: float) -> np.ndarray:
    g = np.asarray(grad, dtype=np.float64)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(norm > 0, sigma * g / np.where(norm > 0, norm, 1.0), 0.0)


def worst_case_epsilon(grad, spec: PerturbSpec) -> np.ndarray:
    """Closed-form maximizer of grad.eps over the p-ball of radius sigma; zero gradient gives zero."""
    p = spec.p
    if p == INF:
        return epsilon_sign(grad, spec.sigma)
    if p == 1.0:
        return epsilon_argmax(grad, spec.sigma)
    if p == 2.0:
        return epsilon_l2(grad, spec.sigma)
    g = np.asarray(grad, dtype=np.float64)
    mag = np.abs(g)
    dual_norm = np.asarray(lp_norm(g, spec.dual))[..., None]
    safe_norm = np.where(dual_norm > 0, dual_norm, 1.0)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(mag) - np.log(safe_norm)
    eps = spec.sigma * np.sign(g) * np.exp(log_ratio / (p - 1.0))
    return np.where(mag > 0, eps, 0.0)


def regularizer_value(grad, spec: PerturbSpec):
    """sigma * ||grad||_{p*}, the first-order loss increase under the worst perturbation."""
    return spec.sigma * lp_norm(grad, spec.dual)


def second_order_term(grad, spec: PerturbSpec):
    """
    sigma^2 / 2 * ||grad||_{p*}^2: the Gauss-Newton second-order term of the
    expansion. For p = 2 it equals sigma^2/2 * Tr(grad grad^T).
    """
    return 0.5 * spec.sigma**2 * lp_norm(grad, spec.dual) ** 2


def _rescale_to_sphere(eps: np.ndarray, p: float, sigma: float) -> np.ndarray:
    norm = lp_norm(eps, p)
    return eps * (sigma / norm) if norm > 0 else eps


def oracle_epsilon(grad, spec: PerturbSpec, iterations: int, rng: np.random.Generator) -> np.ndarray:
    """
    Numerical maximizer of grad.eps over the p-ball, independent of the closed form.

    Best of random directions rescaled onto the sphere and a constrained solver
    started from the best of them: a linear program for p in {1, inf} and SLSQP
    on ``sum |eps|^p <= sigma^p`` otherwise. The winner is rescaled onto the
    sphere so it never exceeds the budget.
    """
    g = as_vector(grad, "grad")
    if not np.any(g):
        return np.zeros_like(g)
    p, sigma, d = spec.p, spec.sigma, g.size

    directions = rng.normal(size=(max(iterations, 1), d))
    if p != INF:
        directions = np.sign(directions) * np.abs(directions) ** (2.0 / p)
    candidates = directions * (sigma / np.asarray(lp_norm(directions, p))[:, None])
    best = candidates[np.argmax(candidates @ g)]

    refined = _refine(g, p, sigma, best, iterations)
    if refined is not None and float(g @ refined) > float(g @ best):
        best = refined
    logger.debug("Oracle objective %.12g for p=%s", float(g @ best), p)
    return best


def _refine(g: np.ndarray, p: float, sigma: float, start: np.ndarray, iterations: int) -> Optional[np.ndarray]:
    d = g.size
    if p == INF:
        res = linprog(-g, bounds=[(-sigma, sigma)] * d, method="highs")
        return _rescale_to_sphere(res.x, p, sigma) if res.success else None
    if p == 1.0:
        # eps = u - v with u, v >= 0 and sum(u + v) <= sigma
        res = linprog(
            np.concatenate([-g, g]),
            A_ub=np.ones((1, 2 * d)),
            b_ub=[sigma],
            bounds=[(0, None)] * (2 * d),
            method="highs",
        )
        return _rescale_to_sphere(res.x[:d] - res.x[d:], p, sigma) if res.success else None

    constraint = {
        "type": "ineq",
        "fun": lambda e: sigma**p - np.sum(np.abs(e) ** p),
        "jac": lambda e: -p * np.sign(e) * np.abs(e) ** (p - 1.0),
    }
    res = minimize(
        lambda e: -float(g @ e),
        start,
        jac=lambda e: -g,
        constraints=[constraint],
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": max(iterations, 100)},
    )
    best = start
    if np.all(np.isfinite(res.x)) and lp_norm(res.x, p) > 0:
        best = _rescale_to_sphere(res.x, p, sigma)
    polished = _polish_ratio(g, p, best)
    if polished is not None and float(g @ polished) > float(g @ best):
        best = _rescale_to_sphere(polished, p, sigma)
    return best


def _polish_ratio(g: np.ndarray, p: float, start: np.ndarray) -> Optional[np.ndarray]:
    """Unconstrained BFGS on -g.e / ||e||_p, which is scale-free and smooth away from e = 0."""

    def objective(e):
        norm = lp_norm(e, p)
        value = float(g @ e)
        grad_norm = np.sign(e) * (np.abs(e) / norm) ** (p - 1.0)
        return -value / norm, -(g / norm - value * grad_norm / norm**2)

    if lp_norm(start, p) == 0:
        return None
    res = minimize(objective, start, jac=True, method="BFGS", options={"gtol": 1e-13, "maxiter": 500})
    if not np.all(np.isfinite(res.x)) or lp_norm(res.x, p) == 0:
        return None
    return res.x


def perturb_rows(model: MlpModel, X: np.ndarray, T: np.ndarray, spec: PerturbSpec) -> np.ndarray:
    """Per-example worst-case perturbation of the cross-entropy (decay excluded)."""
    return worst_case_epsilon(input_gradients(model, X, T), spec)


@dataclass(frozen=True)
class Decomposition:
    """eps = sigma / ||grad_x L||_2 * (y - t) J_o(x), split into one term per class."""

    residual: np.ndarray
    components: np.ndarray  # K x d, row k = class k's share of eps
    epsilon: np.ndarray
    zero_gradient: bool


def decompose_perturbation(model: MlpModel, x, t, sigma: float) -> Decomposition:
    x = as_vector(x, "x")
    t = as_vector(t, "t")
    residual = forward(model, x).y - t
    jac = presoftmax_jacobian(model, x)
    grad = residual @ jac
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        logger.warning("Zero input gradient; decomposition components are all zero")
        zeros = np.zeros_like(jac)
        return Decomposition(residual, zeros, np.zeros_like(x), True)
    components = (sigma / norm) * residual[:, None] * jac
    return Decomposition(residual, components, components.sum(axis=0), False)


def linearization_gap(model: MlpModel, x, t, spec: PerturbSpec) -> float:
    """L(x + eps) - L(x) - sigma * ||grad_x L||_{p*}: what the first-order model misses."""
    x = as_vector(x, "x")
    bundle = backprop(model, x, t)
    eps = worst_case_epsilon(bundle.grad_input, spec)
    perturbed = loss_xent(forward(model, x + eps), t, model)
    return perturbed - bundle.loss - regularizer_value(bundle.grad_input, spec)


def scale_sigma_for_dim(sigma_ref: float, d_ref: int, d_new: int) -> float:
    """Keep the per-dimension budget fixed: sigma * sqrt(d_new / d_ref)."""
    if d_ref <= 0 or d_new <= 0:
        raise InvalidParameterError(f"dimensions must be positive, got {d_ref} and {d_new}")
    return sigma_ref * math.sqrt(d_new / d_ref)
