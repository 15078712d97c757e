"""Finite-difference verification of every analytic gradient.

Central differences with step h compare against the hand-derived
gradients; the error measure is |analytic - numeric| scaled by
max(1, |analytic|, |numeric|) so near-zero gradients are judged on
absolute error. Hinge inputs are resampled away from the kink, where no
two-sided derivative exists.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import DistillTriplet, InvalidInputError, LossConfig, ScoredList
from .losses import (
    OBJECTIVES,
    adr_mse,
    bce_pair,
    distill_ranknet,
    hinge_pair,
    info_nce,
    margin_mse,
)
from .scorer import ScorerParams, backward, init_params, score_batch

DEFAULT_H = 1e-5
PASS_THRESHOLD = 1e-5
SCORE_SIGMA = 3.0


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = DEFAULT_H) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        bumped = x.copy()
        bumped[i] = x[i] + h
        f_plus = f(bumped)
        bumped[i] = x[i] - h
        f_minus = f(bumped)
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


def _loss_fn(objective: str, cfg: LossConfig, rng: np.random.Generator, n: int):
    """Sample one random problem; return (value+grad fn, score vector)."""
    if objective in ("bce", "hinge", "margin_mse"):
        scores = rng.normal(0.0, SCORE_SIGMA, size=2)
        if objective == "bce":
            return lambda s: bce_pair(s[0], s[1]), scores
        if objective == "hinge":
            # keep inputs off the kink, where the subgradient is one-sided
            while abs(cfg.margin - (scores[0] - scores[1])) < 1e-2:
                scores = rng.normal(0.0, SCORE_SIGMA, size=2)
            return lambda s: hinge_pair(s[0], s[1], cfg), scores
        triplet = DistillTriplet("q", "p", "n", float(rng.normal(0, SCORE_SIGMA)),
                                 float(rng.normal(0, SCORE_SIGMA)))
        return lambda s: margin_mse(triplet, s[0], s[1]), scores
    scores = rng.normal(0.0, SCORE_SIGMA, size=n)
    if objective == "infonce":
        labels = [0] * n
        labels[int(rng.integers(n))] = 1
        ids = tuple(f"d{i}" for i in range(n))
        labels = tuple(labels)
        return (
            lambda s: info_nce(ScoredList("q", ids, tuple(float(v) for v in s), labels)),
            scores,
        )
    if objective == "distill_ranknet":
        return distill_ranknet, scores
    if objective == "adr_mse":
        return lambda s: adr_mse(s, cfg), scores
    raise InvalidInputError(f"unknown objective {objective!r}; expected one of {', '.join(OBJECTIVES)}")


def check_objective(objective: str, n: int = 8, trials: int = 100, seed: int = 0,
                    cfg: LossConfig = LossConfig(), h: float = DEFAULT_H,
                    break_gradient: bool = False) -> float:
    """Max relative error between analytic and finite-difference gradients.

    Pairwise objectives always use their two-score shape; n applies to
    the listwise ones. ``break_gradient`` perturbs the analytic gradient
    to serve as a negative control for the harness itself.
    """
    if objective == "adr_mse":
        if n < 1:
            raise InvalidInputError(f"adr_mse needs n >= 1, got {n}")
    elif n < 2:
        raise InvalidInputError(f"{objective} needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        fn, scores = _loss_fn(objective, cfg, rng, n)
        out = fn(scores)
        analytic = out.grad + 1e-3 if break_gradient else out.grad
        numeric = central_difference(lambda s: fn(s).value, scores, h)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def check_end_to_end(objective: str, kind: str = "mlp1", dim: int = 5, hidden: int = 4,
                     n: int = 8, trials: int = 20, seed: int = 0,
                     cfg: LossConfig = LossConfig(), h: float = DEFAULT_H) -> float:
    """FD check of the full chain d(loss(scorer(theta, X)))/d(theta)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        params = init_params(kind, dim, hidden, seed=seed * 1000 + trial)
        fn, scores = _loss_fn(objective, cfg, rng, n)
        while True:
            features = rng.normal(size=(scores.size, dim)) * SCORE_SIGMA
            s = score_batch(params, features)
            # the kink constraint applies to the scorer's actual outputs here
            if objective != "hinge" or abs(cfg.margin - (s[0] - s[1])) >= 1e-2:
                break

        def total(theta: np.ndarray) -> float:
            p = ScorerParams(kind, dim, hidden if kind == "mlp1" else 0, theta)
            return fn(score_batch(p, features)).value

        out = fn(s)
        analytic = backward(params, features, out.grad)
        numeric = central_difference(total, params.weights, h)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
