"""Parametric scorers standing in for cross-encoders.

A scorer maps a query-passage feature vector to a scalar logit. Two
kinds are supported: ``linear`` (w.x + b) and ``mlp1`` (one tanh hidden
layer). Parameters live in a single flat vector so the optimizer,
checkpoints, and finite-difference tests all share one layout:

    linear: [w_0 .. w_{d-1}, b]
    mlp1:   [W1 row-major (h x d), b1 (h), w2 (h), b2]

tanh keeps the scorer smooth everywhere, so gradient checks need no
kink carve-outs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError

KINDS = ("linear", "mlp1")


def weight_count(kind: str, dim: int, hidden: int = 0) -> int:
    if kind == "linear":
        return dim + 1
    if kind == "mlp1":
        return dim * hidden + hidden + hidden + 1
    raise InvalidInputError(f"unknown scorer kind {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class ScorerParams:
    """Immutable flat parameter vector plus its interpretation."""

    kind: str
    dim: int
    hidden: int
    weights: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown scorer kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise InvalidInputError(f"feature dimension must be >= 1, got {self.dim}")
        if self.kind == "mlp1" and self.hidden < 1:
            raise InvalidInputError(f"mlp1 hidden width must be >= 1, got {self.hidden}")
        weights = np.array(self.weights, dtype=float, copy=True).ravel()
        expected = weight_count(self.kind, self.dim, self.hidden)
        if weights.size != expected:
            raise InvalidInputError(
                f"{self.kind} scorer with d={self.dim}, h={self.hidden} needs "
                f"{expected} weights, got {weights.size}"
            )
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    def _unpack(self):
        d, h = self.dim, self.hidden
        if self.kind == "linear":
            return self.weights[:d], self.weights[d]
        w1 = self.weights[: d * h].reshape(h, d)
        b1 = self.weights[d * h : d * h + h]
        w2 = self.weights[d * h + h : d * h + 2 * h]
        b2 = self.weights[d * h + 2 * h]
        return w1, b1, w2, b2

    def with_weights(self, weights: np.ndarray) -> "ScorerParams":
        return ScorerParams(self.kind, self.dim, self.hidden, weights)


def _check_features(params: ScorerParams, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise InvalidInputError(
            f"feature dimension mismatch: scorer expects d={params.dim}, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("features contain non-finite entries")
    return x


def score(params: ScorerParams, features) -> float:
    """Scalar relevance logit for one feature vector."""
    return float(score_batch(params, np.asarray(features, dtype=float)[None, :])[0])


def score_batch(params: ScorerParams, features) -> np.ndarray:
    """Logits for a batch of feature vectors, shape (n,)."""
    x = _check_features(params, features)
    if params.kind == "linear":
        w, b = params._unpack()
        return x @ w + b
    w1, b1, w2, b2 = params._unpack()
    return np.tanh(x @ w1.T + b1) @ w2 + b2


def backward(params: ScorerParams, features, upstream) -> np.ndarray:
    """Chain upstream per-score gradients into a flat parameter gradient.

    Returns sum_i upstream_i * d(score_i)/d(theta), laid out exactly like
    ``params.weights``.
    """
    x = _check_features(params, features)
    u = np.asarray(upstream, dtype=float).ravel()
    if u.size != x.shape[0]:
        raise InvalidInputError(
            f"backward length mismatch: {x.shape[0]} feature rows vs {u.size} upstream gradients"
        )
    if params.kind == "linear":
        grad_w = u @ x
        grad_b = u.sum()
        return np.concatenate([grad_w, [grad_b]])
    w1, b1, w2, b2 = params._unpack()
    z = x @ w1.T + b1
    a = np.tanh(z)
    grad_w2 = u @ a
    grad_b2 = u.sum()
    dz = (u[:, None] * w2[None, :]) * (1.0 - a * a)  # (n, h)
    grad_w1 = dz.T @ x
    grad_b1 = dz.sum(axis=0)
    return np.concatenate([grad_w1.ravel(), grad_b1, grad_w2, [grad_b2]])


def init_params(kind: str, dim: int, hidden: int = 0, seed: int = 0) -> ScorerParams:
    """Deterministic init: weights Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases 0."""
    rng = np.random.default_rng(seed)
    if kind == "linear":
        bound = 1.0 / np.sqrt(dim)
        w = rng.uniform(-bound, bound, size=dim)
        return ScorerParams(kind, dim, 0, np.concatenate([w, [0.0]]))
    if kind == "mlp1":
        if hidden < 1:
            raise InvalidInputError(f"mlp1 hidden width must be >= 1, got {hidden}")
        b1 = 1.0 / np.sqrt(dim)
        w1 = rng.uniform(-b1, b1, size=(hidden, dim))
        b2 = 1.0 / np.sqrt(hidden)
        w2 = rng.uniform(-b2, b2, size=hidden)
        return ScorerParams(
            kind, dim, hidden,
            np.concatenate([w1.ravel(), np.zeros(hidden), w2, [0.0]]),
        )
    raise InvalidInputError(f"unknown scorer kind {kind!r}; expected one of {KINDS}")
