"""AdamW with linear warmup, per-document batch normalization, and the
training loop with validation-proxy checkpoint selection.

The post-warmup learning rate is constant (a decay shape can be layered
on later); validation runs on a held-out query set scored with nDCG@10,
playing the role of a cheap frequent generalization proxy. Any
non-finite loss or gradient aborts the run: silent batch skips mask
bugs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TextIO

import numpy as np

from .core import (
    DistillTriplet,
    InvalidInputError,
    LossConfig,
    LossOutput,
    RankforgeError,
    ScoredList,
    TeacherRanking,
)
from .data import QuerySample, RankingDataset, make_sampler, score_dataset
from .io import ExperimentConfig
from .losses import TrainingBatch, loss_by_name
from .metrics import ndcg_at_k
from .scorer import ScorerParams, backward, init_params, score_batch


class DivergedRunError(RankforgeError, RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, step: int, last_loss: float):
        super().__init__(f"run diverged at step {step} (last finite loss {last_loss:.6g})")
        self.step = step
        self.last_loss = last_loss


@dataclass(frozen=True)
class OptimizerState:
    """AdamW moments plus the shared schedule hyperparameters."""

    step: int
    m: np.ndarray
    v: np.ndarray
    base_lr: float
    warmup_steps: int = 5000
    max_steps: int = 200_000
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("m", "v"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.m.shape != self.v.shape:
            raise InvalidInputError("optimizer moments must have equal shapes")
        if self.step < 0 or self.step > self.max_steps:
            raise InvalidInputError(f"step {self.step} outside [0, {self.max_steps}]")

    @classmethod
    def fresh(cls, num_params: int, config: ExperimentConfig) -> "OptimizerState":
        opt = config.optimizer
        zeros = np.zeros(num_params)
        return cls(0, zeros, zeros, opt.lr, opt.warmup_steps, opt.max_steps,
                   opt.weight_decay, opt.beta1, opt.beta2, opt.eps)


@dataclass(frozen=True)
class BestCheckpoint:
    params: ScorerParams
    validation: float
    step: int


@dataclass(frozen=True)
class TrainState:
    params: ScorerParams
    opt: OptimizerState
    best: BestCheckpoint | None
    seed: int


def lr_at(opt: OptimizerState, step: int) -> float:
    """Learning rate at a 1-based step: linear ramp to base_lr, then flat."""
    if not 1 <= step <= opt.max_steps:
        raise InvalidInputError(f"step {step} outside [1, {opt.max_steps}]")
    if step <= opt.warmup_steps:
        return opt.base_lr * step / opt.warmup_steps
    return opt.base_lr


def adamw_step(state: TrainState, grad) -> TrainState:
    """One decoupled-weight-decay Adam update; returns the new state."""
    g = np.asarray(grad, dtype=float)
    opt = state.opt
    theta = state.params.weights
    if g.shape != theta.shape:
        raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {theta.shape}")
    if not np.all(np.isfinite(g)):
        raise DivergedRunError(opt.step + 1, float("nan"))
    t = opt.step + 1
    lr = lr_at(opt, t)
    m = opt.beta1 * opt.m + (1.0 - opt.beta1) * g
    v = opt.beta2 * opt.v + (1.0 - opt.beta2) * (g * g)
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    theta = theta - lr * (m_hat / (np.sqrt(v_hat) + opt.eps) + opt.weight_decay * theta)
    return replace(
        state,
        params=state.params.with_weights(theta),
        opt=replace(opt, step=t, m=m, v=v),
    )


def normalize_batch_loss(per_query_losses, docs_per_query) -> LossOutput:
    """Combine per-query losses, normalizing by the total document count.

    value = sum(values) / sum(docs); gradients are scaled by 1/sum(docs)
    and concatenated in query order.
    """
    losses = list(per_query_losses)
    docs = [int(d) for d in docs_per_query]
    if len(losses) != len(docs):
        raise InvalidInputError(f"{len(losses)} losses vs {len(docs)} document counts")
    total_docs = sum(docs)
    if total_docs <= 0:
        raise InvalidInputError("total document count must be positive")
    for out, d in zip(losses, docs):
        if out.grad.size != d:
            raise InvalidInputError(
                f"document count {d} does not match gradient length {out.grad.size}"
            )
    value = sum(out.value for out in losses) / total_docs
    grad = np.concatenate([out.grad for out in losses]) / total_docs
    return LossOutput(value, grad)


def _to_training_batch(sample: QuerySample, scores: np.ndarray) -> TrainingBatch:
    scored = ScoredList(sample.query_id, sample.passage_ids,
                        tuple(float(s) for s in scores), sample.labels)
    triplet = None
    if sample.teacher_pos is not None:
        triplet = DistillTriplet(sample.query_id, sample.passage_ids[0], sample.passage_ids[1],
                                 sample.teacher_pos, sample.teacher_neg)
    teacher = None
    if sample.teacher_order is not None:
        teacher = TeacherRanking(sample.query_id, sample.teacher_order)
    return TrainingBatch(scored, triplet=triplet, teacher=teacher)


def validation_ndcg(params: ScorerParams, validation: RankingDataset, k: int) -> float:
    """Mean nDCG@k of the current student over the held-out queries."""
    return ndcg_at_k(score_dataset(params, validation), validation.qrels(), k).mean


def train(config: ExperimentConfig, train_data: RankingDataset, validation: RankingDataset,
          seed: int, log_stream: TextIO | None = None) -> TrainState:
    """Run one seed to completion and return the final state with its best checkpoint.

    Fully deterministic given (config, seed): the sampler and the
    initializer both derive from the seed, and every validation writes
    one tab-separated log line `step  train_loss  val_ndcg  new_best`.
    """
    if not train_data.queries:
        raise InvalidInputError("training data is empty")
    loss_cfg = LossConfig(config.loss_temperature, config.loss_margin)
    params = init_params(config.scorer.kind, config.scorer.dim, config.scorer.hidden, seed)
    opt = OptimizerState.fresh(params.weights.size, config)
    sampler = make_sampler(config, train_data)
    rng = np.random.default_rng(seed)

    def validate(state: TrainState, step: int, interval_losses: list[float]) -> TrainState:
        value = validation_ndcg(state.params, validation, config.ndcg_k)
        is_best = state.best is None or value > state.best.validation
        if is_best:
            state = replace(state, best=BestCheckpoint(state.params, value, step))
        if log_stream is not None:
            mean_loss = format(float(np.mean(interval_losses)), ".10g") if interval_losses else "na"
            log_stream.write(f"{step}\t{mean_loss}\t{value:.10g}\t{int(is_best)}\n")
        return state

    state = TrainState(params, opt, None, seed)
    state = validate(state, 0, [])
    last_loss = 0.0
    interval: list[float] = []
    # every loss op is overflow-safe for |score| below this bound; past it
    # the run has diverged even though the floats are still finite
    score_bound = 1e150
    for step in range(1, config.optimizer.max_steps + 1):
        samples = sampler.sample(rng)
        outs, docs, feats = [], [], []
        for sample in samples:
            scores = score_batch(state.params, sample.features)
            if not np.all(np.isfinite(scores)) or np.max(np.abs(scores)) > score_bound:
                raise DivergedRunError(step, last_loss)
            outs.append(loss_by_name(config.objective, _to_training_batch(sample, scores), loss_cfg))
            docs.append(len(sample.passage_ids))
            feats.append(sample.features)
        combined = normalize_batch_loss(outs, docs)
        grad = backward(state.params, np.vstack(feats), combined.grad)
        if not np.all(np.isfinite(grad)):
            raise DivergedRunError(step, last_loss)
        state = adamw_step(state, grad)
        last_loss = combined.value
        interval.append(last_loss)
        if step % config.validate_every == 0 or step == config.optimizer.max_steps:
            state = validate(state, step, interval)
            interval = []
    return state
