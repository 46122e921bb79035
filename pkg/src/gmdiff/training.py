"""Stochastic training of the sequence predictor on the collapsed objective.

Each step draws, per example: z^0 from the encoder, a uniform step
t ~ Uni{1..T}, z^t from the closed-form forward marginal, and a training
target x~ from the augmentation distribution (the ground-truth one-hot when
t = 1 or omega = inf).  The loss is the batch-mean summed cross-entropy and
one rectified-Adam update is applied per step.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffusion, predictor
from .diffusion import NoiseSchedule, one_hot
from .geometry import PackingResult

__all__ = ["TrainConfig", "TrainReport", "train_step", "overfit_monitor", "validation_loss", "fit"]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    max_iterations: int = 2000
    learning_rate: float = 7.5e-4
    lr_decay: float = 0.999975  # multiplicative, per step
    omega: float = math.inf
    T: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.3
    early_stop_patience: int = 10
    eval_interval: int = 100
    valid_subset: int = 4096
    overfit_threshold: float = 0.01
    monitor_samples: int = 0  # 0 disables the duplicate-fraction monitor
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.batch_size, self.max_iterations, self.T, self.eval_interval) < 1:
            raise ValueError("batch_size, max_iterations, T and eval_interval must be positive")
        if self.learning_rate <= 0.0 or not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("learning_rate must be positive and lr_decay in (0, 1]")
        if not (self.omega == math.inf or self.omega > 0.0):
            raise ValueError("omega must be positive or infinite")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be positive")
        if self.overfit_threshold < 0.0 or self.monitor_samples < 0:
            raise ValueError("overfit_threshold and monitor_samples must be non-negative")
        if self.valid_subset < 1:
            raise ValueError("valid_subset must be positive")

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc["omega"] = "inf" if self.omega == math.inf else self.omega
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if doc.get("omega") in ("inf", "Infinity"):
            doc["omega"] = math.inf
        return cls(**doc)


@dataclass
class TrainReport:
    iterations: list[int] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    valid_iterations: list[int] = field(default_factory=list)
    valid_losses: list[float] = field(default_factory=list)
    duplicate_fractions: list[float] = field(default_factory=list)
    overfit_flags: list[bool] = field(default_factory=list)
    best_iteration: int = 0
    best_valid_loss: float = math.inf
    stopped_early: bool = False
    wall_seconds: float = 0.0
    best_checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "train_losses": self.train_losses,
            "valid_iterations": self.valid_iterations,
            "valid_losses": self.valid_losses,
            "duplicate_fractions": self.duplicate_fractions,
            "overfit_flags": self.overfit_flags,
            "best_iteration": self.best_iteration,
            "best_valid_loss": self.best_valid_loss,
            "stopped_early": self.stopped_early,
            "wall_seconds": self.wall_seconds,
            "best_checkpoint_path": self.best_checkpoint_path,
        }


def _draw_batch_states(
    batch_x: np.ndarray,
    pack: PackingResult,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(z0, ts, zt) for a batch of sequences: encoder draw, uniform steps, forward noise."""
    B, S = batch_x.shape
    z0 = pack.means[batch_x] + pack.sigma * rng.standard_normal((B, S, pack.latent_dim))
    ts = rng.integers(1, sched.T + 1, size=B)
    zt = diffusion.forward_sample(z0, ts, sched, rng)
    return z0, ts, zt


def _augmentation_targets(
    batch_x: np.ndarray,
    z0: np.ndarray,
    zt: np.ndarray,
    ts: np.ndarray,
    omega: float,
    sched: NoiseSchedule,
    pack: PackingResult,
    rng: np.random.Generator,
) -> np.ndarray:
    """One-hot targets sampled from the augmentation distribution.

    Ground-truth rows are used when omega = inf or t = 1; otherwise a 'diffused'
    sequence is drawn from rows proportional to w^omega.
    """
    K = pack.num_categories
    if omega == math.inf:
        return one_hot(batch_x, K)
    soft_mask = ts >= 2
    x_tilde = batch_x.copy()
    if soft_mask.any():
        kls = diffusion._category_kls(z0[soft_mask], zt[soft_mask], ts[soft_mask], sched, pack)
        logits = -omega * kls
        logits -= logits.max(axis=-1, keepdims=True)
        rows = np.exp(logits)
        rows /= rows.sum(axis=-1, keepdims=True)
        cdf = rows.cumsum(axis=-1)
        u = rng.random(rows.shape[:-1])
        x_tilde[soft_mask] = np.minimum((cdf < u[..., None]).sum(axis=-1), K - 1)
    return one_hot(x_tilde, K)


def train_step(
    params: predictor.PredictorParams,
    batch_x: np.ndarray,
    pack: PackingResult,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[predictor.PredictorParams, float]:
    """One sampled-objective step over a batch; applies one optimizer update."""
    batch_x = np.asarray(batch_x)
    if batch_x.ndim != 2 or batch_x.shape[0] < 1:
        raise ValueError("batch must be a non-empty (B, S) array")
    z0, ts, zt = _draw_batch_states(batch_x, pack, sched, rng)
    targets = _augmentation_targets(batch_x, z0, zt, ts, cfg.omega, sched, pack, rng)
    loss, grad = predictor.loss_and_grad_batch(
        params, zt, ts, targets, train=True, dropout_rng=rng
    )
    lr = cfg.learning_rate * cfg.lr_decay**params.step
    predictor.update(params, grad, lr)
    return params, loss


def overfit_monitor(generated: np.ndarray, train_set: np.ndarray) -> float:
    """Fraction of generated sequences that appear verbatim in the training set."""
    generated = np.asarray(generated)
    train_set = np.asarray(train_set)
    if generated.ndim != 2 or train_set.ndim != 2 or not len(generated) or not len(train_set):
        raise ValueError("need non-empty (N, S) arrays")
    seen = {tuple(int(v) for v in row) for row in train_set}
    hits = sum(tuple(int(v) for v in row) in seen for row in generated)
    return hits / len(generated)


def validation_loss(
    params: predictor.PredictorParams,
    valid_x: np.ndarray,
    pack: PackingResult,
    sched: NoiseSchedule,
    seed: int,
    batch_size: int = 1024,
) -> float:
    """Mean collapsed cross-entropy on fixed-seed fresh draws, one-hot targets.

    The fixed seed makes successive evaluations comparable; parameters and
    optimizer state are never touched.
    """
    valid_x = np.asarray(valid_x)
    rng = np.random.default_rng(seed)
    total = 0.0
    for start in range(0, len(valid_x), batch_size):
        chunk = valid_x[start : start + batch_size]
        z0, ts, zt = _draw_batch_states(chunk, pack, sched, rng)
        targets = one_hot(chunk, pack.num_categories)
        total += predictor.loss_batch(params, zt, ts, targets) * len(chunk)
    return total / len(valid_x)


def fit(
    train_x: np.ndarray,
    valid_x: np.ndarray,
    pack: PackingResult,
    sched: NoiseSchedule,
    predictor_cfg: predictor.PredictorConfig,
    train_cfg: TrainConfig,
    initial_params: predictor.PredictorParams | None = None,
) -> tuple[predictor.PredictorParams, TrainReport]:
    """Iterate train_step with periodic validation, early stopping and the
    advisory duplicate-fraction monitor; returns the best-validation params.

    ``initial_params`` resumes from an existing parameter vector (the step
    counter keeps running)."""
    train_x = np.asarray(train_x)
    valid_x = np.asarray(valid_x)
    if train_x.ndim != 2 or valid_x.ndim != 2 or not len(train_x) or not len(valid_x):
        raise ValueError("train/valid splits must be non-empty (N, S) arrays")
    if sched.T != train_cfg.T:
        raise ValueError(f"schedule has T={sched.T} but the config says T={train_cfg.T}")

    root = np.random.SeedSequence(train_cfg.seed)
    init_ss, batch_ss, valid_ss, monitor_ss = root.spawn(4)
    rng = np.random.default_rng(batch_ss)
    valid_seed = int(valid_ss.generate_state(1)[0])
    if initial_params is not None:
        if initial_params.config != predictor_cfg:
            raise ValueError("initial_params config does not match predictor_cfg")
        params = initial_params.copy()
    else:
        params = predictor.init_params(
            predictor_cfg, np.random.default_rng(init_ss), pack=pack, sched=sched
        )

    n_valid = min(train_cfg.valid_subset, len(valid_x))
    report = TrainReport()
    best = params.copy()
    evals_since_best = 0
    start_time = time.perf_counter()

    for iteration in range(1, train_cfg.max_iterations + 1):
        idx = rng.integers(0, len(train_x), size=min(train_cfg.batch_size, len(train_x)))
        params, loss = train_step(params, train_x[idx], pack, sched, train_cfg, rng)
        report.iterations.append(iteration)
        report.train_losses.append(loss)

        if iteration % train_cfg.eval_interval != 0 and iteration != train_cfg.max_iterations:
            continue
        vloss = validation_loss(params, valid_x[:n_valid], pack, sched, valid_seed)
        report.valid_iterations.append(iteration)
        report.valid_losses.append(vloss)

        if train_cfg.monitor_samples > 0:
            from . import sampling  # local import; sampling depends on predictor

            req = sampling.SampleRequest(
                num_samples=train_cfg.monitor_samples,
                seed=int(monitor_ss.generate_state(1)[0]) + iteration,
            )
            generated = sampling.sample_many(params, pack, sched, req).samples
            frac = overfit_monitor(generated, train_x)
            report.duplicate_fractions.append(frac)
            report.overfit_flags.append(frac > train_cfg.overfit_threshold)

        if vloss < report.best_valid_loss:
            report.best_valid_loss = vloss
            report.best_iteration = iteration
            best = params.copy()
            evals_since_best = 0
        else:
            evals_since_best += 1
            if evals_since_best >= train_cfg.early_stop_patience:
                report.stopped_early = True
                break

    report.wall_seconds = time.perf_counter() - start_time
    return best, report
