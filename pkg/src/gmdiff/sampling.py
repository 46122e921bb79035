"""Ancestral sampling through the mixture denoiser.

A chain starts from z^T ~ N(0, I).  At each step t = T..1 a sequence x is
drawn from the predictor's per-position simplexes, then every position moves
to z^{t-1}_s ~ N(c0_t mu_{x_s} + ct_t z^t_s, var_t I); at t = 1 that Gaussian
is exactly the encoder component.  The final output is drawn from the
decoder at z^0.  Each chain owns a deterministic RNG substream, so results
are independent of batching and worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import codec, predictor
from .diffusion import NoiseSchedule, _posterior_coefficients
from .geometry import PackingResult
from .predictor import PredictorParams

__all__ = [
    "SampleRequest",
    "SampleResult",
    "sample_one",
    "sample_many",
    "entropy_trajectory",
    "chain_rngs",
]


@dataclass(frozen=True)
class SampleRequest:
    num_samples: int
    seed: int = 0
    record_entropy: bool = False
    record_trajectory: bool = False
    map_categories: bool = False
    block_size: int = 1024

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


@dataclass
class SampleResult:
    samples: np.ndarray  # (M, S) int
    entropy: np.ndarray | None = None  # (T,), entry t-1 = mean entropy at step t
    trajectories: np.ndarray | None = None  # (M, T+1, S, d) when recorded


def chain_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Derived per-chain generators; chain i's stream is independent of count."""
    return [np.random.default_rng(ss) for ss in np.random.SeedSequence(seed).spawn(count)]


def _categorical_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of an (S, K) simplex array."""
    cdf = probs.cumsum(axis=-1)
    return np.minimum((cdf < u[..., None]).sum(axis=-1), probs.shape[-1] - 1)


def _run_chains(
    params: PredictorParams,
    pack: PackingResult,
    sched: NoiseSchedule,
    rngs: list[np.random.Generator],
    map_categories: bool = False,
    record_entropy: bool = False,
    record_trajectory: bool = False,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Run one block of chains; predictor passes are batched, draws are per-chain."""
    cfg = params.config
    S, d, K = cfg.seq_len, cfg.latent_dim, cfg.num_categories
    if (K, d) != (pack.num_categories, pack.latent_dim):
        raise ValueError("predictor and packing disagree on (K, d)")
    B = len(rngs)
    z = np.stack([rng.standard_normal((S, d)) for rng in rngs])
    entropy_sums = np.zeros(sched.T) if record_entropy else None
    trajectory = np.empty((B, sched.T + 1, S, d)) if record_trajectory else None
    if record_trajectory:
        trajectory[:, sched.T] = z

    for t in range(sched.T, 0, -1):
        probs = predictor.predict_batch(params, z, np.full(B, t))
        if record_entropy:
            plogp = np.where(probs > 0.0, probs * np.log(probs), 0.0)
            entropy_sums[t - 1] = -plogp.sum(axis=-1).mean()
        c0, ct, btilde = _posterior_coefficients(t, sched)
        var = btilde + (c0 * pack.sigma) ** 2
        std = np.sqrt(var)
        z_next = np.empty_like(z)
        for i, rng in enumerate(rngs):
            if map_categories:
                x = probs[i].argmax(axis=-1)
            else:
                x = _categorical_rows(probs[i], rng.random(S))
            mean = c0 * pack.means[x] + ct * z[i]
            z_next[i] = mean + std * rng.standard_normal((S, d))
        z = z_next
        if record_trajectory:
            trajectory[:, t - 1] = z

    decode = codec.decode_probs(z, pack)  # (B, S, K)
    samples = np.empty((B, S), dtype=np.int64)
    for i, rng in enumerate(rngs):
        samples[i] = _categorical_rows(decode[i], rng.random(S))
    return samples, entropy_sums, trajectory


def sample_one(
    params: PredictorParams,
    pack: PackingResult,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    map_categories: bool = False,
) -> np.ndarray:
    """One ancestral sample; deterministic given the generator state."""
    samples, _, _ = _run_chains(params, pack, sched, [rng], map_categories)
    return samples[0]


def _run_block(args) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    params, pack, sched, seed_seqs, map_categories, record_entropy, record_trajectory = args
    rngs = [np.random.default_rng(ss) for ss in seed_seqs]
    return _run_chains(params, pack, sched, rngs, map_categories, record_entropy, record_trajectory)


def sample_many(
    params: PredictorParams,
    pack: PackingResult,
    sched: NoiseSchedule,
    req: SampleRequest,
    workers: int = 1,
) -> SampleResult:
    """req.num_samples independent chains on derived substreams.

    Chains are processed in fixed blocks regardless of ``workers``, so the
    output depends only on (params, pack, sched, req).
    """
    seed_seqs = np.random.SeedSequence(req.seed).spawn(req.num_samples)
    blocks = [
        seed_seqs[start : start + req.block_size]
        for start in range(0, req.num_samples, req.block_size)
    ]
    tasks = [
        (params, pack, sched, block, req.map_categories, req.record_entropy, req.record_trajectory)
        for block in blocks
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block, tasks))
    else:
        results = [_run_block(task) for task in tasks]

    samples = np.concatenate([r[0] for r in results])
    entropy = None
    if req.record_entropy:
        weights = np.array([len(b) for b in blocks], dtype=np.float64)
        stacked = np.stack([r[1] for r in results])
        entropy = (stacked * weights[:, None]).sum(axis=0) / weights.sum()
    trajectories = np.concatenate([r[2] for r in results]) if req.record_trajectory else None
    return SampleResult(samples, entropy, trajectories)


def entropy_trajectory(
    params: PredictorParams,
    pack: PackingResult,
    sched: NoiseSchedule,
    n_chains: int,
    rng_or_seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Mean predictor entropy per step, recorded during ancestral sampling.

    Entry t-1 is the mean over chains and positions of H(p(x_s | z^t, t))
    with natural log; values lie in [0, ln K].
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    if isinstance(rng_or_seed, np.random.Generator):
        seed = int(rng_or_seed.integers(0, 2**63 - 1))
    else:
        seed = int(rng_or_seed)
    req = SampleRequest(num_samples=n_chains, seed=seed, record_entropy=True)
    return sample_many(params, pack, sched, req).entropy
