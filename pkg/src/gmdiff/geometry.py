"""Placement of category means on the unit hypersphere.

A simulated-annealing search spreads K points over S^{d-1} so that the
Gaussian mixture encoder keeps its per-category components well separated.
The encoder standard deviation is then derived from the minimum pairwise
squared distance of the packed means.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PackingConfig",
    "PackingResult",
    "packing_energy",
    "perturb",
    "pack_sphere",
    "encoder_sigma",
    "min_pair_sq_dist",
    "save_packing",
    "load_packing",
]


@dataclass(frozen=True)
class PackingConfig:
    """Annealing hyperparameters for :func:`pack_sphere`."""

    num_categories: int
    latent_dim: int
    initial_temperature: float = 10.0
    cooling_factor: float = 0.9
    steps_per_temperature: int = 100
    convergence_delta: float = 0.001
    min_steps: int = 500
    max_steps: int = 10_000
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_categories < 2:
            raise ValueError("need at least two categories to pack")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.initial_temperature <= 0.0:
            raise ValueError("initial_temperature must be positive")
        if not 0.0 < self.cooling_factor < 1.0:
            raise ValueError("cooling_factor must lie in (0, 1)")
        if min(self.steps_per_temperature, self.min_steps, self.max_steps) < 1:
            raise ValueError("step counts must be positive")
        if self.convergence_delta <= 0.0:
            raise ValueError("convergence_delta must be positive")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


@dataclass(frozen=True)
class PackingResult:
    """K unit-norm means, their minimum squared separation, and the encoder sigma."""

    means: np.ndarray  # (K, d), rows on the unit sphere
    min_pair_sq_dist: float
    sigma: float
    seed: int = 0

    @property
    def num_categories(self) -> int:
        return self.means.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[1]

    def with_sigma(self, sigma: float) -> "PackingResult":
        """Copy of this packing with an overridden encoder sigma."""
        if sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        return PackingResult(self.means, self.min_pair_sq_dist, float(sigma), self.seed)


def packing_energy(means: np.ndarray) -> float:
    """Sum over unordered pairs i < j of ||mu_i - mu_j||^2."""
    m = np.asarray(means, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValueError("packing energy needs at least two means")
    if not np.isfinite(m).all():
        raise ValueError("means must be finite")
    diff = m[:, None, :] - m[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    # off-diagonal entries count each pair twice
    return float(sq.sum() / 2.0)


def min_pair_sq_dist(means: np.ndarray) -> float:
    """Minimum over unordered pairs of squared Euclidean distance."""
    m = np.asarray(means, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValueError("need at least two means")
    diff = m[:, None, :] - m[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    sq[np.diag_indices_from(sq)] = np.inf
    return float(sq.min())


def perturb(means: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Nudge mean k by 0.1*(eps - 0.5) per coordinate, eps ~ Uni(0, 1].

    The perturbed mean is re-projected onto the unit sphere; all other means
    are returned unchanged (bitwise).
    """
    m = np.asarray(means, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("means must be a (K, d) matrix")
    if not 0 <= k < m.shape[0]:
        raise ValueError(f"mean index {k} out of range for K={m.shape[0]}")
    eps = 1.0 - rng.random(m.shape[1])  # uniform on (0, 1]
    out = m.copy()
    moved = out[k] + 0.1 * (eps - 0.5)
    norm = np.linalg.norm(moved)
    if norm < 1e-12:  # unreachable for unit-norm input and step size 0.05*sqrt(d) < 1
        return out
    out[k] = moved / norm
    return out


def encoder_sigma(min_pair_sq_dist: float, num_categories: int, latent_dim: int) -> float:
    """Encoder standard deviation: d_min / (2 * K * 3**(1/d)).

    d_min is the minimum squared pairwise distance of the packed means; the
    formula is applied literally as printed (squared distance over a
    radius-like denominator).
    """
    if min_pair_sq_dist <= 0.0:
        raise ValueError("min_pair_sq_dist must be positive")
    if num_categories <= 0 or latent_dim <= 0:
        raise ValueError("num_categories and latent_dim must be positive")
    return float(min_pair_sq_dist / (2.0 * num_categories * 3.0 ** (1.0 / latent_dim)))


def _random_unit_means(K: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws on the sphere via normalized isotropic Gaussians."""
    means = rng.standard_normal((K, d))
    norms = np.linalg.norm(means, axis=1)
    while (norms < 1e-12).any():  # measure-zero guard
        bad = norms < 1e-12
        means[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(means, axis=1)
    return means / norms[:, None]


def _separation_sum(means: np.ndarray) -> float:
    """Sum over unordered pairs of (non-squared) Euclidean distances."""
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return float(dist.sum() / 2.0)


def _separation_delta(means: np.ndarray, proposal_row: np.ndarray, k: int) -> float:
    """Change of the pairwise-distance sum when row k moves to proposal_row."""
    others = np.delete(means, k, axis=0)
    new = np.linalg.norm(others - proposal_row, axis=1).sum()
    old = np.linalg.norm(others - means[k], axis=1).sum()
    return float(new - old)


def pack_sphere(config: PackingConfig) -> PackingResult:
    """Anneal K unit vectors toward maximal pairwise separation.

    Proposals perturb a single random mean; separation-increasing moves are
    always accepted, worsening moves with Metropolis probability
    exp(-|delta|/T).  The temperature cools by ``cooling_factor`` every
    ``steps_per_temperature`` proposals.  The search stops once the average
    |delta| over the last 100 proposals drops below ``convergence_delta``
    (checked after ``min_steps``) or at ``max_steps``, and returns the best
    configuration seen.  Deterministic for a fixed seed.
    """
    K, d = config.num_categories, config.latent_dim
    rng = np.random.default_rng(config.rng_seed)
    means = _random_unit_means(K, d, rng)

    energy = _separation_sum(means)
    best_means = means.copy()
    best_energy = energy
    temperature = config.initial_temperature
    steps_at_temperature = 0
    recent = deque(maxlen=100)

    for step in range(1, config.max_steps + 1):
        k = int(rng.integers(K))
        proposal = perturb(means, k, rng)
        delta = _separation_delta(means, proposal[k], k)
        recent.append(abs(delta))

        if delta >= 0.0 or rng.random() < math.exp(delta / temperature):
            means = proposal
            energy += delta
            if energy > best_energy:
                best_energy = energy
                best_means = means.copy()

        steps_at_temperature += 1
        if steps_at_temperature >= config.steps_per_temperature:
            temperature *= config.cooling_factor
            steps_at_temperature = 0

        if step > config.min_steps and len(recent) == recent.maxlen:
            if sum(recent) / len(recent) < config.convergence_delta:
                break

    d_min = min_pair_sq_dist(best_means)
    sigma = encoder_sigma(d_min, K, d)
    return PackingResult(best_means, d_min, sigma, config.rng_seed)


def save_packing(path: str | Path, result: PackingResult) -> None:
    """Write a packing as a canonical JSON document (bit-exact round trip)."""
    doc = {
        "K": int(result.num_categories),
        "d": int(result.latent_dim),
        "means": [[float(x) for x in row] for row in result.means],
        "min_pair_sq_dist": float(result.min_pair_sq_dist),
        "sigma": float(result.sigma),
        "seed": int(result.seed),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_packing(path: str | Path) -> PackingResult:
    doc = json.loads(Path(path).read_text())
    means = np.asarray(doc["means"], dtype=np.float64)
    if means.shape != (doc["K"], doc["d"]):
        raise ValueError(f"packing file {path} has inconsistent shapes")
    return PackingResult(
        means=means,
        min_pair_sq_dist=float(doc["min_pair_sq_dist"]),
        sigma=float(doc["sigma"]),
        seed=int(doc["seed"]),
    )
