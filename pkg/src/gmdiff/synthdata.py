"""Permutation-based synthetic ground truth with an exact pmf.

Sequences have length S = K over K categories.  Mass sits only on
permutations: those whose first category index is smaller than the last
carry three times the mass of the reversed orientation.

    p(x) = 3/(2 K!)  if x is a permutation and x[0] < x[-1]   ("likely")
           1/(2 K!)  if x is a permutation and x[0] > x[-1]   ("rare")
           0         otherwise                                 ("ood")
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "LIKELY",
    "RARE",
    "OOD",
    "truth_pmf",
    "partition_of",
    "sample_truth",
    "truth_partition_masses",
    "GroundTruth",
]

LIKELY = "likely"
RARE = "rare"
OOD = "ood"


def _check_sequence(x: np.ndarray, K: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.size != K:
        raise ValueError(f"sequence length must equal K={K}")
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError("sequences are integer category indices")
    if x.min() < 0 or x.max() >= K:
        raise ValueError(f"category index out of range [0, {K})")
    return x


def partition_of(x: np.ndarray, K: int) -> str:
    """Classify a sequence as likely / rare / ood."""
    x = _check_sequence(x, K)
    if len(set(int(v) for v in x)) != K:
        return OOD
    return LIKELY if x[0] < x[-1] else RARE


def truth_pmf(x: np.ndarray, K: int) -> float:
    """Exact ground-truth probability of a length-K sequence."""
    label = partition_of(x, K)
    if label == OOD:
        return 0.0
    mass = 3.0 if label == LIKELY else 1.0
    return mass / (2.0 * math.factorial(K))


def truth_partition_masses(K: int) -> tuple[float, float, float]:
    """Total mass of (likely, rare, ood) = (0.75, 0.25, 0) by construction."""
    if K < 2:
        raise ValueError("need K >= 2")
    return (0.75, 0.25, 0.0)


def sample_truth(K: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """N iid exact draws, shape (N, K).

    Orientation is enforced by an endpoint swap: a uniform permutation is
    drawn, the likely orientation is selected with probability 0.75, and the
    endpoints are swapped when the draw has the wrong orientation.  Swapping
    endpoints is a bijection between the two orientation classes, so each
    class stays uniform.
    """
    if K < 2:
        raise ValueError("need K >= 2")
    if N < 1:
        raise ValueError("need N >= 1")
    out = np.empty((N, K), dtype=np.int64)
    for i in range(N):
        perm = rng.permutation(K)
        want_likely = rng.random() < 0.75
        if (perm[0] < perm[-1]) != want_likely:
            perm[0], perm[-1] = perm[-1], perm[0]
        out[i] = perm
    return out


class GroundTruth:
    """Exact pmf accessor plus the likely/rare/ood partition for one K."""

    def __init__(self, K: int):
        if K < 2:
            raise ValueError("need K >= 2")
        self.K = K

    @property
    def seq_len(self) -> int:
        return self.K

    def pmf(self, x: np.ndarray) -> float:
        return truth_pmf(x, self.K)

    def partition(self, x: np.ndarray) -> str:
        return partition_of(x, self.K)

    def masses(self) -> dict[str, float]:
        likely, rare, ood = truth_partition_masses(self.K)
        return {LIKELY: likely, RARE: rare, OOD: ood}

    def support_size(self) -> int:
        return math.factorial(self.K)

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        return sample_truth(self.K, N, rng)

    def enumerate_support(self) -> dict[tuple[int, ...], float]:
        """Materialize the full pmf; only sensible for small K."""
        from itertools import permutations

        base = 1.0 / (2.0 * math.factorial(self.K))
        return {
            perm: (3.0 * base if perm[0] < perm[-1] else base)
            for perm in permutations(range(self.K))
        }
