"""Distribution-distance and pattern-covariation evaluation.

Low-level distances (total variation, Hellinger, restricted TV) work on
sparse pmfs: mappings from sequence tuples to non-negative masses.  The
empirical side is built with Poissonization, which decorrelates per-atom
counts, and the synthetic evaluator exploits the closed-form ground truth
so the full sample space is never enumerated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping

import numpy as np

from . import synthdata

__all__ = [
    "EmpiricalPmf",
    "PatternSpec",
    "MetricsReport",
    "tv_distance",
    "hellinger",
    "tv_restricted",
    "partition_mass",
    "poissonized_empirical",
    "pool_source",
    "pattern_covariation",
    "select_patterns",
    "pearson",
    "evaluate_synthetic",
    "evaluate_patterns",
]

Pmf = Mapping[tuple, float]


def _check_masses(p: Pmf) -> None:
    for mass in p.values():
        if mass < 0.0 or not math.isfinite(mass):
            raise ValueError("pmf masses must be finite and non-negative")


def tv_distance(p: Pmf, q: Pmf) -> float:
    """Total variation 0.5 * sum_x |p_x - q_x| over the union support."""
    _check_masses(p)
    _check_masses(q)
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(x, 0.0) - q.get(x, 0.0)) for x in keys)


def hellinger(p: Pmf, q: Pmf) -> float:
    """Hellinger distance (1/sqrt(2)) ||sqrt(p) - sqrt(q)||_2."""
    _check_masses(p)
    _check_masses(q)
    keys = set(p) | set(q)
    acc = sum((math.sqrt(p.get(x, 0.0)) - math.sqrt(q.get(x, 0.0))) ** 2 for x in keys)
    return math.sqrt(acc / 2.0)


def tv_restricted(p: Pmf, q: Pmf, subset: Callable[[tuple], bool]) -> float:
    """0.5 * sum over atoms of the union support that satisfy the predicate."""
    _check_masses(p)
    _check_masses(q)
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(x, 0.0) - q.get(x, 0.0)) for x in keys if subset(x))


@dataclass
class EmpiricalPmf:
    """Sparse sequence -> mass estimate with its nominal sample budget."""

    masses: dict[tuple, float]
    m: int
    seed: int | None = None

    @property
    def total_mass(self) -> float:
        return sum(self.masses.values())


def partition_mass(phat: EmpiricalPmf, labeler: Callable[[tuple], str]) -> dict[str, float]:
    """Sum estimated masses by partition label."""
    out: dict[str, float] = {}
    for x, mass in phat.masses.items():
        label = labeler(x)
        out[label] = out.get(label, 0.0) + mass
    return out


SampleSource = Callable[[int, np.random.Generator], np.ndarray]


def pool_source(samples: np.ndarray) -> SampleSource:
    """Resample-with-replacement source over a fixed (N, S) sample pool."""
    pool = np.asarray(samples)
    if pool.ndim != 2 or pool.shape[0] < 1:
        raise ValueError("sample pool must be a non-empty (N, S) array")

    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, pool.shape[0], size=n)
        return pool[idx]

    return draw


def poissonized_empirical(
    source: SampleSource, m: int, rng: np.random.Generator, seed: int | None = None
) -> EmpiricalPmf:
    """Empirical pmf with Poissonized sample count.

    Draws N ~ Poisson(m) sequences and sets p_hat(x) = count(x) / m, so the
    per-atom counts are independent Poisson(m p_x) variables and every
    estimate is unbiased (the masses need not sum to exactly 1).
    """
    if m < 1:
        raise ValueError("nominal sample budget m must be >= 1")
    n = int(rng.poisson(m))
    masses: dict[tuple, float] = {}
    if n > 0:
        for row in np.asarray(source(n, rng)):
            key = tuple(int(v) for v in row)
            masses[key] = masses.get(key, 0.0) + 1.0
        for key in masses:
            masses[key] /= m
    return EmpiricalPmf(masses, m, seed)


# ---------------------------------------------------------------------------
# pattern covariation

@dataclass(frozen=True)
class PatternSpec:
    """Positions (0-based, sorted, distinct) with their category assignment."""

    positions: tuple[int, ...]
    categories: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.positions) < 1 or len(self.positions) != len(self.categories):
            raise ValueError("pattern needs matching non-empty positions/categories")
        if list(self.positions) != sorted(set(self.positions)):
            raise ValueError("positions must be sorted and distinct")
        if min(self.positions) < 0:
            raise ValueError("positions must be non-negative")


def pattern_covariation(samples: np.ndarray, pat: PatternSpec) -> float:
    """Joint pattern frequency minus the product of single-position frequencies."""
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError("need a non-empty (M, S) sample array")
    if max(pat.positions) >= samples.shape[1]:
        raise ValueError("pattern positions exceed the sequence length")
    M = samples.shape[0]
    joint = np.ones(M, dtype=bool)
    product = 1.0
    for s, k in zip(pat.positions, pat.categories):
        hit = samples[:, s] == k
        joint &= hit
        product *= hit.sum() / M
    return joint.sum() / M - product


def select_patterns(
    reference: np.ndarray,
    p: int,
    n_positions: int = 1000,
    top_k: int = 20,
    rng: np.random.Generator | None = None,
) -> list[PatternSpec]:
    """Most-frequent category assignments over sampled position sets.

    Samples ``n_positions`` distinct position sets of size p (all of them if
    fewer exist), and keeps the ``top_k`` most frequent assignments seen in
    the reference samples for each set; count ties break lexicographically.
    """
    reference = np.asarray(reference)
    if reference.ndim != 2 or reference.shape[0] < 1:
        raise ValueError("need a non-empty (M, S) reference array")
    S = reference.shape[1]
    if not 1 <= p <= S:
        raise ValueError(f"pattern length {p} out of range [1, {S}]")
    if n_positions < 1 or top_k < 1:
        raise ValueError("n_positions and top_k must be positive")
    rng = np.random.default_rng() if rng is None else rng

    total = math.comb(S, p)
    if total <= n_positions:
        position_sets = list(combinations(range(S), p))
    else:
        chosen: set[tuple[int, ...]] = set()
        while len(chosen) < n_positions:
            chosen.add(tuple(sorted(rng.choice(S, size=p, replace=False).tolist())))
        position_sets = sorted(chosen)

    patterns: list[PatternSpec] = []
    for pos in position_sets:
        cols = reference[:, list(pos)]
        counts: dict[tuple[int, ...], int] = {}
        for row in cols:
            key = tuple(int(v) for v in row)
            counts[key] = counts.get(key, 0) + 1
        ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        for cats, _ in ranked[:top_k]:
            patterns.append(PatternSpec(tuple(pos), cats))
    return patterns


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson correlation; zero-variance inputs are degenerate."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length vectors of size >= 2")
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        raise ValueError("degenerate input: zero variance")
    return float(np.clip((da @ db) / math.sqrt(va * vb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# report assembly

def evaluate_synthetic(phat: EmpiricalPmf, K: int) -> dict[str, float]:
    """Table of distances and partition masses against the exact ground truth.

    Uses the closed-form pmf, so the K! support is never enumerated:
    the truth mass missing from phat's support enters the distances as a
    single residual term.
    """
    truth = synthdata.GroundTruth(K)
    abs_err = 0.0
    abs_err_pos = 0.0
    covered_truth = 0.0
    sqrt_cross = 0.0
    mass = {synthdata.LIKELY: 0.0, synthdata.RARE: 0.0, synthdata.OOD: 0.0}
    for x, q in phat.masses.items():
        seq = np.asarray(x, dtype=np.int64)
        p = truth.pmf(seq)
        mass[truth.partition(seq)] += q
        abs_err += abs(p - q)
        if p > 0.0:
            abs_err_pos += abs(p - q)
            covered_truth += p
            sqrt_cross += math.sqrt(p * q)
    residual = 1.0 - covered_truth  # truth atoms never sampled
    total = phat.total_mass
    d_tv = 0.5 * (abs_err + residual)
    d_tv_pos = 0.5 * (abs_err_pos + residual)
    d_tv_ood = 0.5 * mass[synthdata.OOD]
    hel = math.sqrt(max(1.0 + total - 2.0 * sqrt_cross, 0.0) / 2.0)
    return {
        "hel": hel,
        "d_tv": d_tv,
        "d_tv_pos": d_tv_pos,
        "d_tv_ood": d_tv_ood,
        "mass_likely": mass[synthdata.LIKELY],
        "mass_rare": mass[synthdata.RARE],
        "mass_ood": mass[synthdata.OOD],
        "mass_pos": mass[synthdata.LIKELY] + mass[synthdata.RARE],
    }


def evaluate_patterns(
    reference: np.ndarray,
    generated: np.ndarray,
    lengths: Iterable[int] = (2, 3, 4, 5),
    n_positions: int = 1000,
    top_k: int = 20,
    rng: np.random.Generator | None = None,
) -> dict[int, float | None]:
    """Pearson correlation of pattern covariations, reference vs generated.

    Patterns are selected from the reference set; ``None`` marks a
    degenerate (zero-variance) correlation, reported as not significant.
    """
    reference = np.asarray(reference)
    generated = np.asarray(generated)
    if reference.ndim != 2 or generated.ndim != 2:
        raise ValueError("reference and generated must be (M, S) arrays")
    if reference.shape[1] != generated.shape[1]:
        raise ValueError("reference and generated sequence lengths differ")
    rng = np.random.default_rng() if rng is None else rng
    out: dict[int, float | None] = {}
    for p in lengths:
        patterns = select_patterns(reference, p, n_positions, top_k, rng)
        ref_cov = np.array([pattern_covariation(reference, pat) for pat in patterns])
        gen_cov = np.array([pattern_covariation(generated, pat) for pat in patterns])
        try:
            out[p] = pearson(ref_cov, gen_cov)
        except ValueError:
            out[p] = None
    return out


@dataclass
class MetricsReport:
    """Aggregated evaluation results over one or more trials."""

    kind: str  # "synthetic" or "reference"
    m: int
    trials: int
    seed: int
    num_samples: int
    metrics: dict[str, list[float]] = field(default_factory=dict)
    rho: dict[int, list[float | None]] = field(default_factory=dict)

    def add_trial(self, values: Mapping[str, float]) -> None:
        for name, value in values.items():
            self.metrics.setdefault(name, []).append(float(value))

    def add_rho_trial(self, values: Mapping[int, float | None]) -> None:
        for p, value in values.items():
            self.rho.setdefault(int(p), []).append(value)

    def summary(self) -> dict:
        def stats(vals: list[float]) -> dict[str, float]:
            arr = np.asarray(vals, dtype=np.float64)
            return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0))}

        doc: dict = {
            "kind": self.kind,
            "m": self.m,
            "trials": self.trials,
            "seed": self.seed,
            "num_samples": self.num_samples,
            "metrics": {k: stats(v) | {"values": v} for k, v in self.metrics.items()},
        }
        if self.rho:
            doc["rho"] = {
                str(p): (
                    stats([v for v in vals if v is not None])
                    | {"values": vals, "not_significant": any(v is None for v in vals)}
                    if any(v is not None for v in vals)
                    else {"values": vals, "not_significant": True}
                )
                for p, vals in self.rho.items()
            }
        return doc

    def csv_row(self) -> tuple[list[str], list[str]]:
        """Flat CSV header/row; distances, masses and rho printed on the x100 scale."""
        header: list[str] = ["kind", "m", "trials", "seed", "num_samples"]
        row: list[str] = [self.kind, str(self.m), str(self.trials), str(self.seed), str(self.num_samples)]
        for name in sorted(self.metrics):
            vals = np.asarray(self.metrics[name], dtype=np.float64) * 100.0
            header += [f"{name}_x100_mean", f"{name}_x100_std"]
            row += [f"{vals.mean():.4f}", f"{vals.std(ddof=0):.4f}"]
        for p in sorted(self.rho):
            vals = [v for v in self.rho[p] if v is not None]
            header += [f"rho{p}_x100_mean", f"rho{p}_x100_std"]
            if vals:
                arr = np.asarray(vals, dtype=np.float64) * 100.0
                row += [f"{arr.mean():.4f}", f"{arr.std(ddof=0):.4f}"]
            else:
                row += ["-", "-"]
        return header, row
