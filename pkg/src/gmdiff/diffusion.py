"""Closed-form diffusion machinery.

Forward chain:   n(z^t | z^{t-1}) = N(sqrt(1-beta_t) z^{t-1}, beta_t I) with
closed-form marginal z^t = sqrt(abar_t) z^0 + sqrt(1-abar_t) eps.

Conditioned on a category k, the reverse step is Gaussian:

    z^{t-1} | z^t, k ~ N(c0_t mu_k + ct_t z^t,  (btilde_t + (c0_t sigma)^2) I)

with c0_t = sqrt(abar_{t-1}) beta_t / (1-abar_t),
     ct_t = sqrt(alpha_t) (1-abar_{t-1}) / (1-abar_t),
     btilde_t = (1-abar_{t-1}) / (1-abar_t) * beta_t.

The learned reverse kernel is the per-position mixture of those Gaussians
weighted by the predictor's category probabilities; the weights
w_k = exp(-KL(posterior || component_k)) feed the collapsed training
objective and the soft augmentation targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .geometry import PackingResult

__all__ = [
    "NoiseSchedule",
    "GaussianParams",
    "linear_schedule",
    "forward_sample",
    "forward_posterior",
    "category_posterior",
    "gaussian_kl_isotropic",
    "mixture_weights",
    "denoise_log_density",
    "augmentation_dist",
    "one_hot",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion horizon T with beta_t, alpha_t and abar_t tables (t = 1..T)."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if not ((betas > 0.0).all() and (betas < 1.0).all()):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if (np.diff(betas) <= 0.0).any():
            raise ValueError("betas must be strictly increasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def T(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product abar_t, with the abar_0 = 1 convention."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t, low: int = 1) -> None:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            raise ValueError("t must be integer")
        if (t < low).any() or (t > self.T).any():
            raise ValueError(f"t out of range [{low}, {self.T}]")

    def to_dict(self) -> dict:
        return {"T": self.T, "betas": [float(b) for b in self.betas]}

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseSchedule":
        sched = cls(np.asarray(doc["betas"], dtype=np.float64))
        if sched.T != int(doc["T"]):
            raise ValueError("schedule T does not match beta table length")
        return sched


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.3) -> NoiseSchedule:
    """Linearly spaced betas, endpoints inclusive."""
    if T < 2:
        raise ValueError("T must be >= 2")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError("need 0 < beta_start < beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


@dataclass(frozen=True)
class GaussianParams:
    """Isotropic Gaussian: mean vector plus scalar variance."""

    mean: np.ndarray
    variance: float

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        if not np.isfinite(mean).all() or not math.isfinite(self.variance):
            raise ValueError("Gaussian parameters must be finite")
        if self.variance < 0.0:
            raise ValueError("variance must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", float(self.variance))


def _posterior_coefficients(t, sched: NoiseSchedule):
    """(c0, ct, btilde) for the Gaussian posterior of z^{t-1} given (z^0, z^t).

    Vectorized over integer t in [1, T]; abar_0 = 1 makes t = 1 well defined
    (c0 = 1, ct = 0, btilde = 0).
    """
    sched._check_t(t)
    t = np.asarray(t)
    abar = sched.alpha_bars[t - 1]
    ext = np.concatenate(([1.0], sched.alpha_bars))
    abar_prev = ext[t - 1]
    beta = sched.betas[t - 1]
    alpha = sched.alphas[t - 1]
    denom = 1.0 - abar
    c0 = np.sqrt(abar_prev) * beta / denom
    ct = np.sqrt(alpha) * (1.0 - abar_prev) / denom
    btilde = (1.0 - abar_prev) / denom * beta
    return c0, ct, btilde


def forward_sample(
    z0: np.ndarray, t: int, sched: NoiseSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Closed-form forward marginal: sqrt(abar_t) z0 + sqrt(1-abar_t) eps."""
    sched._check_t(t)
    z0 = np.asarray(z0, dtype=np.float64)
    abar = sched.alpha_bars[np.asarray(t) - 1]
    if np.ndim(t) > 0:  # per-example t for batched (B, S, d) input
        abar = abar.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * rng.standard_normal(z0.shape)


def forward_posterior(
    z0_s: np.ndarray, zt_s: np.ndarray, t: int, sched: NoiseSchedule
) -> GaussianParams:
    """Gaussian law of z^{t-1} given (z^0, z^t): N(c0 z0 + ct zt, btilde I).

    Accepts t in [1, T]; at t = 1 it degenerates to (z0, 0).
    """
    c0, ct, btilde = _posterior_coefficients(int(t), sched)
    z0_s = np.asarray(z0_s, dtype=np.float64)
    zt_s = np.asarray(zt_s, dtype=np.float64)
    if z0_s.shape != zt_s.shape:
        raise ValueError("z0 and zt must have the same shape")
    return GaussianParams(c0 * z0_s + ct * zt_s, float(btilde))


def category_posterior(
    zt_s: np.ndarray, k: int, t: int, sched: NoiseSchedule, pack: PackingResult
) -> GaussianParams:
    """Reverse-step Gaussian conditioned on a category instead of z^0.

    Marginalizing z^0 over the encoder component N(mu_k, sigma^2 I) yields
    N(c0 mu_k + ct zt, (btilde + (c0 sigma)^2) I).  Accepts t in [1, T]; at
    t = 1 this is exactly the encoder component.
    """
    if not 0 <= k < pack.num_categories:
        raise ValueError(f"category {k} out of range [0, {pack.num_categories})")
    c0, ct, btilde = _posterior_coefficients(int(t), sched)
    zt_s = np.asarray(zt_s, dtype=np.float64)
    if zt_s.shape[-1] != pack.latent_dim:
        raise ValueError("zt dimension does not match the packing")
    mean = c0 * pack.means[k] + ct * zt_s
    variance = float(btilde + (c0 * pack.sigma) ** 2)
    return GaussianParams(mean, variance)


def gaussian_kl_isotropic(p: GaussianParams, q: GaussianParams, d: int) -> float:
    """KL(N(m_p, v_p I) || N(m_q, v_q I)) in d dimensions.

    = d/2 (v_p/v_q - 1 - ln(v_p/v_q)) + ||m_p - m_q||^2 / (2 v_q).
    """
    if p.mean.shape != (d,) or q.mean.shape != (d,):
        raise ValueError("means must be vectors of length d")
    msd = float(np.sum((p.mean - q.mean) ** 2))
    if q.variance == 0.0:
        return 0.0 if (p.variance == 0.0 and msd == 0.0) else math.inf
    if p.variance == 0.0:
        raise ValueError("KL of a point mass against a Gaussian is not supported")
    r = p.variance / q.variance
    return float(0.5 * d * (r - 1.0 - math.log(r)) + msd / (2.0 * q.variance))


def _category_kls(z0, zt, t, sched: NoiseSchedule, pack: PackingResult) -> np.ndarray:
    """KL(posterior(z0, zt) || category component k) for every k.

    The two Gaussians share the zt term, so the mean gap collapses to
    c0 (z0 - mu_k) and the whole table vectorizes over (..., d) states with
    per-entry t.  Returns shape (..., K).
    """
    sched._check_t(t, low=2)
    z0 = np.asarray(z0, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    if z0.shape != zt.shape or z0.shape[-1] != pack.latent_dim:
        raise ValueError("z0/zt shapes must match the packing dimension")
    c0, ct, btilde = _posterior_coefficients(t, sched)
    var_q = btilde + (c0 * pack.sigma) ** 2
    r = btilde / var_q
    d = pack.latent_dim
    if np.ndim(t) > 0:  # broadcast per-example scalars over (B, S, K)
        extra = z0.ndim - 1 - np.ndim(t)
        shape = np.shape(t) + (1,) * extra
        c0, var_q, r = (np.reshape(a, shape) for a in (c0, var_q, r))
    diff = z0[..., None, :] - pack.means  # (..., K, d)
    sq = np.einsum("...kd,...kd->...k", diff, diff)
    return 0.5 * d * (r - 1.0 - np.log(r))[..., None] + (c0**2)[..., None] * sq / (
        2.0 * var_q[..., None]
    )


def mixture_weights(
    zt_s: np.ndarray, z0_s: np.ndarray, t: int, sched: NoiseSchedule, pack: PackingResult
) -> np.ndarray:
    """Unnormalized per-category weights w_k = exp(-KL(posterior || component_k)).

    Each weight lies in (0, 1]; t must be in [2, T].
    """
    kls = _category_kls(np.asarray(z0_s), np.asarray(zt_s), int(t), sched, pack)
    return np.exp(-kls)


def denoise_log_density(
    z_prev: np.ndarray,
    zt: np.ndarray,
    probs: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    pack: PackingResult,
) -> float:
    """Log-density of the learned reverse kernel at z_prev.

    log prod_s sum_k probs[s, k] N(z_prev_s; c0 mu_k + ct zt_s, var_t I),
    evaluated in the log domain.
    """
    z_prev = np.asarray(z_prev, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    S, d = zt.shape if zt.ndim == 2 else (1, zt.shape[-1])
    zt = zt.reshape(S, d)
    z_prev = z_prev.reshape(S, d)
    if d != pack.latent_dim or probs.shape != (S, pack.num_categories):
        raise ValueError("z_prev/zt/probs shapes are inconsistent with the packing")
    if (probs < 0.0).any() or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("probs rows must be simplexes")
    c0, ct, btilde = _posterior_coefficients(int(t), sched)
    var = btilde + (c0 * pack.sigma) ** 2
    if var <= 0.0:
        raise ValueError("degenerate reverse variance; need sigma > 0 or t >= 2")
    means = c0 * pack.means[None, :, :] + ct * zt[:, None, :]  # (S, K, d)
    diff = z_prev[:, None, :] - means
    log_norm = -0.5 * (
        np.einsum("skd,skd->sk", diff, diff) / var + d * math.log(2.0 * math.pi * var)
    )
    with np.errstate(divide="ignore"):
        log_w = np.log(probs)
    return float(logsumexp(log_w + log_norm, axis=1).sum())


def one_hot(x: np.ndarray, num_categories: int) -> np.ndarray:
    x = np.asarray(x)
    out = np.zeros(x.shape + (num_categories,), dtype=np.float64)
    np.put_along_axis(out, x[..., None], 1.0, axis=-1)
    return out


def augmentation_dist(
    zt: np.ndarray,
    z0: np.ndarray,
    x: np.ndarray,
    t: int,
    omega: float,
    sched: NoiseSchedule,
    pack: PackingResult,
) -> np.ndarray:
    """Soft training targets: row s proportional to w_s(C_k)^omega.

    omega = inf returns the one-hot rows of the ground-truth x, and t = 1
    always uses the ground truth (the first reverse step has no mixture
    weights).  Computed as softmax(-omega * KL) per row for stability.
    """
    x = np.asarray(x)
    if not (omega == math.inf or omega > 0.0):
        raise ValueError("omega must be positive or infinite")
    if x.shape != np.shape(zt)[:-1]:
        raise ValueError("x must hold one category per position of zt")
    if t == 1 or omega == math.inf:
        return one_hot(x, pack.num_categories)
    logits = -omega * _category_kls(np.asarray(z0), np.asarray(zt), int(t), sched, pack)
    logits -= logits.max(axis=-1, keepdims=True)
    rows = np.exp(logits)
    rows /= rows.sum(axis=-1, keepdims=True)
    return rows
