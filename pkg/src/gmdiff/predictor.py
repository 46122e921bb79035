"""Time-conditioned sequence predictors p(x_s | z^t, t) with in-repo gradients.

Two architectures share one interface (an (S, K) simplex per sequence):

* ``mlp`` -- a per-position MLP with shared weights; every hidden block mixes
  each position's features with the mean-pooled context of all positions, so
  positions can coordinate (needed for permutation-style data) while the
  parameter count stays small.
* ``transformer`` -- a small pre-norm self-attention stack (non-autoregressive,
  all positions predicted in parallel).

Inputs per position are [z_s || position-embedding || time-embedding] with
sinusoidal embeddings for both the position index and the diffusion step.
Two mixture-informed options exploit the fixed Gaussian-mixture encoding
(enabled by default, each needs the packing and schedule at init):

* ``mixture_features`` appends each position's naive single-position
  posterior (softmax of the per-category log-likelihoods of z_s at step t's
  effective noise level) to the input features;
* ``likelihood_skip`` adds those centered log-likelihoods straight to the
  output logits, so a zero-initialized head starts at the naive posterior
  and the network only has to learn the cross-position correction.

Gradients come from the reverse-mode tape in :mod:`gmdiff.autodiff`; updates
use rectified Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = [
    "PredictorConfig",
    "PredictorParams",
    "time_embed",
    "init_params",
    "predict",
    "predict_batch",
    "loss_and_grad",
    "loss_and_grad_batch",
    "loss_batch",
    "update",
]


@dataclass(frozen=True)
class PredictorConfig:
    seq_len: int
    latent_dim: int
    num_categories: int
    arch: str = "mlp"
    hidden_size: int = 96
    depth: int = 3
    num_heads: int = 8
    time_embed_dim: int = 16
    position_embed_dim: int = 8
    dropout: float = 0.0
    mixture_features: bool = True
    likelihood_skip: bool = False

    def __post_init__(self) -> None:
        if min(self.seq_len, self.latent_dim, self.num_categories) < 1:
            raise ValueError("seq_len, latent_dim and num_categories must be positive")
        if self.arch not in ("mlp", "transformer"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.hidden_size < 1 or self.depth < 1:
            raise ValueError("hidden_size and depth must be positive")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be a positive even number")
        if self.position_embed_dim % 2 != 0 or self.position_embed_dim < 0:
            raise ValueError("position_embed_dim must be even (0 disables it)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.arch == "transformer":
            if self.num_heads < 1 or self.hidden_size % self.num_heads != 0:
                raise ValueError("num_heads must divide hidden_size")

    @property
    def feature_dim(self) -> int:
        extra = 3 * self.num_categories if self.mixture_features else 0
        return self.latent_dim + extra + self.position_embed_dim + self.time_embed_dim

    @property
    def needs_buffers(self) -> bool:
        return self.mixture_features or self.likelihood_skip

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "latent_dim": self.latent_dim,
            "num_categories": self.num_categories,
            "arch": self.arch,
            "hidden_size": self.hidden_size,
            "depth": self.depth,
            "num_heads": self.num_heads,
            "time_embed_dim": self.time_embed_dim,
            "position_embed_dim": self.position_embed_dim,
            "dropout": self.dropout,
            "mixture_features": self.mixture_features,
            "likelihood_skip": self.likelihood_skip,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PredictorConfig":
        return cls(**doc)


def time_embed(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding [sin(t/10000^{2i/dim}), cos(t/10000^{2i/dim})]."""
    if dim <= 0 or dim % 2 != 0:
        raise ValueError("embedding dim must be a positive even number")
    i = np.arange(dim // 2, dtype=np.float64)
    angles = t / 10000.0 ** (2.0 * i / dim)
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _sinusoid_table(n: int, dim: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((n, 0))
    return np.stack([time_embed(float(v), dim) for v in range(n)])


# ---------------------------------------------------------------------------
# parameter layout and initialization

def _layout(cfg: PredictorConfig) -> list[tuple[str, tuple[int, ...]]]:
    F, H, K = cfg.feature_dim, cfg.hidden_size, cfg.num_categories
    names: list[tuple[str, tuple[int, ...]]] = [("in.w", (F, H)), ("in.b", (H,))]
    if cfg.arch == "mlp":
        for i in range(cfg.depth - 1):
            names += [
                (f"block{i}.self_w", (H, H)),
                (f"block{i}.ctx_w", (H, H)),
                (f"block{i}.b", (H,)),
            ]
    else:
        for i in range(cfg.depth):
            names += [
                (f"block{i}.ln1.g", (H,)),
                (f"block{i}.ln1.b", (H,)),
                (f"block{i}.attn.wq", (H, H)),
                (f"block{i}.attn.wk", (H, H)),
                (f"block{i}.attn.wv", (H, H)),
                (f"block{i}.attn.wo", (H, H)),
                (f"block{i}.attn.bo", (H,)),
                (f"block{i}.ln2.g", (H,)),
                (f"block{i}.ln2.b", (H,)),
                (f"block{i}.ff.w1", (H, 2 * H)),
                (f"block{i}.ff.b1", (2 * H,)),
                (f"block{i}.ff.w2", (2 * H, H)),
                (f"block{i}.ff.b2", (H,)),
            ]
        names += [("final_ln.g", (H,)), ("final_ln.b", (H,))]
    names += [("head.w", (H, K)), ("head.b", (K,))]
    return names


@dataclass
class PredictorParams:
    """Flat float64 parameter vector plus layout metadata and optimizer state.

    ``feature_means`` / ``feature_sigma`` / ``feature_alpha_bars`` are fixed
    (non-trainable) buffers for the mixture-informed features, copied from the
    packing and noise schedule at init.
    """

    config: PredictorConfig
    flat: np.ndarray
    offsets: dict = field(repr=False)
    exp_avg: np.ndarray = field(repr=False)
    exp_avg_sq: np.ndarray = field(repr=False)
    step: int = 0
    feature_means: np.ndarray | None = field(default=None, repr=False)
    feature_sigma: float = 0.0
    feature_alpha_bars: np.ndarray | None = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return self.flat.size

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.offsets[name]
        return self.flat[offset : offset + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "PredictorParams":
        return PredictorParams(
            self.config,
            self.flat.copy(),
            self.offsets,
            self.exp_avg.copy(),
            self.exp_avg_sq.copy(),
            self.step,
            self.feature_means,
            self.feature_sigma,
            self.feature_alpha_bars,
        )


def attach_feature_buffers(params: PredictorParams, pack, sched) -> PredictorParams:
    """Copy the fixed mixture/schedule constants the forward pass needs."""
    cfg = params.config
    if pack.num_categories != cfg.num_categories or pack.latent_dim != cfg.latent_dim:
        raise ValueError("packing does not match the predictor config")
    params.feature_means = np.asarray(pack.means, dtype=np.float64)
    params.feature_sigma = float(pack.sigma)
    params.feature_alpha_bars = np.asarray(sched.alpha_bars, dtype=np.float64)
    return params


def init_params(
    cfg: PredictorConfig,
    rng: np.random.Generator,
    pack=None,
    sched=None,
) -> PredictorParams:
    """He/Xavier initialization; the output head starts at zero.

    With ``likelihood_skip`` the zero head means the initial predictions equal
    the naive single-position posterior; otherwise they are uniform.
    """
    names = _layout(cfg)
    offsets = {}
    total = 0
    for name, shape in names:
        offsets[name] = (total, shape)
        total += int(np.prod(shape))
    flat = np.zeros(total, dtype=np.float64)
    params = PredictorParams(cfg, flat, offsets, np.zeros(total), np.zeros(total))
    for name, shape in names:
        view = params.view(name)
        if name.endswith("ln1.g") or name.endswith("ln2.g") or name == "final_ln.g":
            view[...] = 1.0
        elif name.startswith("head."):
            view[...] = 0.0
        elif len(shape) == 2:
            fan_in = shape[0]
            gain = 2.0 if (".w1" in name or name == "in.w" or "self_w" in name or "ctx_w" in name) else 1.0
            view[...] = rng.standard_normal(shape) * math.sqrt(gain / fan_in)
        # biases stay zero
    if cfg.needs_buffers:
        if pack is None or sched is None:
            raise ValueError(
                "mixture_features/likelihood_skip need the packing and schedule at init"
            )
        attach_feature_buffers(params, pack, sched)
    return params


# ---------------------------------------------------------------------------
# forward passes

def _centered_loglik(params: PredictorParams, zt: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Per-position category log-likelihoods of z^t, max-centered per row.

    Under the forward marginal, z^t_s | x_s = k is N(sqrt(abar_t) mu_k,
    (abar_t sigma^2 + 1 - abar_t) I); these scores are the sufficient
    statistics the posterior marginals depend on.
    """
    if params.feature_means is None or params.feature_alpha_bars is None:
        raise ValueError("predictor params are missing the mixture feature buffers")
    abar = params.feature_alpha_bars[np.asarray(ts) - 1].reshape(-1, 1, 1)
    var = abar * params.feature_sigma**2 + (1.0 - abar)
    diff = zt[:, :, None, :] - np.sqrt(abar)[..., None] * params.feature_means
    ll = -np.einsum("bskd,bskd->bsk", diff, diff) / (2.0 * var)
    return ll - ll.max(axis=-1, keepdims=True)


def _competition(naive: np.ndarray) -> np.ndarray:
    """Per position s and category k: max over other positions of naive[s', k].

    The strongest competing claim on each category; this is the statistic the
    exclusion structure of permutation-like data turns on.
    """
    B, S, K = naive.shape
    if S == 1:
        return np.zeros_like(naive)
    arg1 = naive.argmax(axis=1)
    max1 = naive.max(axis=1, keepdims=True)
    tmp = naive.copy()
    np.put_along_axis(tmp, arg1[:, None, :], -np.inf, axis=1)
    max2 = tmp.max(axis=1, keepdims=True)
    is_arg = np.zeros(naive.shape, dtype=bool)
    np.put_along_axis(is_arg, arg1[:, None, :], True, axis=1)
    return np.where(is_arg, max2, max1)


def _features(params: PredictorParams, zt: np.ndarray, ts: np.ndarray, ll: np.ndarray | None) -> np.ndarray:
    """(B, S, F) constant inputs per position.

    [z_s || naive posterior || strongest rival claim || total claim mass ||
     position embed || time embed]; the two claim maps summarize how
    contested each category currently is across the sequence.
    """
    cfg = params.config
    B, S, d = zt.shape
    parts = [zt]
    if cfg.mixture_features:
        naive = np.exp(ll)
        naive /= naive.sum(axis=-1, keepdims=True)
        parts.append(naive)
        parts.append(_competition(naive))
        saturation = naive.sum(axis=1, keepdims=True) / S
        parts.append(np.broadcast_to(saturation, naive.shape))
    if cfg.position_embed_dim:
        pos = _sinusoid_table(S, cfg.position_embed_dim)
        parts.append(np.broadcast_to(pos, (B, S, cfg.position_embed_dim)))
    temb = np.stack([time_embed(float(t), cfg.time_embed_dim) for t in ts])
    parts.append(np.broadcast_to(temb[:, None, :], (B, S, cfg.time_embed_dim)))
    return np.concatenate(parts, axis=-1)


def _dropout(x: ad.Tensor, p: float, rng: np.random.Generator | None) -> ad.Tensor:
    if p <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return ad.mul(x, ad.const(mask))


def _forward(
    params: PredictorParams,
    zt: np.ndarray,
    ts: np.ndarray,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[ad.Tensor, dict]:
    """Logits tensor of shape (B, S, K) plus the name -> param-tensor map."""
    cfg = params.config
    tensors = {name: ad.param(params.view(name)) for name, _ in _layout(cfg)}
    drop_rng = dropout_rng if (train and cfg.dropout > 0.0) else None

    ts = np.atleast_1d(ts)
    if ts.shape[0] != zt.shape[0]:
        raise ValueError("need one diffusion step per batch entry")
    ll = _centered_loglik(params, zt, ts) if cfg.needs_buffers else None
    x = ad.const(_features(params, zt, ts, ll))
    h = ad.relu(ad.add(ad.matmul(x, tensors["in.w"]), tensors["in.b"]))
    h = _dropout(h, cfg.dropout, drop_rng)

    if cfg.arch == "mlp":
        for i in range(cfg.depth - 1):
            ctx = ad.mean_pool(h, axis=1)
            pre = ad.add(
                ad.add(ad.matmul(h, tensors[f"block{i}.self_w"]), ad.matmul(ctx, tensors[f"block{i}.ctx_w"])),
                tensors[f"block{i}.b"],
            )
            h = ad.relu(pre)
            h = _dropout(h, cfg.dropout, drop_rng)
    else:
        B, S, _ = zt.shape
        H, nh = cfg.hidden_size, cfg.num_heads
        hd = H // nh
        scale = 1.0 / math.sqrt(hd)
        for i in range(cfg.depth):
            ln = ad.layer_norm(h, tensors[f"block{i}.ln1.g"], tensors[f"block{i}.ln1.b"])
            q = ad.matmul(ln, tensors[f"block{i}.attn.wq"])
            k = ad.matmul(ln, tensors[f"block{i}.attn.wk"])
            v = ad.matmul(ln, tensors[f"block{i}.attn.wv"])
            q, k, v = (
                ad.transpose(ad.reshape(m, (B, S, nh, hd)), (0, 2, 1, 3)) for m in (q, k, v)
            )
            scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), ad.const(scale))
            ctx = ad.matmul(ad.softmax(scores), v)
            ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, S, H))
            proj = ad.add(ad.matmul(ctx, tensors[f"block{i}.attn.wo"]), tensors[f"block{i}.attn.bo"])
            proj = _dropout(proj, cfg.dropout, drop_rng)
            h = ad.add(h, proj)

            ln2 = ad.layer_norm(h, tensors[f"block{i}.ln2.g"], tensors[f"block{i}.ln2.b"])
            ff = ad.relu(ad.add(ad.matmul(ln2, tensors[f"block{i}.ff.w1"]), tensors[f"block{i}.ff.b1"]))
            ff = _dropout(ff, cfg.dropout, drop_rng)
            ff = ad.add(ad.matmul(ff, tensors[f"block{i}.ff.w2"]), tensors[f"block{i}.ff.b2"])
            h = ad.add(h, ff)
        h = ad.layer_norm(h, tensors["final_ln.g"], tensors["final_ln.b"])

    logits = ad.add(ad.matmul(h, tensors["head.w"]), tensors["head.b"])
    if cfg.likelihood_skip:
        logits = ad.add(logits, ad.const(ll))
    return logits, tensors


def _check_zt(cfg: PredictorConfig, zt: np.ndarray) -> np.ndarray:
    zt = np.asarray(zt, dtype=np.float64)
    if zt.shape != (cfg.seq_len, cfg.latent_dim):
        raise ValueError(f"expected zt of shape ({cfg.seq_len}, {cfg.latent_dim}), got {zt.shape}")
    return zt


def predict_batch(params: PredictorParams, zt: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Inference-mode category probabilities for a batch: (B, S, K)."""
    zt = np.asarray(zt, dtype=np.float64)
    if zt.ndim != 3 or zt.shape[1:] != (params.config.seq_len, params.config.latent_dim):
        raise ValueError("zt must have shape (B, seq_len, latent_dim)")
    logits, _ = _forward(params, zt, np.atleast_1d(ts))
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(params: PredictorParams, zt: np.ndarray, t: int) -> np.ndarray:
    """Inference-mode (S, K) simplex for a single sequence state."""
    zt = _check_zt(params.config, zt)
    return predict_batch(params, zt[None], np.asarray([t]))[0]


def _check_targets(cfg: PredictorConfig, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[-1] != cfg.num_categories:
        raise ValueError("target rows must have one entry per category")
    if (targets < 0.0).any() or not np.allclose(targets.sum(axis=-1), 1.0, atol=1e-6):
        raise ValueError("target rows must be simplexes")
    return targets


def loss_and_grad_batch(
    params: PredictorParams,
    zt: np.ndarray,
    ts: np.ndarray,
    targets: np.ndarray,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray]:
    """Batch-mean of per-sequence summed cross-entropy, with its exact gradient."""
    zt = np.asarray(zt, dtype=np.float64)
    targets = _check_targets(params.config, targets)
    B = zt.shape[0]
    logits, tensors = _forward(params, zt, np.atleast_1d(ts), train, dropout_rng)
    if not np.isfinite(logits.data).all():
        bad = int((~np.isfinite(logits.data)).sum())
        raise FloatingPointError(f"non-finite forward values ({bad} entries) at step {params.step}")
    loss = ad.softmax_cross_entropy(logits, targets)
    loss = ad.mul(loss, ad.const(1.0 / B))
    ad.backward(loss)
    grad = np.zeros_like(params.flat)
    for name, (offset, shape) in params.offsets.items():
        g = tensors[name].grad
        if g is not None:
            grad[offset : offset + int(np.prod(shape))] = g.ravel()
    return float(loss.data), grad


def loss_and_grad(
    params: PredictorParams,
    zt: np.ndarray,
    t: int,
    target: np.ndarray,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray]:
    """Summed cross-entropy -sum_s sum_k target[s,k] log p[s,k] and its gradient."""
    zt = _check_zt(params.config, zt)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (params.config.seq_len, params.config.num_categories):
        raise ValueError("target must have shape (seq_len, num_categories)")
    return loss_and_grad_batch(params, zt[None], np.asarray([t]), target[None], train, dropout_rng)


def loss_batch(params: PredictorParams, zt: np.ndarray, ts: np.ndarray, targets: np.ndarray) -> float:
    """Forward-only batch-mean summed cross-entropy (no gradient, no dropout)."""
    targets = _check_targets(params.config, targets)
    probs = predict_batch(params, zt, ts)
    logp = np.log(np.maximum(probs, 1e-300))
    return float(-(targets * logp).sum() / zt.shape[0])


# ---------------------------------------------------------------------------
# rectified Adam

def update(
    params: PredictorParams,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> PredictorParams:
    """One rectified-Adam step (in place): variance rectification switches the
    adaptive denominator on only once the approximated SNR length rho_t > 4;
    earlier steps fall back to bias-corrected momentum SGD."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape:
        raise ValueError("gradient shape does not match the parameter vector")
    if not np.isfinite(grad).all():
        raise FloatingPointError("non-finite gradient passed to the optimizer")
    params.step += 1
    t = params.step
    m, v = params.exp_avg, params.exp_avg_sq
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho_t = rho_inf - 2.0 * t * beta2**t / (1.0 - beta2**t)
    if rho_t > 4.0:
        v_hat = np.sqrt(v / (1.0 - beta2**t))
        rect = math.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        params.flat -= lr * rect * m_hat / (v_hat + eps)
    else:
        params.flat -= lr * m_hat
    return params
