"""Reconstruction and contrastive objectives for the weight-space autoencoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import Tensor, matmul

_lift = lambda x: x if isinstance(x, Tensor) else Tensor(x)  # noqa: E731


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.05
    temperature: float = 0.1
    threshold: float = 3.0
    alpha_range: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.alpha_range <= 0:
            raise ValueError("alpha range r must be positive")


def loss_recon_w(w_hat, w, mu, sigma, valid, n_params: int | None = None) -> Tensor:
    """Layer-normalized squared error, averaged over models and parameters.

    ``mu``/``sigma`` hold the population statistic of each element's layer
    and broadcast against ``w``; ``valid`` masks padding out.
    """
    w_hat = _lift(w_hat)
    w = np.asarray(w, dtype=w_hat.data.dtype)
    valid = np.broadcast_to(np.asarray(valid, dtype=w_hat.data.dtype), w.shape)
    inv = 1.0 / np.asarray(sigma, dtype=w_hat.data.dtype)
    m = w.shape[0]
    n = int(n_params) if n_params is not None else int(valid[0].sum())
    diff = (w_hat - np.asarray(mu, dtype=w.dtype)) * inv - (w - mu) * inv
    return (diff * diff * valid).sum() * (1.0 / (m * n))


def loss_recon_alpha(a_hat, a, t: float = 3.0, r: float = 1.0, valid=None) -> Tensor:
    """Squared difference of tanh-squashed alphas around the threshold, summed per model, mean over models."""
    if r <= 0:
        raise ValueError("alpha range r must be positive")
    a_hat = _lift(a_hat)
    a = np.asarray(a, dtype=a_hat.data.dtype)
    target = np.tanh((a - t) / r)
    d = ((a_hat - t) * (1.0 / r)).tanh() - target
    sq = d * d
    if valid is not None:
        sq = sq * np.broadcast_to(np.asarray(valid, dtype=a.dtype), a.shape)
    return sq.sum() * (1.0 / a.shape[0])


def _normalize(z: Tensor, eps: float = 1e-12) -> Tensor:
    return z / ((z * z).sum(axis=-1, keepdims=True) + eps).sqrt()


def loss_contrastive(zbar, temperature: float = 0.1) -> Tensor:
    """NT-Xent over ``2M`` views where rows ``i`` and ``i + M`` are the positive pair.

    Terms for every anchor (both directions) are summed; the denominator
    runs over all other rows.
    """
    zbar = _lift(zbar)
    n = zbar.shape[0]
    if n < 2 or n % 2:
        raise ValueError("need an even number of views, at least one pair")
    half = n // 2
    u = _normalize(zbar)
    logits = matmul(u, u.T) * (1.0 / temperature)
    eye = np.eye(n, dtype=bool)
    # drop self-similarity by masking with a large negative before the log-sum-exp
    big = np.where(eye, -np.inf, 0.0).astype(logits.data.dtype)
    shifted = logits + big
    mx = np.max(np.where(eye, -np.inf, logits.data), axis=1, keepdims=True)
    lse = ((shifted - mx).exp().sum(axis=1)).log() + mx[:, 0]
    pos_idx = (np.arange(n) + half) % n
    pos = logits[np.arange(n), pos_idx]
    return (lse - pos).sum()


def total_loss(l_c, l_w, l_a, beta: float = 0.05):
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return l_c * beta + (l_w + l_a) * (1.0 - beta)
