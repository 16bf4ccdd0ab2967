"""Sparse variational dropout with the local reparameterization trick.

Every prunable weight gets a log-variance; the pruning statistic is
``log_alpha = log_sigma2 - log(theta^2)``. Training minimizes the data
term on a noisy forward plus the KL term scaled by 1/num_train.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..engine import Optimizer, Tensor, conv2d, cross_entropy, linear, parameter
from ..zoo.arch import LayerSpec, ModelState, Network, model_stream
from ..zoo.data import Dataset
from ..zoo.train import EpochRecord, evaluate, iterate_minibatches
from .common import PruneMask, SparsifyTrajectory, TrajectoryStep, alpha_sparsity, prunable_names

log = logging.getLogger(__name__)

K1, K2, K3 = 0.63576, 1.87320, 1.48695
EPS_DIV = 1e-12
LOG_ALPHA_CLIP = 20.0
INIT_OFFSET = -8.0


@dataclass
class VDModelState:
    base: ModelState
    log_sigma2: dict[str, np.ndarray]

    def copy(self) -> "VDModelState":
        return VDModelState(self.base.copy(), {k: v.copy() for k, v in self.log_sigma2.items()})

    def log_alpha(self) -> dict[str, np.ndarray]:
        return {k: compute_log_alpha(self.base.params[k], v) for k, v in self.log_sigma2.items()}


def compute_log_alpha(theta: np.ndarray, log_sigma2: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        la = log_sigma2.astype(np.float64) - np.log(theta.astype(np.float64) ** 2 + EPS_DIV)
    la = np.nan_to_num(la, nan=LOG_ALPHA_CLIP, posinf=LOG_ALPHA_CLIP, neginf=-LOG_ALPHA_CLIP)
    return np.clip(la, -LOG_ALPHA_CLIP, LOG_ALPHA_CLIP).astype(np.float32)


def vd_wrap(state: ModelState, offset: float = INIT_OFFSET) -> VDModelState:
    """Attach ``log_sigma2 = log(theta^2 + eps) + offset`` (log_alpha ~ offset)."""
    ls2 = {
        k: (np.log(state.params[k].astype(np.float64) ** 2 + EPS_DIV) + offset).astype(np.float32)
        for k in prunable_names(state)
    }
    return VDModelState(state.copy(), ls2)


def neg_kl(log_alpha: Tensor) -> Tensor:
    """Elementwise approximation of -KL(q || log-uniform prior)."""
    return K1 * (K2 + K3 * log_alpha).sigmoid() - 0.5 * (-log_alpha).softplus() - K1


class VDNetwork:
    """Differentiable VD model: network params plus one log-variance per weight."""

    def __init__(self, vd: VDModelState):
        self.vd = vd
        self.net = Network(vd.base)
        self.log_sigma2 = {k: parameter(v, name=k + ".log_sigma2") for k, v in vd.log_sigma2.items()}
        self.noise_rng: np.random.Generator | None = None
        self.fixed_noise: dict[int, np.ndarray] | None = None

    def parameters(self) -> list[Tensor]:
        return self.net.parameters() + list(self.log_sigma2.values())

    def sync(self) -> None:
        self.net.sync()
        for k, t in self.log_sigma2.items():
            self.vd.log_sigma2[k] = t.data

    def log_alpha_tensor(self, name: str) -> Tensor:
        theta = self.net.tensors[name]
        la = self.log_sigma2[name] - (theta * theta + EPS_DIV).log()
        return la.clip(-LOG_ALPHA_CLIP, LOG_ALPHA_CLIP)

    def noisy_layer(self, i: int, spec: LayerSpec, x: Tensor) -> Tensor:
        name = f"layer_{i}.weight"
        w, b = self.net.tensors[name], self.net.tensors[f"layer_{i}.bias"]
        var_w = self.log_sigma2[name].exp()
        x2 = x * x
        if spec.kind == "conv":
            mean = conv2d(x, w, b, spec.stride)
            var = conv2d(x2, var_w, None, spec.stride)
        else:
            mean = linear(x, w, b)
            var = linear(x2, var_w, None)
        if self.fixed_noise is not None:
            eps = self.fixed_noise[i]
        else:
            eps = self.noise_rng.standard_normal(mean.shape).astype(mean.data.dtype)
        return mean + (var + 1e-8).sqrt() * eps

    def kl(self) -> Tensor:
        total = None
        for name in self.log_sigma2:
            term = -neg_kl(self.log_alpha_tensor(name)).sum()
            total = term if total is None else total + term
        return total

    def loss(self, x, y, kl_coef: float, rng: np.random.Generator | None = None) -> Tensor:
        self.noise_rng = rng
        out = self.net.forward(x, training=True, rng=rng, layer_fn=self.noisy_layer)
        ce = cross_entropy(out, y)
        if kl_coef == 0.0:
            return ce
        return ce + kl_coef * self.kl()


def vd_train(
    vd: VDModelState,
    data: Dataset,
    epochs: int = 25,
    lr: float = 3e-4,
    *,
    batch: int = 32,
    kl_coef: float | None = None,
    threshold: float = 3.0,
    sigma_lr: float | None = None,
    zoo_seed: int = 0,
    model_id: int = 0,
) -> SparsifyTrajectory:
    """Run VD for ``epochs``; step 0 is the freshly wrapped model.

    Accuracy is measured with mean propagation (noise off, all weights on).
    ``kl_coef`` defaults to ``1 / len(train)``. ``sigma_lr`` sets a separate
    step size for the log-variances (defaults to ``lr``).
    """
    work = vd.copy()
    f = work.base.factors
    kl_coef = 1.0 / len(data.train_x) if kl_coef is None else float(kl_coef)
    vnet = VDNetwork(work)
    opts = [Optimizer(vnet.net.parameters(), kind=f.optimizer, lr=lr, weight_decay=0.0),
            Optimizer(list(vnet.log_sigma2.values()), kind=f.optimizer, lr=lr if sigma_lr is None else sigma_lr,
                      weight_decay=0.0)]
    shuffle_rng = model_stream(zoo_seed, f, "vd/shuffle")
    noise_rng = model_stream(zoo_seed, f, "vd/noise")
    traj = SparsifyTrajectory("vd", model_id)

    def record(epoch: int, loss: float) -> None:
        vnet.sync()
        tr, te = evaluate(work.base, data)
        la = work.log_alpha()
        rec = EpochRecord.make(epoch, tr, te, alpha_sparsity(la, threshold), loss)
        traj.steps.append(TrajectoryStep(work.base.copy(), rec, log_alpha=la))

    record(0, float("nan"))
    for epoch in range(1, epochs + 1):
        total, seen = 0.0, 0
        for idx in iterate_minibatches(shuffle_rng, len(data.train_x), batch):
            for opt in opts:
                opt.zero_grad()
            loss = vnet.loss(data.train_x[idx], data.train_y[idx], kl_coef, noise_rng)
            lv = float(loss.data)
            if not np.isfinite(lv):
                traj.status, traj.error = "failed", f"epoch {epoch}: non-finite loss"
                log.warning("VD model %d diverged at epoch %d", model_id, epoch)
                return traj
            loss.backward()
            for opt in opts:
                opt.step()
            total += lv * len(idx)
            seen += len(idx)
        record(epoch, total / max(seen, 1))
    return traj


def vd_harden(vd: VDModelState, threshold: float = 3.0) -> tuple[ModelState, PruneMask]:
    """Drop weights with ``log_alpha >= threshold``; returns a plain model and mask."""
    out = vd.base.copy()
    mask: PruneMask = {}
    for name, la in vd.log_alpha().items():
        m = (la < threshold).astype(np.float32)
        mask[name] = m
        out.params[name] = (out.params[name] * m).astype(np.float32)
    return out, mask
