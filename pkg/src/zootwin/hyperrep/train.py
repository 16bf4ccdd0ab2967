"""Population assembly, autoencoder training and reconstruction scoring."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..engine import Optimizer, stream
from ..zoo.arch import ModelState
from ..zoo.checkpoint import load_checkpoint, save_checkpoint
from .losses import LossConfig, loss_contrastive, loss_recon_alpha, loss_recon_w, total_loss
from .model import AEConfig, Autoencoder
from .tokens import augment, tokenize

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
PROPERTIES = ("test_acc", "sparsity", "epoch", "ggap")


class AEDivergence(RuntimeError):
    pass


@dataclass
class Population:
    """Tokenized model states with their properties."""

    w: np.ndarray  # [n, S, d_tok]
    alpha: np.ndarray  # [n, S, d_tok]
    layer_of: np.ndarray  # [S * d_tok], -1 on padding
    props: dict[str, np.ndarray]
    model_id: np.ndarray
    n_params: int
    weight_elems: np.ndarray | None = None  # [S * d_tok], True on prunable weights

    def __len__(self) -> int:
        return len(self.w)

    @property
    def valid(self) -> np.ndarray:
        return (self.layer_of >= 0).reshape(self.w.shape[1:])

    @property
    def weight_valid(self) -> np.ndarray:
        """Valid positions that hold prunable weights (bias alphas are a fixed sentinel)."""
        return self.weight_elems.reshape(self.w.shape[1:])

    def subset(self, idx) -> "Population":
        idx = np.asarray(idx)
        return Population(self.w[idx], self.alpha[idx], self.layer_of, {k: v[idx] for k, v in self.props.items()},
                          self.model_id[idx], self.n_params, self.weight_elems)


def build_population(items, d_tok: int = 64) -> Population:
    """``items``: iterable of ``(model_id, ModelState, log_alpha map, record dict)``."""
    ws, als, mids = [], [], []
    props = {k: [] for k in PROPERTIES}
    layer_of = weight_elems = None
    n_params = None
    for mid, state, alpha, rec in items:
        seq, a = tokenize(state, alpha, d_tok)
        if layer_of is None:
            layer_of, n_params = seq.layer_of, state.num_params()
            is_w = np.concatenate([np.full(v.size, k.endswith(".weight")) for k, v in state.params.items()])
            weight_elems = np.zeros(seq.tokens.size, dtype=bool)
            weight_elems[: is_w.size] = is_w
        elif seq.tokens.size != layer_of.size or not np.array_equal(seq.layer_of, layer_of):
            raise ValueError("all states must share one architecture")
        ws.append(seq.tokens)
        als.append(a)
        mids.append(mid)
        for k in PROPERTIES:
            props[k].append(float(rec[k]))
    if not ws:
        raise ValueError("empty population")
    return Population(np.stack(ws), np.stack(als), layer_of, {k: np.asarray(v) for k, v in props.items()},
                      np.asarray(mids), n_params, weight_elems)


@dataclass
class LayerStats:
    mu: dict[int, float]
    sigma: dict[int, float]

    @classmethod
    def compute(cls, pop: Population) -> "LayerStats":
        flat = pop.w.reshape(len(pop), -1)
        mu, sigma = {}, {}
        for li in np.unique(pop.layer_of[pop.layer_of >= 0]):
            vals = flat[:, pop.layer_of == li].astype(np.float64)
            mu[int(li)] = float(vals.mean())
            sigma[int(li)] = max(float(vals.std()), SIGMA_FLOOR)
        return cls(mu, sigma)

    def per_element(self, layer_of: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
        mu = np.zeros(layer_of.size)
        sg = np.ones(layer_of.size)
        for li in self.mu:
            sel = layer_of == li
            mu[sel], sg[sel] = self.mu[li], self.sigma[li]
        return mu.reshape(shape), sg.reshape(shape)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    gamma: float = 0.05
    rho: float = 0.1
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        return cls(loss=loss, **d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    ae: Autoencoder
    stats: LayerStats
    loss_log: list[dict]


def _batch_loss(ae: Autoencoder, pop: Population, idx, rng, mu, sg, cfg: TrainConfig, parts: bool = False):
    lc_cfg = cfg.loss
    sigma_tok = np.where(pop.valid, sg, 0.0)
    views_w, views_a = [], []
    for _ in range(2):
        for i in idx:
            vw, va = augment(pop.w[i], pop.alpha[i], sigma_tok, rng, cfg.gamma, cfg.rho)
            views_w.append(vw)
            views_a.append(va)
    views_w, views_a = np.stack(views_w), np.stack(views_a)
    z = ae.encode(views_w)
    w_hat, a_hat = ae.decode(z)
    target_w = np.concatenate([pop.w[idx], pop.w[idx]])
    target_a = np.concatenate([pop.alpha[idx], pop.alpha[idx]])
    lw = loss_recon_w(w_hat, target_w, mu, sg, pop.valid, pop.n_params)
    la = loss_recon_alpha(a_hat, target_a, lc_cfg.threshold, lc_cfg.alpha_range, pop.valid)
    lc = loss_contrastive(ae.project(z), lc_cfg.temperature)
    total = total_loss(lc, lw, la, lc_cfg.beta)
    if parts:
        return total, {"contrastive": float(lc.data), "recon_w": float(lw.data), "recon_alpha": float(la.data)}
    return total


def evaluate_loss(ae: Autoencoder, pop: Population, stats: LayerStats, cfg: TrainConfig, seed_tag: str = "ae/eval") -> dict:
    """Mean loss over the population with fixed-seed views (no updates)."""
    rng = stream(cfg.seed, seed_tag)
    mu, sg = stats.per_element(pop.layer_of, pop.w.shape[1:])
    tot, acc, nb = 0.0, {"contrastive": 0.0, "recon_w": 0.0, "recon_alpha": 0.0}, 0
    for start in range(0, len(pop), cfg.batch):
        idx = np.arange(start, min(start + cfg.batch, len(pop)))
        t, parts = _batch_loss(ae, pop, idx, rng, mu, sg, cfg, parts=True)
        tot += float(t.data)
        for k in acc:
            acc[k] += parts[k]
        nb += 1
    return {"total": tot / nb, **{k: v / nb for k, v in acc.items()}}


def train_ae(pop: Population, cfg: TrainConfig, ae_cfg: AEConfig | None = None) -> TrainResult:
    """Adam on the combined objective; epoch 0 in the log is the untrained model."""
    if len(pop) < 2:
        raise ValueError("need at least two states")
    ae_cfg = ae_cfg or AEConfig(n_tokens=pop.w.shape[1], d_tok=pop.w.shape[2])
    ae = Autoencoder(ae_cfg, seed=cfg.seed)
    stats = LayerStats.compute(pop)
    mu, sg = stats.per_element(pop.layer_of, pop.w.shape[1:])
    ae.set_normalization(mu, sg)
    opt = Optimizer(ae.parameters(), kind="adam", lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle = stream(cfg.seed, "ae/shuffle")
    aug = stream(cfg.seed, "ae/augment")
    loss_log = [{"epoch": 0, "train_loss": float("nan"), **{f"eval_{k}": v for k, v in evaluate_loss(ae, pop, stats, cfg).items()}}]
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(len(pop))
        total, nb = 0.0, 0
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            if len(idx) < 2 and len(order) > 1:
                continue  # a lone sample has no negatives
            opt.zero_grad()
            loss = _batch_loss(ae, pop, idx, aug, mu, sg, cfg)
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise AEDivergence(f"epoch {epoch}: non-finite loss")
            loss.backward()
            opt.step()
            total += lv
            nb += 1
        row = {"epoch": epoch, "train_loss": total / max(nb, 1)}
        row.update({f"eval_{k}": v for k, v in evaluate_loss(ae, pop, stats, cfg).items()})
        log.info("ae epoch %d train %.4f eval %.4f", epoch, row["train_loss"], row["eval_total"])
        loss_log.append(row)
    return TrainResult(ae, stats, loss_log)


def reconstruct(ae: Autoencoder, pop: Population, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    ws, als = [], []
    for i in range(0, len(pop), batch):
        w_hat, a_hat = ae.decode(ae.encode(pop.w[i : i + batch]))
        ws.append(w_hat.data)
        als.append(a_hat.data)
    return np.concatenate(ws), np.concatenate(als)


def r2_score(pred: np.ndarray, target: np.ndarray, baseline: np.ndarray) -> float:
    """``1 - SS_res / SS_tot`` with ``baseline`` as the reference predictor."""
    ss_res = float(np.sum((pred.astype(np.float64) - target) ** 2))
    ss_tot = float(np.sum((baseline.astype(np.float64) - target) ** 2))
    if ss_tot == 0.0:
        raise ValueError("degenerate target: zero variance")
    return 1.0 - ss_res / ss_tot


def reconstruction_r2(ae: Autoencoder, train: Population, test: Population,
                      loss: LossConfig | None = None) -> dict[str, float]:
    """Held-out R^2 of weights and alphas; the baseline is the per-element training mean.

    Alphas are scored after the ``tanh((a - t) / r)`` map of their reconstruction
    loss, since values far from the threshold are deliberately left unconstrained.
    """
    loss = loss or LossConfig()

    def squash(a):
        return np.tanh((a.astype(np.float64) - loss.threshold) / loss.alpha_range)

    w_hat, a_hat = reconstruct(ae, test)
    a_hat = squash(a_hat)
    sel = test.weight_valid
    valid = test.valid
    w_base = np.broadcast_to(train.w.mean(axis=0), test.w.shape)
    a_base = np.broadcast_to(squash(train.alpha).mean(axis=0), test.alpha.shape)
    vm = np.broadcast_to(valid, test.w.shape)
    wm = np.broadcast_to(sel, test.w.shape)
    return {
        "weights": r2_score(w_hat[vm], test.w[vm], w_base[vm]),
        "alphas": r2_score(a_hat[wm], squash(test.alpha)[wm], a_base[wm]),
    }


def save_ae(path, result: TrainResult, train_cfg: TrainConfig) -> Path:
    meta = {"ae_config": result.ae.cfg.to_dict(), "train_config": train_cfg.to_dict(),
            "layer_stats": {"mu": {str(k): v for k, v in result.stats.mu.items()},
                            "sigma": {str(k): v for k, v in result.stats.sigma.items()}}}
    return save_checkpoint(path, result.ae.state_dict(), meta)


def load_ae(path) -> tuple[Autoencoder, dict]:
    tensors, meta = load_checkpoint(path)
    return Autoencoder(AEConfig(**meta["ae_config"]), params=tensors), meta


def save_embeddings(path, z: np.ndarray, pop: Population, extra: dict | None = None) -> tuple[Path, Path]:
    """ZTC tensor ``z`` [n, d_z] plus a JSON sidecar of per-row properties."""
    path = Path(path)
    out = save_checkpoint(path, {"z": np.asarray(z, dtype=np.float32)}, {"rows": len(z), **(extra or {})})
    rows = [{"row": i, "model_id": int(pop.model_id[i]), **{k: float(pop.props[k][i]) for k in PROPERTIES}}
            for i in range(len(pop))]
    side = path.with_suffix(".json")
    side.write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    return out, side
