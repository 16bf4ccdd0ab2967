"""Single-model training with per-epoch metric records."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ..engine import Optimizer, cross_entropy
from .arch import ModelState, Network, logits, model_stream
from .data import Dataset

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, msg: str = "non-finite loss"):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float
    ggap: float
    sparsity: float
    loss: float = float("nan")

    @classmethod
    def make(cls, epoch: int, train_acc: float, test_acc: float, sparsity: float, loss: float = float("nan")):
        train_acc, test_acc = float(np.float32(train_acc)), float(np.float32(test_acc))
        return cls(epoch, train_acc, test_acc, train_acc - test_acc, float(sparsity), float(loss))

    def to_dict(self) -> dict:
        d = asdict(self)
        if not np.isfinite(d["loss"]):
            d["loss"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpochRecord":
        d = dict(d)
        if d.get("loss") is None:
            d["loss"] = float("nan")
        return cls(**d)


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(labels))) if len(labels) else 0.0


def argmax_lowest(z: np.ndarray) -> np.ndarray:
    """Row argmax; ``np.argmax`` already returns the first (lowest) index on ties."""
    return np.argmax(z, axis=1)


def evaluate(state: ModelState, data: Dataset) -> tuple[float, float]:
    tr = accuracy(argmax_lowest(logits(state, data.train_x)), data.train_y)
    te = accuracy(argmax_lowest(logits(state, data.test_x)), data.test_y)
    return tr, te


def weight_sparsity(state: ModelState) -> float:
    names = state.weight_names()
    zeros = sum(int(np.count_nonzero(state.params[k] == 0)) for k in names)
    return zeros / max(1, sum(state.params[k].size for k in names))


def iterate_minibatches(rng: np.random.Generator, n: int, batch: int):
    order = rng.permutation(n)
    for i in range(0, n, batch):
        yield order[i : i + batch]


def run_epochs(
    state: ModelState,
    data: Dataset,
    epochs: int,
    *,
    batch: int = 32,
    lr: float | None = None,
    zoo_seed: int = 0,
    stream_tag: str = "train",
    masks: dict[str, np.ndarray] | None = None,
    on_epoch: Callable[[EpochRecord, ModelState], None] | None = None,
) -> list[EpochRecord]:
    """Train ``state`` in place for ``epochs``; returns records for epochs 0..E.

    Epoch 0 is the state before any update. ``masks`` (name -> 0/1 array)
    freezes entries at zero throughout.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    f = state.factors
    net = Network(state)
    opt = Optimizer(net.parameters(), kind=f.optimizer, lr=f.lr if lr is None else lr, weight_decay=f.weight_decay)
    mask_by_id = {id(net.tensors[k]): m for k, m in (masks or {}).items()}
    shuffle_rng = model_stream(zoo_seed, f, f"{stream_tag}/shuffle")
    drop_rng = model_stream(zoo_seed, f, f"{stream_tag}/dropout")

    def record(epoch: int, loss: float) -> EpochRecord:
        net.sync()
        tr, te = evaluate(state, data)
        rec = EpochRecord.make(epoch, tr, te, weight_sparsity(state), loss)
        if on_epoch:
            on_epoch(rec, state)
        return rec

    records = [record(0, float("nan"))]
    x_all, y_all = data.train_x, data.train_y
    for epoch in range(1, epochs + 1):
        total, seen = 0.0, 0
        for idx in iterate_minibatches(shuffle_rng, len(x_all), batch):
            opt.zero_grad()
            out = net.forward(x_all[idx], training=True, rng=drop_rng)
            loss = cross_entropy(out, y_all[idx])
            lv = float(loss.data)
            if not np.isfinite(lv):
                net.sync()
                raise DivergenceError(epoch)
            loss.backward()
            opt.step(mask_by_id or None)
            total += lv * len(idx)
            seen += len(idx)
        rec = record(epoch, total / max(seen, 1))
        log.debug("epoch %d loss %.4f train %.4f test %.4f", epoch, rec.loss, rec.train_acc, rec.test_acc)
        records.append(rec)
    return records


def train_model(state: ModelState, data: Dataset, epochs: int, batch: int = 32, **kw) -> tuple[list[EpochRecord], ModelState]:
    """Train a copy of ``state``; the input is left untouched."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    work = state.copy()
    records = run_epochs(work, data, epochs, batch=batch, **kw)
    return records, work
