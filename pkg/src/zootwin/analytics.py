"""Population-level evaluation of original and twin zoos.

Agreement between paired models, Pearson/Kendall correlation of their
accuracies, and per-layer sparsity statistics (including the
layer-size versus sparsity scatter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .report import METRICS_COLUMNS, emit_report, read_report
from .sparsify.common import SparsifyTrajectory, alpha_sparsity, sparsity
from .zoo.arch import ArchConfig, ModelState, logits
from .zoo.data import Dataset
from .zoo.train import argmax_lowest

__all__ = [
    "AgreementReport",
    "CorrelationReport",
    "METRICS_COLUMNS",
    "PredictionVector",
    "UndefinedCorrelation",
    "agreement",
    "agreement_report",
    "correlation_report",
    "emit_report",
    "kendall_tau",
    "layer_sparsity_stats",
    "pearson",
    "predict",
    "read_report",
]


class UndefinedCorrelation(ValueError):
    """A correlation coefficient is undefined for constant input."""


@dataclass
class PredictionVector:
    model_id: int | str
    dataset_id: str
    classes: np.ndarray

    def __len__(self) -> int:
        return len(self.classes)


@dataclass
class AgreementReport:
    pairs: list[tuple] = field(default_factory=list)
    kappa: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.kappa)) if self.kappa else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.kappa)) if self.kappa else float("nan")

    def rows(self) -> list[dict]:
        return [{"original": a, "twin": b, "agreement": k} for (a, b), k in zip(self.pairs, self.kappa)]


@dataclass
class CorrelationReport:
    original: list[float]
    sparsified: list[float]
    pearson: float
    kendall: float
    tag: str = ""

    def row(self) -> dict:
        return {"sparsity_level": self.tag, "n": len(self.original), "pearson_r": self.pearson, "kendall_tau": self.kendall}


def predict(state: ModelState, data: Dataset, split: str = "test", model_id: int | str = 0) -> PredictionVector:
    x, _ = data.split(split)
    if tuple(x.shape[1:]) != tuple(state.arch.input_dims):
        raise ValueError(f"model expects inputs {state.arch.input_dims}, data has {x.shape[1:]}")
    return PredictionVector(model_id, f"{data.name}/{split}", argmax_lowest(logits(state, x)))


def agreement(a: PredictionVector, b: PredictionVector) -> float:
    """Fraction of samples on which both prediction vectors pick the same class."""
    if a.dataset_id != b.dataset_id:
        raise ValueError(f"prediction vectors come from different data: {a.dataset_id} vs {b.dataset_id}")
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty prediction vectors")
    return float(np.count_nonzero(np.asarray(a.classes) == np.asarray(b.classes))) / len(a)


def agreement_report(originals: Sequence[ModelState], twins: Sequence[ModelState], data: Dataset, ids: Sequence | None = None) -> AgreementReport:
    if len(originals) != len(twins):
        raise ValueError("originals and twins must pair up")
    ids = list(ids) if ids is not None else list(range(len(originals)))
    rep = AgreementReport()
    for mid, o, t in zip(ids, originals, twins):
        rep.pairs.append((mid, mid))
        rep.kappa.append(agreement(predict(o, data, model_id=mid), predict(t, data, model_id=mid)))
    return rep


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d and of equal length")
    if x.size < 2:
        raise ValueError("need at least two observations")
    return x, y


def pearson(x, y) -> float:
    """Sample Pearson correlation with f64 accumulation."""
    x, y = _check_pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("zero variance in an input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def kendall_tau(x, y) -> float:
    """Kendall's tau-b by enumerating all pairs (O(n^2))."""
    x, y = _check_pair(x, y)
    n = x.size
    iu = np.triu_indices(n, k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    n0 = sx.size
    ties_x = int(np.count_nonzero(sx == 0))
    ties_y = int(np.count_nonzero(sy == 0))
    denom = math.sqrt(float(n0 - ties_x) * float(n0 - ties_y))
    if denom == 0.0:
        raise UndefinedCorrelation("all pairs tied in an input")
    s = int(np.sum(sx * sy))
    return s / denom


def correlation_report(original: Sequence[float], sparsified: Sequence[float], tag: str = "") -> CorrelationReport:
    return CorrelationReport(list(map(float, original)), list(map(float, sparsified)),
                             pearson(original, sparsified), kendall_tau(original, sparsified), tag)


def step_layer_sparsity(step) -> dict[str, float]:
    if step.log_alpha is not None:
        return alpha_sparsity(step.log_alpha, scope="per-layer")
    return sparsity(step.state, scope="per-layer")


@dataclass
class LayerStats:
    layers: list[str]
    sizes: list[int]
    table: list[dict]
    scatter: list[dict]


def layer_sparsity_stats(trajectories: Iterable[SparsifyTrajectory], epochs: Sequence[int], arch: ArchConfig | None = None) -> LayerStats:
    """Per-layer mean/std sparsity at the requested epochs.

    ``table`` follows the per-layer sparsity layout: one ``mean`` and one
    ``std`` row per epoch, columns ``Conv1..FCk`` plus ``Accuracy`` and
    ``GGAP``. ``scatter`` holds ``(log10 size, log10 mean sparsity, std)``
    per layer and epoch; layers with zero mean sparsity have no finite log
    and are left out of the scatter.
    """
    trajectories = [t for t in trajectories if t.status == "ok"]
    if not trajectories:
        raise ValueError("no usable trajectories")
    first = trajectories[0].steps[0].state
    arch = arch or first.arch
    weight_names = [n for n in first.params if n.endswith(".weight")]
    display = arch.layer_names()
    sizes = [int(first.params[n].size) for n in weight_names]
    table, scatter = [], []
    for ep in epochs:
        per_model, acc, gap = [], [], []
        for t in trajectories:
            if ep >= len(t.steps):
                continue
            st = t.steps[ep]
            ls = step_layer_sparsity(st)
            per_model.append([ls[n] for n in weight_names])
            acc.append(st.record.test_acc)
            gap.append(st.record.ggap)
        if not per_model:
            continue
        arr = np.asarray(per_model)
        mean, std = arr.mean(axis=0), arr.std(axis=0)
        method = trajectories[0].method
        for stat, vals, a, g in (("mean", mean, np.mean(acc), np.mean(gap)), ("std", std, np.std(acc), np.std(gap))):
            row = {"method": method, "epoch": ep, "stat": stat}
            row.update({d: float(v) for d, v in zip(display, vals)})
            row.update({"Accuracy": float(a), "GGAP": float(g)})
            table.append(row)
        for d, size, m, s in zip(display, sizes, mean, std):
            if m > 0:
                scatter.append({"layer": d, "epoch": ep, "size": size, "log10_size": math.log10(size),
                                "log10_mean_sparsity": math.log10(m), "mean_sparsity": float(m), "std": float(s)})
    return LayerStats(display, sizes, table, scatter)


def layer_table_columns(arch: ArchConfig) -> list[str]:
    return ["method", "epoch", "stat", *arch.layer_names(), "Accuracy", "GGAP"]


SCATTER_COLUMNS = ("layer", "epoch", "size", "log10_size", "log10_mean_sparsity", "mean_sparsity", "std")
AGREEMENT_COLUMNS = ("original", "twin", "agreement")
CORRELATION_COLUMNS = ("sparsity_level", "n", "pearson_r", "kendall_tau")
