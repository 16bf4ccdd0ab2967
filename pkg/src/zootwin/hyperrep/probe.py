"""Linear probes from embeddings to model properties."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..engine import stream

PROBE_COLUMNS = ("target", "r2", "n_train", "n_test")
TARGETS = {"accuracy": "test_acc", "sparsity": "sparsity", "epoch": "epoch", "ggap": "ggap"}
MIN_EMBEDDINGS = 20


@dataclass
class ProbeResult:
    target: str
    r2: float
    n_train: int
    n_test: int

    def row(self) -> dict:
        return {"target": self.target, "r2": self.r2, "n_train": self.n_train, "n_test": self.n_test}


def split_by_model(model_ids, test_frac: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Row indices for train/test with no model on both sides."""
    model_ids = np.asarray(model_ids)
    uniq = np.unique(model_ids)
    if len(uniq) < 2:
        raise ValueError("need at least two models to split by model id")
    n_test = min(len(uniq) - 1, max(1, math.ceil(test_frac * len(uniq))))
    test_models = stream(seed, "probe/split").permutation(uniq)[:n_test]
    is_test = np.isin(model_ids, test_models)
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float = 1e-3) -> tuple[np.ndarray, float]:
    """Ridge regression with an unpenalized intercept."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x.mean(axis=0), y.mean()
    xc = x - xm
    a = xc.T @ xc + lam * np.eye(x.shape[1])
    coef = np.linalg.solve(a, xc.T @ (y - ym))
    return coef, float(ym - xm @ coef)


def r2(pred: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("degenerate target: zero variance on the held-out split")
    return 1.0 - float(np.sum((np.asarray(pred, dtype=np.float64) - y) ** 2)) / ss_tot


def probe(z, y, model_ids, target: str = "", lam: float = 1e-3, test_frac: float = 0.2, seed: int = 0) -> ProbeResult:
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(z) < MIN_EMBEDDINGS:
        raise ValueError(f"probing needs at least {MIN_EMBEDDINGS} embeddings, got {len(z)}")
    if np.all(y == y[0]):
        raise ValueError(f"degenerate target {target!r}: zero variance")
    tr, te = split_by_model(model_ids, test_frac, seed)
    coef, b = ridge_fit(z[tr], y[tr], lam)
    return ProbeResult(target, r2(z[te] @ coef + b, y[te]), len(tr), len(te))


def shuffled_control(z, y, model_ids, target: str = "", lam: float = 1e-3, test_frac: float = 0.2, seed: int = 0) -> ProbeResult:
    """Same probe with the property labels permuted across all rows."""
    y = np.asarray(y)[stream(seed, "probe/shuffle").permutation(len(y))]
    res = probe(z, y, model_ids, target, lam, test_frac, seed)
    res.target = f"{target}_shuffled" if target else "shuffled"
    return res


def probe_all(z, props: dict[str, np.ndarray], model_ids, lam: float = 1e-3, test_frac: float = 0.2, seed: int = 0) -> list[ProbeResult]:
    return [probe(z, props[col], model_ids, name, lam, test_frac, seed) for name, col in TARGETS.items()]
