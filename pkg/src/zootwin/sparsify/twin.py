"""Zoo-level sparsification: one trajectory per (model, method) written as a twin zoo.

Layout::

    <twin>/metrics.csv
    <twin>/<tag>/index.json
    <twin>/<tag>/model_<i>/epoch_<e>.ztc
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from ..report import METRICS_COLUMNS, emit_report
from ..zoo.checkpoint import load_state
from ..zoo.data import Dataset
from ..zoo.train import EpochRecord
from ..zoo.zoo import SHARED_DATA, Zoo, ZooEntry, epoch_path, read_index, run_jobs, write_index
from .common import SparsifyTrajectory, TrajectoryStep, method_tag
from .mp import mp_finetune, mp_prune
from .vd import VDModelState, vd_train, vd_wrap

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class MPParams:
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    epochs: int = 15
    lr: float | None = 1e-3  # None falls back to each model's own lr
    batch: int = 32


@dataclass(frozen=True)
class VDParams:
    epochs: int = 25
    lr: float = 3e-4
    sigma_lr: float | None = None
    kl_coef: float | None = None
    threshold: float = 3.0
    batch: int = 32


def _mp_job(args) -> SparsifyTrajectory:
    entry, ratio, p, zoo_seed = args
    pruned, mask = mp_prune(entry.state, ratio)
    return mp_finetune(pruned, mask, SHARED_DATA["data"], p.epochs, p.lr, batch=p.batch, zoo_seed=zoo_seed,
                       model_id=entry.model_id, ratio=ratio)


def _vd_job(args) -> SparsifyTrajectory:
    entry, p, zoo_seed = args
    return vd_train(vd_wrap(entry.state), SHARED_DATA["data"], p.epochs, p.lr, batch=p.batch, kl_coef=p.kl_coef,
                    threshold=p.threshold, sigma_lr=p.sigma_lr, zoo_seed=zoo_seed, model_id=entry.model_id)


def sparsify_zoo(zoo: Zoo, data: Dataset, method: str, params=None, *, workers: int = 1, out_dir=None) -> dict[str, list[SparsifyTrajectory]]:
    """Sparsify every usable model of ``zoo``; returns trajectories keyed by method tag."""
    usable = [e for e in zoo.entries if e.status == "ok" and e.state is not None]
    if method == "mp":
        params = params or MPParams()
        jobs = [(e, r, params, zoo.zoo_seed) for r in params.ratios for e in usable]
        trajs = run_jobs(_mp_job, jobs, data, workers)
    elif method == "vd":
        params = params or VDParams()
        jobs = [(e, params, zoo.zoo_seed) for e in usable]
        trajs = run_jobs(_vd_job, jobs, data, workers)
    else:
        raise ValueError(f"unknown sparsification method {method!r}")
    by_tag: dict[str, list[SparsifyTrajectory]] = {}
    for t in trajs:
        by_tag.setdefault(t.method, []).append(t)
    if out_dir is not None:
        write_twin(out_dir, zoo, by_tag)
    return by_tag


def write_twin(out_dir, zoo: Zoo, by_tag: dict[str, list[SparsifyTrajectory]]) -> None:
    out_dir = Path(out_dir)
    factors = {e.model_id: e.factors for e in zoo.entries}
    rows = []
    for tag in sorted(by_tag):
        sub = out_dir / tag
        entries = []
        for t in sorted(by_tag[tag], key=lambda t: t.model_id):
            t.save(sub, zoo.name)
            entries.append(ZooEntry(t.model_id, factors[t.model_id], t.records, t.status, t.error))
        twin = Zoo(zoo.name, zoo.arch, zoo.zoo_seed, entries, sub, method=tag)
        write_index(twin, extra={"source": str(zoo.path) if zoo.path else None})
        rows.extend(twin.metric_rows())
    emit_report(rows, out_dir / "metrics.csv", METRICS_COLUMNS)


def twin_tags(twin_dir) -> list[str]:
    return sorted(p.name for p in Path(twin_dir).iterdir() if (p / "index.json").exists())


def load_twin(twin_dir, tag: str) -> list[SparsifyTrajectory]:
    """Read a twin sub-zoo back into trajectories (states, masks or alpha maps, records)."""
    sub = Path(twin_dir) / tag
    index = read_index(sub)
    out = []
    for m in index["models"]:
        t = SparsifyTrajectory(tag, m["model_id"], status=m["status"], error=m["error"])
        for ep in range(m["n_states"]):
            state, extra, meta = load_state(epoch_path(sub, m["model_id"], ep))
            la = {k.replace(".log_alpha", ".weight"): v for k, v in extra.items() if k.endswith(".log_alpha")}
            mask = {k.replace(".mask", ".weight"): v for k, v in extra.items() if k.endswith(".mask")}
            t.steps.append(TrajectoryStep(state, EpochRecord.from_dict(meta["record"]), mask or None, la or None))
        out.append(t)
    return out


__all__ = ["DEFAULT_RATIOS", "MPParams", "VDModelState", "VDParams", "load_twin", "method_tag", "sparsify_zoo",
           "twin_tags", "write_twin"]
