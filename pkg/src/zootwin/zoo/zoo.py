"""Population training over a grid of generating factors.

On-disk layout of one zoo directory::

    index.json
    metrics.csv
    model_<idx>/epoch_<e>.ztc
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..report import METRICS_COLUMNS, emit_report
from .arch import ArchConfig, GeneratingFactors, ModelState, build_model
from .checkpoint import load_state, save_state
from .data import Dataset
from .train import DivergenceError, EpochRecord, run_epochs

log = logging.getLogger(__name__)


@dataclass
class ZooEntry:
    model_id: int
    factors: GeneratingFactors
    records: list[EpochRecord] = field(default_factory=list)
    status: str = "ok"
    error: str | None = None
    state: ModelState | None = None

    @property
    def final(self) -> EpochRecord | None:
        return self.records[-1] if self.records else None


@dataclass
class Zoo:
    name: str
    arch: ArchConfig
    zoo_seed: int
    entries: list[ZooEntry]
    path: Path | None = None
    method: str = "original"

    def ok(self) -> list[ZooEntry]:
        return [e for e in self.entries if e.status == "ok"]

    def metric_rows(self) -> list[dict]:
        return [
            {"zoo": self.name, "model_id": e.model_id, "method": self.method, **_record_cols(r)}
            for e in self.entries
            for r in e.records
        ]


def _record_cols(r: EpochRecord) -> dict:
    return {"epoch": r.epoch, "sparsity": r.sparsity, "train_acc": r.train_acc, "test_acc": r.test_acc, "ggap": r.ggap}


def seed_grid(n: int, base: GeneratingFactors | None = None, first_seed: int = 0) -> list[GeneratingFactors]:
    base = base or GeneratingFactors()
    return [base.with_(seed=first_seed + i) for i in range(n)]


def product_grid(seeds, base: GeneratingFactors | None = None, **axes) -> list[GeneratingFactors]:
    """Cartesian product over ``seeds`` and any factor axes, e.g. ``lr=[3e-4, 1e-3]``."""
    base = base or GeneratingFactors()
    keys = list(axes)
    out = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        for s in seeds:
            out.append(base.with_(seed=int(s), **dict(zip(keys, combo))))
    return out


def model_dir(zoo_dir, model_id: int) -> Path:
    return Path(zoo_dir) / f"model_{model_id}"


def epoch_path(zoo_dir, model_id: int, epoch: int) -> Path:
    return model_dir(zoo_dir, model_id) / f"epoch_{epoch}.ztc"


# -- worker plumbing -------------------------------------------------------
SHARED_DATA: dict = {}


def _init_worker(data: Dataset) -> None:
    SHARED_DATA["data"] = data


def _train_job(args) -> ZooEntry:
    model_id, factors, arch, epochs, batch, zoo_seed, out_dir, zoo_name = args
    data: Dataset = SHARED_DATA["data"]
    entry = ZooEntry(model_id, factors)
    state = build_model(arch, factors, zoo_seed)

    def on_epoch(rec: EpochRecord, st: ModelState) -> None:
        entry.records.append(rec)
        if out_dir is not None:
            save_state(epoch_path(out_dir, model_id, rec.epoch), st, zoo=zoo_name, model_id=model_id,
                       method="original", record=rec.to_dict())

    try:
        run_epochs(state, data, epochs, batch=batch, zoo_seed=zoo_seed, on_epoch=on_epoch)
    except DivergenceError as exc:
        entry.status, entry.error = "failed", str(exc)
        log.warning("model %d diverged: %s", model_id, exc)
    entry.state = state
    return entry


def run_jobs(fn, jobs: list, data: Dataset, workers: int = 1) -> list:
    """Map ``fn`` over ``jobs`` with ``data`` shared; output order follows ``jobs``."""
    if workers <= 1 or len(jobs) <= 1:
        _init_worker(data)
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(data,)) as pool:
        return list(pool.map(fn, jobs))


def train_zoo(
    grid: list[GeneratingFactors],
    arch: ArchConfig,
    data: Dataset,
    epochs: int,
    *,
    batch: int = 32,
    zoo_seed: int = 0,
    out_dir=None,
    workers: int = 1,
    name: str = "zoo",
    index_extra: dict | None = None,
) -> Zoo:
    """Train one model per grid point; results do not depend on ``workers``."""
    if not grid:
        raise ValueError("empty factor grid")
    keys = [json.dumps(f.to_dict(), sort_keys=True) for f in grid]
    if len(set(keys)) != len(keys):
        raise ValueError("grid contains duplicate (seed, factors) entries")
    out = Path(out_dir) if out_dir is not None else None
    jobs = [(i, f, arch, epochs, batch, zoo_seed, out, name) for i, f in enumerate(grid)]
    entries = run_jobs(_train_job, jobs, data, workers)
    zoo = Zoo(name, arch, zoo_seed, entries, out)
    if out is not None:
        write_index(zoo, extra={"epochs": epochs, "batch": batch, "dataset": data.name, **(index_extra or {})})
    return zoo


def write_index(zoo: Zoo, extra: dict | None = None) -> None:
    out = Path(zoo.path)
    out.mkdir(parents=True, exist_ok=True)
    index = {
        "name": zoo.name,
        "method": zoo.method,
        "zoo_seed": zoo.zoo_seed,
        "arch": zoo.arch.to_dict(),
        **(extra or {}),
        "models": [
            {
                "model_id": e.model_id,
                "factors": e.factors.to_dict(),
                "status": e.status,
                "error": e.error,
                "n_states": len(e.records),
                "final": e.final.to_dict() if e.final else None,
                "records": [r.to_dict() for r in e.records],
            }
            for e in zoo.entries
        ],
    }
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    emit_report(zoo.metric_rows(), out / "metrics.csv", METRICS_COLUMNS)


def read_index(zoo_dir) -> dict:
    path = Path(zoo_dir) / "index.json"
    if not path.exists():
        raise FileNotFoundError(f"no index.json in {zoo_dir}")
    return json.loads(path.read_text())


def load_zoo(zoo_dir, load_states: bool = True) -> Zoo:
    """Load a zoo directory; final states are read unless ``load_states`` is false."""
    index = read_index(zoo_dir)
    arch = ArchConfig.from_dict(index["arch"])
    entries = []
    for m in index["models"]:
        e = ZooEntry(m["model_id"], GeneratingFactors.from_dict(m["factors"]), status=m["status"], error=m["error"])
        e.records = [EpochRecord.from_dict(r) for r in m["records"]]
        if load_states and m["n_states"]:
            e.state = load_state(epoch_path(zoo_dir, e.model_id, m["n_states"] - 1))[0]
        entries.append(e)
    return Zoo(index["name"], arch, index["zoo_seed"], entries, Path(zoo_dir), index.get("method", "original"))


def load_trajectory(zoo_dir, model_id: int) -> list[tuple[ModelState, dict[str, np.ndarray], dict]]:
    index = read_index(zoo_dir)
    m = next((m for m in index["models"] if m["model_id"] == model_id), None)
    if m is None:
        raise KeyError(f"model {model_id} not in {zoo_dir}")
    return [load_state(epoch_path(zoo_dir, model_id, ep)) for ep in range(m["n_states"])]
