from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..zoo.arch import ModelState
from ..zoo.checkpoint import save_state
from ..zoo.train import EpochRecord

PruneMask = dict  # weight name -> float32 0/1 array, 1 = kept


@dataclass
class TrajectoryStep:
    state: ModelState
    record: EpochRecord
    mask: PruneMask | None = None
    log_alpha: dict[str, np.ndarray] | None = None


@dataclass
class SparsifyTrajectory:
    method: str  # "mp_<ratio>" or "vd"
    model_id: int
    steps: list[TrajectoryStep] = field(default_factory=list)
    status: str = "ok"
    error: str | None = None

    @property
    def records(self) -> list[EpochRecord]:
        return [s.record for s in self.steps]

    def save(self, zoo_dir, zoo_name: str = "zoo") -> None:
        from ..zoo.zoo import epoch_path

        for s in self.steps:
            extra = None
            if s.log_alpha is not None:
                extra = {k.replace(".weight", ".log_alpha"): v for k, v in s.log_alpha.items()}
            elif s.mask is not None:
                extra = {k.replace(".weight", ".mask"): v for k, v in s.mask.items()}
            save_state(epoch_path(zoo_dir, self.model_id, s.record.epoch), s.state, extra,
                       zoo=zoo_name, model_id=self.model_id, method=self.method, record=s.record.to_dict())


def method_tag(method: str, ratio: float | None = None) -> str:
    if method == "mp":
        return f"mp_{ratio:g}"
    return method


def prunable_names(state: ModelState) -> list[str]:
    """Conv and fc kernels in layer order; biases are never pruned."""
    return state.weight_names()


def sparsity(obj, scope: str = "global"):
    """Zero fraction among prunable weights.

    ``obj`` is a :class:`ModelState` (zero-valued weights count) or a mask
    mapping (0 entries count). ``scope="per-layer"`` returns name -> fraction.
    """
    if isinstance(obj, ModelState):
        arrays = {k: obj.params[k] for k in prunable_names(obj)}
    else:
        arrays = dict(obj)
    per = {k: float(np.count_nonzero(v == 0)) / v.size for k, v in arrays.items()}
    if scope == "per-layer":
        return per
    if scope != "global":
        raise ValueError(f"unknown scope {scope!r}")
    total = sum(v.size for v in arrays.values())
    return sum(int(np.count_nonzero(v == 0)) for v in arrays.values()) / max(total, 1)


def alpha_sparsity(log_alpha: dict[str, np.ndarray], threshold: float = 3.0, scope: str = "global"):
    masks = {k: (v < threshold).astype(np.float32) for k, v in log_alpha.items()}
    return sparsity(masks, scope)


def save_trajectories(trajs: list[SparsifyTrajectory], zoo_dir, zoo_name: str) -> None:
    Path(zoo_dir).mkdir(parents=True, exist_ok=True)
    for t in trajs:
        t.save(zoo_dir, zoo_name)
