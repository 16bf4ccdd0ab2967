"""Global unstructured magnitude pruning and masked fine-tuning."""

from __future__ import annotations

import math

import numpy as np

from ..zoo.arch import ModelState
from ..zoo.data import Dataset
from ..zoo.train import DivergenceError, EpochRecord, run_epochs
from .common import PruneMask, SparsifyTrajectory, TrajectoryStep, method_tag, prunable_names


def mp_prune(state: ModelState, ratio: float) -> tuple[ModelState, PruneMask]:
    """Zero the ``floor(ratio * P)`` smallest-magnitude weights across all layers.

    Ranking is global over every prunable tensor; equal magnitudes are
    broken by (tensor order, flat index), which a stable argsort over the
    layer-ordered concatenation gives for free.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"pruning ratio must lie in [0, 1), got {ratio}")
    names = prunable_names(state)
    flat = np.concatenate([np.abs(state.params[k]).ravel() for k in names])
    k = int(math.floor(ratio * flat.size))
    keep = np.ones(flat.size, dtype=np.float32)
    keep[np.argsort(flat, kind="stable")[:k]] = 0.0

    out = state.copy()
    mask: PruneMask = {}
    pos = 0
    for name in names:
        w = out.params[name]
        m = keep[pos : pos + w.size].reshape(w.shape)
        pos += w.size
        mask[name] = m
        out.params[name] = (w * m).astype(np.float32)
    return out, mask


def mp_finetune(
    state: ModelState,
    mask: PruneMask,
    data: Dataset,
    epochs: int = 15,
    lr: float | None = None,
    *,
    batch: int = 32,
    zoo_seed: int = 0,
    model_id: int = 0,
    ratio: float | None = None,
) -> SparsifyTrajectory:
    """Fine-tune a pruned model with its mask frozen.

    Step 0 is the pruned state itself, so the trajectory holds
    ``epochs + 1`` states. Divergence stops the run and flags it, keeping
    the steps recorded so far.
    """
    for name, m in mask.items():
        if np.any(state.params[name][m == 0] != 0):
            raise ValueError(f"{name}: masked weights are not zero")
    if ratio is None:
        ratio = 1.0 - sum(float(m.sum()) for m in mask.values()) / sum(m.size for m in mask.values())
    traj = SparsifyTrajectory(method_tag("mp", round(ratio, 6)), model_id)
    work = state.copy()

    def on_epoch(rec: EpochRecord, st: ModelState) -> None:
        traj.steps.append(TrajectoryStep(st.copy(), rec, mask))

    try:
        run_epochs(work, data, epochs, batch=batch, lr=lr, zoo_seed=zoo_seed, stream_tag=f"mp/{ratio:g}",
                   masks=mask, on_epoch=on_epoch)
    except DivergenceError as exc:
        traj.status, traj.error = "failed", str(exc)
    return traj
