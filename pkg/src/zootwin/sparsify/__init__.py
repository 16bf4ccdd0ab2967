from .common import PruneMask, SparsifyTrajectory, TrajectoryStep, alpha_sparsity, method_tag, prunable_names, sparsity
from .mp import mp_finetune, mp_prune
from .vd import VDModelState, vd_harden, vd_train, vd_wrap

__all__ = [
    "PruneMask",
    "SparsifyTrajectory",
    "TrajectoryStep",
    "VDModelState",
    "alpha_sparsity",
    "method_tag",
    "mp_finetune",
    "mp_prune",
    "prunable_names",
    "sparsity",
    "vd_harden",
    "vd_train",
    "vd_wrap",
]
