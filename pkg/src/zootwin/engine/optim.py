"""SGD and Adam over lists of leaf tensors.

Weight decay is the classic L2 form (added to the gradient) for both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimState:
    kind: str
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Optimizer:
    """Stateful optimizer; ``kind`` is ``"adam"`` or ``"sgd"``."""

    def __init__(self, params, kind: str = "adam", lr: float = 1e-3, weight_decay: float = 0.0, **adam_kw):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params: list[Tensor] = list(params)
        self.state = OptimState(kind=kind, lr=float(lr), weight_decay=float(weight_decay), **adam_kw)
        if kind == "adam":
            self.state.m = [np.zeros_like(p.data) for p in self.params]
            self.state.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, masks: dict[int, np.ndarray] | None = None):
        """Apply one update from each parameter's ``.grad``.

        ``masks`` maps ``id(param)`` to a 0/1 array: masked entries get a
        zero gradient before the update and are forced back to 0 after it.
        """
        st = self.state
        st.step += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            mask = masks.get(id(p)) if masks else None
            if st.weight_decay:
                g = g + st.weight_decay * p.data
            if mask is not None:
                g = g * mask
            if st.kind == "sgd":
                p.data = p.data - st.lr * g
            else:
                m = st.beta1 * st.m[i] + (1 - st.beta1) * g
                v = st.beta2 * st.v[i] + (1 - st.beta2) * (g * g)
                if mask is not None:
                    # frozen entries keep their moments untouched
                    m = np.where(mask > 0, m, st.m[i])
                    v = np.where(mask > 0, v, st.v[i])
                st.m[i], st.v[i] = m, v
                mhat = m / (1 - st.beta1**st.step)
                vhat = v / (1 - st.beta2**st.step)
                p.data = (p.data - st.lr * mhat / (np.sqrt(vhat) + st.eps)).astype(p.data.dtype, copy=False)
            if mask is not None:
                p.data = p.data * mask
