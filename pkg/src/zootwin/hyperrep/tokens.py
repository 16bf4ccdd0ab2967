"""Flatten model states into fixed-width token sequences and back."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..engine import ShapeError
from ..zoo.arch import ModelState

BIAS_ALPHA = -20.0  # biases are never pruned


@dataclass
class TokenSequence:
    tokens: np.ndarray  # [S, d_tok]
    layer_of: np.ndarray  # per element, -1 on padding
    token_layer: np.ndarray  # layer of each token's first element
    pad: int

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return (self.layer_of >= 0).reshape(self.tokens.shape)


def param_layout(state: ModelState) -> list[tuple[str, tuple[int, ...], int]]:
    """``(name, shape, layer index)`` in the state's flattening order."""
    return [(k, v.shape, int(k.split(".")[0].split("_")[1])) for k, v in state.params.items()]


def chunk(vec: np.ndarray, d_tok: int) -> tuple[np.ndarray, int]:
    n = vec.size
    s = max(1, math.ceil(n / d_tok))
    out = np.zeros(s * d_tok, dtype=np.float32)
    out[:n] = vec
    return out.reshape(s, d_tok), s * d_tok - n


def _alpha_for(state: ModelState, alpha: dict[str, np.ndarray] | None) -> np.ndarray:
    parts = []
    for name, shape, _ in param_layout(state):
        if name.endswith(".bias"):
            parts.append(np.full(int(np.prod(shape)), BIAS_ALPHA, dtype=np.float32))
            continue
        if alpha is None:
            raise ShapeError("alpha map required")
        a = alpha.get(name)
        if a is None:
            a = alpha.get(name.replace(".weight", ".log_alpha"))
        if a is None or a.shape != shape:
            raise ShapeError(f"alpha for {name} missing or mis-shaped")
        parts.append(np.asarray(a, dtype=np.float32).ravel())
    return np.concatenate(parts)


def tokenize(state: ModelState, alpha: dict[str, np.ndarray] | None = None, d_tok: int = 64) -> tuple[TokenSequence, np.ndarray | None]:
    """Row-major flatten (layer order) and chunk into ``d_tok``-wide tokens.

    Returns the weight sequence and, if ``alpha`` is given, the log-alpha
    values laid out identically (biases get :data:`BIAS_ALPHA`).
    """
    layout = param_layout(state)
    flat = np.concatenate([state.params[k].ravel() for k, _, _ in layout]).astype(np.float32)
    toks, pad = chunk(flat, d_tok)
    layer_of = np.full(toks.size, -1, dtype=np.int64)
    pos = 0
    for _, shape, li in layout:
        n = int(np.prod(shape))
        layer_of[pos : pos + n] = li
        pos += n
    seq = TokenSequence(toks, layer_of, layer_of[:: d_tok].copy(), pad)
    if alpha is None:
        return seq, None
    a_toks, _ = chunk(_alpha_for(state, alpha), d_tok)
    return seq, a_toks


def detokenize(tokens: np.ndarray, template: ModelState) -> ModelState:
    flat = np.asarray(tokens, dtype=np.float32).ravel()
    out = template.copy()
    pos = 0
    for name, shape, _ in param_layout(template):
        n = int(np.prod(shape))
        if pos + n > flat.size:
            raise ShapeError("token sequence too short for the template")
        out.params[name] = flat[pos : pos + n].reshape(shape).copy()
        pos += n
    return out


def augment(
    tokens: np.ndarray,
    alpha: np.ndarray,
    sigma: np.ndarray,
    rng: np.random.Generator,
    gamma: float = 0.05,
    rho: float = 0.1,
) -> tuple[np.ndarray, np.ndarray]:
    """One random view: per-layer Gaussian noise on weights, then token erasing.

    ``sigma`` gives the layer std for every element (same shape as
    ``tokens``; 0 on padding). Erased positions are zeroed in both the
    weight and alpha sequences.
    """
    w = np.array(tokens, dtype=np.float32, copy=True)
    a = np.array(alpha, dtype=np.float32, copy=True)
    if gamma > 0:
        w += (gamma * sigma * rng.standard_normal(w.shape)).astype(np.float32)
    s = w.shape[0]
    n_erase = int(round(rho * s))
    if n_erase > 0:
        idx = rng.choice(s, size=n_erase, replace=False)
        w[idx] = 0.0
        a[idx] = 0.0
    return w, a
