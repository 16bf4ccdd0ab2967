"""Attention autoencoder over weight tokens.

Encoder: token projection, learned positions, an appended CLS token,
pre-norm attention blocks, CLS compressed linearly to ``z``. Decoder:
``z`` expanded to one sequence, copied into a weight branch and an alpha
branch that differ only by a learned type encoding, a joint attention
stack, then split into two linear output heads.

The network works in per-layer normalised coordinates: inputs are
standardised with fixed (mu, sigma) buffers and the weight head is mapped
back with ``mu + sigma * out``. The buffers default to the identity and are
set from the training population's layer statistics.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..engine import ShapeError, Tensor, concat, gelu, layer_norm, matmul, parameter, softmax, stream


@dataclass(frozen=True)
class AEConfig:
    n_tokens: int
    d_tok: int = 64
    d_model: int = 128
    heads: int = 4
    enc_blocks: int = 2
    dec_blocks: int = 2
    d_z: int = 64
    mlp_ratio: int = 2
    proj_dim: int = 32

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)


def _linear_init(rng, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)


class Autoencoder:
    def __init__(self, cfg: AEConfig, seed: int = 0, params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        if params is None:
            params = self._init(cfg, stream(seed, "ae/init"))
        params = dict(params)
        shape = (cfg.n_tokens, cfg.d_tok)
        self.norm_mu = np.asarray(params.pop("norm.mu", np.zeros(shape)), dtype=np.float64)
        self.norm_sigma = np.asarray(params.pop("norm.sigma", np.ones(shape)), dtype=np.float64)
        self.p = {k: parameter(v, name=k) for k, v in params.items()}

    def set_normalization(self, mu: np.ndarray, sigma: np.ndarray) -> None:
        shape = (self.cfg.n_tokens, self.cfg.d_tok)
        # rounded through f32 so a saved checkpoint reproduces the same embeddings
        mu = np.broadcast_to(mu, shape).astype(np.float32).astype(np.float64)
        sigma = np.broadcast_to(sigma, shape).astype(np.float32).astype(np.float64)
        if np.any(sigma <= 0):
            raise ValueError("normalisation sigma must be positive")
        self.norm_mu, self.norm_sigma = mu, sigma

    @staticmethod
    def _init(cfg: AEConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
        d, s, h = cfg.d_model, cfg.n_tokens, cfg.d_model * cfg.mlp_ratio
        p: dict[str, np.ndarray] = {}

        def lin(name, i, o):
            p[name + ".w"], p[name + ".b"] = _linear_init(rng, i, o)

        def block(prefix):
            for ln in ("ln1", "ln2"):
                p[f"{prefix}.{ln}.g"], p[f"{prefix}.{ln}.b"] = np.ones(d), np.zeros(d)
            lin(prefix + ".qkv", d, 3 * d)
            lin(prefix + ".out", d, d)
            lin(prefix + ".fc1", d, h)
            lin(prefix + ".fc2", h, d)

        lin("enc.in", cfg.d_tok, d)
        p["enc.pos"] = 0.02 * rng.standard_normal((s, d))
        p["enc.cls"] = 0.02 * rng.standard_normal((1, d))
        for i in range(cfg.enc_blocks):
            block(f"enc.{i}")
        p["enc.ln.g"], p["enc.ln.b"] = np.ones(d), np.zeros(d)
        lin("enc.z", d, cfg.d_z)

        lin("dec.in", cfg.d_z, s * d)
        p["dec.pos"] = 0.02 * rng.standard_normal((s, d))
        p["dec.type"] = 0.02 * rng.standard_normal((2, d))
        for i in range(cfg.dec_blocks):
            block(f"dec.{i}")
        p["dec.ln.g"], p["dec.ln.b"] = np.ones(d), np.zeros(d)
        lin("dec.w", d, cfg.d_tok)
        lin("dec.a", d, cfg.d_tok)

        lin("proj.1", cfg.d_z, cfg.d_z)
        lin("proj.2", cfg.d_z, cfg.proj_dim)
        return p

    def parameters(self) -> list[Tensor]:
        return list(self.p.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: t.data.astype(np.float32) for k, t in self.p.items()}
        out["norm.mu"], out["norm.sigma"] = self.norm_mu.astype(np.float32), self.norm_sigma.astype(np.float32)
        return out

    # -- building blocks -------------------------------------------------
    def _lin(self, name: str, x: Tensor) -> Tensor:
        return matmul(x, self.p[name + ".w"]) + self.p[name + ".b"]

    def _attention(self, prefix: str, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        m, t, d = x.shape
        nh = self.cfg.heads
        dh = d // nh
        qkv = self._lin(prefix + ".qkv", x).reshape(m, t, 3, nh, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        att = matmul(softmax(scores, axis=-1), v)
        return self._lin(prefix + ".out", att.transpose(0, 2, 1, 3).reshape(m, t, d))

    def _block(self, prefix: str, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        p = self.p
        x = x + self._attention(prefix, layer_norm(x, p[prefix + ".ln1.g"], p[prefix + ".ln1.b"]), mask)
        hdn = gelu(self._lin(prefix + ".fc1", layer_norm(x, p[prefix + ".ln2.g"], p[prefix + ".ln2.b"])))
        return x + self._lin(prefix + ".fc2", hdn)

    # -- public passes ---------------------------------------------------
    def encode(self, tokens) -> Tensor:
        """``tokens`` [M, S, d_tok] (or [S, d_tok]) to ``z`` [M, d_z]."""
        x = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens, dtype=self.p["enc.pos"].data.dtype))
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        cfg = self.cfg
        if x.shape[1:] != (cfg.n_tokens, cfg.d_tok):
            raise ShapeError(f"expected token sequences of shape {(cfg.n_tokens, cfg.d_tok)}, got {x.shape[1:]}")
        m = x.shape[0]
        dt = x.data.dtype
        x = (x - self.norm_mu.astype(dt)) * (1.0 / self.norm_sigma).astype(dt)
        h = self._lin("enc.in", x) + self.p["enc.pos"]
        cls = self.p["enc.cls"].reshape(1, 1, cfg.d_model) + np.zeros((m, 1, cfg.d_model), dtype=h.data.dtype)
        h = concat([h, cls], axis=1)
        for i in range(cfg.enc_blocks):
            h = self._block(f"enc.{i}", h)
        h = layer_norm(h, self.p["enc.ln.g"], self.p["enc.ln.b"])
        return self._lin("enc.z", h[:, -1, :])

    def decode_hidden(self, z, use_type: bool = True) -> tuple[Tensor, Tensor]:
        """Decoder states of the weight and alpha branches before the output heads."""
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.p["enc.pos"].data.dtype))
        if z.ndim == 1:
            z = z.reshape(1, -1)
        cfg = self.cfg
        m, s, d = z.shape[0], cfg.n_tokens, cfg.d_model
        seq = self._lin("dec.in", z).reshape(m, s, d) + self.p["dec.pos"]
        tw, ta = seq, seq
        if use_type:
            tw = tw + self.p["dec.type"][0]
            ta = ta + self.p["dec.type"][1]
        h = concat([tw, ta], axis=1)
        for i in range(cfg.dec_blocks):
            h = self._block(f"dec.{i}", h)
        h = layer_norm(h, self.p["dec.ln.g"], self.p["dec.ln.b"])
        return h[:, :s, :], h[:, s:, :]

    def decode(self, z, use_type: bool = True) -> tuple[Tensor, Tensor]:
        hw, ha = self.decode_hidden(z, use_type)
        dt = hw.data.dtype
        w = self._lin("dec.w", hw) * self.norm_sigma.astype(dt) + self.norm_mu.astype(dt)
        return w, self._lin("dec.a", ha)

    def project(self, z: Tensor) -> Tensor:
        return self._lin("proj.2", self._lin("proj.1", z).relu())

    def embed(self, tokens: np.ndarray, batch: int = 64) -> np.ndarray:
        out = [self.encode(tokens[i : i + batch]).data for i in range(0, len(tokens), batch)]
        return np.concatenate(out).astype(np.float32)
