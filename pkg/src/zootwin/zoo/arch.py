"""Config-driven small CNNs and their parameter state."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from ..engine import Tensor, activation, conv2d, dropout, linear, maxpool2d, parameter, stream
from ..engine.functional import ACTIVATIONS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "pool" | "fc"
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    window: int = 0
    out_features: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        kind = d.pop("type", None) or d.pop("kind")
        return cls(kind=kind, **d)

    def to_dict(self) -> dict:
        if self.kind == "conv":
            return {"type": "conv", "out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride}
        if self.kind == "pool":
            return {"type": "pool", "window": self.window}
        return {"type": "fc", "out_features": self.out_features}


@dataclass(frozen=True)
class ArchConfig:
    """Layer chain of a CNN.

    ``expected_weights`` is checked against the number of prunable weights
    (conv and fc kernels, biases excluded) when a model is built.
    """

    input_dims: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    num_classes: int = 10
    activation: str = "tanh"
    expected_weights: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            input_dims=tuple(d["input_dims"]),
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            num_classes=int(d.get("num_classes", 10)),
            activation=d.get("activation", "tanh"),
            expected_weights=d.get("expected_weights"),
        )

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "layers": [x.to_dict() for x in self.layers],
            "num_classes": self.num_classes,
            "activation": self.activation,
            "expected_weights": self.expected_weights,
        }

    def weight_layers(self) -> list[LayerSpec]:
        return [x for x in self.layers if x.kind in ("conv", "fc")]

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered ``(name, shape)`` of every parameter; checks the chain."""
        c, h, w = self.input_dims
        flat: int | None = None
        shapes = []
        i = 0
        for spec in self.layers:
            if spec.kind == "conv":
                if flat is not None:
                    raise ConfigError("conv layer after fc layer")
                if spec.kernel < 1 or spec.kernel > h or spec.kernel > w or spec.stride < 1:
                    raise ConfigError(f"conv layer {i}: kernel {spec.kernel} does not fit {h}x{w}")
                shapes.append((f"layer_{i}.weight", (spec.out_channels, c, spec.kernel, spec.kernel)))
                shapes.append((f"layer_{i}.bias", (spec.out_channels,)))
                c, h, w = spec.out_channels, (h - spec.kernel) // spec.stride + 1, (w - spec.kernel) // spec.stride + 1
                i += 1
            elif spec.kind == "pool":
                if flat is not None or spec.window < 1 or spec.window > min(h, w):
                    raise ConfigError(f"pool window {spec.window} does not fit {h}x{w}")
                h, w = h // spec.window, w // spec.window
            elif spec.kind == "fc":
                fan_in = c * h * w if flat is None else flat
                shapes.append((f"layer_{i}.weight", (spec.out_features, fan_in)))
                shapes.append((f"layer_{i}.bias", (spec.out_features,)))
                flat = spec.out_features
                i += 1
            else:
                raise ConfigError(f"unknown layer kind {spec.kind!r}")
        if flat != self.num_classes:
            raise ConfigError(f"last layer must be fc with {self.num_classes} outputs")
        return shapes

    def layer_names(self) -> list[str]:
        """Display names, e.g. ``Conv1 .. Conv3, FC1, FC2``."""
        names, nc, nf = [], 0, 0
        for spec in self.weight_layers():
            if spec.kind == "conv":
                nc += 1
                names.append(f"Conv{nc}")
            else:
                nf += 1
                names.append(f"FC{nf}")
        return names


def small_cnn(input_dims=(1, 28, 28), expected_weights: int | None = 2416, activation: str = "tanh") -> ArchConfig:
    """Grayscale small CNN of the MNIST-family zoos (2416 weights on 1x28x28)."""
    return ArchConfig(
        input_dims=tuple(input_dims),
        layers=(
            LayerSpec("conv", out_channels=8, kernel=5),
            LayerSpec("pool", window=2),
            LayerSpec("conv", out_channels=6, kernel=5),
            LayerSpec("pool", window=2),
            LayerSpec("conv", out_channels=4, kernel=2),
            LayerSpec("fc", out_features=20),
            LayerSpec("fc", out_features=10),
        ),
        activation=activation,
        expected_weights=expected_weights,
    )


def large_cnn(input_dims=(3, 32, 32), expected_weights: int | None = 10760, activation: str = "gelu") -> ArchConfig:
    """Large CNN of the CIFAR/STL zoos (10760 weights on 3x32x32)."""
    return ArchConfig(
        input_dims=tuple(input_dims),
        layers=(
            LayerSpec("conv", out_channels=16, kernel=3),
            LayerSpec("pool", window=2),
            LayerSpec("conv", out_channels=32, kernel=3),
            LayerSpec("pool", window=2),
            LayerSpec("conv", out_channels=15, kernel=3),
            LayerSpec("pool", window=2),
            LayerSpec("fc", out_features=20),
            LayerSpec("fc", out_features=10),
        ),
        activation=activation,
        expected_weights=expected_weights,
    )


PRESETS = {"small": small_cnn, "large": large_cnn}


@dataclass(frozen=True)
class GeneratingFactors:
    seed: int = 0
    activation: str = "tanh"
    optimizer: str = "adam"
    lr: float = 3e-4
    weight_decay: float = 0.0
    dropout: float = 0.0
    init: str = "kaiming_uniform"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratingFactors":
        return cls(**d)

    def with_(self, **kw) -> "GeneratingFactors":
        return replace(self, **kw)


@dataclass
class ModelState:
    """One CNN: architecture, ordered named parameters, generating factors."""

    arch: ArchConfig
    params: dict[str, np.ndarray]
    factors: GeneratingFactors = field(default_factory=GeneratingFactors)

    def copy(self) -> "ModelState":
        return ModelState(self.arch, {k: v.copy() for k, v in self.params.items()}, self.factors)

    def weight_names(self) -> list[str]:
        return [k for k in self.params if k.endswith(".weight")]

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def num_weights(self) -> int:
        return int(sum(self.params[k].size for k in self.weight_names()))

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])


def _init_tensor(rng: np.random.Generator, shape, scheme: str, fan_in: int, fan_out: int, is_bias: bool) -> np.ndarray:
    if scheme == "kaiming_uniform":
        # torch's default for conv/linear: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
        bound = 1.0 / np.sqrt(fan_in)
    elif scheme == "kaiming_uniform_relu":
        bound = np.sqrt(6.0 / fan_in) if not is_bias else 1.0 / np.sqrt(fan_in)
    elif scheme == "xavier_uniform":
        bound = np.sqrt(6.0 / (fan_in + fan_out)) if not is_bias else 0.0
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def model_stream(zoo_seed: int, factors: GeneratingFactors, purpose: str) -> np.random.Generator:
    return stream(int(zoo_seed), int(factors.seed), purpose)


def build_model(arch: ArchConfig, factors: GeneratingFactors, zoo_seed: int = 0) -> ModelState:
    shapes = arch.param_shapes()
    n_weights = sum(int(np.prod(s)) for name, s in shapes if name.endswith(".weight"))
    if arch.expected_weights is not None and n_weights != arch.expected_weights:
        raise ConfigError(f"architecture has {n_weights} weights, config expects {arch.expected_weights}")
    rng = model_stream(zoo_seed, factors, "init")
    params: dict[str, np.ndarray] = {}
    for name, shape in shapes:
        if name.endswith(".weight"):
            # the bias that follows reuses its weight's fans
            fan_in = int(np.prod(shape[1:]))
            fan_out = shape[0] * (int(np.prod(shape[2:])) if len(shape) == 4 else 1)
        params[name] = _init_tensor(rng, shape, factors.init, fan_in, fan_out, name.endswith(".bias"))
    return ModelState(arch, params, factors)


LayerFn = Callable[[int, LayerSpec, Tensor], Tensor]


class Network:
    """Differentiable view of a :class:`ModelState`.

    ``layer_fn`` can replace how each weight layer maps its input (the VD
    noisy forward plugs in here); activations, pooling and dropout stay.
    """

    def __init__(self, state: ModelState, requires_grad: bool = True):
        self.state = state
        self.tensors = {k: (parameter(v, name=k) if requires_grad else Tensor(v, name=k)) for k, v in state.params.items()}
        self.act = state.factors.activation or state.arch.activation

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def sync(self) -> None:
        """Copy tensor data back into the owning state."""
        for k, t in self.tensors.items():
            self.state.params[k] = t.data

    def dense_layer(self, i: int, spec: LayerSpec, x: Tensor) -> Tensor:
        w, b = self.tensors[f"layer_{i}.weight"], self.tensors[f"layer_{i}.bias"]
        if spec.kind == "conv":
            return conv2d(x, w, b, spec.stride)
        return linear(x, w, b)

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None, layer_fn: LayerFn | None = None) -> Tensor:
        layer_fn = layer_fn or self.dense_layer
        p_drop = self.state.factors.dropout
        h = x if isinstance(x, Tensor) else Tensor(x)
        i = 0
        pending = False
        n_weight = len(self.state.arch.weight_layers())
        for spec in self.state.arch.layers:
            if spec.kind == "pool":
                h = maxpool2d(h, spec.window)
                continue
            if pending:
                h = activation(h, self.act)
                h = dropout(h, p_drop, rng, training)
            if spec.kind == "fc" and h.ndim > 2:
                h = h.reshape(h.shape[0], -1)
            h = layer_fn(i, spec, h)
            i += 1
            pending = i < n_weight
        return h


def logits(state: ModelState, x: np.ndarray, chunk: int = 1000) -> np.ndarray:
    """Deterministic forward pass (no dropout), chunked to bound memory."""
    net = Network(state, requires_grad=False)
    outs = [net.forward(x[i : i + chunk]).data for i in range(0, len(x), chunk)]
    return np.concatenate(outs) if outs else np.zeros((0, state.arch.num_classes), np.float32)
