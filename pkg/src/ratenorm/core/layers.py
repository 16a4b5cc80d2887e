"""Layer specifications, layer objects and the sequential network."""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from ratenorm.core import ops
from ratenorm.core.tensor import Param, Tensor, as_tensor
from ratenorm.errors import DimensionError
from ratenorm.rnl import RateNormState, rnl_forward

KINDS = ("affine", "conv2d", "avgpool2d", "flatten", "rate-norm", "relu")
WEIGHTED = ("affine", "conv2d")
ACTIVATIONS = ("rate-norm", "relu")


@dataclass
class LayerSpec:
    kind: str
    in_features: int | None = None
    out_features: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    window: int | None = None
    momentum: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        required = {
            "affine": ("in_features", "out_features"),
            "conv2d": ("in_channels", "out_channels", "kernel"),
            "avgpool2d": ("window",),
        }.get(self.kind, ())
        for name in required:
            value = getattr(self, name)
            if value is None or int(value) < 1:
                raise ValueError(f"{self.kind} layer needs a positive {name}, got {value!r}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> LayerSpec:
        return cls(**d)

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape for a per-sample input ``shape``."""
        if self.kind == "affine":
            if shape[-1] != self.in_features:
                raise DimensionError(f"affine expects last dim {self.in_features}, got input shape {shape}")
            return shape[:-1] + (self.out_features,)
        if self.kind == "conv2d":
            if len(shape) != 3 or shape[0] != self.in_channels:
                raise DimensionError(f"conv2d expects [{self.in_channels}, H, W], got {shape}")
            _, h, w = shape
            if self.kernel > h or self.kernel > w:
                raise DimensionError(f"kernel {self.kernel} does not fit input {shape}")
            return (
                self.out_channels,
                (h - self.kernel) // self.stride + 1,
                (w - self.kernel) // self.stride + 1,
            )
        if self.kind == "avgpool2d":
            if len(shape) != 3 or shape[1] % self.window or shape[2] % self.window:
                raise DimensionError(f"avgpool2d window {self.window} does not divide {shape}")
            return (shape[0], shape[1] // self.window, shape[2] // self.window)
        if self.kind == "flatten":
            return (int(np.prod(shape)),)
        return shape


def infer_shapes(specs: list[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    shapes = [tuple(input_shape)]
    for spec in specs:
        shapes.append(spec.output_shape(shapes[-1]))
    return shapes


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    spec: LayerSpec

    def forward(self, x: Tensor, p_override: float | None = None) -> Tensor:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []


class Affine(Layer):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator, name: str = "affine"):
        self.spec = spec
        n_in, n_out = spec.in_features, spec.out_features
        self.W = Param(glorot_uniform(rng, (n_out, n_in), n_in, n_out), name=f"{name}.W")
        self.b = Param(np.zeros(n_out), name=f"{name}.b")

    def forward(self, x, p_override=None):
        return ops.affine_forward(self.W, x, self.b)

    def params(self):
        return [self.W, self.b]


class Conv2d(Layer):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator, name: str = "conv2d"):
        self.spec = spec
        k, cin, cout = spec.kernel, spec.in_channels, spec.out_channels
        self.W = Param(glorot_uniform(rng, (cout, cin, k, k), cin * k * k, cout * k * k), name=f"{name}.W")
        self.b = Param(np.zeros(cout), name=f"{name}.b")

    def forward(self, x, p_override=None):
        return ops.conv2d_forward(self.W, x, self.b, self.spec.stride)

    def params(self):
        return [self.W, self.b]


class AvgPool2d(Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def forward(self, x, p_override=None):
        return ops.avgpool2d(x, self.spec.window)


class Flatten(Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def forward(self, x, p_override=None):
        return ops.flatten(x)


class ReLU(Layer):
    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def forward(self, x, p_override=None):
        return ops.relu(x)


class RateNorm(Layer):
    def __init__(self, spec: LayerSpec, state: RateNormState | None = None):
        self.spec = spec
        self.state = state if state is not None else RateNormState(momentum=spec.momentum)

    def forward(self, x, p_override=None):
        return rnl_forward(self.state, x, p_override=p_override)

    @property
    def theta(self) -> float:
        return self.state.p * self.state.running_max


def build_layer(spec: LayerSpec, rng: np.random.Generator, index: int) -> Layer:
    name = f"layer{index}.{spec.kind}"
    if spec.kind == "affine":
        return Affine(spec, rng, name)
    if spec.kind == "conv2d":
        return Conv2d(spec, rng, name)
    if spec.kind == "avgpool2d":
        return AvgPool2d(spec)
    if spec.kind == "flatten":
        return Flatten(spec)
    if spec.kind == "relu":
        return ReLU(spec)
    return RateNorm(spec)


class Network:
    """Sequential ANN built from :class:`LayerSpec` records.

    After each forward pass ``preacts`` and ``activations`` hold the inputs
    and outputs of every activation layer (ReLU or Rate Norm) in order.
    """

    def __init__(self, specs: list[LayerSpec | dict], seed: int = 0):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        if not self.specs:
            raise ValueError("a network needs at least one layer")
        rng = np.random.default_rng(seed)
        self.layers = [build_layer(s, rng, i) for i, s in enumerate(self.specs)]
        self.preacts: list[Tensor] = []
        self.activations: list[Tensor] = []

    def __call__(self, x, p_override: float | None = None) -> Tensor:
        return self.forward(x, p_override)

    def forward(self, x, p_override: float | None = None) -> Tensor:
        h = as_tensor(x)
        self.preacts, self.activations = [], []
        for layer in self.layers:
            out = layer.forward(h, p_override)
            if layer.spec.kind in ACTIVATIONS:
                self.preacts.append(h)
                self.activations.append(out)
            h = out
        return h

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def rate_norm_layers(self) -> list[RateNorm]:
        return [layer for layer in self.layers if isinstance(layer, RateNorm)]

    def rate_norm_states(self) -> list[RateNormState]:
        return [layer.state for layer in self.rate_norm_layers()]

    def thresholds(self) -> list[float]:
        return [layer.theta for layer in self.rate_norm_layers()]

    def train(self) -> None:
        for s in self.rate_norm_states():
            s.mode = "train"

    def eval(self) -> None:
        for s in self.rate_norm_states():
            s.mode = "eval"

    @contextlib.contextmanager
    def evaluating(self) -> Iterator[Network]:
        saved = [s.mode for s in self.rate_norm_states()]
        self.eval()
        try:
            yield self
        finally:
            for s, mode in zip(self.rate_norm_states(), saved):
                s.mode = mode

    def readout(self, x, p_override: float | None = None) -> np.ndarray:
        """Class scores used for prediction, computed in eval mode.

        When the network ends in an activation, the scores are that
        activation's input, which breaks ties between saturated outputs the
        same way the spiking readout does.
        """
        with self.evaluating():
            out = self.forward(x, p_override)
        if self.specs[-1].kind in ACTIVATIONS:
            return self.preacts[-1].data
        return out.data

    def predict(self, x, batch_size: int = 1000) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        chunks = [self.readout(x[i : i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)

    def accuracy(self, x, labels) -> float:
        return float(np.mean(self.predict(x) == np.asarray(labels)))

    def rates(self, x, p_override: float | None = None) -> list[np.ndarray]:
        """Eval-mode activation outputs (simulated firing rates) per layer."""
        with self.evaluating():
            self.forward(x, p_override)
        return [a.data for a in self.activations]
