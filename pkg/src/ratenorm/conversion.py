"""Build spiking networks from trained ANNs.

Four schemes are supported: direct conversion of a Rate Norm network
(``v_th = theta``), Max Norm and Robust Norm weight normalization of a
ReLU network, and post-hoc threshold scaling of an existing SNN.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ratenorm.core.layers import ACTIVATIONS, WEIGHTED, Layer, LayerSpec, Network
from ratenorm.errors import ConversionError, DegenerateThresholdError
from ratenorm.rnl import MIN_THRESHOLD
from ratenorm.snn import SpikingLayer, SpikingNetwork, SynapseOp


@dataclass
class ConversionReport:
    scheme: str
    v_th: list[float]
    scale_factors: list[float]
    calibration_size: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


@dataclass
class Block:
    """The linear layers feeding one activation (or the trailing readout)."""

    linear: list[Layer]
    activation: Layer | None

    @property
    def weighted(self) -> Layer:
        return next(layer for layer in self.linear if layer.spec.kind in WEIGHTED)


def split_blocks(net: Network) -> list[Block]:
    """Group layers so that each block holds one weighted layer and its activation."""
    blocks, pending = [], []
    for layer in net.layers:
        if layer.spec.kind in ACTIVATIONS:
            blocks.append(Block(pending, layer))
            pending = []
        else:
            pending.append(layer)
    if pending:
        blocks.append(Block(pending, None))
    for i, block in enumerate(blocks):
        n_weighted = sum(layer.spec.kind in WEIGHTED for layer in block.linear)
        if n_weighted != 1:
            raise ConversionError(f"block {i} has {n_weighted} weighted layers; exactly one is required")
    return blocks


def _ops(block: Block, w_scale: float = 1.0, b_scale: float = 1.0) -> list[SynapseOp]:
    ops = []
    for layer in block.linear:
        kind = layer.spec.kind
        if kind in WEIGHTED:
            W = layer.W.data * w_scale if w_scale != 1.0 else layer.W.data.copy()
            b = layer.b.data * b_scale if b_scale != 1.0 else layer.b.data.copy()
            ops.append(SynapseOp(kind, W=W, b=b, stride=layer.spec.stride))
        elif kind == "avgpool2d":
            ops.append(SynapseOp(kind, window=layer.spec.window))
        else:
            ops.append(SynapseOp(kind))
    return ops


def convert_direct(ann: Network, readout: str = "potential") -> tuple[SpikingNetwork, ConversionReport]:
    """Copy weights and biases; each layer's threshold is its Rate Norm theta.

    A trailing weighted layer without an activation becomes a non-spiking
    readout layer.
    """
    blocks = split_blocks(ann)
    layers, thetas = [], []
    for i, block in enumerate(blocks):
        if block.activation is None:
            # trailing linear readout: accumulates current, never spikes
            layers.append(SpikingLayer(_ops(block), v_th=1.0, spiking=False, name=f"layer{i + 1}"))
            continue
        if block.activation.spec.kind != "rate-norm":
            raise ConversionError(f"block {i} uses {block.activation.spec.kind}; direct conversion needs rate-norm")
        theta = block.activation.theta
        if not theta > MIN_THRESHOLD:
            raise DegenerateThresholdError(f"layer {i} threshold {theta!r} is degenerate")
        thetas.append(theta)
        layers.append(SpikingLayer(_ops(block), v_th=theta, name=f"layer{i + 1}"))
    snn = SpikingNetwork(layers, readout=readout)
    return snn, ConversionReport("direct", [layer.v_th for layer in layers], [1.0] * len(layers))


def relu_equivalent(ann: Network, p_override: float | None = None) -> Network:
    """ReLU network computing ``theta_l * r_l`` of a Rate Norm network.

    Each weight matrix is divided by the previous layer's threshold, so
    activations are un-normalized while clipping is inactive. With
    ``p_override`` the thresholds are ``p_override * running_max``; passing
    1.0 recovers the network as it was before threshold training.
    """
    specs = [LayerSpec("relu") if s.kind == "rate-norm" else s for s in ann.specs]
    out = Network(specs)
    prev_theta = 1.0
    blocks_src, blocks_dst = split_blocks(ann), split_blocks(out)
    for src, dst in zip(blocks_src, blocks_dst):
        dst.weighted.W.data = src.weighted.W.data / prev_theta
        dst.weighted.b.data = src.weighted.b.data.copy()
        act = src.activation
        if act is not None and act.spec.kind == "rate-norm":
            prev_theta = act.theta if p_override is None else p_override * act.state.running_max
        else:
            prev_theta = 1.0
    return out


def block_activations(ann: Network, x: np.ndarray, batch_size: int = 500) -> list[np.ndarray]:
    """Flattened activation values of every block over a calibration set."""
    blocks = split_blocks(ann)
    collected: list[list[np.ndarray]] = [[] for _ in blocks]
    with ann.evaluating():
        for i in range(0, len(x), batch_size):
            out = ann.forward(x[i : i + batch_size])
            acts = [a.data for a in ann.activations]
            if blocks[-1].activation is None:
                acts.append(out.data)
            for store, a in zip(collected, acts):
                store.append(a.reshape(-1))
    return [np.concatenate(c) for c in collected]


def _require_relu(ann: Network) -> list[Block]:
    blocks = split_blocks(ann)
    for i, block in enumerate(blocks):
        if block.activation is not None and block.activation.spec.kind != "relu":
            raise ConversionError(
                f"block {i} uses {block.activation.spec.kind}; weight normalization expects ReLU "
                "(see relu_equivalent for Rate Norm networks)"
            )
    return blocks


def nearest_rank(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile: the ``ceil(P/100 * N)``-th smallest value."""
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile must lie in (0, 100], got {percentile}")
    values = np.asarray(values).reshape(-1)
    if values.size == 0:
        raise ValueError("percentile of an empty set")
    rank = max(1, math.ceil(percentile / 100.0 * values.size))
    return float(np.partition(values, rank - 1)[rank - 1])


def _normalize(
    ann: Network, factors: list[float], scheme: str, n_cal: int, input_max: float, readout: str
) -> tuple[SpikingNetwork, ConversionReport]:
    blocks = _require_relu(ann)
    layers = []
    prev = input_max
    for i, (block, factor) in enumerate(zip(blocks, factors)):
        if not factor > 0:
            raise ConversionError(f"layer {i + 1} scale factor is {factor}; the layer is dead on the calibration set")
        ops = _ops(block, w_scale=prev / factor, b_scale=1.0 / factor)
        layers.append(SpikingLayer(ops, v_th=1.0, spiking=block.activation is not None, name=f"layer{i + 1}"))
        prev = factor
    snn = SpikingNetwork(layers, readout=readout)
    report = ConversionReport(scheme, [1.0] * len(layers), list(factors), n_cal, {"input_max": input_max})
    return snn, report


def convert_max_norm(
    ann: Network, calibration: np.ndarray, input_max: float = 1.0, readout: str = "potential"
) -> tuple[SpikingNetwork, ConversionReport]:
    """Scale ``W`` by ``max_{l-1} / max_l`` and ``b`` by ``1 / max_l``; thresholds are 1."""
    calibration = np.asarray(calibration, dtype=np.float64)
    if len(calibration) == 0:
        raise ConversionError("calibration set is empty")
    _require_relu(ann)
    factors = [float(a.max()) for a in block_activations(ann, calibration)]
    return _normalize(ann, factors, "max_norm", len(calibration), input_max, readout)


def convert_robust_norm(
    ann: Network,
    calibration: np.ndarray,
    percentile: float = 99.9,
    input_max: float = 1.0,
    readout: str = "potential",
) -> tuple[SpikingNetwork, ConversionReport]:
    """Max Norm with each maximum replaced by a nearest-rank percentile."""
    calibration = np.asarray(calibration, dtype=np.float64)
    if len(calibration) == 0:
        raise ConversionError("calibration set is empty")
    _require_relu(ann)
    factors = [nearest_rank(a, percentile) for a in block_activations(ann, calibration)]
    for i, f in enumerate(factors):
        if not f > 0:
            raise ConversionError(f"layer {i + 1}: the {percentile} percentile activation is {f}")
    snn, report = _normalize(ann, factors, "robust_norm", len(calibration), input_max, readout)
    report.extra["percentile"] = percentile
    return snn, report


def scale_thresholds(snn: SpikingNetwork, factor: float) -> SpikingNetwork:
    """Copy of ``snn`` with every threshold multiplied by ``factor``."""
    if not factor > 0:
        raise ValueError(f"threshold scale factor must be > 0, got {factor}")
    out = snn.copy()
    for layer in out.layers:
        layer.v_th = layer.v_th * factor
    return out
