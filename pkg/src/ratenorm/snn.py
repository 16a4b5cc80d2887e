"""Clock-driven simulation of integrate-and-fire networks with soft reset.

Each spiking layer integrates ``m = v + I(s_in)``, emits ``s = [m >= v_th]``
and resets by subtraction, ``v = m - v_th * s``. Layer 1 receives the input
as a constant analog current (constant coding) or as Bernoulli spike
trains (Poisson coding).
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ratenorm.core.ops import affine_np, avgpool2d_np, conv2d_np, flatten_np
from ratenorm.errors import SimulationError

# Relative slack on the firing condition. Membrane sums of decimal inputs
# land a few ulps under the threshold at exact multiples (0.1 added ten
# times is 0.9999999999999999); without slack those spikes are lost.
SPIKE_TOLERANCE = 1e-9


@dataclass
class SynapseOp:
    """One linear stage between two spiking layers."""

    kind: str
    W: np.ndarray | None = None
    b: np.ndarray | None = None
    stride: int = 1
    window: int | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "affine":
            return affine_np(self.W, x, self.b)
        if self.kind == "conv2d":
            return conv2d_np(self.W, x, self.b, self.stride)
        if self.kind == "avgpool2d":
            return avgpool2d_np(x, self.window)
        if self.kind == "flatten":
            return flatten_np(x)
        raise ValueError(f"unknown synapse op {self.kind!r}")


@dataclass
class SpikingLayer:
    """Weights and threshold of one layer of integrate-and-fire neurons.

    A non-spiking layer integrates its input current without firing; it is
    used as a potential readout at the output.
    """

    ops: list[SynapseOp]
    v_th: float
    spiking: bool = True
    name: str = ""

    def __post_init__(self):
        if not self.v_th > 0:
            raise ValueError(f"threshold must be > 0, got {self.v_th}")
        if sum(op.kind in ("affine", "conv2d") for op in self.ops) != 1:
            raise ValueError("a spiking layer needs exactly one weighted op")

    @property
    def weighted(self) -> SynapseOp:
        return next(op for op in self.ops if op.kind in ("affine", "conv2d"))

    @property
    def W(self) -> np.ndarray:
        return self.weighted.W

    @property
    def b(self) -> np.ndarray:
        return self.weighted.b

    def current(self, x: np.ndarray) -> np.ndarray:
        for op in self.ops:
            x = op.apply(x)
        return x


@dataclass
class SpikingNetwork:
    layers: list[SpikingLayer]
    readout: str = "potential"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a spiking network needs at least one layer")
        if self.readout not in ("potential", "spikes"):
            raise ValueError(f"readout must be 'potential' or 'spikes', got {self.readout!r}")
        if self.readout == "spikes" and not self.layers[-1].spiking:
            raise ValueError("spike-count readout needs a spiking output layer")
        if any(not layer.spiking for layer in self.layers[:-1]):
            raise ValueError("only the output layer may be non-spiking")

    @property
    def thresholds(self) -> list[float]:
        return [layer.v_th for layer in self.layers]

    def copy(self) -> SpikingNetwork:
        return copy.deepcopy(self)

    def analog_rates(self, x: np.ndarray) -> list[np.ndarray]:
        """Limit firing rates ``clip((W r + b) / v_th, 0, 1)`` of every spiking layer."""
        rates = []
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            if not layer.spiking:
                break
            h = np.clip(layer.current(h) / layer.v_th, 0.0, 1.0)
            rates.append(h)
        return rates


@dataclass
class SpikingLayerState:
    """Runtime state of one layer during a run."""

    layer: SpikingLayer
    v: np.ndarray
    cumulative_spikes: np.ndarray
    integrated: np.ndarray

    @classmethod
    def zeros(cls, layer: SpikingLayer, shape: tuple[int, ...]) -> SpikingLayerState:
        return cls(layer, np.zeros(shape), np.zeros(shape, dtype=np.int64), np.zeros(shape))

    @property
    def v_th(self) -> float:
        return self.layer.v_th

    @property
    def W(self) -> np.ndarray:
        return self.layer.W

    @property
    def b(self) -> np.ndarray:
        return self.layer.b


def if_step(
    state: SpikingLayerState,
    input_spikes: np.ndarray | None = None,
    *,
    current: np.ndarray | None = None,
    index: int = 0,
    step: int = 0,
) -> np.ndarray:
    """Advance one layer by one time-step and return its spikes (0/1 floats).

    Pass ``current`` instead of ``input_spikes`` when the synaptic current
    is already known (constant coding into the first layer).
    """
    if current is None:
        current = state.layer.current(np.asarray(input_spikes, dtype=np.float64))
    m = state.v + current
    state.integrated += current
    if not np.all(np.isfinite(m)):
        raise SimulationError(f"non-finite membrane potential in layer {index} at step {step}")
    if not state.layer.spiking:
        state.v = m
        return np.zeros_like(m)
    v_th = state.layer.v_th
    fired = m >= v_th * (1.0 - SPIKE_TOLERANCE)
    state.v = m - v_th * fired
    state.cumulative_spikes += fired
    return fired.astype(np.float64)


def encode_constant(x: np.ndarray) -> np.ndarray:
    """Constant coding: the intensity itself is the per-step input."""
    return np.asarray(x, dtype=np.float64)


def encode_poisson(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One step of Poisson coding: independent Bernoulli(x) spikes."""
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError(f"Poisson coding needs intensities in [0, 1], got range [{x.min()}, {x.max()}]")
    return (rng.random(x.shape) < x).astype(np.float64)


@dataclass
class SimulationTrace:
    """Everything recorded during one batched run.

    ``step_spikes[l]`` holds the spike count of layer ``l`` per step and
    sample, shape ``(T, batch)``. ``counts[l]`` holds per-neuron cumulative
    spike counts at every step, shape ``(T, batch, *neurons)``, and is only
    kept when the run was asked to record them. When reference rates are
    passed to :func:`run`, ``k_sq_err[l]`` holds ``|r_l(t) - r_ref|^2`` per
    step and sample, shape ``(T, batch)``, and ``k_ref_norms[l]`` holds
    ``|r_ref|^2`` per sample.
    """

    T: int
    inputs: np.ndarray
    layer_shapes: list[tuple[int, ...]]
    step_spikes: list[np.ndarray]
    final_counts: list[np.ndarray]
    predictions: np.ndarray
    final_readout: np.ndarray
    counts: list[np.ndarray] | None = None
    readout_series: np.ndarray | None = None
    labels: np.ndarray | None = None
    coding: str = "constant"
    meta: dict = field(default_factory=dict)
    k_sq_err: list[np.ndarray] | None = None
    k_ref_norms: list[np.ndarray] | None = None

    @property
    def n_layers(self) -> int:
        return len(self.layer_shapes)

    @property
    def batch(self) -> int:
        return self.inputs.shape[0]

    def firing_rate(self, layer: int, t: int) -> np.ndarray:
        return firing_rate(self, layer, t)

    def rate_series(self, layer: int) -> np.ndarray:
        """``r_l(t)`` for t = 1..T, shape ``(T, batch, *neurons)``."""
        if self.counts is None:
            raise ValueError("per-step counts were not recorded for this run")
        ts = np.arange(1, self.T + 1, dtype=np.float64).reshape((-1,) + (1,) * (self.counts[layer].ndim - 1))
        return self.counts[layer] / ts

    def spikes_per_step(self) -> np.ndarray:
        """Total spikes over all layers and samples at each step (integers)."""
        return np.sum([s.sum(axis=1, dtype=np.int64) for s in self.step_spikes], axis=0, dtype=np.int64)

    def total_spikes(self) -> np.ndarray:
        """Cumulative spike total up to and including each step."""
        return np.cumsum(self.spikes_per_step(), dtype=np.int64)

    def accuracy_series(self, labels: np.ndarray | None = None) -> np.ndarray:
        labels = self.labels if labels is None else np.asarray(labels)
        if labels is None:
            raise ValueError("no labels available for accuracy")
        return (self.predictions == labels[None, :]).mean(axis=1)


def firing_rate(trace: SimulationTrace, layer: int, t: int) -> np.ndarray:
    """Cumulative spike count of ``layer`` at step ``t`` divided by ``t``."""
    if not 1 <= t <= trace.T:
        raise ValueError(f"t must lie in [1, {trace.T}], got {t}")
    if not 0 <= layer < trace.n_layers:
        raise ValueError(f"layer must lie in [0, {trace.n_layers}), got {layer}")
    if trace.counts is not None:
        return trace.counts[layer][t - 1] / t
    if t == trace.T:
        return trace.final_counts[layer] / t
    raise ValueError("per-step counts were not recorded; only t == T is available")


def run(
    snn: SpikingNetwork,
    x: np.ndarray,
    T: int,
    coding: str = "constant",
    *,
    rng: np.random.Generator | None = None,
    labels: np.ndarray | None = None,
    record_counts: bool = False,
    record_readout: bool = False,
    k_reference: list[np.ndarray] | None = None,
) -> SimulationTrace:
    """Simulate ``snn`` on a batch ``x`` for ``T`` steps from zero potentials.

    ``k_reference`` gives reference rates per spiking layer; the squared
    rate error against them is then accumulated step by step without
    storing every count.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if coding not in ("constant", "poisson"):
        raise ValueError(f"coding must be 'constant' or 'poisson', got {coding!r}")
    if coding == "poisson" and rng is None:
        raise ValueError("Poisson coding needs a seeded rng")
    x = np.asarray(x, dtype=np.float64)
    batch = x.shape[0]

    first_current = snn.layers[0].current(encode_constant(x)) if coding == "constant" else None
    states: list[SpikingLayerState] = []
    h = x
    for layer in snn.layers:
        h = layer.current(h)
        states.append(SpikingLayerState.zeros(layer, h.shape))
    shapes = [s.v.shape[1:] for s in states if s.layer.spiking]
    n_spiking = len(shapes)

    step_spikes = [np.zeros((T, batch), dtype=np.int32) for _ in range(n_spiking)]
    counts = [np.zeros((T,) + s.v.shape, dtype=np.int32) for s in states[:n_spiking]] if record_counts else None
    n_out = states[-1].v.reshape(batch, -1).shape[1]
    predictions = np.zeros((T, batch), dtype=np.int64)
    readout_series = np.zeros((T, batch, n_out)) if record_readout else None

    k_sq_err = k_norms = None
    if k_reference is not None:
        if len(k_reference) != n_spiking:
            raise ValueError(f"got reference rates for {len(k_reference)} layers, network has {n_spiking} spiking layers")
        k_flat = []
        for i, ref in enumerate(k_reference):
            ref = np.asarray(ref, dtype=np.float64)
            if ref.shape != states[i].v.shape:
                raise ValueError(f"layer {i}: reference shape {ref.shape} != layer shape {states[i].v.shape}")
            k_flat.append(ref.reshape(batch, -1))
        k_norms = [np.sum(r * r, axis=1) for r in k_flat]
        k_sq_err = [np.zeros((T, batch)) for _ in range(n_spiking)]

    out = states[-1]
    for t in range(1, T + 1):
        if coding == "constant":
            s = if_step(states[0], current=first_current, index=0, step=t)
        else:
            s = if_step(states[0], encode_poisson(x, rng), index=0, step=t)
        layer_spikes = [s]
        for i in range(1, len(states)):
            s = if_step(states[i], s, index=i, step=t)
            layer_spikes.append(s)
        for i in range(n_spiking):
            step_spikes[i][t - 1] = layer_spikes[i].reshape(batch, -1).sum(axis=1)
            if counts is not None:
                counts[i][t - 1] = states[i].cumulative_spikes
            if k_sq_err is not None:
                diff = states[i].cumulative_spikes.reshape(batch, -1) / t - k_flat[i]
                k_sq_err[i][t - 1] = np.sum(diff * diff, axis=1)
        if snn.readout == "potential":
            scores = out.integrated.reshape(batch, -1) / t
        else:
            scores = out.cumulative_spikes.reshape(batch, -1) / t
        predictions[t - 1] = scores.argmax(axis=1)
        if readout_series is not None:
            readout_series[t - 1] = scores

    return SimulationTrace(
        T=T,
        inputs=x,
        layer_shapes=shapes,
        step_spikes=step_spikes,
        final_counts=[st.cumulative_spikes.copy() for st in states[:n_spiking]],
        predictions=predictions,
        final_readout=scores.copy(),
        counts=counts,
        readout_series=readout_series,
        labels=None if labels is None else np.asarray(labels),
        coding=coding,
        k_sq_err=k_sq_err,
        k_ref_norms=k_norms,
    )


def export_trace(trace: SimulationTrace, csv_path: str | Path, json_path: str | Path | None = None) -> None:
    """Write per-step, per-layer spike statistics as CSV and a JSON summary."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "layer", "spikes", "cumulative_spikes", "mean_rate"])
        for layer, per_step in enumerate(trace.step_spikes):
            totals = per_step.sum(axis=1, dtype=np.int64)
            cumulative = np.cumsum(totals)
            n = trace.batch * int(np.prod(trace.layer_shapes[layer]))
            for t in range(trace.T):
                w.writerow([t + 1, layer, int(totals[t]), int(cumulative[t]), repr(float(cumulative[t]) / ((t + 1) * n))])
    if json_path is not None:
        summary = {
            "T": trace.T,
            "accuracy_series": trace.accuracy_series().tolist() if trace.labels is not None else None,
            "total_spikes_series": trace.total_spikes().tolist(),
        }
        Path(json_path).write_text(json.dumps(summary))
